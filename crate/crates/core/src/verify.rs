//! Numerical checks of the reversal identities, loss scaling, energy
//! behaviour, and chaos ordering of the simulated systems.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{sample_initial_state, DatasetConfig};
use crate::dynamics::{integrate, reverse_state, step, DynamicsError, Scheme, StateVector, TimeGrid};
use crate::physics::{analytic_solution_simple_spring_1d, PhysicsError, SystemKind, SystemSpec};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("invalid verification setup: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, VerifyError>;

fn steps_for(span: f64, dt: f64) -> Result<usize> {
    let n = (span / dt).round();
    if n < 1.0 || ((n * dt) - span).abs() > 1e-9 * span.max(1.0) {
        return Err(VerifyError::Config(format!("span {span} is not a whole number of steps of {dt}")));
    }
    Ok(n as usize)
}

/// Integrates forward for `span`, flips momenta, integrates forward again
/// with the same field, flips back, and returns the largest coordinate
/// difference from `state0`. Zero for an exact reversible flow.
pub fn lemma1_roundtrip(spec: &SystemSpec, state0: &StateVector, scheme: Scheme, dt: f64, span: f64) -> Result<f64> {
    let grid = TimeGrid::new(0.0, dt, steps_for(span, dt)?)?;
    let there = integrate(spec, state0, &grid, scheme)?;
    let back = integrate(spec, &reverse_state(there.last()), &grid, scheme)?;
    Ok(reverse_state(back.last()).max_abs_diff(state0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripPoint {
    pub dt: f64,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripReport {
    pub system: SystemKind,
    pub scheme: Scheme,
    pub span: f64,
    pub points: Vec<RoundTripPoint>,
    /// `discrepancy[i] / discrepancy[i + 1]` for consecutive step sizes.
    pub ratios: Vec<f64>,
}

impl RoundTripReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,scheme,span,dt,discrepancy\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{},{}\n", self.system, self.scheme, self.span, p.dt, p.discrepancy));
        }
        out
    }
}

/// [`lemma1_roundtrip`] over several step sizes, in the given order.
pub fn lemma1_sweep(
    spec: &SystemSpec,
    state0: &StateVector,
    scheme: Scheme,
    dts: &[f64],
    span: f64,
) -> Result<RoundTripReport> {
    let points = dts
        .par_iter()
        .map(|&dt| lemma1_roundtrip(spec, state0, scheme, dt, span).map(|discrepancy| RoundTripPoint { dt, discrepancy }))
        .collect::<Result<Vec<_>>>()?;
    let ratios = points.windows(2).map(|w| w[0].discrepancy / w[1].discrepancy).collect();
    Ok(RoundTripReport {
        system: spec.kind,
        scheme,
        span,
        points,
        ratios,
    })
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// False when R² is at most 0.98; the slope should not be trusted then.
    pub reliable: bool,
}

pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Result<LogLogFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(VerifyError::Config(format!("cannot fit {} x against {} y values", xs.len(), ys.len())));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(VerifyError::Config("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LogLogFit {
        slope,
        intercept,
        r_squared,
        reliable: r_squared > 0.98,
    })
}

/// Grid for the loss-scaling experiment on a one-dimensional harmonic
/// oscillator with a closed-form solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub scheme: Scheme,
    /// Step sizes swept at `fixed_span`, largest first.
    pub dts: Vec<f64>,
    /// Spans swept at `fixed_dt`.
    pub spans: Vec<f64>,
    pub fixed_span: f64,
    pub fixed_dt: f64,
    /// Spacing of the points the losses are summed over.
    pub output_interval: f64,
    pub q0: f64,
    pub p0: f64,
}

impl ScalingConfig {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            dts: vec![0.02, 0.01, 0.005, 0.0025, 0.00125],
            spans: vec![2.0, 4.0, 6.0, 8.0],
            fixed_span: 6.0,
            fixed_dt: 0.005,
            output_interval: 0.2,
            q0: 1.0,
            p0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub dt: f64,
    pub span: f64,
    /// Squared distance to the exact solution, summed over output points.
    pub l_pred: f64,
    /// Squared distance between each forward point and the flipped reverse
    /// point for the same physical time, summed over output points.
    pub l_reverse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub scheme: Scheme,
    pub dt_sweep: Vec<ScalingPoint>,
    pub span_sweep: Vec<ScalingPoint>,
    pub pred_dt_fit: LogLogFit,
    pub reverse_dt_fit: LogLogFit,
    pub pred_span_fit: LogLogFit,
    pub reverse_span_fit: LogLogFit,
    /// `l_reverse / (T⁵ Δt⁴)` along the step-size sweep.
    pub normalized_reverse: Vec<f64>,
}

impl ScalingReport {
    /// `s_rev - s_pred` in step size.
    pub fn slope_gap(&self) -> f64 {
        self.reverse_dt_fit.slope - self.pred_dt_fit.slope
    }

    /// Largest normalized reversal loss over the first three step sizes,
    /// relative to the first.
    pub fn reverse_bound_ratio(&self) -> f64 {
        let first = self.normalized_reverse[0];
        self.normalized_reverse.iter().take(3).fold(0.0, |m, v| m.max(v / first))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sweep,scheme,dt,span,l_pred,l_reverse\n");
        for (name, pts) in [("dt", &self.dt_sweep), ("span", &self.span_sweep)] {
            for p in pts {
                out.push_str(&format!("{name},{},{},{},{},{}\n", self.scheme, p.dt, p.span, p.l_pred, p.l_reverse));
            }
        }
        out
    }
}

/// Both losses for one `(dt, span)` cell, using the spring's own vector
/// field as the model.
pub fn scaling_point(spec: &SystemSpec, cfg: &ScalingConfig, dt: f64, span: f64) -> Result<ScalingPoint> {
    let per_output = steps_for(cfg.output_interval, dt)?;
    let n_out = steps_for(span, cfg.output_interval)?;
    let (k, m) = (spec.spring_k, spec.mass);
    let run = |start: StateVector| -> Result<Vec<StateVector>> {
        let mut out = Vec::with_capacity(n_out + 1);
        let mut s = start;
        let mut t = 0.0;
        out.push(s.clone());
        for _ in 0..n_out {
            for _ in 0..per_output {
                s = step(cfg.scheme, spec, &s, t, dt)?;
                t += dt;
            }
            out.push(s.clone());
        }
        Ok(out)
    };
    let fwd = run(StateVector::from_qp(1, &[cfg.q0], &[cfg.p0])?)?;
    let rev = run(reverse_state(fwd.last().expect("nonempty")))?;
    let mut l_pred = 0.0;
    let mut l_reverse = 0.0;
    for (i, s) in fwd.iter().enumerate() {
        let t = i as f64 * cfg.output_interval;
        let (q, p) = analytic_solution_simple_spring_1d(cfg.q0, cfg.p0, k, m, t);
        l_pred += (s.q(0)[0] - q).powi(2) + (s.p(0)[0] - p).powi(2);
        let back = reverse_state(&rev[n_out - i]);
        l_reverse += s.distance(&back).powi(2);
    }
    Ok(ScalingPoint { dt, span, l_pred, l_reverse })
}

/// Measures both losses against step size and span and fits log-log
/// slopes. `spec` must be a one-agent, one-dimensional simple spring.
pub fn theorem1_scaling(spec: &SystemSpec, cfg: &ScalingConfig) -> Result<ScalingReport> {
    if spec.kind != SystemKind::SimpleSpring || spec.n_agents != 1 || spec.dim != 1 {
        return Err(VerifyError::Config("scaling needs a one-agent, one-dimensional simple spring".into()));
    }
    if cfg.dts.len() < 4 || cfg.spans.len() < 4 {
        return Err(VerifyError::Config(format!(
            "need at least 4 step sizes and 4 spans, got {} and {}",
            cfg.dts.len(),
            cfg.spans.len()
        )));
    }
    let dt_sweep = cfg
        .dts
        .par_iter()
        .map(|&dt| scaling_point(spec, cfg, dt, cfg.fixed_span))
        .collect::<Result<Vec<_>>>()?;
    let span_sweep = cfg
        .spans
        .par_iter()
        .map(|&span| scaling_point(spec, cfg, cfg.fixed_dt, span))
        .collect::<Result<Vec<_>>>()?;
    let col = |pts: &[ScalingPoint], f: fn(&ScalingPoint) -> f64| pts.iter().map(f).collect::<Vec<_>>();
    let dts = col(&dt_sweep, |p| p.dt);
    let spans = col(&span_sweep, |p| p.span);
    let normalized_reverse = dt_sweep
        .iter()
        .map(|p| p.l_reverse / (p.span.powi(5) * p.dt.powi(4)))
        .collect();
    Ok(ScalingReport {
        scheme: cfg.scheme,
        pred_dt_fit: log_log_fit(&dts, &col(&dt_sweep, |p| p.l_pred))?,
        reverse_dt_fit: log_log_fit(&dts, &col(&dt_sweep, |p| p.l_reverse))?,
        pred_span_fit: log_log_fit(&spans, &col(&span_sweep, |p| p.l_pred))?,
        reverse_span_fit: log_log_fit(&spans, &col(&span_sweep, |p| p.l_reverse))?,
        normalized_reverse,
        dt_sweep,
        span_sweep,
    })
}

/// One-step worst case for a reconstruction error `a` and a reversal error
/// `b`. Returns `(max error of the endpoint-started reverse trajectory,
/// max error of the start-started one)`, which are `max(a, b)` and `a + b`.
///
/// Both inputs must be nonnegative.
pub fn lemma2_construction_check(a: f64, b: f64) -> (f64, f64) {
    assert!(a >= 0.0 && b >= 0.0, "errors must be nonnegative, got a={a}, b={b}");
    // Truth rests at the origin; the forward prediction drifts by a.
    let truth = [0.0, 0.0];
    let fwd = [truth[0], truth[1] + a];
    // Started at the forward endpoint, the reverse run lands b away from
    // the forward start: rev[j] is paired with time K - j.
    let rev = [fwd[1], fwd[0] - b];
    let ours = (0..2).map(|k| (truth[k] - rev[1 - k]).abs()).fold(0.0, f64::max);
    // Started at the truth, the mirrored run lands b beyond the forward
    // endpoint, in the same direction as the forward error.
    let mirrored = [truth[0], fwd[1] + b];
    let theirs = (0..2).map(|k| (truth[k] - mirrored[k]).abs()).fold(0.0, f64::max);
    debug_assert!(ours <= theirs + 1e-12 * (a + b));
    (ours, theirs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub claim: String,
    /// Largest violation measured; compared against `tol`.
    pub max_deviation: f64,
    pub tol: f64,
    pub passed: bool,
}

impl ClaimCheck {
    /// A check that passes when `max_deviation <= tol`.
    fn at_most(claim: &str, max_deviation: f64, tol: f64) -> Self {
        Self {
            claim: claim.to_string(),
            max_deviation,
            tol,
            passed: max_deviation <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub system: SystemKind,
    pub n_trajectories: usize,
    pub checks: Vec<ClaimCheck>,
}

impl EnergyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,claim,max_deviation,tol,passed\n");
        for c in &self.checks {
            out.push_str(&format!("{},{},{},{},{}\n", self.system, c.claim, c.max_deviation, c.tol, c.passed));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyCheckConfig {
    pub n_trajectories: usize,
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: usize,
    /// Relative energy drift allowed for the conservative spring.
    pub drift_tol: f64,
    /// Per-step energy increase allowed for the damped spring.
    pub monotone_tol: f64,
    /// Allowed error of the energy rate identities, relative to
    /// `max(1, |rate|)`.
    pub rate_tol: f64,
    /// States at which the rate identities are checked.
    pub rate_samples: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for EnergyCheckConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 8,
            scheme: Scheme::Rk4,
            dt: 1e-3,
            steps: 9000,
            drift_tol: 1e-6,
            monotone_tol: 1e-9,
            rate_tol: 1e-6,
            rate_samples: 1000,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

/// `dE/dt` along the exact flow at `(state, t)`, from symmetric RK4 steps
/// with one Richardson extrapolation.
fn energy_rate_along_flow(spec: &SystemSpec, state: &StateVector, t: f64, h: f64) -> Result<f64> {
    let central = |h: f64| -> Result<f64> {
        let ahead = step(Scheme::Rk4, spec, state, t, h)?;
        // a backward step is a forward step of the negated field in reversed time
        let neg = |s: &StateVector, tau: f64| -> std::result::Result<StateVector, DynamicsError> {
            let mut d = spec.derivative(s, t - (tau - t))?;
            d.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
            Ok(d)
        };
        let behind = step(Scheme::Rk4, &neg, state, t, h)?;
        Ok((spec.mechanical_energy(&ahead) - spec.mechanical_energy(&behind)) / (2.0 * h))
    };
    Ok((4.0 * central(h / 2.0)? - central(h)?) / 3.0)
}

/// The energy rate predicted in closed form for spring kinds: zero, the
/// forcing work `-Σ q̇ k1 cos ωt`, or the friction loss `-γ Σ p²/m²`.
pub fn expected_energy_rate(spec: &SystemSpec, state: &StateVector, t: f64) -> f64 {
    let m = spec.mass;
    match spec.kind {
        SystemKind::ForcedSpring => {
            let c = spec.force_k1 * (spec.force_omega * t).cos();
            -(0..spec.n_agents).map(|i| state.p(i).iter().map(|p| p / m).sum::<f64>()).sum::<f64>() * c
        }
        SystemKind::DampedSpring => {
            -spec.friction * (0..spec.n_agents).map(|i| state.p(i).iter().map(|p| p * p).sum::<f64>()).sum::<f64>() / (m * m)
        }
        _ => 0.0,
    }
}

/// Checks the energy behaviour of a spring kind along simulated
/// trajectories: conservation for the simple spring, the forcing identity
/// for the forced spring, monotone decay and the friction identity for the
/// damped spring.
pub fn energy_classification_check(spec: &SystemSpec, cfg: &EnergyCheckConfig) -> Result<EnergyReport> {
    if !spec.kind.is_spring() {
        return Err(VerifyError::Config(format!("energy checks cover spring systems, not {}", spec.kind)));
    }
    if cfg.n_trajectories == 0 {
        return Err(VerifyError::Config("need at least one trajectory".into()));
    }
    let grid = TimeGrid::new(0.0, cfg.dt, cfg.steps)?;
    let trajectories = (0..cfg.n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let s0 = sample_initial_state(spec, cfg.init_scale, 0.0, &mut rng);
            integrate(spec, &s0, &grid, cfg.scheme)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let rate_check = |claim: &str| -> Result<ClaimCheck> {
        let total: usize = trajectories.iter().map(|t| t.len()).sum();
        let stride = (total / cfg.rate_samples.max(1)).max(1);
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        'outer: for tr in &trajectories {
            for (s, &t) in tr.states.iter().zip(&tr.times).step_by(stride) {
                if checked == cfg.rate_samples {
                    break 'outer;
                }
                let expected = expected_energy_rate(spec, s, t);
                let measured = energy_rate_along_flow(spec, s, t, 1e-3)?;
                worst = worst.max((measured - expected).abs() / expected.abs().max(1.0));
                checked += 1;
            }
        }
        Ok(ClaimCheck::at_most(claim, worst, cfg.rate_tol))
    };

    let mut checks = Vec::new();
    match spec.kind {
        SystemKind::SimpleSpring => {
            let drift = trajectories
                .iter()
                .map(|tr| {
                    let e0 = spec.mechanical_energy(&tr.states[0]);
                    tr.states
                        .iter()
                        .map(|s| (spec.mechanical_energy(s) - e0).abs() / e0.abs().max(f64::MIN_POSITIVE))
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            checks.push(ClaimCheck::at_most("relative energy drift", drift, cfg.drift_tol));
        }
        SystemKind::DampedSpring => {
            let rise = trajectories
                .iter()
                .flat_map(|tr| tr.states.windows(2).map(|w| spec.mechanical_energy(&w[1]) - spec.mechanical_energy(&w[0])))
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0);
            checks.push(ClaimCheck::at_most("energy never increases", rise, cfg.monotone_tol));
            checks.push(rate_check("energy rate equals friction loss")?);
        }
        SystemKind::ForcedSpring => {
            checks.push(rate_check("energy rate equals forcing work")?);
            let swing = trajectories
                .iter()
                .map(|tr| {
                    let es: Vec<f64> = tr.states.iter().map(|s| spec.mechanical_energy(s)).collect();
                    es.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - es.iter().cloned().fold(f64::INFINITY, f64::min)
                })
                .fold(f64::INFINITY, f64::min);
            let floor = 100.0 * cfg.rate_tol;
            checks.push(ClaimCheck {
                claim: "energy is not conserved".into(),
                max_deviation: swing,
                tol: floor,
                passed: swing > floor,
            });
        }
        _ => unreachable!("checked above"),
    }
    Ok(EnergyReport {
        system: spec.kind,
        n_trajectories: cfg.n_trajectories,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    /// Perturbed copies of the base state; every pair is compared.
    pub n_copies: usize,
    pub perturbation_sigma: f64,
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: usize,
    /// Separation is measured every `subsample` steps.
    pub subsample: usize,
    pub seed: u64,
}

impl LyapunovConfig {
    /// Integration settings of the desk-scale dataset for `kind`.
    pub fn for_system(kind: SystemKind) -> Self {
        let d = DatasetConfig::desk_scale(kind, 1);
        Self {
            n_copies: 10,
            perturbation_sigma: 1e-4,
            scheme: d.scheme,
            dt: d.dt,
            steps: d.raw_steps,
            subsample: d.subsample,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub system: SystemKind,
    pub mean: f64,
    pub std: f64,
    pub n_pairs: usize,
    /// Copies whose trajectory stopped being finite, plus pairs that
    /// started at identical states.
    pub excluded: usize,
    pub perturbation_sigma: f64,
}

impl LyapunovReport {
    pub fn to_csv(&self) -> String {
        format!(
            "system,mean,std,n_pairs,excluded,perturbation_sigma\n{},{},{},{},{},{}\n",
            self.system, self.mean, self.std, self.n_pairs, self.excluded, self.perturbation_sigma
        )
    }
}

/// Maximum Lyapunov exponent `max_t (1/t) ln(|δ(t)| / |δ(0)|)` for every
/// pair of Gaussian-perturbed copies of `base`.
pub fn lyapunov_mle(spec: &SystemSpec, base: &StateVector, cfg: &LyapunovConfig) -> Result<LyapunovReport> {
    if !(cfg.perturbation_sigma > 0.0) {
        return Err(VerifyError::Config(format!(
            "perturbation sigma must be positive, got {}",
            cfg.perturbation_sigma
        )));
    }
    if cfg.n_copies < 2 || cfg.subsample == 0 || cfg.steps % cfg.subsample != 0 {
        return Err(VerifyError::Config("need two copies and steps divisible by subsample".into()));
    }
    let grid = TimeGrid::new(0.0, cfg.dt, cfg.steps)?;
    let noise = Normal::new(0.0, cfg.perturbation_sigma).expect("positive sigma");
    let runs: Vec<Option<Vec<StateVector>>> = (0..cfg.n_copies)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut s = base.clone();
            s.as_mut_slice().iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            match crate::dynamics::integrate_subsampled(spec, &s, &grid, cfg.scheme, cfg.subsample) {
                Ok(tr) => Ok(Some(tr.states)),
                Err(DynamicsError::NonFinite { .. }) => Ok(None),
                Err(DynamicsError::AtStep { source, .. }) if matches!(*source, DynamicsError::NonFinite { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut excluded = runs.iter().filter(|r| r.is_none()).count();
    let live: Vec<&Vec<StateVector>> = runs.iter().flatten().collect();
    let interval = cfg.dt * cfg.subsample as f64;
    let mut exps = Vec::new();
    for a in 0..live.len() {
        for b in a + 1..live.len() {
            let d0 = live[a][0].distance(&live[b][0]);
            if d0 == 0.0 {
                excluded += 1;
                continue;
            }
            let lambda = (1..live[a].len())
                .map(|k| (live[a][k].distance(&live[b][k]) / d0).ln() / (k as f64 * interval))
                .fold(f64::NEG_INFINITY, f64::max);
            exps.push(lambda);
        }
    }
    if exps.is_empty() {
        return Err(VerifyError::Config("no usable trajectory pairs".into()));
    }
    let n = exps.len() as f64;
    let mean = exps.iter().sum::<f64>() / n;
    let std = (exps.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    Ok(LyapunovReport {
        system: spec.kind,
        mean,
        std,
        n_pairs: exps.len(),
        excluded,
        perturbation_sigma: cfg.perturbation_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(3)).collect();
        let f = log_log_fit(&xs, &ys).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.reliable);
    }

    #[test]
    fn fit_rejects_nonpositive() {
        assert!(log_log_fit(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn lemma2_equal_when_forward_exact() {
        assert_eq!(lemma2_construction_check(0.0, 0.25), (0.25, 0.25));
    }

    #[test]
    fn zero_sigma_rejected() {
        let spec = SystemSpec::new(SystemKind::SimpleSpring, 1);
        let mut cfg = LyapunovConfig::for_system(SystemKind::SimpleSpring);
        cfg.perturbation_sigma = 0.0;
        let s = StateVector::zeros(1, 2, 2);
        assert!(matches!(lyapunov_mle(&spec, &s, &cfg), Err(VerifyError::Config(_))));
    }
}
