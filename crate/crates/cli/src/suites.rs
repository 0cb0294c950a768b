//! The `verify` command: numerical checks of the reversal and error-scaling
//! properties, each reduced to named pass/fail assertions plus the raw
//! measurements behind them.

use std::path::PathBuf;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use treat_core::data::sample_initial_state;
use treat_core::dynamics::{Scheme, StateVector};
use treat_core::physics::{SystemKind, SystemSpec};
use treat_core::verify::{
    energy_classification_check, lemma1_sweep, lemma2_construction_check, lyapunov_mle, theorem1_scaling,
    EnergyCheckConfig, LyapunovConfig, ScalingConfig,
};

use crate::config::{self, Suite, VerifyRun, RUN_SCHEMA_VERSION};
use crate::exit;

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// lemma1, theorem1, lemma2, energy, mle or all.
    #[arg(long)]
    pub suite: Option<String>,
    /// Restrict lemma1 and energy to one system.
    #[arg(long)]
    pub system: Option<SystemKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the full report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write the assertion table here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance condition on `value`.
    pub expect: String,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
    pub measurements: serde_json::Map<String, Value>,
}

impl VerifyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("suite,name,value,expect,passed\n");
        for a in &self.assertions {
            out.push_str(&format!("{},{},{},{},{}\n", a.suite, a.name, a.value, a.expect, a.passed));
        }
        out
    }
}

struct Part {
    assertions: Vec<Assertion>,
    measurements: Vec<(String, Value)>,
}

fn bound(v: f64) -> String {
    if v != 0.0 && !(1e-3..1e4).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn at_least(suite: &'static str, name: impl Into<String>, value: f64, limit: f64) -> Assertion {
    Assertion {
        suite,
        name: name.into(),
        value,
        expect: format!(">= {}", bound(limit)),
        passed: value >= limit,
    }
}

fn at_most(suite: &'static str, name: impl Into<String>, value: f64, limit: f64) -> Assertion {
    Assertion {
        suite,
        name: name.into(),
        value,
        expect: format!("<= {}", bound(limit)),
        passed: value <= limit,
    }
}

pub fn resolve(args: &VerifyArgs) -> anyhow::Result<VerifyRun> {
    let mut run = match &args.config {
        Some(path) => config::load(path)?,
        None => VerifyRun {
            schema_version: RUN_SCHEMA_VERSION,
            seed: 0,
            suite: Suite::All,
            system: None,
        },
    };
    if let Some(s) = &args.suite {
        run.suite = s.parse().map_err(exit::config)?;
    } else if args.config.is_none() {
        return Err(exit::config("--suite is required without --config"));
    }
    if let Some(k) = args.system {
        run.system = Some(k);
    }
    if let Some(s) = args.seed {
        run.seed = s;
    }
    Ok(run)
}

/// Systems the round-trip suite knows how to set up.
pub const LEMMA1_SYSTEMS: [SystemKind; 3] =
    [SystemKind::SimpleSpring, SystemKind::TriplePendulum, SystemKind::DampedSpring];
pub const LEMMA1_DTS: [f64; 3] = [1e-3, 5e-4, 2.5e-4];

/// System, start state and span for the round-trip sweep. The spring is
/// stiffened so the fifth-order error stays above roundoff at the finest step.
pub fn lemma1_setup(kind: SystemKind) -> anyhow::Result<(SystemSpec, StateVector, f64)> {
    Ok(match kind {
        SystemKind::SimpleSpring => {
            let mut spec = SystemSpec::new(kind, 1).with_dim(1);
            spec.spring_k = 400.0;
            (spec, StateVector::from_qp(1, &[1.0], &[0.0])?, 10.0)
        }
        SystemKind::TriplePendulum => (
            SystemSpec::new(kind, 3),
            StateVector::from_qp(3, &[1.0, -0.5, 0.8], &[0.0; 3])?,
            1.0,
        ),
        SystemKind::DampedSpring => (
            SystemSpec::new(kind, 1).with_dim(1),
            StateVector::from_qp(1, &[1.0], &[0.0])?,
            1.0,
        ),
        other => return Err(exit::config(format!("the round-trip suite does not cover {other}"))),
    })
}

fn lemma1(system: Option<SystemKind>) -> anyhow::Result<Part> {
    let systems: Vec<SystemKind> = match system {
        Some(k) => vec![k],
        None => LEMMA1_SYSTEMS.to_vec(),
    };
    let reports = systems
        .par_iter()
        .map(|&kind| {
            let (spec, s0, span) = lemma1_setup(kind)?;
            Ok((kind, lemma1_sweep(&spec, &s0, Scheme::Rk4, &LEMMA1_DTS, span)?))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut part = Part {
        assertions: Vec::new(),
        measurements: Vec::new(),
    };
    for (kind, r) in reports {
        if kind == SystemKind::DampedSpring {
            let finest = r.points.last().map_or(0.0, |p| p.discrepancy);
            part.assertions.push(at_least("lemma1", "damped_spring.finest_discrepancy", finest, 1e-3));
        } else {
            let worst = r.ratios.iter().copied().fold(f64::INFINITY, f64::min);
            part.assertions.push(at_least("lemma1", format!("{kind}.min_halving_ratio"), worst, 12.0));
        }
        part.measurements.push((format!("lemma1.{kind}"), serde_json::to_value(&r)?));
    }
    Ok(part)
}

fn theorem1() -> anyhow::Result<Part> {
    let spec = SystemSpec::new(SystemKind::SimpleSpring, 1).with_dim(1);
    let euler = theorem1_scaling(&spec, &ScalingConfig::new(Scheme::Euler))?;
    let heun = theorem1_scaling(&spec, &ScalingConfig::new(Scheme::Heun))?;
    let fit = euler.pred_dt_fit;
    let assertions = vec![
        Assertion {
            suite: "theorem1",
            name: "euler.pred_dt_slope".into(),
            value: fit.slope,
            expect: "within 0.3 of 2".into(),
            passed: (fit.slope - 2.0).abs() <= 0.3,
        },
        at_least("theorem1", "euler.pred_dt_r_squared", fit.r_squared, 0.98),
        at_least("theorem1", "heun.reverse_minus_pred_slope", heun.slope_gap(), 1.5),
        at_most("theorem1", "heun.normalized_reverse_spread", heun.reverse_bound_ratio(), 10.0),
    ];
    Ok(Part {
        assertions,
        measurements: vec![
            ("theorem1.euler".into(), serde_json::to_value(&euler)?),
            ("theorem1.heun".into(), serde_json::to_value(&heun)?),
        ],
    })
}

pub const LEMMA2_PAIRS: usize = 10_000;

fn lemma2(seed: u64) -> anyhow::Result<Part> {
    let (ours, theirs) = lemma2_construction_check(0.3, 0.4);
    let example_err = (ours - 0.4).abs().max((theirs - 0.7).abs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut violations = 0usize;
    for _ in 0..LEMMA2_PAIRS {
        let (a, b): (f64, f64) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
        let (o, t) = lemma2_construction_check(a, b);
        worst = worst.max((o - a.max(b)).abs()).max((t - (a + b)).abs());
        if o > t {
            violations += 1;
        }
    }
    Ok(Part {
        assertions: vec![
            at_most("lemma2", "example_0.3_0.4.abs_error", example_err, 1e-12),
            at_most("lemma2", "random_pairs.max_abs_error", worst, 1e-9),
            at_most("lemma2", "random_pairs.violations", violations as f64, 0.0),
        ],
        measurements: vec![(
            "lemma2".into(),
            json!({ "example": { "a": 0.3, "b": 0.4, "endpoint_start": ours, "initial_start": theirs },
                    "pairs": LEMMA2_PAIRS, "max_abs_error": worst }),
        )],
    })
}

pub const ENERGY_SYSTEMS: [SystemKind; 3] =
    [SystemKind::SimpleSpring, SystemKind::DampedSpring, SystemKind::ForcedSpring];

fn energy(system: Option<SystemKind>, seed: u64) -> anyhow::Result<Part> {
    let systems: Vec<SystemKind> = match system {
        Some(k) if k.is_spring() => vec![k],
        Some(k) => return Err(exit::config(format!("the energy suite covers spring systems only, not {k}"))),
        None => ENERGY_SYSTEMS.to_vec(),
    };
    let cfg = EnergyCheckConfig {
        seed,
        ..EnergyCheckConfig::default()
    };
    let reports = systems
        .par_iter()
        .map(|&k| energy_classification_check(&SystemSpec::new(k, 5), &cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut part = Part {
        assertions: Vec::new(),
        measurements: Vec::new(),
    };
    for r in reports {
        for c in &r.checks {
            part.assertions.push(Assertion {
                suite: "energy",
                name: format!("{}.{}", r.system, c.claim),
                value: c.max_deviation,
                expect: format!("tol {}", bound(c.tol)),
                passed: c.passed,
            });
        }
        part.measurements.push((format!("energy.{}", r.system), serde_json::to_value(&r)?));
    }
    Ok(part)
}

fn mle(seed: u64) -> anyhow::Result<Part> {
    let estimate = |kind, n| -> anyhow::Result<_> {
        let spec = SystemSpec::new(kind, n);
        let base = sample_initial_state(&spec, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(lyapunov_mle(&spec, &base, &LyapunovConfig::for_system(kind))?)
    };
    let pend = estimate(SystemKind::TriplePendulum, 3)?;
    let spring = estimate(SystemKind::SimpleSpring, 5)?;
    Ok(Part {
        assertions: vec![at_least("mle", "pendulum_over_spring", pend.mean / spring.mean, 10.0)],
        measurements: vec![
            ("mle.triple_pendulum".into(), serde_json::to_value(&pend)?),
            ("mle.simple_spring".into(), serde_json::to_value(&spring)?),
        ],
    })
}

pub fn run(run: &VerifyRun) -> anyhow::Result<VerifyReport> {
    let suites = match run.suite {
        Suite::All => vec![Suite::Lemma1, Suite::Theorem1, Suite::Lemma2, Suite::Energy, Suite::Mle],
        s => vec![s],
    };
    let mut report = VerifyReport {
        suite: run.suite,
        passed: true,
        assertions: Vec::new(),
        measurements: serde_json::Map::new(),
    };
    for suite in suites {
        let part = match suite {
            Suite::Lemma1 => lemma1(run.system)?,
            Suite::Theorem1 => theorem1()?,
            Suite::Lemma2 => lemma2(run.seed)?,
            Suite::Energy => energy(run.system, run.seed)?,
            Suite::Mle => mle(run.seed)?,
            Suite::All => unreachable!(),
        };
        report.assertions.extend(part.assertions);
        report.measurements.extend(part.measurements);
    }
    report.passed = report.assertions.iter().all(|a| a.passed);
    Ok(report)
}
