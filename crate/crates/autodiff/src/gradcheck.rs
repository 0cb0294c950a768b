use crate::{Result, Tape, Tensor, Var};

/// Per-parameter comparison between tape and finite-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `max_abs_error` over the largest gradient magnitude in the tensor.
    /// Unlike the elementwise error it does not blow up on components that
    /// sit at the finite-difference noise level.
    pub scaled_error: f64,
    /// Flat index of the worst element.
    pub worst_element: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn max_scaled_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.scaled_error))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

/// Denominator floor so that near-zero gradients compare absolutely.
const REL_FLOOR: f64 = 1e-7;

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`. `f` rebuilds the computation on a fresh tape
/// from leaves holding the given parameter values.
pub fn grad_check<F>(mut f: F, params: &[Tensor], h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, params[pi].shape());
        let mut check = ParamCheck {
            index: pi,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            scaled_error: 0.0,
            worst_element: 0,
        };
        let mut scale: f64 = 0.0;
        for e in 0..params[pi].len() {
            let base = params[pi].data()[e];
            work[pi].data_mut()[e] = base + h;
            let up = eval(&work)?;
            work[pi].data_mut()[e] = base - h;
            let down = eval(&work)?;
            work[pi].data_mut()[e] = base;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[e];
            let rel = relative_error(a, numeric);
            scale = scale.max(a.abs()).max(numeric.abs());
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_element = e;
            }
        }
        check.scaled_error = check.max_abs_error / scale.max(REL_FLOOR);
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance,
    })
}
