use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative-error floor in the denominator of every comparison.
pub const ERROR_FLOOR: f64 = 1e-8;

/// One parameter coordinate compared by [`gradient_report`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientEntry {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientEntry {
    pub fn relative_error(&self) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs()).max(ERROR_FLOOR);
        (self.analytic - self.numeric).abs() / denom
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub entries: Vec<GradientEntry>,
}

impl GradientReport {
    pub fn max_relative_error(&self) -> f64 {
        self.entries
            .iter()
            .map(GradientEntry::relative_error)
            .fold(0.0, f64::max)
    }

    /// Largest relative error among coordinates where either estimate reaches
    /// `magnitude`.
    pub fn max_relative_error_above(&self, magnitude: f64) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.analytic.abs().max(e.numeric.abs()) >= magnitude)
            .map(GradientEntry::relative_error)
            .fold(0.0, f64::max)
    }

    /// The coordinate with the largest relative error.
    pub fn worst(&self) -> Option<&GradientEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.relative_error().total_cmp(&b.relative_error()))
    }
}

/// Compares tape gradients of `f` against central finite differences.
///
/// `f` receives a fresh tape together with one trainable leaf per entry of
/// `params` and must return a scalar loss. Every coordinate of every parameter
/// is perturbed by `±eps`; the returned value is the largest relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn check_gradients<F>(params: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(gradient_report(params, eps, f)?.max_relative_error())
}

/// Every coordinate compared by [`check_gradients`].
pub fn gradient_report<F>(params: &[Tensor], eps: f64, f: F) -> Result<GradientReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };

    let (tape, vars, loss) = eval(params)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut work = params.to_vec();
    let mut entries = Vec::new();
    for p in 0..work.len() {
        for k in 0..work[p].len() {
            let original = work[p].data()[k];
            work[p].data_mut()[k] = original + eps;
            let (t, _, l) = eval(&work)?;
            let plus = t.value(l).item();
            work[p].data_mut()[k] = original - eps;
            let (t, _, l) = eval(&work)?;
            let minus = t.value(l).item();
            work[p].data_mut()[k] = original;

            entries.push(GradientEntry {
                param: p,
                index: k,
                analytic: analytic[p].data()[k],
                numeric: (plus - minus) / (2.0 * eps),
            });
        }
    }
    Ok(GradientReport { entries })
}
