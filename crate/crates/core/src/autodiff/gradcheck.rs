//! Finite-difference gradient verification.

use rand::Rng;

use super::{Graph, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `|a − b| / max(|a|, |b|, 1e−8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), false);
    let out = f(&mut tape, v)?;
    tape.value(&out).item()
}

/// Compares the tape gradient of scalar `f` at `x` with central differences
/// of step `eps`, coordinate by coordinate.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&mut tape, v)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric);
        if err > report.max_rel_err || i == 0 {
            report = GradCheckReport {
                max_rel_err: err,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}

/// Directional form of [`grad_check`]: compares `⟨∇f, d⟩` with the central
/// difference of `f` along a random Gaussian-like direction `d`. Suited to
/// inputs too large to probe coordinate by coordinate. `f` evaluates the
/// objective at a perturbed point; `gradient` is the analytic gradient at `x`.
pub fn directional_check<F, R>(f: F, x: &Tensor, gradient: &Tensor, eps: f64, rng: &mut R) -> Result<(f64, f64, f64)>
where
    F: Fn(&Tensor) -> Result<f64>,
    R: Rng + ?Sized,
{
    if gradient.shape() != x.shape() {
        return Err(Error::Contract("gradient shape differs from the point".into()));
    }
    // Sum of uniforms; only the direction's spread matters.
    let dir = Tensor::from_parts(
        x.shape().to_vec(),
        (0..x.numel())
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>())
            .collect(),
    );
    let norm = dir.dot(&dir)?.sqrt().max(f64::MIN_POSITIVE);
    let dir = dir.map(|v| v / norm);
    let analytic = gradient.dot(&dir)?;
    let plus = f(&x.zip_map(&dir, |a, d| a + eps * d)?)?;
    let minus = f(&x.zip_map(&dir, |a, d| a - eps * d)?)?;
    let numeric = (plus - minus) / (2.0 * eps);
    Ok((relative_error(analytic, numeric), analytic, numeric))
}
