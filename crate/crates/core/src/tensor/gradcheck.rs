//! Central-difference gradient checker.
//!
//! The analytic gradient from [`Tensor::backward`] is compared, coordinate
//! by coordinate, against `(f(x+eps) - f(x-eps)) / (2 eps)`. The relative
//! error of one coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{no_grad, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coords: usize,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Reduces any tensor to a scalar through a fixed pseudo-random weighting,
/// so that every output coordinate contributes to the checked gradient.
pub fn probe(t: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + t.numel() as u64);
    let w = super::init::uniform::<f64>(t.shape(), -1.0, 1.0, &mut rng);
    Ok(t.mul(&w)?.sum())
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    no_grad(|| f(inputs))?.item()
}

/// Analytic and central-difference gradients of `f` for every input, in
/// input order.
pub fn gradients<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<Vec<(Vec<f64>, Vec<f64>)>>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.with_requires_grad(true)).collect();
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    if !out.all_finite() {
        return Err(Error::Numeric("grad_check: non-finite function value".into()));
    }
    out.backward()?;

    let mut result = Vec::with_capacity(leaves.len());
    let mut current: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach()).collect();
    for (ii, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        if let Some(c) = analytic.iter().position(|a| !a.is_finite()) {
            return Err(Error::Numeric(format!(
                "grad_check: non-finite analytic gradient at input {ii} coordinate {c}"
            )));
        }
        let base = leaf.to_vec();
        let mut numeric = Vec::with_capacity(base.len());
        for c in 0..base.len() {
            let mut eval_at = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[c] += delta;
                current[ii] = Tensor::from_vec(v, leaf.shape())?;
                eval_scalar(&f, &current)
            };
            let plus = eval_at(eps)?;
            let minus = eval_at(-eps)?;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "grad_check: non-finite output perturbing input {ii} coordinate {c}"
                )));
            }
            numeric.push((plus - minus) / (2.0 * eps));
        }
        current[ii] = leaf.detach();
        result.push((analytic, numeric));
    }
    Ok(result)
}

/// Full report for the function `f` at `inputs` (all inputs are checked).
pub fn grad_check_report<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coords: 0,
    };
    for (ii, (analytic, numeric)) in gradients(f, inputs, eps)?.into_iter().enumerate() {
        for (c, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let err = relative_error(a, n);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ii, c);
                report.analytic = a;
                report.numeric = n;
            }
            report.coords += 1;
        }
    }
    Ok(report)
}

/// Maximum relative error between analytic and central-difference gradients.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    Ok(grad_check_report(f, inputs, eps)?.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        // Detaching one factor of x·x halves the analytic gradient.
        let x = Tensor::<f64>::from_vec(vec![0.3, -0.7], &[2]).unwrap();
        let ok = grad_check(|t| Ok(t[0].mul(&t[0])?.sum()), &[x.clone()], DEFAULT_EPS).unwrap();
        assert!(ok < 1e-8);
        let bad = grad_check(
            |t| Ok(t[0].detach().mul(&t[0])?.sum()),
            &[x],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(bad > 0.4, "{bad}");
    }

    #[test]
    fn non_finite_reports_coordinate() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 1e-6], &[2]).unwrap();
        let err = grad_check(|t| Ok(t[0].ln().sum()), &[x], 1e-5).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }
}
