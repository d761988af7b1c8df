use crate::error::{Error, Result};

/// Central-difference gradient estimate of `f` at `x`.
///
/// Component `i` is `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`. Any
/// non-finite evaluation is reported with the offending component.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Contract(format!("finite_diff_grad: eps must be positive, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let hi = f(&probe);
        probe[i] = orig - eps;
        let lo = f(&probe);
        probe[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::Contract(format!(
                "finite_diff_grad: non-finite function value while perturbing component {i}"
            )));
        }
        grad.push((hi - lo) / (2.0 * eps));
    }
    Ok(grad)
}

/// Relative error used by the gradient checks: `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps components that are zero analytically from dividing
/// rounding noise by zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| relative_error(*x, *y))
        .fold(0.0, f64::max)
}
