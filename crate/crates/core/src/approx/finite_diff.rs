use crate::error::{Error, Result};

/// Worst coordinate-wise relative error between an analytic gradient and
/// central finite differences, with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F, G>(value: F, gradient: G, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step {step} must be positive")));
    }
    let analytic = gradient(point)?;
    if analytic.len() != point.len() {
        return Err(Error::Shape(format!(
            "gradient of length {} at a point of length {}",
            analytic.len(),
            point.len()
        )));
    }
    let mut theta = point.to_vec();
    let mut worst = 0.0f64;
    for k in 0..theta.len() {
        let orig = theta[k];
        theta[k] = orig + step;
        let up = value(&theta)?;
        theta[k] = orig - step;
        let down = value(&theta)?;
        theta[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite-difference function value"));
        }
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    Ok(worst)
}
