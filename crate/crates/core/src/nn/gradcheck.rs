//! Central finite-difference gradient checking.

use crate::error::{Error, Result};

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `f` at `point` with central
/// differences of step `h` over every coordinate. Returns the maximum of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn gradcheck<G>(mut f: G, point: &[f64], h: f64) -> Result<f64>
where
    G: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (value, analytic) = f(point);
    if !value.is_finite() {
        return Err(Error::NonFinite("gradcheck: function value".into()));
    }
    if analytic.len() != point.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} coordinates",
            analytic.len(),
            point.len()
        )));
    }
    let coords: Vec<usize> = (0..point.len()).collect();
    gradcheck_coords(|p| f(p).0, &analytic, point, &coords, h)
}

/// Like [`gradcheck`] but only over `coords`, with the analytic gradient
/// supplied up front and `value` evaluating the function alone.
pub fn gradcheck_coords<V>(mut value: V, analytic: &[f64], point: &[f64], coords: &[usize], h: f64) -> Result<f64>
where
    V: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let a = analytic[i];
        if !a.is_finite() {
            return Err(Error::NonFinite(format!("gradcheck: analytic gradient at {i}")));
        }
        x[i] = point[i] + h;
        let up = value(&x);
        x[i] = point[i] - h;
        let down = value(&x);
        x[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("gradcheck: function value near coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(a, numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact() {
        let err = gradcheck(|p| (p[0] * p[0], vec![2.0 * p[0]]), &[3.0], 1e-5).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let err = gradcheck(|p| (p[0] * p[0] + p[1].sin(), vec![2.0 * p[0], p[1].sin()]), &[1.0, 0.4], 1e-5).unwrap();
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn rejects_non_finite() {
        assert!(gradcheck(|p| (p[0].ln(), vec![1.0 / p[0]]), &[-1.0], 1e-5).is_err());
    }
}
