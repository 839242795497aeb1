//! Gaussian statistics of embedding sets and the Fréchet distance between them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Mean and (unbiased, symmetrized) covariance of a set of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn gaussian_stats<V: AsRef<[f64]>>(vectors: &[V]) -> Result<GaussianStats> {
    if vectors.len() < 2 {
        return Err(Error::invalid(
            "embeddings",
            format!("need at least 2 vectors for a covariance, got {}", vectors.len()),
        ));
    }
    let d = vectors[0].as_ref().len();
    if d == 0 || vectors.iter().any(|v| v.as_ref().len() != d) {
        return Err(Error::Shape("embedding vectors must share a non-zero dimension".into()));
    }
    let n = vectors.len();
    let x = DMatrix::from_fn(n, d, |i, j| vectors[i].as_ref()[j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x;
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov })
}

/// Symmetric eigendecomposition with negative eigenvalues clamped to zero.
fn psd_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let m = (&m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::try_new(m, f64::EPSILON, 0)
        .ok_or_else(|| Error::Undefined("eigendecomposition did not converge".into()))?;
    eig.eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(eig)
}

fn psd_sqrt(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m)?;
    let s = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose())
}

/// `‖μa−μb‖² + Tr(Σa + Σb − 2 (Σa^{1/2} Σb Σa^{1/2})^{1/2})`, clamped at 0.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "Fréchet distance between {}-dim and {}-dim statistics",
            a.dim(),
            b.dim()
        )));
    }
    let root_a = psd_sqrt(a.cov.clone())?;
    let inner = &root_a * &b.cov * &root_a;
    let cross: f64 = psd_eigen(inner)?.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let value = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::NonFinite("Fréchet distance".into()));
    }
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, Normal};

    fn stats_1d(mu: f64, var: f64) -> GaussianStats {
        GaussianStats {
            mean: DVector::from_element(1, mu),
            cov: DMatrix::from_element(1, 1, var),
        }
    }

    #[test]
    fn hand_computed_stats() {
        let s = gaussian_stats(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(s.mean.as_slice(), &[1.0, 0.0]);
        assert_eq!(s.cov, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        let p = gaussian_stats(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(s, p);
        assert!(gaussian_stats(&[vec![1.0]]).is_err());
        assert!(gaussian_stats(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn sampled_covariance_matches_truth() {
        let mut r = rng::stream(11, 0);
        let sd = [1.0, 2.0, 0.5];
        let v: Vec<Vec<f64>> = (0..10_000)
            .map(|_| sd.iter().map(|&s| Normal::new(0.0, s).unwrap().sample(&mut r)).collect())
            .collect();
        let st = gaussian_stats(&v).unwrap();
        for (i, s) in sd.iter().enumerate() {
            assert!((st.cov[(i, i)] / (s * s) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let d = frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(3.0, 4.0)).unwrap();
        assert!((d - 10.0).abs() < 1e-6);
        let e = frechet_distance(&stats_1d(3.0, 4.0), &stats_1d(0.0, 1.0)).unwrap();
        assert!((d - e).abs() < 1e-12);
    }

    #[test]
    fn identical_and_mismatched() {
        let mut r = rng::stream(5, 0);
        let n = Normal::new(0.0, 1.0).unwrap();
        let v: Vec<Vec<f64>> = (0..50).map(|_| (0..8).map(|_| n.sample(&mut r)).collect()).collect();
        let s = gaussian_stats(&v).unwrap();
        assert!(frechet_distance(&s, &s).unwrap() < 1e-8);
        assert!(frechet_distance(&s, &stats_1d(0.0, 1.0)).is_err());
    }
}
