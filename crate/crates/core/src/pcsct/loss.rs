//! Pooled cosine similarity and the symmetric sequence-level InfoNCE objective.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::embedding::EmbeddingSequence;
use crate::error::{Error, Result};

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine similarity of two vectors; a zero-norm vector is an error.
pub fn cosine(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of {} vs {} dims", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Undefined("cosine of a zero-norm pooled vector".into()));
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine similarity of the time-mean-pooled vectors of two sequences.
pub fn pool_and_sim(u: &EmbeddingSequence, v: &EmbeddingSequence) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::Shape(format!(
            "pooled similarity of {}-dim vs {}-dim sequences",
            u.dim(),
            v.dim()
        )));
    }
    cosine(Array1::from(u.pooled()).view(), Array1::from(v.pooled()).view())
}

/// Loss value and gradients with respect to the pooled vectors.
#[derive(Debug, Clone)]
pub struct InfoNceOutput {
    pub loss: f64,
    /// `B x D` gradient for the pooled clean vectors.
    pub d_orig: Array2<f64>,
    /// `B x D` gradient for the pooled perturbed vectors.
    pub d_pert: Array2<f64>,
}

/// Symmetric InfoNCE over pooled vectors (`B x D` each).
///
/// Row `i` of `orig` is contrasted against all rows of `pert` with row `i` as
/// the positive, and vice versa; the result is the mean of both directions.
pub fn infonce(orig: &Array2<f64>, pert: &Array2<f64>, temperature: f64) -> Result<InfoNceOutput> {
    let b = orig.nrows();
    if b < 2 {
        return Err(Error::invalid("batch_size", format!("InfoNCE needs at least 2 pairs, got {b}")));
    }
    if pert.dim() != orig.dim() {
        return Err(Error::Shape(format!("pooled batches {:?} vs {:?}", orig.dim(), pert.dim())));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature", "must be positive"));
    }
    let unit = |m: &Array2<f64>| -> Result<(Array2<f64>, Array1<f64>)> {
        let norms = m.map_axis(Axis(1), norm);
        if norms.iter().any(|&n| n == 0.0 || !n.is_finite()) {
            return Err(Error::Undefined("cosine of a zero-norm pooled vector".into()));
        }
        Ok((m / &norms.view().insert_axis(Axis(1)), norms))
    };
    let (u, nu) = unit(orig)?;
    let (v, nv) = unit(pert)?;
    let s = u.dot(&v.t());
    let logits = &s / temperature;

    // Softmax cross-entropy along rows (anchors = orig) and columns (anchors = pert).
    let mut ds = Array2::<f64>::zeros((b, b));
    let mut loss = 0.0;
    for axis in [Axis(1), Axis(0)] {
        for (i, lane) in logits.lanes(axis).into_iter().enumerate() {
            let m = lane.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
            let z: f64 = lane.iter().map(|&x| (x - m).exp()).sum();
            loss += m + z.ln() - lane[i];
            for (j, &x) in lane.iter().enumerate() {
                let p = (x - m).exp() / z;
                let g = (p - if i == j { 1.0 } else { 0.0 }) / (2.0 * b as f64 * temperature);
                if axis == Axis(1) {
                    ds[[i, j]] += g;
                } else {
                    ds[[j, i]] += g;
                }
            }
        }
    }
    loss /= 2.0 * b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("InfoNCE loss".into()));
    }

    // s_ij = û_i · v̂_j ; d û = ds v̂ ; d u = (d û − (d û · û) û) / ‖u‖
    let project = |dunit: Array2<f64>, unit: &Array2<f64>, norms: &Array1<f64>| {
        let radial = (&dunit * unit).sum_axis(Axis(1)).insert_axis(Axis(1));
        (&dunit - &(unit * &radial)) / &norms.view().insert_axis(Axis(1))
    };
    let d_orig = project(ds.dot(&v), &u, &nu);
    let d_pert = project(ds.t().dot(&u), &v, &nv);
    Ok(InfoNceOutput { loss, d_orig, d_pert })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn identical_vectors_give_log_batch() {
        for b in [2usize, 3, 7] {
            let m = Array2::from_elem((b, 4), 0.5);
            let out = infonce(&m, &m, 0.1).unwrap();
            assert_abs_diff_eq!(out.loss, (b as f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn separated_pair_closed_form() {
        let orig = ndarray::array![[1.0, 0.0], [-1.0, 0.0]];
        let out = infonce(&orig, &orig.clone(), 0.1).unwrap();
        let expected = (1.0 + (-20.0f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-15);
        assert!((expected - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn loss_falls_as_positive_similarity_rises() {
        // rotating the first positive away from its anchor raises the loss
        let orig = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
        let losses: Vec<f64> = (0..10)
            .map(|k| {
                let a = 1.5 * k as f64 / 9.0;
                let pert = ndarray::array![[a.cos(), a.sin()], [0.0, 1.0]];
                infonce(&orig, &pert, 0.1).unwrap().loss
            })
            .collect();
        assert!(losses.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn permutation_invariance_and_positivity() {
        let mut r = rng::stream(3, 0);
        let orig = Array2::from_shape_fn((5, 6), |_| r.gen_range(-1.0..1.0));
        let pert = Array2::from_shape_fn((5, 6), |_| r.gen_range(-1.0..1.0));
        let base = infonce(&orig, &pert, 0.1).unwrap().loss;
        assert!(base > 0.0);
        let perm = [3, 0, 4, 1, 2];
        let po = orig.select(Axis(0), &perm);
        let pp = pert.select(Axis(0), &perm);
        assert_abs_diff_eq!(infonce(&po, &pp, 0.1).unwrap().loss, base, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut r = rng::stream(seed, 1);
            let point: Vec<f64> = (0..2 * 3 * 4).map(|_| r.gen_range(-1.0..1.0)).collect();
            let err = gradcheck(
                |p| {
                    let o = Array2::from_shape_vec((3, 4), p[..12].to_vec()).unwrap();
                    let q = Array2::from_shape_vec((3, 4), p[12..].to_vec()).unwrap();
                    let out = infonce(&o, &q, 0.3).unwrap();
                    let g = out.d_orig.iter().chain(out.d_pert.iter()).copied().collect();
                    (out.loss, g)
                },
                &point,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn degenerate_inputs() {
        let m = Array2::from_elem((1, 3), 1.0);
        assert!(infonce(&m, &m, 0.1).is_err());
        let z = Array2::zeros((2, 3));
        assert!(infonce(&z, &z, 0.1).is_err());
    }

    #[test]
    fn pooled_cosine_cases() {
        let u = EmbeddingSequence::new(ndarray::array![[1.0f32, 2.0], [3.0, 0.5]], 50.0).unwrap();
        assert_abs_diff_eq!(pool_and_sim(&u, &u).unwrap(), 1.0, epsilon = 1e-12);
        let v = EmbeddingSequence::new(&u.data() * 3.0, 50.0).unwrap();
        assert_abs_diff_eq!(pool_and_sim(&u, &v).unwrap(), 1.0, epsilon = 1e-12);
        let a = EmbeddingSequence::new(ndarray::array![[1.0f32, 0.0]], 50.0).unwrap();
        let b = EmbeddingSequence::new(ndarray::array![[0.0f32, 2.0], [0.0, 4.0]], 50.0).unwrap();
        assert_abs_diff_eq!(pool_and_sim(&a, &b).unwrap(), 0.0, epsilon = 1e-12);
        let z = EmbeddingSequence::new(ndarray::array![[1.0f32, 0.0], [-1.0, 0.0]], 50.0).unwrap();
        assert!(pool_and_sim(&a, &z).is_err());
    }
}
