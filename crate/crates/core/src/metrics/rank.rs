//! Rank statistics.

use crate::error::{Error, Result};

/// 1-based ranks with ties assigned their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("correlation with a constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of tie-averaged ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("spearman of {} vs {} values", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::invalid("scores", format!("need at least 3 pairs, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_cases() {
        let a = [3.0, 1.0, 4.0, 1.5, 9.0];
        assert!((spearman_rho(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((spearman_rho(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert!(matches!(spearman_rho(&[1.0; 4], &a[..4]), Err(Error::Undefined(_))));
        assert!(spearman_rho(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn tied_example() {
        // ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4)
        let rho = spearman_rho(&[1.0, 2.0, 2.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert!((rho - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn monotone_transform_invariance() {
        let a = [0.3, -1.0, 2.5, 0.0, 7.0, 7.0];
        let b = [1.0, 0.5, 3.0, -2.0, 4.0, 0.1];
        let r = spearman_rho(&a, &b).unwrap();
        let ea: Vec<f64> = a.iter().map(|v| v.exp()).collect();
        let cb: Vec<f64> = b.iter().map(|v| v * v * v + 2.0).collect();
        assert!((spearman_rho(&ea, &cb).unwrap() - r).abs() < 1e-12);
    }
}
