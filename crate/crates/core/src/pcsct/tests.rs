use ndarray::{Array1, Array2};
use rand::Rng;

use super::*;
use crate::nn::{gradcheck, ParamSet};
use crate::perturb::{sample_spec, vectorize, PARAM_VECTOR_LEN};
use crate::rng;

fn tiny() -> PcsctConfig {
    PcsctConfig {
        input_dim: 6,
        d_model: 8,
        heads: 2,
        ffn_dim: 12,
        layers: 2,
        output_dim: 5,
        cond_dim: 4,
        ppe_hidden: 5,
    }
}

fn random_seq(seed: u64, t: usize, d: usize) -> Array2<f64> {
    let mut r = rng::stream(seed, rng::tag("seq"));
    Array2::from_shape_fn((t, d), |_| r.gen_range(-1.0..1.0))
}

#[test]
fn shapes_and_single_frame() {
    let m = PcsctModel::<f64>::init(PcsctConfig::default(), 1).unwrap();
    let c = m.null_condition();
    assert_eq!(c.0.len(), 64);
    let (z, _) = m.forward_sequence(random_seq(1, 1, 768).view(), &c).unwrap();
    assert_eq!(z.dim(), (1, 128));
    assert!(m.forward_sequence(random_seq(1, 2, 767).view(), &c).is_err());
    assert!(m.forward_sequence(random_seq(1, 0, 768).view(), &c).is_err());
}

#[test]
fn ppe_zero_input_with_zero_biases_is_zero() {
    let m = PcsctModel::<f64>::init(tiny(), 2).unwrap();
    let c = m.null_condition();
    assert!(c.0.iter().all(|&v| v == 0.0));
    assert!(m.ppe_forward(&[0.0; 9]).is_err());
}

#[test]
fn identity_film_ignores_conditioning() {
    let m = PcsctModel::<f64>::init(tiny(), 3).unwrap();
    let e = random_seq(3, 4, 6);
    let a = m.forward_sequence(e.view(), &m.condition(&sample_spec(1, None))).unwrap().0;
    let b = m.forward_sequence(e.view(), &m.condition(&sample_spec(2, None))).unwrap().0;
    assert_eq!(a, b);
}

#[test]
fn rejects_inconsistent_config() {
    let cfg = PcsctConfig { heads: 3, ..tiny() };
    assert!(PcsctModel::<f32>::init(cfg, 0).is_err());
}

#[test]
fn pooled_output_norm_gradient() {
    for seed in 0..20 {
        let mut m = PcsctModel::<f64>::init(tiny(), seed).unwrap();
        m.randomize(seed, 0.5);
        let e = random_seq(seed, 3, 6);
        let spec = sample_spec(seed, None);
        let params = vectorize(&spec);
        let value = |m: &PcsctModel<f64>| -> (f64, PcsctModel<f64>) {
            let (c, ppe) = m.ppe_forward(&params).unwrap();
            let (z, cache) = m.forward_sequence(e.view(), &c).unwrap();
            let p = PcsctModel::pooled(&z);
            let n = p.dot(&p).sqrt();
            let dz = Array2::from_shape_fn(z.dim(), |(_, j)| p[j] / n / z.nrows() as f64);
            let mut g = m.zeros_like();
            let (dc, _) = m.backward_sequence(&cache, dz.view(), Some(&mut g));
            m.ppe_backward(&ppe, dc.view(), &mut g);
            (n, g)
        };
        let point = m.flatten();
        let err = gradcheck(
            |p| {
                let mut mm = m.clone();
                mm.assign_flat(p);
                let (v, g) = value(&mm);
                (v, g.flatten())
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn input_gradient() {
    let mut m = PcsctModel::<f64>::init(tiny(), 9).unwrap();
    m.randomize(9, 0.5);
    let c = m.condition(&sample_spec(4, None));
    let e = random_seq(9, 3, 6);
    let err = gradcheck(
        |p| {
            let x = Array2::from_shape_vec((3, 6), p.to_vec()).unwrap();
            let (z, cache) = m.forward_sequence(x.view(), &c).unwrap();
            let w = Array2::from_shape_fn(z.dim(), |(i, j)| ((i * 7 + j) as f64).sin());
            let (_, de) = m.backward_sequence(&cache, w.view(), None);
            ((&z * &w).sum(), de.iter().copied().collect())
        },
        e.as_slice().unwrap(),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn full_loss_gradient_exhaustive_on_tiny_model() {
    for seed in 0..5 {
        let mut m = PcsctModel::<f64>::init(tiny(), seed).unwrap();
        m.randomize(seed + 100, 0.5);
        let seqs: Vec<Array2<f64>> = (0..4).map(|k| random_seq(seed * 10 + k, 3, 6)).collect();
        let params: Vec<[f64; PARAM_VECTOR_LEN]> =
            (0..2).map(|k| vectorize(&sample_spec(seed * 3 + k, None))).collect();
        let point = m.flatten();
        let err = gradcheck(
            |p| {
                let mut mm = m.clone();
                mm.assign_flat(p);
                let batch: Vec<BatchItem<'_, f64>> = (0..2)
                    .map(|i| BatchItem {
                        clean: seqs[2 * i].view(),
                        perturbed: seqs[2 * i + 1].view(),
                        params: params[i],
                        clean_params: if i == 0 { params[i] } else { [0.0; PARAM_VECTOR_LEN] },
                    })
                    .collect();
                let (loss, g) = loss_and_grads(&mm, &batch, 0.1).unwrap();
                (loss, g.flatten())
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pckp");
    let mut m = PcsctModel::<f32>::init(tiny(), 5).unwrap();
    m.randomize(5, 0.3);
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, m);
    let mut missing = m.to_checkpoint();
    missing.retain(|t| t.name != "meta.config");
    assert!(PcsctModel::<f32>::from_checkpoint(&missing).is_err());
}

#[test]
fn cast_preserves_values() {
    let m = PcsctModel::<f32>::init(tiny(), 6).unwrap();
    let back: PcsctModel<f32> = m.cast::<f64>().cast();
    assert_eq!(back, m);
}

#[test]
fn embed_is_deterministic_and_null_conditioned() {
    let mut m = PcsctModel::<f32>::init(tiny(), 7).unwrap();
    m.randomize(7, 0.3);
    let e = EmbeddingSequence::new(random_seq(7, 5, 6).mapv(|v| v as f32), 50.0).unwrap();
    let a = embed_pamt(&e, &m, None).unwrap();
    let b = embed_pamt(&e, &m, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.dim(), 5);
    let c = m.condition(&sample_spec(3, None));
    let d = embed_pamt(&e, &m, Some(&c)).unwrap();
    assert_ne!(a, d);
    let _: Array1<f32> = c.0;
}


