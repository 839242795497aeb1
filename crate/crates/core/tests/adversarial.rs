use ndarray::Array1;
use pamt::adversarial::*;
use pamt::audio::{synth_corpus, AudioClip, CorpusConfig, LabeledClip};
use pamt::embedding::ToyEncoder;
use pamt::nn::{gradcheck, ParamSet};
use pamt::pcsct::{PcsctConfig, PcsctModel};
use rand::Rng;

fn tiny_model(seed: u64) -> PcsctModel<f32> {
    let cfg = PcsctConfig {
        input_dim: 768,
        d_model: 8,
        heads: 2,
        ffn_dim: 12,
        layers: 1,
        output_dim: 6,
        cond_dim: 4,
        ppe_hidden: 5,
    };
    let mut m = PcsctModel::<f32>::init(cfg, seed).unwrap();
    m.randomize(seed + 1, 0.05);
    m
}

fn corpus(per_class: usize) -> Vec<LabeledClip> {
    let cfg = CorpusConfig {
        classes: 4,
        clips_per_class: per_class,
        clip_seconds: 0.25,
        ..Default::default()
    };
    synth_corpus(&cfg, 11).unwrap()
}

fn all_families(eps: f64) -> Vec<AttackConfig> {
    vec![
        AttackConfig { steps: 4, ..AttackConfig::new(AttackFamily::PgdLinfAudio, 0.01) },
        AttackConfig { steps: 4, ..AttackConfig::new(AttackFamily::PgdDpamt, eps) },
        AttackConfig { steps: 4, ..AttackConfig::new(AttackFamily::BarkConstrained, 0.5) },
    ]
}

#[test]
fn family_names_round_trip() {
    for f in AttackFamily::ALL {
        assert_eq!(f.name().parse::<AttackFamily>().unwrap(), f);
    }
    assert!("pgd_l2".parse::<AttackFamily>().is_err());
}

#[test]
fn classifier_cross_entropy_gradient() {
    let clf = Classifier::new(6, 4, 3).unwrap();
    let mut r = pamt::rng::stream(5, 0);
    let p = Array1::from_shape_fn(6, |_| r.gen_range(-1.0..1.0));
    let point: Vec<f64> = clf.w.iter().chain(clf.b.iter()).copied().collect();
    let err = gradcheck(
        |x| {
            let mut c = clf.clone();
            let (w, b) = x.split_at(24);
            c.w.iter_mut().zip(w).for_each(|(d, s)| *d = *s);
            c.b.iter_mut().zip(b).for_each(|(d, s)| *d = *s);
            let (loss, dl) = c.cross_entropy(&p, 2);
            let mut g: Vec<f64> = Vec::new();
            for i in 0..6 {
                for k in 0..4 {
                    g.push(p[i] * dl[k]);
                }
            }
            g.extend(dl.iter());
            (loss, g)
        },
        &point,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn waveform_gradient_matches_directional_difference() {
    let enc = ToyEncoder::new(1, 16_000);
    let model = tiny_model(2);
    let pipe = Pipeline { encoder: &enc, model: &model };
    let clf = Classifier::new(6, 4, 9).unwrap();
    let clip = &corpus(1)[1].clip;
    let (_, g) = pipe.loss_and_grad(clip, 1, &clf).unwrap();
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(gn > 0.0);
    // directional derivative along the unit gradient equals its norm
    let h = 1e-5;
    let shift = |s: f64| {
        let x: Vec<f64> = clip.samples().iter().zip(&g).map(|(a, d)| a + s * h * d / gn).collect();
        pipe.loss_and_grad(&AudioClip::new(x, clip.sample_rate_hz()).unwrap(), 1, &clf).unwrap().0
    };
    let numeric = (shift(1.0) - shift(-1.0)) / (2.0 * h);
    let rel = (numeric - gn).abs() / gn;
    assert!(rel < 1e-2, "numeric {numeric} analytic {gn}");
}

#[test]
fn zero_budget_returns_input() {
    let enc = ToyEncoder::new(1, 16_000);
    let model = tiny_model(2);
    let pipe = Pipeline { encoder: &enc, model: &model };
    let clf = Classifier::new(6, 4, 9).unwrap();
    let clip = &corpus(1)[2];
    for mut a in all_families(0.1) {
        a.budget = 0.0;
        let out = attack(&clip.clip, clip.label, &clf, &pipe, &a).unwrap();
        assert_eq!(out.clip, clip.clip);
        assert!(out.satisfied());
    }
}

#[test]
fn attacks_respect_constraints_and_raise_loss() {
    let enc = ToyEncoder::new(1, 16_000);
    let model = tiny_model(2);
    let pipe = Pipeline { encoder: &enc, model: &model };
    let data = corpus(2);
    let (clf, _) = adversarial_train(&data, &pipe, &[], &ClassifierTrainConfig { epochs: 5, ..Default::default() }).unwrap();
    let clips: Vec<_> = data.iter().map(|c| &c.clip).collect();
    let eps = dpamt_quantile(&clips, &pipe, 0.25, 1).unwrap();
    assert!(eps > 0.0);
    for c in &data {
        for a in all_families(eps) {
            let out = attack(&c.clip, c.label, &clf, &pipe, &a).unwrap();
            assert!(out.satisfied(), "{} {} > {}", a.family, out.constraint, out.limit);
            assert!(out.clip.samples().iter().all(|v| v.abs() <= 1.0));
            assert!(out.adversarial_loss >= out.clean_loss - 1e-9, "{}", a.family);
            if a.family == AttackFamily::PgdDpamt {
                assert!((pipe.d_pamt(&out.clip, &c.clip).unwrap() - out.constraint).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn bark_attack_stays_in_band() {
    let enc = ToyEncoder::new(1, 16_000);
    let model = tiny_model(2);
    let pipe = Pipeline { encoder: &enc, model: &model };
    let clf = Classifier::new(6, 4, 9).unwrap();
    let clip = &corpus(1)[0];
    let band = loudest_bark_band(&clip.clip);
    let cfg = AttackConfig { steps: 3, ..AttackConfig::new(AttackFamily::BarkConstrained, 0.2) };
    let out = attack(&clip.clip, clip.label, &clf, &pipe, &cfg).unwrap();
    let delta: Vec<f64> = out.clip.samples().iter().zip(clip.clip.samples()).map(|(a, b)| a - b).collect();
    let (lo, hi) = pamt::perturb::bark_band_edges(16_000)[band];
    let total: f64 = delta.iter().map(|d| d * d).sum();
    let inside = pamt::dsp::band_energy(&delta, 16_000.0, lo, hi);
    assert!(total > 0.0);
    assert!(inside / total > 0.99, "{}", inside / total);
}

#[test]
fn attacks_are_deterministic() {
    let enc = ToyEncoder::new(1, 16_000);
    let model = tiny_model(2);
    let pipe = Pipeline { encoder: &enc, model: &model };
    let clf = Classifier::new(6, 4, 9).unwrap();
    let clip = &corpus(1)[3];
    for a in all_families(0.05) {
        let x = attack(&clip.clip, clip.label, &clf, &pipe, &a).unwrap();
        let y = attack(&clip.clip, clip.label, &clf, &pipe, &a).unwrap();
        assert_eq!(x.clip, y.clip);
    }
}

#[test]
fn adversarial_training_leaves_embedding_model_untouched() {
    let enc = ToyEncoder::new(1, 16_000);
    let model = tiny_model(2);
    let before = model.to_checkpoint();
    let pipe = Pipeline { encoder: &enc, model: &model };
    let data = corpus(2);
    let a = AttackConfig { steps: 2, ..AttackConfig::new(AttackFamily::PgdLinfAudio, 0.01) };
    let cfg = ClassifierTrainConfig { epochs: 2, batch_size: 4, ..Default::default() };
    let (clf, log) = adversarial_train(&data, &pipe, &[a], &cfg).unwrap();
    assert_eq!(model.to_checkpoint(), before);
    assert_eq!(log.len(), 4);
    assert!(clf.all_finite());
}

#[test]
fn zero_step_attacks_reduce_to_standard_training() {
    let enc = ToyEncoder::new(1, 16_000);
    let model = tiny_model(2);
    let pipe = Pipeline { encoder: &enc, model: &model };
    let data = corpus(2);
    let cfg = ClassifierTrainConfig { epochs: 3, batch_size: 4, ..Default::default() };
    let a = AttackConfig { steps: 0, ..AttackConfig::new(AttackFamily::PgdDpamt, 0.1) };
    let (x, _) = adversarial_train(&data, &pipe, &[a], &cfg).unwrap();
    let (y, _) = adversarial_train(&data, &pipe, &[], &cfg).unwrap();
    assert_eq!(x, y);
}

#[test]
fn standard_training_fits_the_toy_task() {
    let enc = ToyEncoder::new(1, 16_000);
    let model = PcsctModel::<f32>::init(PcsctConfig::default(), 4).unwrap();
    let pipe = Pipeline { encoder: &enc, model: &model };
    let data = corpus(10);
    let (train, test): (Vec<_>, Vec<_>) = data.into_iter().enumerate().partition(|(i, _)| i % 5 != 0);
    let train: Vec<_> = train.into_iter().map(|x| x.1).collect();
    let test: Vec<_> = test.into_iter().map(|x| x.1).collect();
    let (clf, log) = adversarial_train(&train, &pipe, &[], &ClassifierTrainConfig::default()).unwrap();
    assert!(log.last().unwrap().loss < log[0].loss);
    let correct = test
        .iter()
        .filter(|c| clf.predict(&pipe.pooled(&c.clip).unwrap()) == c.label)
        .count();
    assert!(correct as f64 / test.len() as f64 >= 0.9, "{correct}/{}", test.len());
}

#[test]
fn union_accuracy_is_at_most_each_family() {
    let enc = ToyEncoder::new(1, 16_000);
    let model = tiny_model(2);
    let pipe = Pipeline { encoder: &enc, model: &model };
    let data = corpus(2);
    let (clf, _) = adversarial_train(&data, &pipe, &[], &ClassifierTrainConfig { epochs: 5, ..Default::default() }).unwrap();
    let r = union_robust_accuracy(&clf, &pipe, &data, &all_families(0.05)).unwrap();
    assert_eq!(r.per_family.len(), 3);
    assert_eq!(r.violations, 0);
    for (_, acc) in &r.per_family {
        assert!(r.union_accuracy <= *acc);
    }
    assert!(union_robust_accuracy(&clf, &pipe, &data, &[]).is_err());
}

#[test]
fn rejects_bad_configs() {
    let enc = ToyEncoder::new(1, 16_000);
    let model = tiny_model(2);
    let pipe = Pipeline { encoder: &enc, model: &model };
    let clf = Classifier::new(6, 4, 9).unwrap();
    let clip = &corpus(1)[0];
    let bad = AttackConfig::new(AttackFamily::PgdLinfAudio, -1.0);
    assert!(attack(&clip.clip, 0, &clf, &pipe, &bad).is_err());
    let band = AttackConfig { bark_band: Some(24), ..AttackConfig::new(AttackFamily::BarkConstrained, 0.5) };
    assert!(attack(&clip.clip, 0, &clf, &pipe, &band).is_err());
    let ok = AttackConfig::new(AttackFamily::PgdLinfAudio, 0.01);
    assert!(attack(&clip.clip, 7, &clf, &pipe, &ok).is_err());
    assert!(Classifier::new(6, 1, 0).is_err());
}
