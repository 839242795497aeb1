use pamt::audio::{synth_corpus, AudioClip, CorpusConfig, LabeledClip};
use pamt::embedding::ToyEncoder;
use pamt::experiment::{encode_dataset, metric_table, METRIC_NAMES};
use pamt::metrics::{build_dataset, JudgeConfig};
use pamt::nn::ParamSet;
use pamt::pcsct::{train, AudioSource, ConstantValidator, PcsctConfig, PcsctModel, TrainConfig};

fn small_model() -> PcsctConfig {
    PcsctConfig {
        d_model: 16,
        heads: 2,
        ffn_dim: 32,
        layers: 1,
        output_dim: 8,
        cond_dim: 4,
        ppe_hidden: 8,
        ..Default::default()
    }
}

fn corpus() -> Vec<LabeledClip> {
    let cfg = CorpusConfig {
        clips_per_class: 4,
        clip_seconds: 0.25,
        ..Default::default()
    };
    synth_corpus(&cfg, 2).unwrap()
}

fn run(cfg: &TrainConfig, validator: Option<&mut ConstantValidator>) -> pamt::pcsct::TrainOutcome {
    let corpus = corpus();
    let enc = ToyEncoder::new(0, 16_000);
    let clips: Vec<&AudioClip> = corpus.iter().map(|c| &c.clip).collect();
    let src = AudioSource::new(clips, &enc).unwrap();
    let model = PcsctModel::<f32>::init(small_model(), 3).unwrap();
    train(model, &src, cfg, validator.map(|v| v as _)).unwrap()
}

#[test]
fn loss_decreases_over_fifty_steps() {
    let cfg = TrainConfig {
        lr: 3e-3,
        batch_size: 8,
        max_epochs: 100,
        max_steps: Some(50),
        ..Default::default()
    };
    let out = run(&cfg, None);
    assert_eq!(out.log.len(), 50);
    let mean = |rows: &[pamt::pcsct::LogRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
    let (first, last) = (mean(&out.log[..10]), mean(&out.log[40..]));
    assert!(last < first, "first {first}, last {last}");
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainConfig {
        batch_size: 8,
        max_steps: Some(6),
        ..Default::default()
    };
    let (a, b) = (run(&cfg, None), run(&cfg, None));
    assert_eq!(a.model.flatten(), b.model.flatten());
    assert_eq!(a.log, b.log);
}

#[test]
fn patience_one_stops_after_two_epochs() {
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 10,
        patience: 1,
        ..Default::default()
    };
    let mut v = ConstantValidator(0.5);
    let out = run(&cfg, Some(&mut v));
    assert_eq!(out.epochs_run, 2);
    assert_eq!(out.best_epoch, 1);
    assert!(out.stopped_early);
    assert_eq!(out.best_score, Some(0.5));
}

#[test]
fn metric_table_covers_every_metric() {
    let enc = ToyEncoder::new(0, 16_000);
    let ds = build_dataset(corpus(), &JudgeConfig::noiseless(), 4, 0.5).unwrap();
    let encoded = encode_dataset(&ds, &enc).unwrap();
    let model = PcsctModel::<f32>::init(small_model(), 1).unwrap();
    let table = metric_table(&ds, &encoded, &model).unwrap();
    let names: Vec<&str> = table.iter().map(|r| r.name).collect();
    assert_eq!(names, METRIC_NAMES);
    for row in &table {
        assert!(row.result.spearman.abs() <= 1.0, "{}", row.name);
        assert!((0.0..=100.0).contains(&row.result.f1_percent), "{}", row.name);
        assert_eq!(row.per_kind.len(), 6);
    }
}
