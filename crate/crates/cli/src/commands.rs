use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use clap::Args;
use pamt::adversarial::{
    adversarial_train, attack as run_attack, defense_experiment, dpamt_quantile, split_corpus, AttackConfig,
    AttackFamily, Pipeline, RobustnessReport,
};
use pamt::audio::{read_wav, synth_corpus, write_wav, AudioClip, LabeledClip};
use pamt::embedding::{read_embeddings, write_embeddings, EmbeddingSequence, ToyEncoder};
use pamt::experiment::{encode_dataset, metric_table, train_on_dataset};
use pamt::metrics::{
    build_dataset, frechet_distance, gaussian_stats, pamt_pooled, split_references, EvalDataset,
    JudgeValidator, ScoreRecord,
};
use pamt::pcsct::{
    embed_pamt, load_model, save_model, train as train_model, EmbeddingItem, EmbeddingSource, PcsctModel,
    TrainOutcome, Validator,
};
use pamt::perturb::{apply, sample_spec, Perturbation, PerturbationKind, PerturbationSpec};
use pamt::rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::{
    create_dir, csv_reader, files_with_ext, read_corpus, stem, write_corpus, write_csv, write_json, Provenance,
};
use crate::{CliError, Global};

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    v.as_deref()
        .ok_or_else(|| CliError::Validation(format!("{flag} is required")))
}

fn encoder(cfg: &RunConfig) -> ToyEncoder {
    ToyEncoder::new(cfg.corpus.encoder_seed, cfg.corpus.sample_rate_hz)
}

fn runtime(msg: String) -> CliError {
    CliError::Runtime(anyhow!(msg))
}

pub fn synth(cfg: &RunConfig, g: &Global) -> Result<(), CliError> {
    let out = required(&g.out, "--out")?;
    let corpus = synth_corpus(&cfg.corpus.corpus_config(), cfg.seed)?;
    write_corpus(out, &corpus, &Provenance::new(cfg, "synth"))?;
    println!("wrote {} clips to {}", corpus.len(), out.display());
    Ok(())
}

#[derive(Args)]
pub struct PerturbArgs {
    /// Input WAV.
    input: PathBuf,
    /// Output WAV; the spec is written next to it with a `.json` extension.
    output: PathBuf,
    /// l2 | linf | bark | pitch | speed | drc (random when absent).
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    eps_rel: Option<f64>,
    #[arg(long)]
    eta_rel: Option<f64>,
    #[arg(long)]
    band: Option<usize>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    semitones: Option<f64>,
    #[arg(long)]
    factor: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    threshold_dbfs: Option<f64>,
    #[arg(long)]
    ratio: Option<f64>,
}

impl PerturbArgs {
    fn spec(&self, cfg: &RunConfig) -> Result<PerturbationSpec, CliError> {
        let kind = match &self.kind {
            Some(k) => Some(k.parse::<PerturbationKind>()?),
            None => cfg.perturb.kind,
        };
        let mut spec = sample_spec(cfg.seed, kind);
        let mut used = Vec::new();
        let mut take = |name: &'static str, v: Option<f64>, slot: &mut f64| {
            if let Some(v) = v {
                *slot = v;
                used.push(name);
            }
        };
        match &mut spec.perturbation {
            Perturbation::L2Noise { eps_rel } => take("eps-rel", self.eps_rel, eps_rel),
            Perturbation::LInfNoise { eta_rel } => take("eta-rel", self.eta_rel, eta_rel),
            Perturbation::BarkBandNoise { band_index, scale } => {
                take("scale", self.scale, scale);
                if let Some(b) = self.band {
                    *band_index = b;
                    used.push("band");
                }
            }
            Perturbation::PitchShift { semitones } => take("semitones", self.semitones, semitones),
            Perturbation::SpeedChange { factor } => take("factor", self.factor, factor),
            Perturbation::DynRangeCompression { threshold_dbfs, ratio } => {
                take("threshold-dbfs", self.threshold_dbfs, threshold_dbfs);
                take("ratio", self.ratio, ratio);
            }
        }
        let given = [
            ("eps-rel", self.eps_rel.is_some()),
            ("eta-rel", self.eta_rel.is_some()),
            ("band", self.band.is_some()),
            ("scale", self.scale.is_some()),
            ("semitones", self.semitones.is_some()),
            ("factor", self.factor.is_some()),
            ("threshold-dbfs", self.threshold_dbfs.is_some()),
            ("ratio", self.ratio.is_some()),
        ];
        if let Some((name, _)) = given.iter().find(|(n, g)| *g && !used.contains(n)) {
            return Err(CliError::Validation(format!(
                "--{name} does not apply to {}",
                spec.kind().name()
            )));
        }
        spec.validate()?;
        Ok(spec)
    }
}

pub fn perturb(cfg: &RunConfig, _g: &Global, a: PerturbArgs) -> Result<(), CliError> {
    let spec = a.spec(cfg)?;
    let clip = read_wav(&a.input)?;
    let out = apply(&spec, &clip)?;
    write_wav(&out, &a.output)?;
    let sidecar = a.output.with_extension("json");
    write_json(&sidecar, &Provenance::new(cfg, "perturb"), "spec", &spec)?;
    println!("{} -> {} ({})", a.input.display(), a.output.display(), spec.kind().name());
    Ok(())
}

#[derive(Args)]
pub struct EmbedArgs {
    /// A WAV file or a directory (a `synth` corpus or any WAV files).
    input: PathBuf,
    /// Project through a trained model (NULL conditioning) instead of writing encoder output.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also write six judged perturbed versions per clip and `scores.csv`.
    #[arg(long)]
    versions: bool,
}

fn load_clips(input: &Path) -> Result<Vec<LabeledClip>, CliError> {
    if input.is_dir() {
        if input.join(crate::output::LABELS_FILE).exists() {
            return read_corpus(input);
        }
        let files = files_with_ext(input, "wav")?;
        if files.is_empty() {
            return Err(CliError::Validation(format!("no WAV files in {}", input.display())));
        }
        files
            .iter()
            .map(|p| {
                Ok(LabeledClip {
                    id: stem(p)?,
                    label: 0,
                    clip: read_wav(p)?,
                })
            })
            .collect()
    } else {
        Ok(vec![LabeledClip {
            id: stem(input)?,
            label: 0,
            clip: read_wav(input)?,
        }])
    }
}

/// Scores CSV row: `clip_id, kind, params_json, score_2afc, score_mos`.
#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    clip_id: String,
    kind: String,
    params_json: String,
    score_2afc: u8,
    score_mos: Option<f64>,
}

fn score_rows(records: &[ScoreRecord]) -> Vec<ScoreRow> {
    records
        .iter()
        .map(|r| {
            let v = serde_json::to_value(r.spec.perturbation).expect("spec serializes");
            ScoreRow {
                clip_id: r.clip_id.clone(),
                kind: r.spec.kind().name().to_string(),
                params_json: v["params"].to_string(),
                score_2afc: r.score_2afc,
                score_mos: r.score_mos,
            }
        })
        .collect()
}

fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, CliError> {
    let mut out = Vec::new();
    for (i, row) in csv_reader(path)?.deserialize::<ScoreRow>().enumerate() {
        let row = row.map_err(|e| CliError::Validation(format!("scores row {}: {e}", i + 1)))?;
        let kind: PerturbationKind = row.kind.parse()?;
        let params: serde_json::Value = serde_json::from_str(&row.params_json)
            .map_err(|e| CliError::Validation(format!("scores row {}: params_json: {e}", i + 1)))?;
        let tagged = serde_json::json!({ "kind": kind, "params": params });
        let perturbation: Perturbation = serde_json::from_value(tagged)
            .map_err(|e| CliError::Validation(format!("scores row {}: params_json: {e}", i + 1)))?;
        if let Some(m) = row.score_mos {
            if !(1.0..=5.0).contains(&m) {
                return Err(CliError::Validation(format!("scores row {}: score_mos {m} outside [1, 5]", i + 1)));
            }
        }
        out.push(ScoreRecord {
            clip_id: row.clip_id,
            spec: PerturbationSpec { perturbation, seed: 0 },
            score_2afc: row.score_2afc,
            score_mos: row.score_mos,
        });
    }
    Ok(out)
}

fn dataset(cfg: &RunConfig, g: &Global, corpus: Vec<LabeledClip>) -> Result<EvalDataset, CliError> {
    let mut ds = build_dataset(corpus, &cfg.eval.judge, cfg.seed, cfg.eval.test_frac)?;
    if let Some(p) = &g.scores_csv {
        ds.substitute_scores(&read_scores(p)?)?;
    }
    Ok(ds)
}

pub fn embed(cfg: &RunConfig, g: &Global, a: EmbedArgs) -> Result<(), CliError> {
    let out = required(&g.out, "--out")?;
    create_dir(out)?;
    let enc = encoder(cfg);
    let model = a.model.as_deref().map(load_model).transpose()?;
    let write = |id: &str, clip: &AudioClip| -> Result<(), CliError> {
        let e = enc.encode(clip)?;
        let e = match &model {
            Some(m) => embed_pamt(&e, m, None)?,
            None => e,
        };
        write_embeddings(&e, out.join(format!("{id}.pemb")))?;
        Ok(())
    };
    let clips = load_clips(&a.input)?;
    let prov = Provenance::new(cfg, "embed");
    let n = clips.len();
    if a.versions {
        let ds = dataset(cfg, g, clips)?;
        for r in &ds.references {
            write(&r.id, &r.clip)?;
        }
        for v in &ds.versions {
            write(&v.sample_id, &v.clip)?;
            write_json(&out.join(format!("{}.json", v.sample_id)), &prov, "spec", &v.spec)?;
        }
        write_csv(&out.join("scores.csv"), &prov, &[], &score_rows(&ds.score_records()))?;
    } else {
        for c in &clips {
            write(&c.id, &c.clip)?;
        }
    }
    write_json(&out.join("provenance.json"), &prov, "clips", &n)?;
    println!("wrote embeddings for {n} clips to {}", out.display());
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// A `synth` corpus directory (alternative to --embeddings-dir).
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Serialize)]
struct LogCsvRow {
    step: usize,
    lr: f64,
    loss: f64,
    epoch: usize,
    val_spearman: Option<f64>,
}

#[derive(Serialize)]
struct TrainSummary {
    epochs_run: usize,
    best_epoch: usize,
    best_score: Option<f64>,
    stopped_early: bool,
}

/// Reference and version embeddings read from an `embed --versions` directory.
fn read_embedding_items(dir: &Path, input_dim: usize) -> Result<(Vec<String>, Vec<EmbeddingItem>), CliError> {
    let files = files_with_ext(dir, "pemb")?;
    let mut refs: BTreeMap<String, EmbeddingSequence> = BTreeMap::new();
    let mut versions: BTreeMap<String, Vec<(String, PathBuf)>> = BTreeMap::new();
    for f in &files {
        let s = stem(f)?;
        match s.rsplit_once(".pert") {
            Some((base, _)) => versions.entry(base.to_string()).or_default().push((s.clone(), f.clone())),
            None => {
                let seq = read_embeddings(f)?;
                if seq.dim() != input_dim {
                    return Err(CliError::Validation(format!("{s}.pemb has dimension {}, model expects {input_dim}", seq.dim())));
                }
                refs.insert(s, seq);
            }
        }
    }
    if refs.is_empty() {
        return Err(CliError::Validation(format!("no reference embeddings in {}", dir.display())));
    }
    let mut ids = Vec::new();
    let mut items = Vec::new();
    for (id, clean) in refs {
        let mut perturbed = Vec::new();
        for (vid, path) in versions.remove(&id).unwrap_or_default() {
            let seq = read_embeddings(&path)?;
            if seq.dim() != input_dim {
                return Err(CliError::Validation(format!("{vid}.pemb has dimension {}, model expects {input_dim}", seq.dim())));
            }
            let side = dir.join(format!("{vid}.json"));
            let text = std::fs::read_to_string(&side)
                .map_err(|e| CliError::Validation(format!("missing spec sidecar {}: {e}", side.display())))?;
            let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Validation(e.to_string()))?;
            let spec: PerturbationSpec = serde_json::from_value(doc["spec"].clone())
                .map_err(|e| CliError::Validation(format!("{}: {e}", side.display())))?;
            perturbed.push((seq, spec));
        }
        if perturbed.is_empty() {
            return Err(CliError::Validation(format!("reference {id} has no perturbed versions")));
        }
        ids.push(id);
        items.push(EmbeddingItem { clean, perturbed });
    }
    Ok((ids, items))
}

fn train_from_embeddings(cfg: &RunConfig, g: &Global, dir: &Path) -> Result<TrainOutcome, CliError> {
    let (ids, items) = read_embedding_items(dir, cfg.model.input_dim)?;
    let model = PcsctModel::<f32>::init(cfg.model, rng::derive_seed(cfg.train.seed, rng::tag("init")))?;
    let Some(scores_path) = &g.scores_csv else {
        let source = EmbeddingSource::new(items)?;
        return Ok(train_model(model, &source, &cfg.train, None)?);
    };
    let scores = read_scores(scores_path)?;
    let is_val = split_references(ids.len(), cfg.eval.val_frac, rng::derive_seed(cfg.train.seed, rng::tag("val")));
    let mut fit = Vec::new();
    let mut val_refs = Vec::new();
    let mut val_versions = Vec::new();
    let mut val_scores = Vec::new();
    for ((id, item), v) in ids.iter().zip(items).zip(is_val) {
        if !v {
            fit.push(item);
            continue;
        }
        let r = val_refs.len();
        val_refs.push(item.clean.data().to_owned());
        for (seq, spec) in &item.perturbed {
            let s = scores
                .iter()
                .find(|s| &s.clip_id == id && s.spec.kind() == spec.kind())
                .ok_or_else(|| CliError::Validation(format!("no score for clip '{id}', kind {}", spec.kind().name())))?;
            val_versions.push((r, seq.data().to_owned()));
            val_scores.push(s.score_2afc as f64);
        }
    }
    let mut validator = JudgeValidator::new(val_refs, val_versions, val_scores)?;
    let source = EmbeddingSource::new(fit)?;
    Ok(train_model(model, &source, &cfg.train, Some(&mut validator as &mut dyn Validator))?)
}

pub fn train(cfg: &RunConfig, g: &Global, a: TrainArgs) -> Result<(), CliError> {
    let out = required(&g.out, "--out")?;
    let outcome = match (&a.corpus, &g.embeddings_dir) {
        (Some(_), Some(_)) => {
            return Err(CliError::Validation("give either --corpus or --embeddings-dir, not both".into()))
        }
        (None, None) => return Err(CliError::Validation("--corpus or --embeddings-dir is required".into())),
        (Some(dir), None) => {
            let enc = encoder(cfg);
            let ds = dataset(cfg, g, read_corpus(dir)?)?;
            let encoded = encode_dataset(&ds, &enc)?;
            train_on_dataset(&ds, &encoded, &enc, cfg.model, &cfg.train, cfg.eval.val_frac)?
        }
        (None, Some(dir)) => train_from_embeddings(cfg, g, dir)?,
    };
    create_dir(out)?;
    save_model(&outcome.model, out.join("model.pckp"))?;
    let prov = Provenance::new(cfg, "train");
    let rows: Vec<LogCsvRow> = outcome
        .log
        .iter()
        .map(|r| LogCsvRow {
            step: r.step,
            lr: r.lr,
            loss: r.loss,
            epoch: r.epoch,
            val_spearman: r.val_spearman,
        })
        .collect();
    write_csv(&out.join("train_log.csv"), &prov, &[], &rows)?;
    let summary = TrainSummary {
        epochs_run: outcome.epochs_run,
        best_epoch: outcome.best_epoch,
        best_score: outcome.best_score,
        stopped_early: outcome.stopped_early,
    };
    write_json(&out.join("train_summary.json"), &prov, "summary", &summary)?;
    println!(
        "trained {} epochs (best epoch {}), model in {}",
        outcome.epochs_run,
        outcome.best_epoch,
        out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// A `synth` corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Trained model checkpoint.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Serialize)]
struct CorrelationRow {
    metric_name: &'static str,
    spearman: f64,
    f1: f64,
}

#[derive(Serialize)]
struct KindRow {
    metric_name: &'static str,
    kind: &'static str,
    spearman: Option<f64>,
}

const EVAL_NOTES: [&str; 3] = [
    "spearman and f1 on the test split; f1 positives are scores above the median of all scores, threshold swept on the train split",
    "SNR and LSD trim both clips to the shorter length; FAD is over frame embeddings of reference vs version",
    "correlations pool all perturbation kinds; correlation_by_kind.csv breaks them down",
];

pub fn eval_metrics(cfg: &RunConfig, g: &Global, a: EvalArgs) -> Result<(), CliError> {
    let out = required(&g.out, "--out")?;
    let model = load_model(&a.model)?;
    let enc = encoder(cfg);
    let ds = dataset(cfg, g, read_corpus(&a.corpus)?)?;
    let encoded = encode_dataset(&ds, &enc)?;
    let table = metric_table(&ds, &encoded, &model)?;
    create_dir(out)?;
    let prov = Provenance::new(cfg, "eval-metrics");
    let rows: Vec<CorrelationRow> = table
        .iter()
        .map(|r| CorrelationRow {
            metric_name: r.name,
            spearman: r.result.spearman,
            f1: r.result.f1_percent,
        })
        .collect();
    write_csv(&out.join("correlation.csv"), &prov, &EVAL_NOTES, &rows)?;
    let kinds: Vec<KindRow> = table
        .iter()
        .flat_map(|r| {
            r.per_kind.iter().map(|(k, s)| KindRow {
                metric_name: r.name,
                kind: k.name(),
                spearman: *s,
            })
        })
        .collect();
    write_csv(&out.join("correlation_by_kind.csv"), &prov, &[], &kinds)?;
    write_csv(&out.join("scores.csv"), &prov, &[], &score_rows(&ds.score_records()))?;
    println!("{:<20} {:>9} {:>7}", "metric", "spearman", "f1");
    for r in &rows {
        println!("{:<20} {:>9.4} {:>7.2}", r.metric_name, r.spearman, r.f1);
    }
    Ok(())
}

#[derive(Args)]
pub struct FadArgs {
    /// First set: a directory of WAV or `.pemb` files.
    a: PathBuf,
    /// Second set, same layout.
    b: PathBuf,
    /// Use NULL-conditioned PAMT embeddings of this model.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn pooled_set(dir: &Path, enc: &ToyEncoder, model: Option<&PcsctModel<f32>>) -> Result<Vec<Vec<f64>>, CliError> {
    let pembs = files_with_ext(dir, "pemb")?;
    let seqs: Vec<EmbeddingSequence> = if pembs.is_empty() {
        let wavs = files_with_ext(dir, "wav")?;
        wavs.iter()
            .map(|p| Ok(enc.encode(&read_wav(p)?)?))
            .collect::<Result<_, CliError>>()?
    } else {
        pembs.iter().map(|p| Ok(read_embeddings(p)?)).collect::<Result<_, CliError>>()?
    };
    if seqs.len() < 2 {
        return Err(CliError::Validation(format!("{} holds fewer than 2 clips", dir.display())));
    }
    seqs.iter()
        .map(|s| match model {
            Some(m) => Ok(pamt_pooled(s, m)?.to_vec()),
            None => Ok(s.pooled()),
        })
        .collect()
}

pub fn fad(cfg: &RunConfig, _g: &Global, a: FadArgs) -> Result<(), CliError> {
    let enc = encoder(cfg);
    let model = a.model.as_deref().map(load_model).transpose()?;
    let x = pooled_set(&a.a, &enc, model.as_ref())?;
    let y = pooled_set(&a.b, &enc, model.as_ref())?;
    let d = frechet_distance(&gaussian_stats(&x)?, &gaussian_stats(&y)?)?;
    println!("{d}");
    Ok(())
}

#[derive(Args)]
pub struct AttackArgs {
    /// A `synth` corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Trained model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// pgd_linf_audio | pgd_dpamt | bark_constrained
    #[arg(long)]
    family: String,
    /// Budget in the family's units; defaults come from the attack section.
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Serialize)]
struct ConstraintRow {
    clip_id: String,
    label: usize,
    family: &'static str,
    budget: f64,
    constraint: f64,
    limit: f64,
    satisfied: bool,
    clean_correct: bool,
    adversarial_correct: bool,
}

pub fn attack(cfg: &RunConfig, g: &Global, a: AttackArgs) -> Result<(), CliError> {
    let out = required(&g.out, "--out")?;
    let family: AttackFamily = a.family.parse()?;
    let model = load_model(&a.model)?;
    let enc = encoder(cfg);
    let pipe = Pipeline {
        encoder: &enc,
        model: &model,
    };
    let corpus = read_corpus(&a.corpus)?;
    let (train, test) = split_corpus(&corpus, cfg.attack.test_frac, cfg.attack.seed);
    let budget = match (a.budget, family) {
        (Some(b), _) => b,
        (None, AttackFamily::PgdLinfAudio) => cfg.attack.linf_eta,
        (None, AttackFamily::BarkConstrained) => cfg.attack.bark_budget,
        (None, AttackFamily::PgdDpamt) => {
            let clips: Vec<&AudioClip> = train.iter().map(|c| &c.clip).collect();
            dpamt_quantile(&clips, &pipe, cfg.attack.dpamt_quantile, rng::derive_seed(cfg.attack.seed, rng::tag("eps")))?
        }
    };
    let acfg = AttackConfig {
        steps: cfg.attack.steps,
        ..AttackConfig::new(family, budget)
    };
    acfg.validate()?;
    let (clf, _) = adversarial_train(&train, &pipe, &[], &cfg.attack.standard)?;
    create_dir(out)?;
    let mut rows = Vec::new();
    for c in &test {
        let o = run_attack(&c.clip, c.label, &clf, &pipe, &acfg)?;
        write_wav(&o.clip, out.join(format!("{}.adv.wav", c.id)))?;
        rows.push(ConstraintRow {
            clip_id: c.id.clone(),
            label: c.label,
            family: family.name(),
            budget,
            constraint: o.constraint,
            limit: o.limit,
            satisfied: o.satisfied(),
            clean_correct: clf.predict(&pipe.pooled(&c.clip)?) == c.label,
            adversarial_correct: clf.predict(&pipe.pooled(&o.clip)?) == c.label,
        });
    }
    write_csv(&out.join("constraint_report.csv"), &Provenance::new(cfg, "attack"), &[], &rows)?;
    let ok = rows.iter().filter(|r| r.satisfied).count();
    let robust = rows.iter().filter(|r| r.adversarial_correct).count();
    println!(
        "{}: {ok}/{} within budget, robust accuracy {:.3}",
        family.name(),
        rows.len(),
        robust as f64 / rows.len() as f64
    );
    if ok != rows.len() {
        return Err(runtime(format!("{} adversarial examples violate their budget", rows.len() - ok)));
    }
    Ok(())
}

#[derive(Args)]
pub struct DefendArgs {
    /// A `synth` corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Trained model checkpoint.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Serialize)]
struct RobustnessRow {
    method: &'static str,
    clean_acc: f64,
    pgd_linf_audio: f64,
    pgd_dpamt: f64,
    bark_constrained: f64,
    union_acc: f64,
}

fn robustness_row(method: &'static str, r: &RobustnessReport) -> RobustnessRow {
    let acc = |f: AttackFamily| {
        r.per_family
            .iter()
            .find(|(g, _)| *g == f)
            .map_or(f64::NAN, |(_, a)| *a)
    };
    RobustnessRow {
        method,
        clean_acc: r.clean_accuracy,
        pgd_linf_audio: acc(AttackFamily::PgdLinfAudio),
        pgd_dpamt: acc(AttackFamily::PgdDpamt),
        bark_constrained: acc(AttackFamily::BarkConstrained),
        union_acc: r.union_accuracy,
    }
}

pub fn defend(cfg: &RunConfig, g: &Global, a: DefendArgs) -> Result<(), CliError> {
    let out = required(&g.out, "--out")?;
    let model = load_model(&a.model)?;
    let enc = encoder(cfg);
    let pipe = Pipeline {
        encoder: &enc,
        model: &model,
    };
    let corpus = read_corpus(&a.corpus)?;
    let report = defense_experiment(&corpus, &pipe, &cfg.attack)?;
    create_dir(out)?;
    let rows = vec![
        robustness_row("No Defense", &report.standard),
        robustness_row("PAMT AT", &report.adversarial),
    ];
    let note = format!("pgd_dpamt budget {}", report.dpamt_epsilon);
    write_csv(&out.join("robustness.csv"), &Provenance::new(cfg, "defend"), &[&note], &rows)?;
    for r in &rows {
        println!("{:<12} clean {:.3} union {:.3}", r.method, r.clean_acc, r.union_acc);
    }
    let violations = report.standard.violations + report.adversarial.violations;
    if violations > 0 {
        return Err(runtime(format!("{violations} adversarial examples violate their budget")));
    }
    Ok(())
}
