//! Contrastive training loop with validation-driven early stopping.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::infonce;
use super::model::PcsctModel;
use crate::audio::AudioClip;
use crate::embedding::{EmbeddingSequence, ToyEncoder};
use crate::error::{Error, Result};
use crate::nn::{cosine_warmup_lr, AdamW, ParamSet, Real};
use crate::perturb::{apply, sample_spec, vectorize, PerturbationSpec, PARAM_VECTOR_LEN};
use crate::{par, rng};

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_frac: f64,
    pub temperature: f64,
    pub patience: usize,
    pub seed: u64,
    /// Hard cap on optimizer steps, mostly for smoke runs.
    pub max_steps: Option<usize>,
    pub clean_conditioning: CleanConditioning,
}

/// Conditioning of the unperturbed pass during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanConditioning {
    /// The pair's perturbation spec, same as the perturbed pass.
    #[default]
    Pair,
    /// The NULL vector, as used at inference.
    Null,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 32,
            max_epochs: 100,
            warmup_frac: 0.1,
            temperature: 0.1,
            patience: 10,
            seed: 0,
            max_steps: None,
            clean_conditioning: CleanConditioning::Pair,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("train.lr", "must be a finite non-negative number"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("train.weight_decay", "must be a finite non-negative number"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("train.batch_size", "contrastive batches need at least 2 items"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("train.max_epochs", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::invalid("train.warmup_frac", "must lie in [0, 1)"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("train.temperature", "must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("train.patience", "must be at least 1"));
        }
        Ok(())
    }
}

/// One clean/perturbed pair of encoder sequences with the spec that links them.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub clean: Array2<f32>,
    pub perturbed: Array2<f32>,
    pub spec: PerturbationSpec,
}

/// Supplies training pairs. `pair(i, seed)` must be a pure function of its arguments.
pub trait TrainingSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pair(&self, index: usize, seed: u64) -> Result<TrainingPair>;
}

/// Pairs generated on the fly: a fresh perturbation of each clip, both
/// versions encoded by the frozen toy encoder.
pub struct AudioSource<'a> {
    clips: Vec<&'a AudioClip>,
    encoder: &'a ToyEncoder,
    clean: Vec<Array2<f32>>,
}

impl<'a> AudioSource<'a> {
    pub fn new(clips: Vec<&'a AudioClip>, encoder: &'a ToyEncoder) -> Result<Self> {
        let clean = par::try_map(&clips, |c| encoder.encode(c).map(|e| e.data().to_owned()))?;
        Ok(Self { clips, encoder, clean })
    }
}

impl TrainingSource for AudioSource<'_> {
    fn len(&self) -> usize {
        self.clips.len()
    }

    fn pair(&self, index: usize, seed: u64) -> Result<TrainingPair> {
        let spec = sample_spec(seed, None);
        let perturbed = self.encoder.encode(&apply(&spec, self.clips[index])?)?;
        Ok(TrainingPair {
            clean: self.clean[index].clone(),
            perturbed: perturbed.data().to_owned(),
            spec,
        })
    }
}

/// A clip's precomputed clean sequence and its available perturbed versions.
#[derive(Debug, Clone)]
pub struct EmbeddingItem {
    pub clean: EmbeddingSequence,
    pub perturbed: Vec<(EmbeddingSequence, PerturbationSpec)>,
}

/// Pairs drawn from precomputed embeddings; each draw picks one of the
/// clip's perturbed versions.
pub struct EmbeddingSource {
    items: Vec<EmbeddingItem>,
}

impl EmbeddingSource {
    pub fn new(items: Vec<EmbeddingItem>) -> Result<Self> {
        for (i, item) in items.iter().enumerate() {
            if item.perturbed.is_empty() {
                return Err(Error::invalid(
                    "embeddings",
                    format!("item {i} has no perturbed versions"),
                ));
            }
        }
        Ok(Self { items })
    }
}

impl TrainingSource for EmbeddingSource {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn pair(&self, index: usize, seed: u64) -> Result<TrainingPair> {
        let item = &self.items[index];
        let k = (rng::derive_seed(seed, rng::tag("pick")) % item.perturbed.len() as u64) as usize;
        let (seq, spec) = &item.perturbed[k];
        Ok(TrainingPair {
            clean: item.clean.data().to_owned(),
            perturbed: seq.data().to_owned(),
            spec: spec.clone(),
        })
    }
}

/// Scores a model after each epoch; higher is better.
pub trait Validator {
    fn score(&mut self, model: &PcsctModel<f32>) -> Result<f64>;
}

/// A validator that always returns the same value.
pub struct ConstantValidator(pub f64);

impl Validator for ConstantValidator {
    fn score(&mut self, _: &PcsctModel<f32>) -> Result<f64> {
        Ok(self.0)
    }
}

/// Borrowed view of one batch item.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a, F> {
    pub clean: ArrayView2<'a, F>,
    pub perturbed: ArrayView2<'a, F>,
    /// Conditioning input of the perturbed pass.
    pub params: [f64; PARAM_VECTOR_LEN],
    /// Conditioning input of the clean pass.
    pub clean_params: [f64; PARAM_VECTOR_LEN],
}

/// Batch loss and parameter gradients. Per-item gradients are computed
/// concurrently and summed in batch order.
pub fn loss_and_grads<F: Real>(
    model: &PcsctModel<F>,
    batch: &[BatchItem<'_, F>],
    temperature: f64,
) -> Result<(f64, PcsctModel<F>)> {
    let forward = par::try_map(batch, |item| {
        let (c_clean, ppe_clean) = model.ppe_forward(&item.clean_params)?;
        let (c, ppe) = model.ppe_forward(&item.params)?;
        let (zc, cc) = model.forward_sequence(item.clean, &c_clean)?;
        let (zp, cp) = model.forward_sequence(item.perturbed, &c)?;
        Ok::<_, Error>((ppe_clean, PcsctModel::pooled(&zc), cc, PcsctModel::pooled(&zp), cp, ppe))
    })?;
    let d = model.config.output_dim;
    let pooled = |pick: fn(&_) -> &ndarray::Array1<F>| {
        let mut m = Array2::<f64>::zeros((batch.len(), d));
        for (mut row, f) in m.rows_mut().into_iter().zip(&forward) {
            row.assign(&pick(f).mapv(|v| v.as_f64()));
        }
        m
    };
    let orig = pooled(|f| &f.1);
    let pert = pooled(|f| &f.3);
    let out = infonce(&orig, &pert, temperature)?;

    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut total = model.zeros_like();
    for chunk in idx.chunks(par::threads().max(1)) {
        let grads = par::map(chunk, |&i| {
            let (ppe_clean, _, cc, _, cp, ppe) = &forward[i];
            let mut g = model.zeros_like();
            let spread = |row: ndarray::ArrayView1<'_, f64>, frames: usize| {
                let r = row.mapv(|v| F::of(v / frames as f64));
                r.insert_axis(Axis(0))
                    .broadcast((frames, d))
                    .expect("row broadcast")
                    .to_owned()
            };
            let dzc = spread(out.d_orig.row(i), cc.frames());
            let dzp = spread(out.d_pert.row(i), cp.frames());
            let (dc1, _) = model.backward_sequence(cc, dzc.view(), Some(&mut g));
            let (dc2, _) = model.backward_sequence(cp, dzp.view(), Some(&mut g));
            model.ppe_backward(ppe_clean, dc1.view(), &mut g);
            model.ppe_backward(ppe, dc2.view(), &mut g);
            g
        });
        for g in &grads {
            total.add_assign_from(g);
        }
    }
    Ok((out.loss, total))
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub epoch: usize,
    /// Set on the last step of each validated epoch.
    pub val_spearman: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best model by validation score, or the final model without a validator.
    pub model: PcsctModel<f32>,
    pub log: Vec<LogRow>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_score: Option<f64>,
    pub stopped_early: bool,
}

fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

/// Trains `model` in place on pairs from `source`.
pub fn train(
    mut model: PcsctModel<f32>,
    source: &dyn TrainingSource,
    cfg: &TrainConfig,
    mut validator: Option<&mut dyn Validator>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = source.len();
    if n < 2 {
        return Err(Error::invalid("corpus", format!("need at least 2 training items, got {n}")));
    }
    let batch_size = cfg.batch_size.min(n);
    let steps_per_epoch = batches(&(0..n).collect::<Vec<_>>(), batch_size).len();
    let mut total_steps = cfg.max_epochs * steps_per_epoch;
    if let Some(cap) = cfg.max_steps {
        total_steps = total_steps.min(cap);
    }
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut log = Vec::new();
    let mut step = 0;
    let mut best: Option<(f64, usize, PcsctModel<f32>)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut stopped_early = false;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(cfg.seed, rng::derive_seed(rng::tag("epoch"), epoch as u64)));
        for batch in batches(&order, batch_size) {
            if step >= total_steps {
                break 'epochs;
            }
            let step_seed = rng::derive_seed(cfg.seed, step as u64);
            let pairs = par::try_map(&batch, |&i| {
                source.pair(i, rng::derive_seed(step_seed, i as u64))
            })?;
            let items: Vec<BatchItem<'_, f32>> = pairs
                .iter()
                .map(|p| {
                    let params = vectorize(&p.spec);
                    BatchItem {
                        clean: p.clean.view(),
                        perturbed: p.perturbed.view(),
                        params,
                        clean_params: match cfg.clean_conditioning {
                            CleanConditioning::Pair => params,
                            CleanConditioning::Null => [0.0; PARAM_VECTOR_LEN],
                        },
                    }
                })
                .collect();
            let (loss, grads) = loss_and_grads(&model, &items, cfg.temperature)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite(format!("training loss at step {}", step + 1)));
            }
            step += 1;
            let lr = cosine_warmup_lr(step, total_steps, cfg.lr, cfg.warmup_frac);
            opt.step(&mut model, &grads, lr);
            log.push(LogRow {
                step,
                lr,
                loss,
                epoch,
                val_spearman: None,
            });
        }
        epochs_run = epoch;
        if let Some(v) = validator.as_deref_mut() {
            let score = v.score(&model)?;
            if let Some(row) = log.last_mut() {
                row.val_spearman = Some(score);
            }
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
        if step >= total_steps {
            break;
        }
    }
    let (model, best_epoch, best_score) = match best {
        Some((s, e, m)) => (m, e, Some(s)),
        None => (model, epochs_run, None),
    };
    Ok(TrainOutcome {
        model,
        log,
        epochs_run,
        best_epoch,
        best_score,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1].len(), 5);
        assert_eq!(batches(&order, 3).len(), 3);
    }

    #[test]
    fn config_validation_names_fields() {
        let cfg = TrainConfig {
            temperature: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Invalid { field: "train.temperature", .. })));
        let cfg = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Invalid { field: "train.patience", .. })));
    }
}
