//! Perceptually constrained attacks on a linear probe over pooled PAMT
//! embeddings, adversarial training of that probe, and union robust accuracy.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, LabeledClip};
use crate::dsp::{band_energy, band_filter};
use crate::embedding::ToyEncoder;
use crate::error::{Error, Result};
use crate::metrics::pooled_distance;
use crate::nn::{AdamW, ParamSet};
use crate::pcsct::PcsctModel;
use crate::perturb::{apply, bark_band_edges, sample_spec};
use crate::{par, rng};

/// Attack algorithm and the constraint it enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackFamily {
    /// Signed-gradient steps in an L∞ ball of radius `budget · max|x|`.
    PgdLinfAudio,
    /// Signed-gradient steps with `d_PAMT(x', x) ≤ budget`, enforced by
    /// radial bisection toward the clean clip.
    PgdDpamt,
    /// Gradient steps confined to one Bark band with
    /// `‖δ‖₂ ≤ budget · sqrt(band energy of x)`.
    BarkConstrained,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 3] = [
        AttackFamily::PgdLinfAudio,
        AttackFamily::PgdDpamt,
        AttackFamily::BarkConstrained,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::PgdLinfAudio => "pgd_linf_audio",
            AttackFamily::PgdDpamt => "pgd_dpamt",
            AttackFamily::BarkConstrained => "bark_constrained",
        }
    }
}

impl fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid("attack.family", format!("unknown attack family '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub family: AttackFamily,
    /// Constraint radius in the family's units. Zero returns the input unchanged.
    pub budget: f64,
    /// Ascent steps; zero returns the input unchanged.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Step size in the same units as `budget`; defaults to `budget / 8`.
    #[serde(default)]
    pub step_size: Option<f64>,
    /// Band for `bark_constrained`; defaults to the band where the clip has most energy.
    #[serde(default)]
    pub bark_band: Option<usize>,
}

fn default_steps() -> usize {
    20
}

/// Tolerance of the bisection on the d_PAMT constraint, relative to the budget.
pub const DPAMT_TOLERANCE: f64 = 1e-3;
pub const MAX_BISECTIONS: usize = 30;

impl AttackConfig {
    pub fn new(family: AttackFamily, budget: f64) -> Self {
        Self {
            family,
            budget,
            steps: default_steps(),
            step_size: None,
            bark_band: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::invalid("attack.budget", "must be finite and non-negative"));
        }
        if let Some(a) = self.step_size {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid("attack.step_size", "must be positive"));
            }
        }
        if let Some(b) = self.bark_band {
            if b >= crate::perturb::BARK_BANDS {
                return Err(Error::invalid("attack.bark_band", format!("band {b} out of range")));
            }
        }
        Ok(())
    }

    fn alpha(&self) -> f64 {
        self.step_size.unwrap_or(self.budget / 8.0)
    }
}

/// Linear probe `softmax(p W + b)` over pooled PAMT vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Classifier {
    pub fn new(dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::invalid("classifier", "need a positive dimension and at least 2 classes"));
        }
        let mut r = rng::stream(seed, rng::tag("classifier"));
        let bound = 1.0 / (dim as f64).sqrt();
        Ok(Self {
            w: Array2::from_shape_fn((dim, classes), |_| r.gen_range(-bound..bound)),
            b: Array1::zeros(classes),
        })
    }

    pub fn classes(&self) -> usize {
        self.b.len()
    }

    pub fn logits(&self, p: &Array1<f64>) -> Array1<f64> {
        p.dot(&self.w) + &self.b
    }

    pub fn predict(&self, p: &Array1<f64>) -> usize {
        let l = self.logits(p);
        (0..l.len()).fold(0, |best, k| if l[k] > l[best] { k } else { best })
    }

    /// Cross-entropy and its gradient with respect to the logits.
    pub fn cross_entropy(&self, p: &Array1<f64>, label: usize) -> (f64, Array1<f64>) {
        let l = self.logits(p);
        let m = l.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
        let e = l.mapv(|x| (x - m).exp());
        let z = e.sum();
        let mut d = e / z;
        let loss = m + z.ln() - l[label];
        d[label] -= 1.0;
        (loss, d)
    }
}

impl ParamSet<f64> for Classifier {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("classifier.w".into(), self.w.view().into_dyn()),
            ("classifier.b".into(), self.b.view().into_dyn()),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        vec![
            ("classifier.w".into(), self.w.view_mut().into_dyn()),
            ("classifier.b".into(), self.b.view_mut().into_dyn()),
        ]
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.len()),
        }
    }
}

/// The frozen audio → pooled PAMT embedding path (NULL conditioning).
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub encoder: &'a ToyEncoder,
    pub model: &'a PcsctModel<f32>,
}

impl Pipeline<'_> {
    pub fn pooled(&self, clip: &AudioClip) -> Result<Array1<f64>> {
        let e = self.encoder.encode(clip)?;
        crate::metrics::pamt_pooled(&e, self.model)
    }

    pub fn d_pamt(&self, a: &AudioClip, b: &AudioClip) -> Result<f64> {
        Ok(pooled_distance(&self.pooled(a)?, &self.pooled(b)?))
    }

    /// Classifier cross-entropy at `clip` and its gradient with respect to the samples.
    pub fn loss_and_grad(&self, clip: &AudioClip, label: usize, clf: &Classifier) -> Result<(f64, Vec<f64>)> {
        let (feats, enc_cache) = self.encoder.encode_with_cache(clip)?;
        let e = feats.dot(&self.encoder.lift()).mapv(|v| v as f32);
        let (z, cache) = self.model.forward_sequence(e.view(), &self.model.null_condition())?;
        let p = PcsctModel::pooled(&z).mapv(|v| v as f64);
        let (loss, dlogits) = clf.cross_entropy(&p, label);
        let dp = clf.w.dot(&dlogits);
        let t = z.nrows();
        let dz = dp
            .mapv(|v| (v / t as f64) as f32)
            .insert_axis(Axis(0))
            .broadcast(z.dim())
            .expect("row broadcast")
            .to_owned();
        let (_, de) = self.model.backward_sequence(&cache, dz.view(), None);
        let grad = self.encoder.backward(clip.len(), &enc_cache, de.mapv(|v| v as f64).view());
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("attack gradient".into()));
        }
        Ok((loss, grad))
    }
}

/// An adversarial example and its post-hoc constraint check.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub clip: AudioClip,
    pub family: AttackFamily,
    /// Measured constraint value in the family's units.
    pub constraint: f64,
    /// Largest admissible constraint value (budget plus stated tolerance).
    pub limit: f64,
    pub clean_loss: f64,
    pub adversarial_loss: f64,
}

impl AttackOutcome {
    pub fn satisfied(&self) -> bool {
        self.constraint <= self.limit
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn with_delta(x: &AudioClip, delta: &[f64]) -> AudioClip {
    let s = x.samples().iter().zip(delta).map(|(a, d)| (a + d).clamp(-1.0, 1.0)).collect();
    AudioClip::new(s, x.sample_rate_hz()).expect("finite samples")
}

fn delta_of(adv: &AudioClip, x: &AudioClip) -> Vec<f64> {
    adv.samples().iter().zip(x.samples()).map(|(a, b)| a - b).collect()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Index of the Bark band holding most of the clip's energy.
pub fn loudest_bark_band(clip: &AudioClip) -> usize {
    let sr = clip.sample_rate_hz() as f64;
    let energies: Vec<f64> = bark_band_edges(clip.sample_rate_hz())
        .iter()
        .map(|&(lo, hi)| band_energy(clip.samples(), sr, lo, hi))
        .collect();
    (0..energies.len()).fold(0, |b, k| if energies[k] > energies[b] { k } else { b })
}

/// Iterative ascent on the classifier's cross-entropy with respect to the waveform.
pub fn attack(
    clip: &AudioClip,
    label: usize,
    clf: &Classifier,
    pipe: &Pipeline<'_>,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    if label >= clf.classes() {
        return Err(Error::invalid("label", format!("label {label} out of {} classes", clf.classes())));
    }
    let (clean_loss, mut grad) = pipe.loss_and_grad(clip, label, clf)?;
    let unchanged = |limit: f64| AttackOutcome {
        clip: clip.clone(),
        family: cfg.family,
        constraint: 0.0,
        limit,
        clean_loss,
        adversarial_loss: clean_loss,
    };
    if cfg.budget == 0.0 || cfg.steps == 0 {
        return Ok(unchanged(cfg.budget));
    }
    let n = clip.len();
    let mut delta = vec![0.0; n];
    let mut adv: AudioClip;
    let mut loss;
    // highest-loss iterate so far; the clean clip is always feasible
    let mut best = (clean_loss, clip.clone());

    let (constraint, limit) = match cfg.family {
        AttackFamily::PgdLinfAudio => {
            let peak = clip.peak();
            let eta = cfg.budget * peak;
            let alpha = cfg.alpha() * peak;
            for _ in 0..cfg.steps {
                for (d, g) in delta.iter_mut().zip(&grad) {
                    *d = (*d + alpha * sign(*g)).clamp(-eta, eta);
                }
                adv = with_delta(clip, &delta);
                delta = delta_of(&adv, clip);
                (loss, grad) = pipe.loss_and_grad(&adv, label, clf)?;
                if loss > best.0 {
                    best = (loss, adv.clone());
                }
            }
            let measured = delta_of(&best.1, clip).iter().fold(0.0f64, |m, d| m.max(d.abs()));
            (measured / peak.max(f64::MIN_POSITIVE), cfg.budget * (1.0 + 1e-9))
        }
        AttackFamily::BarkConstrained => {
            let band = cfg.bark_band.unwrap_or_else(|| loudest_bark_band(clip));
            let (lo, hi) = bark_band_edges(clip.sample_rate_hz())[band];
            let sr = clip.sample_rate_hz() as f64;
            let reference = band_energy(clip.samples(), sr, lo, hi).sqrt();
            if reference == 0.0 {
                return Ok(unchanged(cfg.budget));
            }
            let radius = cfg.budget * reference;
            let alpha = cfg.alpha() * reference;
            for _ in 0..cfg.steps {
                let g = band_filter(&grad, sr, lo, hi);
                let gn = norm2(&g);
                if gn > 0.0 {
                    delta.iter_mut().zip(&g).for_each(|(d, gi)| *d += alpha * gi / gn);
                }
                let dn = norm2(&delta);
                if dn > radius {
                    delta.iter_mut().for_each(|d| *d *= radius / dn);
                }
                adv = with_delta(clip, &delta);
                delta = delta_of(&adv, clip);
                (loss, grad) = pipe.loss_and_grad(&adv, label, clf)?;
                if loss > best.0 {
                    best = (loss, adv.clone());
                }
            }
            (norm2(&delta_of(&best.1, clip)) / reference, cfg.budget * (1.0 + 1e-9))
        }
        AttackFamily::PgdDpamt => {
            let eps = cfg.budget;
            let alpha = cfg.alpha();
            let clean = pipe.pooled(clip)?;
            let dist = |d: &[f64]| -> Result<(f64, AudioClip)> {
                let c = with_delta(clip, d);
                Ok((pooled_distance(&clean, &pipe.pooled(&c)?), c))
            };
            // per-sample step whose first signed step moves d_PAMT by about alpha
            let probe = 1e-3 * clip.peak().max(1e-3);
            let signs: Vec<f64> = grad.iter().map(|g| probe * sign(*g)).collect();
            let (d0, _) = dist(&signs)?;
            let step = if d0 > 0.0 { probe * alpha / d0 } else { probe };
            for _ in 0..cfg.steps {
                let trial: Vec<f64> = delta.iter().zip(&grad).map(|(d, g)| d + step * sign(*g)).collect();
                let (d, c) = dist(&trial)?;
                if d <= eps {
                    adv = c;
                } else {
                    // radial bisection toward the clean clip
                    let (mut lo, mut hi) = (0.0f64, 1.0f64);
                    let mut best = clip.clone();
                    for _ in 0..MAX_BISECTIONS {
                        let mid = 0.5 * (lo + hi);
                        let scaled: Vec<f64> = trial.iter().map(|v| v * mid).collect();
                        let (dm, cm) = dist(&scaled)?;
                        if dm <= eps {
                            lo = mid;
                            best = cm;
                            if dm >= eps * (1.0 - DPAMT_TOLERANCE) {
                                break;
                            }
                        } else {
                            hi = mid;
                        }
                    }
                    adv = best;
                }
                delta = delta_of(&adv, clip);
                (loss, grad) = pipe.loss_and_grad(&adv, label, clf)?;
                if loss > best.0 {
                    best = (loss, adv.clone());
                }
            }
            (pooled_distance(&clean, &pipe.pooled(&best.1)?), eps * (1.0 + DPAMT_TOLERANCE))
        }
    };
    Ok(AttackOutcome {
        clip: best.1,
        family: cfg.family,
        constraint,
        limit,
        clean_loss,
        adversarial_loss: best.0,
    })
}

/// The `q`-quantile (0..=1) of d_PAMT between clips and randomly perturbed versions of them.
pub fn dpamt_quantile(clips: &[&AudioClip], pipe: &Pipeline<'_>, q: f64, seed: u64) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::invalid("corpus", "no clips"));
    }
    let idx: Vec<usize> = (0..clips.len()).collect();
    let mut d = par::try_map(&idx, |&i| {
        let spec = sample_spec(rng::derive_seed(seed, i as u64), None);
        pipe.d_pamt(clips[i], &apply(&spec, clips[i])?)
    })?;
    d.sort_by(f64::total_cmp);
    let pos = (q.clamp(0.0, 1.0) * (d.len() - 1) as f64).round() as usize;
    Ok(d[pos])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-2,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierLogRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub batch_accuracy: f64,
}

/// Trains the probe on adversarial examples drawn from `attacks` (item `i`
/// of step `s` uses `attacks[(i + s) % len]`). With no attacks, or attacks
/// with zero steps, this is ordinary training on clean clips. The encoder and
/// PAMT model are only read.
pub fn adversarial_train(
    data: &[LabeledClip],
    pipe: &Pipeline<'_>,
    attacks: &[AttackConfig],
    cfg: &ClassifierTrainConfig,
) -> Result<(Classifier, Vec<ClassifierLogRow>)> {
    if data.len() < 2 {
        return Err(Error::invalid("corpus", "need at least 2 labeled clips"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("classifier", "batch_size and epochs must be positive"));
    }
    for a in attacks {
        a.validate()?;
    }
    let classes = data.iter().map(|c| c.label).max().unwrap_or(0) + 1;
    let dim = pipe.model.config.output_dim;
    let mut clf = Classifier::new(dim, classes.max(2), cfg.seed)?;
    let clean: Vec<Array1<f64>> = par::try_map(data, |c| pipe.pooled(&c.clip))?;
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, rng::derive_seed(rng::tag("clf_epoch"), epoch as u64)));
        for batch in order.chunks(cfg.batch_size) {
            let snapshot = clf.clone();
            let pooled = par::try_map(batch, |&i| -> Result<Array1<f64>> {
                let active = attacks.iter().filter(|a| a.steps > 0 && a.budget > 0.0).count();
                if active == 0 {
                    return Ok(clean[i].clone());
                }
                let a = &attacks[(i + step) % attacks.len()];
                let out = attack(&data[i].clip, data[i].label, &snapshot, pipe, a)?;
                pipe.pooled(&out.clip)
            })?;
            let mut grad = clf.zeros_like();
            let mut loss = 0.0;
            let mut correct = 0;
            for (p, &i) in pooled.iter().zip(batch) {
                let (l, dl) = clf.cross_entropy(p, data[i].label);
                loss += l;
                correct += (clf.predict(p) == data[i].label) as usize;
                grad.w += &(p.view().insert_axis(Axis(1)).dot(&dl.view().insert_axis(Axis(0))));
                grad.b += &dl;
            }
            let k = batch.len() as f64;
            grad.w /= k;
            grad.b /= k;
            opt.step(&mut clf, &grad, cfg.lr);
            step += 1;
            log.push(ClassifierLogRow {
                epoch,
                step,
                loss: loss / k,
                batch_accuracy: correct as f64 / k,
            });
            if !loss.is_finite() || !clf.all_finite() {
                return Err(Error::NonFinite(format!("classifier training at step {step}")));
            }
        }
    }
    Ok((clf, log))
}

/// Clean, per-family and union accuracy over a test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub clean_accuracy: f64,
    pub per_family: Vec<(AttackFamily, f64)>,
    pub union_accuracy: f64,
    /// Adversarial examples that violated their constraint (should be 0).
    pub violations: usize,
    pub examples: usize,
}

/// Per-item results of a robustness evaluation.
#[derive(Debug, Clone)]
pub struct ItemRobustness {
    pub clean_correct: bool,
    pub outcomes: Vec<(AttackOutcome, bool)>,
}

pub fn evaluate_robustness(
    clf: &Classifier,
    pipe: &Pipeline<'_>,
    test: &[LabeledClip],
    attacks: &[AttackConfig],
) -> Result<(RobustnessReport, Vec<ItemRobustness>)> {
    if test.is_empty() {
        return Err(Error::invalid("test set", "empty"));
    }
    if attacks.is_empty() {
        return Err(Error::invalid("attack.families", "need at least one attack family"));
    }
    let items = par::try_map(test, |c| -> Result<ItemRobustness> {
        let clean_correct = clf.predict(&pipe.pooled(&c.clip)?) == c.label;
        let outcomes = attacks
            .iter()
            .map(|a| {
                let out = attack(&c.clip, c.label, clf, pipe, a)?;
                let ok = clf.predict(&pipe.pooled(&out.clip)?) == c.label;
                Ok((out, ok))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ItemRobustness { clean_correct, outcomes })
    })?;
    let n = items.len() as f64;
    let per_family = attacks
        .iter()
        .enumerate()
        .map(|(k, a)| (a.family, items.iter().filter(|it| it.outcomes[k].1).count() as f64 / n))
        .collect();
    let union = items.iter().filter(|it| it.outcomes.iter().all(|(_, ok)| *ok)).count() as f64 / n;
    let violations = items
        .iter()
        .flat_map(|it| &it.outcomes)
        .filter(|(o, _)| !o.satisfied())
        .count();
    let report = RobustnessReport {
        clean_accuracy: items.iter().filter(|it| it.clean_correct).count() as f64 / n,
        per_family,
        union_accuracy: union,
        violations,
        examples: items.len() * attacks.len(),
    };
    Ok((report, items))
}

/// Union robust accuracy: an item counts only if it survives every family.
pub fn union_robust_accuracy(
    clf: &Classifier,
    pipe: &Pipeline<'_>,
    test: &[LabeledClip],
    attacks: &[AttackConfig],
) -> Result<RobustnessReport> {
    Ok(evaluate_robustness(clf, pipe, test, attacks)?.0)
}

/// Attack suite, classifier training and the standard-vs-adversarial comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    /// `pgd_linf_audio` radius relative to the clip peak.
    pub linf_eta: f64,
    /// Quantile of d_PAMT over random table perturbations used as the `pgd_dpamt` budget.
    pub dpamt_quantile: f64,
    /// `bark_constrained` radius relative to the band's RMS amplitude.
    pub bark_budget: f64,
    /// Ascent steps of the evaluation attacks.
    pub steps: usize,
    /// Families used inside adversarial training.
    pub train_families: Vec<AttackFamily>,
    /// Ascent steps of the attacks inside adversarial training.
    pub train_steps: usize,
    pub standard: ClassifierTrainConfig,
    pub adversarial: ClassifierTrainConfig,
    /// Fraction of clips held out for robustness evaluation.
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            linf_eta: 0.005,
            dpamt_quantile: 0.25,
            bark_budget: 0.5,
            steps: 20,
            train_families: vec![AttackFamily::PgdDpamt],
            train_steps: 5,
            standard: ClassifierTrainConfig::default(),
            adversarial: ClassifierTrainConfig {
                epochs: 10,
                ..ClassifierTrainConfig::default()
            },
            test_frac: 1.0 / 3.0,
            seed: 0,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.linf_eta > 0.0 && self.bark_budget > 0.0) {
            return Err(Error::invalid("attack.budgets", "linf_eta and bark_budget must be positive"));
        }
        if !(self.dpamt_quantile > 0.0 && self.dpamt_quantile <= 1.0) {
            return Err(Error::invalid("attack.dpamt_quantile", "must lie in (0, 1]"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("attack.steps", "must be at least 1"));
        }
        if !(self.test_frac > 0.0 && self.test_frac < 1.0) {
            return Err(Error::invalid("attack.test_frac", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }

    /// The three evaluation attacks with `dpamt_epsilon` as the d_PAMT budget.
    pub fn suite(&self, dpamt_epsilon: f64) -> Vec<AttackConfig> {
        let make = |family, budget| AttackConfig {
            steps: self.steps,
            ..AttackConfig::new(family, budget)
        };
        vec![
            make(AttackFamily::PgdLinfAudio, self.linf_eta),
            make(AttackFamily::PgdDpamt, dpamt_epsilon),
            make(AttackFamily::BarkConstrained, self.bark_budget),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefenseReport {
    pub dpamt_epsilon: f64,
    pub standard: RobustnessReport,
    pub adversarial: RobustnessReport,
}

/// Random train/test split of a labeled corpus; returns `(train, test)`.
pub fn split_corpus(corpus: &[LabeledClip], test_frac: f64, seed: u64) -> (Vec<LabeledClip>, Vec<LabeledClip>) {
    let is_test = crate::metrics::split_references(corpus.len(), test_frac, seed);
    let (test, train): (Vec<_>, Vec<_>) = corpus.iter().cloned().zip(is_test).partition(|(_, t)| *t);
    (train.into_iter().map(|(c, _)| c).collect(), test.into_iter().map(|(c, _)| c).collect())
}

/// Splits `corpus`, trains a standard and an adversarially trained probe on
/// the same frozen pipeline, and evaluates both against the attack suite.
pub fn defense_experiment(corpus: &[LabeledClip], pipe: &Pipeline<'_>, cfg: &DefenseConfig) -> Result<DefenseReport> {
    cfg.validate()?;
    let (train, test) = split_corpus(corpus, cfg.test_frac, cfg.seed);
    let clips: Vec<&AudioClip> = train.iter().map(|c| &c.clip).collect();
    let eps = dpamt_quantile(&clips, pipe, cfg.dpamt_quantile, rng::derive_seed(cfg.seed, rng::tag("eps")))?;
    let suite = cfg.suite(eps);

    let (standard, _) = adversarial_train(&train, pipe, &[], &cfg.standard)?;
    let train_attacks: Vec<AttackConfig> = cfg
        .train_families
        .iter()
        .filter_map(|f| suite.iter().find(|a| a.family == *f))
        .map(|a| AttackConfig {
            steps: cfg.train_steps,
            ..a.clone()
        })
        .collect();
    let (defended, _) = adversarial_train(&train, pipe, &train_attacks, &cfg.adversarial)?;
    Ok(DefenseReport {
        dpamt_epsilon: eps,
        standard: union_robust_accuracy(&standard, pipe, &test, &suite)?,
        adversarial: union_robust_accuracy(&defended, pipe, &test, &suite)?,
    })
}
