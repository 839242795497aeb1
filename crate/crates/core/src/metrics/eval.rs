//! Scored evaluation datasets and the correlation/F1 protocol.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::judge::{derive_2afc_scores, judge_round_robin, JudgeConfig, ScoreRecord};
use super::rank::spearman_rho;
use crate::audio::{AudioClip, LabeledClip};
use crate::error::{Error, Result};
use crate::pcsct::{cosine, PcsctModel, Validator};
use crate::perturb::{apply, sample_spec, PerturbationKind, PerturbationSpec};
use crate::{par, rng};

/// Whether larger metric values mean "more similar" (SNR) or "less similar" (distances).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    HigherIsSimilar,
    LowerIsSimilar,
}

impl Orientation {
    /// Maps a metric value so that larger always means more similar.
    pub fn similarity(self, v: f64) -> f64 {
        match self {
            Orientation::HigherIsSimilar => v,
            Orientation::LowerIsSimilar => -v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricResult {
    /// Test-split Spearman ρ between sign-aligned metric values and 2AFC scores.
    pub spearman: f64,
    /// Test-split F1 in percent.
    pub f1_percent: f64,
    /// Threshold on the sign-aligned metric chosen on the train split.
    pub threshold: f64,
}

fn f1(pred: impl Iterator<Item = bool>, truth: impl Iterator<Item = bool>) -> f64 {
    let (mut tp, mut np, mut nt) = (0usize, 0usize, 0usize);
    for (p, t) in pred.zip(truth) {
        tp += (p && t) as usize;
        np += p as usize;
        nt += t as usize;
    }
    if np + nt == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (np + nt) as f64
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Spearman ρ and F1 of a metric against 2AFC scores.
///
/// Ground truth for F1 is "score above the dataset median"; the metric is
/// thresholded (predict similar when the aligned value is at least the
/// threshold) at the value that maximizes F1 on the train split, and F1 is
/// reported on the test split.
pub fn evaluate_metric(
    values: &[f64],
    orientation: Orientation,
    scores: &[f64],
    is_test: &[bool],
) -> Result<MetricResult> {
    if values.len() != scores.len() || values.len() != is_test.len() {
        return Err(Error::Shape("metric values, scores and split must have equal length".into()));
    }
    let n_test = is_test.iter().filter(|&&t| t).count();
    if n_test < 3 || n_test == values.len() {
        return Err(Error::invalid(
            "split",
            format!("degenerate split: {n_test} test items of {}", values.len()),
        ));
    }
    let aligned: Vec<f64> = values.iter().map(|&v| orientation.similarity(v)).collect();
    let pick = |test: bool, v: &[f64]| -> Vec<f64> {
        v.iter().zip(is_test).filter(|(_, &t)| t == test).map(|(x, _)| *x).collect()
    };
    let (test_m, test_s) = (pick(true, &aligned), pick(true, scores));
    let (train_m, train_s) = (pick(false, &aligned), pick(false, scores));
    let spearman = spearman_rho(&test_m, &test_s).map_err(|e| match e {
        Error::Undefined(m) => Error::Undefined(format!("undefined correlation: {m}")),
        other => other,
    })?;

    let cut = median(scores);
    let train_truth: Vec<bool> = train_s.iter().map(|&s| s > cut).collect();
    let mut candidates = train_m.clone();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(f64::INFINITY);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for &th in &candidates {
        let score = f1(train_m.iter().map(|&m| m >= th), train_truth.iter().copied());
        if score > best.0 {
            best = (score, th);
        }
    }
    let threshold = best.1;
    let f1_test = f1(test_m.iter().map(|&m| m >= threshold), test_s.iter().map(|&s| s > cut));
    Ok(MetricResult {
        spearman,
        f1_percent: 100.0 * f1_test,
        threshold,
    })
}

/// One perturbed version of a reference clip with its scores.
#[derive(Debug, Clone)]
pub struct EvalVersion {
    pub ref_index: usize,
    pub sample_id: String,
    pub spec: PerturbationSpec,
    pub clip: AudioClip,
    pub score_2afc: u8,
    pub score_mos: Option<f64>,
}

/// References, their six perturbed versions (one per kind) and the reference-level split.
#[derive(Debug, Clone)]
pub struct EvalDataset {
    pub references: Vec<LabeledClip>,
    pub versions: Vec<EvalVersion>,
    pub test_reference: Vec<bool>,
}

/// Id of the `k`-th perturbed version of a reference, also the stem of its embedding file.
pub fn version_id(ref_id: &str, k: usize) -> String {
    format!("{ref_id}.pert{k}")
}

/// Marks `round(test_frac · n)` references (at least one) as test, chosen by `seed`.
pub fn split_references(n: usize, test_frac: f64, seed: u64) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, rng::tag("split")));
    let n_test = ((n as f64 * test_frac).round() as usize).clamp(1, n.max(1));
    let mut out = vec![false; n];
    for &i in &idx[..n_test.min(n)] {
        out[i] = true;
    }
    out
}

/// Perturbs every reference once per kind and scores the versions with the
/// synthetic judge's round-robin.
pub fn build_dataset(
    references: Vec<LabeledClip>,
    judge: &JudgeConfig,
    seed: u64,
    test_frac: f64,
) -> Result<EvalDataset> {
    judge.validate()?;
    if references.is_empty() {
        return Err(Error::invalid("corpus", "no reference clips"));
    }
    let per_ref = par::try_map(&references.iter().enumerate().collect::<Vec<_>>(), |&(r, lc)| {
        let ref_seed = rng::derive_seed(seed, r as u64);
        let specs: Vec<(String, PerturbationSpec)> = PerturbationKind::ALL
            .iter()
            .enumerate()
            .map(|(k, &kind)| {
                let spec = sample_spec(rng::derive_seed(ref_seed, k as u64), Some(kind));
                (version_id(&lc.id, k), spec)
            })
            .collect();
        let judgments = judge_round_robin(judge, &lc.id, &specs, rng::derive_seed(ref_seed, rng::tag("judge")));
        let wins = derive_2afc_scores(&judgments)?;
        specs
            .into_iter()
            .map(|(id, spec)| {
                let clip = apply(&spec, &lc.clip)?;
                let score = wins.iter().find(|w| w.sample_id == id).expect("every version is judged").wins;
                Ok(EvalVersion {
                    ref_index: r,
                    sample_id: id,
                    spec,
                    clip,
                    score_2afc: score,
                    score_mos: None,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let test_reference = split_references(references.len(), test_frac, seed);
    Ok(EvalDataset {
        references,
        versions: per_ref.into_iter().flatten().collect(),
        test_reference,
    })
}

impl EvalDataset {
    pub fn scores(&self) -> Vec<f64> {
        self.versions.iter().map(|v| v.score_2afc as f64).collect()
    }

    pub fn is_test(&self) -> Vec<bool> {
        self.versions.iter().map(|v| self.test_reference[v.ref_index]).collect()
    }

    pub fn score_records(&self) -> Vec<ScoreRecord> {
        self.versions
            .iter()
            .map(|v| ScoreRecord {
                clip_id: self.references[v.ref_index].id.clone(),
                spec: v.spec.clone(),
                score_2afc: v.score_2afc,
                score_mos: v.score_mos,
            })
            .collect()
    }

    /// Replaces judge scores with externally supplied ones, matched by
    /// reference id and perturbation kind. Every version must be covered.
    pub fn substitute_scores(&mut self, records: &[ScoreRecord]) -> Result<()> {
        for v in &mut self.versions {
            let ref_id = &self.references[v.ref_index].id;
            let r = records
                .iter()
                .find(|r| &r.clip_id == ref_id && r.spec.kind() == v.spec.kind())
                .ok_or_else(|| {
                    Error::invalid(
                        "scores",
                        format!("no score for clip '{ref_id}', kind {}", v.spec.kind().name()),
                    )
                })?;
            if r.score_2afc > 5 {
                return Err(Error::invalid("scores", format!("score_2afc {} exceeds 5", r.score_2afc)));
            }
            v.score_2afc = r.score_2afc;
            v.score_mos = r.score_mos;
        }
        Ok(())
    }
}

/// Early-stopping metric: Spearman between pooled NULL-conditioned PAMT
/// cosine similarity (reference vs version) and the 2AFC scores.
pub struct JudgeValidator {
    references: Vec<Array2<f32>>,
    versions: Vec<(usize, Array2<f32>)>,
    scores: Vec<f64>,
}

impl JudgeValidator {
    pub fn new(references: Vec<Array2<f32>>, versions: Vec<(usize, Array2<f32>)>, scores: Vec<f64>) -> Result<Self> {
        if versions.len() != scores.len() || versions.len() < 3 {
            return Err(Error::invalid("validation", "need at least 3 scored versions"));
        }
        if versions.iter().any(|(r, _)| *r >= references.len()) {
            return Err(Error::invalid("validation", "version refers to a missing reference"));
        }
        Ok(Self {
            references,
            versions,
            scores,
        })
    }
}

fn pooled_null(model: &PcsctModel<f32>, e: &Array2<f32>) -> Result<ndarray::Array1<f64>> {
    let c = model.null_condition();
    let (z, _) = model.forward_sequence(e.view(), &c)?;
    Ok(PcsctModel::pooled(&z).mapv(|v| v as f64))
}

impl Validator for JudgeValidator {
    fn score(&mut self, model: &PcsctModel<f32>) -> Result<f64> {
        let refs = par::try_map(&self.references, |e| pooled_null(model, e))?;
        let sims = par::try_map(&self.versions, |(r, e)| {
            let p = pooled_null(model, e)?;
            cosine(refs[*r].view(), p.view())
        })?;
        spearman_rho(&sims, &self.scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn synthetic_scores(n_refs: usize, judge: &JudgeConfig, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let mut impacts = Vec::new();
        let mut scores = Vec::new();
        for r in 0..n_refs {
            let specs: Vec<(String, PerturbationSpec)> = PerturbationKind::ALL
                .iter()
                .enumerate()
                .map(|(k, &kind)| {
                    (format!("{r}.{k}"), sample_spec(rng::derive_seed(seed, (r * 6 + k) as u64), Some(kind)))
                })
                .collect();
            let wins = derive_2afc_scores(&judge_round_robin(judge, &r.to_string(), &specs, seed + r as u64)).unwrap();
            for (id, spec) in &specs {
                impacts.push(judge.impact(spec));
                scores.push(wins.iter().find(|w| &w.sample_id == id).unwrap().wins as f64);
            }
        }
        let split = split_references(n_refs, 0.2, seed);
        let is_test = (0..n_refs * 6).map(|i| split[i / 6]).collect();
        (impacts, scores, is_test)
    }

    #[test]
    fn ground_truth_metric_is_near_ceiling() {
        // Pooled over references, even the exact impact cannot reach ρ = 1:
        // 2AFC scores are within-reference ranks.
        let judge = JudgeConfig::noiseless();
        let (g, s, t) = synthetic_scores(200, &judge, 3);
        let r = evaluate_metric(&g, Orientation::LowerIsSimilar, &s, &t).unwrap();
        assert!(r.spearman >= 0.8, "{r:?}");
        assert!(r.f1_percent >= 80.0, "{r:?}");
        for chunk in 0..5 {
            let gi = &g[chunk * 6..chunk * 6 + 6];
            let si = &s[chunk * 6..chunk * 6 + 6];
            let neg: Vec<f64> = gi.iter().map(|v| -v).collect();
            assert!((spearman_rho(&neg, si).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_metric_is_uncorrelated() {
        let judge = JudgeConfig::default();
        let (_, s, t) = synthetic_scores(500, &judge, 4);
        for seed in 0..20 {
            let mut r = rng::stream(seed, 9);
            let noise: Vec<f64> = (0..s.len()).map(|_| r.gen()).collect();
            let res = evaluate_metric(&noise, Orientation::HigherIsSimilar, &s, &t).unwrap();
            assert!(res.spearman.abs() <= 0.15, "seed {seed}: {}", res.spearman);
        }
    }

    #[test]
    fn constant_metric_is_undefined() {
        let judge = JudgeConfig::default();
        let (_, s, t) = synthetic_scores(20, &judge, 5);
        let err = evaluate_metric(&vec![1.0; s.len()], Orientation::HigherIsSimilar, &s, &t).unwrap_err();
        assert!(err.to_string().contains("undefined correlation"));
    }

    #[test]
    fn split_is_deterministic_and_sized() {
        let a = split_references(200, 0.2, 7);
        assert_eq!(a, split_references(200, 0.2, 7));
        assert_eq!(a.iter().filter(|&&t| t).count(), 40);
        let all_test = vec![true; 10];
        assert!(evaluate_metric(&[0.0; 10], Orientation::HigherIsSimilar, &[0.0; 10], &all_test).is_err());
    }
}
