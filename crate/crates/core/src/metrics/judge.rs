//! 2AFC judgments, win-count scores and the synthetic judge.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::{PerturbationSpec, KIND_COUNT};
use crate::rng;

/// Number of perturbed versions compared per reference.
pub const VERSIONS_PER_REFERENCE: usize = 6;
/// `C(6, 2)` comparisons per reference.
pub const PAIRS_PER_REFERENCE: usize = VERSIONS_PER_REFERENCE * (VERSIONS_PER_REFERENCE - 1) / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// One forced choice: which of two perturbed versions sounded closer to the reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub ref_id: String,
    pub left_id: String,
    pub right_id: String,
    pub winner: Side,
}

/// A perturbed version and its perceptual scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub spec: PerturbationSpec,
    /// Wins in the round-robin, 0..=5. Higher means judged more similar.
    pub score_2afc: u8,
    pub score_mos: Option<f64>,
}

/// Win count of one perturbed version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WinCount {
    pub ref_id: String,
    pub sample_id: String,
    pub wins: u8,
}

/// Turns complete round-robins into per-version win counts, ordered by
/// reference id and then sample id.
pub fn derive_2afc_scores(judgments: &[JudgmentRecord]) -> Result<Vec<WinCount>> {
    let mut per_ref: BTreeMap<&str, Vec<&JudgmentRecord>> = BTreeMap::new();
    for j in judgments {
        if j.left_id == j.right_id {
            return Err(Error::invalid(
                "judgments",
                format!("reference '{}' compares '{}' with itself", j.ref_id, j.left_id),
            ));
        }
        per_ref.entry(&j.ref_id).or_default().push(j);
    }
    let mut out = Vec::new();
    for (ref_id, js) in per_ref {
        let mut pairs = BTreeSet::new();
        let mut wins: BTreeMap<&str, u8> = BTreeMap::new();
        for j in &js {
            let key = if j.left_id < j.right_id {
                (j.left_id.as_str(), j.right_id.as_str())
            } else {
                (j.right_id.as_str(), j.left_id.as_str())
            };
            if !pairs.insert(key) {
                return Err(Error::invalid(
                    "judgments",
                    format!("reference '{ref_id}' has a duplicate pair ({}, {})", key.0, key.1),
                ));
            }
            wins.entry(&j.left_id).or_insert(0);
            wins.entry(&j.right_id).or_insert(0);
            let w = match j.winner {
                Side::Left => &j.left_id,
                Side::Right => &j.right_id,
            };
            *wins.get_mut(w.as_str()).expect("inserted above") += 1;
        }
        if wins.len() != VERSIONS_PER_REFERENCE || pairs.len() != PAIRS_PER_REFERENCE {
            return Err(Error::invalid(
                "judgments",
                format!(
                    "reference '{ref_id}' needs all {PAIRS_PER_REFERENCE} pairs over {VERSIONS_PER_REFERENCE} versions; \
                     got {} pairs over {} versions",
                    pairs.len(),
                    wins.len()
                ),
            ));
        }
        out.extend(wins.into_iter().map(|(s, w)| WinCount {
            ref_id: ref_id.to_string(),
            sample_id: s.to_string(),
            wins: w,
        }));
    }
    Ok(out)
}

/// Settings of the synthetic listener.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeConfig {
    /// Per-kind weights in `PerturbationKind` index order.
    pub weights: [f64; KIND_COUNT],
    /// Logistic temperature of the flip probability.
    pub temperature: f64,
    /// Never flip; ties go to the left item.
    pub noiseless: bool,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            weights: [0.8, 0.3, 0.5, 1.0, 0.9, 0.4],
            temperature: 0.1,
            noiseless: false,
        }
    }
}

impl JudgeConfig {
    pub fn noiseless() -> Self {
        Self {
            noiseless: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("eval.judge.weights", "weights must be finite and non-negative"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("eval.judge.temperature", "must be positive"));
        }
        Ok(())
    }

    /// Ground-truth perceptual impact: kind weight times normalized magnitude.
    pub fn impact(&self, spec: &PerturbationSpec) -> f64 {
        self.weights[spec.kind().index()] * spec.magnitude()
    }

    /// Probability that the judge picks the higher-impact item.
    pub fn flip_probability(&self, delta: f64) -> f64 {
        if self.noiseless {
            0.0
        } else {
            1.0 / (1.0 + (delta.abs() / self.temperature).exp())
        }
    }

    /// Picks the version that sounds closer to the reference. Deterministic in `seed`.
    pub fn judge(&self, a: &PerturbationSpec, b: &PerturbationSpec, seed: u64) -> Side {
        let (ga, gb) = (self.impact(a), self.impact(b));
        let better = if gb < ga { Side::Right } else { Side::Left };
        if self.noiseless {
            return better;
        }
        let mut r = rng::stream(seed, rng::tag("judge"));
        let tie_break: bool = r.gen();
        let base = if ga == gb {
            if tie_break {
                Side::Left
            } else {
                Side::Right
            }
        } else {
            better
        };
        if ga != gb && r.gen::<f64>() < self.flip_probability(ga - gb) {
            match base {
                Side::Left => Side::Right,
                Side::Right => Side::Left,
            }
        } else {
            base
        }
    }
}

/// Full round-robin over one reference's versions.
pub fn judge_round_robin(
    judge: &JudgeConfig,
    ref_id: &str,
    versions: &[(String, PerturbationSpec)],
    seed: u64,
) -> Vec<JudgmentRecord> {
    let mut out = Vec::new();
    for i in 0..versions.len() {
        for j in i + 1..versions.len() {
            let s = rng::derive_seed(seed, (i * versions.len() + j) as u64);
            out.push(JudgmentRecord {
                ref_id: ref_id.to_string(),
                left_id: versions[i].0.clone(),
                right_id: versions[j].0.clone(),
                winner: judge.judge(&versions[i].1, &versions[j].1, s),
            });
        }
    }
    out
}
