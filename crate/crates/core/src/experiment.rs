//! End-to-end workflows shared by the command-line tool and the acceptance
//! suite: encoding an evaluation dataset, training with judge-based early
//! stopping, the correlation table over all metrics, and the separation check.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::embedding::{EmbeddingSequence, ToyEncoder};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_metric, frame_fad, lsd, pamt_pooled, pooled_distance, snr_db, split_references, spearman_rho,
    EvalDataset, JudgeValidator, MetricResult, Orientation,
};
use crate::par;
use crate::pcsct::{cosine, train, AudioSource, PcsctConfig, PcsctModel, TrainConfig, TrainOutcome};
use crate::perturb::{apply, sample_spec, PerturbationKind};
use crate::rng;

/// Encoder outputs for every reference and version of a dataset.
pub struct EncodedDataset {
    /// Log band energies (`T x 64`); the embeddings are an isometric lift of these.
    pub reference_features: Vec<Array2<f64>>,
    pub version_features: Vec<Array2<f64>>,
    pub references: Vec<EmbeddingSequence>,
    pub versions: Vec<EmbeddingSequence>,
}

pub fn encode_dataset(ds: &EvalDataset, enc: &ToyEncoder) -> Result<EncodedDataset> {
    let encode = |c: &AudioClip| -> Result<(Array2<f64>, EmbeddingSequence)> {
        let f = enc.features(c)?;
        let e = enc.lift_features(&f)?;
        Ok((f, e))
    };
    let refs = par::try_map(&ds.references, |r| encode(&r.clip))?;
    let vers = par::try_map(&ds.versions, |v| encode(&v.clip))?;
    let (reference_features, references) = refs.into_iter().unzip();
    let (version_features, versions) = vers.into_iter().unzip();
    Ok(EncodedDataset {
        reference_features,
        version_features,
        references,
        versions,
    })
}

/// Validation split and seed for training on a dataset's non-test references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Fraction of references held out for the correlation table.
    pub test_frac: f64,
    /// Fraction of the remaining references used for early stopping.
    pub val_frac: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            test_frac: 0.2,
            val_frac: 0.2,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("eval.test_frac", self.test_frac), ("eval.val_frac", self.val_frac)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(field, "must lie strictly between 0 and 1"));
            }
        }
        Ok(())
    }
}

/// Trains a fresh model on the non-test references of `ds`, stopping early on
/// the judge correlation of a validation subset.
pub fn train_on_dataset(
    ds: &EvalDataset,
    encoded: &EncodedDataset,
    enc: &ToyEncoder,
    model_cfg: PcsctConfig,
    train_cfg: &TrainConfig,
    val_frac: f64,
) -> Result<TrainOutcome> {
    let pool: Vec<usize> = (0..ds.references.len()).filter(|&i| !ds.test_reference[i]).collect();
    if pool.len() < 4 {
        return Err(Error::invalid("corpus", "need at least 4 non-test references"));
    }
    let is_val = split_references(pool.len(), val_frac, rng::derive_seed(train_cfg.seed, rng::tag("val")));
    let fit: Vec<usize> = pool.iter().zip(&is_val).filter(|(_, v)| !**v).map(|(&i, _)| i).collect();
    let val: Vec<usize> = pool.iter().zip(&is_val).filter(|(_, v)| **v).map(|(&i, _)| i).collect();

    let val_refs = val.iter().map(|&i| encoded.references[i].data().to_owned()).collect();
    let mut val_versions = Vec::new();
    let mut val_scores = Vec::new();
    for (k, v) in ds.versions.iter().enumerate() {
        if let Some(p) = val.iter().position(|&i| i == v.ref_index) {
            val_versions.push((p, encoded.versions[k].data().to_owned()));
            val_scores.push(v.score_2afc as f64);
        }
    }
    let mut validator = JudgeValidator::new(val_refs, val_versions, val_scores)?;
    let clips = fit.iter().map(|&i| &ds.references[i].clip).collect();
    let source = AudioSource::new(clips, enc)?;
    let model = PcsctModel::<f32>::init(model_cfg, rng::derive_seed(train_cfg.seed, rng::tag("init")))?;
    train(model, &source, train_cfg, Some(&mut validator))
}

/// One row of the correlation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub name: &'static str,
    pub result: MetricResult,
    /// Test-split Spearman per perturbation kind; `None` when undefined.
    pub per_kind: Vec<(PerturbationKind, Option<f64>)>,
}

pub const METRIC_NAMES: [&str; 6] = ["SNR", "LSD", "FAD(toy/raw)", "FAD(PAMT)", "1-cos(raw pooled)", "d_PAMT"];

fn pooled(e: &EmbeddingSequence) -> Array1<f64> {
    Array1::from(e.pooled())
}

/// Values of every metric for every version, in [`METRIC_NAMES`] order.
pub fn metric_values(
    ds: &EvalDataset,
    encoded: &EncodedDataset,
    model: &PcsctModel<f32>,
) -> Result<Vec<(Vec<f64>, Orientation)>> {
    let pamt_frames = |e: &EmbeddingSequence| -> Result<Array2<f64>> {
        let (z, _) = model.forward_sequence(e.data(), &model.null_condition())?;
        Ok(z.mapv(|v| v as f64))
    };
    let ref_pamt = par::try_map(&encoded.references, |e| pamt_frames(e))?;
    let idx: Vec<usize> = (0..ds.versions.len()).collect();
    let rows = par::try_map(&idx, |&k| -> Result<[f64; 6]> {
        let v = &ds.versions[k];
        let r = v.ref_index;
        let reference = &ds.references[r].clip;
        let zv = pamt_frames(&encoded.versions[k])?;
        let pr = ref_pamt[r].mean_axis(ndarray::Axis(0)).expect("non-empty");
        let pv = zv.mean_axis(ndarray::Axis(0)).expect("non-empty");
        Ok([
            snr_db(reference, &v.clip)?,
            lsd(reference, &v.clip)?,
            frame_fad(encoded.reference_features[r].view(), encoded.version_features[k].view())?,
            frame_fad(ref_pamt[r].view(), zv.view())?,
            1.0 - cosine(pooled(&encoded.references[r]).view(), pooled(&encoded.versions[k]).view())?,
            pooled_distance(&pr, &pv),
        ])
    })?;
    let orient = [
        Orientation::HigherIsSimilar,
        Orientation::LowerIsSimilar,
        Orientation::LowerIsSimilar,
        Orientation::LowerIsSimilar,
        Orientation::LowerIsSimilar,
        Orientation::LowerIsSimilar,
    ];
    Ok((0..6).map(|m| (rows.iter().map(|r| r[m]).collect(), orient[m])).collect())
}

/// Spearman and F1 of every metric against the dataset's 2AFC scores.
pub fn metric_table(ds: &EvalDataset, encoded: &EncodedDataset, model: &PcsctModel<f32>) -> Result<Vec<MetricRow>> {
    let scores = ds.scores();
    let is_test = ds.is_test();
    let values = metric_values(ds, encoded, model)?;
    METRIC_NAMES
        .iter()
        .zip(values)
        .map(|(&name, (vals, orientation))| {
            let result = evaluate_metric(&vals, orientation, &scores, &is_test)?;
            let per_kind = PerturbationKind::ALL
                .iter()
                .map(|&kind| {
                    let (m, s): (Vec<f64>, Vec<f64>) = (0..vals.len())
                        .filter(|&i| is_test[i] && ds.versions[i].spec.kind() == kind)
                        .map(|i| (orientation.similarity(vals[i]), scores[i]))
                        .unzip();
                    (kind, spearman_rho(&m, &s).ok())
                })
                .collect();
            Ok(MetricRow { name, result, per_kind })
        })
        .collect()
}

/// Fraction of triplets (anchor, perturbed anchor, other clip) for which the
/// pooled PAMT cosine of the anchor to its perturbed version beats the one to
/// the other clip. Each anchor is paired with a uniformly drawn different clip.
pub fn separation_rate(clips: &[&AudioClip], enc: &ToyEncoder, model: &PcsctModel<f32>, seed: u64) -> Result<f64> {
    if clips.len() < 2 {
        return Err(Error::invalid("clips", "need at least 2 clips for triplets"));
    }
    let pooled = |c: &AudioClip| pamt_pooled(&enc.encode(c)?, model);
    let anchors = par::try_map(clips, |c| pooled(c))?;
    let idx: Vec<usize> = (0..clips.len()).collect();
    let wins = par::try_map(&idx, |&i| -> Result<bool> {
        let triplet_seed = rng::derive_seed(seed, i as u64);
        let spec = sample_spec(triplet_seed, None);
        let p = pooled(&apply(&spec, clips[i])?)?;
        let offset = rng::stream(triplet_seed, rng::tag("other")).gen_range(1..clips.len());
        let other = &anchors[(i + offset) % clips.len()];
        Ok(cosine(anchors[i].view(), p.view())? > cosine(anchors[i].view(), other.view())?)
    })?;
    Ok(wins.iter().filter(|w| **w).count() as f64 / wins.len() as f64)
}
