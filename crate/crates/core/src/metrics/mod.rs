//! Perceptual distance, objective baselines, rank correlation, 2AFC scoring
//! and the evaluation protocol.

mod eval;
mod fad;
mod judge;
mod rank;
mod signal;

pub use eval::{
    build_dataset, evaluate_metric, split_references, version_id, EvalDataset, EvalVersion, JudgeValidator,
    MetricResult, Orientation,
};
pub use fad::{frechet_distance, gaussian_stats, GaussianStats};
pub use judge::{
    derive_2afc_scores, judge_round_robin, JudgeConfig, JudgmentRecord, ScoreRecord, Side, WinCount,
    PAIRS_PER_REFERENCE, VERSIONS_PER_REFERENCE,
};
pub use rank::{average_ranks, pearson, spearman_rho};
pub use signal::{lsd, snr_db, LSD_FLOOR, SNR_CAP_DB};

use ndarray::{Array1, ArrayView2};

use crate::embedding::EmbeddingSequence;
use crate::error::Result;
use crate::pcsct::PcsctModel;

/// Time-mean of the NULL-conditioned PAMT projection of an encoder sequence.
pub fn pamt_pooled(e: &EmbeddingSequence, model: &PcsctModel<f32>) -> Result<Array1<f64>> {
    let input = e.data();
    let (z, _) = model.forward_sequence(input, &model.null_condition())?;
    Ok(PcsctModel::pooled(&z).mapv(|v| v as f64))
}

/// `‖mean_pool(Z(x)) − mean_pool(Z(y))‖₂` with NULL conditioning on both sides.
pub fn d_pamt(x: &EmbeddingSequence, y: &EmbeddingSequence, model: &PcsctModel<f32>) -> Result<f64> {
    let a = pamt_pooled(x, model)?;
    let b = pamt_pooled(y, model)?;
    Ok(pooled_distance(&a, &b))
}

pub fn pooled_distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d).sqrt()
}

/// Fréchet distance between the frame distributions of two sequences.
pub fn frame_fad(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    let rows = |m: ArrayView2<'_, f64>| m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    frechet_distance(&gaussian_stats(&rows(a))?, &gaussian_stats(&rows(b))?)
}
