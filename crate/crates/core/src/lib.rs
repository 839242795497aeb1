//! Perceptually aligned music embeddings.
//!
//! The crate covers the whole pipeline: psychoacoustic perturbations of audio
//! clips, a frozen frame encoder (or externally computed embeddings), a
//! FiLM-conditioned transformer projection head trained with a symmetric
//! sequence-level InfoNCE objective, perceptual and signal-level metrics with
//! a rank-correlation evaluation harness, and adversarial attacks and
//! adversarial training in the learned embedding space.

pub mod adversarial;
pub mod audio;
pub mod dsp;
pub mod embedding;
pub mod experiment;
pub mod metrics;
pub mod error;
pub mod nn;
pub mod par;
pub mod pcsct;
pub mod perturb;
pub mod rng;

pub use error::{Error, Result};
