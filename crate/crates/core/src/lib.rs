//! Multimodal survival prediction toolkit.
//!
//! Builds risk models for right-censored time-to-event cohorts from two data
//! streams — tabular covariates (mutations, demographics, treatment history)
//! and bags of histology patch embeddings — and fuses them:
//!
//! - [`stats`] — concordance index, Kaplan-Meier, log-rank, rank/t tests
//! - [`cox`] — the shared negative log partial likelihood loss and an
//!   L1/L2-regularized linear Cox model (also used as every fusion head)
//! - [`dense`] — compact MLP and self-normalizing (SELU) networks trained on
//!   the Cox loss with manual backpropagation
//! - [`attention`] — a transformer encoder aggregating a patient's patch
//!   embedding bag into a 32-d embedding and a risk score, with attention
//!   rollout for per-patch attribution
//! - [`fusion`] — three-stage training and the four early/late fusion
//!   configurations
//! - [`eval`] — leakage-free nested cross-validation, hazard stratification,
//!   model comparison
//! - [`synth`] — ground-truth synthetic cohort generation
//! - [`io`] — cohort file formats, checkpoints, reports, KM exports

pub mod attention;
pub mod cox;
pub mod dense;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod mat;
pub mod numeric;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
