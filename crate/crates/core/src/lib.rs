//! Invariance auditing for image–caption scoring functions.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`catalog`]: single-object curation, coverage bins, taxonomy harmonization.
//! - [`perturb`]: flips, rotations, anchor repositioning, blur, and compositing diagnostics.
//! - [`captiongen`]: templated captions, lexicons, length-matched controls, natural-caption rewrites.
//! - [`scorebridge`]: scorer registry, deterministic mock scorers, the line-delimited JSON
//!   bridge to external evaluators, the score cache, and text-embedding valence analysis.
//! - [`stats`]: relative change, BCa bootstrap, Shapiro–Wilk, paired and multi-level tests,
//!   Holm adjustment, Cliff's delta, rank correlations, and the per-cell paired pipeline.
//! - [`rrf`]: risk-of-ranking-flip estimation at fixed gaps.
//! - [`calibrate`]: sensitivity profiles, invariance-calibrated scores and λ selection.
//! - [`humanval`]: annotation aggregation, Fleiss' κ, refilters and preference accuracy.
//! - [`synth`]: a small rendered corpus with detection manifest for offline runs.
//!
//! Shared record types ([`table`]) are re-exported at the crate root.

pub mod calibrate;
pub mod captiongen;
pub mod catalog;
pub mod humanval;
pub mod perturb;
pub mod rng;
pub mod rrf;
pub mod scorebridge;
pub mod stats;
pub mod synth;
pub mod table;

pub use table::{Axis, Contrast, ContrastFamily, PairKey, ScoreTable};

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
