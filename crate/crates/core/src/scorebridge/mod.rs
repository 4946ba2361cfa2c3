//! Evaluator-agnostic scoring: the scorer interface, deterministic mock scorers, the
//! line-delimited JSON bridge to external processes, the score cache and the text-embedding
//! valence analysis.

mod bridge;
mod cache;
mod mock;
mod valence;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bridge::{BridgeConfig, ExternalScorer, Handshake};
pub use cache::{CacheEntry, CachedScorer, ScoreCache, CACHE_FILE};
pub use mock::{
    item_quality, MockScorer, MockSpec, PlantedShift, Provenance, ProvenanceRegistry,
};
pub use valence::{
    embed_words, valence_analysis, ValenceError, ValenceReport, NEGATIVE_POLE, POSITIVE_POLE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("scorer unavailable{}: {reason}", item_id.as_ref().map(|i| format!(" for {i}")).unwrap_or_default())]
    Unavailable { item_id: Option<String>, reason: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("score {score} outside declared range [{lo}, {hi}]")]
    OutOfRange { score: f64, lo: f64, hi: f64 },
}

impl ScoreError {
    pub fn unavailable(reason: impl Into<String>) -> Self {
        ScoreError::Unavailable { item_id: None, reason: reason.into() }
    }

    pub fn with_item(self, item: &str) -> Self {
        match self {
            ScoreError::Unavailable { reason, .. } => {
                ScoreError::Unavailable { item_id: Some(item.to_string()), reason }
            }
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub score: bool,
    pub embed_text: bool,
}

/// An image on disk and the SHA-256 of its bytes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl ImageRef {
    pub fn from_path(path: &Path) -> Result<Self, ScoreError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ScoreError::unavailable(format!("cannot read {}: {e}", path.display())))?;
        Ok(Self { path: path.to_path_buf(), sha256: crate::sha256_hex(&bytes) })
    }
}

pub trait Scorer: Send + Sync {
    fn id(&self) -> &str;
    fn range(&self) -> (f64, f64);
    fn capabilities(&self) -> Capabilities;
    fn score(&self, image: &ImageRef, caption: &str) -> Result<f64, ScoreError>;
    fn embed_text(&self, caption: &str) -> Result<Vec<f64>, ScoreError>;
}

/// A score tied back to the item and variant it was computed for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub item_id: String,
    pub variant_key: String,
    pub scorer_id: String,
    pub score: f64,
    pub cached: bool,
}

pub(crate) fn check_range(score: f64, range: (f64, f64)) -> Result<f64, ScoreError> {
    if !score.is_finite() || score < range.0 || score > range.1 {
        return Err(ScoreError::OutOfRange { score, lo: range.0, hi: range.1 });
    }
    Ok(score)
}
