//! Joint text-image embedding space: the provider contract, a deterministic
//! reference provider, an on-disk cache, and a client for an external
//! embedding service.

mod cache;
mod reference;
mod service;

pub use cache::EmbeddingCache;
pub use reference::{
    fnv_trigram_hash, ImageTrace, ReferenceProvider, DEFAULT_DIM, DEFAULT_SEED, FALLBACK_STREAM, GRID,
    IMAGE_FEATURES, IMAGE_STREAM, TEXT_BUCKETS, TEXT_STREAM,
};
pub use service::{ServiceProvider, PROTOCOL};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Tolerance on the unit-norm invariant.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// A unit-norm vector in the shared text-image space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps an already-normalized vector, checking the norm.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite embedding entry".into()));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "embedding norm {norm} is not 1"
            )));
        }
        Ok(Self(values))
    }

    /// Scales `values` to unit length.
    pub fn normalize(mut values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidInput(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(dot(a.values(), b.values()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderDescriptor {
    pub name: String,
    pub dimension: usize,
    /// Whether the image encoder exposes exact gradients.
    pub differentiable: bool,
    pub seed: Option<u64>,
}

/// Maps text and images into one embedding space. Implementations are
/// read-only after construction.
pub trait EmbeddingProvider: Send + Sync {
    fn descriptor(&self) -> ProviderDescriptor;

    fn encode_text(&self, text: &str) -> Result<EmbeddingVector>;

    fn encode_image(&self, image: &Raster) -> Result<EmbeddingVector>;

    /// Hash of every parameter the provider uses; must never change.
    fn content_hash(&self) -> String;

    fn as_differentiable(&self) -> Option<&dyn DifferentiableImageEncoder> {
        None
    }

    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.encode_text(t)).collect()
    }
}

/// Image encoder with an exact reverse-mode derivative.
pub trait DifferentiableImageEncoder: Send + Sync {
    fn encode_image_traced(&self, image: &Raster) -> Result<(EmbeddingVector, ImageTrace)>;

    /// Pulls a gradient on the embedding back to a gradient on the raster
    /// buffer (same layout as [`Raster::data`]).
    fn image_backward(&self, trace: &ImageTrace, grad_embedding: &[f64]) -> Vec<f64>;
}

pub(crate) fn check_text(text: &str) -> Result<&str> {
    let t = text.trim();
    if t.is_empty() {
        return Err(Error::InvalidInput("text is empty".into()));
    }
    Ok(t)
}
