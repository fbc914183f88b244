//! Deterministic from-scratch provider.
//!
//! Text side: character trigrams of the lowercased, trimmed text, padded with
//! STX/ETX boundary markers, hashed into [`TEXT_BUCKETS`] count buckets, then
//! projected by a seed-derived Gaussian matrix and L2-normalized.
//!
//! Image side: 4×4 grid mean-pooling of R, G, B, A (64 features), a
//! seed-derived Gaussian projection, and L2 normalization. Every step is
//! smooth, so the map pixels → embedding has an exact gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    check_text, l2_norm, DifferentiableImageEncoder, EmbeddingProvider, EmbeddingVector,
    ProviderDescriptor,
};
use crate::digest::{derive_seed, mix64, ContentHasher};
use crate::error::{Error, Result};
use crate::raster::{Raster, MIN_SIDE};

pub const TEXT_BUCKETS: usize = 4096;
pub const GRID: usize = 4;
pub const IMAGE_FEATURES: usize = GRID * GRID * 4;

/// Sub-stream ids for the projection matrices (see [`derive_seed`]).
pub const TEXT_STREAM: u64 = 1;
pub const IMAGE_STREAM: u64 = 2;
pub const FALLBACK_STREAM: u64 = 3;

const GUARD_NORM: f64 = 1e-8;
const BOUNDARY_START: char = '\u{2}';
const BOUNDARY_END: char = '\u{3}';

/// FNV-1a over the UTF-8 bytes of `trigram`, keyed by `seed`, followed by a
/// SplitMix64 finalizer.
pub fn fnv_trigram_hash(seed: u64, trigram: &[char]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ mix64(seed);
    let mut buf = [0u8; 4];
    for c in trigram {
        for b in c.encode_utf8(&mut buf).bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    mix64(h)
}

#[derive(Debug, Clone)]
pub struct ReferenceProvider {
    seed: u64,
    dim: usize,
    /// TEXT_BUCKETS × dim, row-major.
    text_projection: Vec<f64>,
    /// IMAGE_FEATURES × dim, row-major.
    image_projection: Vec<f64>,
    fallback: Vec<f64>,
}

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_SEED: u64 = 0x7A95_3D00;

impl Default for ReferenceProvider {
    fn default() -> Self {
        Self::new(DEFAULT_SEED, DEFAULT_DIM)
    }
}

fn gaussian_matrix(seed: u64, stream: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Gradient-carrying state from a forward image encode.
#[derive(Debug, Clone)]
pub struct ImageTrace {
    height: usize,
    width: usize,
    pre_norm: f64,
    unit: Vec<f64>,
    guarded: bool,
}

impl ReferenceProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let text_projection = gaussian_matrix(seed, TEXT_STREAM, TEXT_BUCKETS * dim);
        let image_projection = gaussian_matrix(seed, IMAGE_STREAM, IMAGE_FEATURES * dim);
        let mut fallback = gaussian_matrix(seed, FALLBACK_STREAM, dim);
        let n = l2_norm(&fallback);
        fallback.iter_mut().for_each(|v| *v /= n);
        Self {
            seed,
            dim,
            text_projection,
            image_projection,
            fallback,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn text_projection(&self) -> &[f64] {
        &self.text_projection
    }

    pub fn image_projection(&self) -> &[f64] {
        &self.image_projection
    }

    /// Trigram bucket counts for `text`.
    pub fn trigram_counts(&self, text: &str) -> Result<Vec<(usize, f64)>> {
        let text = check_text(text)?.to_lowercase();
        let mut chars = Vec::with_capacity(text.chars().count() + 2);
        chars.push(BOUNDARY_START);
        chars.extend(text.chars());
        chars.push(BOUNDARY_END);
        let mut counts = std::collections::BTreeMap::new();
        for tri in chars.windows(3) {
            let bucket = (fnv_trigram_hash(self.seed, tri) % TEXT_BUCKETS as u64) as usize;
            *counts.entry(bucket).or_insert(0.0) += 1.0;
        }
        Ok(counts.into_iter().collect())
    }

    /// 4×4 grid means of R, G, B, A; feature index is `(cell_row*4 + cell_col)*4 + channel`.
    pub fn pool_features(image: &Raster) -> [f64; IMAGE_FEATURES] {
        let (h, w) = (image.height(), image.width());
        let data = image.data();
        let mut feats = [0.0; IMAGE_FEATURES];
        for gr in 0..GRID {
            let (r0, r1) = (gr * h / GRID, (gr + 1) * h / GRID);
            for gc in 0..GRID {
                let (c0, c1) = (gc * w / GRID, (gc + 1) * w / GRID);
                let base = (gr * GRID + gc) * 4;
                let mut acc = [0.0; 4];
                for r in r0..r1 {
                    let row = &data[(r * w + c0) * 4..(r * w + c1) * 4];
                    for px in row.chunks_exact(4) {
                        for ch in 0..4 {
                            acc[ch] += px[ch];
                        }
                    }
                }
                let n = ((r1 - r0) * (c1 - c0)) as f64;
                for ch in 0..4 {
                    feats[base + ch] = acc[ch] / n;
                }
            }
        }
        feats
    }

    fn project_image(&self, feats: &[f64; IMAGE_FEATURES]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for (f, &x) in feats.iter().enumerate() {
            let row = &self.image_projection[f * self.dim..(f + 1) * self.dim];
            for (acc, p) in y.iter_mut().zip(row) {
                *acc += x * p;
            }
        }
        y
    }

    fn check_image(image: &Raster) -> Result<()> {
        if image.height() < MIN_SIDE || image.width() < MIN_SIDE {
            return Err(Error::InvalidInput(format!(
                "image is {}x{}, minimum is {MIN_SIDE}x{MIN_SIDE}",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }
}

impl EmbeddingProvider for ReferenceProvider {
    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            name: "reference".into(),
            dimension: self.dim,
            differentiable: true,
            seed: Some(self.seed),
        }
    }

    fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        let counts = self.trigram_counts(text)?;
        let mut y = vec![0.0; self.dim];
        for (bucket, count) in counts {
            let row = &self.text_projection[bucket * self.dim..(bucket + 1) * self.dim];
            for (acc, p) in y.iter_mut().zip(row) {
                *acc += count * p;
            }
        }
        let n = l2_norm(&y);
        if n < GUARD_NORM {
            return Ok(EmbeddingVector(self.fallback.clone()));
        }
        y.iter_mut().for_each(|v| *v /= n);
        Ok(EmbeddingVector(y))
    }

    fn encode_image(&self, image: &Raster) -> Result<EmbeddingVector> {
        self.encode_image_traced(image).map(|(e, _)| e)
    }

    fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.update_u64(self.seed)
            .update_u64(self.dim as u64)
            .update_f64s(&self.text_projection)
            .update_f64s(&self.image_projection)
            .update_f64s(&self.fallback);
        h.finish_hex()
    }

    fn as_differentiable(&self) -> Option<&dyn DifferentiableImageEncoder> {
        Some(self)
    }
}

impl DifferentiableImageEncoder for ReferenceProvider {
    fn encode_image_traced(&self, image: &Raster) -> Result<(EmbeddingVector, ImageTrace)> {
        Self::check_image(image)?;
        let feats = Self::pool_features(image);
        let mut y = self.project_image(&feats);
        let n = l2_norm(&y);
        let guarded = n < GUARD_NORM;
        if guarded {
            y = self.fallback.clone();
        } else {
            y.iter_mut().for_each(|v| *v /= n);
        }
        let trace = ImageTrace {
            height: image.height(),
            width: image.width(),
            pre_norm: n,
            unit: y.clone(),
            guarded,
        };
        Ok((EmbeddingVector(y), trace))
    }

    fn image_backward(&self, trace: &ImageTrace, grad: &[f64]) -> Vec<f64> {
        let (h, w) = (trace.height, trace.width);
        let mut out = vec![0.0; h * w * 4];
        if trace.guarded {
            return out;
        }
        // d(y/|y|) = (I - e eᵀ) / |y|
        let proj = super::dot(&trace.unit, grad);
        let dy: Vec<f64> = grad
            .iter()
            .zip(&trace.unit)
            .map(|(g, e)| (g - e * proj) / trace.pre_norm)
            .collect();
        let mut dfeat = [0.0; IMAGE_FEATURES];
        for (f, slot) in dfeat.iter_mut().enumerate() {
            let row = &self.image_projection[f * self.dim..(f + 1) * self.dim];
            *slot = super::dot(row, &dy);
        }
        for gr in 0..GRID {
            let (r0, r1) = (gr * h / GRID, (gr + 1) * h / GRID);
            for gc in 0..GRID {
                let (c0, c1) = (gc * w / GRID, (gc + 1) * w / GRID);
                let n = ((r1 - r0) * (c1 - c0)) as f64;
                let base = (gr * GRID + gc) * 4;
                for r in r0..r1 {
                    for c in c0..c1 {
                        let i = (r * w + c) * 4;
                        for ch in 0..4 {
                            out[i + ch] = dfeat[base + ch] / n;
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine;

    #[test]
    fn text_is_deterministic_and_normalized() {
        let p = ReferenceProvider::new(11, 32);
        let a = p.encode_text("a red car").unwrap();
        let b = p.encode_text("a red car").unwrap();
        assert_eq!(a, b);
        assert!((l2_norm(a.values()) - 1.0).abs() < 1e-12);
        // trimming and case folding
        assert_eq!(a, p.encode_text("  A Red CAR ").unwrap());
    }

    #[test]
    fn empty_text_rejected() {
        let p = ReferenceProvider::new(1, 8);
        assert!(matches!(p.encode_text("   "), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn seeds_give_different_spaces() {
        let a = ReferenceProvider::new(1, 16).encode_text("chair").unwrap();
        let b = ReferenceProvider::new(2, 16).encode_text("chair").unwrap();
        assert!(cosine(&a, &b).unwrap() < 0.99);
    }

    #[test]
    fn small_image_rejected() {
        let p = ReferenceProvider::new(1, 8);
        let img = Raster::filled(3, 10, [0.5; 4]);
        assert!(matches!(p.encode_image(&img), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pooling_handles_uneven_grid() {
        // 6 rows -> cells of 1,2,1,2 rows
        let mut img = Raster::filled(6, 5, [0.0, 0.0, 0.0, 1.0]);
        img.set_pixel(0, 0, [1.0, 0.0, 0.0, 1.0]);
        let f = ReferenceProvider::pool_features(&img);
        // cell (0,0) spans row 0 and col 0 only (5*0/4..5*1/4 = 0..1)
        assert_eq!(f[0], 1.0);
        assert_eq!(f[4], 0.0);
    }
}
