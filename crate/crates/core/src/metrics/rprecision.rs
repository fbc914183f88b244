use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::digest::derive_seed;
use crate::embedding::{dot, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::raster::Raster;

pub const DEFAULT_R: usize = 100;

/// One image to score, with its caption already embedded.
#[derive(Debug, Clone)]
pub struct RankingQuery {
    pub image: EmbeddingVector,
    pub caption: String,
    pub caption_embedding: EmbeddingVector,
}

/// First `k` entries of a seeded Fisher–Yates shuffle of `0..n`. Samples for
/// smaller `k` are prefixes of samples for larger `k` under the same RNG.
pub fn partial_shuffle<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Distractor indices into `pool` for query `index`: `r − 1` entries whose
/// text differs from `caption`.
pub fn sample_distractors(pool: &[String], caption: &str, r: usize, seed: u64, index: usize) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = (0..pool.len()).filter(|&i| pool[i] != caption).collect();
    if r == 0 || eligible.len() < r - 1 {
        return Err(Error::InvalidInput(format!(
            "R = {r} needs {} distractors but only {} pool captions differ from {caption:?}",
            r.saturating_sub(1),
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64));
    Ok(partial_shuffle(eligible.len(), r - 1, &mut rng)
        .into_iter()
        .map(|i| eligible[i])
        .collect())
}

/// Fraction of queries whose true caption scores strictly above every
/// sampled distractor. Ties are failures.
pub fn r_precision_embedded(
    queries: &[RankingQuery],
    pool: &[String],
    pool_embeddings: &[EmbeddingVector],
    r: usize,
    seed: u64,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::InvalidInput("no generated samples to score".into()));
    }
    if pool.len() != pool_embeddings.len() {
        return Err(Error::InvalidInput("pool texts and embeddings differ in length".into()));
    }
    let hits: Vec<Result<bool>> = queries
        .par_iter()
        .enumerate()
        .map(|(k, q)| {
            let distractors = sample_distractors(pool, &q.caption, r, seed, k)?;
            let truth = dot(q.image.values(), q.caption_embedding.values());
            Ok(distractors
                .iter()
                .all(|&d| truth > dot(q.image.values(), pool_embeddings[d].values())))
        })
        .collect();
    let mut wins = 0usize;
    for h in hits {
        wins += h? as usize;
    }
    Ok(wins as f64 / queries.len() as f64)
}

/// Encodes images, true captions and the pool with `provider`, then scores.
pub fn r_precision(
    generated: &[(Raster, String)],
    pool: &[String],
    provider: &dyn EmbeddingProvider,
    r: usize,
    seed: u64,
) -> Result<f64> {
    let queries = generated
        .iter()
        .map(|(img, cap)| {
            Ok(RankingQuery {
                image: provider.encode_image(img)?,
                caption: cap.clone(),
                caption_embedding: provider.encode_text(cap)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&str> = pool.iter().map(String::as_str).collect();
    let pool_embeddings = provider.encode_texts(&refs)?;
    r_precision_embedded(&queries, pool, &pool_embeddings, r, seed)
}

/// Mean and sample standard deviation over `repetitions` seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub repetitions: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            repetitions: n,
        }
    }
}

pub fn r_precision_repeated(
    queries: &[RankingQuery],
    pool: &[String],
    pool_embeddings: &[EmbeddingVector],
    r: usize,
    seed: u64,
    repetitions: usize,
) -> Result<Spread> {
    if repetitions == 0 {
        return Err(Error::InvalidInput("repetitions must be positive".into()));
    }
    let values = (0..repetitions as u64)
        .map(|i| r_precision_embedded(queries, pool, pool_embeddings, r, derive_seed(seed, 0x5EED_0000 + i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Spread::of(&values))
}
