use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use taps_core::embedding::{EmbeddingProvider, ReferenceProvider, DEFAULT_DIM, DEFAULT_SEED, IMAGE_FEATURES};
use taps_core::raster::Raster;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Straight-line text embedding: boundary-padded trigrams, keyed FNV-1a,
/// bucket counts, Gaussian projection regenerated from the seed, L2 norm.
fn text_oracle(seed: u64, dim: usize, text: &str) -> Vec<f64> {
    let stream_seed = splitmix(seed ^ splitmix(1));
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let proj: Vec<f64> = (0..4096 * dim).map(|_| rng.sample(StandardNormal)).collect();

    let lowered = text.trim().to_lowercase();
    let mut chars = vec!['\u{2}'];
    chars.extend(lowered.chars());
    chars.push('\u{3}');
    let mut y = vec![0.0; dim];
    let mut counts = std::collections::BTreeMap::<usize, f64>::new();
    for i in 0..chars.len() - 2 {
        let mut h: u64 = 0xcbf29ce484222325 ^ splitmix(seed);
        let s: String = chars[i..i + 3].iter().collect();
        for b in s.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        *counts.entry((splitmix(h) % 4096) as usize).or_default() += 1.0;
    }
    for (bucket, count) in counts {
        for d in 0..dim {
            y[d] += count * proj[bucket * dim + d];
        }
    }
    let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    y.iter().map(|v| v / n).collect()
}

#[test]
fn text_embedding_matches_straight_line_oracle() {
    let p = ReferenceProvider::new(DEFAULT_SEED, DEFAULT_DIM);
    for text in ["a red car", "A Red Car ", "a shiny wooden chair", "ünïcode stool"] {
        let got = p.encode_text(text).unwrap();
        let want = text_oracle(DEFAULT_SEED, DEFAULT_DIM, text);
        for (a, b) in got.values().iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{text}: {a} vs {b}");
        }
    }
}

#[test]
fn text_embedding_unit_norm() {
    let p = ReferenceProvider::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let len = rng.random_range(1..40);
        let s: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        let n: f64 = p.encode_text(&s).unwrap().values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}

#[test]
fn uniform_image_is_projection_of_replicated_row() {
    let p = ReferenceProvider::default();
    let rgba = [0.2, 0.6, 0.9, 1.0];
    let img = Raster::filled(20, 24, rgba);
    let got = p.encode_image(&img).unwrap();
    let proj = p.image_projection();
    let dim = p.dim();
    let mut y = vec![0.0; dim];
    for f in 0..IMAGE_FEATURES {
        for d in 0..dim {
            y[d] += rgba[f % 4] * proj[f * dim + d];
        }
    }
    let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (a, b) in got.values().iter().zip(&y) {
        assert!((a - b / n).abs() < 1e-12);
    }
    assert_eq!(got, p.encode_image(&img).unwrap());
}

#[test]
fn image_gradient_matches_finite_differences() {
    use taps_core::embedding::DifferentiableImageEncoder;
    let p = ReferenceProvider::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<f64> = (0..12 * 12 * 4).map(|_| rng.random::<f64>()).collect();
    let img = Raster::new(12, 12, data.clone()).unwrap();
    let weights: Vec<f64> = (0..p.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
    let objective = |d: &[f64]| -> f64 {
        let e = p.encode_image(&Raster::new(12, 12, d.to_vec()).unwrap()).unwrap();
        e.values().iter().zip(&weights).map(|(a, b)| a * b).sum()
    };
    let (_, trace) = p.encode_image_traced(&img).unwrap();
    let grad = p.image_backward(&trace, &weights);
    let h = 1e-5;
    for _ in 0..20 {
        let i = rng.random_range(0..data.len());
        let mut up = data.clone();
        up[i] += h;
        let mut down = data.clone();
        down[i] -= h;
        let numeric = (objective(&up) - objective(&down)) / (2.0 * h);
        let err = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-10);
        assert!(err < 1e-5, "pixel {i}: {} vs {numeric}", grad[i]);
    }
}
