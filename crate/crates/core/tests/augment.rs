use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use taps_core::augment::{checkerboard, fourier_channel_raw, gaussian_background, AugmentConfig, BackgroundKind};

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Mean absolute difference between horizontally adjacent pixels.
fn roughness(v: &[f64], h: usize, w: usize) -> f64 {
    let mut acc = 0.0;
    for r in 0..h {
        for c in 0..w - 1 {
            acc += (v[r * w + c + 1] - v[r * w + c]).abs();
        }
    }
    acc / (h * (w - 1)) as f64
}

#[test]
fn steeper_decay_gives_smoother_textures() {
    let (h, w) = (32, 32);
    let mut smooth_wins = 0;
    for seed in 0..20 {
        let flat = fourier_channel_raw(h, w, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
        let steep = fourier_channel_raw(h, w, 8.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let rf = roughness(&flat, h, w) / std_dev(&flat);
        let rs = roughness(&steep, h, w) / std_dev(&steep);
        if rs < rf {
            smooth_wins += 1;
        }
    }
    assert_eq!(smooth_wins, 20);
}

#[test]
fn gaussian_background_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bg = gaussian_background(64, 64, 0.5, 0.15, &mut rng).unwrap();
    let m = bg.pixels().iter().sum::<f64>() / bg.pixels().len() as f64;
    assert!((m - 0.5).abs() < 0.01, "{m}");
    assert!(bg.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn checkerboard_cell_parity() {
    let a = [0.1, 0.2, 0.3];
    let b = [0.9, 0.8, 0.7];
    let bg = checkerboard(16, 16, 2, a, b).unwrap();
    // (5/2 + 7/2) = 2 + 3 = 5, odd
    assert_eq!(bg.rgb(5, 7), b);
    assert_eq!(bg.rgb(4, 5), a);
    assert!(checkerboard(16, 16, 0, a, b).is_err());
}

#[test]
fn background_kinds_are_uniform() {
    let cfg = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut freq = BTreeMap::<String, usize>::new();
    for _ in 0..3000 {
        let bg = cfg.sample(8, 8, &mut rng).unwrap();
        assert_ne!(bg.kind, BackgroundKind::Plain);
        *freq.entry(format!("{:?}", bg.kind)).or_default() += 1;
    }
    assert_eq!(freq.len(), 3);
    for (k, c) in freq {
        let f = c as f64 / 3000.0;
        assert!((f - 1.0 / 3.0).abs() <= 0.05, "{k}: {f}");
    }
}

#[test]
fn background_rebuilds_from_its_seed() {
    let cfg = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..30 {
        let bg = cfg.sample(12, 12, &mut rng).unwrap();
        let again = cfg.generate(bg.kind, bg.seed, 12, 12).unwrap();
        assert_eq!(bg, again);
    }
}
