use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use taps_core::captions::{Caption, CaptionDataset};
use taps_core::embedding::EmbeddingVector;
use taps_core::metrics::{frechet_distance, r_precision_embedded, random_caption_pool, FeatureSet, RankingQuery};

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|j| shift + scale * (1.0 + j as f64 * 0.2) * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

#[test]
fn frechet_invariant_under_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let d = 6;
    let a = gaussian_rows(&mut rng, 300, d, 0.0, 1.0);
    let b = gaussian_rows(&mut rng, 250, d, 0.4, 0.7);
    let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = m.qr().q();
    let rotate = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| (0..d).map(|i| (0..d).map(|j| q[(i, j)] * r[j]).sum()).collect())
            .collect()
    };
    let fd = frechet_distance(&FeatureSet::new("x", a.clone()).unwrap(), &FeatureSet::new("x", b.clone()).unwrap()).unwrap();
    let fr = frechet_distance(&FeatureSet::new("x", rotate(&a)).unwrap(), &FeatureSet::new("x", rotate(&b)).unwrap()).unwrap();
    assert!((fd - fr).abs() < 1e-6, "{fd} vs {fr}");
}

#[test]
fn frechet_one_dimensional_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let xa: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 3.0).collect();
        let xb: Vec<f64> = (0..70).map(|_| rng.random::<f64>() - 1.0).collect();
        let moments = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
            (m, v.sqrt())
        };
        let (ma, sa) = moments(&xa);
        let (mb, sb) = moments(&xb);
        let want = (ma - mb).powi(2) + (sa - sb).powi(2);
        let rows = |x: &[f64]| x.iter().map(|v| vec![*v]).collect::<Vec<_>>();
        let got = frechet_distance(&FeatureSet::new("x", rows(&xa)).unwrap(), &FeatureSet::new("x", rows(&xb)).unwrap()).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingVector {
    EmbeddingVector::normalize((0..d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

#[test]
fn r_precision_deterministic_and_monotone_in_r() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 8;
    let pool: Vec<String> = (0..60).map(|i| format!("a pool caption {i}")).collect();
    let pool_e: Vec<EmbeddingVector> = pool.iter().map(|_| unit(&mut rng, d)).collect();
    let queries: Vec<RankingQuery> = (0..40)
        .map(|i| RankingQuery {
            image: unit(&mut rng, d),
            caption: format!("a true caption {i}"),
            caption_embedding: unit(&mut rng, d),
        })
        .collect();
    let mut last = 1.0;
    for r in [1, 2, 5, 10, 20, 40, 61] {
        let a = r_precision_embedded(&queries, &pool, &pool_e, r, 99).unwrap();
        let b = r_precision_embedded(&queries, &pool, &pool_e, r, 99).unwrap();
        assert_eq!(a, b);
        assert!(a <= last, "R = {r}: {a} > {last}");
        last = a;
    }
    assert_eq!(r_precision_embedded(&queries, &pool, &pool_e, 1, 99).unwrap(), 1.0);
    assert!(r_precision_embedded(&queries, &pool, &pool_e, 62, 99).is_err());
}

fn caption(noun: &str, adjs: &[&str]) -> Caption {
    let adjectives: Vec<String> = adjs.iter().map(|s| s.to_string()).collect();
    Caption {
        text: taps_core::captions::render_template(&adjectives, noun),
        noun: noun.into(),
        adjectives,
        score: 0.0,
        object_id: "o".into(),
    }
}

#[test]
fn pool_noun_marginals_match_dataset() {
    let nouns: Vec<String> = (0..20).map(|i| format!("noun{i}")).collect();
    let adjs: Vec<String> = (0..200).map(|i| format!("adj{i}")).collect();
    let mut ds = CaptionDataset::new(8, "test");
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..400 {
        // skewed: low indices more common
        let n = &nouns[(rng.random::<f64>().powi(2) * 20.0) as usize];
        let a = &adjs[i % 200];
        let b = &adjs[(i * 7 + 1) % 200];
        if i % 3 == 0 && a != b {
            ds.records.push(caption(n, &[a, b]));
        } else {
            ds.records.push(caption(n, &[a]));
        }
    }
    let mut want = BTreeMap::<String, f64>::new();
    for c in &ds.records {
        *want.entry(c.noun.clone()).or_default() += 1.0 / ds.records.len() as f64;
    }
    let mut got = BTreeMap::<String, f64>::new();
    let mut total = 0.0;
    for seed in 0..100 {
        let pool = random_caption_pool(&ds, 100, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for t in &pool {
            *got.entry(t.rsplit(' ').next().unwrap().to_string()).or_default() += 1.0;
            total += 1.0;
            assert!(!ds.records.iter().any(|c| &c.text == t));
        }
    }
    assert_eq!(total, 10_000.0);
    let tv: f64 = nouns
        .iter()
        .map(|n| (got.get(n).copied().unwrap_or(0.0) / total - want.get(n).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.05, "total variation {tv}");
}

#[test]
fn pool_from_single_caption_is_an_error() {
    let mut ds = CaptionDataset::new(8, "test");
    ds.records.push(caption("chair", &["red"]));
    let err = random_caption_pool(&ds, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(err.to_string().contains("unseen captions"), "{err}");
}
