use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use taps_core::captions::{Caption, CaptionDataset};
use taps_core::dataset::{assign_splits, split_counts, DatasetManifest, ManifestRecord, Split, TrainingSet};
use taps_core::raster::{CameraPose, Raster, RenderedImage};

/// Hamilton apportionment written out with exact fractions.
fn largest_remainder(n: usize, weights: [usize; 3]) -> [usize; 3] {
    let total: usize = weights.iter().sum();
    let quotas: Vec<(usize, usize)> = weights.iter().map(|w| (n * w / total, n * w % total)).collect();
    let mut out = [quotas[0].0, quotas[1].0, quotas[2].0];
    let mut order = vec![0, 1, 2];
    order.sort_by_key(|&i| (std::cmp::Reverse(quotas[i].1), i));
    let short = n - out.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}

fn manifest(n: usize) -> DatasetManifest {
    let mut m = DatasetManifest::new(".");
    for i in 0..n {
        m.push(ManifestRecord {
            object_id: format!("object-{i:03}"),
            class_name: "chair".into(),
            image_path: format!("images/{i}.png").into(),
            pose: CameraPose::new(0.1, 0.2),
        })
        .unwrap();
    }
    m
}

#[test]
fn twenty_objects_split_fourteen_two_four() {
    assert_eq!(split_counts(20), [14, 2, 4]);
    let m = assign_splits(&manifest(20), 7);
    assert_eq!(m.objects_in(Split::Train).len(), 14);
    assert_eq!(m.objects_in(Split::Validation).len(), 2);
    assert_eq!(m.objects_in(Split::Test).len(), 4);
}

#[test]
fn split_counts_match_independent_apportionment() {
    for n in 0..500 {
        assert_eq!(split_counts(n), largest_remainder(n, [7, 1, 2]), "n = {n}");
    }
}

#[test]
fn splits_are_disjoint_and_seed_stable() {
    let m = manifest(37);
    let a = assign_splits(&m, 99);
    let b = assign_splits(&m, 99);
    let listing = |m: &DatasetManifest| {
        [Split::Train, Split::Validation, Split::Test].map(|s| m.objects_in(s))
    };
    assert_eq!(listing(&a), listing(&b));
    let all: std::collections::BTreeSet<String> = listing(&a).concat().into_iter().collect();
    assert_eq!(all.len(), 37);
    let mut shuffled = m.clone();
    shuffled.records.reverse();
    assert_eq!(listing(&assign_splits(&shuffled, 99)), listing(&a));
}

#[test]
fn caption_draw_is_uniform_within_object() {
    let img = RenderedImage {
        raster: Raster::filled(4, 4, [0.0, 0.0, 0.0, 1.0]),
        pose: CameraPose::new(0.0, 0.0),
        object_id: "o".into(),
    };
    let mut ds = CaptionDataset::new(64, "test");
    for i in 0..4 {
        ds.records.push(Caption {
            text: format!("a c{i} chair"),
            noun: "chair".into(),
            adjectives: vec![format!("c{i}")],
            score: 0.0,
            object_id: "o".into(),
        });
    }
    let set = TrainingSet::new(vec![img], &ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut freq = BTreeMap::<String, usize>::new();
    for _ in 0..10_000 {
        *freq.entry(set.sample_training_pair(&mut rng).caption.text.clone()).or_default() += 1;
    }
    assert_eq!(freq.len(), 4);
    for (t, c) in freq {
        let f = c as f64 / 10_000.0;
        assert!((f - 0.25).abs() <= 0.03, "{t}: {f}");
    }
}
