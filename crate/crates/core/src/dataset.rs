//! Multi-view rendered datasets: manifests, object-level splits, and
//! image/caption pairing for training.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::captions::{Caption, CaptionDataset};
use crate::digest::{derive_seed, mix64};
use crate::error::{Error, Result};
use crate::numfmt::sig9;
use crate::raster::Raster;

pub use crate::raster::{CameraPose, RenderedImage};

const MANIFEST_HEADER: &str = "#taps-manifest v1";
pub const DEFAULT_VIEWS_PER_OBJECT: usize = 24;
pub const LOW_DATA_VIEWS_PER_OBJECT: usize = 100;
pub const LOW_DATA_CLASS: &str = "motorbike";

/// Train/validation/test proportions, in tenths.
pub const SPLIT_TENTHS: [usize; 3] = [7, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub object_id: String,
    pub class_name: String,
    /// Relative to the manifest's directory.
    pub image_path: PathBuf,
    pub pose: CameraPose,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
    splits: BTreeMap<String, Split>,
}

fn check_field(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidInput(format!("{what} {s:?} is empty or contains tab/newline")));
    }
    Ok(())
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, record: ManifestRecord) -> Result<()> {
        check_field(&record.object_id, "object id")?;
        check_field(&record.class_name, "class name")?;
        check_field(&record.image_path.to_string_lossy(), "image path")?;
        self.records.push(record);
        Ok(())
    }

    /// Sorted unique object ids.
    pub fn object_ids(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.object_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn records_for<'a>(&'a self, object_id: &'a str) -> impl Iterator<Item = &'a ManifestRecord> + 'a {
        self.records.iter().filter(move |r| r.object_id == object_id)
    }

    pub fn split_of(&self, object_id: &str) -> Option<Split> {
        self.splits.get(object_id).copied()
    }

    pub fn objects_in(&self, split: Split) -> Vec<String> {
        self.splits
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn image_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.image_path)
    }

    /// Reads the referenced PNG; missing files surface as I/O errors naming the path.
    pub fn load_image(&self, record: &ManifestRecord) -> Result<RenderedImage> {
        let raster = Raster::load_png(&self.image_path(record))?;
        Ok(RenderedImage {
            raster,
            pose: record.pose,
            object_id: record.object_id.clone(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.object_id,
                r.class_name,
                r.image_path.to_string_lossy(),
                sig9(r.pose.azimuth()),
                sig9(r.pose.elevation())
            )
            .unwrap();
        }
        s
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        const WHAT: &str = "manifest";
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::at_line(WHAT, 1, format!("expected header {MANIFEST_HEADER:?}")));
        }
        let mut m = Self::new(root);
        for (i, line) in lines.enumerate() {
            let ln = i + 2;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::at_line(WHAT, ln, format!("expected 5 fields, got {}", f.len())));
            }
            let angle = |s: &str, name: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::at_line(WHAT, ln, format!("bad {name} {s:?}")))
            };
            let azimuth = angle(f[3], "azimuth")?;
            let elevation = angle(f[4], "elevation")?;
            if !(-FRAC_PI_2..=FRAC_PI_2).contains(&elevation) {
                return Err(Error::at_line(WHAT, ln, format!("elevation {elevation} outside [-pi/2, pi/2]")));
            }
            if f[..3].iter().any(|s| s.is_empty()) {
                return Err(Error::at_line(WHAT, ln, "empty field"));
            }
            m.records.push(ManifestRecord {
                object_id: f[0].to_string(),
                class_name: f[1].to_string(),
                image_path: PathBuf::from(f[2]),
                pose: CameraPose::new(azimuth, elevation),
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Parses a manifest; image paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(&text, root)
}

/// Largest-remainder apportionment of `n` objects to train/val/test.
/// Remainder ties go to the earlier split.
pub fn split_counts(n: usize) -> [usize; 3] {
    let total: usize = SPLIT_TENTHS.iter().sum();
    let mut counts = [0; 3];
    let mut rems = [(0usize, 0usize); 3];
    for (i, &t) in SPLIT_TENTHS.iter().enumerate() {
        counts[i] = n * t / total;
        rems[i] = (n * t % total, i);
    }
    let mut left = n - counts.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &rems {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn object_rank_key(seed: u64, object_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in object_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive_seed(seed, mix64(h))
}

/// Orders objects by a seeded hash of their id and cuts the order at the
/// [`split_counts`] boundaries. Independent of record order.
pub fn assign_splits(manifest: &DatasetManifest, seed: u64) -> DatasetManifest {
    let mut ids = manifest.object_ids();
    ids.sort_by(|a, b| {
        object_rank_key(seed, a)
            .cmp(&object_rank_key(seed, b))
            .then_with(|| a.cmp(b))
    });
    let [train, val, _] = split_counts(ids.len());
    let mut out = manifest.clone();
    out.splits = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Validation
            } else {
                Split::Test
            };
            (id, s)
        })
        .collect();
    out
}

/// Expected number of rendered views per object class.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewConvention {
    pub default_views: usize,
    pub overrides: BTreeMap<String, usize>,
}

impl Default for ViewConvention {
    fn default() -> Self {
        Self {
            default_views: DEFAULT_VIEWS_PER_OBJECT,
            overrides: BTreeMap::from([(LOW_DATA_CLASS.to_string(), LOW_DATA_VIEWS_PER_OBJECT)]),
        }
    }
}

impl ViewConvention {
    pub fn uniform(views: usize) -> Self {
        Self {
            default_views: views,
            overrides: BTreeMap::new(),
        }
    }

    pub fn views_for(&self, class_name: &str) -> usize {
        self.overrides.get(class_name).copied().unwrap_or(self.default_views)
    }

    pub fn check(&self, manifest: &DatasetManifest) -> Result<()> {
        let mut per_object: BTreeMap<&str, (&str, usize)> = BTreeMap::new();
        for r in &manifest.records {
            per_object.entry(&r.object_id).or_insert((&r.class_name, 0)).1 += 1;
        }
        for (id, (class, n)) in per_object {
            let want = self.views_for(class);
            if n != want {
                return Err(Error::InvalidInput(format!(
                    "object {id} ({class}) has {n} views, expected {want}"
                )));
            }
        }
        Ok(())
    }
}

/// A training image paired with one of its object's captions.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPair<'a> {
    pub image: &'a RenderedImage,
    pub caption: &'a Caption,
}

/// Training-split images held in memory with their objects' captions.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    images: Vec<RenderedImage>,
    captions: BTreeMap<String, Vec<Caption>>,
    /// Indices into `images` whose object has at least one caption.
    trainable: Vec<usize>,
}

impl TrainingSet {
    pub fn new(images: Vec<RenderedImage>, captions: &CaptionDataset) -> Result<Self> {
        let mut by_object: BTreeMap<String, Vec<Caption>> = BTreeMap::new();
        for c in &captions.records {
            by_object.entry(c.object_id.clone()).or_default().push(c.clone());
        }
        let trainable: Vec<usize> = images
            .iter()
            .enumerate()
            .filter(|(_, img)| by_object.contains_key(&img.object_id))
            .map(|(i, _)| i)
            .collect();
        let skipped: BTreeSet<&str> = images
            .iter()
            .filter(|img| !by_object.contains_key(&img.object_id))
            .map(|img| img.object_id.as_str())
            .collect();
        for id in &skipped {
            log::warn!("object {id} has no captions; its images are not used for training");
        }
        if trainable.is_empty() {
            return Err(Error::EmptyDataset("no training image has a caption".into()));
        }
        Ok(Self {
            images,
            captions: by_object,
            trainable,
        })
    }

    /// Loads the training-split images referenced by `manifest`.
    pub fn from_manifest(manifest: &DatasetManifest, captions: &CaptionDataset) -> Result<Self> {
        let images = manifest
            .records
            .iter()
            .filter(|r| manifest.split_of(&r.object_id) == Some(Split::Train))
            .map(|r| manifest.load_image(r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(images, captions)
    }

    pub fn len(&self) -> usize {
        self.trainable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trainable.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &RenderedImage> {
        self.trainable.iter().map(|&i| &self.images[i])
    }

    pub fn captions_for(&self, object_id: &str) -> &[Caption] {
        self.captions.get(object_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Uniform image, then a uniform caption of that image's object.
    pub fn sample_training_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> TrainingPair<'_> {
        let image = &self.images[self.trainable[rng.random_range(0..self.trainable.len())]];
        let caps = &self.captions[&image.object_id];
        let caption = &caps[rng.random_range(0..caps.len())];
        TrainingPair { image, caption }
    }
}
