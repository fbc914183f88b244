//! Synthetic object worlds rendered by the toy generator from hidden latents.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_6, TAU};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetManifest, ManifestRecord};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::model::{LatentNoise, ToyGenerator, PROJECTION_GAIN};
use crate::numfmt::{format_g, sig9};
use crate::raster::{CameraPose, RenderedImage};

pub const FIXTURE_CLASSES: [&str; 4] = ["chair", "car", "table", "airplane"];
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const LATENTS_FILE: &str = "latents.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub objects: usize,
    pub views: usize,
    pub seed: u64,
    pub classes: Vec<String>,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            objects: 8,
            views: 8,
            seed: 0,
            classes: FIXTURE_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureObject {
    pub object_id: String,
    pub class_name: String,
    pub w_geo: Vec<f64>,
    pub w_tex: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FixtureWorld {
    pub objects: Vec<FixtureObject>,
    pub images: Vec<RenderedImage>,
}

fn manifest_precision(x: f64) -> f64 {
    sig9(x).parse().expect("formatted number parses")
}

/// Azimuth uniform on `[0, 2π)`, elevation uniform on `[−π/6, π/3]`, both
/// rounded to the precision the manifest stores.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R) -> CameraPose {
    let az = rng.random::<f64>() * TAU;
    let el = -FRAC_PI_6 + rng.random::<f64>() * (FRAC_PI_3 + FRAC_PI_6);
    CameraPose::new(manifest_precision(az), manifest_precision(el))
}

/// `N(0, I/dim)`: expected norm 1, the scale the generator's codes assume.
pub fn unit_scale_latent<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let s = 1.0 / (PROJECTION_GAIN * (dim as f64).sqrt());
    LatentNoise::sample(dim, rng).0.into_iter().map(|v| v * s).collect()
}

pub fn make_fixture(config: &FixtureConfig, generator: &ToyGenerator) -> Result<FixtureWorld> {
    if config.objects == 0 || config.views == 0 {
        return Err(Error::InvalidConfig("fixture needs at least one object and one view".into()));
    }
    if config.classes.is_empty() {
        return Err(Error::InvalidConfig("fixture needs at least one class".into()));
    }
    let dim = generator.latent_dim();
    let mut objects = Vec::with_capacity(config.objects);
    let mut images = Vec::with_capacity(config.objects * config.views);
    for i in 0..config.objects {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i as u64));
        let class_name = config.classes[i % config.classes.len()].clone();
        let obj = FixtureObject {
            object_id: format!("{class_name}-{i:03}"),
            class_name,
            w_geo: unit_scale_latent(dim, &mut rng),
            w_tex: unit_scale_latent(dim, &mut rng),
        };
        for _ in 0..config.views {
            let pose = sample_pose(&mut rng);
            images.push(RenderedImage {
                raster: generator.render_raw(&obj.w_geo, &obj.w_tex, &pose),
                pose,
                object_id: obj.object_id.clone(),
            });
        }
        objects.push(obj);
    }
    Ok(FixtureWorld { objects, images })
}

impl FixtureWorld {
    pub fn class_of(&self, object_id: &str) -> Option<&str> {
        self.objects
            .iter()
            .find(|o| o.object_id == object_id)
            .map(|o| o.class_name.as_str())
    }

    /// Writes `images/<object>/<view>.png`, the manifest and the hidden
    /// generator codes of every object. Returns the manifest.
    pub fn write(&self, dir: &Path, generator: &ToyGenerator) -> Result<DatasetManifest> {
        let mut manifest = DatasetManifest::new(dir);
        let mut view_index = std::collections::BTreeMap::<&str, usize>::new();
        for img in &self.images {
            let v = view_index.entry(img.object_id.as_str()).or_default();
            let rel = PathBuf::from("images").join(&img.object_id).join(format!("{:03}.png", *v));
            *v += 1;
            let path = dir.join(&rel);
            fs::create_dir_all(path.parent().expect("has parent")).map_err(|e| Error::io(&path, e))?;
            img.raster.save_png(&path)?;
            manifest.push(ManifestRecord {
                object_id: img.object_id.clone(),
                class_name: self.class_of(&img.object_id).unwrap_or("unknown").to_string(),
                image_path: rel,
                pose: img.pose,
            })?;
        }
        manifest.save(&dir.join(MANIFEST_FILE))?;
        let path = dir.join(LATENTS_FILE);
        fs::write(&path, self.latents_text(generator)).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// `object_id<TAB>class<TAB>` followed by the geometry codes and the
    /// texture codes the generator derives from the hidden latents.
    pub fn latents_text(&self, generator: &ToyGenerator) -> String {
        let mut s = String::from("#object_id\tclass\tgeometry codes\ttexture codes\n");
        for o in &self.objects {
            let g = generator.geometry_features(&o.w_geo);
            let t = generator.texture_codes(&o.w_tex);
            let join = |v: &[f64]| v.iter().map(|x| format_g(*x, 17)).collect::<Vec<_>>().join(" ");
            writeln!(s, "{}\t{}\t{}\t{}", o.object_id, o.class_name, join(&g), join(&t)).unwrap();
        }
        s
    }
}

/// Geometry codes per object from a latents file written by
/// [`FixtureWorld::write`].
pub fn parse_geometry_codes(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::at_line("latents", i + 1, "expected 4 tab-separated fields"));
        }
        let codes = fields[2]
            .split(' ')
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::at_line("latents", i + 1, e.to_string()))?;
        out.push((fields[0].to_string(), codes));
    }
    Ok(out)
}
