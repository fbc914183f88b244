use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate_batch, Frozen, LossFlags, LossReport, Optimizer, OptimizerKind, PairAudit, PreparedBatch, PreparedItem};
use crate::augment::{AugmentConfig, Background};
use crate::dataset::TrainingSet;
use crate::digest::{derive_seed, hash_bytes};
use crate::embedding::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::model::{Branch, Checkpoint, LatentNoise, MappingConfig, MappingNetwork, ToyGenerator};
use crate::numfmt::sig9;

pub const CHECKPOINT_EVERY: u64 = 100;
pub const TRACE_FILE: &str = "loss_trace.tsv";
pub const FINAL_CHECKPOINT: &str = "checkpoint.bin";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const GEOMETRY_INIT_STREAM: u64 = 1;
const TEXTURE_INIT_STREAM: u64 = 2;
const SAMPLING_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_geometry: f64,
    pub lr_texture: f64,
    pub optimizer: OptimizerKind,
    pub flags: LossFlags,
    pub augment: AugmentConfig,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 500,
            batch_size: 16,
            lr_geometry: 0.004,
            lr_texture: 0.0005,
            optimizer: OptimizerKind::Sgd,
            flags: LossFlags::default(),
            augment: AugmentConfig::default(),
            checkpoint_every: CHECKPOINT_EVERY,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        for (name, lr) in [("lr_geometry", self.lr_geometry), ("lr_texture", self.lr_texture)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative, got {lr}")));
            }
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig("checkpoint interval must be positive".into()));
        }
        if !self.flags.clip && !self.flags.img {
            return Err(Error::InvalidConfig("both loss terms are disabled".into()));
        }
        Ok(())
    }

    /// Sorted `key = value` lines; the digest is computed over this text.
    pub fn canonical_text(&self) -> String {
        let mut kv = BTreeMap::new();
        kv.insert("seed", self.seed.to_string());
        kv.insert("iterations", self.iterations.to_string());
        kv.insert("batch_size", self.batch_size.to_string());
        kv.insert("lr_geometry", sig9(self.lr_geometry));
        kv.insert("lr_texture", sig9(self.lr_texture));
        kv.insert("optimizer", self.optimizer.name().to_string());
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            kv.insert("adam_beta1", sig9(beta1));
            kv.insert("adam_beta2", sig9(beta2));
            kv.insert("adam_eps", sig9(eps));
        }
        kv.insert("clip_loss", self.flags.clip.to_string());
        kv.insert("img_loss", self.flags.img.to_string());
        kv.insert("bg_aug", self.flags.bg_aug.to_string());
        kv.insert("fourier_decay", sig9(self.augment.fourier_decay));
        kv.insert("gaussian_mean", sig9(self.augment.gaussian_mean));
        kv.insert("gaussian_sigma", sig9(self.augment.gaussian_sigma));
        let cells: Vec<String> = self.augment.checker_cells.iter().map(|c| c.to_string()).collect();
        kv.insert("checker_cells", cells.join(","));
        kv.insert("checkpoint_every", self.checkpoint_every.to_string());
        kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn digest(&self) -> String {
        hash_bytes(self.canonical_text().as_bytes())
    }
}

/// Trainable parameters, optimizer state and the sampling stream.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub geometry: MappingNetwork,
    pub texture: MappingNetwork,
    opt_geometry: Optimizer,
    opt_texture: Optimizer,
    rng: ChaCha8Rng,
    pub iteration: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig, mapping: &MappingConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            geometry: MappingNetwork::init(mapping, Branch::Geometry, derive_seed(config.seed, GEOMETRY_INIT_STREAM))?,
            texture: MappingNetwork::init(mapping, Branch::Texture, derive_seed(config.seed, TEXTURE_INIT_STREAM))?,
            opt_geometry: Optimizer::new(config.optimizer, config.lr_geometry),
            opt_texture: Optimizer::new(config.optimizer, config.lr_texture),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SAMPLING_STREAM)),
            iteration: 0,
        })
    }

    pub fn checkpoint(&self, config_digest: &str) -> Checkpoint {
        Checkpoint {
            geometry: self.geometry.clone(),
            texture: self.texture.clone(),
            config_digest: config_digest.to_string(),
        }
    }

    /// Draws a batch: image, one of its captions, fresh noise for each
    /// branch, and one background shared by the real and fake sides.
    pub fn sample_batch(
        &mut self,
        set: &TrainingSet,
        text_embeddings: &BTreeMap<String, EmbeddingVector>,
        config: &TrainConfig,
    ) -> Result<PreparedBatch> {
        let mut items = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let pair = set.sample_training_pair(&mut self.rng);
            let caption_embedding = text_embeddings
                .get(&pair.caption.text)
                .ok_or_else(|| Error::InvalidInput(format!("no embedding for caption {:?}", pair.caption.text)))?
                .clone();
            let z_geo = LatentNoise::sample(self.geometry.noise_dim, &mut self.rng).0;
            let z_tex = LatentNoise::sample(self.texture.noise_dim, &mut self.rng).0;
            let real = &pair.image.raster;
            let background = if config.flags.bg_aug {
                config.augment.sample(real.height(), real.width(), &mut self.rng)?
            } else {
                Background::plain(real.height(), real.width())
            };
            items.push(PreparedItem {
                object_id: pair.image.object_id.clone(),
                caption: pair.caption.text.clone(),
                real: real.clone(),
                pose: pair.image.pose,
                caption_embedding,
                z_geo,
                z_tex,
                background,
            });
        }
        Ok(PreparedBatch { items })
    }

    /// One optimisation step. Returns the pre-update losses.
    pub fn step(
        &mut self,
        frozen: Frozen<'_>,
        set: &TrainingSet,
        text_embeddings: &BTreeMap<String, EmbeddingVector>,
        config: &TrainConfig,
    ) -> Result<(LossReport, Vec<PairAudit>)> {
        let batch = self.sample_batch(set, text_embeddings, config)?;
        self.iteration += 1;
        let eval = evaluate_batch(&self.geometry, &self.texture, frozen, &batch, config.flags, true)?;
        let report = LossReport::new(self.iteration, eval.loss_clip, eval.loss_img);
        let (g_geo, g_tex) = eval.grads.expect("gradients requested");
        let grad_norm = (g_geo.squared_norm() + g_tex.squared_norm()).sqrt();
        if !report.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                diagnostic: diagnostic(&batch, &report, grad_norm),
            });
        }
        for a in &eval.audits {
            if a.real_background != a.fake_background {
                return Err(Error::InvalidInput(format!(
                    "background of pair for {} differs between real and fake",
                    a.object_id
                )));
            }
        }
        self.opt_geometry.step(&mut self.geometry, &g_geo);
        self.opt_texture.step(&mut self.texture, &g_tex);
        Ok((report, eval.audits))
    }
}

fn diagnostic(batch: &PreparedBatch, report: &LossReport, grad_norm: f64) -> String {
    let mut s = format!(
        "clip={} img={} grad_norm={}",
        report.loss_clip, report.loss_img, grad_norm
    );
    for item in &batch.items {
        s.push_str(&format!(
            "; {} {:?} bg={:?}/{}",
            item.object_id, item.caption, item.background.kind, item.background.seed
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: Vec<LossReport>,
    pub generator_hash_before: String,
    pub generator_hash_after: String,
    pub provider_hash_before: String,
    pub provider_hash_after: String,
    /// Pairs whose real and fake backgrounds were hash-checked.
    pub audited_pairs: usize,
}

/// Runs the full loop. With `out_dir`, writes the loss trace, periodic
/// checkpoints and the final checkpoint there.
pub fn train(
    config: &TrainConfig,
    set: &TrainingSet,
    provider: &dyn EmbeddingProvider,
    generator: &ToyGenerator,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let descriptor = provider.descriptor();
    let encoder = provider.as_differentiable().ok_or_else(|| {
        Error::InvalidConfig(format!(
            "provider {} has no image gradient and cannot be used for training",
            descriptor.name
        ))
    })?;
    let res = generator.resolution();
    if let Some(img) = set.images().find(|i| i.raster.height() != res || i.raster.width() != res) {
        return Err(Error::InvalidInput(format!(
            "image of {} is {}x{} but the generator renders {res}x{res}",
            img.object_id,
            img.raster.height(),
            img.raster.width()
        )));
    }
    let generator_hash_before = generator.content_hash();
    let provider_hash_before = provider.content_hash();

    let mut texts: Vec<&str> = set
        .images()
        .flat_map(|i| set.captions_for(&i.object_id))
        .map(|c| c.text.as_str())
        .collect();
    texts.sort_unstable();
    texts.dedup();
    let embedded = provider.encode_texts(&texts)?;
    let text_embeddings: BTreeMap<String, EmbeddingVector> =
        texts.iter().map(|t| t.to_string()).zip(embedded).collect();

    let mapping = MappingConfig {
        noise_dim: generator.latent_dim(),
        ..MappingConfig::standard(descriptor.dimension)
    };
    let mut state = TrainState::new(config, &mapping)?;
    let digest = config.digest();
    let frozen = Frozen { generator, encoder };

    let mut trace_out = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(TRACE_FILE);
            let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            Some((path, BufWriter::new(f)))
        }
        None => None,
    };

    let mut trace = Vec::with_capacity(config.iterations as usize);
    let mut audited_pairs = 0;
    for _ in 0..config.iterations {
        let (report, audits) = state.step(frozen, set, &text_embeddings, config)?;
        for a in &audits {
            log::trace!("iter {} {} bg {}", report.iteration, a.object_id, a.real_background);
        }
        audited_pairs += audits.len();
        if report.iteration % 50 == 0 || report.iteration == 1 {
            log::info!(
                "iter {} clip {:.4} img {:.4} total {:.4}",
                report.iteration,
                report.loss_clip,
                report.loss_img,
                report.total
            );
        }
        if let Some((path, w)) = trace_out.as_mut() {
            writeln!(w, "{}", report.trace_line()).map_err(|e| Error::io(path.as_path(), e))?;
        }
        if let Some(dir) = out_dir {
            if report.iteration % config.checkpoint_every == 0 {
                let path = dir.join(CHECKPOINT_DIR).join(format!("step-{:06}.bin", report.iteration));
                state.checkpoint(&digest).save(&path)?;
            }
        }
        trace.push(report);
    }
    if let Some((path, mut w)) = trace_out {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let checkpoint = state.checkpoint(&digest);
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        trace,
        generator_hash_before,
        generator_hash_after: generator.content_hash(),
        provider_hash_before,
        provider_hash_after: provider.content_hash(),
        audited_pairs,
    })
}
