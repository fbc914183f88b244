//! Mapping-network optimisation against the frozen generator and encoder.

mod gradcheck;
mod loss;
mod optim;
mod trainer;

pub use gradcheck::{finite_difference_check, pipeline_grad_check, GradCheckEntry, GradCheckReport};
pub use loss::{loss_clip, loss_img, LossReport};
pub use optim::{Optimizer, OptimizerKind};
pub use trainer::{train, TrainConfig, TrainOutcome, TrainState, CHECKPOINT_EVERY};

use ndarray::Array2;
use rayon::prelude::*;

use crate::augment::{composite, composite_backward, Background};
use crate::embedding::{dot, DifferentiableImageEncoder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::model::{MappingGrads, MappingNetwork, ToyGenerator};
use crate::raster::{CameraPose, Raster};

/// Which loss terms and augmentations are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossFlags {
    pub clip: bool,
    pub img: bool,
    pub bg_aug: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        Self {
            clip: true,
            img: true,
            bg_aug: true,
        }
    }
}

/// Everything one training sample needs, fully materialised so the loss is a
/// pure function of the mapping parameters.
#[derive(Debug, Clone)]
pub struct PreparedItem {
    pub object_id: String,
    pub caption: String,
    pub real: Raster,
    pub pose: CameraPose,
    pub caption_embedding: EmbeddingVector,
    pub z_geo: Vec<f64>,
    pub z_tex: Vec<f64>,
    pub background: Background,
}

#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub items: Vec<PreparedItem>,
}

/// Content hashes of the background as consumed by each side of a pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairAudit {
    pub object_id: String,
    pub real_background: String,
    pub fake_background: String,
}

/// Frozen modules used by every step. Held by shared reference only.
#[derive(Clone, Copy)]
pub struct Frozen<'a> {
    pub generator: &'a ToyGenerator,
    pub encoder: &'a dyn DifferentiableImageEncoder,
}

#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    pub loss_clip: f64,
    pub loss_img: f64,
    pub grads: Option<(MappingGrads, MappingGrads)>,
    pub audits: Vec<PairAudit>,
    /// Leaky-ReLU sign pattern of both networks on this batch.
    pub activation_signature: (u64, u64),
}

impl BatchEvaluation {
    pub fn total(&self) -> f64 {
        self.loss_clip + self.loss_img
    }
}

struct ItemResult {
    clip: f64,
    img: f64,
    d_wgeo: Vec<f64>,
    d_wtex: Vec<f64>,
    audit: PairAudit,
}

fn stack(rows: impl ExactSizeIterator<Item = Vec<f64>>, width: usize) -> Result<Array2<f64>> {
    let n = rows.len();
    let flat: Vec<f64> = rows.flatten().collect();
    Array2::from_shape_vec((n, width), flat).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Batch-mean losses and, if requested, exact gradients for both networks.
///
/// A disabled term reports 0 and contributes no gradient.
pub fn evaluate_batch(
    geometry: &MappingNetwork,
    texture: &MappingNetwork,
    frozen: Frozen<'_>,
    batch: &PreparedBatch,
    flags: LossFlags,
    with_grads: bool,
) -> Result<BatchEvaluation> {
    let items = &batch.items;
    if items.is_empty() {
        return Err(Error::EmptyDataset("batch has no items".into()));
    }
    let b = items.len();
    let text_dim = geometry.text_dim();
    let noise_dim = geometry.noise_dim;
    let z_geo = stack(items.iter().map(|i| i.z_geo.clone()), noise_dim)?;
    let z_tex = stack(items.iter().map(|i| i.z_tex.clone()), texture.noise_dim)?;
    let text = stack(items.iter().map(|i| i.caption_embedding.values().to_vec()), text_dim)?;
    let (w_geo, trace_geo) = geometry.forward(z_geo.view(), text.view())?;
    let (w_tex, trace_tex) = texture.forward(z_tex.view(), text.view())?;
    let activation_signature = (trace_geo.activation_signature(), trace_tex.activation_signature());

    let scale = 1.0 / b as f64;
    let results: Vec<Result<ItemResult>> = items
        .par_iter()
        .enumerate()
        .map(|(k, item)| {
            let wg = w_geo.row(k).to_vec();
            let wt = w_tex.row(k).to_vec();
            let bg = &item.background;
            let real_bg = bg.content_hash();
            let real_c = composite(&item.real, bg)?;
            let fake = frozen.generator.render_raw(&wg, &wt, &item.pose);
            let fake_bg = bg.content_hash();
            let fake_c = composite(&fake, bg)?;
            let (e_fake, trace) = frozen.encoder.encode_image_traced(&fake_c)?;
            let (e_real, _) = frozen.encoder.encode_image_traced(&real_c)?;
            let c_text = dot(e_fake.values(), item.caption_embedding.values());
            let c_real = dot(e_fake.values(), e_real.values());
            let clip = if flags.clip { 1.0 - c_text.clamp(-1.0, 1.0) } else { 0.0 };
            let img = if flags.img { 1.0 - c_real.clamp(-1.0, 1.0) } else { 0.0 };
            let (d_wgeo, d_wtex) = if with_grads {
                let mut ge = vec![0.0; e_fake.dim()];
                if flags.clip {
                    for (g, t) in ge.iter_mut().zip(item.caption_embedding.values()) {
                        *g -= scale * t;
                    }
                }
                if flags.img {
                    for (g, r) in ge.iter_mut().zip(e_real.values()) {
                        *g -= scale * r;
                    }
                }
                let d_comp = frozen.encoder.image_backward(&trace, &ge);
                let d_fake = composite_backward(&fake, bg, &d_comp);
                frozen.generator.backward_raw(&wg, &wt, &item.pose, &d_fake)
            } else {
                (Vec::new(), Vec::new())
            };
            Ok(ItemResult {
                clip,
                img,
                d_wgeo,
                d_wtex,
                audit: PairAudit {
                    object_id: item.object_id.clone(),
                    real_background: real_bg,
                    fake_background: fake_bg,
                },
            })
        })
        .collect();
    let results: Vec<ItemResult> = results.into_iter().collect::<Result<_>>()?;

    let loss_clip = results.iter().map(|r| r.clip).sum::<f64>() * scale;
    let loss_img = results.iter().map(|r| r.img).sum::<f64>() * scale;
    let grads = if with_grads {
        let g_geo = stack(results.iter().map(|r| r.d_wgeo.clone()), geometry.latent_dim())?;
        let g_tex = stack(results.iter().map(|r| r.d_wtex.clone()), texture.latent_dim())?;
        Some((geometry.backward(&trace_geo, &g_geo), texture.backward(&trace_tex, &g_tex)))
    } else {
        None
    };
    Ok(BatchEvaluation {
        loss_clip,
        loss_img,
        grads,
        audits: results.into_iter().map(|r| r.audit).collect(),
        activation_signature,
    })
}
