//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate_batch, Frozen, LossFlags, PreparedBatch};
use crate::error::{Error, Result};
use crate::model::{Branch, MappingNetwork};

/// Denominator floor for the relative error so that two vanishing gradients
/// compare as equal.
pub const REL_ERR_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub branch: Option<Branch>,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Candidate draws per requested parameter before giving up on a branch.
const OVERSAMPLE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub step: f64,
    pub requested: usize,
    pub entries: Vec<GradCheckEntry>,
    /// Parameters whose `±h` probe moved some leaky-ReLU input across zero,
    /// where a central difference does not estimate the derivative.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        !self.entries.is_empty() && self.entries.len() >= self.requested && self.max_rel_err() < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic[i]` with `(f(p + h·e_i) − f(p − h·e_i)) / 2h` for each
/// sampled index.
pub fn finite_difference_check<F>(
    params: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::InvalidInput("parameter and gradient lengths differ".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("step {h} must be positive")));
    }
    let mut p = params.to_vec();
    let mut entries = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p)?;
        p[i] = orig - h;
        let down = f(&p)?;
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        entries.push(GradCheckEntry {
            branch: None,
            index: i,
            analytic: analytic[i],
            numeric,
            rel_err: relative_error(analytic[i], numeric),
        });
    }
    Ok(GradCheckReport {
        step: h,
        requested: indices.len(),
        entries,
        skipped_kinks: 0,
    })
}

/// Checks the full training loss (mapping → generator → composite →
/// encoder) on `per_branch` randomly sampled parameters of each network.
/// Parameters whose probe changes the activation pattern are redrawn.
#[allow(clippy::too_many_arguments)]
pub fn pipeline_grad_check(
    geometry: &MappingNetwork,
    texture: &MappingNetwork,
    frozen: Frozen<'_>,
    batch: &PreparedBatch,
    flags: LossFlags,
    per_branch: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let eval = evaluate_batch(geometry, texture, frozen, batch, flags, true)?;
    let base_signature = eval.activation_signature;
    let (g_geo, g_tex) = eval.grads.expect("gradients requested");
    let mut skipped_kinks = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut geo = geometry.clone();
    let mut tex = texture.clone();
    for branch in [Branch::Geometry, Branch::Texture] {
        let (count, grads) = match branch {
            Branch::Geometry => (geometry.param_count(), &g_geo),
            Branch::Texture => (texture.param_count(), &g_tex),
        };
        let want = per_branch.min(count);
        let mut accepted = 0;
        for i in sample(&mut rng, count, (want * OVERSAMPLE).min(count)) {
            if accepted == want {
                break;
            }
            let net = match branch {
                Branch::Geometry => &mut geo,
                Branch::Texture => &mut tex,
            };
            let orig = net.param(i);
            net.set_param(i, orig + h);
            let up = evaluate_batch(&geo, &tex, frozen, batch, flags, false)?;
            set(branch, &mut geo, &mut tex, i, orig - h);
            let down = evaluate_batch(&geo, &tex, frozen, batch, flags, false)?;
            set(branch, &mut geo, &mut tex, i, orig);
            if up.activation_signature != base_signature || down.activation_signature != base_signature {
                skipped_kinks += 1;
                continue;
            }
            accepted += 1;
            let numeric = (up.total() - down.total()) / (2.0 * h);
            let analytic = grads.get(i);
            entries.push(GradCheckEntry {
                branch: Some(branch),
                index: i,
                analytic,
                numeric,
                rel_err: relative_error(analytic, numeric),
            });
        }
    }
    Ok(GradCheckReport {
        step: h,
        requested: 2 * per_branch,
        entries,
        skipped_kinks,
    })
}

fn set(branch: Branch, geo: &mut MappingNetwork, tex: &mut MappingNetwork, i: usize, v: f64) {
    match branch {
        Branch::Geometry => geo.set_param(i, v),
        Branch::Texture => tex.set_param(i, v),
    }
}
