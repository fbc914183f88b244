//! Frozen differentiable stand-in for a pretrained textured-shape generator.
//!
//! Alpha is a soft star-shaped silhouette whose radius, as a function of the
//! polar angle relative to the camera azimuth, is a 4-harmonic Fourier series
//! with coefficients `P_g·w_geo`:
//!
//! ```text
//! S(θ) = Σ_{m=1..4} (g[2m-2]·cos(mθ) + g[2m-1]·sin(mθ)) / m,   θ = φ − azimuth
//! ρ(θ) = 0.8 + 0.6·tanh(S(θ))
//! α    = sigmoid(10·(ρ(θ) − d))
//! ```
//!
//! where `(d, φ)` are the polar coordinates of the pixel centre in `[-1,1]²`
//! with the vertical axis stretched by `1 + 0.3·sin(elevation)`.
//!
//! Colour is `sigmoid(Σ_ij ff_i(x, y, pose)·B[c,i,j]·t_j)` with `t = P_t·w_tex`
//! and `ff` a constant plus seven random Fourier features of pixel position
//! and pose. Alpha depends only on the geometry latent and colour only on the
//! texture latent.
//!
//! Projection entries are standard normal, so a latent of norm `r` yields
//! codes with standard deviation about `r`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mapping::{Branch, LatentCode, LATENT_DIM};
use crate::digest::{derive_seed, ContentHasher};
use crate::embedding::dot;
use crate::error::{Error, Result};
use crate::raster::{CameraPose, Raster};

pub const GEOMETRY_CODES: usize = 8;
pub const TEXTURE_CODES: usize = 8;
const HARMONICS: usize = GEOMETRY_CODES / 2;
const FEATURES: usize = 8;
const SHARPNESS: f64 = 10.0;
const RADIUS_BASE: f64 = 0.8;
const RADIUS_AMPLITUDE: f64 = 0.6;
const ELEVATION_STRETCH: f64 = 0.3;
/// Standard deviation of the code projections' entries.
pub const PROJECTION_GAIN: f64 = 1.0;

pub const DEFAULT_GENERATOR_SEED: u64 = 0x6E7E_3D01;
pub const DEFAULT_RESOLUTION: usize = 32;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyGenerator {
    seed: u64,
    resolution: usize,
    latent_dim: usize,
    /// GEOMETRY_CODES × latent_dim
    geo_projection: Vec<f64>,
    /// TEXTURE_CODES × latent_dim
    tex_projection: Vec<f64>,
    /// Per random feature: x frequency, y frequency, azimuth multiplier, elevation multiplier, phase.
    fourier: Vec<[f64; 5]>,
    /// 3 × FEATURES × TEXTURE_CODES
    bilinear: Vec<f64>,
}

/// Per-pixel polar geometry for one pose.
struct PixelGeometry {
    dist: f64,
    theta: f64,
}

impl ToyGenerator {
    pub fn new(seed: u64, resolution: usize) -> Result<Self> {
        Self::with_latent_dim(seed, resolution, LATENT_DIM)
    }

    pub fn with_latent_dim(seed: u64, resolution: usize, latent_dim: usize) -> Result<Self> {
        if resolution < crate::raster::MIN_SIDE || latent_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "generator needs resolution >= 4 and a positive latent dim, got {resolution}, {latent_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 10));
        let mut gauss = |n: usize, s: f64| -> Vec<f64> {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * s).collect()
        };
        let geo_projection = gauss(GEOMETRY_CODES * latent_dim, PROJECTION_GAIN);
        let tex_projection = gauss(TEXTURE_CODES * latent_dim, PROJECTION_GAIN);
        let bilinear = gauss(3 * FEATURES * TEXTURE_CODES, 1.0 / (FEATURES as f64).sqrt());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 11));
        let fourier = (1..FEATURES)
            .map(|_| {
                let fx: f64 = rng.sample::<f64, _>(StandardNormal) * 1.5;
                let fy: f64 = rng.sample::<f64, _>(StandardNormal) * 1.5;
                let az = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let el: f64 = rng.sample(StandardNormal);
                let phase = rng.random::<f64>() * 2.0 * PI;
                [fx, fy, az, el, phase]
            })
            .collect();
        Ok(Self {
            seed,
            resolution,
            latent_dim,
            geo_projection,
            tex_projection,
            fourier,
            bilinear,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.update_u64(self.seed)
            .update_u64(self.resolution as u64)
            .update_f64s(&self.geo_projection)
            .update_f64s(&self.tex_projection)
            .update_f64s(&self.bilinear);
        for f in &self.fourier {
            h.update_f64s(f);
        }
        h.finish_hex()
    }

    fn project<const N: usize>(proj: &[f64], w: &[f64]) -> [f64; N] {
        let d = w.len();
        std::array::from_fn(|k| dot(&proj[k * d..(k + 1) * d], w))
    }

    fn project_transpose(proj: &[f64], g: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        for (k, gk) in g.iter().enumerate() {
            for (o, p) in out.iter_mut().zip(&proj[k * d..(k + 1) * d]) {
                *o += gk * p;
            }
        }
        out
    }

    /// Silhouette Fourier coefficients `P_g·w_geo`.
    pub fn geometry_features(&self, w_geo: &[f64]) -> [f64; GEOMETRY_CODES] {
        Self::project(&self.geo_projection, w_geo)
    }

    pub fn texture_codes(&self, w_tex: &[f64]) -> [f64; TEXTURE_CODES] {
        Self::project(&self.tex_projection, w_tex)
    }

    fn pixel_xy(&self, r: usize, c: usize) -> (f64, f64) {
        let n = self.resolution as f64;
        ((c as f64 + 0.5) / n * 2.0 - 1.0, 1.0 - (r as f64 + 0.5) / n * 2.0)
    }

    fn pixel_geometry(&self, x: f64, y: f64, pose: &CameraPose) -> PixelGeometry {
        let ys = y * (1.0 + ELEVATION_STRETCH * pose.elevation().sin());
        PixelGeometry {
            dist: x.hypot(ys),
            theta: ys.atan2(x) - pose.azimuth(),
        }
    }

    fn harmonic_basis(theta: f64) -> [f64; GEOMETRY_CODES] {
        let mut b = [0.0; GEOMETRY_CODES];
        for m in 1..=HARMONICS {
            let (s, c) = (m as f64 * theta).sin_cos();
            b[2 * m - 2] = c / m as f64;
            b[2 * m - 1] = s / m as f64;
        }
        b
    }

    /// `M[c][j] = Σ_i ff_i·B[c,i,j]` at one pixel.
    fn color_matrix(&self, x: f64, y: f64, pose: &CameraPose) -> [[f64; TEXTURE_CODES]; 3] {
        let mut ff = [1.0; FEATURES];
        for (i, f) in self.fourier.iter().enumerate() {
            ff[i + 1] = (f[0] * x + f[1] * y + f[2] * pose.azimuth() + f[3] * pose.elevation() + f[4]).cos();
        }
        let mut m = [[0.0; TEXTURE_CODES]; 3];
        for (ch, row) in m.iter_mut().enumerate() {
            for (i, &fi) in ff.iter().enumerate() {
                let b = &self.bilinear[(ch * FEATURES + i) * TEXTURE_CODES..][..TEXTURE_CODES];
                for (mj, bj) in row.iter_mut().zip(b) {
                    *mj += fi * bj;
                }
            }
        }
        m
    }

    /// Renders from projected codes.
    pub fn render_codes(
        &self,
        geo: &[f64; GEOMETRY_CODES],
        tex: &[f64; TEXTURE_CODES],
        pose: &CameraPose,
    ) -> Raster {
        let n = self.resolution;
        let mut data = Vec::with_capacity(n * n * 4);
        for r in 0..n {
            for c in 0..n {
                let (x, y) = self.pixel_xy(r, c);
                let pg = self.pixel_geometry(x, y, pose);
                let s = dot(&Self::harmonic_basis(pg.theta), geo);
                let rho = RADIUS_BASE + RADIUS_AMPLITUDE * s.tanh();
                let alpha = sigmoid(SHARPNESS * (rho - pg.dist));
                let m = self.color_matrix(x, y, pose);
                for row in &m {
                    data.push(sigmoid(dot(row, tex)));
                }
                data.push(alpha);
            }
        }
        Raster::new(n, n, data).expect("sizes agree")
    }

    /// Gradients on the codes given a gradient on the rendered raster.
    pub fn render_codes_backward(
        &self,
        geo: &[f64; GEOMETRY_CODES],
        tex: &[f64; TEXTURE_CODES],
        pose: &CameraPose,
        grad: &[f64],
    ) -> ([f64; GEOMETRY_CODES], [f64; TEXTURE_CODES]) {
        let n = self.resolution;
        let mut dgeo = [0.0; GEOMETRY_CODES];
        let mut dtex = [0.0; TEXTURE_CODES];
        for r in 0..n {
            for c in 0..n {
                let i = (r * n + c) * 4;
                let g = &grad[i..i + 4];
                let (x, y) = self.pixel_xy(r, c);
                if g[3] != 0.0 {
                    let pg = self.pixel_geometry(x, y, pose);
                    let basis = Self::harmonic_basis(pg.theta);
                    let th = dot(&basis, geo).tanh();
                    let rho = RADIUS_BASE + RADIUS_AMPLITUDE * th;
                    let alpha = sigmoid(SHARPNESS * (rho - pg.dist));
                    let k = g[3] * alpha * (1.0 - alpha) * SHARPNESS * RADIUS_AMPLITUDE * (1.0 - th * th);
                    for (d, b) in dgeo.iter_mut().zip(&basis) {
                        *d += k * b;
                    }
                }
                if g[..3].iter().any(|&v| v != 0.0) {
                    let m = self.color_matrix(x, y, pose);
                    for (ch, row) in m.iter().enumerate() {
                        let v = sigmoid(dot(row, tex));
                        let k = g[ch] * v * (1.0 - v);
                        for (d, mj) in dtex.iter_mut().zip(row) {
                            *d += k * mj;
                        }
                    }
                }
            }
        }
        (dgeo, dtex)
    }

    fn check_latents(&self, w_geo: &LatentCode, w_tex: &LatentCode) -> Result<()> {
        if w_geo.branch != Branch::Geometry || w_tex.branch != Branch::Texture {
            return Err(Error::InvalidInput("latents passed to the wrong generator branch".into()));
        }
        if w_geo.w.len() != self.latent_dim || w_tex.w.len() != self.latent_dim {
            return Err(Error::InvalidInput(format!(
                "generator expects {}-dim latents",
                self.latent_dim
            )));
        }
        Ok(())
    }

    /// RGBA render of the shape described by the two latents at `pose`.
    pub fn generate(&self, w_geo: &LatentCode, w_tex: &LatentCode, pose: &CameraPose) -> Result<Raster> {
        self.check_latents(w_geo, w_tex)?;
        Ok(self.render_raw(&w_geo.w, &w_tex.w, pose))
    }

    pub fn render_raw(&self, w_geo: &[f64], w_tex: &[f64], pose: &CameraPose) -> Raster {
        self.render_codes(&self.geometry_features(w_geo), &self.texture_codes(w_tex), pose)
    }

    /// Gradients on `(w_geo, w_tex)` given a gradient on the raster.
    pub fn backward_raw(&self, w_geo: &[f64], w_tex: &[f64], pose: &CameraPose, grad: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let geo = self.geometry_features(w_geo);
        let tex = self.texture_codes(w_tex);
        let (dg, dt) = self.render_codes_backward(&geo, &tex, pose, grad);
        (
            Self::project_transpose(&self.geo_projection, &dg, self.latent_dim),
            Self::project_transpose(&self.tex_projection, &dt, self.latent_dim),
        )
    }
}
