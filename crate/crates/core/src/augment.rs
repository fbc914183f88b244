//! Random backgrounds and alpha compositing for paired real/fake renders.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::digest::hash_f64s;
use crate::error::{Error, Result};
use crate::raster::{Raster, MIN_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackgroundKind {
    Fourier,
    Gaussian,
    Checkerboard,
    /// Fixed black; used when augmentation is disabled.
    Plain,
}

/// H×W RGB image with values in `[0, 1]`, row-major, RGB interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    pub kind: BackgroundKind,
    pub seed: u64,
}

impl Background {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn rgb(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn plain(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width * 3],
            kind: BackgroundKind::Plain,
            seed: 0,
        }
    }

    pub fn content_hash(&self) -> String {
        hash_f64s(&self.pixels)
    }

    pub fn to_raster(&self) -> Raster {
        let mut data = Vec::with_capacity(self.height * self.width * 4);
        for px in self.pixels.chunks_exact(3) {
            data.extend_from_slice(px);
            data.push(1.0);
        }
        Raster::new(self.height, self.width, data).expect("sizes agree")
    }
}

fn check_size(h: usize, w: usize) -> Result<()> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::InvalidInput(format!(
            "background is {h}x{w}, minimum is {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    Ok(())
}

fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Radial frequency index of DFT bin `(ky, kx)` on an `h`×`w` grid.
pub fn radial_frequency(ky: usize, kx: usize, h: usize, w: usize) -> f64 {
    signed_freq(ky, h).hypot(signed_freq(kx, w))
}

fn fft_2d(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex64::default(); h];
    for c in 0..w {
        for r in 0..h {
            column[r] = data[r * w + c];
        }
        col.process(&mut column);
        for r in 0..h {
            data[r * w + c] = column[r];
        }
    }
}

/// Forward 2-D DFT of a real image; exposed for spectral checks.
pub fn dft_2d(image: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_2d(&mut data, h, w, false);
    data
}

/// One channel of random-phase noise with spectral amplitude
/// `1 / max(f, 1)^decay`, before any rescaling. Phases are uniform and
/// Hermitian-symmetric so the inverse transform is real; self-conjugate
/// bins get phase zero.
pub fn fourier_channel_raw<R: Rng + ?Sized>(h: usize, w: usize, decay: f64, rng: &mut R) -> Vec<f64> {
    let mut spec = vec![Complex64::default(); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let k = ky * w + kx;
            let m = ((h - ky) % h) * w + (w - kx) % w;
            if m < k {
                continue;
            }
            let amp = 1.0 / radial_frequency(ky, kx, h, w).max(1.0).powf(decay);
            if m == k {
                spec[k] = Complex64::new(amp, 0.0);
            } else {
                let phase = rng.random::<f64>() * TAU;
                spec[k] = Complex64::from_polar(amp, phase);
                spec[m] = spec[k].conj();
            }
        }
    }
    fft_2d(&mut spec, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    spec.iter().map(|c| c.re * scale).collect()
}

/// Per-channel affine map onto `[0, 1]`; a constant channel becomes 0.5.
pub fn rescale_unit(channel: &mut [f64]) {
    let (lo, hi) = channel
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > f64::EPSILON * hi.abs().max(lo.abs()).max(1e-300)) {
        channel.iter_mut().for_each(|v| *v = 0.5);
    } else {
        channel.iter_mut().for_each(|v| *v = ((*v - lo) / span).clamp(0.0, 1.0));
    }
}

fn interleave(h: usize, w: usize, channels: [Vec<f64>; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for ch in &channels {
            out.push(ch[i]);
        }
    }
    out
}

pub fn fourier_texture<R: Rng + ?Sized>(h: usize, w: usize, decay: f64, rng: &mut R) -> Result<Background> {
    check_size(h, w)?;
    if !(decay > 0.0) || !decay.is_finite() {
        return Err(Error::InvalidInput(format!("decay must be positive, got {decay}")));
    }
    let channels = [(); 3].map(|_| {
        let mut c = fourier_channel_raw(h, w, decay, rng);
        rescale_unit(&mut c);
        c
    });
    Ok(Background {
        height: h,
        width: w,
        pixels: interleave(h, w, channels),
        kind: BackgroundKind::Fourier,
        seed: 0,
    })
}

/// I.i.d. normal pixels clamped to `[0, 1]`.
pub fn gaussian_background<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    mean: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<Background> {
    check_size(h, w)?;
    if !(sigma >= 0.0) || !mean.is_finite() {
        return Err(Error::InvalidInput(format!("need sigma >= 0 and finite mean, got {mean}, {sigma}")));
    }
    let pixels = if sigma == 0.0 {
        vec![mean.clamp(0.0, 1.0); h * w * 3]
    } else {
        let normal = Normal::new(mean, sigma).expect("validated parameters");
        (0..h * w * 3).map(|_| normal.sample(rng).clamp(0.0, 1.0)).collect()
    };
    Ok(Background {
        height: h,
        width: w,
        pixels,
        kind: BackgroundKind::Gaussian,
        seed: 0,
    })
}

/// `color_a` where `⌊r/cell⌋ + ⌊c/cell⌋` is even, `color_b` otherwise.
pub fn checkerboard(h: usize, w: usize, cell: usize, color_a: [f64; 3], color_b: [f64; 3]) -> Result<Background> {
    if cell == 0 || cell > h.min(w) {
        return Err(Error::InvalidInput(format!(
            "checker cell {cell} not in 1..={}",
            h.min(w)
        )));
    }
    if color_a.iter().chain(&color_b).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("checker colors must lie in [0,1]".into()));
    }
    let mut pixels = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let even = (r / cell + c / cell) % 2 == 0;
            pixels.extend_from_slice(if even { &color_a } else { &color_b });
        }
    }
    Ok(Background {
        height: h,
        width: w,
        pixels,
        kind: BackgroundKind::Checkerboard,
        seed: 0,
    })
}

/// `α·rgb + (1−α)·bg` for both images over one shared background.
/// Outputs are opaque (alpha = 1).
pub fn composite_pair(real: &Raster, fake: &Raster, bg: &Background) -> Result<(Raster, Raster)> {
    Ok((composite(real, bg)?, composite(fake, bg)?))
}

pub fn composite(fg: &Raster, bg: &Background) -> Result<Raster> {
    if fg.height() != bg.height || fg.width() != bg.width {
        return Err(Error::InvalidInput(format!(
            "image is {}x{} but background is {}x{}",
            fg.height(),
            fg.width(),
            bg.height,
            bg.width
        )));
    }
    let mut out = Vec::with_capacity(fg.data().len());
    for (px, b) in fg.data().chunks_exact(4).zip(bg.pixels.chunks_exact(3)) {
        let a = px[3];
        for ch in 0..3 {
            out.push(a * px[ch] + (1.0 - a) * b[ch]);
        }
        out.push(1.0);
    }
    Raster::new(fg.height(), fg.width(), out)
}

/// Gradient of a composite with respect to the foreground raster, given the
/// gradient on the composite. The composite's alpha channel is constant, so
/// its incoming gradient is ignored.
pub fn composite_backward(fg: &Raster, bg: &Background, grad_out: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; fg.data().len()];
    for ((px, b), (go, gi)) in fg
        .data()
        .chunks_exact(4)
        .zip(bg.pixels.chunks_exact(3))
        .zip(grad_out.chunks_exact(4).zip(g.chunks_exact_mut(4)))
    {
        let a = px[3];
        let mut ga = 0.0;
        for ch in 0..3 {
            gi[ch] = a * go[ch];
            ga += go[ch] * (px[ch] - b[ch]);
        }
        gi[3] = ga;
    }
    g
}

/// Parameters for per-pair background draws.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub fourier_decay: f64,
    pub gaussian_mean: f64,
    pub gaussian_sigma: f64,
    pub checker_cells: Vec<usize>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            fourier_decay: 1.5,
            gaussian_mean: 0.5,
            gaussian_sigma: 0.15,
            checker_cells: vec![2, 4, 8],
        }
    }
}

pub const BACKGROUND_KINDS: [BackgroundKind; 3] = [
    BackgroundKind::Fourier,
    BackgroundKind::Gaussian,
    BackgroundKind::Checkerboard,
];

impl AugmentConfig {
    /// Draws a kind uniformly and a generation seed from `rng`, then builds
    /// the background from that seed alone.
    pub fn sample<R: Rng + ?Sized>(&self, h: usize, w: usize, rng: &mut R) -> Result<Background> {
        let kind = BACKGROUND_KINDS[rng.random_range(0..3)];
        let seed = rng.random::<u64>();
        self.generate(kind, seed, h, w)
    }

    pub fn generate(&self, kind: BackgroundKind, seed: u64, h: usize, w: usize) -> Result<Background> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bg = match kind {
            BackgroundKind::Fourier => fourier_texture(h, w, self.fourier_decay, &mut rng)?,
            BackgroundKind::Gaussian => {
                gaussian_background(h, w, self.gaussian_mean, self.gaussian_sigma, &mut rng)?
            }
            BackgroundKind::Checkerboard => {
                if self.checker_cells.is_empty() {
                    return Err(Error::InvalidConfig("no checkerboard cell sizes".into()));
                }
                let cell = self.checker_cells[rng.random_range(0..self.checker_cells.len())].min(h.min(w));
                let a = [rng.random(), rng.random(), rng.random()];
                let b = [rng.random(), rng.random(), rng.random()];
                checkerboard(h, w, cell, a, b)?
            }
            BackgroundKind::Plain => Background::plain(h, w),
        };
        bg.seed = seed;
        Ok(bg)
    }
}
