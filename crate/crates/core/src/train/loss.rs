//! Similarity losses over composited renders.

use crate::embedding::{cosine, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// `1 − cos(E_i(fake), caption)`, in `[0, 2]`.
pub fn loss_clip(fake: &Raster, caption: &EmbeddingVector, provider: &dyn EmbeddingProvider) -> Result<f64> {
    let e = provider.encode_image(fake)?;
    Ok(1.0 - cosine(&e, caption)?)
}

/// `1 − cos(E_i(fake), E_i(real))`, in `[0, 2]`. Both images must be
/// composited over the same background from the same pose.
pub fn loss_img(fake: &Raster, real: &Raster, provider: &dyn EmbeddingProvider) -> Result<f64> {
    if !fake.same_shape(real) {
        return Err(Error::InvalidInput(format!(
            "fake is {}x{} but real is {}x{}",
            fake.height(),
            fake.width(),
            real.height(),
            real.width()
        )));
    }
    let ef = provider.encode_image(fake)?;
    let er = provider.encode_image(real)?;
    Ok(1.0 - cosine(&ef, &er)?)
}

/// Per-batch losses; `total` is the plain sum of the two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub iteration: u64,
    pub loss_clip: f64,
    pub loss_img: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(iteration: u64, loss_clip: f64, loss_img: f64) -> Self {
        Self {
            iteration,
            loss_clip,
            loss_img,
            total: loss_clip + loss_img,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.loss_clip.is_finite() && self.loss_img.is_finite() && self.total.is_finite()
    }

    /// `iteration<TAB>clip<TAB>img<TAB>total` with 9 significant digits.
    pub fn trace_line(&self) -> String {
        use crate::numfmt::sig9;
        format!(
            "{}\t{}\t{}\t{}",
            self.iteration,
            sig9(self.loss_clip),
            sig9(self.loss_img),
            sig9(self.total)
        )
    }
}
