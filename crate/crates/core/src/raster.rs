//! RGBA rasters, camera poses, and PNG interchange.

use std::f64::consts::TAU;
use std::path::Path;

use crate::error::{Error, Result};

pub const MIN_SIDE: usize = 4;

/// H×W×4 image with channel values in `[0, 1]`, stored row-major, RGBA interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 4 {
            return Err(Error::InvalidInput(format!(
                "raster buffer has {} values, expected {}x{}x4",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgba: [f64; 4]) -> Self {
        let mut data = Vec::with_capacity(height * width * 4);
        for _ in 0..height * width {
            data.extend_from_slice(&rgba);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 4] {
        let i = (row * self.width + col) * 4;
        [
            self.data[i],
            self.data[i + 1],
            self.data[i + 2],
            self.data[i + 3],
        ]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgba: [f64; 4]) {
        let i = (row * self.width + col) * 4;
        self.data[i..i + 4].copy_from_slice(&rgba);
    }

    /// Checks the `[0,1]` channel range and the minimum side length.
    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(Error::InvalidInput(format!(
                "image is {}x{}, minimum is {MIN_SIDE}x{MIN_SIDE}",
                self.height, self.width
            )));
        }
        if let Some(v) = self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "channel value {v} outside [0,1]"
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn to_rgba8(&self) -> image::RgbaImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbaImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches dimensions")
    }

    pub fn from_rgba8(img: &image::RgbaImage) -> Self {
        let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data,
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other.to_string())),
        })?;
        Ok(Self::from_rgba8(&img.to_rgba8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgba8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
    }

    /// Encodes as an in-memory PNG.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgba8()
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory png encode");
        out.into_inner()
    }
}

/// Tiles equally sized rasters into a grid, row by row.
pub fn tile_grid(cells: &[Vec<Raster>]) -> Result<Raster> {
    let first = cells
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::InvalidInput("empty grid".into()))?;
    let (h, w) = (first.height, first.width);
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Raster::filled(h * cells.len(), w * cols, [1.0, 1.0, 1.0, 1.0]);
    for (gr, row) in cells.iter().enumerate() {
        for (gc, cell) in row.iter().enumerate() {
            if cell.height != h || cell.width != w {
                return Err(Error::InvalidInput("grid cells differ in size".into()));
            }
            for r in 0..h {
                for c in 0..w {
                    out.set_pixel(gr * h + r, gc * w + c, cell.pixel(r, c));
                }
            }
        }
    }
    Ok(out)
}

/// Camera placement; azimuth is kept wrapped into `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    azimuth: f64,
    elevation: f64,
}

impl CameraPose {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        let mut a = azimuth.rem_euclid(TAU);
        // rem_euclid can round up to exactly TAU for tiny negative inputs
        if a >= TAU {
            a = 0.0;
        }
        Self {
            azimuth: a,
            elevation,
        }
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }
}

/// A rendered view of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub raster: Raster,
    pub pose: CameraPose,
    pub object_id: String,
}
