//! Grayscale rasters on the high- and low-resolution grids.

use crate::error::{dims, param, Result};

/// Row-major grayscale raster. Used both for the latent high-resolution
/// image and for observed low-resolution frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

pub type HrImage = Image;
pub type LrFrame = Image;

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return param(format!("empty image {width}x{height}"));
        }
        if data.len() != width * height {
            return dims(format!(
                "{width}x{height} image needs {} samples, got {}",
                width * height,
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return param("image contains non-finite intensities");
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0);
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(c, r));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Sample at column `c`, row `r`.
    #[inline]
    pub fn at(&self, c: usize, r: usize) -> f64 {
        self.data[r * self.width + c]
    }

    /// Sample with replicate (clamp-to-edge) boundary.
    #[inline]
    pub fn at_clamped(&self, c: isize, r: isize) -> f64 {
        let c = c.clamp(0, self.width as isize - 1) as usize;
        let r = r.clamp(0, self.height as isize - 1) as usize;
        self.at(c, r)
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// An ordered stack of equally sized low-resolution frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LrStack {
    frames: Vec<Image>,
}

impl LrStack {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return param("frame stack must contain at least one frame");
        };
        if let Some(k) = frames.iter().position(|f| !f.same_dims(first)) {
            return dims(format!(
                "frame {} is {}x{}, expected {}x{}",
                k + 1,
                frames[k].width(),
                frames[k].height(),
                first.width(),
                first.height()
            ));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Image] {
        &mut self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    /// Pixels per frame.
    pub fn frame_len(&self) -> usize {
        self.frames[0].len()
    }

    /// All observations concatenated frame by frame.
    pub fn flatten(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.data().iter().copied()).collect()
    }

    /// Checks that `hr_width x hr_height` maps onto this stack at `factor`.
    pub fn check_factor(&self, hr_width: usize, hr_height: usize, factor: usize) -> Result<()> {
        if factor == 0 || self.width() * factor != hr_width || self.height() * factor != hr_height {
            return dims(format!(
                "{}x{} frames do not match a {hr_width}x{hr_height} image at factor {factor}",
                self.width(),
                self.height()
            ));
        }
        Ok(())
    }
}
