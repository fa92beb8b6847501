//! Full-reference image quality: PSNR and SSIM over a border-cropped region.

use crate::error::{dims, param, Result};
use crate::image::Image;

/// Scores of one image against its reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// `+∞` for identical images.
    pub psnr_db: f64,
    pub ssim: f64,
    pub border_crop: usize,
}

/// Border excluded from scoring for a given decimation factor.
pub fn default_border_crop(factor: usize) -> usize {
    2 * factor
}

fn check_pair(x: &Image, reference: &Image, crop: usize, min_side: usize) -> Result<()> {
    if !x.same_dims(reference) {
        return dims(format!(
            "{}x{} image scored against {}x{} reference",
            x.width(),
            x.height(),
            reference.width(),
            reference.height()
        ));
    }
    let (w, h) = (x.width(), x.height());
    if w < 2 * crop + min_side || h < 2 * crop + min_side {
        return dims(format!("{w}x{h} image too small for crop {crop} and window {min_side}"));
    }
    Ok(())
}

/// `10 log₁₀(peak² / MSE)` over the region inside `crop` pixels of border.
pub fn psnr(x: &Image, reference: &Image, peak: f64, crop: usize) -> Result<f64> {
    if !(peak > 0.0) {
        return param("PSNR peak must be positive");
    }
    check_pair(x, reference, crop, 1)?;
    let (w, h) = (x.width(), x.height());
    let mut sse = 0.0;
    for r in crop..h - crop {
        for c in crop..w - crop {
            let d = x.at(c, r) - reference.at(c, r);
            sse += d * d;
        }
    }
    let mse = sse / ((w - 2 * crop) * (h - 2 * crop)) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Odd window side.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, peak: 1.0 }
    }
}

fn gaussian_window(side: usize, sigma: f64) -> Vec<f64> {
    let r = (side / 2) as f64;
    let mut w: Vec<f64> = (0..side * side)
        .map(|i| {
            let (u, v) = ((i % side) as f64 - r, (i / side) as f64 - r);
            (-(u * u + v * v) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean local SSIM over every window lying fully inside the cropped region.
pub fn ssim(x: &Image, reference: &Image, params: &SsimParams, crop: usize) -> Result<f64> {
    if params.window % 2 == 0 || params.window == 0 {
        return param("SSIM window must be odd");
    }
    if !(params.sigma > 0.0 && params.peak > 0.0) {
        return param("SSIM sigma and peak must be positive");
    }
    check_pair(x, reference, crop, params.window)?;
    let win = gaussian_window(params.window, params.sigma);
    let c1 = (params.k1 * params.peak).powi(2);
    let c2 = (params.k2 * params.peak).powi(2);
    let side = params.window;
    let (w, h) = (x.width(), x.height());
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in crop..=h - crop - side {
        for c0 in crop..=w - crop - side {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..side {
                for i in 0..side {
                    let g = win[j * side + i];
                    let a = x.at(c0 + i, r0 + j);
                    let b = reference.at(c0 + i, r0 + j);
                    mx += g * a;
                    my += g * b;
                    sxx += g * a * a;
                    syy += g * b * b;
                    sxy += g * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// PSNR (peak 1) and default SSIM with the given crop.
pub fn evaluate(x: &Image, reference: &Image, crop: usize) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_db: psnr(x, reference, 1.0, crop)?,
        ssim: ssim(x, reference, &SsimParams::default(), crop)?,
        border_crop: crop,
    })
}
