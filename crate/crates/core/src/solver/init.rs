//! Initial HR estimate from registered, upsampled frames.

use crate::error::{param, Result};
use crate::image::{Image, LrStack};
use crate::imaging::sample_bilinear;
use crate::motion::{MotionSet, RigidMotion};

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic interpolation onto a grid `factor` times finer, with pixel
/// centers aligned so each LR pixel covers a `factor × factor` HR block.
pub fn upsample_bicubic(frame: &Image, factor: usize) -> Image {
    let f = factor as f64;
    let to_lr = |u: usize| (u as f64 + 0.5) / f - 0.5;
    Image::from_fn(frame.width() * factor, frame.height() * factor, |c, r| {
        let (x, y) = (to_lr(c), to_lr(r));
        let (x0, y0) = (x.floor(), y.floor());
        let mut acc = 0.0;
        for j in -1..=2 {
            let wy = cubic(y - (y0 + j as f64));
            for i in -1..=2 {
                let wx = cubic(x - (x0 + i as f64));
                acc += wx * wy * frame.at_clamped(x0 as isize + i, y0 as isize + j);
            }
        }
        acc
    })
}

/// Location in frame coordinates of reference pixel `(col, row)`.
fn forward_location(m: &RigidMotion, width: usize, height: usize, col: f64, row: f64) -> (f64, f64) {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let (s, c) = m.phi.sin_cos();
    let (a, b) = (col - cx, row - cy);
    (c * a - s * b + cx + m.t_u, s * a + c * b + cy + m.t_v)
}

/// Temporal median of the upsampled frames after undoing each frame's
/// motion, clamped to `[0, 1]`.
pub fn initialize(stack: &LrStack, theta0: &MotionSet, factor: usize) -> Result<Image> {
    if theta0.len() != stack.len() {
        return param(format!("{} motion records for {} frames", theta0.len(), stack.len()));
    }
    if factor == 0 {
        return param("decimation factor must be positive");
    }
    let (w, h) = (stack.width() * factor, stack.height() * factor);
    let registered: Vec<Image> = stack
        .frames()
        .iter()
        .zip(theta0.frames())
        .map(|(frame, m)| {
            let up = upsample_bicubic(frame, factor);
            Image::from_fn(w, h, |c, r| {
                let (sx, sy) = forward_location(m, w, h, c as f64, r as f64);
                sample_bilinear(&up, sx, sy)
            })
        })
        .collect();
    let k = registered.len();
    let mut column = vec![0.0; k];
    let mut out = Image::filled(w, h, 0.0);
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        for (slot, img) in column.iter_mut().zip(&registered) {
            *slot = img.data()[i];
        }
        column.sort_by(f64::total_cmp);
        let med = if k % 2 == 1 { column[k / 2] } else { 0.5 * (column[k / 2 - 1] + column[k / 2]) };
        *o = med.clamp(0.0, 1.0);
    }
    Ok(out)
}
