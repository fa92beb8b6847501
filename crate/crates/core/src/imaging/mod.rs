//! Forward imaging model: warp, blur and decimation as sparse operators,
//! and their per-frame composition `W_k = D · H · M(θ_k)`.

mod psf;
mod sparse;

pub use psf::{make_gaussian_psf, PsfKernel, MIN_PSF_SIGMA};
pub use sparse::{operator_column_sq_sums, RowBuilder, SparseOperator};

use rayon::prelude::*;

use crate::error::{param, Result};
use crate::image::Image;
use crate::motion::{MotionSet, RigidMotion};

/// Space-invariant blur with replicate boundary. Every row sums to one.
pub fn build_blur_operator(psf: &PsfKernel, width: usize, height: usize) -> Result<SparseOperator> {
    if psf.side() > width.min(height) {
        return param(format!(
            "{}-tap kernel does not fit a {width}x{height} image",
            psf.side()
        ));
    }
    let r = psf.radius() as isize;
    let n = width * height;
    let mut b = RowBuilder::with_capacity(n, n, n * psf.side() * psf.side());
    for row in 0..height as isize {
        for col in 0..width as isize {
            let mut entries = Vec::with_capacity(psf.side() * psf.side());
            for dv in -r..=r {
                let rr = (row + dv).clamp(0, height as isize - 1) as usize;
                for du in -r..=r {
                    let cc = (col + du).clamp(0, width as isize - 1) as usize;
                    entries.push((rr * width + cc, psf.tap(du, dv)));
                }
            }
            b.push_row(entries);
        }
    }
    b.finish()
}

/// Block-average decimation by an integer factor.
pub fn build_decimation_operator(hr_width: usize, hr_height: usize, factor: usize) -> Result<SparseOperator> {
    if factor == 0 || hr_width % factor != 0 || hr_height % factor != 0 {
        return param(format!(
            "decimation factor {factor} does not divide {hr_width}x{hr_height}"
        ));
    }
    let (lw, lh) = (hr_width / factor, hr_height / factor);
    let weight = 1.0 / (factor * factor) as f64;
    let mut b = RowBuilder::with_capacity(hr_width * hr_height, lw * lh, hr_width * hr_height);
    for lr in 0..lh {
        for lc in 0..lw {
            let mut entries = Vec::with_capacity(factor * factor);
            for dr in 0..factor {
                for dc in 0..factor {
                    entries.push(((lr * factor + dr) * hr_width + lc * factor + dc, weight));
                }
            }
            b.push_row(entries);
        }
    }
    b.finish()
}

/// Source location sampled by output pixel `(col, row)` under `motion`.
///
/// The frame is the reference image moved by `q ↦ R(φ)(q − c) + c + t`
/// with `c` the geometric image center, so each output pixel looks up the
/// inverse-transformed location.
#[inline]
pub fn warp_source(motion: &RigidMotion, width: usize, height: usize, col: f64, row: f64) -> (f64, f64) {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let (s, c) = motion.phi.sin_cos();
    let a = col - cx - motion.t_u;
    let b = row - cy - motion.t_v;
    (c * a + s * b + cx, -s * a + c * b + cy)
}

/// Bilinear taps at `(x, y)` with replicate boundary; indices may repeat
/// near the border.
#[inline]
pub fn bilinear_taps(width: usize, height: usize, x: f64, y: f64) -> [(usize, f64); 4] {
    let x0 = x.floor();
    let y0 = y.floor();
    let ax = x - x0;
    let ay = y - y0;
    let clamp_c = |v: f64| (v.max(0.0) as usize).min(width - 1);
    let clamp_r = |v: f64| (v.max(0.0) as usize).min(height - 1);
    let (c0, c1) = (clamp_c(x0), clamp_c(x0 + 1.0));
    let (r0, r1) = (clamp_r(y0), clamp_r(y0 + 1.0));
    [
        (r0 * width + c0, (1.0 - ax) * (1.0 - ay)),
        (r0 * width + c1, ax * (1.0 - ay)),
        (r1 * width + c0, (1.0 - ax) * ay),
        (r1 * width + c1, ax * ay),
    ]
}

/// Bilinear sample of `img` at continuous location `(x, y)`.
#[inline]
pub fn sample_bilinear(img: &Image, x: f64, y: f64) -> f64 {
    bilinear_taps(img.width(), img.height(), x, y)
        .iter()
        .map(|&(i, w)| w * img.data()[i])
        .sum()
}

/// Rigid warp `M(θ)` by inverse mapping with bilinear weights.
pub fn build_warp_operator(motion: &RigidMotion, width: usize, height: usize) -> Result<SparseOperator> {
    motion.validate()?;
    let n = width * height;
    let mut b = RowBuilder::with_capacity(n, n, 4 * n);
    for row in 0..height {
        for col in 0..width {
            let (x, y) = warp_source(motion, width, height, col as f64, row as f64);
            b.push_row(bilinear_taps(width, height, x, y));
        }
    }
    b.finish()
}

/// Applies `M(θ)` without materializing the operator. Matches
/// [`build_warp_operator`] to rounding.
pub fn warp_image(x: &Image, motion: &RigidMotion) -> Image {
    let (w, h) = (x.width(), x.height());
    Image::from_fn(w, h, |c, r| {
        let (sx, sy) = warp_source(motion, w, h, c as f64, r as f64);
        sample_bilinear(x, sx, sy)
    })
}

/// Geometry shared by every frame of a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub hr_width: usize,
    pub hr_height: usize,
    pub factor: usize,
}

impl Geometry {
    pub fn new(hr_width: usize, hr_height: usize, factor: usize) -> Result<Self> {
        if factor == 0 || hr_width % factor != 0 || hr_height % factor != 0 {
            return param(format!(
                "decimation factor {factor} does not divide {hr_width}x{hr_height}"
            ));
        }
        Ok(Self { hr_width, hr_height, factor })
    }

    pub fn hr_len(&self) -> usize {
        self.hr_width * self.hr_height
    }

    pub fn lr_width(&self) -> usize {
        self.hr_width / self.factor
    }

    pub fn lr_height(&self) -> usize {
        self.hr_height / self.factor
    }

    pub fn lr_len(&self) -> usize {
        self.lr_width() * self.lr_height()
    }
}

/// Per-frame system matrices `W_k = D·H·M(θ_k)` for one motion set.
///
/// The motion-independent part `D·H` is composed once; the per-frame
/// products are rebuilt by [`SystemOperators::set_motion`].
#[derive(Debug, Clone)]
pub struct SystemOperators {
    geometry: Geometry,
    blur_decimate: SparseOperator,
    motion: MotionSet,
    frames: Vec<SparseOperator>,
    frames_t: Vec<SparseOperator>,
}

impl SystemOperators {
    pub fn new(geometry: Geometry, psf: &PsfKernel, motion: &MotionSet) -> Result<Self> {
        let blur = build_blur_operator(psf, geometry.hr_width, geometry.hr_height)?;
        let dec = build_decimation_operator(geometry.hr_width, geometry.hr_height, geometry.factor)?;
        let blur_decimate = dec.compose(&blur)?;
        let mut ops = Self {
            geometry,
            blur_decimate,
            motion: MotionSet::default(),
            frames: Vec::new(),
            frames_t: Vec::new(),
        };
        ops.set_motion(motion)?;
        Ok(ops)
    }

    /// Rebuilds every `W_k` for a new motion set.
    pub fn set_motion(&mut self, motion: &MotionSet) -> Result<()> {
        if motion.is_empty() {
            return param("motion set is empty");
        }
        let g = &self.geometry;
        let built: Result<Vec<(SparseOperator, SparseOperator)>> = motion
            .frames()
            .par_iter()
            .map(|m| {
                let warp = build_warp_operator(m, g.hr_width, g.hr_height)?;
                let w = self.blur_decimate.compose(&warp)?;
                let wt = w.transpose();
                Ok((w, wt))
            })
            .collect();
        let (frames, frames_t) = built?.into_iter().unzip();
        self.frames = frames;
        self.frames_t = frames_t;
        self.motion = motion.clone();
        Ok(())
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn motion(&self) -> &MotionSet {
        &self.motion
    }

    pub fn blur_decimate(&self) -> &SparseOperator {
        &self.blur_decimate
    }

    pub fn frame(&self, k: usize) -> &SparseOperator {
        &self.frames[k]
    }

    pub fn frames(&self) -> &[SparseOperator] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Stacked `W(θ) x`, frame by frame.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.geometry.hr_len());
        let m = self.geometry.lr_len();
        let mut out = vec![0.0; m * self.frames.len()];
        out.par_chunks_mut(m)
            .zip(self.frames.par_iter())
            .for_each(|(o, w)| w.apply_into(x, o));
        out
    }

    /// `Σ_k W_kᵀ u_k` for stacked `u`.
    pub fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        let m = self.geometry.lr_len();
        let n = self.geometry.hr_len();
        assert_eq!(u.len(), m * self.frames.len());
        let parts: Vec<Vec<f64>> = self
            .frames_t
            .par_iter()
            .zip(u.par_chunks(m))
            .map(|(wt, uk)| wt.apply(uk))
            .collect();
        let mut out = vec![0.0; n];
        for p in parts {
            out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
        }
        out
    }
}

/// Builds the explicitly composed `W_k = D·H·M(θ_k)` for every frame.
pub fn compose_system(
    theta: &MotionSet,
    psf: &PsfKernel,
    hr_width: usize,
    hr_height: usize,
    factor: usize,
) -> Result<Vec<SparseOperator>> {
    let g = Geometry::new(hr_width, hr_height, factor)?;
    Ok(SystemOperators::new(g, psf, theta)?.frames)
}
