//! Per-frame rigid motion and the numerical Jacobian of the forward model
//! with respect to it.

use rayon::prelude::*;

use crate::error::{param, Result};
use crate::image::Image;
use crate::imaging::{build_blur_operator, build_decimation_operator, warp_image, PsfKernel, SparseOperator};

/// Degrees of freedom per frame: rotation, horizontal and vertical shift.
pub const MOTION_DOF: usize = 3;

/// Rotation (radians) about the image center followed by a translation in
/// HR pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidMotion {
    pub phi: f64,
    pub t_u: f64,
    pub t_v: f64,
}

impl RigidMotion {
    pub const fn new(phi: f64, t_u: f64, t_v: f64) -> Self {
        Self { phi, t_u, t_v }
    }

    pub const fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi.is_finite() && self.t_u.is_finite() && self.t_v.is_finite()) {
            return param("motion parameters must be finite");
        }
        if self.phi.abs() >= std::f64::consts::PI {
            return param(format!("rotation {} rad outside (-pi, pi)", self.phi));
        }
        Ok(())
    }

    /// `(cos φ, sin φ, t_u, t_v)`.
    pub fn to_trig_vector(&self) -> [f64; 4] {
        let (s, c) = self.phi.sin_cos();
        [c, s, self.t_u, self.t_v]
    }

    /// Inverse of [`Self::to_trig_vector`]; the trig pair need not be
    /// normalized.
    pub fn from_trig_vector(v: [f64; 4]) -> Self {
        Self::new(v[1].atan2(v[0]), v[2], v[3])
    }

    pub fn params(&self) -> [f64; MOTION_DOF] {
        [self.phi, self.t_u, self.t_v]
    }

    pub fn from_params(p: [f64; MOTION_DOF]) -> Self {
        Self::new(p[0], p[1], p[2])
    }

    /// Adds a parameter increment, wrapping the angle into (-π, π].
    pub fn offset(&self, d: [f64; MOTION_DOF]) -> Self {
        let mut phi = self.phi + d[0];
        if phi > std::f64::consts::PI || phi <= -std::f64::consts::PI {
            phi = (phi + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        }
        Self::new(phi, self.t_u + d[1], self.t_v + d[2])
    }

    pub fn phi_degrees(&self) -> f64 {
        self.phi.to_degrees()
    }
}

/// Motion of every frame, in stack order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotionSet {
    frames: Vec<RigidMotion>,
}

impl MotionSet {
    pub fn new(frames: Vec<RigidMotion>) -> Self {
        Self { frames }
    }

    pub fn identity(k: usize) -> Self {
        Self::new(vec![RigidMotion::identity(); k])
    }

    pub fn frames(&self) -> &[RigidMotion] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [RigidMotion] {
        &mut self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, k: usize) -> &RigidMotion {
        &self.frames[k]
    }

    pub fn validate(&self) -> Result<()> {
        self.frames.iter().try_for_each(RigidMotion::validate)
    }

    /// Translation error per frame against a reference set, in HR pixels.
    pub fn translation_errors(&self, truth: &MotionSet) -> Vec<f64> {
        self.frames
            .iter()
            .zip(&truth.frames)
            .map(|(a, b)| (a.t_u - b.t_u).hypot(a.t_v - b.t_v))
            .collect()
    }
}

/// Central-difference steps for the motion Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianSteps {
    /// Radians.
    pub dphi: f64,
    /// HR pixels.
    pub dt: f64,
}

impl Default for JacobianSteps {
    fn default() -> Self {
        Self { dphi: 1e-4, dt: 1e-3 }
    }
}

impl JacobianSteps {
    pub fn scaled(&self, s: f64) -> Self {
        Self { dphi: self.dphi * s, dt: self.dt * s }
    }

    fn get(&self, j: usize) -> f64 {
        if j == 0 {
            self.dphi
        } else {
            self.dt
        }
    }
}

/// Dense `M × 3` derivative of `D·H·M(θ)x` with respect to `(φ, t_u, t_v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameJacobian {
    rows: Vec<[f64; MOTION_DOF]>,
}

impl FrameJacobian {
    pub fn zeros(m: usize) -> Self {
        Self { rows: vec![[0.0; MOTION_DOF]; m] }
    }

    pub fn rows(&self) -> &[[f64; MOTION_DOF]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// `J d`.
    pub fn apply_into(&self, d: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(&self.rows) {
            *o = r[0] * d[0] + r[1] * d[1] + r[2] * d[2];
        }
    }

    /// `Jᵀ u`.
    pub fn adjoint(&self, u: &[f64]) -> [f64; MOTION_DOF] {
        let mut acc = [0.0; MOTION_DOF];
        for (r, &ui) in self.rows.iter().zip(u) {
            for j in 0..MOTION_DOF {
                acc[j] += r[j] * ui;
            }
        }
        acc
    }

    /// Per-column `Σ_i w_i J_ij²`.
    pub fn column_sq_sums(&self, w: &[f64]) -> [f64; MOTION_DOF] {
        let mut acc = [0.0; MOTION_DOF];
        for (r, &wi) in self.rows.iter().zip(w) {
            for j in 0..MOTION_DOF {
                acc[j] += wi * r[j] * r[j];
            }
        }
        acc
    }
}

/// Central-difference Jacobian given a precomposed `D·H`.
pub fn motion_jacobian_with(
    blur_decimate: &SparseOperator,
    x: &Image,
    m: &RigidMotion,
    steps: JacobianSteps,
) -> Result<FrameJacobian> {
    if !(steps.dphi > 0.0 && steps.dt > 0.0) {
        return param("Jacobian steps must be positive");
    }
    if blur_decimate.cols() != x.len() {
        return param("blur/decimation operator does not match image size");
    }
    let columns: Vec<Vec<f64>> = (0..MOTION_DOF)
        .into_par_iter()
        .map(|j| {
            let h = steps.get(j);
            let mut d = [0.0; MOTION_DOF];
            d[j] = h;
            let plus = blur_decimate.apply(warp_image(x, &m.offset(d)).data());
            d[j] = -h;
            let minus = blur_decimate.apply(warp_image(x, &m.offset(d)).data());
            plus.iter().zip(&minus).map(|(p, q)| (p - q) / (2.0 * h)).collect()
        })
        .collect();
    let rows = (0..blur_decimate.rows())
        .map(|i| [columns[0][i], columns[1][i], columns[2][i]])
        .collect();
    Ok(FrameJacobian { rows })
}

/// Numerical Jacobian of `D·H·M(θ)x` with respect to one frame's motion.
pub fn motion_jacobian(
    x: &Image,
    m: &RigidMotion,
    psf: &PsfKernel,
    factor: usize,
    steps: JacobianSteps,
) -> Result<FrameJacobian> {
    let blur = build_blur_operator(psf, x.width(), x.height())?;
    let dec = build_decimation_operator(x.width(), x.height(), factor)?;
    motion_jacobian_with(&dec.compose(&blur)?, x, m, steps)
}
