//! The linearized least-squares system of one outer iteration.
//!
//! Unknowns are laid out as `[Δθ of every free frame (3 each), Δx]`. Rows
//! are the confidence-weighted data rows of all frames followed by the
//! stacked regularizer rows.

use rayon::prelude::*;

use crate::error::{dims, Result};
use crate::imaging::SystemOperators;
use crate::motion::{FrameJacobian, MOTION_DOF};
use crate::prior::ShiftTransform;

use super::cg::dot;

/// Floor applied to `diag(PᵀP)` before damping.
pub const DIAG_FLOOR: f64 = 1e-12;

#[derive(Debug)]
pub struct LinearizedSystem<'a> {
    ops: &'a SystemOperators,
    shifts: &'a ShiftTransform,
    /// Frame index and Jacobian of every frame whose motion is updated.
    jacobians: Vec<(usize, FrameJacobian)>,
    sqrt_beta: Vec<f64>,
    /// `sqrt(λ α U)` per stacked regularizer row.
    sqrt_reg: Vec<f64>,
    has_prior: bool,
    rhs: Vec<f64>,
    diag: Vec<f64>,
}

impl<'a> LinearizedSystem<'a> {
    /// Assembles `P` and `f` at the current estimate.
    ///
    /// `residual` is `y − W(θ)x`, `beta` the observation weights, and
    /// `reg_weights` the stacked `α ⊙ U`.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        ops: &'a SystemOperators,
        shifts: &'a ShiftTransform,
        jacobians: Vec<(usize, FrameJacobian)>,
        x: &[f64],
        residual: &[f64],
        beta: &[f64],
        reg_weights: &[f64],
        lambda: f64,
    ) -> Result<Self> {
        let g = ops.geometry();
        let obs = g.lr_len() * ops.len();
        if residual.len() != obs || beta.len() != obs {
            return dims(format!("expected {obs} observations, got {} residuals / {} weights", residual.len(), beta.len()));
        }
        if x.len() != g.hr_len() || shifts.pixels() != g.hr_len() {
            return dims("image size does not match the operators");
        }
        if reg_weights.len() != shifts.stacked_len() {
            return dims("regularizer weights do not match the shift window");
        }
        if jacobians.iter().any(|(k, j)| *k >= ops.len() || j.len() != g.lr_len()) {
            return dims("Jacobian does not match the frame layout");
        }
        let sqrt_beta: Vec<f64> = beta.iter().map(|b| b.sqrt()).collect();
        let has_prior = lambda > 0.0;
        let sqrt_reg: Vec<f64> = if has_prior {
            reg_weights.iter().map(|w| (lambda * w).sqrt()).collect()
        } else {
            Vec::new()
        };

        let mut rhs: Vec<f64> = residual.iter().zip(&sqrt_beta).map(|(r, s)| s * r).collect();
        if has_prior {
            let z = shifts.apply(x);
            rhs.extend(z.data().iter().zip(&sqrt_reg).map(|(z, s)| -s * z));
        }

        let mut sys = Self {
            ops,
            shifts,
            jacobians,
            sqrt_beta,
            sqrt_reg,
            has_prior,
            rhs,
            diag: Vec::new(),
        };
        sys.diag = sys.compute_diag(beta, reg_weights, lambda)?;
        Ok(sys)
    }

    fn compute_diag(&self, beta: &[f64], reg_weights: &[f64], lambda: f64) -> Result<Vec<f64>> {
        let m = self.ops.geometry().lr_len();
        let mut diag = Vec::with_capacity(self.unknowns());
        for (k, j) in &self.jacobians {
            diag.extend(j.column_sq_sums(&beta[k * m..(k + 1) * m]));
        }
        let mut dx = vec![0.0; self.ops.geometry().hr_len()];
        for (k, w) in self.ops.frames().iter().enumerate() {
            w.column_sq_sums_add(&beta[k * m..(k + 1) * m], &mut dx)?;
        }
        if self.has_prior {
            let scaled: Vec<f64> = reg_weights.iter().map(|w| lambda * w).collect();
            let reg = self.shifts.column_sq_sums(&scaled)?;
            dx.iter_mut().zip(reg).for_each(|(d, r)| *d += r);
        }
        diag.extend(dx);
        Ok(diag)
    }

    pub fn theta_unknowns(&self) -> usize {
        MOTION_DOF * self.jacobians.len()
    }

    pub fn unknowns(&self) -> usize {
        self.theta_unknowns() + self.ops.geometry().hr_len()
    }

    pub fn rows(&self) -> usize {
        self.sqrt_beta.len() + if self.has_prior { self.shifts.stacked_len() } else { 0 }
    }

    /// Frames whose motion is part of the unknowns, in layout order.
    pub fn free_frames(&self) -> Vec<usize> {
        self.jacobians.iter().map(|(k, _)| *k).collect()
    }

    /// Right-hand side `f`.
    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Exact `diag(PᵀP)` (before flooring).
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn sqrt_beta(&self) -> &[f64] {
        &self.sqrt_beta
    }

    /// `P v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.unknowns());
        let g = self.ops.geometry();
        let m = g.lr_len();
        let nt = self.theta_unknowns();
        let dx = &v[nt..];
        let mut out = vec![0.0; self.rows()];
        let (data, reg) = out.split_at_mut(m * self.ops.len());

        data.par_chunks_mut(m)
            .zip(self.ops.frames().par_iter())
            .for_each(|(o, w)| w.apply_into(dx, o));
        for (slot, (k, j)) in self.jacobians.iter().enumerate() {
            let d = &v[slot * MOTION_DOF..(slot + 1) * MOTION_DOF];
            let rows = &mut data[k * m..(k + 1) * m];
            for (o, r) in rows.iter_mut().zip(j.rows()) {
                *o += r[0] * d[0] + r[1] * d[1] + r[2] * d[2];
            }
        }
        data.iter_mut().zip(&self.sqrt_beta).for_each(|(o, s)| *o *= s);

        if self.has_prior {
            let z = self.shifts.apply(dx);
            reg.iter_mut()
                .zip(z.data().iter().zip(&self.sqrt_reg))
                .for_each(|(o, (z, s))| *o = s * z);
        }
        out
    }

    /// `Pᵀ u`.
    pub fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.rows());
        let m = self.ops.geometry().lr_len();
        let obs = m * self.ops.len();
        let weighted: Vec<f64> = u[..obs].iter().zip(&self.sqrt_beta).map(|(a, s)| a * s).collect();
        let mut out = Vec::with_capacity(self.unknowns());
        for (k, j) in &self.jacobians {
            out.extend(j.adjoint(&weighted[k * m..(k + 1) * m]));
        }
        let mut dx = self.ops.adjoint(&weighted);
        if self.has_prior {
            let reg = self.shifts.adjoint_weighted(&u[obs..], Some(&self.sqrt_reg));
            dx.iter_mut().zip(reg).for_each(|(d, r)| *d += r);
        }
        out.extend(dx);
        out
    }

    /// `Pᵀ f`.
    pub fn normal_rhs(&self) -> Vec<f64> {
        self.adjoint(&self.rhs)
    }

    /// `(PᵀP + μ diag(PᵀP)) v`, with the diagonal floored.
    pub fn apply_damped_normal(&self, v: &[f64], mu: f64) -> Vec<f64> {
        let mut out = self.adjoint(&self.apply(v));
        if mu != 0.0 {
            for ((o, d), vi) in out.iter_mut().zip(&self.diag).zip(v) {
                *o += mu * d.max(DIAG_FLOOR) * vi;
            }
        }
        out
    }

    /// `‖P v − f‖²`.
    pub fn linear_objective(&self, v: &[f64]) -> f64 {
        let pv = self.apply(v);
        let d: Vec<f64> = pv.iter().zip(&self.rhs).map(|(a, b)| a - b).collect();
        dot(&d, &d)
    }
}
