//! Weighted bilateral total variation (WBTV) and its reweighted quadratic
//! surrogate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dims, param, Result};
use crate::image::Image;
use crate::imaging::{RowBuilder, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BtvConfig {
    /// Window radius `P`; shifts range over `[-P, P]²`.
    pub radius: usize,
    /// Spatial decay `α₀ ∈ (0, 1]`.
    pub alpha0: f64,
    /// IRLS floor `τ`.
    pub tau: f64,
    /// Sparsity exponent `p ∈ [0, 1]` of the adaptive weights.
    pub sparsity: f64,
}

impl Default for BtvConfig {
    fn default() -> Self {
        Self { radius: 2, alpha0: 0.5, tau: 1e-2, sparsity: 0.5 }
    }
}

impl BtvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return param(format!("alpha0 must lie in (0, 1], got {}", self.alpha0));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return param(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return param(format!("sparsity must lie in [0, 1], got {}", self.sparsity));
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn shift_count(&self) -> usize {
        self.window() * self.window()
    }

    /// All `(l, m)` offsets, rows outer. Index `shift_count() / 2` is `(0, 0)`.
    pub fn shifts(&self) -> Vec<(isize, isize)> {
        let p = self.radius as isize;
        (-p..=p).flat_map(|l| (-p..=p).map(move |m| (l, m))).collect()
    }

    pub fn center_shift(&self) -> usize {
        self.shift_count() / 2
    }
}

/// `S^{l,m} = α₀^{|l|+|m|} (I − S_v^l S_h^m)` for every offset in the
/// window, with replicate boundary.
#[derive(Debug, Clone)]
pub struct ShiftTransform {
    cfg: BtvConfig,
    width: usize,
    height: usize,
    ops: Vec<SparseOperator>,
}

impl ShiftTransform {
    pub fn new(cfg: BtvConfig, width: usize, height: usize) -> Result<Self> {
        cfg.validate()?;
        if width <= 2 * cfg.radius || height <= 2 * cfg.radius {
            return param(format!(
                "{}x{} window does not fit a {width}x{height} image",
                cfg.window(),
                cfg.window()
            ));
        }
        let n = width * height;
        let ops = cfg
            .shifts()
            .into_iter()
            .map(|(l, m)| {
                let scale = cfg.alpha0.powi((l.abs() + m.abs()) as i32);
                let mut b = RowBuilder::with_capacity(n, n, 2 * n);
                for r in 0..height as isize {
                    let rs = (r + l).clamp(0, height as isize - 1) as usize;
                    for c in 0..width as isize {
                        let cs = (c + m).clamp(0, width as isize - 1) as usize;
                        let i = r as usize * width + c as usize;
                        b.push_row([(i, scale), (rs * width + cs, -scale)]);
                    }
                }
                b.finish()
            })
            .collect::<Result<_>>()?;
        Ok(Self { cfg, width, height, ops })
    }

    pub fn config(&self) -> &BtvConfig {
        &self.cfg
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn ops(&self) -> &[SparseOperator] {
        &self.ops
    }

    /// Stacked length `(2P+1)² · N`.
    pub fn stacked_len(&self) -> usize {
        self.ops.len() * self.pixels()
    }

    pub fn apply(&self, x: &[f64]) -> ShiftResidual {
        assert_eq!(x.len(), self.pixels());
        let n = self.pixels();
        let mut data = vec![0.0; self.stacked_len()];
        data.par_chunks_mut(n)
            .zip(self.ops.par_iter())
            .for_each(|(block, op)| op.apply_into(x, block));
        ShiftResidual { block_len: n, data }
    }

    /// `Σ_s S_sᵀ (w_s ⊙ u_s)` for stacked `u`; `w = None` means unit weights.
    pub fn adjoint_weighted(&self, u: &[f64], w: Option<&[f64]>) -> Vec<f64> {
        let n = self.pixels();
        assert_eq!(u.len(), self.stacked_len());
        let parts: Vec<Vec<f64>> = self
            .ops
            .par_iter()
            .enumerate()
            .map(|(s, op)| {
                let us = &u[s * n..(s + 1) * n];
                let mut out = vec![0.0; n];
                match w {
                    Some(w) => {
                        let ws = &w[s * n..(s + 1) * n];
                        let scaled: Vec<f64> = us.iter().zip(ws).map(|(a, b)| a * b).collect();
                        op.apply_adjoint_add(&scaled, &mut out);
                    }
                    None => op.apply_adjoint_add(us, &mut out),
                }
                out
            })
            .collect();
        let mut out = vec![0.0; n];
        for p in parts {
            out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// Per-pixel `Σ_s Σ_i w_{s,i} (S_s)_{ij}²`.
    pub fn column_sq_sums(&self, w: &[f64]) -> Result<Vec<f64>> {
        let n = self.pixels();
        if w.len() != self.stacked_len() {
            return dims("stacked weights do not match the shift window");
        }
        let mut out = vec![0.0; n];
        for (s, op) in self.ops.iter().enumerate() {
            op.column_sq_sums_add(&w[s * n..(s + 1) * n], &mut out)?;
        }
        Ok(out)
    }
}

/// Stacked per-shift differences `z^{l,m} = S^{l,m} x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftResidual {
    block_len: usize,
    data: Vec<f64>,
}

impl ShiftResidual {
    pub fn block(&self, s: usize) -> &[f64] {
        &self.data[s * self.block_len..(s + 1) * self.block_len]
    }

    pub fn blocks(&self) -> usize {
        self.data.len() / self.block_len
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Values of every block except the identically zero `(0, 0)` one.
    pub fn off_center(&self, cfg: &BtvConfig) -> Vec<f64> {
        let c = cfg.center_shift();
        (0..self.blocks())
            .filter(|&s| s != c)
            .flat_map(|s| self.block(s).iter().copied())
            .collect()
    }
}

/// Convenience wrapper building the transform for one image.
pub fn shift_transform(x: &Image, cfg: &BtvConfig) -> Result<ShiftResidual> {
    Ok(ShiftTransform::new(*cfg, x.width(), x.height())?.apply(x.data()))
}

/// Adaptive weights `A` and IRLS diagonals `U`, stacked like
/// [`ShiftResidual`].
#[derive(Debug, Clone, PartialEq)]
pub struct PriorWeights {
    pub alpha: Vec<f64>,
    pub irls: Vec<f64>,
}

impl PriorWeights {
    /// Unit `A` and `U`.
    pub fn uniform(stacked_len: usize) -> Self {
        Self { alpha: vec![1.0; stacked_len], irls: vec![1.0; stacked_len] }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Row weights `α ⊙ U` of the stacked quadratic.
    pub fn row_weights(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.irls).map(|(a, u)| a * u).collect()
    }

    fn check(&self, len: usize) -> Result<()> {
        if self.alpha.len() != len || self.irls.len() != len {
            return dims(format!(
                "prior weights have length {}/{}, expected {len}",
                self.alpha.len(),
                self.irls.len()
            ));
        }
        Ok(())
    }
}

/// `U_ii = 1 / max(|z_i|, τ)`.
pub fn irls_diagonal(z: &[f64], tau: f64) -> Vec<f64> {
    assert!(tau > 0.0, "tau must be positive");
    z.iter().map(|v| 1.0 / v.abs().max(tau)).collect()
}

/// `‖A S x‖₁`.
pub fn btv_energy(transform: &ShiftTransform, x: &[f64], alpha: &[f64]) -> Result<f64> {
    if alpha.len() != transform.stacked_len() {
        return dims("prior weights do not match the shift window");
    }
    let z = transform.apply(x);
    Ok(z.data().iter().zip(alpha).map(|(z, a)| a * z.abs()).sum())
}

/// Stacked rows `(αU)^{1/2} ⊙ S x`, whose squared norm is the IRLS quadratic.
pub fn apply_regularizer_rows(transform: &ShiftTransform, x: &[f64], weights: &PriorWeights) -> Result<Vec<f64>> {
    weights.check(transform.stacked_len())?;
    let z = transform.apply(x);
    Ok(z.data()
        .iter()
        .zip(weights.alpha.iter().zip(&weights.irls))
        .map(|(z, (a, u))| (a * u).sqrt() * z)
        .collect())
}

/// Adjoint of [`apply_regularizer_rows`].
pub fn apply_regularizer_rows_adjoint(transform: &ShiftTransform, u: &[f64], weights: &PriorWeights) -> Result<Vec<f64>> {
    weights.check(transform.stacked_len())?;
    if u.len() != transform.stacked_len() {
        return dims("stacked vector does not match the shift window");
    }
    let sqrt_w: Vec<f64> = weights.row_weights().iter().map(|w| w.sqrt()).collect();
    Ok(transform.adjoint_weighted(u, Some(&sqrt_w)))
}
