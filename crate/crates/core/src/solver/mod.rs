//! Confidence-aware Levenberg-Marquardt optimization of the HR image and
//! the per-frame motion, plus Gauss-Newton and fixed-motion baselines.

mod cg;
mod init;
mod system;

pub use cg::{cg_solve, CgOutcome};
pub use init::{initialize, upsample_bicubic};
pub use system::{LinearizedSystem, DIAG_FLOOR};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{noise_scale, observation_weights, prior_scale, prior_weights_fn, ConfidenceState};
use crate::error::{dims, param, Error, Result};
use crate::image::{Image, LrStack};
use crate::imaging::{warp_image, Geometry, PsfKernel, SparseOperator, SystemOperators};
use crate::metrics::psnr;
use crate::motion::{motion_jacobian_with, JacobianSteps, MotionSet, MOTION_DOF};
use crate::prior::{irls_diagonal, BtvConfig, ShiftTransform};

use cg::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    /// Joint update with damping chosen per iteration.
    LevenbergMarquardt,
    /// Joint update with `μ = 0`.
    GaussNewton,
    /// Motion frozen at its initial value; only the image is updated.
    ReconstructionOnly,
}

impl SolverMode {
    pub fn short_name(&self) -> &'static str {
        match self {
            SolverMode::LevenbergMarquardt => "lm",
            SolverMode::GaussNewton => "gn",
            SolverMode::ReconstructionOnly => "fixed",
        }
    }

    fn updates_motion(&self) -> bool {
        !matches!(self, SolverMode::ReconstructionOnly)
    }
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lm" | "levenberg-marquardt" => Ok(SolverMode::LevenbergMarquardt),
            "gn" | "gauss-newton" => Ok(SolverMode::GaussNewton),
            "fixed" | "reconstruction-only" => Ok(SolverMode::ReconstructionOnly),
            other => param(format!("unknown solver mode '{other}' (expected lm, gn or fixed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Regularization weight `λ ≥ 0`.
    pub lambda: f64,
    /// Outer iterations `T_lm`.
    pub max_iterations: usize,
    /// CG iterations per linear solve `T_cg`.
    pub cg_iterations: usize,
    /// Damping candidates per outer iteration `T_μ`.
    pub mu_candidates: usize,
    /// `log₁₀ μ_l`.
    pub log_mu_lower: f64,
    /// `log₁₀ μ_u`.
    pub log_mu_upper: f64,
    pub cg_tol: f64,
    /// Stop once `‖(Δθ, Δx)‖ / ‖(θ, x)‖` falls below this.
    pub convergence_tol: f64,
    pub mode: SolverMode,
    pub btv: BtvConfig,
    pub jacobian_steps: JacobianStepsConfig,
    /// Start each damping candidate's CG from the previous candidate's solution.
    pub warm_start: bool,
}

/// Serializable mirror of [`JacobianSteps`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianStepsConfig {
    pub dphi: f64,
    pub dt: f64,
}

impl From<JacobianStepsConfig> for JacobianSteps {
    fn from(c: JacobianStepsConfig) -> Self {
        JacobianSteps { dphi: c.dphi, dt: c.dt }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        let steps = JacobianSteps::default();
        Self {
            lambda: DEFAULT_LAMBDA,
            max_iterations: 25,
            cg_iterations: 25,
            mu_candidates: 5,
            log_mu_lower: -4.0,
            log_mu_upper: 4.0,
            cg_tol: 1e-8,
            convergence_tol: 1e-4,
            mode: SolverMode::LevenbergMarquardt,
            btv: BtvConfig::default(),
            jacobian_steps: JacobianStepsConfig { dphi: steps.dphi, dt: steps.dt },
            warm_start: true,
        }
    }
}

/// Regularization weight picked by grid search on a held-out training seed.
pub const DEFAULT_LAMBDA: f64 = 0.01;

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return param(format!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        if self.max_iterations == 0 || self.cg_iterations == 0 || self.mu_candidates == 0 {
            return param("iteration counts must be at least 1");
        }
        if !(self.log_mu_lower.is_finite() && self.log_mu_upper.is_finite()) || self.log_mu_lower >= self.log_mu_upper {
            return param("damping range must be finite with lower < upper");
        }
        if !(self.cg_tol >= 0.0) || !(self.convergence_tol >= 0.0) {
            return param("tolerances must be nonnegative");
        }
        if !(self.jacobian_steps.dphi > 0.0 && self.jacobian_steps.dt > 0.0) {
            return param("Jacobian steps must be positive");
        }
        self.btv.validate()
    }

    /// Log-uniform damping grid, ascending.
    pub fn mu_grid(&self) -> Vec<f64> {
        let t = self.mu_candidates;
        if t == 1 {
            return vec![10f64.powf(0.5 * (self.log_mu_lower + self.log_mu_upper))];
        }
        (0..t)
            .map(|i| {
                let e = self.log_mu_lower + (self.log_mu_upper - self.log_mu_lower) * i as f64 / (t - 1) as f64;
                10f64.powf(e)
            })
            .collect()
    }
}

/// Observations plus the fixed parts of the forward model.
#[derive(Debug, Clone)]
pub struct Problem {
    pub stack: LrStack,
    pub geometry: Geometry,
    pub psf: PsfKernel,
}

impl Problem {
    pub fn new(stack: LrStack, factor: usize, psf: PsfKernel) -> Result<Self> {
        let geometry = Geometry::new(stack.width() * factor, stack.height() * factor, factor)?;
        Ok(Self { stack, geometry, psf })
    }

    pub fn frames(&self) -> usize {
        self.stack.len()
    }
}

/// Joint parameter increment.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    /// One entry per frame; pinned frames receive zeros.
    pub delta_theta: Vec<[f64; MOTION_DOF]>,
    pub delta_x: Vec<f64>,
    pub cg_iterations: usize,
    /// Packed solution vector in system layout, for warm starts.
    pub packed: Vec<f64>,
}

impl Update {
    pub fn norm(&self) -> f64 {
        let t: f64 = self.delta_theta.iter().flatten().map(|v| v * v).sum();
        (t + self.delta_x.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

/// Solves `[PᵀP + μ diag(PᵀP)] Δ = Pᵀ f` by CG.
pub fn lm_update(
    system: &LinearizedSystem<'_>,
    frames: usize,
    mu: f64,
    cg_iterations: usize,
    cg_tol: f64,
    warm: Option<&[f64]>,
) -> Result<Update> {
    if !(mu >= 0.0) {
        return param(format!("damping must be nonnegative, got {mu}"));
    }
    let rhs = system.normal_rhs();
    let out = cg_solve(|v| system.apply_damped_normal(v, mu), &rhs, warm, cg_iterations, cg_tol)?;
    Ok(unpack(system, frames, out.solution, out.iterations))
}

fn unpack(system: &LinearizedSystem<'_>, frames: usize, packed: Vec<f64>, cg_iterations: usize) -> Update {
    let mut delta_theta = vec![[0.0; MOTION_DOF]; frames];
    for (slot, k) in system.free_frames().into_iter().enumerate() {
        delta_theta[k].copy_from_slice(&packed[slot * MOTION_DOF..(slot + 1) * MOTION_DOF]);
    }
    let delta_x = packed[system.theta_unknowns()..].to_vec();
    Update { delta_theta, delta_x, cg_iterations, packed }
}

/// Applies an update, clamping intensities to `[0, 1]`.
pub fn apply_update(x: &Image, theta: &MotionSet, update: &Update) -> (Image, MotionSet) {
    let mut x_new = x.clone();
    x_new
        .data_mut()
        .iter_mut()
        .zip(&update.delta_x)
        .for_each(|(v, d)| *v = (*v + d).clamp(0.0, 1.0));
    let theta_new = MotionSet::new(
        theta
            .frames()
            .iter()
            .zip(&update.delta_theta)
            .map(|(m, d)| m.offset(*d))
            .collect(),
    );
    (x_new, theta_new)
}

/// Stacked `D·H·M(θ_k) x` evaluated by direct warping.
pub fn forward_model(blur_decimate: &SparseOperator, x: &Image, theta: &MotionSet) -> Vec<f64> {
    let m = blur_decimate.rows();
    let mut out = vec![0.0; m * theta.len()];
    out.par_chunks_mut(m)
        .zip(theta.frames().par_iter())
        .for_each(|(o, mk)| blur_decimate.apply_into(warp_image(x, mk).data(), o));
    out
}

/// `‖B^{1/2} (y − W(θ) x)‖²`, the damping selection objective.
pub fn weighted_data_residual(
    blur_decimate: &SparseOperator,
    y: &[f64],
    beta: &[f64],
    x: &Image,
    theta: &MotionSet,
) -> f64 {
    let wx = forward_model(blur_decimate, x, theta);
    y.iter().zip(&wx).zip(beta).map(|((a, b), w)| w * (a - b) * (a - b)).sum()
}

/// Objective value of one damping candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuCandidate {
    pub mu: f64,
    pub objective: f64,
}

/// Result of the damping search.
#[derive(Debug, Clone)]
pub struct MuSelection {
    pub mu: f64,
    pub update: Update,
    pub candidates: Vec<MuCandidate>,
    pub cg_iterations: usize,
}

/// Evaluates every grid candidate and keeps the one with the smallest
/// weighted data residual after the step. Ties go to the larger `μ`.
#[allow(clippy::too_many_arguments)]
pub fn select_mu(
    system: &LinearizedSystem<'_>,
    blur_decimate: &SparseOperator,
    y: &[f64],
    beta: &[f64],
    x: &Image,
    theta: &MotionSet,
    cfg: &SolverConfig,
) -> Result<MuSelection> {
    let mut best: Option<(f64, f64, Update)> = None;
    let mut candidates = Vec::with_capacity(cfg.mu_candidates);
    let mut warm: Option<Vec<f64>> = None;
    let mut cg_total = 0;
    for mu in cfg.mu_grid() {
        let start = if cfg.warm_start { warm.as_deref() } else { None };
        let update = lm_update(system, theta.len(), mu, cfg.cg_iterations, cfg.cg_tol, start)?;
        cg_total += update.cg_iterations;
        let (xt, tt) = apply_update(x, theta, &update);
        let objective = weighted_data_residual(blur_decimate, y, beta, &xt, &tt);
        candidates.push(MuCandidate { mu, objective });
        warm = Some(update.packed.clone());
        if !objective.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(_, o, _)| objective <= *o) {
            best = Some((mu, objective, update));
        }
    }
    let Some((mu, _, update)) = best else {
        return Err(Error::Solver { iteration: 0, reason: "every damping candidate produced a non-finite residual".into() });
    };
    Ok(MuSelection { mu, update, candidates, cg_iterations: cg_total })
}

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Energy with this iteration's weights at the incoming estimate.
    pub energy_start: f64,
    /// Energy with this iteration's weights after the accepted step.
    pub energy: f64,
    /// Damping objective of the accepted step.
    pub weighted_residual: f64,
    pub mu: f64,
    pub mu_candidates: Vec<MuCandidate>,
    pub cg_iterations: usize,
    pub delta_theta_norm: f64,
    pub delta_x_norm: f64,
    pub relative_change: f64,
    pub sigma_noise: f64,
    pub sigma_prior: f64,
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub mode: SolverMode,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

/// Final estimate of a run.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: Image,
    pub motion: MotionSet,
    pub trace: SolverTrace,
    /// Weights used in the last iteration.
    pub confidence: ConfidenceState,
}

/// Failure inside the outer loop, carrying the partial trace.
#[derive(Debug)]
pub struct RunError {
    pub error: Error,
    pub trace: SolverTrace,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} iterations)", self.error, self.trace.records.len())
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Weights and scales computed from the current estimate.
#[derive(Debug, Clone)]
pub struct IterationWeights {
    pub residual: Vec<f64>,
    pub confidence: ConfidenceState,
    /// IRLS diagonals `U`, stacked per shift.
    pub irls: Vec<f64>,
}

impl IterationWeights {
    /// Stacked `α ⊙ U`.
    pub fn reg_weights(&self) -> Vec<f64> {
        self.confidence.alpha.iter().zip(&self.irls).map(|(a, u)| a * u).collect()
    }
}

/// Outer-loop state. [`Solver::step`] performs one iteration.
#[derive(Debug, Clone)]
pub struct Solver {
    cfg: SolverConfig,
    y: Vec<f64>,
    x: Image,
    theta: MotionSet,
    ops: SystemOperators,
    shifts: ShiftTransform,
    previous: ConfidenceState,
    ground_truth: Option<Image>,
    iteration: usize,
    converged: bool,
    records: Vec<IterationRecord>,
    last: Option<ConfidenceState>,
}

impl Solver {
    pub fn new(problem: &Problem, theta0: &MotionSet, x0: Image, cfg: SolverConfig, ground_truth: Option<&Image>) -> Result<Self> {
        cfg.validate()?;
        let g = &problem.geometry;
        if theta0.len() != problem.frames() {
            return dims(format!("{} motion records for {} frames", theta0.len(), problem.frames()));
        }
        theta0.validate()?;
        if x0.width() != g.hr_width || x0.height() != g.hr_height {
            return dims("initial image does not match the HR grid");
        }
        if let Some(gt) = ground_truth {
            if !gt.same_dims(&x0) {
                return dims("ground truth does not match the HR grid");
            }
        }
        let ops = SystemOperators::new(g.clone(), &problem.psf, theta0)?;
        let shifts = ShiftTransform::new(cfg.btv, g.hr_width, g.hr_height)?;
        let previous = ConfidenceState::uninformative(g.lr_len() * problem.frames(), shifts.stacked_len());
        Ok(Self {
            cfg,
            y: problem.stack.flatten(),
            x: x0,
            theta: theta0.clone(),
            ops,
            shifts,
            previous,
            ground_truth: ground_truth.cloned(),
            iteration: 0,
            converged: false,
            records: Vec::new(),
            last: None,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn image(&self) -> &Image {
        &self.x
    }

    pub fn motion(&self) -> &MotionSet {
        &self.theta
    }

    pub fn operators(&self) -> &SystemOperators {
        &self.ops
    }

    pub fn shifts(&self) -> &ShiftTransform {
        &self.shifts
    }

    pub fn observations(&self) -> &[f64] {
        &self.y
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn is_done(&self) -> bool {
        self.converged || self.iteration >= self.cfg.max_iterations
    }

    /// Weights from the current estimate under the previous iteration's
    /// weights.
    pub fn compute_weights(&self) -> Result<IterationWeights> {
        let wx = self.ops.forward(self.x.data());
        let residual: Vec<f64> = self.y.iter().zip(&wx).map(|(a, b)| a - b).collect();
        let sigma_noise = noise_scale(&residual, &self.previous.beta)?;
        let beta = observation_weights(&residual, sigma_noise);

        let btv = &self.cfg.btv;
        let z = self.shifts.apply(self.x.data());
        let off: Vec<f64> = z.off_center(btv);
        let n = self.shifts.pixels();
        let c = btv.center_shift();
        let alpha_prev_off: Vec<f64> = self
            .previous
            .alpha
            .iter()
            .enumerate()
            .filter(|(i, _)| i / n != c)
            .map(|(_, a)| *a)
            .collect();
        let sigma_prior = prior_scale(&off, &alpha_prev_off)?;
        let alpha = prior_weights_fn(z.data(), sigma_prior, btv.sparsity);
        let irls = irls_diagonal(z.data(), btv.tau);
        Ok(IterationWeights {
            residual,
            confidence: ConfidenceState { beta, alpha, sigma_noise, sigma_prior },
            irls,
        })
    }

    /// Jacobians of every frame whose motion is free (all but the first).
    pub fn jacobians(&self) -> Result<Vec<(usize, crate::motion::FrameJacobian)>> {
        if !self.cfg.mode.updates_motion() {
            return Ok(Vec::new());
        }
        let steps: JacobianSteps = self.cfg.jacobian_steps.into();
        (1..self.theta.len())
            .into_par_iter()
            .map(|k| Ok((k, motion_jacobian_with(self.ops.blur_decimate(), &self.x, self.theta.get(k), steps)?)))
            .collect()
    }

    pub fn assemble<'s>(&'s self, weights: &IterationWeights) -> Result<LinearizedSystem<'s>> {
        LinearizedSystem::assemble(
            &self.ops,
            &self.shifts,
            self.jacobians()?,
            self.x.data(),
            &weights.residual,
            &weights.confidence.beta,
            &weights.reg_weights(),
            self.cfg.lambda,
        )
    }

    /// `rᵀ B r + λ ‖A S x‖₁` under the given weights.
    pub fn energy(&self, x: &Image, theta: &MotionSet, beta: &[f64], alpha: &[f64]) -> f64 {
        let data = weighted_data_residual(self.ops.blur_decimate(), &self.y, beta, x, theta);
        if self.cfg.lambda == 0.0 {
            return data;
        }
        let z = self.shifts.apply(x.data());
        let prior: f64 = z.data().iter().zip(alpha).map(|(z, a)| a * z.abs()).sum();
        data + self.cfg.lambda * prior
    }

    /// One outer iteration.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        let t = self.iteration + 1;
        let at = |e: Error| match e {
            Error::Solver { reason, .. } => Error::Solver { iteration: t, reason },
            other => other,
        };
        let weights = self.compute_weights().map_err(at)?;
        let beta = &weights.confidence.beta;
        let alpha = &weights.confidence.alpha;
        let energy_start = self.energy(&self.x, &self.theta, beta, alpha);

        let (mu, update, candidates, cg_iterations) = {
            let system = self.assemble(&weights).map_err(at)?;
            match self.cfg.mode {
                SolverMode::GaussNewton => {
                    let u = lm_update(&system, self.theta.len(), 0.0, self.cfg.cg_iterations, self.cfg.cg_tol, None).map_err(at)?;
                    let it = u.cg_iterations;
                    (0.0, u, Vec::new(), it)
                }
                _ => {
                    let sel = select_mu(&system, self.ops.blur_decimate(), &self.y, beta, &self.x, &self.theta, &self.cfg)
                        .map_err(at)?;
                    (sel.mu, sel.update, sel.candidates, sel.cg_iterations)
                }
            }
        };

        let (x_new, theta_new) = apply_update(&self.x, &self.theta, &update);
        let weighted_residual = weighted_data_residual(self.ops.blur_decimate(), &self.y, beta, &x_new, &theta_new);
        if !weighted_residual.is_finite() {
            return Err(Error::Solver { iteration: t, reason: "non-finite residual after update".into() });
        }
        let energy = self.energy(&x_new, &theta_new, beta, alpha);

        let dx: Vec<f64> = x_new.data().iter().zip(self.x.data()).map(|(a, b)| a - b).collect();
        let dt: Vec<f64> = theta_new
            .frames()
            .iter()
            .zip(self.theta.frames())
            .flat_map(|(a, b)| (0..MOTION_DOF).map(move |j| a.params()[j] - b.params()[j]))
            .collect();
        let delta_x_norm = norm(&dx);
        let delta_theta_norm = norm(&dt);
        let scale = (norm(self.x.data()).powi(2)
            + self.theta.frames().iter().flat_map(|m| m.params()).map(|v| v * v).sum::<f64>())
        .sqrt();
        let change = delta_x_norm.hypot(delta_theta_norm);
        let relative_change = if scale > 0.0 { change / scale } else { change };

        self.x = x_new;
        if theta_new != self.theta {
            self.ops.set_motion(&theta_new).map_err(at)?;
            self.theta = theta_new;
        }
        self.previous = weights.confidence.clone();
        self.last = Some(weights.confidence);
        self.iteration = t;
        self.converged = relative_change < self.cfg.convergence_tol;

        let psnr = self.ground_truth.as_ref().map(|gt| {
            let crop = 2 * self.ops.geometry().factor;
            psnr(&self.x, gt, 1.0, crop).expect("ground truth dimensions checked at construction")
        });
        self.records.push(IterationRecord {
            iteration: t,
            energy_start,
            energy,
            weighted_residual,
            mu,
            mu_candidates: candidates,
            cg_iterations,
            delta_theta_norm,
            delta_x_norm,
            relative_change,
            sigma_noise: self.previous.sigma_noise,
            sigma_prior: self.previous.sigma_prior,
            psnr,
        });
        Ok(self.records.last().unwrap())
    }

    /// Iterates until convergence or the iteration budget is spent.
    pub fn run_to_end(mut self) -> std::result::Result<Reconstruction, RunError> {
        while !self.is_done() {
            if let Err(error) = self.step() {
                let trace = SolverTrace { mode: self.cfg.mode, records: self.records, converged: false };
                return Err(RunError { error, trace });
            }
        }
        let confidence = self.last.unwrap_or(self.previous);
        Ok(Reconstruction {
            image: self.x,
            motion: self.theta,
            trace: SolverTrace { mode: self.cfg.mode, records: self.records, converged: self.converged },
            confidence,
        })
    }
}

/// Full pipeline: median-of-registered-frames initialization followed by
/// the outer loop.
pub fn run(
    problem: &Problem,
    theta0: &MotionSet,
    cfg: &SolverConfig,
    ground_truth: Option<&Image>,
) -> std::result::Result<Reconstruction, RunError> {
    let empty = |error| RunError { error, trace: SolverTrace { mode: cfg.mode, records: Vec::new(), converged: false } };
    let x0 = initialize(&problem.stack, theta0, problem.geometry.factor).map_err(empty)?;
    run_from(problem, theta0, x0, cfg, ground_truth)
}

/// Outer loop from a caller-provided initial image.
pub fn run_from(
    problem: &Problem,
    theta0: &MotionSet,
    x0: Image,
    cfg: &SolverConfig,
    ground_truth: Option<&Image>,
) -> std::result::Result<Reconstruction, RunError> {
    let solver = Solver::new(problem, theta0, x0, cfg.clone(), ground_truth)
        .map_err(|error| RunError { error, trace: SolverTrace { mode: cfg.mode, records: Vec::new(), converged: false } })?;
    solver.run_to_end()
}
