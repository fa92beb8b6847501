//! Flat JSON configuration shared by all subcommands.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::read_text;
use crate::simulate::SimulationSpec;
use crate::solver::{SolverConfig, SolverMode};

/// Every key is optional; missing keys keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub lambda: Option<f64>,
    pub max_iterations: Option<usize>,
    pub cg_iterations: Option<usize>,
    pub mu_candidates: Option<usize>,
    pub log_mu_lower: Option<f64>,
    pub log_mu_upper: Option<f64>,
    pub cg_tol: Option<f64>,
    pub convergence_tol: Option<f64>,
    pub mode: Option<String>,
    pub warm_start: Option<bool>,
    pub radius: Option<usize>,
    pub alpha0: Option<f64>,
    pub tau: Option<f64>,
    pub sparsity: Option<f64>,
    pub dphi: Option<f64>,
    pub dt: Option<f64>,

    pub factor: Option<usize>,
    pub sigma_psf: Option<f64>,
    pub frames: Option<usize>,
    pub translation_range: Option<f64>,
    pub rotation_range_deg: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub perturb_translation: Option<f64>,
    pub perturb_rotation_deg: Option<f64>,
    pub outlier_frames: Option<usize>,
    pub outlier_level: Option<f64>,
    pub seed: Option<u64>,

    /// Side length of the built-in scene when no image is given.
    pub scene_size: Option<usize>,
}

fn set<T: Copy>(dst: &mut T, src: Option<T>) {
    if let Some(v) = src {
        *dst = v;
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }

    pub fn apply_solver(&self, cfg: &mut SolverConfig) -> Result<()> {
        set(&mut cfg.lambda, self.lambda);
        set(&mut cfg.max_iterations, self.max_iterations);
        set(&mut cfg.cg_iterations, self.cg_iterations);
        set(&mut cfg.mu_candidates, self.mu_candidates);
        set(&mut cfg.log_mu_lower, self.log_mu_lower);
        set(&mut cfg.log_mu_upper, self.log_mu_upper);
        set(&mut cfg.cg_tol, self.cg_tol);
        set(&mut cfg.convergence_tol, self.convergence_tol);
        set(&mut cfg.warm_start, self.warm_start);
        set(&mut cfg.btv.radius, self.radius);
        set(&mut cfg.btv.alpha0, self.alpha0);
        set(&mut cfg.btv.tau, self.tau);
        set(&mut cfg.btv.sparsity, self.sparsity);
        set(&mut cfg.jacobian_steps.dphi, self.dphi);
        set(&mut cfg.jacobian_steps.dt, self.dt);
        if let Some(m) = &self.mode {
            cfg.mode = m.parse::<SolverMode>()?;
        }
        Ok(())
    }

    pub fn apply_simulation(&self, spec: &mut SimulationSpec) {
        set(&mut spec.factor, self.factor);
        set(&mut spec.sigma_psf, self.sigma_psf);
        set(&mut spec.frames, self.frames);
        set(&mut spec.translation_range, self.translation_range);
        set(&mut spec.rotation_range_deg, self.rotation_range_deg);
        set(&mut spec.noise_sigma, self.noise_sigma);
        set(&mut spec.perturb_translation, self.perturb_translation);
        set(&mut spec.perturb_rotation_deg, self.perturb_rotation_deg);
        set(&mut spec.outlier_frames, self.outlier_frames);
        set(&mut spec.outlier_level, self.outlier_level);
        set(&mut spec.seed, self.seed);
    }
}
