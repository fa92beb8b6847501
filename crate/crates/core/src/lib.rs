//! Joint rigid motion estimation and multi-frame super-resolution.
//!
//! A stack of low-resolution frames is modeled as `y_k = D·H·M(θ_k)·x + ε`
//! (decimation, blur and rigid warp of a latent high-resolution image `x`).
//! [`solver::run`] estimates `x` and the per-frame motion `θ` together by
//! Levenberg-Marquardt iterations on a confidence-weighted energy with a
//! weighted bilateral total variation prior.

pub mod cli;
pub mod confidence;
pub mod error;
pub mod image;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod motion;
pub mod prior;
pub mod simulate;
pub mod solver;

pub use error::{Error, Result};
pub use image::{HrImage, Image, LrFrame, LrStack};
pub use motion::{MotionSet, RigidMotion};
pub use solver::{run, Problem, Reconstruction, SolverConfig, SolverMode};
