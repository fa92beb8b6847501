//! Synthetic low-resolution stacks: random rigid motion, blur, decimation,
//! Gaussian noise, perturbed initial motion and salt-and-pepper frames.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::image::{Image, LrStack};
use crate::imaging::{build_blur_operator, build_decimation_operator, make_gaussian_psf, warp_image};
use crate::motion::{MotionSet, RigidMotion};

/// Rotation perturbation used by the wide preset, in degrees.
pub const WIDE_ROTATION_PERTURBATION_DEG: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub factor: usize,
    pub sigma_psf: f64,
    pub frames: usize,
    /// Half-width of the uniform translation range, HR pixels.
    pub translation_range: f64,
    /// Half-width of the uniform rotation range, degrees.
    pub rotation_range_deg: f64,
    pub noise_sigma: f64,
    /// Half-width of the uniform translation error of the initial motion.
    pub perturb_translation: f64,
    /// Half-width of the uniform rotation error of the initial motion, degrees.
    pub perturb_rotation_deg: f64,
    /// Number of frames hit by salt-and-pepper noise.
    pub outlier_frames: usize,
    /// Fraction of invalid pixels in each outlier frame.
    pub outlier_level: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            factor: 2,
            sigma_psf: 0.5,
            frames: 12,
            translation_range: 2.0,
            rotation_range_deg: 1.0,
            noise_sigma: 0.025,
            perturb_translation: 0.3,
            perturb_rotation_deg: 0.005,
            outlier_frames: 0,
            outlier_level: 0.075,
            seed: 0,
        }
    }
}

impl SimulationSpec {
    /// Default protocol with the ±0.05° rotation perturbation.
    pub fn wide_rotation_perturbation() -> Self {
        Self { perturb_rotation_deg: WIDE_ROTATION_PERTURBATION_DEG, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 || self.frames == 0 {
            return param("factor and frame count must be positive");
        }
        let ranges = [
            self.translation_range,
            self.rotation_range_deg,
            self.noise_sigma,
            self.perturb_translation,
            self.perturb_rotation_deg,
        ];
        if ranges.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return param("ranges and noise levels must be finite and nonnegative");
        }
        if !(self.sigma_psf > 0.0) {
            return param("PSF sigma must be positive");
        }
        if !(0.0..=1.0).contains(&self.outlier_level) {
            return param("outlier level must lie in [0, 1]");
        }
        if self.outlier_frames > self.frames {
            return param("more outlier frames than frames");
        }
        Ok(())
    }
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Motion = 1,
    Perturbation = 2,
    Noise = 3,
    Outliers = 4,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

fn symmetric(rng: &mut impl Rng, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..=half)
    }
}

/// Ground-truth motion; frame 1 is the identity reference.
pub fn sample_motion(spec: &SimulationSpec, rng: &mut impl Rng) -> MotionSet {
    let rot = spec.rotation_range_deg.to_radians();
    MotionSet::new(
        (0..spec.frames)
            .map(|k| {
                if k == 0 {
                    return RigidMotion::identity();
                }
                let phi = symmetric(rng, rot);
                let t_u = symmetric(rng, spec.translation_range);
                let t_v = symmetric(rng, spec.translation_range);
                RigidMotion::new(phi, t_u, t_v)
            })
            .collect(),
    )
}

/// Initial motion estimate: uniform errors on every frame but the first.
pub fn perturb_motion(theta_true: &MotionSet, spec: &SimulationSpec, rng: &mut impl Rng) -> MotionSet {
    let rot = spec.perturb_rotation_deg.to_radians();
    MotionSet::new(
        theta_true
            .frames()
            .iter()
            .enumerate()
            .map(|(k, m)| {
                if k == 0 {
                    return *m;
                }
                let d = [
                    symmetric(rng, rot),
                    symmetric(rng, spec.perturb_translation),
                    symmetric(rng, spec.perturb_translation),
                ];
                m.offset(d)
            })
            .collect(),
    )
}

/// Noise-free `D·H·M(θ_k) x` for every frame.
pub fn clean_frames(x_true: &Image, theta: &MotionSet, spec: &SimulationSpec) -> Result<Vec<Image>> {
    let psf = make_gaussian_psf(spec.sigma_psf)?;
    let (w, h) = (x_true.width(), x_true.height());
    let dh = build_decimation_operator(w, h, spec.factor)?.compose(&build_blur_operator(&psf, w, h)?)?;
    theta
        .frames()
        .par_iter()
        .map(|m| Image::new(w / spec.factor, h / spec.factor, dh.apply(warp_image(x_true, m).data())))
        .collect()
}

/// Forward model plus i.i.d. Gaussian noise, clamped to `[0, 1]`.
pub fn degrade(x_true: &Image, theta: &MotionSet, spec: &SimulationSpec, rng: &mut impl Rng) -> Result<LrStack> {
    spec.validate()?;
    let clean = clean_frames(x_true, theta, spec)?;
    let seeds: Vec<u64> = (0..clean.len()).map(|_| rng.random()).collect();
    let sigma = spec.noise_sigma;
    let frames: Vec<Image> = clean
        .into_par_iter()
        .zip(seeds)
        .map(|(mut frame, seed)| {
            if sigma > 0.0 {
                let mut frame_rng = ChaCha8Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0, sigma).expect("positive sigma");
                for v in frame.data_mut() {
                    *v += normal.sample(&mut frame_rng);
                }
            }
            frame.clamp_unit();
            frame
        })
        .collect();
    LrStack::new(frames)
}

/// Pixels altered by [`inject_salt_pepper`], per frame.
pub type OutlierMask = Vec<Vec<usize>>;

/// Sets `round(ν·M)` distinct pixels of each selected frame to 0 or 1.
pub fn inject_salt_pepper(
    stack: &LrStack,
    frame_indices: &[usize],
    nu: f64,
    rng: &mut impl Rng,
) -> Result<(LrStack, OutlierMask)> {
    if !(0.0..=1.0).contains(&nu) {
        return param(format!("outlier level {nu} outside [0, 1]"));
    }
    if let Some(&k) = frame_indices.iter().find(|&&k| k >= stack.len()) {
        return param(format!("frame index {k} out of range for {} frames", stack.len()));
    }
    let mut out = stack.clone();
    let mut mask = vec![Vec::new(); stack.len()];
    let m = stack.frame_len();
    let count = (nu * m as f64).round() as usize;
    for &k in frame_indices {
        let mut picked = sample(rng, m, count).into_vec();
        picked.sort_unstable();
        let data = out.frames_mut()[k].data_mut();
        for &i in &picked {
            data[i] = if rng.random::<bool>() { 1.0 } else { 0.0 };
        }
        mask[k] = picked;
    }
    Ok((out, mask))
}

/// Everything needed to run and score one synthetic experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ground_truth: Image,
    pub stack: LrStack,
    pub theta_true: MotionSet,
    pub theta_init: MotionSet,
    /// Frames that received salt-and-pepper noise, ascending.
    pub outlier_frames: Vec<usize>,
    pub outlier_pixels: OutlierMask,
    pub spec: SimulationSpec,
}

/// Runs the full protocol from `spec.seed`.
pub fn simulate_dataset(x_true: &Image, spec: &SimulationSpec) -> Result<Dataset> {
    spec.validate()?;
    if x_true.width() % spec.factor != 0 || x_true.height() % spec.factor != 0 {
        return param(format!(
            "{}x{} image not divisible by factor {}",
            x_true.width(),
            x_true.height(),
            spec.factor
        ));
    }
    let theta_true = sample_motion(spec, &mut stream(spec.seed, Stream::Motion));
    let theta_init = perturb_motion(&theta_true, spec, &mut stream(spec.seed, Stream::Perturbation));
    let stack = degrade(x_true, &theta_true, spec, &mut stream(spec.seed, Stream::Noise))?;
    let mut rng = stream(spec.seed, Stream::Outliers);
    let mut outlier_frames = sample(&mut rng, spec.frames, spec.outlier_frames).into_vec();
    outlier_frames.sort_unstable();
    let (stack, outlier_pixels) = inject_salt_pepper(&stack, &outlier_frames, spec.outlier_level, &mut rng)?;
    Ok(Dataset {
        ground_truth: x_true.clone(),
        stack,
        theta_true,
        theta_init,
        outlier_frames,
        outlier_pixels,
        spec: spec.clone(),
    })
}

/// Deterministic dead-leaves test scene: occluding disks with radius
/// density `∝ r⁻³` and uniform gray levels, painted back to front with
/// anti-aliased edges. Intensities lie within `[0.1, 0.9]`.
pub fn synthetic_scene(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = width.min(height) as f64;
    let (r_min, r_max) = (1.5f64, (0.3 * side).max(2.0));
    let (a, b) = (r_min.powi(-2), r_max.powi(-2));
    let count = (width * height) / 12 + 1;
    let mut img = Image::filled(width, height, rng.random_range(0.1..0.9));
    let edge = 0.4;
    for _ in 0..count {
        let r = (a - rng.random::<f64>() * (a - b)).powf(-0.5);
        let cx = rng.random_range(-r..width as f64 + r);
        let cy = rng.random_range(-r..height as f64 + r);
        let gray: f64 = rng.random_range(0.1..0.9);
        let c0 = (cx - r - 2.0).floor().max(0.0) as usize;
        let c1 = ((cx + r + 2.0).ceil().max(0.0) as usize).min(width);
        let r0 = (cy - r - 2.0).floor().max(0.0) as usize;
        let r1 = ((cy + r + 2.0).ceil().max(0.0) as usize).min(height);
        for row in r0..r1 {
            for col in c0..c1 {
                let d = r - (col as f64 - cx).hypot(row as f64 - cy);
                let cover = 1.0 / (1.0 + (-d / edge).exp());
                let v = &mut img.data_mut()[row * width + col];
                *v += cover * (gray - *v);
            }
        }
    }
    img
}
