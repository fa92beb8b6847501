#![allow(dead_code)]

use jointsr::image::{Image, LrStack};
use jointsr::imaging::make_gaussian_psf;
use jointsr::motion::{MotionSet, RigidMotion};
use jointsr::simulate::{clean_frames, SimulationSpec};
use jointsr::solver::Problem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Band-limited test image with values inside `[0.2, 0.8]`.
pub fn smooth_image(w: usize, h: usize, seed: u64) -> Image {
    let mut r = rng(seed);
    let waves: Vec<[f64; 4]> = (0..5)
        .map(|_| {
            [
                r.random_range(-0.35..0.35),
                r.random_range(-0.35..0.35),
                r.random_range(0.0..std::f64::consts::TAU),
                r.random_range(0.02..0.06),
            ]
        })
        .collect();
    Image::from_fn(w, h, |c, row| {
        let v: f64 = waves.iter().map(|[a, b, p, amp]| amp * (a * c as f64 + b * row as f64 + p).sin()).sum();
        0.5 + v
    })
}

pub fn motions(v: &[(f64, f64, f64)]) -> MotionSet {
    MotionSet::new(v.iter().map(|&(phi, tu, tv)| RigidMotion::new(phi, tu, tv)).collect())
}

/// Noiseless frames of `x` under `theta`.
pub fn toy_problem(x: &Image, theta: &MotionSet, factor: usize, sigma_psf: f64) -> Problem {
    let spec = SimulationSpec { factor, sigma_psf, frames: theta.len(), ..SimulationSpec::default() };
    let frames = clean_frames(x, theta, &spec).unwrap();
    Problem::new(LrStack::new(frames).unwrap(), factor, make_gaussian_psf(sigma_psf).unwrap()).unwrap()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Columns of a linear map given by its action.
pub fn dense_columns(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            apply(&e)
        })
        .collect()
}
