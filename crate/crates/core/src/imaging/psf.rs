use crate::error::{param, Result};

/// Smallest sigma accepted; narrower kernels are indistinguishable from a delta.
pub const MIN_PSF_SIGMA: f64 = 1e-3;

/// Square, normalized, isotropic blur kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfKernel {
    side: usize,
    taps: Vec<f64>,
}

impl PsfKernel {
    /// Single unit tap.
    pub fn identity() -> Self {
        Self { side: 1, taps: vec![1.0] }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn radius(&self) -> usize {
        self.side / 2
    }

    /// Row-major taps, `side * side` long.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Tap at offset `(du, dv)` from the center.
    pub fn tap(&self, du: isize, dv: isize) -> f64 {
        let r = self.radius() as isize;
        self.taps[((dv + r) * self.side as isize + du + r) as usize]
    }
}

/// Sampled isotropic Gaussian with support equal to the smallest odd
/// integer not below `6 * sigma`.
pub fn make_gaussian_psf(sigma: f64) -> Result<PsfKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return param(format!("PSF sigma must be positive, got {sigma}"));
    }
    let sigma = sigma.max(MIN_PSF_SIGMA);
    let mut side = (6.0 * sigma - 1e-9).ceil().max(1.0) as usize;
    if side % 2 == 0 {
        side += 1;
    }
    let r = (side / 2) as isize;
    let mut taps = Vec::with_capacity(side * side);
    for v in -r..=r {
        for u in -r..=r {
            let d2 = (u * u + v * v) as f64;
            taps.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(PsfKernel { side, taps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sigma_gives_three_taps() {
        let k = make_gaussian_psf(0.5).unwrap();
        assert_eq!(k.side(), 3);
        assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_sigma_center_tap() {
        // Hand evaluation: 1D normalizer s = 1 + 2(e^-0.5 + e^-2 + e^-4.5),
        // center tap of the separable product = 1 / s².
        let k = make_gaussian_psf(1.0).unwrap();
        assert_eq!(k.side(), 7);
        let s = 1.0 + 2.0 * ((-0.5f64).exp() + (-2.0f64).exp() + (-4.5f64).exp());
        assert!((k.tap(0, 0) - 1.0 / (s * s)).abs() < 1e-15);
        assert!((k.tap(0, 0) - 0.15924112569070248).abs() < 1e-15);
    }

    #[test]
    fn tiny_sigma_is_a_delta() {
        let k = make_gaussian_psf(1e-9).unwrap();
        let center = k.tap(0, 0);
        assert!(center > 1.0 - 1e-12);
        assert!(k.taps().iter().sum::<f64>() - center < 1e-12);
    }

    #[test]
    fn rotation_symmetric() {
        let k = make_gaussian_psf(1.3).unwrap();
        let r = k.radius() as isize;
        for v in -r..=r {
            for u in -r..=r {
                assert_eq!(k.tap(u, v), k.tap(-v, u));
            }
        }
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        assert!(make_gaussian_psf(0.0).is_err());
        assert!(make_gaussian_psf(-1.0).is_err());
        assert!(make_gaussian_psf(f64::NAN).is_err());
    }
}
