//! Random photometric perturbation of the patch ("patch denoising").
//!
//! Each call draws one brightness multiplier and one contrast offset for the
//! whole patch plus independent Gaussian noise per channel value, then clamps
//! to `[0,1]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Patch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRanges {
    pub brightness_lo: f64,
    pub brightness_hi: f64,
    pub contrast_lo: f64,
    pub contrast_hi: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for AugmentationRanges {
    fn default() -> Self {
        AugmentationRanges {
            brightness_lo: 0.8,
            brightness_hi: 1.2,
            contrast_lo: -0.1,
            contrast_hi: 0.1,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl AugmentationRanges {
    pub fn identity() -> Self {
        AugmentationRanges {
            brightness_lo: 1.0,
            brightness_hi: 1.0,
            contrast_lo: 0.0,
            contrast_hi: 0.0,
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.brightness_lo <= self.brightness_hi) {
            return Err(Error::InvalidArgument("brightness_lo > brightness_hi".into()));
        }
        if !(self.contrast_lo <= self.contrast_hi) {
            return Err(Error::InvalidArgument("contrast_lo > contrast_hi".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn draw(&self, len: usize, rng: &mut ChaCha8Rng) -> AugmentDraw {
        let brightness = rng.random_range(self.brightness_lo..=self.brightness_hi);
        let contrast = rng.random_range(self.contrast_lo..=self.contrast_hi);
        let noise = (0..len)
            .map(|_| self.noise_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        AugmentDraw {
            brightness,
            contrast,
            noise,
        }
    }
}

/// One realized perturbation; constants of the differentiable map it defines.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentDraw {
    pub brightness: f64,
    pub contrast: f64,
    pub noise: Vec<f64>,
}

impl AugmentDraw {
    pub fn identity(len: usize) -> Self {
        AugmentDraw {
            brightness: 1.0,
            contrast: 0.0,
            noise: vec![0.0; len],
        }
    }

    fn raw(&self, i: usize, v: f64) -> f64 {
        v * self.brightness + self.contrast + self.noise[i]
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.noise.len());
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.raw(i, v).clamp(0.0, 1.0))
            .collect()
    }

    /// Chain rule through [`apply`](Self::apply); zero where the clamp
    /// saturates.
    pub fn backward(&self, values: &[f64], out_grad: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(out_grad)
            .enumerate()
            .map(|(i, (&v, &g))| {
                let r = self.raw(i, v);
                if (0.0..=1.0).contains(&r) {
                    g * self.brightness
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Returns a perturbed copy of `patch`; identical `rng` states give
/// bit-identical results.
pub fn denoise_patch(patch: &Patch, ranges: &AugmentationRanges, rng: &mut ChaCha8Rng) -> Patch {
    let values = patch.as_f64();
    let draw = ranges.draw(values.len(), rng);
    let mut out = patch.clone();
    out.assign_clamped(&draw.apply(&values));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_ranges_are_identity() {
        let patch = Patch::random(8, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = denoise_patch(&patch, &AugmentationRanges::identity(), &mut rng);
        assert_eq!(out, patch);
    }

    #[test]
    fn fixed_draw_hand_values() {
        let draw = AugmentDraw {
            brightness: 1.2,
            contrast: 0.1,
            noise: vec![0.0; 3],
        };
        let out = draw.apply(&[0.5, 0.5, 1.0]);
        assert!((out[0] - 0.7).abs() < 1e-12);
        assert!((out[1] - 0.7).abs() < 1e-12);
        assert_eq!(out[2], 1.0);
        let g = draw.backward(&[0.5, 0.5, 1.0], &[1.0, 2.0, 1.0]);
        assert!((g[0] - 1.2).abs() < 1e-12);
        assert!((g[1] - 2.4).abs() < 1e-12);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn same_rng_state_same_output() {
        let patch = Patch::random(6, 2).unwrap();
        let ranges = AugmentationRanges::default();
        let a = denoise_patch(&patch, &ranges, &mut ChaCha8Rng::seed_from_u64(9));
        let b = denoise_patch(&patch, &ranges, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn identity_gradient_by_finite_differences() {
        let vals: Vec<f64> = (0..12).map(|i| 0.1 + i as f64 * 0.06).collect();
        let draw = AugmentDraw::identity(vals.len());
        let weights: Vec<f64> = (0..12).map(|i| i as f64 - 5.5).collect();
        let g = draw.backward(&vals, &weights);
        let h = 1e-4;
        for i in 0..vals.len() {
            let mut p = vals.clone();
            p[i] += h;
            let mut m = vals.clone();
            m[i] -= h;
            let f = |v: &[f64]| draw.apply(v).iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
            assert_eq!(g[i], weights[i]);
        }
    }

    #[test]
    fn validation() {
        let mut r = AugmentationRanges::default();
        assert!(r.validate().is_ok());
        r.noise_std = -1.0;
        assert!(r.validate().is_err());
    }
}
