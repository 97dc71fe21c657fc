//! Post-processing that imitates a physical camera.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use syn2real_tensor::Scalar;

use super::image::{Image, CHANNELS};
use crate::rng::named_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraEffectConfig {
    pub noise_sigma: f64,
    /// Per-channel `(dx, dy)` sub-pixel offsets in pixels.
    pub chromatic_shift_px: [(f64, f64); 3],
    pub white_balance_gain: [f64; 3],
    pub exposure_gamma: f64,
    pub vignette_strength: f64,
}

impl Default for CameraEffectConfig {
    fn default() -> Self {
        Self::identity()
    }
}

impl CameraEffectConfig {
    pub fn identity() -> Self {
        Self {
            noise_sigma: 0.0,
            chromatic_shift_px: [(0.0, 0.0); 3],
            white_balance_gain: [1.0; 3],
            exposure_gamma: 1.0,
            vignette_strength: 0.0,
        }
    }
}

/// Bilinear resample of one plane at `(y - dy, x - dx)` with edge clamping.
fn shift_plane<T: Scalar>(src: &[T], h: usize, w: usize, dx: f64, dy: f64) -> Vec<T> {
    let sample = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        src[yy * w + xx]
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let sy = y as f64 - dy;
            let sx = x as f64 - dx;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (T::lit(sy - y0), T::lit(sx - x0));
            let (y0, x0) = (y0 as isize, x0 as isize);
            let one = T::one();
            let top = sample(y0, x0) * (one - fx) + sample(y0, x0 + 1) * fx;
            let bot = sample(y0 + 1, x0) * (one - fx) + sample(y0 + 1, x0 + 1) * fx;
            out.push(top * (one - fy) + bot * fy);
        }
    }
    out
}

/// White balance, gamma, chromatic shift, vignette, then Gaussian noise; the result is clamped to `[0, 1]`.
pub fn apply_camera_effects<T: Scalar>(img: &Image<T>, cfg: &CameraEffectConfig, seed: u64) -> Image<T> {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for c in 0..CHANNELS {
        let gain = cfg.white_balance_gain[c];
        if gain != 1.0 {
            let g = T::lit(gain);
            out.plane_mut(c).iter_mut().for_each(|v| *v *= g);
        }
    }
    if cfg.exposure_gamma != 1.0 {
        let gamma = T::lit(cfg.exposure_gamma);
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = v.max(T::zero()).powf(gamma));
    }
    for c in 0..CHANNELS {
        let (dx, dy) = cfg.chromatic_shift_px[c];
        if dx != 0.0 || dy != 0.0 {
            let shifted = shift_plane(out.plane(c), h, w, dx, dy);
            out.plane_mut(c).copy_from_slice(&shifted);
        }
    }
    if cfg.vignette_strength != 0.0 {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let rmax2 = cy * cy + cx * cx;
        for c in 0..CHANNELS {
            let plane = out.plane_mut(c);
            for y in 0..h {
                for x in 0..w {
                    let r2 = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / rmax2.max(1e-12);
                    plane[y * w + x] *= T::lit(1.0 - cfg.vignette_strength * r2);
                }
            }
        }
    }
    if cfg.noise_sigma > 0.0 {
        let mut rng = named_rng(seed, "camera-noise");
        let sigma = cfg.noise_sigma;
        out.data_mut().iter_mut().for_each(|v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += T::lit(n * sigma);
        });
    }
    out.clamp_unit();
    out
}
