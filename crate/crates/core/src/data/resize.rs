use syn2real_tensor::Scalar;

use super::image::{Image, CHANNELS};
use crate::error::{Error, Result};

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Tap indices and weights for each output position along one axis
/// (pixel-centre alignment, clamped borders).
fn axis_taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = (o as f64 + 0.5) * scale - 0.5;
            let base = s.floor();
            let frac = s - base;
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let i = base as isize + k as isize - 1;
                idx[k] = i.clamp(0, src as isize - 1) as usize;
                wts[k] = cubic(frac - (k as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic resampling. Returns the input unchanged when the size already matches.
pub fn bicubic_resize<T: Scalar>(img: &Image<T>, target: (usize, usize)) -> Result<Image<T>> {
    let (th, tw) = target;
    if th < 4 || tw < 4 {
        return Err(Error::Shape(format!("bicubic target {th}x{tw} is degenerate")));
    }
    let (h, w) = (img.height(), img.width());
    if (h, w) == (th, tw) {
        return Ok(img.clone());
    }
    let ytaps = axis_taps(h, th);
    let xtaps = axis_taps(w, tw);
    let mut out = Image::filled(th, tw, T::zero());
    let mut rows = vec![T::zero(); h * tw];
    for c in 0..CHANNELS {
        let src = img.plane(c);
        for y in 0..h {
            for (x, (idx, wts)) in xtaps.iter().enumerate() {
                rows[y * tw + x] = (0..4).map(|k| src[y * w + idx[k]] * T::lit(wts[k])).sum();
            }
        }
        let dst = out.plane_mut(c);
        for (y, (idx, wts)) in ytaps.iter().enumerate() {
            for x in 0..tw {
                dst[y * tw + x] = (0..4).map(|k| rows[idx[k] * tw + x] * T::lit(wts[k])).sum();
            }
        }
    }
    Ok(out)
}
