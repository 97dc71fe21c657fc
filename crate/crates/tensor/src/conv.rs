//! Patch extraction (`im2col`) and its adjoint (`col2im`) for square kernels.
//!
//! Padding is folded into the index mapping so that every padding mode,
//! including circular wrap-around, has an exact adjoint.

use crate::error::{Result, TensorError};
use crate::Scalar;

/// How out-of-range taps are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Zero,
    Reflect,
    Circular,
}

impl PadMode {
    /// Source index for tap position `i` on an axis of length `n`, or `None` for a zero tap.
    #[inline]
    fn resolve(self, i: isize, n: usize) -> Option<usize> {
        let n_i = n as isize;
        if (0..n_i).contains(&i) {
            return Some(i as usize);
        }
        match self {
            PadMode::Zero => None,
            PadMode::Circular => Some(i.rem_euclid(n_i) as usize),
            PadMode::Reflect => {
                if n == 1 {
                    return Some(0);
                }
                let period = 2 * (n_i - 1);
                let mut j = i.rem_euclid(period);
                if j >= n_i {
                    j = period - j;
                }
                Some(j as usize)
            }
        }
    }
}

/// Geometry of a convolution reading an `h x w` plane and writing `out_h x out_w`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        h: usize,
        w: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<Self> {
        if stride == 0 || kernel == 0 {
            return Err(TensorError::Shape("kernel and stride must be positive".into()));
        }
        if h + 2 * pad < kernel || w + 2 * pad < kernel {
            return Err(TensorError::Shape(format!(
                "input {h}x{w} (pad {pad}) smaller than kernel {kernel}"
            )));
        }
        if mode == PadMode::Reflect && pad >= h.min(w) && pad > 0 {
            return Err(TensorError::Shape(format!(
                "reflect padding {pad} needs input larger than {h}x{w}"
            )));
        }
        Ok(Self {
            channels,
            h,
            w,
            kernel,
            stride,
            pad,
            mode,
            out_h: (h + 2 * pad - kernel) / stride + 1,
            out_w: (w + 2 * pad - kernel) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn padded_dims(&self) -> (usize, usize) {
        (self.h + 2 * self.pad, self.w + 2 * self.pad)
    }

    /// Source index for every padded position along one axis, -1 for zero taps.
    fn pad_map(&self, len: usize) -> Vec<isize> {
        (0..len + 2 * self.pad)
            .map(|i| self.mode.resolve(i as isize - self.pad as isize, len).map_or(-1, |v| v as isize))
            .collect()
    }

    /// Copies one `h x w` plane into its `(h+2p) x (w+2p)` padded form.
    fn pad_plane<T: Scalar>(&self, src: &[T], padded: &mut [T], ymap: &[isize], xmap: &[isize]) {
        let pw = self.w + 2 * self.pad;
        for (py, &iy) in ymap.iter().enumerate() {
            let row = &mut padded[py * pw..(py + 1) * pw];
            if iy < 0 {
                row.fill(T::zero());
                continue;
            }
            let srow = &src[iy as usize * self.w..(iy as usize + 1) * self.w];
            for (v, &ix) in row.iter_mut().zip(xmap) {
                *v = if ix < 0 { T::zero() } else { srow[ix as usize] };
            }
        }
    }

    /// Adjoint of `pad_plane`: adds every padded position into its source.
    fn fold_plane<T: Scalar>(&self, padded: &[T], dst: &mut [T], ymap: &[isize], xmap: &[isize]) {
        let pw = self.w + 2 * self.pad;
        for (py, &iy) in ymap.iter().enumerate() {
            if iy < 0 {
                continue;
            }
            let drow = &mut dst[iy as usize * self.w..(iy as usize + 1) * self.w];
            for (&v, &ix) in padded[py * pw..(py + 1) * pw].iter().zip(xmap) {
                if ix >= 0 {
                    drow[ix as usize] += v;
                }
            }
        }
    }

    fn padded_stack<T: Scalar>(&self, input: &[T]) -> Vec<T> {
        let (ph, pw) = self.padded_dims();
        let (ymap, xmap) = (self.pad_map(self.h), self.pad_map(self.w));
        let plane = self.h * self.w;
        let mut padded = vec![T::zero(); self.channels * ph * pw];
        for c in 0..self.channels {
            self.pad_plane(&input[c * plane..(c + 1) * plane], &mut padded[c * ph * pw..(c + 1) * ph * pw], &ymap, &xmap);
        }
        padded
    }

    /// `input` is one `channels x h x w` plane stack; `cols` receives
    /// `(channels*k*k) x (out_h*out_w)`.
    pub fn im2col<T: Scalar>(&self, input: &[T], cols: &mut [T]) {
        let (oh, ow, k, s) = (self.out_h, self.out_w, self.kernel, self.stride);
        let (ph, pw) = self.padded_dims();
        let (ymap, xmap) = (self.pad_map(self.h), self.pad_map(self.w));
        let plane = self.h * self.w;
        let mut padded = vec![T::zero(); ph * pw];
        for c in 0..self.channels {
            self.pad_plane(&input[c * plane..(c + 1) * plane], &mut padded, &ymap, &xmap);
            for ky in 0..k {
                for kx in 0..k {
                    let at = ((c * k + ky) * k + kx) * oh * ow;
                    let dst = &mut cols[at..at + oh * ow];
                    for oy in 0..oh {
                        let prow = &padded[(oy * s + ky) * pw + kx..(oy * s + ky + 1) * pw];
                        let d = &mut dst[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            d.copy_from_slice(&prow[..ow]);
                        } else {
                            d.iter_mut().zip(prow.iter().step_by(s)).for_each(|(v, &p)| *v = p);
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters-and-adds `cols` into `out`.
    pub fn col2im<T: Scalar>(&self, cols: &[T], out: &mut [T]) {
        let (oh, ow, k, s) = (self.out_h, self.out_w, self.kernel, self.stride);
        let (ph, pw) = self.padded_dims();
        let (ymap, xmap) = (self.pad_map(self.h), self.pad_map(self.w));
        let plane = self.h * self.w;
        let mut padded = vec![T::zero(); ph * pw];
        for c in 0..self.channels {
            padded.fill(T::zero());
            for ky in 0..k {
                for kx in 0..k {
                    let at = ((c * k + ky) * k + kx) * oh * ow;
                    let src = &cols[at..at + oh * ow];
                    for oy in 0..oh {
                        let prow = &mut padded[(oy * s + ky) * pw + kx..(oy * s + ky + 1) * pw];
                        let srow = &src[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            prow[..ow].iter_mut().zip(srow).for_each(|(p, &v)| *p += v);
                        } else {
                            prow.iter_mut().step_by(s).zip(srow).for_each(|(p, &v)| *p += v);
                        }
                    }
                }
            }
            self.fold_plane(&padded, &mut out[c * plane..(c + 1) * plane], &ymap, &xmap);
        }
    }

    /// Stride-1 convolution of one image without a patch matrix:
    /// `out[co] += sum_ci w[co, ci] * input[ci]`. Cheaper than `im2col` plus
    /// a product when there are few output channels.
    pub fn direct_forward<T: Scalar>(&self, input: &[T], weight: &[T], out: &mut [T]) {
        assert_eq!(self.stride, 1, "direct convolution needs stride 1");
        let (oh, ow, k) = (self.out_h, self.out_w, self.kernel);
        let (ph, pw) = self.padded_dims();
        let padded = self.padded_stack(input);
        let taps = self.channels * k * k;
        for (co, o) in out.chunks_exact_mut(oh * ow).enumerate() {
            for ci in 0..self.channels {
                let p = &padded[ci * ph * pw..(ci + 1) * ph * pw];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[co * taps + (ci * k + ky) * k + kx];
                        for oy in 0..oh {
                            let src = &p[(oy + ky) * pw + kx..][..ow];
                            o[oy * ow..(oy + 1) * ow].iter_mut().zip(src).for_each(|(o, &v)| *o += wv * v);
                        }
                    }
                }
            }
        }
    }

    /// Weight gradient of [`ConvGeom::direct_forward`], accumulated into `dw`.
    pub fn direct_weight_grad<T: Scalar>(&self, input: &[T], gout: &[T], dw: &mut [T]) {
        assert_eq!(self.stride, 1, "direct convolution needs stride 1");
        let (oh, ow, k) = (self.out_h, self.out_w, self.kernel);
        let (ph, pw) = self.padded_dims();
        let padded = self.padded_stack(input);
        let taps = self.channels * k * k;
        for (co, g) in gout.chunks_exact(oh * ow).enumerate() {
            for ci in 0..self.channels {
                let p = &padded[ci * ph * pw..(ci + 1) * ph * pw];
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = T::zero();
                        for oy in 0..oh {
                            let src = &p[(oy + ky) * pw + kx..][..ow];
                            acc += g[oy * ow..(oy + 1) * ow].iter().zip(src).fold(T::zero(), |a, (&g, &v)| a + g * v);
                        }
                        dw[co * taps + (ci * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }

    /// Input gradient of [`ConvGeom::direct_forward`], accumulated into `dx`.
    pub fn direct_input_grad<T: Scalar>(&self, gout: &[T], weight: &[T], dx: &mut [T]) {
        assert_eq!(self.stride, 1, "direct convolution needs stride 1");
        let (oh, ow, k) = (self.out_h, self.out_w, self.kernel);
        let (ph, pw) = self.padded_dims();
        let (ymap, xmap) = (self.pad_map(self.h), self.pad_map(self.w));
        let plane = self.h * self.w;
        let taps = self.channels * k * k;
        let mut padded = vec![T::zero(); ph * pw];
        for ci in 0..self.channels {
            padded.fill(T::zero());
            for (co, g) in gout.chunks_exact(oh * ow).enumerate() {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[co * taps + (ci * k + ky) * k + kx];
                        for oy in 0..oh {
                            let dst = &mut padded[(oy + ky) * pw + kx..][..ow];
                            dst.iter_mut().zip(&g[oy * ow..(oy + 1) * ow]).for_each(|(d, &g)| *d += wv * g);
                        }
                    }
                }
            }
            self.fold_plane(&padded, &mut dx[ci * plane..(ci + 1) * plane], &ymap, &xmap);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_modes() {
        assert_eq!(PadMode::Zero.resolve(-1, 4), None);
        assert_eq!(PadMode::Circular.resolve(-1, 4), Some(3));
        assert_eq!(PadMode::Circular.resolve(5, 4), Some(1));
        assert_eq!(PadMode::Reflect.resolve(-1, 4), Some(1));
        assert_eq!(PadMode::Reflect.resolve(-3, 4), Some(3));
        assert_eq!(PadMode::Reflect.resolve(4, 4), Some(2));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for every mode
        for mode in [PadMode::Zero, PadMode::Reflect, PadMode::Circular] {
            let g = ConvGeom::new(2, 5, 6, 3, 2, 1, mode).unwrap();
            let x: Vec<f64> = (0..2 * 30).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
            let y: Vec<f64> = (0..g.col_rows() * g.col_cols())
                .map(|i| ((i * 3 % 13) as f64) * 0.5)
                .collect();
            let mut cols = vec![0.0; y.len()];
            g.im2col(&x, &mut cols);
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let mut back = vec![0.0; x.len()];
            g.col2im(&y, &mut back);
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "{mode:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn im2col_matches_direct_lookup() {
        for mode in [PadMode::Zero, PadMode::Reflect, PadMode::Circular] {
            for (k, stride, pad) in [(1, 1, 0), (3, 1, 1), (3, 2, 1), (4, 2, 1), (7, 1, 3), (3, 2, 0), (5, 3, 2)] {
                let Ok(g) = ConvGeom::new(2, 7, 9, k, stride, pad, mode) else { continue };
                let x: Vec<f64> = (0..2 * 63).map(|i| i as f64 + 1.0).collect();
                let mut cols = vec![f64::NAN; g.col_rows() * g.col_cols()];
                g.im2col(&x, &mut cols);
                let mut back = vec![0.0; x.len()];
                let ones = vec![1.0; cols.len()];
                g.col2im(&ones, &mut back);
                let mut counts = vec![0.0; x.len()];
                for c in 0..2 {
                    for ky in 0..k {
                        for kx in 0..k {
                            for oy in 0..g.out_h {
                                for ox in 0..g.out_w {
                                    let iy = mode.resolve((oy * stride + ky) as isize - pad as isize, 7);
                                    let ix = mode.resolve((ox * stride + kx) as isize - pad as isize, 9);
                                    let at = ((c * k + ky) * k + kx) * g.col_cols() + oy * g.out_w + ox;
                                    let want = match (iy, ix) {
                                        (Some(iy), Some(ix)) => {
                                            counts[c * 63 + iy * 9 + ix] += 1.0;
                                            x[c * 63 + iy * 9 + ix]
                                        }
                                        _ => 0.0,
                                    };
                                    assert_eq!(cols[at], want, "{mode:?} k{k} s{stride} p{pad}");
                                }
                            }
                        }
                    }
                }
                assert_eq!(back, counts, "{mode:?} k{k} s{stride} p{pad}");
            }
        }
    }

    #[test]
    fn direct_path_matches_patch_matrix() {
        let naive = |m: usize, k: usize, n: usize, a: &[f64], b: &[f64]| {
            let mut c = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    c[i * n + j] = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
                }
            }
            c
        };
        for mode in [PadMode::Zero, PadMode::Reflect, PadMode::Circular] {
            for (k, pad) in [(1, 0), (3, 1), (7, 3), (3, 0)] {
                let g = ConvGeom::new(2, 7, 9, k, 1, pad, mode).unwrap();
                let (rows, n, cout) = (g.col_rows(), g.col_cols(), 3);
                let x: Vec<f64> = (0..2 * 63).map(|i| ((i * 5 % 17) as f64) - 8.0).collect();
                let w: Vec<f64> = (0..cout * rows).map(|i| ((i * 3 % 7) as f64) * 0.25 - 0.5).collect();
                let go: Vec<f64> = (0..cout * n).map(|i| ((i * 11 % 13) as f64) * 0.5 - 3.0).collect();
                let mut cols = vec![0.0; rows * n];
                g.im2col(&x, &mut cols);

                let mut out = vec![0.0; cout * n];
                g.direct_forward(&x, &w, &mut out);
                assert_eq!(out, naive(cout, rows, n, &w, &cols), "{mode:?} k{k}");

                let mut dw = vec![0.0; w.len()];
                g.direct_weight_grad(&x, &go, &mut dw);
                let cols_t: Vec<f64> = (0..n * rows).map(|i| cols[(i % rows) * n + i / rows]).collect();
                assert_eq!(dw, naive(cout, n, rows, &go, &cols_t), "{mode:?} k{k}");

                let mut dx = vec![0.0; x.len()];
                g.direct_input_grad(&go, &w, &mut dx);
                let w_t: Vec<f64> = (0..rows * cout).map(|i| w[(i % cout) * rows + i / cout]).collect();
                let mut want = vec![0.0; x.len()];
                g.col2im(&naive(rows, cout, n, &w_t, &go), &mut want);
                assert_eq!(dx, want, "{mode:?} k{k}");
            }
        }
    }

    #[test]
    fn output_size_arithmetic() {
        let g = ConvGeom::new(1, 88, 88, 4, 2, 1, PadMode::Zero).unwrap();
        assert_eq!((g.out_h, g.out_w), (44, 44));
        assert!(ConvGeom::new(1, 2, 2, 7, 1, 0, PadMode::Zero).is_err());
    }
}
