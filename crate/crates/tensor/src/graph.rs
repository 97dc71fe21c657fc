//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation eagerly, holding the forward value at
//! each node. [`Graph::backward`] walks the tape in reverse once.

use crate::conv::{ConvGeom, PadMode};
use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Differentiable operation whose forward pass is computed by the caller.
pub trait CustomOp<T: Scalar> {
    /// Gradient with respect to each input, given the upstream gradient.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Affine { x: Var, scale: T },
    Add(Var, Var),
    ConcatChannels(Var, Var),
    Gather { x: Var, locations: Vec<usize> },
    Linear { x: Var, w: Var, b: Option<Var> },
    L2Normalize { x: Var, norms: Vec<T> },
    SpatialMean(Var),
    WeightedSum(Vec<(Var, T)>),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<(u64, ParamId)>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    frozen: Vec<u64>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const NORM_EPS: f64 = 1e-5;
const L2_EPS: f64 = 1e-12;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            frozen: Vec::new(),
        }
    }

    /// Parameters of `store` bound after this call are treated as constants.
    pub fn freeze(&mut self, store: &ParamStore<T>) {
        self.frozen.push(store.tag());
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Leaf whose gradient is wanted but which is not a stored parameter.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, &[]);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(store.get(id).clone(), Op::Leaf, &[]);
        let node = &mut self.nodes[v.0];
        node.requires_grad = !self.frozen.contains(&store.tag());
        node.param = Some((store.tag(), id));
        v
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (cout, wcin, kh, kw) = self.value(w).dims4()?;
        if wcin != cin || kh != kw {
            return Err(TensorError::Shape(format!(
                "conv2d: input has {cin} channels, weight {:?}",
                self.value(w).shape()
            )));
        }
        let geom = ConvGeom::new(cin, h, wd, kh, stride, pad, mode)?;
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![T::zero(); n * cout * cols_n];
        let mut cols = if direct_conv(&geom, cout) { Vec::new() } else { vec![T::zero(); rows * cols_n] };
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            for i in 0..n {
                let o = &mut out[i * cout * cols_n..(i + 1) * cout * cols_n];
                if direct_conv(&geom, cout) {
                    geom.direct_forward(xv.batch_item(i), wv, o);
                } else {
                    geom.im2col(xv.batch_item(i), &mut cols);
                    T::gemm(cout, rows, cols_n, T::one(), wv, false, &cols, false, T::zero(), o);
                }
            }
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), cout, cols_n);
        }
        let value = Tensor::from_vec(&[n, cout, geom.out_h, geom.out_w], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, &parents))
    }

    /// Transposed convolution; `w` is laid out `(in, out, k, k)`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        output_padding: usize,
        mode: PadMode,
    ) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (wcin, cout, k, kw) = self.value(w).dims4()?;
        if wcin != cin || k != kw {
            return Err(TensorError::Shape(format!(
                "conv_transpose2d: input has {cin} channels, weight {:?}",
                self.value(w).shape()
            )));
        }
        if h == 0 || wd == 0 || (h - 1) * stride + k + output_padding < 2 * pad {
            return Err(TensorError::Shape("conv_transpose2d: degenerate output".into()));
        }
        let oh = (h - 1) * stride + k + output_padding - 2 * pad;
        let ow = (wd - 1) * stride + k + output_padding - 2 * pad;
        let geom = ConvGeom::new(cout, oh, ow, k, stride, pad, mode)?;
        if geom.out_h != h || geom.out_w != wd {
            return Err(TensorError::Shape(format!(
                "conv_transpose2d: {oh}x{ow} does not invert to {h}x{wd}"
            )));
        }
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let plane = cout * oh * ow;
        let mut out = vec![T::zero(); n * plane];
        let mut cols = vec![T::zero(); rows * cols_n];
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            for i in 0..n {
                T::gemm(rows, cin, cols_n, T::one(), wv, true, xv.batch_item(i), false, T::zero(), &mut cols);
                geom.col2im(&cols, &mut out[i * plane..(i + 1) * plane]);
            }
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), cout, oh * ow);
        }
        let value = Tensor::from_vec(&[n, cout, oh, ow], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }, &parents))
    }

    /// Per-sample, per-channel normalization without affine parameters.
    pub fn instance_norm(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let m = h * w;
        let eps = T::lit(NORM_EPS);
        let inv_m = T::one() / T::from_usize(m).unwrap();
        let mut out = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(n * c);
        for plane in out.chunks_mut(m) {
            let mean = plane.iter().copied().sum::<T>() * inv_m;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_m;
            let is = T::one() / (var + eps).sqrt();
            plane.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let value = Tensor::from_vec(&[n, c, h, w], out)?;
        Ok(self.push(value, Op::InstanceNorm { x, inv_std }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        self.push(value, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh(x), &[x])
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| v * scale + shift);
        self.push(value, Op::Affine { x, scale }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::Shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(TensorError::Shape(format!(
                "concat_channels: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for i in 0..n {
            data.extend_from_slice(self.value(a).batch_item(i));
            data.extend_from_slice(self.value(b).batch_item(i));
        }
        let value = Tensor::from_vec(&[n, ca + cb, h, w], data)?;
        Ok(self.push(value, Op::ConcatChannels(a, b), &[a, b]))
    }

    /// Picks the channel vector at each flat spatial location of every image:
    /// `(n, c, h, w) -> (n * locations.len(), c)`, image-major.
    pub fn gather_locations(&mut self, x: Var, locations: &[usize]) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        if let Some(&bad) = locations.iter().find(|&&l| l >= plane) {
            return Err(TensorError::Index(format!(
                "location {bad} outside {h}x{w} feature map"
            )));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(n * locations.len() * c);
        for i in 0..n {
            for &l in locations {
                data.extend((0..c).map(|ch| xv[(i * c + ch) * plane + l]));
            }
        }
        let value = Tensor::from_vec(&[n * locations.len(), c], data)?;
        Ok(self.push(
            value,
            Op::Gather {
                x,
                locations: locations.to_vec(),
            },
            &[x],
        ))
    }

    /// `x (r, in) @ w (in, out) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (r, cin) = self.value(x).dims2()?;
        let (wcin, cout) = self.value(w).dims2()?;
        if wcin != cin {
            return Err(TensorError::Shape(format!(
                "linear: input width {cin}, weight {:?}",
                self.value(w).shape()
            )));
        }
        let mut out = vec![T::zero(); r * cout];
        T::gemm(r, cin, cout, T::one(), self.value(x).data(), false, self.value(w).data(), false, T::zero(), &mut out);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_mut(cout) {
                row.iter_mut().zip(bv).for_each(|(o, &bb)| *o += bb);
            }
        }
        let value = Tensor::from_vec(&[r, cout], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::Linear { x, w, b }, &parents))
    }

    /// Row-wise `x / max(|x|, 1e-12)`.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (_, c) = self.value(x).dims2()?;
        let mut out = self.value(x).data().to_vec();
        let mut norms = Vec::with_capacity(out.len() / c.max(1));
        for row in out.chunks_mut(c) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let d = norm.max(T::lit(L2_EPS));
            row.iter_mut().for_each(|v| *v = *v / d);
            norms.push(d);
        }
        let value = Tensor::from_vec(self.value(x).shape(), out)?;
        Ok(self.push(value, Op::L2Normalize { x, norms }, &[x]))
    }

    /// Adaptive average pooling to 1x1: `(n, c, h, w) -> (n, c)`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let inv = T::one() / T::from_usize(h * w).unwrap();
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::from_vec(&[n, c], data)?;
        Ok(self.push(value, Op::SpatialMean(x), &[x]))
    }

    /// `sum_i w_i * x_i` over same-shaped terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| TensorError::Shape("weighted_sum of no terms".into()))?;
        let mut value = Tensor::zeros(self.value(first.0).shape());
        for &(v, wt) in terms {
            if self.value(v).shape() != value.shape() {
                return Err(TensorError::Shape("weighted_sum: shape mismatch".into()));
            }
            for (o, &x) in value.data_mut().iter_mut().zip(self.value(v).data()) {
                *o += wt * x;
            }
        }
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(value, Op::WeightedSum(terms.to_vec()), &parents))
    }

    /// Registers an operation whose forward value was computed externally.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        )
    }

    /// Backpropagates from a one-element `root`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let root_value = &self.nodes[root.0].value;
        assert_eq!(root_value.len(), 1, "backward root must be a scalar");
        grads[root.0] = Some(Tensor::full(root_value.shape(), T::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (parent, pg) in self.local_backward(node, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            params: self.nodes.iter().map(|n| n.param).collect(),
        }
    }

    fn local_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let need = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, geom } => {
                let xv = val(*x);
                let wv = val(*w);
                let (n, cout) = (xv.shape()[0], wv.shape()[0]);
                let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
                let mut dx = need(*x).then(|| Tensor::zeros(xv.shape()));
                let mut dw = need(*w).then(|| Tensor::zeros(wv.shape()));
                let per = xv.len() / n;
                let mut cols = vec![T::zero(); if direct_conv(geom, cout) { 0 } else { rows * cols_n }];
                for i in 0..n {
                    let gi = &g.data()[i * cout * cols_n..(i + 1) * cout * cols_n];
                    let xi = xv.batch_item(i);
                    if let Some(dw) = dw.as_mut() {
                        if direct_conv(geom, cout) {
                            geom.direct_weight_grad(xi, gi, dw.data_mut());
                        } else {
                            geom.im2col(xi, &mut cols);
                            T::gemm(cout, cols_n, rows, T::one(), gi, false, &cols, true, T::one(), dw.data_mut());
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxi = &mut dx.data_mut()[i * per..(i + 1) * per];
                        if direct_conv(geom, cout) {
                            geom.direct_input_grad(gi, wv.data(), dxi);
                        } else {
                            T::gemm(rows, cout, cols_n, T::one(), wv.data(), true, gi, false, T::zero(), &mut cols);
                            geom.col2im(&cols, dxi);
                        }
                    }
                }
                let mut out = Vec::new();
                out.extend(dx.map(|d| (*x, d)));
                out.extend(dw.map(|d| (*w, d)));
                if let Some(b) = b {
                    out.push((*b, channel_bias_grad(g, cout, cols_n)));
                }
                out
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let xv = val(*x);
                let wv = val(*w);
                let (n, cin) = (xv.shape()[0], xv.shape()[1]);
                let cout = geom.channels;
                let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
                let plane = cout * geom.h * geom.w;
                let mut dx = need(*x).then(|| Tensor::zeros(xv.shape()));
                let mut dw = need(*w).then(|| Tensor::zeros(wv.shape()));
                let mut gcols = vec![T::zero(); rows * cols_n];
                for i in 0..n {
                    geom.im2col(&g.data()[i * plane..(i + 1) * plane], &mut gcols);
                    if let Some(dx) = dx.as_mut() {
                        let per = cin * cols_n;
                        T::gemm(cin, rows, cols_n, T::one(), wv.data(), false, &gcols, false, T::zero(), &mut dx.data_mut()[i * per..(i + 1) * per]);
                    }
                    if let Some(dw) = dw.as_mut() {
                        T::gemm(cin, cols_n, rows, T::one(), xv.batch_item(i), false, &gcols, true, T::one(), dw.data_mut());
                    }
                }
                let mut out = Vec::new();
                out.extend(dx.map(|d| (*x, d)));
                out.extend(dw.map(|d| (*w, d)));
                if let Some(b) = b {
                    out.push((*b, channel_bias_grad(g, cout, geom.h * geom.w)));
                }
                out
            }
            Op::InstanceNorm { x, inv_std } => {
                let y = &node.value;
                let (_, _, h, w) = y.dims4().expect("rank-4");
                let m = h * w;
                let inv_m = T::one() / T::from_usize(m).unwrap();
                let mut dx = g.clone();
                for ((dplane, yplane), &is) in dx.data_mut().chunks_mut(m).zip(y.data().chunks(m)).zip(inv_std) {
                    let sum_g = dplane.iter().copied().sum::<T>();
                    let sum_gy = dplane.iter().zip(yplane).map(|(&a, &b)| a * b).sum::<T>();
                    for (d, &yy) in dplane.iter_mut().zip(yplane) {
                        *d = is * (*d - sum_g * inv_m - yy * sum_gy * inv_m);
                    }
                }
                vec![(*x, dx)]
            }
            Op::Relu(x) => {
                let mut dx = g.clone();
                for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    if y <= T::zero() {
                        *d = T::zero();
                    }
                }
                vec![(*x, dx)]
            }
            Op::LeakyRelu(x, slope) => {
                let mut dx = g.clone();
                for (d, &xx) in dx.data_mut().iter_mut().zip(val(*x).data()) {
                    if xx <= T::zero() {
                        *d *= *slope;
                    }
                }
                vec![(*x, dx)]
            }
            Op::Tanh(x) => {
                let mut dx = g.clone();
                for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= T::one() - y * y;
                }
                vec![(*x, dx)]
            }
            Op::Affine { x, scale } => vec![(*x, g.map(|v| v * *scale))],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::ConcatChannels(a, b) => {
                let n = g.shape()[0];
                let pa = val(*a).len() / n;
                let pb = val(*b).len() / n;
                let mut da = Vec::with_capacity(n * pa);
                let mut db = Vec::with_capacity(n * pb);
                for i in 0..n {
                    let gi = g.batch_item(i);
                    da.extend_from_slice(&gi[..pa]);
                    db.extend_from_slice(&gi[pa..]);
                }
                vec![
                    (*a, Tensor::from_vec(val(*a).shape(), da).unwrap()),
                    (*b, Tensor::from_vec(val(*b).shape(), db).unwrap()),
                ]
            }
            Op::Gather { x, locations } => {
                let xv = val(*x);
                let (n, c, h, w) = xv.dims4().unwrap();
                let plane = h * w;
                let mut dx = Tensor::zeros(xv.shape());
                let gd = g.data();
                let dd = dx.data_mut();
                for i in 0..n {
                    for (li, &l) in locations.iter().enumerate() {
                        let row = &gd[(i * locations.len() + li) * c..][..c];
                        for (ch, &v) in row.iter().enumerate() {
                            dd[(i * c + ch) * plane + l] += v;
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::Linear { x, w, b } => {
                let xv = val(*x);
                let wv = val(*w);
                let (r, cin) = xv.dims2().unwrap();
                let cout = wv.shape()[1];
                let mut out = Vec::new();
                if need(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    T::gemm(r, cout, cin, T::one(), g.data(), false, wv.data(), true, T::zero(), dx.data_mut());
                    out.push((*x, dx));
                }
                if need(*w) {
                    let mut dw = Tensor::zeros(wv.shape());
                    T::gemm(cin, r, cout, T::one(), xv.data(), true, g.data(), false, T::zero(), dw.data_mut());
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    let mut db = Tensor::zeros(&[cout]);
                    for row in g.data().chunks(cout) {
                        db.data_mut().iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    out.push((*b, db));
                }
                out
            }
            Op::L2Normalize { x, norms } => {
                let xv = val(*x);
                let c = xv.shape()[1];
                let eps = T::lit(L2_EPS);
                let mut dx = Tensor::zeros(xv.shape());
                for (((drow, yrow), grow), &d) in dx
                    .data_mut()
                    .chunks_mut(c)
                    .zip(node.value.data().chunks(c))
                    .zip(g.data().chunks(c))
                    .zip(norms)
                {
                    // below eps the op is a plain scaling by 1/eps
                    let dot = if d > eps {
                        yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum::<T>()
                    } else {
                        T::zero()
                    };
                    for ((o, &yy), &gg) in drow.iter_mut().zip(yrow).zip(grow) {
                        *o = (gg - yy * dot) / d;
                    }
                }
                vec![(*x, dx)]
            }
            Op::SpatialMean(x) => {
                let xv = val(*x);
                let (_, _, h, w) = xv.dims4().unwrap();
                let inv = T::one() / T::from_usize(h * w).unwrap();
                let mut dx = Tensor::zeros(xv.shape());
                for (plane, &gv) in dx.data_mut().chunks_mut(h * w).zip(g.data()) {
                    plane.iter_mut().for_each(|d| *d = gv * inv);
                }
                vec![(*x, dx)]
            }
            Op::WeightedSum(terms) => terms.iter().map(|&(v, wt)| (v, g.map(|x| x * wt))).collect(),
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                op.backward(&ins, &node.value, g)
                    .into_iter()
                    .zip(inputs)
                    .filter_map(|(gr, &v)| gr.map(|gr| (v, gr)))
                    .collect()
            }
        }
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], channels: usize, plane: usize) {
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[i % channels];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_bias_grad<T: Scalar>(g: &Tensor<T>, channels: usize, plane: usize) -> Tensor<T> {
    let mut db = Tensor::zeros(&[channels]);
    for (i, chunk) in g.data().chunks(plane).enumerate() {
        db.data_mut()[i % channels] += chunk.iter().copied().sum::<T>();
    }
    db
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<Option<(u64, ParamId)>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of every parameter in `store`, summed over all bindings.
    /// Parameters not reached by the graph get zero gradients.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        for (g, p) in self.grads.iter().zip(&self.params) {
            if let (Some(g), Some((tag, id))) = (g, p) {
                if *tag == store.tag() {
                    out[id.0].add_assign(g);
                }
            }
        }
        out
    }
}

/// Below one product micro-kernel's row count a patch matrix costs more than
/// it saves, as long as output rows are long enough to vectorize.
const DIRECT_MAX_OUT: usize = 8;
const DIRECT_MIN_WIDTH: usize = 16;

fn direct_conv(geom: &ConvGeom, cout: usize) -> bool {
    geom.stride == 1 && cout < DIRECT_MAX_OUT && geom.out_w >= DIRECT_MIN_WIDTH
}
