use serde::{Deserialize, Serialize};
use syn2real_tensor::{CustomOp, Graph, PadMode, ParamId, ParamStore, Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::init::kaiming;
use crate::rng::named_rng;

/// Feature layers: 0-3 encoder stages at strides 1, 2, 4, 8; 4-6 decoder
/// stages at strides 4, 2, 1.
pub const SEGMENTER_LAYERS: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterArchitecture {
    pub base_channels: usize,
    pub num_classes: usize,
}

impl SegmenterArchitecture {
    pub fn layer_channels(&self, layer: usize) -> Result<usize> {
        let c = self.base_channels;
        [c, 2 * c, 4 * c, 8 * c, 4 * c, 2 * c, c]
            .get(layer)
            .copied()
            .ok_or_else(|| Error::Config(format!("segmenter has no layer {layer} (0..{SEGMENTER_LAYERS})")))
    }
}

struct Stage {
    /// Downsampling conv or transposed upsampling conv.
    entry: (ParamId, ParamId),
    conv: (ParamId, ParamId),
}

/// Fully convolutional encoder-decoder with concatenated skip connections and
/// no normalization layers, so absolute color statistics reach the classifier.
pub struct Segmenter<T: Scalar> {
    pub arch: SegmenterArchitecture,
    pub params: ParamStore<T>,
    stages: Vec<Stage>,
    head: (ParamId, ParamId),
}

impl<T: Scalar> Segmenter<T> {
    pub fn new(arch: SegmenterArchitecture, seed: u64) -> Result<Self> {
        if arch.base_channels == 0 || arch.num_classes < 2 {
            return Err(Error::Config("segmenter needs channels and at least two classes".into()));
        }
        let mut rng = named_rng(seed, "segmenter-init");
        let c = arch.base_channels;
        let mut params = ParamStore::new();
        let mut conv = |params: &mut ParamStore<T>, name: String, cin: usize, cout: usize, k: usize, transposed: bool| {
            let shape = if transposed { [cin, cout, k, k] } else { [cout, cin, k, k] };
            let w = params.add(format!("{name}.weight"), kaiming(&shape, cin * k * k, &mut rng));
            let b = params.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
            (w, b)
        };
        let mut stages = Vec::new();
        // (entry in, stage out) per encoder stage
        let enc = [(3, c), (c, 2 * c), (2 * c, 4 * c), (4 * c, 8 * c)];
        for (i, &(cin, cout)) in enc.iter().enumerate() {
            stages.push(Stage {
                entry: conv(&mut params, format!("enc{i}.entry"), cin, cout, 3, false),
                conv: conv(&mut params, format!("enc{i}.conv"), cout, cout, 3, false),
            });
        }
        let dec = [(8 * c, 4 * c), (4 * c, 2 * c), (2 * c, c)];
        for (i, &(cin, cout)) in dec.iter().enumerate() {
            stages.push(Stage {
                entry: conv(&mut params, format!("dec{i}.up"), cin, cout, 3, true),
                conv: conv(&mut params, format!("dec{i}.conv"), 2 * cout, cout, 3, false),
            });
        }
        let head = conv(&mut params, "head".into(), c, arch.num_classes, 1, false);
        Ok(Self {
            arch,
            params,
            stages,
            head,
        })
    }

    fn conv_relu(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, (w, b): (ParamId, ParamId), stride: usize) -> Result<Var> {
        let (wv, bv) = (g.param(store, w), g.param(store, b));
        let y = g.conv2d(x, wv, Some(bv), stride, 1, PadMode::Zero)?;
        Ok(g.relu(y))
    }

    /// Layer outputs up to `upto` (inclusive), then the class logits when the
    /// whole network ran. `store` must share this network's layout (e.g. its EMA copy).
    pub fn run(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, upto: usize) -> Result<(Vec<Var>, Option<Var>)> {
        store.check_compatible(&self.params)?;
        let s = g.value(x).shape().to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] % 8 != 0 || s[3] % 8 != 0 || s[2] == 0 || s[3] == 0 {
            return Err(Error::Shape(format!("segmenter input {s:?} must be [n,3,h,w] with h, w multiples of 8")));
        }
        let upto = upto.min(SEGMENTER_LAYERS - 1);
        let centered = g.affine(x, T::one(), T::lit(-0.5));
        let mut layers = Vec::with_capacity(upto + 1);
        let mut t = centered;
        for (i, stage) in self.stages.iter().enumerate() {
            if i < 4 {
                t = self.conv_relu(g, store, t, stage.entry, if i == 0 { 1 } else { 2 })?;
            } else {
                let (w, b) = stage.entry;
                let (wv, bv) = (g.param(store, w), g.param(store, b));
                let up = g.conv_transpose2d(t, wv, Some(bv), 2, 1, 1, PadMode::Zero)?;
                let up = g.relu(up);
                t = g.concat_channels(up, layers[6 - i])?;
            }
            t = self.conv_relu(g, store, t, stage.conv, 1)?;
            layers.push(t);
            if i == upto && upto < SEGMENTER_LAYERS - 1 {
                return Ok((layers, None));
            }
        }
        let (w, b) = self.head;
        let (wv, bv) = (g.param(store, w), g.param(store, b));
        let logits = g.conv2d(t, wv, Some(bv), 1, 0, PadMode::Zero)?;
        Ok((layers, Some(logits)))
    }

    pub fn logits(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.run(g, store, x, SEGMENTER_LAYERS)?.1.unwrap())
    }

    /// Per-pixel argmax labels, image-major.
    pub fn predict(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Vec<u8>> {
        let mut g = Graph::new();
        g.freeze(store);
        let xv = g.input(x.clone());
        let logits = self.logits(&mut g, store, xv)?;
        Ok(argmax_channels(g.value(logits)))
    }
}

pub fn argmax_channels<T: Scalar>(logits: &Tensor<T>) -> Vec<u8> {
    let s = logits.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let d = logits.data();
    let mut out = Vec::with_capacity(n * hw);
    for img in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for k in 1..c {
                if d[(img * c + k) * hw + p] > d[(img * c + best) * hw + p] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

struct PixelCrossEntropy<T> {
    grad: Tensor<T>,
}

impl<T: Scalar> CustomOp<T> for PixelCrossEntropy<T> {
    fn backward(&self, _inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let s = grad.item();
        vec![Some(self.grad.map(|v| v * s))]
    }
}

/// Mean over pixels of `-log softmax(logits)[label]`; labels are image-major.
pub fn pixel_cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[u8]) -> Result<Var> {
    let value = g.value(logits);
    let (n, c, h, w) = value.dims4()?;
    let hw = h * w;
    if labels.len() != n * hw {
        return Err(Error::Shape(format!("{} labels for {n}x{h}x{w} logits", labels.len())));
    }
    let d = value.data();
    let mut grad = Tensor::zeros(value.shape());
    let gd = grad.data_mut();
    let scale = 1.0 / (n * hw) as f64;
    let mut total = 0.0;
    for img in 0..n {
        for p in 0..hw {
            let label = labels[img * hw + p] as usize;
            if label >= c {
                return Err(Error::Index(format!("label {label} outside 0..{c}")));
            }
            let at = |k: usize| (img * c + k) * hw + p;
            let max = (0..c).map(|k| d[at(k)].to_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..c).map(|k| (d[at(k)].to_f64().unwrap() - max).exp()).sum();
            total += z.ln() + max - d[at(label)].to_f64().unwrap();
            for k in 0..c {
                let p_k = (d[at(k)].to_f64().unwrap() - max).exp() / z;
                let target = if k == label { 1.0 } else { 0.0 };
                gd[at(k)] = T::lit((p_k - target) * scale);
            }
        }
    }
    Ok(g.custom(&[logits], Tensor::scalar(T::lit(total * scale)), Box::new(PixelCrossEntropy { grad })))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Segmenter<f64> {
        Segmenter::new(SegmenterArchitecture { base_channels: 2, num_classes: 3 }, 4).unwrap()
    }

    #[test]
    fn shapes_and_layers() {
        let s = net();
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[2, 3, 16, 24], 0.3));
        let (layers, logits) = s.run(&mut g, &s.params, x, SEGMENTER_LAYERS).unwrap();
        assert_eq!(g.value(logits.unwrap()).shape(), &[2, 3, 16, 24]);
        let shapes: Vec<Vec<usize>> = layers.iter().map(|&l| g.value(l).shape().to_vec()).collect();
        assert_eq!(shapes[3], vec![2, 16, 2, 3]);
        assert_eq!(shapes[6], vec![2, 2, 16, 24]);
        for (i, sh) in shapes.iter().enumerate() {
            assert_eq!(sh[1], s.arch.layer_channels(i).unwrap());
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 3, 16, 16], 0.3));
        let (layers, logits) = s.run(&mut g, &s.params, x, 1).unwrap();
        assert_eq!(layers.len(), 2);
        assert!(logits.is_none());
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 3, 12, 16], 0.3));
        assert!(matches!(s.run(&mut g, &s.params, x, 6), Err(Error::Shape(_))));
        assert!(s.arch.layer_channels(7).is_err());
    }

    #[test]
    fn cross_entropy_closed_form() {
        let mut g = Graph::<f64>::new();
        // equal logits over 3 classes -> ln 3; gradient (1/3 - onehot) / pixels
        let l = g.variable(Tensor::zeros(&[1, 3, 1, 2]));
        let loss = pixel_cross_entropy(&mut g, l, &[0, 2]).unwrap();
        assert!((g.value(loss).item() - 3f64.ln()).abs() < 1e-12);
        let grads = g.backward(loss);
        let gl = grads.wrt(l).unwrap().data().to_vec();
        let third = 1.0 / 6.0;
        let want = [third - 0.5, third, third, third, third, third - 0.5];
        for (a, b) in gl.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(pixel_cross_entropy(&mut g, l, &[0]).is_err());
        assert!(pixel_cross_entropy(&mut g, l, &[0, 3]).is_err());
    }

    #[test]
    fn cross_entropy_matches_finite_differences() {
        let s = net();
        let x = Tensor::from_vec(&[1, 3, 8, 8], (0..192).map(|i| ((i * 37) % 101) as f64 / 100.0).collect()).unwrap();
        let labels: Vec<u8> = (0..64).map(|i| (i % 3) as u8).collect();
        let loss_of = |store: &ParamStore<f64>| {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let logits = s.logits(&mut g, store, xv).unwrap();
            let loss = pixel_cross_entropy(&mut g, logits, &labels).unwrap();
            (g.value(loss).item(), g.backward(loss).for_store(store))
        };
        let (_, grads) = loss_of(&s.params);
        let mut store = s.params.clone();
        let h = 1e-6;
        for ti in 0..store.len() {
            for k in (0..store.tensors()[ti].len()).step_by(7) {
                let orig = store.tensors()[ti].data()[k];
                store.tensors_mut()[ti].data_mut()[k] = orig + h;
                let up = loss_of(&store).0;
                store.tensors_mut()[ti].data_mut()[k] = orig - h;
                let down = loss_of(&store).0;
                store.tensors_mut()[ti].data_mut()[k] = orig;
                let num = (up - down) / (2.0 * h);
                let a = grads[ti].data()[k];
                assert!((a - num).abs() <= 1e-5 * a.abs().max(num.abs()).max(1e-4), "{ti}/{k}: {a} vs {num}");
            }
        }
    }
}
