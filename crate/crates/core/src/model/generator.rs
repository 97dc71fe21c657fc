//! ResNet-style encoder/decoder generator.
//!
//! Layer ids used for feature taps: `0` input image, `1` stem, `2` first
//! downsampling, `3` second downsampling, `3 + k` output of residual block `k`.

use serde::{Deserialize, Serialize};
use syn2real_tensor::{Graph, PadMode, ParamId, ParamStore, Scalar, Tensor, Var};

use super::init::{normal, GAN_INIT_STD};
use crate::error::{Error, Result};
use crate::rng::{named_rng, rng_for};

pub const NOISE_CHOICES: [usize; 5] = [0, 4, 8, 16, 32];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Stem width; the trunk runs at `4 * base_channels`.
    pub base_channels: usize,
    pub residual_blocks: usize,
    /// Random feature maps concatenated at the decoder input.
    pub n_noise: usize,
    pub padding: PadMode,
    pub nce_layers: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            residual_blocks: 4,
            n_noise: 0,
            padding: PadMode::Circular,
            nce_layers: vec![0, 1, 2, 3, 5],
        }
    }
}

impl GeneratorConfig {
    pub fn trunk_channels(&self) -> usize {
        4 * self.base_channels
    }

    pub fn max_layer(&self) -> usize {
        3 + self.residual_blocks
    }

    pub fn layer_channels(&self, layer: usize) -> usize {
        match layer {
            0 => 3,
            1 => self.base_channels,
            2 => 2 * self.base_channels,
            _ => self.trunk_channels(),
        }
    }

    /// Spatial downsampling factor of a layer's feature map.
    pub fn layer_stride(&self, layer: usize) -> usize {
        match layer {
            0 | 1 => 1,
            2 => 2,
            _ => 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.residual_blocks == 0 {
            return Err(Error::Config("generator needs channels and at least one residual block".into()));
        }
        if !NOISE_CHOICES.contains(&self.n_noise) {
            return Err(Error::Config(format!("n_noise {} not in {NOISE_CHOICES:?}", self.n_noise)));
        }
        if self.n_noise * 4 > self.trunk_channels() {
            return Err(Error::Config(format!(
                "n_noise {} exceeds a quarter of the {} trunk channels",
                self.n_noise,
                self.trunk_channels()
            )));
        }
        if self.nce_layers.is_empty() {
            return Err(Error::Config("at least one feature layer is needed for the contrastive loss".into()));
        }
        if let Some(&bad) = self.nce_layers.iter().find(|&&l| l > self.max_layer()) {
            return Err(Error::Config(format!("feature layer {bad} beyond last layer {}", self.max_layer())));
        }
        Ok(())
    }
}

/// Translated batch plus the encoder features at the configured taps.
pub struct GeneratorOutput {
    pub image: Var,
    pub features: Vec<Var>,
}

pub struct Generator<T: Scalar> {
    pub config: GeneratorConfig,
    pub params: ParamStore<T>,
    stem: ParamId,
    down: [ParamId; 2],
    blocks: Vec<[ParamId; 2]>,
    adapter: Option<[ParamId; 3]>,
    up: [ParamId; 2],
    out_w: ParamId,
    out_b: ParamId,
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = named_rng(seed, "generator-init");
        let mut p = ParamStore::new();
        let ngf = config.base_channels;
        let m = config.trunk_channels();
        let std = GAN_INIT_STD;
        let stem = p.add("stem.weight", normal(&[ngf, 3, 7, 7], std, &mut rng));
        let down = [
            p.add("down1.weight", normal(&[2 * ngf, ngf, 3, 3], std, &mut rng)),
            p.add("down2.weight", normal(&[m, 2 * ngf, 3, 3], std, &mut rng)),
        ];
        let blocks = (0..config.residual_blocks)
            .map(|k| {
                [
                    p.add(format!("trunk.{k}.conv1.weight"), normal(&[m, m, 3, 3], std, &mut rng)),
                    p.add(format!("trunk.{k}.conv2.weight"), normal(&[m, m, 3, 3], std, &mut rng)),
                ]
            })
            .collect();
        let adapter = (config.n_noise > 0).then(|| {
            [
                p.add("noise_adapter.0.weight", normal(&[m, m + config.n_noise, 3, 3], std, &mut rng)),
                p.add("noise_adapter.1.weight", normal(&[m, m, 3, 3], std, &mut rng)),
                p.add("noise_adapter.2.weight", normal(&[m, m, 3, 3], std, &mut rng)),
            ]
        });
        let up = [
            p.add("up1.weight", normal(&[m, 2 * ngf, 3, 3], std, &mut rng)),
            p.add("up2.weight", normal(&[2 * ngf, ngf, 3, 3], std, &mut rng)),
        ];
        let out_w = p.add("out.weight", normal(&[3, ngf, 7, 7], std, &mut rng));
        let out_b = p.add("out.bias", Tensor::zeros(&[3]));
        Ok(Self {
            config,
            params: p,
            stem,
            down,
            blocks,
            adapter,
            up,
            out_w,
            out_b,
        })
    }

    fn check_input(&self, g: &Graph<T>, x: Var) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = g.value(x).dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("generator expects RGB input, got {c} channels")));
        }
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("generator input {h}x{w} is not divisible by 4")));
        }
        Ok((n, h, w))
    }

    fn conv_in_relu(&self, g: &mut Graph<T>, x: Var, w: ParamId, stride: usize, pad: usize) -> Result<Var> {
        let wv = g.param(&self.params, w);
        let y = g.conv2d(x, wv, None, stride, pad, self.config.padding)?;
        let y = g.instance_norm(y)?;
        Ok(g.relu(y))
    }

    /// Runs the encoder up to and including layer `upto`; returns every layer output.
    pub fn encode(&self, g: &mut Graph<T>, x: Var, upto: usize) -> Result<Vec<Var>> {
        self.check_input(g, x)?;
        let upto = upto.min(self.config.max_layer());
        let mut layers = vec![x];
        if upto >= 1 {
            let h = self.conv_in_relu(g, x, self.stem, 1, 3)?;
            layers.push(h);
        }
        for (i, &w) in self.down.iter().enumerate() {
            if upto >= 2 + i {
                let h = self.conv_in_relu(g, *layers.last().unwrap(), w, 2, 1)?;
                layers.push(h);
            }
        }
        for (k, &[w1, w2]) in self.blocks.iter().enumerate() {
            if upto < 4 + k {
                break;
            }
            let inp = *layers.last().unwrap();
            let h = self.conv_in_relu(g, inp, w1, 1, 1)?;
            let w2v = g.param(&self.params, w2);
            let h = g.conv2d(h, w2v, None, 1, 1, self.config.padding)?;
            let h = g.instance_norm(h)?;
            let out = g.add(inp, h)?;
            layers.push(out);
        }
        Ok(layers)
    }

    fn noise_maps(&self, n: usize, h: usize, w: usize, seed: Option<u64>) -> Tensor<T> {
        let shape = [n, self.config.n_noise, h / 4, w / 4];
        match seed {
            None => Tensor::zeros(&shape),
            Some(s) => {
                use rand_distr::{Distribution, StandardNormal};
                let mut rng = rng_for(s, 0x0015E);
                let count = shape.iter().product();
                let data = (0..count)
                    .map(|_| {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        T::lit(v)
                    })
                    .collect();
                Tensor::from_vec(&shape, data).unwrap()
            }
        }
    }

    /// Full translation. With noise enabled and `noise_seed == None`, the
    /// injected maps are zero (the noise mean), giving a deterministic output.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, noise_seed: Option<u64>) -> Result<GeneratorOutput> {
        let (n, h, w) = self.check_input(g, x)?;
        let layers = self.encode(g, x, self.config.max_layer())?;
        let features = self.config.nce_layers.iter().map(|&l| layers[l]).collect();
        let mut t = *layers.last().unwrap();
        if let Some(adapter) = self.adapter {
            let noise = g.input(self.noise_maps(n, h, w, noise_seed));
            t = g.concat_channels(t, noise)?;
            for wid in adapter {
                t = self.conv_in_relu(g, t, wid, 1, 1)?;
            }
        }
        for &wid in &self.up {
            let wv = g.param(&self.params, wid);
            let y = g.conv_transpose2d(t, wv, None, 2, 1, 1, self.config.padding)?;
            let y = g.instance_norm(y)?;
            t = g.relu(y);
        }
        let ow = g.param(&self.params, self.out_w);
        let ob = g.param(&self.params, self.out_b);
        let y = g.conv2d(t, ow, Some(ob), 1, 3, self.config.padding)?;
        let y = g.tanh(y);
        let image = g.affine(y, T::lit(0.5), T::lit(0.5));
        Ok(GeneratorOutput { image, features })
    }

    /// Encoder features at the configured taps (no decoding).
    pub fn nce_features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let upto = *self.config.nce_layers.iter().max().unwrap();
        let layers = self.encode(g, x, upto)?;
        Ok(self.config.nce_layers.iter().map(|&l| layers[l]).collect())
    }

    /// Inference on a plain tensor.
    pub fn translate(&self, x: &Tensor<T>, noise_seed: Option<u64>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        g.freeze(&self.params);
        let xv = g.input(x.clone());
        let out = self.forward(&mut g, xv, noise_seed)?;
        Ok(g.value(out.image).clone())
    }
}
