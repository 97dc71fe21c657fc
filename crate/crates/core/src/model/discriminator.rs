use serde::{Deserialize, Serialize};
use syn2real_tensor::{Graph, PadMode, ParamId, ParamStore, Scalar, Tensor, Var};

use super::init::{normal, GAN_INIT_STD};
use crate::error::{Error, Result};
use crate::rng::named_rng;

/// Smallest side the patch discriminator accepts.
pub const MIN_DISCRIMINATOR_INPUT: usize = 16;

const LEAK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 32 }
    }
}

/// `(kernel, stride, padding)` of each convolution, in order.
pub const DISCRIMINATOR_STACK: [(usize, usize, usize); 4] = [(4, 2, 1), (4, 2, 1), (4, 1, 1), (4, 1, 1)];

/// Patch discriminator: four 4x4 convolutions emitting a map of logits.
pub struct Discriminator<T: Scalar> {
    pub config: DiscriminatorConfig,
    pub params: ParamStore<T>,
    layers: Vec<(ParamId, ParamId)>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.base_channels == 0 {
            return Err(Error::Config("discriminator needs channels".into()));
        }
        let mut rng = named_rng(seed, "discriminator-init");
        let ndf = config.base_channels;
        let widths = [3, ndf, 2 * ndf, 4 * ndf, 1];
        let mut params = ParamStore::new();
        let layers = (0..4)
            .map(|i| {
                let w = params.add(
                    format!("conv{i}.weight"),
                    normal(&[widths[i + 1], widths[i], 4, 4], GAN_INIT_STD, &mut rng),
                );
                let b = params.add(format!("conv{i}.bias"), Tensor::zeros(&[widths[i + 1]]));
                (w, b)
            })
            .collect();
        Ok(Self { config, params, layers })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (_, _, h, w) = g.value(x).dims4()?;
        if h.min(w) < MIN_DISCRIMINATOR_INPUT {
            return Err(Error::Shape(format!(
                "discriminator input {h}x{w} smaller than {MIN_DISCRIMINATOR_INPUT}"
            )));
        }
        let mut t = x;
        for (i, (&(wid, bid), &(_, stride, pad))) in self.layers.iter().zip(&DISCRIMINATOR_STACK).enumerate() {
            let wv = g.param(&self.params, wid);
            let bv = g.param(&self.params, bid);
            t = g.conv2d(t, wv, Some(bv), stride, pad, PadMode::Zero)?;
            if i < 3 {
                if i > 0 {
                    t = g.instance_norm(t)?;
                }
                t = g.leaky_relu(t, T::lit(LEAK));
            }
        }
        Ok(t)
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        g.freeze(&self.params);
        let xv = g.input(x.clone());
        let out = self.forward(&mut g, xv)?;
        Ok(g.value(out).clone())
    }
}
