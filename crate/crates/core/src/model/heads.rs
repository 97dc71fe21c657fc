use serde::{Deserialize, Serialize};
use syn2real_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

use super::init::{normal, GAN_INIT_STD};
use crate::error::{Error, Result};
use crate::rng::named_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadsConfig {
    pub embed_dim: usize,
}

impl Default for HeadsConfig {
    fn default() -> Self {
        Self { embed_dim: 256 }
    }
}

/// One two-layer MLP per feature tap, each followed by L2 normalization.
pub struct ProjectionHeads<T: Scalar> {
    pub config: HeadsConfig,
    pub params: ParamStore<T>,
    in_channels: Vec<usize>,
    mlps: Vec<[ParamId; 4]>,
}

impl<T: Scalar> ProjectionHeads<T> {
    pub fn new(config: HeadsConfig, in_channels: &[usize], seed: u64) -> Result<Self> {
        if config.embed_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut rng = named_rng(seed, "heads-init");
        let e = config.embed_dim;
        let mut params = ParamStore::new();
        let mlps = in_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                [
                    params.add(format!("mlp{i}.0.weight"), normal(&[c, e], GAN_INIT_STD, &mut rng)),
                    params.add(format!("mlp{i}.0.bias"), Tensor::zeros(&[e])),
                    params.add(format!("mlp{i}.1.weight"), normal(&[e, e], GAN_INIT_STD, &mut rng)),
                    params.add(format!("mlp{i}.1.bias"), Tensor::zeros(&[e])),
                ]
            })
            .collect();
        Ok(Self {
            config,
            params,
            in_channels: in_channels.to_vec(),
            mlps,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.mlps.len()
    }

    /// For each tap, gathers the feature vectors at `locations[layer]`
    /// (flat spatial indices shared by every image of the batch) and
    /// projects them: `(n * locations, embed_dim)` unit rows per layer.
    pub fn project(&self, g: &mut Graph<T>, features: &[Var], locations: &[Vec<usize>]) -> Result<Vec<Var>> {
        if features.len() != self.mlps.len() || locations.len() != self.mlps.len() {
            return Err(Error::Shape(format!(
                "{} heads, {} feature maps, {} location lists",
                self.mlps.len(),
                features.len(),
                locations.len()
            )));
        }
        let mut out = Vec::with_capacity(features.len());
        for ((&f, locs), (&[w1, b1, w2, b2], &c)) in features.iter().zip(locations).zip(self.mlps.iter().zip(&self.in_channels)) {
            let fc = g.value(f).shape()[1];
            if fc != c {
                return Err(Error::Shape(format!("head expects {c} channels, feature map has {fc}")));
            }
            let rows = g.gather_locations(f, locs)?;
            let (w1, b1, w2, b2) = (
                g.param(&self.params, w1),
                g.param(&self.params, b1),
                g.param(&self.params, w2),
                g.param(&self.params, b2),
            );
            let h = g.linear(rows, w1, Some(b1))?;
            let h = g.relu(h);
            let h = g.linear(h, w2, Some(b2))?;
            out.push(g.l2_normalize_rows(h)?);
        }
        Ok(out)
    }
}
