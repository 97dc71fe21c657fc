//! Training objective of the translation model: adversarial terms plus the
//! patch-wise contrastive loss on both the source and the identity branch.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use syn2real_tensor::{CustomOp, Graph, Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::{Discriminator, Generator, ProjectionHeads, TranslationModel};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanObjective {
    #[default]
    LeastSquares,
    /// Logistic loss with the non-saturating generator form.
    NonSaturating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NceConfig {
    /// Locations sampled per layer per image.
    pub n_locations: usize,
    pub temperature: f64,
    pub lambda_nce: f64,
}

impl Default for NceConfig {
    fn default() -> Self {
        Self {
            n_locations: 256,
            temperature: 0.07,
            lambda_nce: 1.0,
        }
    }
}

impl NceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_locations < 2 {
            return Err(Error::Config("need at least two locations (one negative)".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if !(self.lambda_nce >= 0.0) {
            return Err(Error::Config(format!("lambda_nce {} must be non-negative", self.lambda_nce)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub gan_g: f64,
    pub gan_d: f64,
    pub nce_x: f64,
    pub nce_y: f64,
    pub total: f64,
}

impl LossReport {
    pub fn combine(gan_g: f64, gan_d: f64, nce_x: f64, nce_y: f64, lambda_nce: f64) -> Self {
        Self {
            gan_g,
            gan_d,
            nce_x,
            nce_y,
            total: gan_g + lambda_nce * (nce_x + nce_y),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.gan_g, self.gan_d, self.nce_x, self.nce_y, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `mean(f(x))` with `f'` evaluated during the forward pass.
struct MeanOf<T> {
    deriv: Vec<T>,
}

impl<T: Scalar> CustomOp<T> for MeanOf<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let s = grad.item() / T::from_usize(self.deriv.len()).unwrap();
        let data = self.deriv.iter().map(|&d| d * s).collect();
        vec![Some(Tensor::from_vec(inputs[0].shape(), data).unwrap())]
    }
}

/// Per-element value and derivative of the loss toward label `target_real`.
fn elementwise(objective: GanObjective, target_real: bool, v: f64) -> (f64, f64) {
    match (objective, target_real) {
        (GanObjective::LeastSquares, true) => ((v - 1.0).powi(2), 2.0 * (v - 1.0)),
        (GanObjective::LeastSquares, false) => (v * v, 2.0 * v),
        (GanObjective::NonSaturating, true) => (softplus(-v), sigmoid(v) - 1.0),
        (GanObjective::NonSaturating, false) => (softplus(v), sigmoid(v)),
    }
}

fn mean_toward<T: Scalar>(logits: &Tensor<T>, objective: GanObjective, target_real: bool) -> Result<(T, Vec<T>)> {
    if logits.is_empty() {
        return Err(Error::Shape("empty logit map".into()));
    }
    let mut sum = 0.0;
    let deriv = logits
        .data()
        .iter()
        .map(|v| {
            let (f, d) = elementwise(objective, target_real, v.to_f64().unwrap());
            sum += f;
            T::lit(d)
        })
        .collect();
    Ok((T::lit(sum / logits.len() as f64), deriv))
}

fn mean_toward_op<T: Scalar>(g: &mut Graph<T>, logits: Var, objective: GanObjective, target_real: bool) -> Result<Var> {
    let (value, deriv) = mean_toward(g.value(logits), objective, target_real)?;
    Ok(g.custom(&[logits], Tensor::scalar(value), Box::new(MeanOf { deriv })))
}

fn check_batches<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<()> {
    if real.shape().first() != fake.shape().first() {
        return Err(Error::Shape(format!(
            "real logits {:?} and fake logits {:?} differ in batch size",
            real.shape(),
            fake.shape()
        )));
    }
    Ok(())
}

/// Discriminator loss: the average of the real-toward-1 and fake-toward-0 terms.
pub fn gan_loss_d<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>, objective: GanObjective) -> Result<f64> {
    check_batches(real, fake)?;
    let (r, _) = mean_toward(real, objective, true)?;
    let (f, _) = mean_toward(fake, objective, false)?;
    Ok(0.5 * (r.to_f64().unwrap() + f.to_f64().unwrap()))
}

pub fn gan_loss_g<T: Scalar>(fake: &Tensor<T>, objective: GanObjective) -> Result<f64> {
    Ok(mean_toward(fake, objective, true)?.0.to_f64().unwrap())
}

pub fn gan_loss_d_op<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var, objective: GanObjective) -> Result<Var> {
    check_batches(g.value(real), g.value(fake))?;
    let r = mean_toward_op(g, real, objective, true)?;
    let f = mean_toward_op(g, fake, objective, false)?;
    Ok(g.weighted_sum(&[(r, T::lit(0.5)), (f, T::lit(0.5))])?)
}

pub fn gan_loss_g_op<T: Scalar>(g: &mut Graph<T>, fake: Var, objective: GanObjective) -> Result<Var> {
    mean_toward_op(g, fake, objective, true)
}

/// Distinct uniformly drawn flat indices per feature map, `min(n, h * w)` each.
pub fn sample_locations(map_shapes: &[(usize, usize)], n_locations: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    map_shapes
        .iter()
        .map(|&(h, w)| {
            let total = h * w;
            if total == 0 {
                return Err(Error::Shape("empty feature map".into()));
            }
            Ok(index::sample(rng, total, n_locations.min(total)).into_vec())
        })
        .collect()
}

/// Contrastive loss and its gradients for `groups` images whose
/// `(groups * l, d)` rows are location-matched between `src` and `trans`.
///
/// For translated row `i`, the logits are its cosine similarities to every
/// source row of the same image divided by `tau`; the target is the
/// position-matched source row.
pub fn patch_nce_with_grads<T: Scalar>(
    src: &Tensor<T>,
    trans: &Tensor<T>,
    groups: usize,
    tau: f64,
) -> Result<(f64, Tensor<T>, Tensor<T>)> {
    let (rows, d) = src.dims2()?;
    if trans.shape() != src.shape() {
        return Err(Error::Shape(format!(
            "source embeddings {:?} vs translated {:?}",
            src.shape(),
            trans.shape()
        )));
    }
    if groups == 0 || rows % groups != 0 || rows == 0 {
        return Err(Error::Shape(format!("{rows} embeddings do not split into {groups} images")));
    }
    let l = rows / groups;
    let inv_tau = T::lit(1.0 / tau);
    let scale = T::lit(1.0 / rows as f64);
    let mut dsrc = Tensor::zeros(src.shape());
    let mut dtrans = Tensor::zeros(src.shape());
    let mut logits = vec![T::zero(); l * l];
    let mut total = 0.0f64;
    for gi in 0..groups {
        let s = &src.data()[gi * l * d..(gi + 1) * l * d];
        let q = &trans.data()[gi * l * d..(gi + 1) * l * d];
        // logits[i, j] = q_i . s_j / tau
        T::gemm(l, d, l, inv_tau, q, false, s, true, T::zero(), &mut logits);
        for i in 0..l {
            let row = &mut logits[i * l..(i + 1) * l];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            // -log softmax at the positive
            total += (z.ln() - row[i].ln()).to_f64().unwrap();
            for v in row.iter_mut() {
                *v = *v / z;
            }
            row[i] -= T::one();
            row.iter_mut().for_each(|v| *v = *v * scale * inv_tau);
        }
        let dq = &mut dtrans.data_mut()[gi * l * d..(gi + 1) * l * d];
        T::gemm(l, l, d, T::one(), &logits, false, s, false, T::zero(), dq);
        let ds = &mut dsrc.data_mut()[gi * l * d..(gi + 1) * l * d];
        T::gemm(l, l, d, T::one(), &logits, true, q, false, T::zero(), ds);
    }
    Ok((total / rows as f64, dsrc, dtrans))
}

/// Mean contrastive loss over the locations of a single image.
pub fn patch_nce_loss<T: Scalar>(src: &Tensor<T>, trans: &Tensor<T>, tau: f64) -> Result<f64> {
    Ok(patch_nce_with_grads(src, trans, 1, tau)?.0)
}

struct PatchNce<T> {
    dsrc: Tensor<T>,
    dtrans: Tensor<T>,
}

impl<T: Scalar> CustomOp<T> for PatchNce<T> {
    fn backward(&self, _inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let s = grad.item();
        vec![Some(self.dsrc.map(|v| v * s)), Some(self.dtrans.map(|v| v * s))]
    }
}

/// Contrastive loss averaged over layers.
pub fn patch_nce_op<T: Scalar>(g: &mut Graph<T>, src: &[Var], trans: &[Var], images: usize, tau: f64) -> Result<Var> {
    if src.len() != trans.len() || src.is_empty() {
        return Err(Error::Shape("one source and one translated embedding set per layer".into()));
    }
    let mut terms = Vec::with_capacity(src.len());
    let w = T::lit(1.0 / src.len() as f64);
    for (&s, &q) in src.iter().zip(trans) {
        let (loss, dsrc, dtrans) = patch_nce_with_grads(g.value(s), g.value(q), images, tau)?;
        let v = g.custom(&[s, q], Tensor::scalar(T::lit(loss)), Box::new(PatchNce { dsrc, dtrans }));
        terms.push((v, w));
    }
    Ok(g.weighted_sum(&terms)?)
}

/// Generator-side objective on one graph, ready for backpropagation.
pub struct GeneratorObjective<T: Scalar> {
    pub graph: Graph<T>,
    pub total: Var,
    pub gan_g: Var,
    pub nce_x: Var,
    pub nce_y: Var,
    pub fake: Var,
}

impl<T: Scalar> GeneratorObjective<T> {
    pub fn value(&self, v: Var) -> f64 {
        self.graph.value(v).item().to_f64().unwrap()
    }
}

/// Translations and contrastive terms, before the adversarial term is added.
pub struct ContrastiveTerms<T: Scalar> {
    pub graph: Graph<T>,
    pub fake: Var,
    pub nce_x: Var,
    pub nce_y: Var,
    lambda_nce: f64,
}

impl<T: Scalar> ContrastiveTerms<T> {
    pub fn fake_value(&self) -> &Tensor<T> {
        self.graph.value(self.fake)
    }

    /// Appends `D(G(x))` with the discriminator's current weights.
    pub fn with_adversarial(mut self, discriminator: &Discriminator<T>, objective: GanObjective) -> Result<GeneratorObjective<T>> {
        let g = &mut self.graph;
        let logits = discriminator.forward(g, self.fake)?;
        let gan_g = gan_loss_g_op(g, logits, objective)?;
        let lambda = T::lit(self.lambda_nce);
        let total = g.weighted_sum(&[(gan_g, T::one()), (self.nce_x, lambda), (self.nce_y, lambda)])?;
        Ok(GeneratorObjective {
            graph: self.graph,
            total,
            gan_g,
            nce_x: self.nce_x,
            nce_y: self.nce_y,
            fake: self.fake,
        })
    }
}

fn nce_branch<T: Scalar>(
    generator: &Generator<T>,
    heads: &ProjectionHeads<T>,
    g: &mut Graph<T>,
    source_feats: &[Var],
    translated: Var,
    images: usize,
    cfg: &NceConfig,
    rng: &mut impl Rng,
) -> Result<Var> {
    let shapes: Vec<(usize, usize)> = source_feats
        .iter()
        .map(|&f| {
            let s = g.value(f).shape();
            (s[2], s[3])
        })
        .collect();
    let locations = sample_locations(&shapes, cfg.n_locations, rng)?;
    let trans_feats = generator.nce_features(g, translated)?;
    let k = heads.project(g, source_feats, &locations)?;
    let q = heads.project(g, &trans_feats, &locations)?;
    patch_nce_op(g, &k, &q, images, cfg.temperature)
}

/// Contrastive terms on `(x, G(x))` and on the identity pair `(y, G(y))`.
pub fn contrastive_terms<T: Scalar>(
    generator: &Generator<T>,
    heads: &ProjectionHeads<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    cfg: &NceConfig,
    noise_seed: Option<u64>,
    rng: &mut impl Rng,
) -> Result<ContrastiveTerms<T>> {
    cfg.validate()?;
    let images = x.shape()[0];
    if y.shape()[0] != images {
        return Err(Error::Shape("x and y batches differ in size".into()));
    }
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let yv = g.input(y.clone());
    let out_x = generator.forward(&mut g, xv, noise_seed)?;
    let out_y = generator.forward(&mut g, yv, noise_seed.map(|s| derive_seed(s, 1)))?;
    let nce_x = nce_branch(generator, heads, &mut g, &out_x.features, out_x.image, images, cfg, rng)?;
    let nce_y = nce_branch(generator, heads, &mut g, &out_y.features, out_y.image, images, cfg, rng)?;
    Ok(ContrastiveTerms {
        graph: g,
        fake: out_x.image,
        nce_x,
        nce_y,
        lambda_nce: cfg.lambda_nce,
    })
}

/// `gan_g + lambda * (nce_x + nce_y)` on a single graph.
pub fn generator_objective<T: Scalar>(
    model: &TranslationModel<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    cfg: &NceConfig,
    objective: GanObjective,
    noise_seed: Option<u64>,
    rng: &mut impl Rng,
) -> Result<GeneratorObjective<T>> {
    contrastive_terms(&model.generator, &model.heads, x, y, cfg, noise_seed, rng)?
        .with_adversarial(&model.discriminator, objective)
}

/// Discriminator loss on `(y, fake)` with the fake batch treated as constant.
pub fn discriminator_objective<T: Scalar>(
    discriminator: &Discriminator<T>,
    y: &Tensor<T>,
    fake: &Tensor<T>,
    objective: GanObjective,
) -> Result<(Graph<T>, Var)> {
    let mut g = Graph::new();
    let yv = g.input(y.clone());
    let fv = g.input(fake.clone());
    let real = discriminator.forward(&mut g, yv)?;
    let fake = discriminator.forward(&mut g, fv)?;
    let loss = gan_loss_d_op(&mut g, real, fake, objective)?;
    Ok((g, loss))
}

/// Evaluates every loss component for one pair of batches.
pub fn total_loss<T: Scalar>(
    model: &TranslationModel<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    cfg: &NceConfig,
    objective: GanObjective,
    noise_seed: Option<u64>,
    rng: &mut impl Rng,
) -> Result<LossReport> {
    let gen = generator_objective(model, x, y, cfg, objective, noise_seed, rng)?;
    let fake = gen.graph.value(gen.fake).clone();
    let (dg, d_loss) = discriminator_objective(&model.discriminator, y, &fake, objective)?;
    Ok(LossReport::combine(
        gen.value(gen.gan_g),
        dg.value(d_loss).item().to_f64().unwrap(),
        gen.value(gen.nce_x),
        gen.value(gen.nce_y),
        cfg.lambda_nce,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn constant(v: f64) -> Tensor<f64> {
        Tensor::full(&[2, 1, 3, 3], v)
    }

    fn basis(rows: &[usize], d: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[rows.len(), d]);
        for (i, &r) in rows.iter().enumerate() {
            t.data_mut()[i * d + r] = 1.0;
        }
        t
    }

    #[test]
    fn gan_optima_and_midpoint() {
        let ls = GanObjective::LeastSquares;
        assert_eq!(gan_loss_d(&constant(1.0), &constant(0.0), ls).unwrap(), 0.0);
        assert_eq!(gan_loss_g(&constant(1.0), ls).unwrap(), 0.0);
        assert_eq!(gan_loss_d(&constant(0.5), &constant(0.5), ls).unwrap(), 0.25);
        assert!(gan_loss_d(&Tensor::<f64>::zeros(&[0]), &constant(0.0), ls).is_err());
    }

    #[test]
    fn d_loss_minimized_at_one_zero_over_constants() {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=40 {
            for j in 0..=40 {
                let (r, f) = (-1.0 + i as f64 * 0.075, -1.0 + j as f64 * 0.075);
                let l = gan_loss_d(&constant(r), &constant(f), GanObjective::LeastSquares).unwrap();
                if l < best.0 {
                    best = (l, r, f);
                }
            }
        }
        assert!((best.1 - 1.0).abs() < 0.04 && best.2.abs() < 0.04, "{best:?}");
    }

    #[test]
    fn non_saturating_sanity() {
        let ns = GanObjective::NonSaturating;
        let strong = gan_loss_d(&constant(10.0), &constant(-10.0), ns).unwrap();
        assert!(strong < 1e-4);
        let g = gan_loss_g(&constant(0.0), ns).unwrap();
        assert!((g - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn location_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let locs = sample_locations(&[(2, 2), (22, 22)], 256, &mut rng).unwrap();
        let mut first = locs[0].clone();
        first.sort();
        assert_eq!(first, vec![0, 1, 2, 3]);
        assert_eq!(locs[1].iter().collect::<HashSet<_>>().len(), 256);
        assert!(locs[1].iter().all(|&l| l < 484));
        let mut rng2 = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_locations(&[(2, 2), (22, 22)], 256, &mut rng2).unwrap(), locs);
    }

    #[test]
    fn nce_matched_orthogonal() {
        // logits (1, 0, 0) per location at tau = 1
        let e = basis(&[0, 1, 2], 3);
        let loss = patch_nce_loss(&e, &e, 1.0).unwrap();
        let want = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((loss - want).abs() < 1e-12);
        assert!((loss - 0.551_444_7).abs() < 1e-6);
        // one negative instead of two
        let e2 = basis(&[0, 1], 2);
        let loss2 = patch_nce_loss(&e2, &e2, 1.0).unwrap();
        assert!((loss2 - 0.313_261_7).abs() < 1e-6);
    }

    #[test]
    fn nce_uniform_when_translated_orthogonal() {
        let src = basis(&[0, 1, 2], 6);
        let trans = basis(&[3, 4, 5], 6);
        let loss = patch_nce_loss(&src, &trans, 1.0).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nce_sharp_temperature_bound() {
        let n = 256;
        let e = basis(&(0..n).collect::<Vec<_>>(), n);
        let loss = patch_nce_loss(&e, &e, 0.07).unwrap();
        let bound = -((1.0f64 / 0.07).exp() / ((1.0f64 / 0.07).exp() + (n - 1) as f64)).ln();
        assert!((loss - bound).abs() < 1e-9);
        assert!(loss < 1e-3);
    }

    #[test]
    fn nce_rejects_mismatched_counts() {
        assert!(patch_nce_loss(&basis(&[0, 1], 3), &basis(&[0, 1, 2], 3), 1.0).is_err());
    }

    #[test]
    fn report_total_weighting() {
        let r = LossReport::combine(0.5, 0.0, 0.3, 0.2, 1.0);
        assert!((r.total - 1.0).abs() < 1e-12);
        let r = LossReport::combine(0.5, 0.0, 0.3, 0.2, 2.0);
        assert!((r.total - 1.5).abs() < 1e-12);
        assert_eq!(LossReport::combine(0.5, 0.0, 0.3, 0.2, 0.0).total, 0.5);
    }

    fn unit_rows(seed: u64, rows: usize, d: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<f64> = (0..rows * d).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        for r in data.chunks_mut(d) {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter_mut().for_each(|v| *v /= n);
        }
        Tensor::from_vec(&[rows, d], data).unwrap()
    }

    proptest! {
        #[test]
        fn nce_nonnegative_and_negative_permutation_invariant(seed in 0u64..500, a in 1usize..5, b in 1usize..5) {
            let (src, trans) = (unit_rows(seed, 5, 4), unit_rows(seed + 1000, 5, 4));
            let base = patch_nce_loss(&src, &trans, 0.5).unwrap();
            prop_assert!(base >= 0.0);
            // swapping two source negatives of location 0 only changes the order of its logits
            let single_src = src.clone();
            let mut swapped = single_src.clone();
            let d = 4;
            for k in 0..d {
                swapped.data_mut().swap(a * d + k, b * d + k);
            }
            let q = Tensor::from_vec(&[1, d], trans.data()[..d].to_vec()).unwrap();
            let row_loss = |s: &Tensor<f64>| {
                let logits: Vec<f64> = s.data().chunks(d).map(|r| r.iter().zip(q.data()).map(|(x, y)| x * y).sum::<f64>() / 0.5).collect();
                let z: f64 = logits.iter().map(|v| v.exp()).sum();
                z.ln() - logits[0]
            };
            prop_assert!((row_loss(&single_src) - row_loss(&swapped)).abs() < 1e-12);
        }

        #[test]
        fn nce_decreases_with_positive_similarity(seed in 0u64..200, t in 0.0f64..0.9) {
            // translated row 0 interpolates toward its positive; negatives fixed
            let src = unit_rows(seed, 4, 6);
            let start = unit_rows(seed + 7, 4, 6);
            let blend = |w: f64| {
                let mut q = start.clone();
                let mut row: Vec<f64> = (0..6).map(|k| (1.0 - w) * start.data()[k] + w * src.data()[k]).collect();
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter_mut().for_each(|v| *v /= n);
                q.data_mut()[..6].copy_from_slice(&row);
                q
            };
            let loss_at = |q: &Tensor<f64>| {
                let s = src.data();
                let logits: Vec<f64> = (0..4).map(|j| (0..6).map(|k| q.data()[k] * s[j * 6 + k]).sum::<f64>()).collect();
                (logits.iter().map(|v| v.exp()).sum::<f64>().ln() - logits[0], logits[0])
            };
            let (l1, p1) = loss_at(&blend(t));
            let (l2, p2) = loss_at(&blend(t + 0.1));
            if p2 > p1 + 1e-9 {
                // a higher positive similarity can only lower the loss if negatives did not rise;
                // check the pure positive-logit monotonicity with negatives held fixed
                let s = src.data();
                let negs: Vec<f64> = (1..4).map(|j| (0..6).map(|k| blend(t).data()[k] * s[j * 6 + k]).sum::<f64>()).collect();
                let f = |p: f64| (p.exp() + negs.iter().map(|v| v.exp()).sum::<f64>()).ln() - p;
                prop_assert!(f(p2) < f(p1));
            }
            let _ = (l1, l2);
        }
    }
}
