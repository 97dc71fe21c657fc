#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use syn2real::losses::{generator_objective, GanObjective, NceConfig};
use syn2real::model::{DiscriminatorConfig, GeneratorConfig, HeadsConfig, ModelConfig, TranslationModel};
use syn2real_tensor::{ParamStore, PadMode, Tensor};

pub const GRADCHECK_SIDE: usize = 16;
const FD_STEP: f64 = 1e-5;
/// Entries whose error exceeds this at `FD_STEP` are re-measured at
/// `RETRY_STEPS`. A step that straddles a ReLU kink, or roundoff on an entry
/// whose true derivative is zero, distorts the difference quotient itself.
const RETRY_ABOVE: f64 = 1e-5;
const RETRY_STEPS: [f64; 3] = [1e-4, 1e-6, 1e-7];
/// Denominator floor for the relative error; central differences at
/// `FD_STEP` carry roughly 1e-10 of absolute error.
const REL_FLOOR: f64 = 1e-6;

/// Noise-injecting model small enough for exhaustive finite differences.
pub fn tiny_model(seed: u64) -> TranslationModel<f64> {
    let cfg = ModelConfig {
        generator: GeneratorConfig {
            base_channels: 4,
            residual_blocks: 1,
            n_noise: 4,
            padding: PadMode::Circular,
            nce_layers: vec![0, 2, 4],
        },
        discriminator: DiscriminatorConfig { base_channels: 2 },
        heads: HeadsConfig { embed_dim: 4 },
    };
    let mut model = TranslationModel::new(cfg, seed).unwrap();
    // Weights at the usual 0.02 scale leave gradients near the FD noise floor.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for store in [&mut model.generator.params, &mut model.discriminator.params, &mut model.heads.params] {
        for t in store.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.4..0.4));
        }
    }
    model
}

pub fn random_batch(seed: u64, n: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n * 3 * GRADCHECK_SIDE * GRADCHECK_SIDE;
    Tensor::from_vec(
        &[n, 3, GRADCHECK_SIDE, GRADCHECK_SIDE],
        (0..len).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

fn objective(model: &TranslationModel<f64>, x: &Tensor<f64>, y: &Tensor<f64>, cfg: &NceConfig, seed: u64) -> (f64, [Vec<Tensor<f64>>; 3]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obj = generator_objective(model, x, y, cfg, GanObjective::LeastSquares, Some(seed), &mut rng).unwrap();
    let grads = obj.graph.backward(obj.total);
    let total = obj.value(obj.total);
    (
        total,
        [
            grads.for_store(&model.generator.params),
            grads.for_store(&model.discriminator.params),
            grads.for_store(&model.heads.params),
        ],
    )
}

fn value(model: &TranslationModel<f64>, x: &Tensor<f64>, y: &Tensor<f64>, cfg: &NceConfig, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obj = generator_objective(model, x, y, cfg, GanObjective::LeastSquares, Some(seed), &mut rng).unwrap();
    obj.value(obj.total)
}

fn store_mut(model: &mut TranslationModel<f64>, which: usize) -> &mut ParamStore<f64> {
    match which {
        0 => &mut model.generator.params,
        1 => &mut model.discriminator.params,
        _ => &mut model.heads.params,
    }
}

pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries re-measured at other step sizes.
    pub retried: usize,
    /// Largest analytic gradient component of the noise adapter.
    pub adapter_grad: f64,
    pub heads_grad: f64,
    pub worst: String,
}

/// Compares every analytic parameter gradient of the generator objective with
/// central differences.
pub fn gradcheck_total_loss(seed: u64) -> GradcheckReport {
    let mut model = tiny_model(seed);
    let x = random_batch(seed + 1, 1);
    let y = random_batch(seed + 2, 1);
    let cfg = NceConfig {
        n_locations: 3,
        temperature: 0.5,
        lambda_nce: 1.5,
    };
    let (_, analytic) = objective(&model, &x, &y, &cfg, seed);
    let mut max_rel_err = 0.0f64;
    let mut checked = 0;
    let mut retried = 0;
    let mut worst = String::new();
    for (which, grads) in analytic.iter().enumerate() {
        for (ti, g) in grads.iter().enumerate() {
            for k in 0..g.len() {
                let a = g.data()[k];
                let mut fd = |h: f64| {
                    let orig = store_mut(&mut model, which).tensors()[ti].data()[k];
                    store_mut(&mut model, which).tensors_mut()[ti].data_mut()[k] = orig + h;
                    let up = value(&model, &x, &y, &cfg, seed);
                    store_mut(&mut model, which).tensors_mut()[ti].data_mut()[k] = orig - h;
                    let down = value(&model, &x, &y, &cfg, seed);
                    store_mut(&mut model, which).tensors_mut()[ti].data_mut()[k] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    ((a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR), numeric)
                };
                let (mut err, mut numeric) = fd(FD_STEP);
                if err > RETRY_ABOVE {
                    for h in RETRY_STEPS {
                        let (e, n) = fd(h);
                        if e < err {
                            (err, numeric) = (e, n);
                        }
                    }
                    retried += 1;
                }
                if err > max_rel_err {
                    worst = format!("{}[{k}]: analytic {a:e}, numeric {numeric:e}", store_mut(&mut model, which).names()[ti]);
                }
                max_rel_err = max_rel_err.max(err);
                checked += 1;
            }
        }
    }
    let linf = |store: &ParamStore<f64>, grads: &[Tensor<f64>], prefix: &str| {
        store
            .names()
            .iter()
            .zip(grads)
            .filter(|(n, _)| n.starts_with(prefix))
            .flat_map(|(_, g)| g.data().iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    };
    GradcheckReport {
        max_rel_err,
        checked,
        retried,
        adapter_grad: linf(&model.generator.params, &analytic[0], "noise_adapter"),
        heads_grad: linf(&model.heads.params, &analytic[2], "mlp"),
        worst,
    }
}
