//! Adversarial training of the translation model on unpaired patch batches,
//! and full-resolution refinement of labeled datasets.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use syn2real_tensor::{Adam, Scalar, Tensor};

use crate::data::{images_to_tensor, tensor_to_images, Dataset, Domain, LabeledSample, PatchSpec, UnpairedBatches};
use crate::error::{Error, Result};
use crate::losses::{contrastive_terms, discriminator_objective, GanObjective, LossReport, NceConfig};
use crate::model::{ModelConfig, TranslationModel};
use crate::rng::{derive_seed, named_rng};

pub const REFINED_PREFIX: &str = "refined/";
pub const FINAL_DIR: &str = "final";
pub const DIAGNOSTIC_DIR: &str = "diagnostic";
pub const LOG_FILE: &str = "log.ndjson";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DEFAULT_COLLAPSE_THRESHOLD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationConfig {
    pub patch_size: usize,
    #[serde(default)]
    pub legacy_rescale: bool,
    pub batch: usize,
    pub epochs: usize,
    pub lambda_nce: f64,
    /// Injected noise maps; overrides `architecture.generator.n_noise`.
    pub n_noise: usize,
    pub n_locations: usize,
    pub temperature: f64,
    pub gan: GanObjective,
    pub optimizer: AdamConfig,
    pub architecture: ModelConfig,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Full frames from X used to watch for collapsed outputs.
    pub probe_size: usize,
    pub collapse_threshold: f64,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        Self {
            patch_size: 88,
            legacy_rescale: false,
            batch: 40,
            epochs: 400,
            lambda_nce: 1.0,
            n_noise: 0,
            n_locations: 256,
            temperature: 0.07,
            gan: GanObjective::LeastSquares,
            optimizer: AdamConfig::default(),
            architecture: ModelConfig::default(),
            seed: 0,
            checkpoint_every: 50,
            probe_size: 8,
            collapse_threshold: DEFAULT_COLLAPSE_THRESHOLD,
        }
    }
}

impl TranslationConfig {
    /// A reduced network and budget for 64x64 frames on a single CPU core.
    pub fn desk() -> Self {
        let mut architecture = ModelConfig::default();
        architecture.generator.base_channels = 16;
        architecture.generator.residual_blocks = 2;
        architecture.generator.nce_layers = vec![0, 1, 2, 3, 5];
        architecture.discriminator.base_channels = 16;
        architecture.heads.embed_dim = 64;
        Self {
            patch_size: 32,
            batch: 4,
            epochs: 40,
            n_locations: 64,
            architecture,
            checkpoint_every: 0,
            ..Self::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.architecture.clone();
        m.generator.n_noise = self.n_noise;
        m
    }

    pub fn nce(&self) -> NceConfig {
        NceConfig {
            n_locations: self.n_locations,
            temperature: self.temperature,
            lambda_nce: self.lambda_nce,
        }
    }

    pub fn patch_spec(&self) -> Result<PatchSpec> {
        Ok(PatchSpec::new(self.patch_size)?.with_legacy_rescale(self.legacy_rescale))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be at least 1".into()));
        }
        if !(self.optimizer.lr > 0.0) || !(0.0..1.0).contains(&self.optimizer.beta1) || !(0.0..1.0).contains(&self.optimizer.beta2) {
            return Err(Error::Config(format!("invalid optimizer settings {:?}", self.optimizer)));
        }
        self.nce().validate()?;
        self.model_config().generator.validate()?;
        self.patch_spec()?;
        Ok(())
    }

    /// Learning-rate multiplier: constant for the first half of training,
    /// then linear decay toward zero.
    pub fn lr_factor(&self, epoch: usize) -> f64 {
        let hold = self.epochs / 2;
        let decay = self.epochs - hold;
        1.0 - (epoch + 1).saturating_sub(hold) as f64 / (decay + 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTiming {
    pub epoch_index: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean: LossReport,
    pub timing: EpochTiming,
    pub probe_distance: f64,
    pub collapsed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub steps: u64,
    pub steps_per_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    /// Epochs after which the probe outputs were nearly identical.
    pub collapse_epochs: Vec<usize>,
}

impl TrainingSummary {
    pub fn timings(&self) -> Vec<EpochTiming> {
        self.epochs.iter().map(|e| e.timing).collect()
    }

    pub fn collapsed(&self) -> bool {
        !self.collapse_epochs.is_empty()
    }
}

#[derive(Serialize)]
struct StepLine<'a> {
    kind: &'a str,
    epoch: usize,
    step: u64,
    lr: f64,
    #[serde(flatten)]
    report: LossReport,
}

#[derive(Serialize)]
struct EpochLine<'a> {
    kind: &'a str,
    #[serde(flatten)]
    record: &'a EpochRecord,
}

/// Mean over all pairs of the root-mean-square pixel difference.
pub fn mean_pairwise_distance<T: Scalar>(images: &Tensor<T>) -> Result<f64> {
    let (n, c, h, w) = images.dims4()?;
    if n < 2 {
        return Err(Error::Length("pairwise distance needs at least two images".into()));
    }
    let len = c * h * w;
    let d = images.data();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let ss: f64 = (0..len)
                .map(|k| {
                    let v = (d[i * len + k] - d[j * len + k]).to_f64().unwrap();
                    v * v
                })
                .sum();
            total += (ss / len as f64).sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

fn to_tensor<T: Scalar>(samples: &[LabeledSample]) -> Result<Tensor<T>> {
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    images_to_tensor(&images)
}

fn probe_batch<T: Scalar>(x: &Dataset, cfg: &TranslationConfig) -> Result<Option<Tensor<T>>> {
    let n = cfg.probe_size.min(x.len());
    if n < 2 {
        return Ok(None);
    }
    let (h, w) = (x.samples[0].height(), x.samples[0].width());
    // Evenly spaced frames of the same size as the first one.
    let picked: Vec<_> = (0..n)
        .map(|i| &x.samples[i * x.len() / n])
        .filter(|s| s.height() == h && s.width() == w)
        .map(|s| &s.image)
        .collect();
    if picked.len() < 2 {
        return Ok(None);
    }
    Ok(Some(images_to_tensor(&picked)?))
}

pub struct TrainedTranslation<T: Scalar> {
    pub model: TranslationModel<T>,
    pub config: TranslationConfig,
    pub summary: TrainingSummary,
}

fn save_checkpoint<T: Scalar>(
    model: &TranslationModel<T>,
    dir: &Path,
    step: u64,
    cfg: &TranslationConfig,
    config_hash: &str,
) -> Result<()> {
    let extra = serde_json::json!({ "translation": cfg });
    model.save(dir, step, config_hash, extra)
}

fn mean_report(reports: &[LossReport], lambda: f64) -> LossReport {
    let n = reports.len().max(1) as f64;
    let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    LossReport::combine(avg(|r| r.gan_g), avg(|r| r.gan_d), avg(|r| r.nce_x), avg(|r| r.nce_y), lambda)
}

/// Trains on patches of `x` (source) and `y` (target). With `out`, writes
/// `log.ndjson`, `summary.json`, periodic `epoch_NNNN/` checkpoints and the
/// final checkpoint under `final/`.
pub fn train_cut<T: Scalar>(
    cfg: &TranslationConfig,
    x: &Dataset,
    y: &Dataset,
    out: Option<&Path>,
    config_hash: &str,
) -> Result<TrainedTranslation<T>> {
    cfg.validate()?;
    let spec = cfg.patch_spec()?;
    let mut batches = UnpairedBatches::new(x, y, cfg.batch, spec, derive_seed(cfg.seed, 10))?;
    let mut model = TranslationModel::<T>::new(cfg.model_config(), cfg.seed)?;
    let opt = &cfg.optimizer;
    let (b1, b2) = (T::lit(opt.beta1), T::lit(opt.beta2));
    let lr = T::lit(opt.lr);
    let mut adam_g = Adam::new(&model.generator.params, lr, b1, b2);
    let mut adam_h = Adam::new(&model.heads.params, lr, b1, b2);
    let mut adam_d = Adam::new(&model.discriminator.params, lr, b1, b2);
    let nce = cfg.nce();
    let mut loc_rng = named_rng(cfg.seed, "nce-locations");
    let probe = probe_batch::<T>(x, cfg)?;

    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            Some((BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?), path))
        }
        None => None,
    };
    let mut write_line = |line: String| -> Result<()> {
        if let Some((w, path)) = log.as_mut() {
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(())
    };

    let steps_per_epoch = batches.steps_per_epoch();
    let mut summary = TrainingSummary {
        steps_per_epoch,
        ..Default::default()
    };
    for epoch in 0..cfg.epochs {
        let factor = cfg.lr_factor(epoch);
        let lr = T::lit(opt.lr * factor);
        adam_g.lr = lr;
        adam_h.lr = lr;
        adam_d.lr = lr;
        let started = Instant::now();
        let mut reports = Vec::with_capacity(steps_per_epoch);
        for _ in 0..steps_per_epoch {
            let batch = batches.next_batch()?;
            let xb = to_tensor::<T>(&batch.x)?;
            let yb = to_tensor::<T>(&batch.y)?;
            let noise_seed = (cfg.n_noise > 0).then(|| derive_seed(cfg.seed ^ 0x6E6F_6973_65, summary.steps));

            let mut terms = contrastive_terms(&model.generator, &model.heads, &xb, &yb, &nce, noise_seed, &mut loc_rng)?;
            let (dg, d_loss) = discriminator_objective(&model.discriminator, &yb, terms.fake_value(), cfg.gan)?;
            let gan_d = dg.value(d_loss).item().to_f64().unwrap();
            let d_grads = dg.backward(d_loss).for_store(&model.discriminator.params);

            terms.graph.freeze(&model.discriminator.params);
            let gen = terms.with_adversarial(&model.discriminator, cfg.gan)?;
            let report = LossReport::combine(
                gen.value(gen.gan_g),
                gan_d,
                gen.value(gen.nce_x),
                gen.value(gen.nce_y),
                cfg.lambda_nce,
            );
            if !report.is_finite() {
                if let Some(dir) = out {
                    save_checkpoint(&model, &dir.join(DIAGNOSTIC_DIR), summary.steps, cfg, config_hash)?;
                }
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, step {}: non-finite loss {report:?}",
                    summary.steps
                )));
            }
            adam_d.step(&mut model.discriminator.params, &d_grads);
            let grads = gen.graph.backward(gen.total);
            let (g_grads, h_grads) = (grads.for_store(&model.generator.params), grads.for_store(&model.heads.params));
            adam_g.step(&mut model.generator.params, &g_grads);
            adam_h.step(&mut model.heads.params, &h_grads);
            summary.steps += 1;
            write_line(
                serde_json::to_string(&StepLine {
                    kind: "step",
                    epoch,
                    step: summary.steps,
                    lr: opt.lr * factor,
                    report,
                })
                .unwrap(),
            )?;
            reports.push(report);
        }
        let wall_seconds = started.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);

        let probe_distance = match &probe {
            Some(p) => mean_pairwise_distance(&model.generator.translate(p, None)?)?,
            None => f64::NAN,
        };
        let collapsed = probe_distance < cfg.collapse_threshold;
        if collapsed {
            log::warn!(
                "epoch {epoch}: probe outputs nearly identical (mean pairwise distance {probe_distance:.4} < {})",
                cfg.collapse_threshold
            );
            summary.collapse_epochs.push(epoch);
        }
        let record = EpochRecord {
            epoch,
            lr: opt.lr * factor,
            mean: mean_report(&reports, cfg.lambda_nce),
            timing: EpochTiming {
                epoch_index: epoch,
                wall_seconds,
            },
            probe_distance,
            collapsed,
        };
        log::info!(
            "epoch {epoch}: total {:.4} nce_x {:.4} gan_d {:.4} probe {:.4} ({wall_seconds:.2}s)",
            record.mean.total,
            record.mean.nce_x,
            record.mean.gan_d,
            probe_distance
        );
        write_line(serde_json::to_string(&EpochLine { kind: "epoch", record: &record }).unwrap())?;
        summary.epochs.push(record);
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs {
                save_checkpoint(&model, &dir.join(format!("epoch_{:04}", epoch + 1)), summary.steps, cfg, config_hash)?;
            }
        }
    }
    if let Some(dir) = out {
        save_checkpoint(&model, &dir.join(FINAL_DIR), summary.steps, cfg, config_hash)?;
        let path = dir.join(SUMMARY_FILE);
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainedTranslation {
        model,
        config: cfg.clone(),
        summary,
    })
}

/// Resolves a training output directory to its final checkpoint.
pub fn checkpoint_dir(dir: &Path) -> PathBuf {
    if dir.join(crate::checkpoint::META).exists() {
        dir.to_path_buf()
    } else {
        dir.join(FINAL_DIR)
    }
}

pub fn load_translation<T: Scalar>(dir: &Path) -> Result<TranslationModel<T>> {
    Ok(TranslationModel::load(&checkpoint_dir(dir))?.0)
}

/// Translates every frame at its native resolution. Labels are copied
/// unchanged and ids gain the `refined/` prefix. With `noise_seed`, frame `i`
/// draws its noise from a seed derived from `(noise_seed, i)`.
pub fn refine_dataset<T: Scalar>(model: &TranslationModel<T>, x: &Dataset, noise_seed: Option<u64>) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(x.len());
    for (i, s) in x.samples.iter().enumerate() {
        let input: Tensor<T> = images_to_tensor(&[&s.image])?;
        let out = model.generator.translate(&input, noise_seed.map(|k| derive_seed(k, i as u64)))?;
        let mut image = tensor_to_images::<T, f32>(&out)?.remove(0);
        image.quantize_8bit();
        let id = format!("{REFINED_PREFIX}{}", s.id);
        samples.push(LabeledSample::new(id, Domain::Refined, image, s.labels.clone())?);
    }
    let mut refined = Dataset::new(format!("{}-refined", x.name), x.num_classes, samples)?;
    refined.class_names = x.class_names.clone();
    Ok(refined)
}

/// Strips the refinement prefix from an id.
pub fn source_id(id: &str) -> &str {
    id.strip_prefix(REFINED_PREFIX).unwrap_or(id)
}
