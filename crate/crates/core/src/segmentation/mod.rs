//! Downstream segmentation: network, training protocol with EMA weights and
//! mixed data sources, and mIoU evaluation.

mod metrics;
mod network;

pub use metrics::{iou_distribution, ConfusionMatrix, DistributionStats, EpochEval, IoUReport, TrackDistribution};
pub use network::{argmax_channels, pixel_cross_entropy, Segmenter, SegmenterArchitecture, SEGMENTER_LAYERS};

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use syn2real_tensor::{Adam, Graph, ParamStore, Scalar, Tensor};

use crate::checkpoint::{self, CheckpointMeta};
use crate::data::{images_to_tensor, Dataset, LabelMap};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, named_rng};

pub const SEGMENTER_KIND: &str = "segmenter";
pub const REPORT_FILE: &str = "report.json";
pub const DEFAULT_EMA_DECAY: f64 = 0.995;
const EVAL_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub base_channels: usize,
    pub epochs: usize,
    pub images_per_epoch: usize,
    pub batch: usize,
    pub lr: f64,
    pub ema_decay: f64,
    /// Probability that a mixed-source mini-batch is drawn from the real set.
    pub p_real: f64,
    /// Window of final epochs summarized in reports.
    pub last_k: usize,
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            epochs: 300,
            images_per_epoch: 1500,
            batch: 8,
            lr: 1e-3,
            ema_decay: DEFAULT_EMA_DECAY,
            p_real: 0.5,
            last_k: 50,
            seed: 0,
        }
    }
}

impl SegmenterConfig {
    pub fn desk() -> Self {
        Self {
            base_channels: 8,
            epochs: 60,
            images_per_epoch: 200,
            last_k: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.epochs == 0 || self.images_per_epoch == 0 || self.batch == 0 {
            return Err(Error::Config("segmenter channels, epochs, images_per_epoch and batch must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.ema_decay) || !(0.0..=1.0).contains(&self.p_real) {
            return Err(Error::Config(format!(
                "invalid lr {}, ema_decay {} or p_real {}",
                self.lr, self.ema_decay, self.p_real
            )));
        }
        if self.last_k == 0 {
            return Err(Error::Config("last_k must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.images_per_epoch.div_ceil(self.batch)
    }
}

/// `ema <- decay * ema + (1 - decay) * params`, elementwise.
pub fn ema_update<T: Scalar>(ema: &mut ParamStore<T>, params: &ParamStore<T>, decay: f64) -> Result<()> {
    ema.check_compatible(params)?;
    let d = T::lit(decay);
    let rest = T::lit(1.0 - decay);
    for (e, p) in ema.tensors_mut().iter_mut().zip(params.tensors()) {
        for (ev, &pv) in e.data_mut().iter_mut().zip(p.data()) {
            *ev = d * *ev + rest * pv;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixChoice {
    Real,
    Refined,
}

/// Chooses the dataset of one mini-batch: real with probability `p_real`.
pub fn mixed_batch_source(real: &Dataset, refined: &Dataset, p_real: f64, rng: &mut impl Rng) -> Result<MixChoice> {
    if real.is_empty() || refined.is_empty() {
        return Err(Error::Data("mixed training needs two non-empty datasets".into()));
    }
    if !(0.0..=1.0).contains(&p_real) {
        return Err(Error::Config(format!("p_real {p_real} outside [0, 1]")));
    }
    Ok(if rng.gen_bool(p_real) { MixChoice::Real } else { MixChoice::Refined })
}

/// Where training mini-batches come from.
#[derive(Clone, Copy)]
pub enum TrainSource<'a> {
    Single(&'a Dataset),
    Mixed { real: &'a Dataset, refined: &'a Dataset, p_real: f64 },
}

impl TrainSource<'_> {
    fn datasets(&self) -> Vec<&Dataset> {
        match self {
            TrainSource::Single(d) => vec![d],
            TrainSource::Mixed { real, refined, .. } => vec![real, refined],
        }
    }
}

pub struct SegmenterState<T: Scalar> {
    pub config: SegmenterConfig,
    pub network: Segmenter<T>,
    pub ema: ParamStore<T>,
    pub history: Vec<EpochEval>,
}

impl<T: Scalar> SegmenterState<T> {
    pub fn new(config: SegmenterConfig, num_classes: usize) -> Result<Self> {
        config.validate()?;
        let arch = SegmenterArchitecture {
            base_channels: config.base_channels,
            num_classes,
        };
        let network = Segmenter::new(arch, derive_seed(config.seed, 20))?;
        let ema = network.params.clone();
        Ok(Self {
            config,
            network,
            ema,
            history: Vec::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.network.arch.num_classes
    }

    pub fn distribution(&self) -> Result<TrackDistribution> {
        iou_distribution(&self.history, self.config.last_k)
    }

    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        let meta = CheckpointMeta::new(
            SEGMENTER_KIND,
            serde_json::to_value(&self.network.arch).unwrap(),
            self.history.len() as u64,
            config_hash,
            serde_json::json!({ "config": self.config, "history": self.history }),
        );
        checkpoint::save(dir, meta, &[("params", &self.network.params), ("ema", &self.ema)])
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointMeta)> {
        let meta = checkpoint::read_meta(dir)?;
        if meta.kind != SEGMENTER_KIND {
            return Err(Error::Format(format!("{} holds a {} checkpoint", dir.display(), meta.kind)));
        }
        let format = |e: serde_json::Error| Error::Format(format!("{}: {e}", dir.display()));
        let arch: SegmenterArchitecture = serde_json::from_value(meta.architecture.clone()).map_err(format)?;
        let config: SegmenterConfig = serde_json::from_value(meta.extra["config"].clone()).map_err(format)?;
        let history: Vec<EpochEval> = serde_json::from_value(meta.extra["history"].clone()).map_err(format)?;
        let mut state = Self::new(config, arch.num_classes)?;
        state.history = history;
        let SegmenterState { network, ema, .. } = &mut state;
        checkpoint::load(dir, &meta, &mut [("params", &mut network.params), ("ema", &mut *ema)])?;
        Ok((state, meta))
    }
}

/// Final-epoch reports of both tracks with their last-K statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub config_hash: String,
    pub epochs: usize,
    pub raw: IoUReport,
    pub ema: IoUReport,
    pub raw_series: Vec<f64>,
    pub ema_series: Vec<f64>,
}

impl SegmentationReport {
    pub fn from_state<T: Scalar>(state: &SegmenterState<T>, config_hash: &str) -> Result<Self> {
        let last = state
            .history
            .last()
            .ok_or_else(|| Error::Length("segmenter has no evaluated epochs".into()))?;
        let k = state.config.last_k.min(state.history.len());
        let dist = iou_distribution(&state.history, k)?;
        let mut raw = last.raw.clone();
        raw.last_k_stats = Some(dist.raw);
        let mut ema = last.ema.clone();
        ema.last_k_stats = Some(dist.ema);
        Ok(Self {
            config_hash: config_hash.into(),
            epochs: state.history.len(),
            raw,
            ema,
            raw_series: dist.raw_series,
            ema_series: dist.ema_series,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).unwrap();
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Global-confusion IoU of `store` (the raw weights or the EMA copy) on `test`.
pub fn evaluate_miou<T: Scalar>(network: &Segmenter<T>, store: &ParamStore<T>, test: &Dataset) -> Result<IoUReport> {
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let mut conf = ConfusionMatrix::new(network.arch.num_classes);
    let mut start = 0;
    while start < test.len() {
        let (h, w) = (test.samples[start].height(), test.samples[start].width());
        let mut end = start;
        while end < test.len() && end - start < EVAL_BATCH && test.samples[end].height() == h && test.samples[end].width() == w {
            end += 1;
        }
        let chunk = &test.samples[start..end];
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let pred = network.predict(store, &images_to_tensor(&images)?)?;
        for (i, s) in chunk.iter().enumerate() {
            let p = LabelMap::from_vec(h, w, pred[i * h * w..(i + 1) * h * w].to_vec())?;
            conf.accumulate_maps(&s.labels, &p)?;
        }
        start = end;
    }
    Ok(conf.report())
}

fn check_classes(source: &TrainSource, test: &Dataset) -> Result<usize> {
    let c = test.num_classes;
    for d in source.datasets() {
        if d.num_classes != c {
            return Err(Error::Config(format!(
                "training set `{}` has {} classes, test set `{}` has {c}",
                d.name, d.num_classes, test.name
            )));
        }
        if d.is_empty() {
            return Err(Error::Data(format!("training set `{}` is empty", d.name)));
        }
    }
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    Ok(c)
}

/// Trains from scratch. Each step draws a mini-batch with replacement (from
/// one dataset for mixed sources), takes one Adam step on the pixelwise
/// cross-entropy and updates the EMA copy; each epoch ends with an
/// evaluation of both weight sets on `test`.
pub fn train_segmenter<T: Scalar>(cfg: &SegmenterConfig, source: TrainSource, test: &Dataset) -> Result<SegmenterState<T>> {
    let num_classes = check_classes(&source, test)?;
    let mut state = SegmenterState::<T>::new(cfg.clone(), num_classes)?;
    let mut adam = Adam::new(&state.network.params, T::lit(cfg.lr), T::lit(0.9), T::lit(0.999));
    let mut rng = named_rng(cfg.seed, "segmenter-batches");
    let steps = cfg.steps_per_epoch();
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for step in 0..steps {
            let data = match source {
                TrainSource::Single(d) => d,
                TrainSource::Mixed { real, refined, p_real } => match mixed_batch_source(real, refined, p_real, &mut rng)? {
                    MixChoice::Real => real,
                    MixChoice::Refined => refined,
                },
            };
            let size = cfg.batch.min(cfg.images_per_epoch - step * cfg.batch);
            let picked: Vec<_> = (0..size).map(|_| &data.samples[rng.gen_range(0..data.len())]).collect();
            let images: Vec<_> = picked.iter().map(|s| &s.image).collect();
            let x: Tensor<T> = images_to_tensor(&images)?;
            let labels: Vec<u8> = picked.iter().flat_map(|s| s.labels.data().iter().copied()).collect();

            let mut g = Graph::new();
            let xv = g.input(x);
            let logits = state.network.logits(&mut g, &state.network.params, xv)?;
            let loss = pixel_cross_entropy(&mut g, logits, &labels)?;
            let value = g.value(loss).item().to_f64().unwrap();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("segmenter loss at epoch {epoch}, step {step}")));
            }
            loss_sum += value;
            let grads = g.backward(loss).for_store(&state.network.params);
            adam.step(&mut state.network.params, &grads);
            ema_update(&mut state.ema, &state.network.params, cfg.ema_decay)?;
        }
        let raw = evaluate_miou(&state.network, &state.network.params, test)?;
        let ema = evaluate_miou(&state.network, &state.ema, test)?;
        log::info!(
            "segmenter epoch {epoch}: loss {:.4} raw mIoU {:.4} ema mIoU {:.4}",
            loss_sum / steps as f64,
            raw.mean_iou,
            ema.mean_iou
        );
        state.history.push(EpochEval {
            epoch,
            train_loss: loss_sum / steps as f64,
            raw,
            ema,
        });
    }
    Ok(state)
}
