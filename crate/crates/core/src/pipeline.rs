//! Experiment manifests, hash-keyed stage caching, the four-arm pipeline and
//! single-axis sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use syn2real_tensor::Scalar;

use crate::analysis::{analyze_triples, AnalysisConfig, GapMetrics, TripleAnalysis};
use crate::data::{
    generate_domain, generate_matched_pair, load_dataset, presets, save_dataset_with_hash, CameraEffectConfig, Dataset,
    Domain, SceneConfig,
};
use crate::error::{Error, Result};
use crate::plot::distribution_svg;
use crate::rng::derive_seed;
use crate::segmentation::{
    train_segmenter, DistributionStats, SegmentationReport, SegmenterConfig, SegmenterState, TrainSource, REPORT_FILE,
};
use crate::translation::{
    load_translation, refine_dataset, train_cut, TrainingSummary, TranslationConfig, SUMMARY_FILE,
};

/// Marker written into a stage directory once the stage has completed.
pub const STAGE_FILE: &str = "stage.json";
pub const PIPELINE_SUMMARY: &str = "summary.json";
pub const SWEEP_REPORT: &str = "sweep.json";
pub const SWEEP_PLOT: &str = "sweep.svg";
const HASH_HEX_LEN: usize = 16;

/// SHA-256 of the canonical (key-sorted, compact) JSON form, truncated.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let canonical = serde_json::to_value(value).expect("configs serialize to JSON");
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    hex::encode(digest)[..HASH_HEX_LEN].to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub synthetic: usize,
    pub real: usize,
    pub test: usize,
    /// Id-matched synthetic/pseudo-real scenes for the feature analysis; 0 skips it.
    pub triples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub synthetic_scene: SceneConfig,
    pub real_scene: SceneConfig,
    pub camera: CameraEffectConfig,
    pub sizes: DatasetSizes,
    pub translation: TranslationConfig,
    pub segmenter: SegmenterConfig,
    pub analysis: AnalysisConfig,
    /// Segmenter arms to train, in order.
    #[serde(default = "all_arms")]
    pub arms: Vec<Arm>,
    /// Overrides the seeds of every sub-config.
    pub seed: u64,
    pub output_root: PathBuf,
}

fn all_arms() -> Vec<Arm> {
    Arm::ALL.to_vec()
}

impl ExperimentManifest {
    /// 64² frames with four classes and the desk training schedules.
    pub fn desk(output_root: impl Into<PathBuf>) -> Self {
        let (size, classes) = (64, 4);
        Self {
            synthetic_scene: presets::synthetic_scene(size, classes),
            real_scene: presets::pseudo_real_scene(size, classes),
            camera: presets::pseudo_real_camera(),
            sizes: DatasetSizes {
                synthetic: 200,
                real: 200,
                test: 40,
                triples: 60,
            },
            translation: TranslationConfig::desk(),
            segmenter: SegmenterConfig::desk(),
            analysis: AnalysisConfig::default(),
            arms: all_arms(),
            seed: 0,
            output_root: output_root.into(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).unwrap();
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Copy with the global seed pushed into every sub-config.
    pub fn resolved(&self) -> Self {
        let mut m = self.clone();
        m.translation.seed = self.seed;
        m.segmenter.seed = self.seed;
        m.analysis.tsne.seed = self.seed;
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic_scene.validate()?;
        self.real_scene.validate()?;
        if self.synthetic_scene.num_classes != self.real_scene.num_classes {
            return Err(Error::Config("synthetic and pseudo-real scenes disagree on the class count".into()));
        }
        if self.synthetic_scene.image_size != self.real_scene.image_size {
            return Err(Error::Config("synthetic and pseudo-real scenes disagree on the frame size".into()));
        }
        let s = &self.sizes;
        if s.synthetic == 0 || s.real == 0 || s.test == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        self.translation.validate()?;
        self.segmenter.validate()?;
        if self.arms.is_empty() || (1..self.arms.len()).any(|i| self.arms[..i].contains(&self.arms[i])) {
            return Err(Error::Config(format!("arms {:?} must be non-empty and distinct", self.arms)));
        }
        if s.triples > 0 {
            self.analysis.tsne.validate()?;
            if !self.arms.contains(&Arm::Real) {
                return Err(Error::Config("the feature analysis reads the real arm; add it or set sizes.triples to 0".into()));
            }
        }
        Ok(())
    }

    /// Hash of the whole resolved manifest, output location excluded.
    pub fn hash(&self) -> String {
        let mut m = self.resolved();
        m.output_root = PathBuf::new();
        config_hash(&m)
    }

    pub fn data_hash(&self) -> String {
        config_hash(&(
            "data",
            &self.synthetic_scene,
            &self.real_scene,
            &self.camera,
            &self.sizes,
            self.seed,
        ))
    }

    fn translation_hash(&self) -> String {
        config_hash(&("translation", self.data_hash(), &self.resolved().translation))
    }

    fn refine_hash(&self) -> String {
        config_hash(&("refine", self.translation_hash()))
    }

    fn arm_hash(&self, arm: Arm) -> String {
        let upstream = match arm {
            Arm::Synthetic | Arm::Real => self.data_hash(),
            Arm::Refined | Arm::Mixed => self.refine_hash(),
        };
        config_hash(&("segment", arm.as_str(), upstream, &self.resolved().segmenter))
    }

    fn analysis_hash(&self) -> String {
        config_hash(&(
            "analysis",
            self.refine_hash(),
            self.arm_hash(Arm::Real),
            &self.resolved().analysis,
        ))
    }
}

/// Segmenter training arms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Synthetic,
    Refined,
    Real,
    /// Real and refined mini-batches drawn with probability `p_real`.
    Mixed,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Synthetic, Arm::Refined, Arm::Real, Arm::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Synthetic => "synthetic",
            Arm::Refined => "refined",
            Arm::Real => "real",
            Arm::Mixed => "mixed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMarker {
    pub stage: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config_hash: String,
    pub path: PathBuf,
    /// False when a cached output with a matching hash was reused.
    pub executed: bool,
}

pub fn read_marker(dir: &Path) -> Result<Option<StageMarker>> {
    let path = dir.join(STAGE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Runs stages into fixed directories, skipping any whose marker carries the
/// expected hash. A marker with another hash is refused unless `force` is set,
/// in which case the stage is rerun in place.
pub struct StageRunner {
    pub force: bool,
    pub records: Vec<StageRecord>,
}

impl StageRunner {
    pub fn new(force: bool) -> Self {
        Self {
            force,
            records: Vec::new(),
        }
    }

    pub fn run(&mut self, stage: &str, dir: &Path, hash: &str, exec: impl FnOnce(&Path) -> Result<()>) -> Result<bool> {
        let wrap = |e: Error| Error::Stage {
            stage: stage.to_string(),
            source: Box::new(e),
        };
        let marker = read_marker(dir).map_err(wrap)?;
        let cached = match marker {
            Some(m) if m.config_hash == hash => true,
            Some(m) if !self.force => {
                return Err(wrap(Error::Config(format!(
                    "{} holds outputs for hash {} but the manifest gives {hash}; rerun with --force to replace them",
                    dir.display(),
                    m.config_hash
                ))))
            }
            _ => false,
        };
        if !cached {
            log::info!("stage {stage}: running into {}", dir.display());
            if dir.exists() {
                fs::remove_dir_all(dir).map_err(|e| wrap(Error::io(dir, e)))?;
            }
            fs::create_dir_all(dir).map_err(|e| wrap(Error::io(dir, e)))?;
            exec(dir).map_err(wrap)?;
            let marker = StageMarker {
                stage: stage.to_string(),
                config_hash: hash.to_string(),
            };
            let path = dir.join(STAGE_FILE);
            fs::write(&path, serde_json::to_string_pretty(&marker).unwrap()).map_err(|e| wrap(Error::io(&path, e)))?;
        } else {
            log::info!("stage {stage}: cached ({hash})");
        }
        self.records.push(StageRecord {
            stage: stage.to_string(),
            config_hash: hash.to_string(),
            path: dir.to_path_buf(),
            executed: !cached,
        });
        Ok(!cached)
    }

    pub fn executed(&self) -> Vec<&str> {
        self.records.iter().filter(|r| r.executed).map(|r| r.stage.as_str()).collect()
    }
}

pub struct Datasets {
    pub synthetic: Dataset,
    pub real: Dataset,
    pub test: Dataset,
    pub triples_synthetic: Option<Dataset>,
    pub triples_real: Option<Dataset>,
}

/// Every dataset the manifest describes, seeded from its global seed.
pub fn generate_datasets(m: &ExperimentManifest) -> Result<Datasets> {
    let s = &m.sizes;
    let synthetic = generate_domain(&m.synthetic_scene, None, Domain::Synthetic, s.synthetic, derive_seed(m.seed, 1))?;
    let real = generate_domain(&m.real_scene, Some(&m.camera), Domain::PseudoReal, s.real, derive_seed(m.seed, 2))?;
    let test = generate_domain(&m.real_scene, Some(&m.camera), Domain::PseudoReal, s.test, derive_seed(m.seed, 3))?;
    let (triples_synthetic, triples_real) = if s.triples > 0 {
        let (a, b) = generate_matched_pair(&m.synthetic_scene, &m.real_scene, &m.camera, s.triples, derive_seed(m.seed, 4))?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    Ok(Datasets {
        synthetic,
        real,
        test,
        triples_synthetic,
        triples_real,
    })
}

impl Datasets {
    /// Writes `synthetic/`, `real/`, `test/` and, when present,
    /// `triples_synthetic/` and `triples_real/` under `dir`.
    pub fn save(&self, dir: &Path, hash: &str) -> Result<()> {
        save_dataset_with_hash(&self.synthetic, &dir.join("synthetic"), Some(hash))?;
        save_dataset_with_hash(&self.real, &dir.join("real"), Some(hash))?;
        save_dataset_with_hash(&self.test, &dir.join("test"), Some(hash))?;
        if let (Some(a), Some(b)) = (&self.triples_synthetic, &self.triples_real) {
            save_dataset_with_hash(a, &dir.join("triples_synthetic"), Some(hash))?;
            save_dataset_with_hash(b, &dir.join("triples_real"), Some(hash))?;
        }
        Ok(())
    }
}

/// Directory layout of one experiment. Sweeps share `root` stages and give
/// each value its own `arm_root` for translation-dependent stages.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
    pub arm_root: PathBuf,
}

impl Layout {
    pub fn single(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            arm_root: root.to_path_buf(),
        }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn translation(&self) -> PathBuf {
        self.arm_root.join("translation")
    }

    pub fn refined(&self) -> PathBuf {
        self.arm_root.join("refined")
    }

    pub fn segmentation(&self, arm: Arm) -> PathBuf {
        match arm {
            Arm::Synthetic | Arm::Real => self.root.join("segmentation").join(arm.as_str()),
            Arm::Refined | Arm::Mixed => self.arm_root.join("segmentation").join(arm.as_str()),
        }
    }

    pub fn analysis(&self) -> PathBuf {
        self.arm_root.join("analysis")
    }
}

fn load_checked(dir: &Path, hash: &str) -> Result<Dataset> {
    let ds = load_dataset(dir)?;
    let manifest = crate::data::read_manifest(dir)?;
    if manifest.config_hash.as_deref() != Some(hash) {
        return Err(Error::Format(format!("{} was produced by another configuration", dir.display())));
    }
    Ok(ds)
}

fn data_stage(runner: &mut StageRunner, m: &ExperimentManifest, layout: &Layout) -> Result<Datasets> {
    let hash = m.data_hash();
    let dir = layout.data();
    runner.run("gen-data", &dir, &hash, |dir| {
        generate_datasets(m)?.save(dir, &hash)
    })?;
    let stage = |e| Error::Stage {
        stage: "gen-data".into(),
        source: Box::new(e),
    };
    let load = |name: &str| load_checked(&dir.join(name), &hash).map_err(stage);
    let triples = m.sizes.triples > 0;
    Ok(Datasets {
        synthetic: load("synthetic")?,
        real: load("real")?,
        test: load("test")?,
        triples_synthetic: if triples { Some(load("triples_synthetic")?) } else { None },
        triples_real: if triples { Some(load("triples_real")?) } else { None },
    })
}

/// Per-arm translation outcome carried into summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationOutcome {
    pub config_hash: String,
    pub collapse_epochs: Vec<usize>,
    pub mean_epoch_seconds: f64,
    pub final_nce_x: f64,
}

impl TranslationOutcome {
    fn from_summary(hash: &str, s: &TrainingSummary) -> Self {
        let n = s.epochs.len().max(1) as f64;
        Self {
            config_hash: hash.to_string(),
            collapse_epochs: s.collapse_epochs.clone(),
            mean_epoch_seconds: s.epochs.iter().map(|e| e.timing.wall_seconds).sum::<f64>() / n,
            final_nce_x: s.epochs.last().map_or(f64::NAN, |e| e.mean.nce_x),
        }
    }
}

fn translation_stage<T: Scalar>(
    runner: &mut StageRunner,
    m: &ExperimentManifest,
    layout: &Layout,
    data: &Datasets,
) -> Result<TranslationOutcome> {
    let hash = m.translation_hash();
    let dir = layout.translation();
    let cfg = m.resolved().translation;
    runner.run("train-cut", &dir, &hash, |dir| {
        train_cut::<T>(&cfg, &data.synthetic, &data.real, Some(dir), &hash).map(|_| ())
    })?;
    let path = dir.join(SUMMARY_FILE);
    let read = || -> Result<TrainingSummary> {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    };
    let summary = read().map_err(|e| Error::Stage {
        stage: "train-cut".into(),
        source: Box::new(e),
    })?;
    Ok(TranslationOutcome::from_summary(&hash, &summary))
}

struct Refined {
    frames: Dataset,
    triples: Option<Dataset>,
}

fn refine_stage<T: Scalar>(runner: &mut StageRunner, m: &ExperimentManifest, layout: &Layout, data: &Datasets) -> Result<Refined> {
    let hash = m.refine_hash();
    let dir = layout.refined();
    let ckpt = layout.translation();
    runner.run("refine", &dir, &hash, |dir| {
        let model = load_translation::<T>(&ckpt)?;
        save_dataset_with_hash(&refine_dataset(&model, &data.synthetic, None)?, &dir.join("frames"), Some(&hash))?;
        if let Some(t) = &data.triples_synthetic {
            save_dataset_with_hash(&refine_dataset(&model, t, None)?, &dir.join("triples"), Some(&hash))?;
        }
        Ok(())
    })?;
    let stage = |e| Error::Stage {
        stage: "refine".into(),
        source: Box::new(e),
    };
    Ok(Refined {
        frames: load_checked(&dir.join("frames"), &hash).map_err(stage)?,
        triples: if data.triples_synthetic.is_some() {
            Some(load_checked(&dir.join("triples"), &hash).map_err(stage)?)
        } else {
            None
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub config_hash: String,
    pub report: PathBuf,
    pub ema: DistributionStats,
    pub raw: DistributionStats,
    pub final_ema_miou: f64,
}

fn segmentation_stage<T: Scalar>(
    runner: &mut StageRunner,
    m: &ExperimentManifest,
    layout: &Layout,
    arm: Arm,
    data: &Datasets,
    refined: Option<&Dataset>,
) -> Result<ArmSummary> {
    let hash = m.arm_hash(arm);
    let dir = layout.segmentation(arm);
    let stage_name = format!("train-seg/{}", arm.as_str());
    let cfg = m.resolved().segmenter;
    runner.run(&stage_name, &dir, &hash, |dir| {
        let missing = || Error::Config(format!("arm {} needs refined frames", arm.as_str()));
        let source = match arm {
            Arm::Synthetic => TrainSource::Single(&data.synthetic),
            Arm::Real => TrainSource::Single(&data.real),
            Arm::Refined => TrainSource::Single(refined.ok_or_else(missing)?),
            Arm::Mixed => TrainSource::Mixed {
                real: &data.real,
                refined: refined.ok_or_else(missing)?,
                p_real: cfg.p_real,
            },
        };
        let state = train_segmenter::<T>(&cfg, source, &data.test)?;
        state.save(dir, &hash)?;
        SegmentationReport::from_state(&state, &hash)?.write(&dir.join(REPORT_FILE))
    })?;
    let report_path = dir.join(REPORT_FILE);
    let report = SegmentationReport::read(&report_path)
        .and_then(|r| {
            if r.config_hash == hash {
                Ok(r)
            } else {
                Err(Error::Format(format!("{} carries hash {}", report_path.display(), r.config_hash)))
            }
        })
        .map_err(|e| Error::Stage {
            stage: stage_name.clone(),
            source: Box::new(e),
        })?;
    let stats = |r: &crate::segmentation::IoUReport| {
        r.last_k_stats.clone().ok_or_else(|| Error::Stage {
            stage: stage_name.clone(),
            source: Box::new(Error::Format(format!("{} lacks last-K statistics", report_path.display()))),
        })
    };
    Ok(ArmSummary {
        arm,
        config_hash: hash,
        report: report_path.clone(),
        ema: stats(&report.ema)?,
        raw: stats(&report.raw)?,
        final_ema_miou: report.ema.mean_iou,
    })
}

fn analysis_stage<T: Scalar>(
    runner: &mut StageRunner,
    m: &ExperimentManifest,
    layout: &Layout,
    data: &Datasets,
    refined: &Refined,
) -> Result<Option<GapMetrics>> {
    let (Some(syn), Some(real), Some(ref_triples)) = (&data.triples_synthetic, &data.triples_real, &refined.triples) else {
        return Ok(None);
    };
    let hash = m.analysis_hash();
    let dir = layout.analysis();
    let seg_dir = layout.segmentation(Arm::Real);
    let cfg = m.resolved().analysis;
    runner.run("analyze", &dir, &hash, |dir| {
        let (state, _) = SegmenterState::<T>::load(&seg_dir)?;
        let out = analyze_triples(syn, ref_triples, real, &state.network, &state.ema, &cfg)?;
        write_analysis(&out, &hash, &dir.join("emb.json"), Some(&dir.join("emb.svg")))
    })?;
    let path = dir.join("emb.json");
    let read = || -> Result<GapMetrics> {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        serde_json::from_value(v["gap"].clone()).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    };
    read().map(Some).map_err(|e| Error::Stage {
        stage: "analyze".into(),
        source: Box::new(e),
    })
}

/// Writes an analysis with its configuration hash alongside.
pub fn write_analysis(out: &TripleAnalysis, hash: &str, json: &Path, svg: Option<&Path>) -> Result<()> {
    let mut v = serde_json::to_value(out).unwrap();
    v["config_hash"] = serde_json::Value::String(hash.to_string());
    fs::write(json, serde_json::to_string_pretty(&v).unwrap()).map_err(|e| Error::io(json, e))?;
    if let Some(path) = svg {
        fs::write(path, out.svg()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub manifest_hash: String,
    /// Track the arm comparison is based on.
    pub compared_track: String,
    pub translation: TranslationOutcome,
    pub arms: Vec<ArmSummary>,
    pub analysis: Option<GapMetrics>,
    pub stages: Vec<StageRecord>,
}

impl PipelineSummary {
    pub fn arm(&self, arm: Arm) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Runs every stage under `manifest.output_root` and writes `summary.json`.
pub fn run_pipeline<T: Scalar>(manifest: &ExperimentManifest, force: bool) -> Result<PipelineSummary> {
    manifest.validate()?;
    let m = manifest.resolved();
    let root = &m.output_root;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    m.write(&root.join("manifest.json"))?;
    let layout = Layout::single(root);
    let mut runner = StageRunner::new(force);
    let data = data_stage(&mut runner, &m, &layout)?;
    let translation = translation_stage::<T>(&mut runner, &m, &layout, &data)?;
    let refined = refine_stage::<T>(&mut runner, &m, &layout, &data)?;
    let mut arms = Vec::new();
    for &arm in &m.arms {
        arms.push(segmentation_stage::<T>(&mut runner, &m, &layout, arm, &data, Some(&refined.frames))?);
    }
    let analysis = analysis_stage::<T>(&mut runner, &m, &layout, &data, &refined)?;
    let summary = PipelineSummary {
        manifest_hash: m.hash(),
        compared_track: "ema".into(),
        translation,
        arms,
        analysis,
        stages: runner.records,
    };
    let path = root.join(PIPELINE_SUMMARY);
    fs::write(&path, serde_json::to_string_pretty(&summary).unwrap()).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PatchSize,
    LambdaNce,
    NNoise,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::PatchSize => "patch_size",
            SweepAxis::LambdaNce => "lambda_nce",
            SweepAxis::NNoise => "n_noise",
        }
    }

    pub fn apply(self, cfg: &mut TranslationConfig, value: f64) -> Result<()> {
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{} takes non-negative integers, got {value}", self.as_str())))
            }
        };
        match self {
            SweepAxis::PatchSize => cfg.patch_size = count()?,
            SweepAxis::LambdaNce => cfg.lambda_nce = value,
            SweepAxis::NNoise => cfg.n_noise = count()?,
        }
        cfg.validate()
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch_size" | "patch" => Ok(SweepAxis::PatchSize),
            "lambda_nce" | "lambda" => Ok(SweepAxis::LambdaNce),
            "n_noise" | "noise" => Ok(SweepAxis::NNoise),
            other => Err(Error::Config(format!("unknown sweep axis `{other}` (patch_size, lambda_nce, n_noise)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepArm {
    pub value: f64,
    pub label: String,
    pub translation: TranslationOutcome,
    pub collapsed: bool,
    pub segmentation: ArmSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub manifest_hash: String,
    pub axis: SweepAxis,
    pub arms: Vec<SweepArm>,
    /// Synthetic-only and real-only arms that flank the sweep in the figure.
    pub references: Vec<ArmSummary>,
    pub plot: PathBuf,
    pub stages: Vec<StageRecord>,
}

fn value_label(axis: SweepAxis, v: f64) -> String {
    format!("{}={v}", axis.as_str())
}

/// One refined-arm pipeline per value, sharing data generation and the two
/// reference arms. Writes `sweep.json` and `sweep.svg` under the output root.
pub fn sweep<T: Scalar>(manifest: &ExperimentManifest, axis: SweepAxis, values: &[f64], force: bool) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config(format!("sweep over {} needs at least one value", axis.as_str())));
    }
    let mut variants = Vec::with_capacity(values.len());
    for &v in values {
        let mut m = manifest.clone();
        axis.apply(&mut m.translation, v)?;
        m.sizes.triples = 0;
        m.validate()?;
        variants.push((v, m.resolved()));
    }
    let base = {
        let mut m = manifest.resolved();
        m.sizes.triples = 0;
        m
    };
    let root = base.output_root.clone();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut runner = StageRunner::new(force);
    let shared = Layout::single(&root);
    let data = data_stage(&mut runner, &base, &shared)?;
    let mut references = Vec::new();
    for arm in [Arm::Synthetic, Arm::Real] {
        references.push(segmentation_stage::<T>(&mut runner, &base, &shared, arm, &data, None)?);
    }
    let mut arms = Vec::new();
    for (v, m) in &variants {
        let label = value_label(axis, *v);
        let layout = Layout {
            root: root.clone(),
            arm_root: root.join("sweep").join(label.replace('=', "-")),
        };
        let translation = translation_stage::<T>(&mut runner, m, &layout, &data)?;
        let refined = refine_stage::<T>(&mut runner, m, &layout, &data)?;
        let segmentation = segmentation_stage::<T>(&mut runner, m, &layout, Arm::Refined, &data, Some(&refined.frames))?;
        arms.push(SweepArm {
            value: *v,
            label,
            collapsed: !translation.collapse_epochs.is_empty(),
            translation,
            segmentation,
        });
    }
    let mut series = vec![("synthetic".to_string(), series_of(&references[0])?)];
    for a in &arms {
        series.push((a.label.clone(), series_of(&a.segmentation)?));
    }
    series.push(("real".to_string(), series_of(&references[1])?));
    let plot = root.join(SWEEP_PLOT);
    let svg = distribution_svg(&series, &format!("EMA mIoU over the last epochs, {} sweep", axis.as_str()));
    fs::write(&plot, svg).map_err(|e| Error::io(&plot, e))?;
    let report = SweepReport {
        manifest_hash: base.hash(),
        axis,
        arms,
        references,
        plot,
        stages: runner.records,
    };
    let path = root.join(SWEEP_REPORT);
    fs::write(&path, serde_json::to_string_pretty(&report).unwrap()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

fn series_of(arm: &ArmSummary) -> Result<Vec<f64>> {
    Ok(SegmentationReport::read(&arm.report)?.ema_series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_canonical_and_scoped() {
        let a = ExperimentManifest::desk("/a");
        let b = ExperimentManifest::desk("/b");
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), HASH_HEX_LEN);
        let mut c = a.clone();
        c.translation.lambda_nce = 2.0;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.data_hash(), c.data_hash());
        assert_eq!(a.arm_hash(Arm::Real), c.arm_hash(Arm::Real));
        assert_ne!(a.arm_hash(Arm::Refined), c.arm_hash(Arm::Refined));
        let mut d = a.clone();
        d.seed = 1;
        assert_ne!(a.data_hash(), d.data_hash());
        let mut e = a.clone();
        e.translation.seed = 99;
        assert_eq!(a.translation_hash(), e.translation_hash(), "sub-config seeds are overridden");
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let m = ExperimentManifest::desk(dir.path());
        let path = dir.path().join("m.json");
        m.write(&path).unwrap();
        assert_eq!(ExperimentManifest::read(&path).unwrap(), m);
        let mut bad = m.clone();
        bad.sizes.test = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = m.clone();
        bad.real_scene = presets::pseudo_real_scene(64, 3);
        assert!(matches!(bad.validate(), Err(Error::Config(_))));

        let mut json: serde_json::Value = serde_json::to_value(&m).unwrap();
        json.as_object_mut().unwrap().remove("arms");
        assert_eq!(serde_json::from_value::<ExperimentManifest>(json).unwrap().arms, Arm::ALL);
        for arms in [vec![], vec![Arm::Real, Arm::Real], vec![Arm::Synthetic, Arm::Refined]] {
            let bad = ExperimentManifest { arms, ..m.clone() };
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        let no_analysis = ExperimentManifest {
            arms: vec![Arm::Synthetic, Arm::Refined],
            sizes: DatasetSizes { triples: 0, ..m.sizes },
            ..m
        };
        no_analysis.validate().unwrap();
    }

    #[test]
    fn stage_runner_caching() {
        let dir = tempfile::tempdir().unwrap();
        let stage = dir.path().join("s");
        let mut runner = StageRunner::new(false);
        let write = |d: &Path| fs::write(d.join("x"), "1").map_err(|e| Error::io(d, e));
        assert!(runner.run("s", &stage, "h1", write).unwrap());
        assert!(!runner.run("s", &stage, "h1", |_| panic!("cached stage reran")).unwrap());
        let err = runner.run("s", &stage, "h2", write).unwrap_err();
        assert!(matches!(&err, Error::Stage { stage, .. } if stage == "s"));
        assert!(matches!(err.root(), Error::Config(_)));
        let mut forced = StageRunner::new(true);
        assert!(forced.run("s", &stage, "h2", write).unwrap());
        let failing = forced.run("t", &dir.path().join("t"), "h", |_| Err(Error::Data("boom".into())));
        assert!(matches!(failing, Err(Error::Stage { stage, .. }) if stage == "t"));
        assert!(read_marker(&dir.path().join("t")).unwrap().is_none());
    }

    #[test]
    fn sweep_axis_values() {
        let mut cfg = TranslationConfig::desk();
        SweepAxis::PatchSize.apply(&mut cfg, 48.0).unwrap();
        assert_eq!(cfg.patch_size, 48);
        assert!(SweepAxis::NNoise.apply(&mut cfg, 1.5).is_err());
        assert!(SweepAxis::LambdaNce.apply(&mut cfg, -1.0).is_err());
        assert_eq!("lambda_nce".parse::<SweepAxis>().unwrap(), SweepAxis::LambdaNce);
        assert!("depth".parse::<SweepAxis>().is_err());
        let dir = tempfile::tempdir().unwrap();
        let m = ExperimentManifest::desk(dir.path());
        assert!(matches!(sweep::<f32>(&m, SweepAxis::LambdaNce, &[], false), Err(Error::Config(_))));
    }
}
