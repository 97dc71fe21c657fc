use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use syn2real::analysis::{analyze_triples, AnalysisConfig};
use syn2real::data::{load_dataset, read_manifest, save_dataset_with_hash, Dataset};
use syn2real::pipeline::{
    config_hash, generate_datasets, run_pipeline, sweep, write_analysis, ExperimentManifest, StageRunner, SweepAxis,
};
use syn2real::plot::distribution_svg;
use syn2real::segmentation::{
    evaluate_miou, train_segmenter, SegmentationReport, SegmenterConfig, SegmenterState, TrainSource, REPORT_FILE,
};
use syn2real::translation::{checkpoint_dir, load_translation, refine_dataset, train_cut, TranslationConfig};
use syn2real::{checkpoint, Error, Result};

#[derive(Parser)]
#[command(name = "syn2real", version, about = "Synthetic-to-real translation and segmentation experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Overrides the seed of the configuration in use.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for commands writing one file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace outputs that were produced by a different configuration.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic, pseudo-real, test and triple datasets of a manifest.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the translation model on unpaired source and target sets.
    TrainCut {
        /// Translation config JSON; the desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
    },
    /// Translate every frame of a dataset at full resolution.
    Refine {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        noise_seed: Option<u64>,
    },
    /// Train a segmenter; `--train real,refined` mixes two sets with `--p-real`.
    TrainSeg {
        #[arg(long, value_delimiter = ',', num_args = 1..=2)]
        train: Vec<PathBuf>,
        #[arg(long)]
        p_real: Option<f64>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        per_epoch: Option<usize>,
        /// Segmenter config JSON; the desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate both weight tracks of a segmenter checkpoint on a test set.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Embed pooled segmenter features of matched synthetic, refined and real frames.
    Analyze {
        #[arg(long)]
        syn: PathBuf,
        #[arg(long)]
        refined: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1)]
        layer: usize,
        /// t-SNE iterations.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        highlight: Option<String>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Run every stage of a manifest.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rerun the translation-dependent stages for each value of one axis.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// patch_size, lambda_nce or n_noise.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
    /// Distribution figure of the EMA series of several reports.
    Plot {
        #[arg(long, num_args = 1..)]
        reports: Vec<PathBuf>,
        /// Arm labels; the report's parent directory name by default.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long, default_value = "EMA mIoU over the last epochs")]
        title: String,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn require_out(g: &Global, what: &str) -> Result<PathBuf> {
    g.out
        .clone()
        .ok_or_else(|| Error::Config(format!("{what} needs --out")))
}

fn dataset_hash(dir: &Path) -> Result<Option<String>> {
    Ok(read_manifest(dir)?.config_hash)
}

/// Refuses to overwrite a JSON artifact carrying another hash unless forced.
fn guard_file(path: &Path, hash: &str, force: bool) -> Result<()> {
    if force || !path.exists() {
        return Ok(());
    }
    let existing: serde_json::Value = match fs::read_to_string(path).ok().and_then(|t| serde_json::from_str(&t).ok()) {
        Some(v) => v,
        None => return Ok(()),
    };
    match existing.get("config_hash").and_then(|h| h.as_str()) {
        Some(h) if h != hash => Err(Error::Config(format!(
            "{} was produced with hash {h}; rerun with --force to replace it",
            path.display()
        ))),
        _ => Ok(()),
    }
}

fn load_manifest(config: &Option<PathBuf>, g: &Global) -> Result<ExperimentManifest> {
    let mut m = match config {
        Some(path) => ExperimentManifest::read(path)?,
        None => ExperimentManifest::desk("experiment"),
    };
    if let Some(seed) = g.seed {
        m.seed = seed;
    }
    if let Some(out) = &g.out {
        m.output_root = out.clone();
    }
    m.validate()?;
    Ok(m)
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::GenData { config } => {
            let m = load_manifest(&config, g)?;
            let out = g.out.clone().unwrap_or_else(|| m.output_root.join("data"));
            let hash = m.data_hash();
            StageRunner::new(g.force).run("gen-data", &out, &hash, |dir| generate_datasets(&m)?.save(dir, &hash))?;
            println!("{}", out.display());
        }
        Command::TrainCut { config, x, y } => {
            let mut cfg: TranslationConfig = match &config {
                Some(p) => read_json(p)?,
                None => TranslationConfig::desk(),
            };
            if let Some(seed) = g.seed {
                cfg.seed = seed;
            }
            cfg.validate()?;
            let out = require_out(g, "train-cut")?;
            let xs = load_dataset(&x)?;
            let ys = load_dataset(&y)?;
            let hash = config_hash(&("train-cut", &cfg, dataset_hash(&x)?, dataset_hash(&y)?));
            StageRunner::new(g.force).run("train-cut", &out, &hash, |dir| {
                let trained = train_cut::<f32>(&cfg, &xs, &ys, Some(dir), &hash)?;
                if trained.summary.collapsed() {
                    log::warn!("probe outputs collapsed after epochs {:?}", trained.summary.collapse_epochs);
                }
                Ok(())
            })?;
            println!("{}", out.display());
        }
        Command::Refine { ckpt, input, noise_seed } => {
            let out = require_out(g, "refine")?;
            let meta = checkpoint::read_meta(&checkpoint_dir(&ckpt))?;
            let hash = config_hash(&("refine", &meta.config_hash, dataset_hash(&input)?, noise_seed));
            StageRunner::new(g.force).run("refine", &out, &hash, |dir| {
                let model = load_translation::<f32>(&ckpt)?;
                let refined = refine_dataset(&model, &load_dataset(&input)?, noise_seed)?;
                save_dataset_with_hash(&refined, dir, Some(&hash))
            })?;
            println!("{}", out.display());
        }
        Command::TrainSeg {
            train,
            p_real,
            test,
            epochs,
            per_epoch,
            config,
        } => {
            let mut cfg: SegmenterConfig = match &config {
                Some(p) => read_json(p)?,
                None => SegmenterConfig::desk(),
            };
            if let Some(seed) = g.seed {
                cfg.seed = seed;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
                cfg.last_k = cfg.last_k.min(e);
            }
            if let Some(n) = per_epoch {
                cfg.images_per_epoch = n;
            }
            if let Some(p) = p_real {
                cfg.p_real = p;
            }
            cfg.validate()?;
            let out = require_out(g, "train-seg")?;
            let sets = train.iter().map(|d| load_dataset(d)).collect::<Result<Vec<Dataset>>>()?;
            let test_set = load_dataset(&test)?;
            let input_hashes = train.iter().chain([&test]).map(|d| dataset_hash(d)).collect::<Result<Vec<_>>>()?;
            let hash = config_hash(&("train-seg", &cfg, input_hashes));
            StageRunner::new(g.force).run("train-seg", &out, &hash, |dir| {
                let source = match sets.as_slice() {
                    [one] => TrainSource::Single(one),
                    [real, refined] => TrainSource::Mixed {
                        real,
                        refined,
                        p_real: cfg.p_real,
                    },
                    _ => return Err(Error::Config("--train takes one or two directories".into())),
                };
                let state = train_segmenter::<f32>(&cfg, source, &test_set)?;
                state.save(dir, &hash)?;
                SegmentationReport::from_state(&state, &hash)?.write(&dir.join(REPORT_FILE))
            })?;
            let report = SegmentationReport::read(&out.join(REPORT_FILE))?;
            let stats = report.ema.last_k_stats.as_ref();
            println!(
                "{}: ema mIoU {:.4} (last-{} mean {:.4}), raw mIoU {:.4}",
                out.display(),
                report.ema.mean_iou,
                stats.map_or(0, |s| s.k),
                stats.map_or(f64::NAN, |s| s.mean),
                report.raw.mean_iou
            );
        }
        Command::Eval { ckpt, test, report } => {
            let (state, meta) = SegmenterState::<f32>::load(&ckpt)?;
            let test_set = load_dataset(&test)?;
            let hash = config_hash(&("eval", &meta.config_hash, dataset_hash(&test)?));
            guard_file(&report, &hash, g.force)?;
            let mut out = SegmentationReport::from_state(&state, &hash)?;
            let raw_stats = out.raw.last_k_stats.take();
            let ema_stats = out.ema.last_k_stats.take();
            out.raw = evaluate_miou(&state.network, &state.network.params, &test_set)?;
            out.raw.last_k_stats = raw_stats;
            out.ema = evaluate_miou(&state.network, &state.ema, &test_set)?;
            out.ema.last_k_stats = ema_stats;
            if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            out.write(&report)?;
            println!("ema mIoU {:.4}, raw mIoU {:.4}", out.ema.mean_iou, out.raw.mean_iou);
        }
        Command::Analyze {
            syn,
            refined,
            real,
            ckpt,
            layer,
            iterations,
            highlight,
            plot,
        } => {
            let out = require_out(g, "analyze")?;
            let mut cfg = AnalysisConfig {
                layer,
                highlight,
                ..Default::default()
            };
            if let Some(it) = iterations {
                cfg.tsne.iterations = it;
            }
            if let Some(seed) = g.seed {
                cfg.tsne.seed = seed;
            }
            let (state, meta) = SegmenterState::<f32>::load(&ckpt)?;
            let inputs = [&syn, &refined, &real].map(|d| dataset_hash(d));
            let inputs = inputs.into_iter().collect::<Result<Vec<_>>>()?;
            let hash = config_hash(&("analyze", &cfg, &meta.config_hash, inputs));
            guard_file(&out, &hash, g.force)?;
            let result = analyze_triples(
                &load_dataset(&syn)?,
                &load_dataset(&refined)?,
                &load_dataset(&real)?,
                &state.network,
                &state.ema,
                &cfg,
            )?;
            write_analysis(&result, &hash, &out, plot.as_deref())?;
            println!(
                "nearest-real distance: synthetic {:.4}, refined {:.4}",
                result.gap.synthetic_to_real, result.gap.refined_to_real
            );
        }
        Command::Pipeline { config } => {
            let m = load_manifest(&config, g)?;
            let summary = run_pipeline::<f32>(&m, g.force)?;
            for a in &summary.arms {
                println!(
                    "{:10} ema {:.4} ± {:.4}   raw {:.4} ± {:.4}",
                    a.arm.as_str(),
                    a.ema.mean,
                    a.ema.std,
                    a.raw.mean,
                    a.raw.std
                );
            }
        }
        Command::Sweep { config, axis, values } => {
            let m = load_manifest(&config, g)?;
            let axis: SweepAxis = axis.parse()?;
            let report = sweep::<f32>(&m, axis, &values, g.force)?;
            for a in &report.arms {
                println!(
                    "{:16} ema {:.4} ± {:.4}   {:.2} s/epoch{}",
                    a.label,
                    a.segmentation.ema.mean,
                    a.segmentation.ema.std,
                    a.translation.mean_epoch_seconds,
                    if a.collapsed { "   collapsed" } else { "" }
                );
            }
            println!("{}", report.plot.display());
        }
        Command::Plot { reports, labels, title } => {
            let out = require_out(g, "plot")?;
            if reports.is_empty() {
                return Err(Error::Config("plot needs at least one report".into()));
            }
            if !labels.is_empty() && labels.len() != reports.len() {
                return Err(Error::Config(format!("{} labels for {} reports", labels.len(), reports.len())));
            }
            let mut arms = Vec::new();
            for (i, path) in reports.iter().enumerate() {
                let r = SegmentationReport::read(path)?;
                let label = labels.get(i).cloned().unwrap_or_else(|| {
                    path.parent()
                        .and_then(|p| p.file_name())
                        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
                });
                arms.push((label, r.ema_series));
            }
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(&out, distribution_svg(&arms, &title)).map_err(|e| Error::io(&out, e))?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
