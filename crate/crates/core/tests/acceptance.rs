//! Acceptance checks. Each test prints one `[PASS]`/`[FAIL]` line; the
//! long-running experiments share one pipeline run per seed. Tests hold a
//! global lock so wall-time measurements are not disturbed by each other.

mod common;

use std::collections::HashSet;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use syn2real::analysis::{conditional_affinities, joint_affinities, squared_distances, student_t, tsne_embed, TsneConfig};
use syn2real::data::{generate_domain, images_to_tensor, Dataset, Domain, Image, LabelMap, LabeledSample};
use syn2real::losses::{gan_loss_d, gan_loss_g, patch_nce_loss, GanObjective};
use syn2real::model::TranslationModel;
use syn2real::pipeline::{generate_datasets, run_pipeline, Arm, ExperimentManifest, PipelineSummary};
use syn2real::segmentation::{ema_update, evaluate_miou, ConfusionMatrix, Segmenter, SegmenterArchitecture};
use syn2real::translation::{refine_dataset, train_cut, TranslationConfig, DEFAULT_COLLAPSE_THRESHOLD};
use syn2real_tensor::{ParamStore, Tensor};

const SEEDS: [u64; 3] = [0, 1, 2];
const MIN_SEEDS: usize = 2;

const IOU_PAIRS: usize = 1000;
const IOU_REAL_TOL: f64 = 1e-12;
const IOU_BUDGET_S: f64 = 10.0;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_BUDGET_S: f64 = 120.0;
const CLOSED_FORM_TOL: f64 = 1e-6;
const EMA_DECAY: f64 = 0.995;
const EMA_STEPS: i32 = 2000;
const EMA_TOL: f64 = 1e-9;
const LABEL_FRAMES: usize = 100;
const COVARIANCE_TOL: f64 = 1e-4;
const COVARIANCE_MARGIN: usize = 16;
const MIN_GAIN: f64 = 0.02;
const E2E_BUDGET_S: f64 = 45.0 * 60.0;
const TIMING_PATCHES: [usize; 3] = [32, 48, 64];
const TIMING_BATCH: usize = 40;
const TIMING_EPOCHS: usize = 3;
const TSNE_SUM_TOL: f64 = 1e-9;
const TSNE_ENTROPY_TOL: f64 = 1e-5;
const COLLAPSE_EPOCHS: usize = 40;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Written to the stdout handle rather than through `println!`, which the test
/// harness captures for passing tests.
fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!("[{}] criterion {id:>2} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes()).and_then(|_| out.flush());
    drop(out);
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------- 1

fn random_labels(rng: &mut ChaCha8Rng, len: usize, c: usize) -> Vec<u8> {
    (0..len).map(|_| rng.gen_range(0..c as u8)).collect()
}

/// Set-based IoU over all (image, pixel) sites, mean over classes that
/// occur in either the ground truth or the prediction.
fn brute_force_iou(pairs: &[(Vec<u8>, Vec<u8>)], c: usize) -> (Vec<Option<Ratio<u64>>>, Option<Ratio<u128>>) {
    let mut per_class = Vec::new();
    for class in 0..c as u8 {
        let sites = |pick: fn(&(Vec<u8>, Vec<u8>)) -> &Vec<u8>| -> HashSet<(usize, usize)> {
            pairs
                .iter()
                .enumerate()
                .flat_map(|(i, p)| {
                    pick(p)
                        .iter()
                        .enumerate()
                        .filter(move |(_, &v)| v == class)
                        .map(move |(j, _)| (i, j))
                })
                .collect()
        };
        let gt = sites(|p| &p.0);
        let pred = sites(|p| &p.1);
        let union = gt.union(&pred).count() as u64;
        let inter = gt.intersection(&pred).count() as u64;
        per_class.push((union > 0).then(|| Ratio::new(inter, union)));
    }
    let defined: Vec<Ratio<u128>> = per_class
        .iter()
        .flatten()
        .map(|r| Ratio::new(*r.numer() as u128, *r.denom() as u128))
        .collect();
    let mean = (!defined.is_empty())
        .then(|| defined.iter().fold(Ratio::from_integer(0u128), |a, b| a + b) / Ratio::from_integer(defined.len() as u128));
    (per_class, mean)
}

#[test]
fn c01_iou_oracle() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x10);
    let mut exact_mismatch = 0;
    for _ in 0..IOU_PAIRS {
        let (h, w, c) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=4));
        let gt = random_labels(&mut rng, h * w, c);
        let pred = random_labels(&mut rng, h * w, c);
        let mut conf = ConfusionMatrix::new(c);
        conf.accumulate(&gt, &pred).unwrap();
        let (per_class, mean) = brute_force_iou(&[(gt, pred)], c);
        if conf.per_class_exact() != per_class || conf.mean_iou_exact() != mean {
            exact_mismatch += 1;
        }
    }

    // The full evaluation path: network predictions accumulated over a test set.
    let mut worst_real = 0.0f64;
    for trial in 0..100u64 {
        let c = rng.gen_range(2..=4);
        let net = Segmenter::<f64>::new(SegmenterArchitecture { base_channels: 2, num_classes: c }, trial).unwrap();
        let n = rng.gen_range(1..=4);
        let samples: Vec<LabeledSample> = (0..n)
            .map(|i| {
                let img = Image::from_planar(8, 8, (0..192).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
                let labels = LabelMap::from_vec(8, 8, random_labels(&mut rng, 64, c)).unwrap();
                LabeledSample::new(format!("t{i}"), Domain::PseudoReal, img, labels).unwrap()
            })
            .collect();
        let test = Dataset::new("oracle", c, samples).unwrap();
        let report = evaluate_miou(&net, &net.params, &test).unwrap();
        let pairs: Vec<(Vec<u8>, Vec<u8>)> = test
            .samples
            .iter()
            .map(|s| {
                let x: Tensor<f64> = images_to_tensor(&[&s.image]).unwrap();
                (s.labels.data().to_vec(), net.predict(&net.params, &x).unwrap())
            })
            .collect();
        let (per_class, mean) = brute_force_iou(&pairs, c);
        let to_f = |r: Ratio<u128>| *r.numer() as f64 / *r.denom() as f64;
        worst_real = worst_real.max((report.mean_iou - mean.map_or(0.0, to_f)).abs());
        for (a, b) in report.per_class_iou.iter().zip(&per_class) {
            match (a, b) {
                (Some(a), Some(b)) => worst_real = worst_real.max((a - *b.numer() as f64 / *b.denom() as f64).abs()),
                (None, None) => {}
                _ => worst_real = f64::INFINITY,
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "IoU oracle",
        exact_mismatch == 0 && worst_real <= IOU_REAL_TOL && secs < IOU_BUDGET_S,
        format!(
            "{exact_mismatch}/{IOU_PAIRS} exact mismatches, max real-valued error {worst_real:e} over 100 evaluated test sets, {secs:.2}s"
        ),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_gradient_check() {
    let _g = serial();
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_entry = String::new();
    let mut details = Vec::new();
    let mut paths_covered = true;
    for seed in SEEDS {
        let r = common::gradcheck_total_loss(seed);
        if r.max_rel_err >= worst {
            worst = r.max_rel_err;
            worst_entry = format!("seed {seed} {}", r.worst);
        }
        paths_covered &= r.adapter_grad > 0.0 && r.heads_grad > 0.0;
        details.push(format!(
            "seed {seed}: {:.2e} over {} entries, {} re-measured",
            r.max_rel_err, r.checked, r.retried
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        "gradient check",
        worst < GRAD_REL_TOL && paths_covered && secs < GRAD_BUDGET_S,
        format!("max rel err {worst:.2e} ({}); worst {worst_entry}; {secs:.0}s", details.join("; ")),
    );
}

// ---------------------------------------------------------------- 3

fn rows(data: &[f64], n: usize, d: usize) -> Tensor<f64> {
    Tensor::from_vec(&[n, d], data.to_vec()).unwrap()
}

#[test]
fn c03_loss_closed_forms() {
    let _g = serial();
    let e = std::f64::consts::E;
    let basis = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let id3 = rows(&basis, 3, 3);
    // Translated embeddings orthogonal to all source keys: uniform logits.
    let src6 = rows(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 3, 6);
    let orth6 = rows(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0], 3, 6);
    let orthogonal = patch_nce_loss(&src6, &orth6, 1.0).unwrap();
    let matched3 = patch_nce_loss(&id3, &id3, 1.0).unwrap();
    let id2 = rows(&[1.0, 0.0, 0.0, 1.0], 2, 2);
    let matched2 = patch_nce_loss(&id2, &id2, 1.0).unwrap();
    let nce_err = [
        (orthogonal - 3f64.ln()).abs(),
        (matched3 - -(e / (e + 2.0)).ln()).abs(),
        (matched2 - -(e / (e + 1.0)).ln()).abs(),
    ];

    let ones = Tensor::from_vec(&[2, 1, 3, 3], vec![1.0f64; 18]).unwrap();
    let zeros = Tensor::from_vec(&[2, 1, 3, 3], vec![0.0f64; 18]).unwrap();
    let ls = GanObjective::LeastSquares;
    let d_opt = gan_loss_d(&ones, &zeros, ls).unwrap();
    let g_opt = gan_loss_g(&ones, ls).unwrap();
    let d_worst = gan_loss_d(&zeros, &ones, ls).unwrap();
    // LSGAN discriminator optimum for the mixture p_real = p_fake is 1/2,
    // with loss 1/4.
    let half = Tensor::from_vec(&[2, 1, 3, 3], vec![0.5f64; 18]).unwrap();
    let d_mix = gan_loss_d(&half, &half, ls).unwrap();
    let gan_exact = d_opt == 0.0 && g_opt == 0.0 && d_worst == 1.0 && d_mix == 0.25;

    let max_err = nce_err.iter().copied().fold(0.0, f64::max);
    verdict(
        3,
        "loss closed forms",
        max_err <= CLOSED_FORM_TOL && gan_exact,
        format!(
            "orthogonal {orthogonal:.7} (ln 3), matched N=3 {matched3:.7} (-log(e/(e+2))), matched N=2 {matched2:.7} \
             (-log(e/(e+1)) = 0.3133), max err {max_err:.1e}; LSGAN D* {d_opt}, G* {g_opt}, D at 1/2 {d_mix}"
        ),
    );
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_ema_geometric_decay() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = ParamStore::<f64>::new();
    let mut ema = ParamStore::<f64>::new();
    let theta: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let start: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    params.add("w", Tensor::from_vec(&[4, 8], theta.clone()).unwrap());
    ema.add("w", Tensor::from_vec(&[4, 8], start.clone()).unwrap());
    let mut worst = 0.0f64;
    for k in 1..=EMA_STEPS {
        ema_update(&mut ema, &params, EMA_DECAY).unwrap();
        let factor = EMA_DECAY.powi(k);
        for ((e, t), s) in ema.tensors()[0].data().iter().zip(&theta).zip(&start) {
            worst = worst.max(((e - t).abs() - factor * (s - t).abs()).abs());
        }
    }
    verdict(
        4,
        "EMA geometric decay",
        worst <= EMA_TOL,
        format!("max deviation from 0.995^k |ema_0 - theta| over k <= {EMA_STEPS}: {worst:.2e}"),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn c05_label_preservation() {
    let _g = serial();
    let m = ExperimentManifest::desk("unused");
    let frames = generate_domain(&m.synthetic_scene, None, Domain::Synthetic, LABEL_FRAMES, 5).unwrap();
    let model = TranslationModel::<f32>::new(m.translation.model_config(), 5).unwrap();
    let refined = refine_dataset(&model, &frames, Some(9)).unwrap();
    let altered = frames
        .samples
        .iter()
        .zip(&refined.samples)
        .filter(|(a, b)| a.labels != b.labels || b.domain != Domain::Refined)
        .count();
    let image_changed = frames.samples.iter().zip(&refined.samples).any(|(a, b)| a.image != b.image);
    verdict(
        5,
        "label preservation",
        refined.len() == LABEL_FRAMES && altered == 0 && image_changed,
        format!("{altered}/{LABEL_FRAMES} frames with altered labels"),
    );
}

// ---------------------------------------------------------------- 6

fn roll(t: &Tensor<f32>, dy: usize, dx: usize) -> Tensor<f32> {
    let (n, c, h, w) = t.dims4().unwrap();
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for p in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                out[p * h * w + ((y + dy) % h) * w + (x + dx) % w] = src[p * h * w + y * w + x];
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], out).unwrap()
}

#[test]
fn c06_full_resolution_inference() {
    let _g = serial();
    let m = ExperimentManifest::desk("unused");
    let mut cfg = TranslationConfig::desk();
    cfg.epochs = 1;
    let x = generate_domain(&m.synthetic_scene, None, Domain::Synthetic, 40, 61).unwrap();
    let y = generate_domain(&m.real_scene, Some(&m.camera), Domain::PseudoReal, 40, 62).unwrap();
    let trained = train_cut::<f32>(&cfg, &x, &y, None, "").unwrap();
    assert_eq!(cfg.patch_spec().unwrap().crop_size(), 32);

    let mut wide = m.synthetic_scene.clone();
    wide.image_size = (96, 128);
    let frames = generate_domain(&wide, None, Domain::Synthetic, 4, 63).unwrap();
    let refined = refine_dataset(&trained.model, &frames, None);
    let sizes_ok = refined
        .as_ref()
        .map(|r| r.samples.iter().all(|s| (s.height(), s.width()) == (96, 128)))
        .unwrap_or(false);

    let mut worst = 0.0f32;
    for (k, s) in frames.samples.iter().enumerate() {
        let input: Tensor<f32> = images_to_tensor(&[&s.image]).unwrap();
        let (dy, dx) = [(4, 8), (12, 20), (32, 4), (8, 64)][k];
        let a = trained.model.generator.translate(&roll(&input, dy, dx), None).unwrap();
        let b = roll(&trained.model.generator.translate(&input, None).unwrap(), dy, dx);
        for c in 0..3 {
            for yy in COVARIANCE_MARGIN..96 - COVARIANCE_MARGIN {
                for xx in COVARIANCE_MARGIN..128 - COVARIANCE_MARGIN {
                    let i = (c * 96 + yy) * 128 + xx;
                    worst = worst.max((a.data()[i] - b.data()[i]).abs());
                }
            }
        }
    }
    verdict(
        6,
        "full-resolution inference",
        sizes_ok && (worst as f64) <= COVARIANCE_TOL,
        format!(
            "trained on 32x32 patches, refined 128x96 frames: {}; max interior shift-covariance error {worst:.2e}",
            if sizes_ok { "ok" } else { "failed" }
        ),
    );
}

// ---------------------------------------------- 7, 8, 11 (shared runs)

struct E2eRun {
    seed: u64,
    summary: PipelineSummary,
    seconds: f64,
}

fn e2e_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-e2e")
}

fn e2e_runs() -> &'static [E2eRun] {
    static RUNS: OnceLock<Vec<E2eRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let root = e2e_root();
        let _ = std::fs::remove_dir_all(&root);
        SEEDS
            .iter()
            .map(|&seed| {
                let mut m = ExperimentManifest::desk(root.join(format!("seed_{seed}")));
                m.seed = seed;
                // The mixed arm is not part of the comparison.
                m.arms = vec![Arm::Synthetic, Arm::Refined, Arm::Real];
                let start = Instant::now();
                let summary = run_pipeline::<f32>(&m, false).unwrap();
                let seconds = start.elapsed().as_secs_f64();
                for a in &summary.arms {
                    println!(
                        "    seed {seed} {:9} ema {:.4} ± {:.4}  raw {:.4} ± {:.4}",
                        a.arm.as_str(),
                        a.ema.mean,
                        a.ema.std,
                        a.raw.mean,
                        a.raw.std
                    );
                }
                E2eRun { seed, summary, seconds }
            })
            .collect()
    })
}

#[test]
fn c07_end_to_end_direction() {
    let _g = serial();
    let runs = e2e_runs();
    let mut passing = 0;
    let mut details = Vec::new();
    for r in runs {
        let ema = |arm| r.summary.arm(arm).unwrap().ema.mean;
        let (s, f, y) = (ema(Arm::Synthetic), ema(Arm::Refined), ema(Arm::Real));
        let ok = s <= f && f <= y && f - s >= MIN_GAIN;
        passing += ok as usize;
        details.push(format!(
            "seed {}: syn {s:.3} <= ref {f:.3} <= real {y:.3}, gain {:+.3} {}",
            r.seed,
            f - s,
            if ok { "ok" } else { "no" }
        ));
    }
    // One pipeline per seed: data, translation, refinement, the three arms
    // and the feature analysis.
    let per_seed = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let total_seconds = runs.iter().map(|r| r.seconds).sum::<f64>();
    verdict(
        7,
        "end-to-end direction",
        passing >= MIN_SEEDS && total_seconds < E2E_BUDGET_S,
        format!(
            "{passing}/3 seeds ({}); {:.0}s for all 3 pipelines (slowest seed {per_seed:.0}s)",
            details.join("; "),
            total_seconds
        ),
    );
}

#[test]
fn c08_ema_reduces_variability() {
    let _g = serial();
    let runs = e2e_runs();
    let mut passing = 0;
    let mut details = Vec::new();
    for r in runs {
        let a = r.summary.arm(Arm::Refined).unwrap();
        let ok = a.ema.std <= a.raw.std;
        passing += ok as usize;
        let others: Vec<String> = r
            .summary
            .arms
            .iter()
            .filter(|o| o.arm != Arm::Refined)
            .map(|o| format!("{} {:.4}/{:.4}", o.arm.as_str(), o.ema.std, o.raw.std))
            .collect();
        details.push(format!(
            "seed {}: refined ema std {:.4} vs raw {:.4} [{}]",
            r.seed,
            a.ema.std,
            a.raw.std,
            others.join(", ")
        ));
    }
    verdict(8, "EMA variability", passing >= MIN_SEEDS, format!("{passing}/3 seeds; {}", details.join("; ")));
}

#[test]
fn c11_feature_alignment() {
    let _g = serial();
    let runs = e2e_runs();
    let mut passing = 0;
    let mut details = Vec::new();
    for r in runs {
        let gap = r.summary.analysis.expect("analysis stage ran");
        let ok = gap.refined_to_real <= gap.synthetic_to_real;
        passing += ok as usize;
        details.push(format!(
            "seed {}: refined {:.4} vs synthetic {:.4}",
            r.seed, gap.refined_to_real, gap.synthetic_to_real
        ));
    }
    verdict(
        11,
        "feature-space alignment",
        passing >= MIN_SEEDS,
        format!("{passing}/3 seeds; mean nearest-real distance {}", details.join("; ")),
    );
}

// ---------------------------------------------------------------- 9

#[test]
fn c09_timing_monotonicity() {
    let _g = serial();
    let mut m = ExperimentManifest::desk("unused");
    m.sizes.synthetic = 80;
    m.sizes.real = 80;
    m.sizes.triples = 0;
    let data = generate_datasets(&m).unwrap();
    let mut means = Vec::new();
    for patch in TIMING_PATCHES {
        let mut cfg = TranslationConfig::desk();
        cfg.patch_size = patch;
        cfg.batch = TIMING_BATCH;
        cfg.epochs = TIMING_EPOCHS;
        let t = train_cut::<f32>(&cfg, &data.synthetic, &data.real, None, "").unwrap();
        let timings = t.summary.timings();
        assert_eq!(timings.len(), TIMING_EPOCHS);
        means.push(timings.iter().map(|t| t.wall_seconds).sum::<f64>() / timings.len() as f64);
    }
    let monotone = means.windows(2).all(|w| w[0] <= w[1]);
    let detail: Vec<String> = TIMING_PATCHES.iter().zip(&means).map(|(p, s)| format!("{p}²: {s:.2}s")).collect();
    verdict(
        9,
        "timing monotonicity",
        monotone,
        format!("mean epoch wall time at batch {TIMING_BATCH} over {TIMING_EPOCHS} epochs: {}", detail.join(", ")),
    );
}

// ---------------------------------------------------------------- 10

fn gaussian_clusters(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..10).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    centers
        .iter()
        .flat_map(|c| {
            (0..25)
                .map(|_| c.iter().map(|v| v + rand_distr::Distribution::sample(&normal, &mut rng)).collect::<Vec<f64>>())
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn c10_tsne_internals() {
    let _g = serial();
    let data = gaussian_clusters(10);
    let cfg = TsneConfig {
        perplexity: 15.0,
        seed: 3,
        ..TsneConfig::default()
    };
    let d = squared_distances(&data);
    let (cond, entropies) = conditional_affinities(&d, cfg.perplexity).unwrap();
    let p = joint_affinities(&cond);
    let target = cfg.perplexity.log2();
    let entropy_err = entropies.iter().map(|h| (h - target).abs()).fold(0.0, f64::max);
    let a = tsne_embed(&data, &cfg).unwrap();
    let b = tsne_embed(&data, &cfg).unwrap();
    let (q, _) = student_t(&a.points);
    let check = |m: &syn2real::analysis::SquareMatrix| {
        let nonneg = m.data.iter().all(|&v| v >= 0.0);
        (m.max_asymmetry(), (m.sum() - 1.0).abs(), nonneg)
    };
    let (pa, ps, pn) = check(&p);
    let (qa, qs, qn) = check(&q);
    let bitwise = a
        .points
        .iter()
        .zip(&b.points)
        .all(|(u, v)| u[0].to_bits() == v[0].to_bits() && u[1].to_bits() == v[1].to_bits());
    let other = tsne_embed(&data, &TsneConfig { seed: 4, ..cfg.clone() }).unwrap();
    let seed_matters = other.points != a.points;
    let pass = pa <= TSNE_SUM_TOL
        && qa <= TSNE_SUM_TOL
        && ps <= TSNE_SUM_TOL
        && qs <= TSNE_SUM_TOL
        && pn
        && qn
        && entropy_err <= TSNE_ENTROPY_TOL
        && a.final_kl < a.initial_kl
        && bitwise
        && seed_matters;
    verdict(
        10,
        "t-SNE internals",
        pass,
        format!(
            "P asym {pa:.1e} |sum-1| {ps:.1e}; Q asym {qa:.1e} |sum-1| {qs:.1e}; entropy err {entropy_err:.1e} bits; \
             KL {:.3} -> {:.3}; bitwise repeatable {bitwise}",
            a.initial_kl, a.final_kl
        ),
    );
}

// ---------------------------------------------------------------- 12

#[test]
fn c12_collapse_visibility() {
    let _g = serial();
    let mut passing = 0;
    let mut details = Vec::new();
    for seed in SEEDS {
        let mut m = ExperimentManifest::desk("unused");
        m.seed = seed;
        m.sizes.triples = 0;
        let data = generate_datasets(&m).unwrap();
        let run = |lambda: f64| {
            let mut cfg = m.resolved().translation;
            cfg.lambda_nce = lambda;
            cfg.epochs = COLLAPSE_EPOCHS;
            let s = train_cut::<f32>(&cfg, &data.synthetic, &data.real, None, "").unwrap().summary;
            let min_probe = s.epochs.iter().map(|e| e.probe_distance).fold(f64::INFINITY, f64::min);
            (s.collapsed(), min_probe)
        };
        let (fired0, probe0) = run(0.0);
        let (fired2, probe2) = run(2.0);
        let ok = fired0 && !fired2;
        passing += ok as usize;
        details.push(format!(
            "seed {seed}: λ=0 fired {fired0} (min probe distance {probe0:.3}), λ=2 fired {fired2} (min {probe2:.3})"
        ));
    }
    verdict(
        12,
        "mode-collapse visibility",
        passing >= MIN_SEEDS,
        format!("{passing}/3 seeds, threshold {DEFAULT_COLLAPSE_THRESHOLD}; {}", details.join("; ")),
    );
}
