//! Confusion-matrix IoU and statistics over the last epochs of a run.

use num_integer::Integer;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::error::{Error, Result};

/// Global `C x C` pixel counts, `counts[gt * C + pred]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn accumulate(&mut self, gt: &[u8], pred: &[u8]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let c = self.num_classes;
        for (&g, &p) in gt.iter().zip(pred) {
            let (g, p) = (g as usize, p as usize);
            if g >= c || p >= c {
                return Err(Error::Index(format!("class id {} outside 0..{c}", g.max(p))));
            }
            self.counts[g * c + p] += 1;
        }
        Ok(())
    }

    pub fn accumulate_maps(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if (gt.height(), gt.width()) != (pred.height(), pred.width()) {
            return Err(Error::Shape(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        self.accumulate(gt.data(), pred.data())
    }

    /// `TP / (TP + FP + FN)`, or `None` when the class never occurs in
    /// either the ground truth or the prediction.
    pub fn class_iou_exact(&self, class: usize) -> Option<Ratio<u64>> {
        let c = self.num_classes;
        let tp = self.get(class, class);
        let fn_: u64 = (0..c).filter(|&p| p != class).map(|p| self.get(class, p)).sum();
        let fp: u64 = (0..c).filter(|&g| g != class).map(|g| self.get(g, class)).sum();
        let union = tp + fp + fn_;
        (union > 0).then(|| Ratio::new(tp, union))
    }

    pub fn per_class_exact(&self) -> Vec<Option<Ratio<u64>>> {
        (0..self.num_classes).map(|k| self.class_iou_exact(k)).collect()
    }

    /// Exact mean over defined classes; `None` if no class is defined or the
    /// common denominator overflows.
    pub fn mean_iou_exact(&self) -> Option<Ratio<u128>> {
        let defined: Vec<Ratio<u64>> = self.per_class_exact().into_iter().flatten().collect();
        if defined.is_empty() {
            return None;
        }
        let (mut num, mut den) = (0u128, 1u128);
        for r in &defined {
            let (n, d) = (*r.numer() as u128, *r.denom() as u128);
            let l = den.lcm(&d);
            num = num.checked_mul(l / den)?.checked_add(n.checked_mul(l / d)?)?;
            den = l;
            let g = num.gcd(&den).max(1);
            num /= g;
            den /= g;
        }
        Some(Ratio::new(num, den.checked_mul(defined.len() as u128)?))
    }

    pub fn report(&self) -> IoUReport {
        let per_class_iou: Vec<Option<f64>> = self
            .per_class_exact()
            .into_iter()
            .map(|r| r.map(|r| *r.numer() as f64 / *r.denom() as f64))
            .collect();
        let defined: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let mean_iou = if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        };
        IoUReport {
            per_class_iou,
            mean_iou,
            last_k_stats: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub k: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

impl DistributionStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Length("no values to summarize".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        Ok(Self {
            k: m,
            mean,
            std: var.sqrt(),
            min: sorted[0],
            max: sorted[m - 1],
            median,
        })
    }
}

/// Per-class IoU (undefined classes are `None`) and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_k_stats: Option<DistributionStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub epoch: usize,
    pub train_loss: f64,
    pub raw: IoUReport,
    pub ema: IoUReport,
}

/// Last-`k` statistics of both tracks plus the series they summarize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackDistribution {
    pub raw: DistributionStats,
    pub ema: DistributionStats,
    pub raw_series: Vec<f64>,
    pub ema_series: Vec<f64>,
}

pub fn iou_distribution(history: &[EpochEval], k: usize) -> Result<TrackDistribution> {
    if k == 0 || history.len() < k {
        return Err(Error::Length(format!(
            "need {k} epochs of history, have {}",
            history.len()
        )));
    }
    let tail = &history[history.len() - k..];
    let raw_series: Vec<f64> = tail.iter().map(|e| e.raw.mean_iou).collect();
    let ema_series: Vec<f64> = tail.iter().map(|e| e.ema.mean_iou).collect();
    Ok(TrackDistribution {
        raw: DistributionStats::of(&raw_series)?,
        ema: DistributionStats::of(&ema_series)?,
        raw_series,
        ema_series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn conf(gt: &[u8], pred: &[u8], c: usize) -> ConfusionMatrix {
        let mut m = ConfusionMatrix::new(c);
        m.accumulate(gt, pred).unwrap();
        m
    }

    #[test]
    fn two_by_two_example() {
        let m = conf(&[1, 1, 0, 0], &[1, 0, 0, 0], 2);
        assert_eq!(m.per_class_exact(), vec![Some(Ratio::new(2, 3)), Some(Ratio::new(1, 2))]);
        assert_eq!(m.mean_iou_exact(), Some(Ratio::new(7, 12)));
        assert!((m.report().mean_iou - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_disjoint_and_undefined() {
        let gt = [0, 1, 2, 1];
        assert_eq!(conf(&gt, &gt, 4).report().mean_iou, 1.0);
        assert_eq!(conf(&gt, &gt, 4).report().per_class_iou[3], None);
        let m = conf(&[0, 1, 1, 0], &[1, 0, 0, 1], 2);
        assert_eq!(m.report().mean_iou, 0.0);
        assert!(ConfusionMatrix::new(2).accumulate(&[0, 1], &[0]).is_err());
        assert!(ConfusionMatrix::new(2).accumulate(&[0, 2], &[0, 1]).is_err());
    }

    #[test]
    fn distribution_stats() {
        let s = DistributionStats::of(&[0.7; 5]).unwrap();
        assert_eq!((s.mean, s.std, s.median), (0.7, 0.0, 0.7));
        let history: Vec<EpochEval> = (1..=9)
            .map(|i| {
                let r = IoUReport {
                    per_class_iou: vec![],
                    mean_iou: i as f64 * 0.1,
                    last_k_stats: None,
                };
                EpochEval {
                    epoch: i,
                    train_loss: 0.0,
                    raw: r.clone(),
                    ema: r,
                }
            })
            .collect();
        let d = iou_distribution(&history, 3).unwrap();
        assert!((d.raw.mean - 0.8).abs() < 1e-12);
        assert!((d.ema.median - 0.8).abs() < 1e-12);
        assert!(matches!(iou_distribution(&history, 10), Err(Error::Length(_))));
    }

    proptest! {
        #[test]
        fn class_relabeling_permutes_iou(
            pairs in proptest::collection::vec((0u8..4, 0u8..4), 1..64),
            perm in Just([0u8, 1, 2, 3]).prop_shuffle(),
        ) {
            let gt: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let base = conf(&gt, &pred, 4).report();
            let pg: Vec<u8> = gt.iter().map(|&v| perm[v as usize]).collect();
            let pp: Vec<u8> = pred.iter().map(|&v| perm[v as usize]).collect();
            let permuted = conf(&pg, &pp, 4).report();
            for k in 0..4 {
                prop_assert_eq!(base.per_class_iou[k], permuted.per_class_iou[perm[k] as usize]);
            }
            prop_assert!((base.mean_iou - permuted.mean_iou).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base.mean_iou));
        }
    }
}
