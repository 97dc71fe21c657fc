use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::image::{Dataset, LabeledSample};
use super::patch::{crop_at, random_corner, PatchSpec};
use crate::error::{Error, Result};
use crate::rng::named_rng;

/// Where one patch of a batch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropOrigin {
    pub sample: usize,
    pub top: usize,
    pub left: usize,
}

#[derive(Clone, Debug)]
pub struct PatchBatch {
    pub x: Vec<LabeledSample>,
    pub y: Vec<LabeledSample>,
    pub x_origins: Vec<CropOrigin>,
    pub y_origins: Vec<CropOrigin>,
}

/// Endless stream of independent patch batches from two unaligned datasets.
///
/// One epoch is a pass over the larger dataset in shuffled order; the
/// smaller one is sampled with replacement. No flips or other augmentation.
pub struct UnpairedBatches<'a> {
    x: &'a Dataset,
    y: &'a Dataset,
    batch: usize,
    spec: PatchSpec,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    x_is_larger: bool,
}

impl<'a> UnpairedBatches<'a> {
    pub fn new(x: &'a Dataset, y: &'a Dataset, batch: usize, spec: PatchSpec, seed: u64) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::Data("unpaired batches need two non-empty datasets".into()));
        }
        if batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        for s in x.samples.iter().chain(&y.samples) {
            spec.check_fits(s.height(), s.width())?;
        }
        Ok(Self {
            x,
            y,
            batch,
            spec,
            rng: named_rng(seed, "unpaired-batches"),
            order: Vec::new(),
            cursor: 0,
            x_is_larger: x.len() >= y.len(),
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.x.len().max(self.y.len()).div_ceil(self.batch)
    }

    fn next_major(&mut self, len: usize) -> usize {
        if self.cursor >= self.order.len() {
            self.order = (0..len).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn crop(&mut self, ds: &Dataset, idx: usize) -> Result<(LabeledSample, CropOrigin)> {
        let s = &ds.samples[idx];
        let (top, left) = random_corner(s, &self.spec, &mut self.rng)?;
        Ok((crop_at(s, &self.spec, top, left)?, CropOrigin { sample: idx, top, left }))
    }

    pub fn next_batch(&mut self) -> Result<PatchBatch> {
        let (xl, yl) = (self.x.len(), self.y.len());
        let (mut xs, mut ys, mut xo, mut yo) = (vec![], vec![], vec![], vec![]);
        for _ in 0..self.batch {
            let (xi, yi) = if self.x_is_larger {
                (self.next_major(xl), self.rng.gen_range(0..yl))
            } else {
                (self.rng.gen_range(0..xl), self.next_major(yl))
            };
            let (p, o) = self.crop(self.x, xi)?;
            xs.push(p);
            xo.push(o);
            let (p, o) = self.crop(self.y, yi)?;
            ys.push(p);
            yo.push(o);
        }
        Ok(PatchBatch {
            x: xs,
            y: ys,
            x_origins: xo,
            y_origins: yo,
        })
    }
}

impl Iterator for UnpairedBatches<'_> {
    type Item = Result<PatchBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_domain, presets, Domain};
    use std::collections::HashSet;

    fn ds(n: usize, seed: u64) -> Dataset {
        generate_domain(&presets::synthetic_scene(64, 3), None, Domain::Synthetic, n, seed).unwrap()
    }

    #[test]
    fn batch_shapes() {
        let (x, y) = (ds(10, 1), ds(12, 2));
        let spec = PatchSpec::new(48).unwrap();
        let mut it = UnpairedBatches::new(&x, &y, 40, spec, 0).unwrap();
        let b = it.next().unwrap().unwrap();
        assert_eq!((b.x.len(), b.y.len()), (40, 40));
        assert!(b.x.iter().chain(&b.y).all(|p| p.height() == 48 && p.width() == 48));
    }

    #[test]
    fn same_seed_same_sequence() {
        let (x, y) = (ds(6, 1), ds(4, 2));
        let spec = PatchSpec::new(32).unwrap();
        let a: Vec<_> = UnpairedBatches::new(&x, &y, 3, spec, 7).unwrap().take(5).map(|b| b.unwrap()).collect();
        let b: Vec<_> = UnpairedBatches::new(&x, &y, 3, spec, 7).unwrap().take(5).map(|b| b.unwrap()).collect();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.x_origins, q.x_origins);
            assert_eq!(p.y_origins, q.y_origins);
        }
    }

    #[test]
    fn epoch_covers_larger_set_and_resamples_smaller() {
        let (x, y) = (ds(2, 1), ds(20, 2));
        let spec = PatchSpec::new(32).unwrap();
        let mut it = UnpairedBatches::new(&x, &y, 5, spec, 3).unwrap();
        assert_eq!(it.steps_per_epoch(), 4);
        let mut seen = HashSet::new();
        let mut x_draws = 0;
        for _ in 0..it.steps_per_epoch() {
            let b = it.next_batch().unwrap();
            seen.extend(b.y_origins.iter().map(|o| o.sample));
            x_draws += b.x_origins.len();
        }
        assert_eq!(seen.len(), 20);
        assert!(x_draws > x.len());
    }

    #[test]
    fn iterations_per_epoch_arithmetic() {
        let (x, y) = (ds(200, 1), ds(3, 2));
        let it = UnpairedBatches::new(&x, &y, 40, PatchSpec::new(32).unwrap(), 0).unwrap();
        assert_eq!(it.steps_per_epoch(), 5);
    }

    #[test]
    fn empty_dataset_rejected() {
        let x = ds(2, 1);
        let mut y = ds(1, 2);
        y.samples.clear();
        assert!(matches!(
            UnpairedBatches::new(&x, &y, 2, PatchSpec::new(32).unwrap(), 0),
            Err(Error::Data(_))
        ));
    }
}
