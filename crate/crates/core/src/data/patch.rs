use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::LabeledSample;
use super::resize::bicubic_resize;
use crate::error::{Error, Result};

pub const MIN_PATCH: usize = 16;

/// Training patch size. The generator needs sides divisible by 4, so
/// requests are rounded down to the nearest multiple of 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub requested_size: usize,
    pub effective_size: usize,
    /// Crop at the requested size and bicubically resample to the effective size,
    /// instead of cropping at the effective size directly.
    #[serde(default)]
    pub legacy_rescale: bool,
}

impl PatchSpec {
    pub fn new(requested_size: usize) -> Result<Self> {
        if requested_size < MIN_PATCH {
            return Err(Error::Config(format!(
                "patch size {requested_size} below minimum {MIN_PATCH}"
            )));
        }
        Ok(Self {
            requested_size,
            effective_size: requested_size / 4 * 4,
            legacy_rescale: false,
        })
    }

    pub fn with_legacy_rescale(mut self, on: bool) -> Self {
        self.legacy_rescale = on;
        self
    }

    /// Side length actually cut from the source image.
    pub fn crop_size(&self) -> usize {
        if self.legacy_rescale {
            self.requested_size
        } else {
            self.effective_size
        }
    }

    pub fn check_fits(&self, h: usize, w: usize) -> Result<()> {
        if self.crop_size() > h.min(w) {
            return Err(Error::Shape(format!(
                "patch {} does not fit a {h}x{w} image",
                self.crop_size()
            )));
        }
        Ok(())
    }
}

/// Crop with its top-left corner.
pub fn crop_at(sample: &LabeledSample, spec: &PatchSpec, top: usize, left: usize) -> Result<LabeledSample> {
    spec.check_fits(sample.height(), sample.width())?;
    let s = spec.crop_size();
    let mut image = sample.image.crop(top, left, s, s);
    let mut labels = sample.labels.crop(top, left, s, s);
    if s != spec.effective_size {
        let e = spec.effective_size;
        image = bicubic_resize(&image, (e, e))?;
        image.clamp_unit();
        // nearest-neighbour for labels
        let src = labels.clone();
        let data = (0..e * e)
            .map(|i| {
                let (y, x) = (i / e, i % e);
                src.get(((y as f64 + 0.5) * s as f64 / e as f64) as usize, ((x as f64 + 0.5) * s as f64 / e as f64) as usize)
            })
            .collect();
        labels = super::image::LabelMap::from_vec(e, e, data)?;
    }
    LabeledSample::new(sample.id.clone(), sample.domain, image, labels)
}

/// Uniformly random valid top-left corner for `spec` on the sample.
pub fn random_corner(sample: &LabeledSample, spec: &PatchSpec, rng: &mut impl Rng) -> Result<(usize, usize)> {
    spec.check_fits(sample.height(), sample.width())?;
    let s = spec.crop_size();
    Ok((rng.gen_range(0..=sample.height() - s), rng.gen_range(0..=sample.width() - s)))
}

pub fn random_crop(sample: &LabeledSample, spec: &PatchSpec, rng: &mut impl Rng) -> Result<LabeledSample> {
    let (top, left) = random_corner(sample, spec, rng)?;
    crop_at(sample, spec, top, left)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{presets, scene::generate_synthetic_scene};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize) -> LabeledSample {
        generate_synthetic_scene(&presets::synthetic_scene(n, 4), 5).unwrap()
    }

    #[test]
    fn whole_image_when_patch_equals_size() {
        let s = sample(64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = random_crop(&s, &PatchSpec::new(64).unwrap(), &mut rng).unwrap();
        assert_eq!(c, s);
    }

    #[test]
    fn rounding_to_multiple_of_four() {
        assert_eq!(PatchSpec::new(90).unwrap().effective_size, 88);
        assert_eq!(PatchSpec::new(88).unwrap().effective_size, 88);
        assert!(PatchSpec::new(12).is_err());
    }

    #[test]
    fn oversized_patch_rejected() {
        let s = sample(128);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            random_crop(&s, &PatchSpec::new(200).unwrap(), &mut rng),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn legacy_rescale_yields_effective_size() {
        let s = sample(128);
        let spec = PatchSpec::new(90).unwrap().with_legacy_rescale(true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_crop(&s, &spec, &mut rng).unwrap();
        assert_eq!((c.height(), c.width()), (88, 88));
        assert!(c.image.in_unit_range());
        assert!(c.labels.data().iter().all(|&l| l < 4));
    }

    proptest! {
        #[test]
        fn crop_is_subarray_of_multiple_of_four(req in 16usize..=64, seed in 0u64..1000) {
            let s = sample(64);
            let spec = PatchSpec::new(req).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (top, left) = random_corner(&s, &spec, &mut rng).unwrap();
            let c = crop_at(&s, &spec, top, left).unwrap();
            let e = c.height();
            prop_assert_eq!(e % 4, 0);
            prop_assert_eq!(e, c.width());
            prop_assert!(e <= req && req < e + 4);
            for ch in 0..3 {
                for y in 0..e {
                    for x in 0..e {
                        prop_assert_eq!(c.image.get(ch, y, x), s.image.get(ch, top + y, left + x));
                    }
                }
            }
            for y in 0..e {
                for x in 0..e {
                    prop_assert_eq!(c.labels.get(y, x), s.labels.get(top + y, left + x));
                }
            }
        }
    }
}
