//! Desk-scale domains, dataset storage and patch sampling.

mod batches;
mod camera;
mod image;
mod io;
pub mod presets;
mod patch;
mod resize;
mod scene;

pub use batches::{CropOrigin, PatchBatch, UnpairedBatches};
pub use camera::{apply_camera_effects, CameraEffectConfig};
pub use image::{images_to_tensor, tensor_to_images, Dataset, Domain, Image, LabelMap, LabeledSample, CHANNELS};
pub use io::{load_dataset, read_manifest, save_dataset, save_dataset_with_hash, Manifest, ManifestEntry, MANIFEST};
pub use patch::{crop_at, random_corner, random_crop, PatchSpec, MIN_PATCH};
pub use resize::bicubic_resize;
pub use scene::{
    generate_synthetic_scene, sample_layout, Background, Geometry, ObjectInstance, SceneConfig, SceneLayout, ShapeKind,
    ShapeStyle, Texture,
};

use crate::error::Result;
use crate::rng::derive_seed;

fn render(
    cfg: &SceneConfig,
    layout: &SceneLayout,
    camera: Option<&CameraEffectConfig>,
    domain: Domain,
    id: String,
    seed: u64,
) -> Result<LabeledSample> {
    let (mut image, labels) = layout.rasterize();
    if let Some(cam) = camera {
        image = apply_camera_effects(&image, cam, derive_seed(seed, 0xCA3E7A));
    }
    image.quantize_8bit();
    debug_assert!((labels.max_class() as usize) < cfg.num_classes);
    LabeledSample::new(id, domain, image, labels)
}

/// `count` scenes drawn from `cfg`, optionally passed through camera effects.
pub fn generate_domain(
    cfg: &SceneConfig,
    camera: Option<&CameraEffectConfig>,
    domain: Domain,
    count: usize,
    seed: u64,
) -> Result<Dataset> {
    cfg.validate()?;
    let samples = (0..count)
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let layout = sample_layout(cfg, s)?;
            render(cfg, &layout, camera, domain, format!("scene_{i:05}"), s)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(format!("{}-{seed}", domain.as_str()), cfg.num_classes, samples)
}

/// Id-matched scene pairs: identical object arrangements rendered once in
/// each domain. The backgrounds come from each config's own palette.
pub fn generate_matched_pair(
    syn: &SceneConfig,
    real: &SceneConfig,
    camera: &CameraEffectConfig,
    count: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    syn.validate()?;
    real.validate()?;
    let mut a = Vec::with_capacity(count);
    let mut b = Vec::with_capacity(count);
    for i in 0..count {
        let s = derive_seed(seed, i as u64);
        let layout = sample_layout(syn, s)?;
        let bg_layout = sample_layout(real, s)?;
        let real_layout = SceneLayout {
            background: bg_layout.background,
            background_seed: bg_layout.background_seed,
            ..layout.clone()
        };
        let id = format!("scene_{i:05}");
        a.push(render(syn, &layout, None, Domain::Synthetic, id.clone(), s)?);
        b.push(render(real, &real_layout, Some(camera), Domain::PseudoReal, id, s)?);
    }
    Ok((
        Dataset::new(format!("synthetic-matched-{seed}"), syn.num_classes, a)?,
        Dataset::new(format!("pseudo_real-matched-{seed}"), real.num_classes, b)?,
    ))
}
