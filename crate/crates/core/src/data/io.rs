//! On-disk dataset layout: `manifest.json`, `images/<id>.png`, `masks/<id>.png`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{Dataset, Domain, Image, LabelMap, LabeledSample, CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<ManifestEntry>,
    /// Hash of the configuration that produced the dataset, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
    pub domain: Domain,
}

pub const MANIFEST: &str = "manifest.json";

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    save_dataset_with_hash(ds, root, None)
}

pub fn save_dataset_with_hash(ds: &Dataset, root: &Path, config_hash: Option<&str>) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        let image_rel = format!("images/{}.png", s.id);
        let mask_rel = format!("masks/{}.png", s.id);
        let (h, w) = (s.height() as u32, s.width() as u32);

        let mut rgb = image::RgbImage::new(w, h);
        for (x, y, px) in rgb.enumerate_pixels_mut() {
            for c in 0..CHANNELS {
                let v = s.image.get(c, y as usize, x as usize).clamp(0.0, 1.0);
                px.0[c] = (v * 255.0).round() as u8;
            }
        }
        let path = root.join(&image_rel);
        ensure_parent(&path)?;
        rgb.save(&path).map_err(|e| image_err(&path, e))?;

        let mask = image::GrayImage::from_raw(w, h, s.labels.data().to_vec())
            .ok_or_else(|| Error::Shape(format!("mask of {} has wrong size", s.id)))?;
        let path = root.join(&mask_rel);
        ensure_parent(&path)?;
        mask.save(&path).map_err(|e| image_err(&path, e))?;

        entries.push(ManifestEntry {
            id: s.id.clone(),
            image: image_rel,
            mask: mask_rel,
            domain: s.domain,
        });
    }
    let manifest = Manifest {
        name: ds.name.clone(),
        num_classes: ds.num_classes,
        class_names: ds.class_names.clone(),
        samples: entries,
        config_hash: config_hash.map(str::to_string),
    };
    let path = root.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("missing or unreadable manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn open(root: &Path, rel: &str) -> Result<(PathBuf, image::DynamicImage)> {
    let path = root.join(rel);
    if !path.is_file() {
        return Err(Error::Format(format!("manifest references missing file {}", path.display())));
    }
    let img = image::open(&path).map_err(|e| image_err(&path, e))?;
    Ok((path, img))
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?;
    if manifest.class_names.len() != manifest.num_classes {
        return Err(Error::Format(format!(
            "{} class names for {} classes",
            manifest.class_names.len(),
            manifest.num_classes
        )));
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let (_, img) = open(root, &e.image)?;
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut image = Image::filled(h, w, 0.0f32);
        for (x, y, px) in rgb.enumerate_pixels() {
            for c in 0..CHANNELS {
                image.set(c, y as usize, x as usize, px.0[c] as f32 / 255.0);
            }
        }
        let (mpath, mask) = open(root, &e.mask)?;
        let mask = mask.to_luma8();
        if (mask.width() as usize, mask.height() as usize) != (w, h) {
            return Err(Error::Format(format!(
                "{}: mask {}x{} does not match image {}x{}",
                mpath.display(),
                mask.height(),
                mask.width(),
                h,
                w
            )));
        }
        let labels = LabelMap::from_vec(h, w, mask.into_raw())?;
        if labels.max_class() as usize >= manifest.num_classes {
            return Err(Error::Format(format!(
                "{}: class id {} >= declared {} classes",
                mpath.display(),
                labels.max_class(),
                manifest.num_classes
            )));
        }
        samples.push(LabeledSample::new(e.id.clone(), e.domain, image, labels)?);
    }
    Ok(Dataset {
        name: manifest.name,
        num_classes: manifest.num_classes,
        class_names: manifest.class_names,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_domain, presets};

    fn small() -> Dataset {
        generate_domain(&presets::synthetic_scene(32, 4), None, Domain::Synthetic, 3, 1).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        save_dataset(&ds, dir.path()).unwrap();
        let victim = format!("images/{}.png", ds.samples[1].id);
        fs::remove_file(dir.path().join(&victim)).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Format(msg)) => assert!(msg.contains(&victim), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn class_id_beyond_declared_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = small();
        ds.samples[0].labels.data_mut()[0] = 3;
        save_dataset(&ds, dir.path()).unwrap();
        let mut m = read_manifest(dir.path()).unwrap();
        m.num_classes = 3;
        m.class_names.truncate(3);
        fs::write(dir.path().join(MANIFEST), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn mask_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        save_dataset(&ds, dir.path()).unwrap();
        let p = dir.path().join(format!("masks/{}.png", ds.samples[0].id));
        image::GrayImage::new(8, 8).save(&p).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format(_))));
    }
}
