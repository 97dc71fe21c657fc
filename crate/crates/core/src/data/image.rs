use serde::{Deserialize, Serialize};
use syn2real_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// Planar RGB image (channel-major, `3 x h x w`), values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T = f32> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

pub const CHANNELS: usize = 3;

impl<T: Scalar> Image<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; CHANNELS * height * width],
        }
    }

    pub fn from_planar(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != CHANNELS * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} RGB image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|&v| v >= T::zero() && v <= T::one())
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.max(T::zero()).min(T::one());
        }
    }

    /// Rounds every value to the nearest 8-bit level, as stored on disk.
    pub fn quantize_8bit(&mut self) {
        let s = T::lit(255.0);
        for v in &mut self.data {
            let q = (v.max(T::zero()).min(T::one()) * s).round();
            *v = q / s;
        }
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * h * w);
        for c in 0..CHANNELS {
            for y in top..top + h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + w]);
            }
        }
        Self {
            height: h,
            width: w,
            data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

/// Stacks images of equal size into an `(n, 3, h, w)` tensor.
pub fn images_to_tensor<S: Scalar, T: Scalar>(images: &[&Image<S>]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * CHANNELS * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(Error::Shape(format!(
                "batch mixes {}x{} and {h}x{w} images",
                img.height, img.width
            )));
        }
        data.extend(img.data.iter().map(|v| T::from_f64(v.to_f64().unwrap()).unwrap()));
    }
    Ok(Tensor::from_vec(&[images.len(), CHANNELS, h, w], data)?)
}

/// Splits an `(n, 3, h, w)` tensor back into images.
pub fn tensor_to_images<T: Scalar, S: Scalar>(t: &Tensor<T>) -> Result<Vec<Image<S>>> {
    let (n, c, h, w) = t.dims4()?;
    if c != CHANNELS {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    Ok((0..n)
        .map(|i| Image {
            height: h,
            width: w,
            data: t
                .batch_item(i)
                .iter()
                .map(|v| S::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        })
        .collect())
}

/// Per-pixel class ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} labels for a {height}x{width} map",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn max_class(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in top..top + h {
            data.extend_from_slice(&self.data[y * self.width + left..y * self.width + left + w]);
        }
        Self {
            height: h,
            width: w,
            data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Synthetic,
    PseudoReal,
    Refined,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Synthetic => "synthetic",
            Domain::PseudoReal => "pseudo_real",
            Domain::Refined => "refined",
        }
    }
}

/// An RGB image with its exact label map.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub domain: Domain,
    pub image: Image<f32>,
    pub labels: LabelMap,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>, domain: Domain, image: Image<f32>, labels: LabelMap) -> Result<Self> {
        if (image.height(), image.width()) != (labels.height(), labels.width()) {
            return Err(Error::Shape(format!(
                "image {}x{} vs labels {}x{}",
                image.height(),
                image.width(),
                labels.height(),
                labels.width()
            )));
        }
        Ok(Self {
            id: id.into(),
            domain,
            image,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}

/// Immutable collection of labeled samples sharing one class vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, num_classes: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        let class_names = (0..num_classes)
            .map(|c| if c == 0 { "background".to_string() } else { format!("class_{c}") })
            .collect();
        let ds = Self {
            name: name.into(),
            num_classes,
            class_names,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "dataset {} declares {} classes, need at least 2",
                self.name, self.num_classes
            )));
        }
        for s in &self.samples {
            if (s.image.height(), s.image.width()) != (s.labels.height(), s.labels.width()) {
                return Err(Error::Format(format!("sample {}: image/mask shape mismatch", s.id)));
            }
            if s.labels.max_class() as usize >= self.num_classes {
                return Err(Error::Format(format!(
                    "sample {}: class id {} >= num_classes {}",
                    s.id,
                    s.labels.max_class(),
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledSample> {
        self.samples.iter().find(|s| s.id == id)
    }
}
