//! Procedural tabletop scenes: flat-shaded, textured 2D shapes layered over a
//! background, with a label map that is exact by construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{Domain, Image, LabelMap, LabeledSample};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Rectangle,
    Triangle,
    Ellipse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Texture {
    Flat,
    Stripes { period: f32, contrast: f32 },
    Checker { period: f32, contrast: f32 },
    Speckle { contrast: f32 },
}

/// Appearance of one object class. Entry `k` of the palette renders class `k + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeStyle {
    pub kind: ShapeKind,
    pub color: [f32; 3],
    pub texture: Texture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Background {
    Solid { color: [f32; 3] },
    Gradient { from: [f32; 3], to: [f32; 3] },
    Checker { a: [f32; 3], b: [f32; 3], period: f32 },
    Stripes { a: [f32; 3], b: [f32; 3], period: f32 },
    Speckle { color: [f32; 3], contrast: f32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// `(height, width)`, both divisible by 4.
    pub image_size: (usize, usize),
    pub num_classes: usize,
    /// Inclusive range of objects per scene.
    pub objects_per_scene: (usize, usize),
    /// Object radius as a fraction of the shorter image side.
    pub object_scale: (f32, f32),
    /// Uniform per-instance color perturbation amplitude.
    pub color_jitter: f32,
    pub shape_palette: Vec<ShapeStyle>,
    pub background_palette: Vec<Background>,
    pub rng_seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!("image size {h}x{w} must be non-zero multiples of 4")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.num_classes > 256 {
            return Err(Error::Config("at most 256 classes fit an 8-bit mask".into()));
        }
        let (lo, hi) = self.objects_per_scene;
        if lo < 1 || hi < lo {
            return Err(Error::Config(format!("objects_per_scene range [{lo}, {hi}] is invalid")));
        }
        if self.shape_palette.is_empty() || self.background_palette.is_empty() {
            return Err(Error::Config("shape and background palettes must be non-empty".into()));
        }
        if self.shape_palette.len() != self.num_classes - 1 {
            return Err(Error::Config(format!(
                "{} shape styles for {} object classes",
                self.shape_palette.len(),
                self.num_classes - 1
            )));
        }
        let (smin, smax) = self.object_scale;
        if !(smin > 0.0 && smax >= smin && smax <= 1.0) {
            return Err(Error::Config(format!("object_scale ({smin}, {smax}) is invalid")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Circle { cx: f32, cy: f32, r: f32 },
    /// Rotated rectangle or ellipse: centre, half-extents, rotation.
    Oriented { cx: f32, cy: f32, hx: f32, hy: f32, angle: f32, elliptic: bool },
    Triangle { v: [(f32, f32); 3] },
}

impl Geometry {
    /// Whether the pixel centre `(x + 0.5, y + 0.5)` lies inside.
    pub fn covers(&self, y: usize, x: usize) -> bool {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        match *self {
            Geometry::Circle { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
            Geometry::Oriented { cx, cy, hx, hy, angle, elliptic } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (px - cx, py - cy);
                let u = (c * dx + s * dy) / hx;
                let v = (-s * dx + c * dy) / hy;
                if elliptic {
                    u * u + v * v <= 1.0
                } else {
                    u.abs() <= 1.0 && v.abs() <= 1.0
                }
            }
            Geometry::Triangle { v } => {
                let edge = |a: (f32, f32), b: (f32, f32)| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
                let e0 = edge(v[0], v[1]);
                let e1 = edge(v[1], v[2]);
                let e2 = edge(v[2], v[0]);
                (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectInstance {
    pub class_id: u8,
    pub geometry: Geometry,
    pub color: [f32; 3],
    pub texture: Texture,
    /// Texture phase / orientation.
    pub phase: (f32, f32),
    pub texture_seed: u64,
}

/// Everything random about one scene, drawn before rasterization.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub height: usize,
    pub width: usize,
    pub background: Background,
    pub background_seed: u64,
    /// Painted in order; later objects occlude earlier ones.
    pub objects: Vec<ObjectInstance>,
}

fn hash01(seed: u64, y: usize, x: usize) -> f32 {
    let v = crate::rng::derive_seed(seed, ((y as u64) << 32) | x as u64);
    (v >> 40) as f32 / (1u64 << 24) as f32
}

fn texture_pattern(t: &Texture, phase: (f32, f32), seed: u64, y: usize, x: usize) -> f32 {
    // multiplicative shading factor around 1
    let (fy, fx) = (y as f32 + 0.5, x as f32 + 0.5);
    match *t {
        Texture::Flat => 1.0,
        Texture::Stripes { period, contrast } => {
            let (s, c) = phase.1.sin_cos();
            let u = (c * fx + s * fy + phase.0) / period;
            let on = (u.floor() as i64).rem_euclid(2) == 0;
            1.0 + contrast * if on { 0.5 } else { -0.5 }
        }
        Texture::Checker { period, contrast } => {
            let a = ((fx + phase.0) / period).floor() as i64;
            let b = ((fy + phase.0) / period).floor() as i64;
            1.0 + contrast * if (a + b).rem_euclid(2) == 0 { 0.5 } else { -0.5 }
        }
        Texture::Speckle { contrast } => 1.0 + contrast * (hash01(seed, y, x) - 0.5),
    }
}

fn background_color(bg: &Background, seed: u64, y: usize, x: usize, h: usize, w: usize) -> [f32; 3] {
    let lerp = |a: [f32; 3], b: [f32; 3], t: f32| [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t];
    match bg {
        Background::Solid { color } => *color,
        Background::Gradient { from, to } => {
            let t = (y as f32 + x as f32 + 1.0) / (h + w) as f32;
            lerp(*from, *to, t)
        }
        Background::Checker { a, b, period } => {
            let i = ((x as f32 + 0.5) / period).floor() as i64 + ((y as f32 + 0.5) / period).floor() as i64;
            if i.rem_euclid(2) == 0 {
                *a
            } else {
                *b
            }
        }
        Background::Stripes { a, b, period } => {
            if (((y as f32 + 0.5) / period).floor() as i64).rem_euclid(2) == 0 {
                *a
            } else {
                *b
            }
        }
        Background::Speckle { color, contrast } => {
            let f = 1.0 + contrast * (hash01(seed, y, x) - 0.5);
            [color[0] * f, color[1] * f, color[2] * f]
        }
    }
}

/// Draws the random arrangement of a scene.
pub fn sample_layout(cfg: &SceneConfig, seed: u64) -> Result<SceneLayout> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.rng_seed, seed);
    let (h, w) = cfg.image_size;
    let side = h.min(w) as f32;
    let bg = cfg.background_palette[rng.gen_range(0..cfg.background_palette.len())].clone();
    let background_seed = rng.gen();
    let count = rng.gen_range(cfg.objects_per_scene.0..=cfg.objects_per_scene.1);
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let k = rng.gen_range(0..cfg.shape_palette.len());
        let style = &cfg.shape_palette[k];
        let r = side * rng.gen_range(cfg.object_scale.0..=cfg.object_scale.1);
        let cy = rng.gen_range(0.0..h as f32);
        let cx = rng.gen_range(0.0..w as f32);
        let angle = rng.gen_range(0.0..std::f32::consts::PI);
        let geometry = match style.kind {
            ShapeKind::Circle => Geometry::Circle { cx, cy, r },
            ShapeKind::Rectangle | ShapeKind::Ellipse => {
                let aspect = rng.gen_range(0.5..1.0f32);
                Geometry::Oriented {
                    cx,
                    cy,
                    hx: r,
                    hy: r * aspect,
                    angle,
                    elliptic: style.kind == ShapeKind::Ellipse,
                }
            }
            ShapeKind::Triangle => {
                let mut v = [(0.0, 0.0); 3];
                for (i, p) in v.iter_mut().enumerate() {
                    let a = angle + i as f32 * 2.0 * std::f32::consts::PI / 3.0 + rng.gen_range(-0.3..0.3);
                    let rr = r * rng.gen_range(0.8..1.2f32);
                    *p = (cx + rr * a.cos(), cy + rr * a.sin());
                }
                Geometry::Triangle { v }
            }
        };
        let j = cfg.color_jitter;
        let mut color = style.color;
        for c in &mut color {
            *c = (*c + rng.gen_range(-j..=j)).clamp(0.0, 1.0);
        }
        objects.push(ObjectInstance {
            class_id: (k + 1) as u8,
            geometry,
            color,
            texture: style.texture,
            phase: (rng.gen_range(0.0..16.0), rng.gen_range(0.0..std::f32::consts::PI)),
            texture_seed: rng.gen(),
        });
    }
    Ok(SceneLayout {
        height: h,
        width: w,
        background: bg,
        background_seed,
        objects,
    })
}

impl SceneLayout {
    pub fn rasterize(&self) -> (Image<f32>, LabelMap) {
        let (h, w) = (self.height, self.width);
        let mut img = Image::filled(h, w, 0.0f32);
        let mut labels = LabelMap::background(h, w);
        for y in 0..h {
            for x in 0..w {
                let mut rgb = background_color(&self.background, self.background_seed, y, x, h, w);
                let mut label = 0u8;
                for obj in &self.objects {
                    if obj.geometry.covers(y, x) {
                        let f = texture_pattern(&obj.texture, obj.phase, obj.texture_seed, y, x);
                        rgb = [obj.color[0] * f, obj.color[1] * f, obj.color[2] * f];
                        label = obj.class_id;
                    }
                }
                for (c, v) in rgb.iter().enumerate() {
                    img.set(c, y, x, v.clamp(0.0, 1.0));
                }
                labels.data_mut()[y * w + x] = label;
            }
        }
        (img, labels)
    }
}

/// Renders one flat-shaded synthetic scene; deterministic in `(cfg, seed)`.
pub fn generate_synthetic_scene(cfg: &SceneConfig, seed: u64) -> Result<LabeledSample> {
    let layout = sample_layout(cfg, seed)?;
    let (mut image, labels) = layout.rasterize();
    image.quantize_8bit();
    LabeledSample::new(format!("scene_{seed:06}"), Domain::Synthetic, image, labels)
}
