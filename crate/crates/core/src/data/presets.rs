//! Desk-scale domain pair. Both domains share object appearance; the
//! pseudo-real one uses a disjoint set of darker, textured backgrounds and
//! fixed-strength camera effects.

use super::camera::CameraEffectConfig;
use super::scene::{Background, SceneConfig, ShapeKind, ShapeStyle, Texture};

fn object_palette() -> Vec<ShapeStyle> {
    vec![
        ShapeStyle {
            kind: ShapeKind::Circle,
            color: [0.85, 0.22, 0.15],
            texture: Texture::Stripes { period: 4.0, contrast: 0.3 },
        },
        ShapeStyle {
            kind: ShapeKind::Rectangle,
            color: [0.2, 0.7, 0.25],
            texture: Texture::Checker { period: 5.0, contrast: 0.3 },
        },
        ShapeStyle {
            kind: ShapeKind::Triangle,
            color: [0.2, 0.3, 0.85],
            texture: Texture::Flat,
        },
        ShapeStyle {
            kind: ShapeKind::Ellipse,
            color: [0.9, 0.8, 0.2],
            texture: Texture::Speckle { contrast: 0.3 },
        },
        ShapeStyle {
            kind: ShapeKind::Circle,
            color: [0.6, 0.25, 0.7],
            texture: Texture::Checker { period: 3.0, contrast: 0.25 },
        },
        ShapeStyle {
            kind: ShapeKind::Rectangle,
            color: [0.2, 0.75, 0.8],
            texture: Texture::Stripes { period: 3.0, contrast: 0.3 },
        },
    ]
}

/// Clean synthetic look: light, untextured tabletops.
pub fn synthetic_scene(size: usize, num_classes: usize) -> SceneConfig {
    let mut palette = object_palette();
    palette.truncate(num_classes.saturating_sub(1));
    SceneConfig {
        image_size: (size, size),
        num_classes,
        objects_per_scene: (2, 5),
        object_scale: (0.12, 0.25),
        color_jitter: 0.08,
        shape_palette: palette,
        background_palette: vec![
            Background::Solid { color: [0.78, 0.78, 0.78] },
            Background::Gradient { from: [0.85, 0.82, 0.74], to: [0.97, 0.97, 0.95] },
            Background::Checker { a: [0.8, 0.8, 0.82], b: [0.7, 0.7, 0.72], period: 8.0 },
        ],
        rng_seed: 0x5EED_0001,
    }
}

/// Same objects as [`synthetic_scene`] on darker, textured backgrounds.
pub fn pseudo_real_scene(size: usize, num_classes: usize) -> SceneConfig {
    SceneConfig {
        background_palette: vec![
            Background::Stripes { a: [0.45, 0.31, 0.2], b: [0.38, 0.26, 0.17], period: 3.0 },
            Background::Speckle { color: [0.36, 0.4, 0.36], contrast: 0.5 },
            Background::Gradient { from: [0.25, 0.24, 0.3], to: [0.5, 0.46, 0.42] },
        ],
        rng_seed: 0x5EED_0002,
        ..synthetic_scene(size, num_classes)
    }
}

pub fn pseudo_real_camera() -> CameraEffectConfig {
    CameraEffectConfig {
        noise_sigma: 0.03,
        chromatic_shift_px: [(0.6, 0.0), (0.0, 0.0), (-0.6, 0.0)],
        white_balance_gain: [1.1, 0.95, 0.8],
        exposure_gamma: 1.4,
        vignette_strength: 0.35,
    }
}
