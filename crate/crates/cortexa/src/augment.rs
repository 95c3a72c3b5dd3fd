//! Training-time stochastic transforms: brightness/contrast jitter, in-plane
//! flips, and a rotation/zoom/translation resample.
//!
//! Transforms operate on spatial tensors (rank 2 slices or rank 3 volumes,
//! volume layout `[z, y, x]`). Rotation happens in the plane of the last two
//! axes — the axial plane for volumes — and out-of-bounds samples read as 0.
//! Every draw is a pure function of `(config seed, draw counter)`, so parallel
//! workers produce order-independent results.

use crate::engine::Tensor;
use crate::rng::{seeded, DOMAIN_AUGMENT};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("axis {axis} out of range for rank {rank}")]
    BadAxis { axis: usize, rank: usize },
    #[error("invalid augmentation config: {0}")]
    BadConfig(String),
}

/// Bounds for the per-sample transform draws. All magnitudes are "small" by
/// default and every knob can be widened or disabled in the training config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Additive brightness bound, intensity units: delta ~ U(-max, max).
    pub brightness_delta_max: f32,
    /// Multiplicative contrast about the foreground mean; must contain 1.
    pub contrast_factor_range: (f32, f32),
    /// In-plane rotation bound, degrees.
    pub rotation_max_deg: f32,
    /// Isotropic zoom factor range; must contain 1.
    pub zoom_range: (f32, f32),
    /// Per-axis integer translation bound, voxels.
    pub translation_max: i64,
    /// Probability of flipping each of the two in-plane axes.
    pub flip_probability: f64,
    pub seed: u64,
}

impl AugmentConfig {
    /// Degenerate bounds: the pipeline becomes the bit-exact identity.
    pub fn identity(seed: u64) -> Self {
        Self {
            brightness_delta_max: 0.0,
            contrast_factor_range: (1.0, 1.0),
            rotation_max_deg: 0.0,
            zoom_range: (1.0, 1.0),
            translation_max: 0,
            flip_probability: 0.0,
            seed,
        }
    }

    /// Default small magnitudes: brightness ±10, contrast [0.9, 1.1],
    /// rotation ±10°, zoom [0.9, 1.1], translation ±3, flips at 0.5.
    pub fn small(seed: u64) -> Self {
        Self {
            brightness_delta_max: 10.0,
            contrast_factor_range: (0.9, 1.1),
            rotation_max_deg: 10.0,
            zoom_range: (0.9, 1.1),
            translation_max: 3,
            flip_probability: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let (c0, c1) = self.contrast_factor_range;
        let (z0, z1) = self.zoom_range;
        let bad = |msg: String| Err(AugmentError::BadConfig(msg));
        if !(self.brightness_delta_max >= 0.0) {
            return bad(format!("brightness_delta_max {}", self.brightness_delta_max));
        }
        if !(c0 <= 1.0 && 1.0 <= c1 && c0 > 0.0) {
            return bad(format!("contrast_factor_range ({c0}, {c1}) must contain 1"));
        }
        if !(self.rotation_max_deg >= 0.0) {
            return bad(format!("rotation_max_deg {}", self.rotation_max_deg));
        }
        if !(z0 <= 1.0 && 1.0 <= z1 && z0 > 0.0) {
            return bad(format!("zoom_range ({z0}, {z1}) must contain 1"));
        }
        if self.translation_max < 0 {
            return bad(format!("translation_max {}", self.translation_max));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad(format!("flip_probability {}", self.flip_probability));
        }
        Ok(())
    }
}

/// `clamp((x − mean)·factor + mean + delta, 0, 255)` with the mean taken over
/// nonzero (foreground) elements; an all-zero tensor uses mean 0.
pub fn adjust_brightness_contrast(data: &Tensor<f32>, delta: f32, factor: f32) -> Tensor<f32> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for &v in data.data() {
        if v != 0.0 {
            sum += v as f64;
            count += 1;
        }
    }
    let mean = if count > 0 { (sum / count as f64) as f32 } else { 0.0 };
    let out = data
        .data()
        .iter()
        .map(|&x| ((x - mean) * factor + mean + delta).clamp(0.0, 255.0))
        .collect();
    Tensor::new(data.shape().to_vec(), out).expect("same shape")
}

/// Index reversal along one axis; an involution.
pub fn flip(data: &Tensor<f32>, axis: usize) -> Result<Tensor<f32>, AugmentError> {
    let shape = data.shape();
    if axis >= shape.len() {
        return Err(AugmentError::BadAxis {
            axis,
            rank: shape.len(),
        });
    }
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0f32; data.len()];
    let src = data.data();
    for o in 0..outer {
        let base = o * extent * inner;
        for i in 0..extent {
            let from = base + (extent - 1 - i) * inner;
            let to = base + i * inner;
            out[to..to + inner].copy_from_slice(&src[from..from + inner]);
        }
    }
    Ok(Tensor::new(shape.to_vec(), out).expect("same shape"))
}

/// Rotation about the grid center in the plane of the last two axes, isotropic
/// zoom, and integer translation, resampled with bilinear/trilinear
/// interpolation; samples outside the grid read as 0.
///
/// `translation` gives per-axis offsets in tensor axis order; content moves by
/// `+t` along each axis.
pub fn affine_resample(
    data: &Tensor<f32>,
    rotation_deg: f32,
    zoom: f32,
    translation: &[i64],
) -> Tensor<f32> {
    let shape = data.shape().to_vec();
    let rank = shape.len();
    assert!(
        (2..=3).contains(&rank) && translation.len() == rank,
        "affine_resample wants rank 2 or 3 and one offset per axis"
    );
    assert!(zoom > 0.0, "zoom must be positive");
    if rotation_deg == 0.0 && zoom == 1.0 && translation.iter().all(|t| *t == 0) {
        return data.clone();
    }

    let theta = (rotation_deg as f64).to_radians();
    let (sin, cos) = theta.sin_cos();
    let inv_zoom = 1.0 / zoom as f64;
    let centers: Vec<f64> = shape.iter().map(|&e| (e - 1) as f64 / 2.0).collect();

    let mut out = vec![0.0f32; data.len()];
    match rank {
        2 => {
            let (rows, cols) = (shape[0], shape[1]);
            for r in 0..rows {
                for c in 0..cols {
                    let du = r as f64 - centers[0] - translation[0] as f64;
                    let dv = c as f64 - centers[1] - translation[1] as f64;
                    let su = (cos * du + sin * dv) * inv_zoom + centers[0];
                    let sv = (-sin * du + cos * dv) * inv_zoom + centers[1];
                    out[r * cols + c] = sample2(data.data(), rows, cols, su, sv);
                }
            }
        }
        3 => {
            let (d0, d1, d2) = (shape[0], shape[1], shape[2]);
            for z in 0..d0 {
                let sz = (z as f64 - centers[0] - translation[0] as f64) * inv_zoom + centers[0];
                for y in 0..d1 {
                    for x in 0..d2 {
                        let du = y as f64 - centers[1] - translation[1] as f64;
                        let dv = x as f64 - centers[2] - translation[2] as f64;
                        let sy = (cos * du + sin * dv) * inv_zoom + centers[1];
                        let sx = (-sin * du + cos * dv) * inv_zoom + centers[2];
                        out[(z * d1 + y) * d2 + x] = sample3(data.data(), d0, d1, d2, sz, sy, sx);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    Tensor::new(shape, out).expect("same shape")
}

fn sample2(src: &[f32], rows: usize, cols: usize, u: f64, v: f64) -> f32 {
    let (u0, fu) = split(u);
    let (v0, fv) = split(v);
    let mut acc = 0.0f64;
    for (du, wu) in [(0i64, 1.0 - fu), (1, fu)] {
        if wu == 0.0 {
            continue;
        }
        for (dv, wv) in [(0i64, 1.0 - fv), (1, fv)] {
            if wv == 0.0 {
                continue;
            }
            let (r, c) = (u0 + du, v0 + dv);
            if r >= 0 && (r as usize) < rows && c >= 0 && (c as usize) < cols {
                acc += wu * wv * src[r as usize * cols + c as usize] as f64;
            }
        }
    }
    acc as f32
}

fn sample3(src: &[f32], d0: usize, d1: usize, d2: usize, z: f64, y: f64, x: f64) -> f32 {
    let (z0, fz) = split(z);
    let (y0, fy) = split(y);
    let (x0, fx) = split(x);
    let mut acc = 0.0f64;
    for (dz, wz) in [(0i64, 1.0 - fz), (1, fz)] {
        if wz == 0.0 {
            continue;
        }
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                if wx == 0.0 {
                    continue;
                }
                let (zz, yy, xx) = (z0 + dz, y0 + dy, x0 + dx);
                if zz >= 0
                    && (zz as usize) < d0
                    && yy >= 0
                    && (yy as usize) < d1
                    && xx >= 0
                    && (xx as usize) < d2
                {
                    let idx = (zz as usize * d1 + yy as usize) * d2 + xx as usize;
                    acc += wz * wy * wx * src[idx] as f64;
                }
            }
        }
    }
    acc as f32
}

#[inline]
fn split(x: f64) -> (i64, f64) {
    let f = x.floor();
    (f as i64, x - f)
}

/// Samples one parameter per transform from `cfg` and applies, in order:
/// brightness/contrast, flips of the two in-plane axes, then the affine
/// resample. Deterministic given `(cfg.seed, draw)`.
pub fn apply_augmentation(data: &Tensor<f32>, cfg: &AugmentConfig, draw: u64) -> Tensor<f32> {
    let rank = data.rank();
    assert!((2..=3).contains(&rank), "augmentation wants rank 2 or 3");
    let mut rng = seeded(cfg.seed, DOMAIN_AUGMENT, draw);

    let delta = rng.random_range(-cfg.brightness_delta_max..=cfg.brightness_delta_max);
    let factor = rng.random_range(cfg.contrast_factor_range.0..=cfg.contrast_factor_range.1);
    let flip_h = rng.random::<f64>() < cfg.flip_probability;
    let flip_v = rng.random::<f64>() < cfg.flip_probability;
    let rotation = rng.random_range(-cfg.rotation_max_deg..=cfg.rotation_max_deg);
    let zoom = rng.random_range(cfg.zoom_range.0..=cfg.zoom_range.1);
    let translation: Vec<i64> = (0..rank)
        .map(|_| rng.random_range(-cfg.translation_max..=cfg.translation_max))
        .collect();

    let mut out = if delta == 0.0 && factor == 1.0 {
        data.clone()
    } else {
        adjust_brightness_contrast(data, delta, factor)
    };
    if flip_h {
        out = flip(&out, rank - 1).expect("in-range axis");
    }
    if flip_v {
        out = flip(&out, rank - 2).expect("in-range axis");
    }
    if rotation != 0.0 || zoom != 1.0 || translation.iter().any(|t| *t != 0) {
        out = affine_resample(&out, rotation, zoom, &translation);
    }
    out
}
