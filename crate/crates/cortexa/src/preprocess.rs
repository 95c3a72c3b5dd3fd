//! Intensity preprocessing: reference quantile table, histogram matching,
//! 0–255 min-max scaling, central axial slice extraction, and center cropping.
//!
//! Voxels equal to exactly 0 are skull-stripped background: they are excluded
//! from the empirical CDFs used for matching and always stay 0. Min-max
//! statistics run over all voxels so that rescaling an already scaled volume
//! is the exact identity.

use crate::nifti::Volume;
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("no input volumes")]
    EmptyInput,
    #[error("volume {0} has no nonzero voxels")]
    AllZeroVolume(String),
    #[error("volume has fewer than two distinct intensities")]
    DegenerateVolume,
    #[error("need at least two quantile levels, got {0}")]
    TooFewLevels(usize),
    #[error("cannot take {k} central slices from a stack of {z}")]
    KTooLarge { k: usize, z: usize },
    #[error("crop target {target_rows}x{target_cols} exceeds source {rows}x{cols}")]
    TargetTooLarge {
        target_rows: usize,
        target_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid quantile table: {0}")]
    BadTable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A sampled inverse CDF: intensity values at evenly spaced quantile levels,
/// averaged over the reference volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileTable {
    levels: Vec<f64>,
    values: Vec<f64>,
}

impl QuantileTable {
    pub fn new(levels: Vec<f64>, values: Vec<f64>) -> Result<Self, PreprocessError> {
        if levels.len() < 2 {
            return Err(PreprocessError::TooFewLevels(levels.len()));
        }
        if levels.len() != values.len() {
            return Err(PreprocessError::BadTable(format!(
                "{} levels vs {} values",
                levels.len(),
                values.len()
            )));
        }
        if levels[0] != 0.0 || *levels.last().unwrap() != 1.0 {
            return Err(PreprocessError::BadTable(
                "levels must start at 0 and end at 1".into(),
            ));
        }
        if levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PreprocessError::BadTable(
                "levels must be strictly increasing".into(),
            ));
        }
        if values.windows(2).any(|w| w[1] < w[0]) || values.iter().any(|v| !v.is_finite()) {
            return Err(PreprocessError::BadTable(
                "values must be finite and non-decreasing".into(),
            ));
        }
        Ok(Self { levels, values })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest gap between adjacent table values: the "quantization step"
    /// tolerance unit for matching tests.
    pub fn max_step(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Piecewise-linear interpolation of the inverse CDF at level `p`.
    pub fn interp(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self
            .levels
            .binary_search_by(|l| l.partial_cmp(&p).expect("finite levels"))
        {
            Ok(i) => self.values[i],
            Err(i) => {
                let (l0, l1) = (self.levels[i - 1], self.levels[i]);
                let (v0, v1) = (self.values[i - 1], self.values[i]);
                v0 + (p - l0) / (l1 - l0) * (v1 - v0)
            }
        }
    }

    /// Two-column CSV with a `level,value` header line.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("level,value\n");
        for (l, v) in self.levels.iter().zip(&self.values) {
            out.push_str(&format!("{l},{v}\n"));
        }
        out
    }

    pub fn from_csv_string(text: &str) -> Result<Self, PreprocessError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "level,value" => {}
            other => {
                return Err(PreprocessError::BadTable(format!(
                    "expected 'level,value' header, got {other:?}"
                )))
            }
        }
        let mut levels = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (l, v) = line.split_once(',').ok_or_else(|| {
                PreprocessError::BadTable(format!("row {}: missing comma", i + 2))
            })?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| PreprocessError::BadTable(format!("row {}: {e}", i + 2)))
            };
            levels.push(parse(l)?);
            values.push(parse(v)?);
        }
        Self::new(levels, values)
    }

    pub fn save(&self, path: &Path) -> Result<(), PreprocessError> {
        let tmp = path.with_extension("csv.tmp");
        std::fs::write(&tmp, self.to_csv_string())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        Self::from_csv_string(&std::fs::read_to_string(path)?)
    }
}

/// Sorted nonzero voxel values of a volume, as `f64`.
fn sorted_foreground(volume: &Volume) -> Vec<f64> {
    let mut fg: Vec<f64> = volume
        .data()
        .iter()
        .filter(|v| **v != 0.0)
        .map(|v| *v as f64)
        .collect();
    fg.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite voxels"));
    fg
}

/// Empirical quantile of a sorted sample with linear interpolation between
/// order statistics (`h = p·(n−1)`).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Builds the matching reference: per quantile level, the mean over volumes
/// of that volume's empirical foreground quantile.
pub fn build_reference_histogram(
    volumes: &[Volume],
    q: usize,
) -> Result<QuantileTable, PreprocessError> {
    if volumes.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    if q < 2 {
        return Err(PreprocessError::TooFewLevels(q));
    }
    let levels: Vec<f64> = (0..q).map(|i| i as f64 / (q - 1) as f64).collect();

    // Per-volume quantiles in parallel, combined by mean in fixed index order.
    let per_volume: Vec<Result<Vec<f64>, PreprocessError>> = volumes
        .par_iter()
        .enumerate()
        .map(|(vi, vol)| {
            let fg = sorted_foreground(vol);
            if fg.is_empty() {
                return Err(PreprocessError::AllZeroVolume(format!("#{vi}")));
            }
            Ok(levels.iter().map(|&p| quantile_sorted(&fg, p)).collect())
        })
        .collect();

    let mut sums = vec![0.0f64; q];
    for qs in per_volume {
        for (s, v) in sums.iter_mut().zip(qs?) {
            *s += v;
        }
    }
    let inv = 1.0 / volumes.len() as f64;
    let values: Vec<f64> = sums.into_iter().map(|s| s * inv).collect();
    QuantileTable::new(levels, values)
}

/// Midpoint-rank empirical CDF position of each distinct foreground value,
/// scaled so the extremes land exactly on 0 and 1:
/// `F(v) = (#{x < v} + #{x ≤ v} − 1) / (2(N − 1))`.
fn foreground_cdf(sorted: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = sorted.len();
    let denom = (2 * (n - 1)) as f64;
    let mut uniq = Vec::new();
    let mut cdf = Vec::new();
    let mut i = 0usize;
    while i < n {
        let v = sorted[i];
        let mut j = i;
        while j < n && sorted[j] == v {
            j += 1;
        }
        uniq.push(v);
        cdf.push((i + j - 1) as f64 / denom);
        i = j;
    }
    (uniq, cdf)
}

/// Monotone remap of foreground intensities onto the reference distribution:
/// each nonzero voxel `v` maps to `ref.interp(F(v))`; background stays 0.
pub fn histogram_match(volume: &Volume, table: &QuantileTable) -> Result<Volume, PreprocessError> {
    let fg = sorted_foreground(volume);
    if fg.is_empty() {
        return Err(PreprocessError::AllZeroVolume("input".into()));
    }
    let (uniq, cdf) = foreground_cdf(&fg);
    if uniq.len() < 2 {
        return Err(PreprocessError::DegenerateVolume);
    }
    let mapped: Vec<f64> = cdf.iter().map(|&p| table.interp(p)).collect();

    let data: Vec<f32> = volume
        .data()
        .iter()
        .map(|&v| {
            if v == 0.0 {
                0.0
            } else {
                let i = uniq
                    .binary_search_by(|u| u.partial_cmp(&(v as f64)).expect("finite"))
                    .expect("every foreground value is in the table");
                mapped[i] as f32
            }
        })
        .collect();
    Ok(volume.with_same_grid(data))
}

/// Affine rescale onto `[0, 255]`: `(v − min) · 255 / (max − min)` over all
/// voxels. The extremes are forced to exactly 0 and 255, which also makes the
/// operation exactly idempotent.
pub fn minmax_normalize(volume: &Volume) -> Result<Volume, PreprocessError> {
    let (lo, hi) = volume.compute_range();
    if lo == hi {
        return Err(PreprocessError::DegenerateVolume);
    }
    let scale = 255.0f32 / (hi - lo);
    let data: Vec<f32> = volume
        .data()
        .iter()
        .map(|&v| {
            if v == hi {
                255.0
            } else if v == lo {
                0.0
            } else {
                ((v - lo) * scale).clamp(0.0, 255.0)
            }
        })
        .collect();
    let mut out = volume.with_same_grid(data);
    out.set_range_cache((0.0, 255.0));
    Ok(out)
}

/// One axial (x–y) plane of a volume, row-major with rows = x, cols = y.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
    pub source_index: usize,
    pub subject_id: String,
}

impl Slice {
    pub fn new(
        data: Vec<f32>,
        rows: usize,
        cols: usize,
        source_index: usize,
        subject_id: String,
    ) -> Self {
        assert_eq!(data.len(), rows * cols, "slice data length");
        Self {
            data,
            rows,
            cols,
            source_index,
            subject_id,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn to_tensor(&self) -> crate::engine::Tensor<f32> {
        crate::engine::Tensor::new(vec![self.rows, self.cols], self.data.clone())
            .expect("slice length matches shape")
    }
}

/// The `k` central axial slices, ascending in z, starting at `⌊(Z − k)/2⌋`.
pub fn extract_center_slices(
    volume: &Volume,
    k: usize,
    subject_id: &str,
) -> Result<Vec<Slice>, PreprocessError> {
    let [nx, ny, nz] = volume.shape();
    if k == 0 || k > nz {
        return Err(PreprocessError::KTooLarge { k, z: nz });
    }
    let start = (nz - k) / 2;
    let slices = (start..start + k)
        .map(|z| {
            let mut data = Vec::with_capacity(nx * ny);
            for x in 0..nx {
                for y in 0..ny {
                    data.push(volume.get(x, y, z));
                }
            }
            Slice::new(data, nx, ny, z, subject_id.to_string())
        })
        .collect();
    Ok(slices)
}

/// Central sub-grid of a slice; offsets round down on odd margins.
pub fn center_crop(slice: &Slice, rows: usize, cols: usize) -> Result<Slice, PreprocessError> {
    if rows == 0 || cols == 0 || rows > slice.rows || cols > slice.cols {
        return Err(PreprocessError::TargetTooLarge {
            target_rows: rows,
            target_cols: cols,
            rows: slice.rows,
            cols: slice.cols,
        });
    }
    let r0 = (slice.rows - rows) / 2;
    let c0 = (slice.cols - cols) / 2;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let src = (r0 + r) * slice.cols + c0;
        data.extend_from_slice(&slice.data[src..src + cols]);
    }
    Ok(Slice::new(
        data,
        rows,
        cols,
        slice.source_index,
        slice.subject_id.clone(),
    ))
}
