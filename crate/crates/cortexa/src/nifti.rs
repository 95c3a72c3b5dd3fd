//! Single-file NIfTI-1 reading and writing.
//!
//! Scope is deliberately narrow: `.nii` (optionally gzip-compressed on read),
//! 3D volumes, the five common voxel datatypes, either byte order on read,
//! always little-endian `f32` on write. Two-file `.hdr`/`.img` pairs are
//! rejected. Orientation fields are ignored — inputs are assumed to already
//! sit on the MNI-registered grid, so axis semantics are fixed
//! (x sagittal, y coronal, z axial).

use crate::engine::Tensor;
use byteorder::{BigEndian, ByteOrder, LittleEndian};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

pub const HEADER_SIZE: usize = 348;
pub const DATA_OFFSET: usize = 352;

const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_INT32: i16 = 8;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("not a single-file NIfTI-1 stream")]
    BadMagic,
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("non-finite voxel value after scaling")]
    NonFinite,
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The NIfTI-1 fields this toolkit actually interprets.
#[derive(Clone, Debug)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub magic: [u8; 4],
}

/// A 3D scalar grid indexed `(x, y, z)` with x fastest, plus voxel spacing
/// in millimetres. All values are finite `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: [usize; 3],
    spacing: [f32; 3],
    data: Vec<f32>,
    intensity_range: Option<(f32, f32)>,
}

impl Volume {
    pub fn new(shape: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Result<Self, NiftiError> {
        let n = shape[0] * shape[1] * shape[2];
        if data.len() != n {
            return Err(NiftiError::BadHeader(format!(
                "shape {shape:?} wants {n} voxels, got {}",
                data.len()
            )));
        }
        if shape.contains(&0) {
            return Err(NiftiError::BadHeader(format!("zero extent in {shape:?}")));
        }
        if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(NiftiError::BadHeader(format!("bad spacing {spacing:?}")));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(NiftiError::NonFinite);
        }
        Ok(Self {
            shape,
            spacing,
            data,
            intensity_range: None,
        })
    }

    /// Same-geometry volume with new (already validated finite) data.
    pub(crate) fn with_same_grid(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            shape: self.shape,
            spacing: self.spacing,
            data,
            intensity_range: None,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Min/max over all voxels, cached after the first call.
    pub fn intensity_range(&mut self) -> (f32, f32) {
        if let Some(r) = self.intensity_range {
            return r;
        }
        let r = self.compute_range();
        self.intensity_range = Some(r);
        r
    }

    /// Min/max over all voxels, without touching the cache.
    pub fn compute_range(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub(crate) fn set_range_cache(&mut self, range: (f32, f32)) {
        self.intensity_range = Some(range);
    }

    /// View as an engine tensor shaped `[z, y, x]` (identical memory order).
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(
            vec![self.shape[2], self.shape[1], self.shape[0]],
            self.data.clone(),
        )
        .expect("volume length matches its shape")
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Decode a complete single-file NIfTI-1 byte stream (optionally gzipped).
pub fn parse_nifti(bytes: &[u8]) -> Result<(NiftiHeader, Volume), NiftiError> {
    if is_gzip(bytes) {
        let mut raw = Vec::new();
        flate2::read::GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(NiftiError::Io)?;
        return parse_uncompressed(&raw);
    }
    parse_uncompressed(bytes)
}

fn parse_uncompressed(bytes: &[u8]) -> Result<(NiftiHeader, Volume), NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::Truncated {
            expected: HEADER_SIZE,
            actual: bytes.len(),
        });
    }
    if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        decode::<LittleEndian>(bytes)
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        decode::<BigEndian>(bytes)
    } else {
        Err(NiftiError::BadMagic)
    }
}

fn decode<E: ByteOrder>(bytes: &[u8]) -> Result<(NiftiHeader, Volume), NiftiError> {
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[344..348]);
    if &magic == MAGIC_PAIR || &magic != MAGIC_SINGLE {
        return Err(NiftiError::BadMagic);
    }

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = E::read_i16(&bytes[40 + 2 * i..42 + 2 * i]);
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = E::read_f32(&bytes[76 + 4 * i..80 + 4 * i]);
    }
    let header = NiftiHeader {
        sizeof_hdr: HEADER_SIZE as i32,
        dim,
        datatype: E::read_i16(&bytes[70..72]),
        bitpix: E::read_i16(&bytes[72..74]),
        pixdim,
        vox_offset: E::read_f32(&bytes[108..112]),
        scl_slope: E::read_f32(&bytes[112..116]),
        scl_inter: E::read_f32(&bytes[116..120]),
        magic,
    };

    let rank = header.dim[0];
    if !(1..=7).contains(&rank) {
        return Err(NiftiError::BadHeader(format!("dim[0] = {rank}")));
    }
    let ext = |i: usize| -> Result<usize, NiftiError> {
        if i as i16 > rank {
            return Ok(1);
        }
        let e = header.dim[i];
        if e < 1 {
            return Err(NiftiError::BadHeader(format!("dim[{i}] = {e}")));
        }
        Ok(e as usize)
    };
    let (nx, ny, nz) = (ext(1)?, ext(2)?, ext(3)?);
    for i in 4..=rank as usize {
        if header.dim[i] > 1 {
            return Err(NiftiError::BadHeader(format!(
                "only single 3D volumes supported, dim[{i}] = {}",
                header.dim[i]
            )));
        }
    }

    let elem = match header.datatype {
        DT_UINT8 => 1usize,
        DT_INT16 => 2,
        DT_INT32 => 4,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(NiftiError::UnsupportedDatatype(other)),
    };
    let expected_bitpix = (elem * 8) as i16;
    if header.bitpix != expected_bitpix {
        return Err(NiftiError::BadHeader(format!(
            "bitpix {} inconsistent with datatype {}",
            header.bitpix, header.datatype
        )));
    }
    if !header.vox_offset.is_finite() || header.vox_offset < DATA_OFFSET as f32 {
        return Err(NiftiError::BadHeader(format!(
            "vox_offset {}",
            header.vox_offset
        )));
    }
    let offset = header.vox_offset as usize;
    let nvox = nx * ny * nz;
    let need = offset + nvox * elem;
    if bytes.len() < need {
        return Err(NiftiError::Truncated {
            expected: need,
            actual: bytes.len(),
        });
    }

    let (slope, inter) = if header.scl_slope != 0.0 {
        (header.scl_slope, header.scl_inter)
    } else {
        (1.0, 0.0)
    };
    if !slope.is_finite() || !inter.is_finite() {
        return Err(NiftiError::NonFinite);
    }

    let raw = &bytes[offset..need];
    let mut data = Vec::with_capacity(nvox);
    match header.datatype {
        DT_UINT8 => {
            for &b in raw {
                data.push(b as f32 * slope + inter);
            }
        }
        DT_INT16 => {
            for i in 0..nvox {
                data.push(E::read_i16(&raw[2 * i..2 * i + 2]) as f32 * slope + inter);
            }
        }
        DT_INT32 => {
            for i in 0..nvox {
                data.push(E::read_i32(&raw[4 * i..4 * i + 4]) as f32 * slope + inter);
            }
        }
        DT_FLOAT32 => {
            for i in 0..nvox {
                data.push(E::read_f32(&raw[4 * i..4 * i + 4]) * slope + inter);
            }
        }
        DT_FLOAT64 => {
            for i in 0..nvox {
                let v = E::read_f64(&raw[8 * i..8 * i + 8]) * slope as f64 + inter as f64;
                data.push(v as f32);
            }
        }
        _ => unreachable!(),
    }
    if !data.iter().all(|v| v.is_finite()) {
        return Err(NiftiError::NonFinite);
    }

    let spacing_of = |i: usize| -> Result<f32, NiftiError> {
        let s = header.pixdim[i];
        if !(s > 0.0) || !s.is_finite() {
            return Err(NiftiError::BadHeader(format!("pixdim[{i}] = {s}")));
        }
        Ok(s)
    };
    let spacing = [spacing_of(1)?, spacing_of(2)?, spacing_of(3)?];

    let volume = Volume::new([nx, ny, nz], spacing, data)?;
    Ok((header, volume))
}

/// Serialize a volume as single-file NIfTI-1: datatype `f32`, `scl_slope = 1`,
/// `scl_inter = 0`, `vox_offset = 352`.
pub(crate) fn write_nifti_bytes_endian<E: ByteOrder>(volume: &Volume) -> Vec<u8> {
    let [nx, ny, nz] = volume.shape();
    let [sx, sy, sz] = volume.spacing();
    let mut out = vec![0u8; DATA_OFFSET + volume.len() * 4];

    E::write_i32(&mut out[0..4], HEADER_SIZE as i32);
    let dims: [i16; 8] = [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        E::write_i16(&mut out[40 + 2 * i..42 + 2 * i], *d);
    }
    E::write_i16(&mut out[70..72], DT_FLOAT32);
    E::write_i16(&mut out[72..74], 32);
    let pix: [f32; 8] = [1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pix.iter().enumerate() {
        E::write_f32(&mut out[76 + 4 * i..80 + 4 * i], *p);
    }
    E::write_f32(&mut out[108..112], DATA_OFFSET as f32);
    E::write_f32(&mut out[112..116], 1.0);
    E::write_f32(&mut out[116..120], 0.0);
    out[344..348].copy_from_slice(MAGIC_SINGLE);
    // 348..352 stays zero: no header extensions.

    for (i, v) in volume.data().iter().enumerate() {
        E::write_f32(&mut out[DATA_OFFSET + 4 * i..DATA_OFFSET + 4 * i + 4], *v);
    }
    out
}

pub fn write_nifti_bytes(volume: &Volume) -> Vec<u8> {
    write_nifti_bytes_endian::<LittleEndian>(volume)
}

/// Write a volume to disk atomically (temp file + rename).
pub fn write_nifti(volume: &Volume, path: &Path) -> Result<(), NiftiError> {
    let bytes = write_nifti_bytes(volume);
    let tmp = path.with_extension("nii.tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read and decode a `.nii` or `.nii.gz` file.
pub fn read_nifti(path: &Path) -> Result<(NiftiHeader, Volume), NiftiError> {
    let bytes = std::fs::read(path)?;
    parse_nifti(&bytes)
}
