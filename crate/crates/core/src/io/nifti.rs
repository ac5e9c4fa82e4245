//! Single-file NIfTI-1 subset: little-endian, 3 spatial dims, int16 or
//! float32 voxels. The header is 348 bytes followed by the 4-byte extension
//! flag, so voxel data starts at byte 352.
//!
//! Orientation is reduced to pixdim plus an origin offset: the writer stores
//! the origin in both `qoffset_*` and the sform translation column, and the
//! reader prefers the sform when `sform_code > 0`.

use crate::model::{GridMeta, LabelVolume, ModelError, ScalarVolume};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const HEADER_SIZE: usize = 348;
pub const DATA_OFFSET: usize = 352;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("truncated file: need {needed} bytes, found {actual} ({} bytes short)", needed - actual)]
    Truncated { needed: usize, actual: usize },
    #[error("not a single-file NIfTI-1 (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("sizeof_hdr is {0}, expected 348 (big-endian files are not supported)")]
    BadHeaderSize(i32),
    #[error("unsupported datatype code {0} (only 4 = int16 and 16 = float32)")]
    UnsupportedDatatype(i16),
    #[error("expected 3 spatial dimensions, header declares {0}")]
    DimCount(i16),
    #[error("invalid grid: {0}")]
    Grid(#[from] ModelError),
    #[error("value at voxel {index} is not representable as finite float32")]
    NonFinite { index: usize },
    #[error("label {value} at voxel {index} does not fit int16")]
    LabelRange { index: usize, value: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NiftiError + '_ {
    move |source| NiftiError::Io { path: path.display().to_string(), source }
}

fn rd_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn rd_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn rd_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn wr_i16(b: &mut [u8], off: usize, v: i16) {
    b[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn wr_i32(b: &mut [u8], off: usize, v: i32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn wr_f32(b: &mut [u8], off: usize, v: f32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

/// Parses an in-memory NIfTI-1 file.
pub fn parse_nifti(bytes: &[u8]) -> Result<ScalarVolume, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::Truncated { needed: HEADER_SIZE, actual: bytes.len() });
    }
    let sizeof_hdr = rd_i32(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(NiftiError::BadHeaderSize(sizeof_hdr));
    }
    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic != b"n+1\0" {
        return Err(NiftiError::BadMagic(magic));
    }
    let ndim = rd_i16(bytes, 40);
    if ndim != 3 {
        return Err(NiftiError::DimCount(ndim));
    }
    let mut dims = [0usize; 3];
    for (axis, d) in dims.iter_mut().enumerate() {
        *d = rd_i16(bytes, 42 + 2 * axis).max(0) as usize;
    }
    let datatype = rd_i16(bytes, 70);
    let width = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(NiftiError::UnsupportedDatatype(other)),
    };
    let mut spacing = [0f64; 3];
    for (axis, s) in spacing.iter_mut().enumerate() {
        *s = rd_f32(bytes, 80 + 4 * axis) as f64;
    }
    let vox_offset = (rd_f32(bytes, 108).max(DATA_OFFSET as f32)) as usize;
    let slope = rd_f32(bytes, 112) as f64;
    let inter = rd_f32(bytes, 116) as f64;
    let qform_code = rd_i16(bytes, 252);
    let sform_code = rd_i16(bytes, 254);
    let origin = if sform_code > 0 {
        [rd_f32(bytes, 280 + 12), rd_f32(bytes, 296 + 12), rd_f32(bytes, 312 + 12)]
    } else if qform_code > 0 {
        [rd_f32(bytes, 268), rd_f32(bytes, 272), rd_f32(bytes, 276)]
    } else {
        [0.0; 3]
    }
    .map(|v| v as f64);

    let meta = GridMeta::new(dims, spacing, origin)?;
    let n = meta.len();
    let needed = vox_offset + n * width;
    if bytes.len() < needed {
        return Err(NiftiError::Truncated { needed, actual: bytes.len() });
    }
    let payload = &bytes[vox_offset..needed];
    let raw: Vec<f64> = match datatype {
        DT_INT16 => payload.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        _ => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
    };
    let data = if slope != 0.0 && slope.is_finite() {
        let inter = if inter.is_finite() { inter } else { 0.0 };
        raw.into_iter().map(|v| v * slope + inter).collect()
    } else {
        raw
    };
    Ok(ScalarVolume::new(meta, data)?)
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<ScalarVolume, NiftiError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_nifti(&bytes)
}

fn header(meta: &GridMeta, datatype: i16) -> Vec<u8> {
    let mut h = vec![0u8; DATA_OFFSET];
    wr_i32(&mut h, 0, HEADER_SIZE as i32);
    wr_i16(&mut h, 40, 3);
    for axis in 0..3 {
        wr_i16(&mut h, 42 + 2 * axis, meta.dims[axis] as i16);
    }
    for k in 3..7 {
        wr_i16(&mut h, 42 + 2 * k, 1);
    }
    wr_i16(&mut h, 70, datatype);
    wr_i16(&mut h, 72, if datatype == DT_INT16 { 16 } else { 32 });
    wr_f32(&mut h, 76, 1.0); // qfac
    for axis in 0..3 {
        wr_f32(&mut h, 80 + 4 * axis, meta.spacing[axis] as f32);
    }
    wr_f32(&mut h, 108, DATA_OFFSET as f32);
    wr_f32(&mut h, 112, 1.0);
    wr_f32(&mut h, 116, 0.0);
    h[123] = 2; // mm
    wr_i16(&mut h, 252, 1);
    wr_i16(&mut h, 254, 1);
    for axis in 0..3 {
        wr_f32(&mut h, 268 + 4 * axis, meta.origin[axis] as f32);
        let row = 280 + 16 * axis;
        wr_f32(&mut h, row + 4 * axis, meta.spacing[axis] as f32);
        wr_f32(&mut h, row + 12, meta.origin[axis] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

/// Encodes a float32 NIfTI-1 file. Values must be finite in float32.
pub fn encode_f32(meta: &GridMeta, data: &[f64]) -> Result<Vec<u8>, NiftiError> {
    meta.validate()?;
    if data.len() != meta.len() {
        return Err(ModelError::LengthMismatch { expected: meta.len(), actual: data.len() }.into());
    }
    let mut out = header(meta, DT_FLOAT32);
    out.reserve(data.len() * 4);
    for (index, &v) in data.iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(NiftiError::NonFinite { index });
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), NiftiError> {
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_nifti(vol: &ScalarVolume, path: impl AsRef<Path>) -> Result<(), NiftiError> {
    write_bytes(path.as_ref(), &encode_f32(vol.meta(), vol.data())?)
}

/// Writes an int16 label map (connected-component or region labels).
pub fn write_label_nifti(meta: &GridMeta, labels: &[u32], path: impl AsRef<Path>) -> Result<(), NiftiError> {
    if labels.len() != meta.len() {
        return Err(ModelError::LengthMismatch { expected: meta.len(), actual: labels.len() }.into());
    }
    let mut out = header(meta, DT_INT16);
    for (index, &v) in labels.iter().enumerate() {
        let v16 = i16::try_from(v).map_err(|_| NiftiError::LabelRange { index, value: v })?;
        out.extend_from_slice(&v16.to_le_bytes());
    }
    write_bytes(path.as_ref(), &out)
}

pub fn write_region_labels(labels: &LabelVolume, path: impl AsRef<Path>) -> Result<(), NiftiError> {
    write_label_nifti(labels.meta(), labels.data(), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> GridMeta {
        GridMeta::new([2, 2, 2], [1.6, 1.6, 5.0], [-10.0, 4.0, 2.5]).unwrap()
    }

    #[test]
    fn constant_volume_file_size() {
        let bytes = encode_f32(&meta(), &[3.0; 8]).unwrap();
        assert_eq!(bytes.len(), 352 + 32);
    }

    #[test]
    fn round_trip_meta_and_data() {
        let data: Vec<f64> = (0..8).map(|i| i as f64 * 0.5 - 1.0).collect();
        let vol = ScalarVolume::new(meta(), data).unwrap();
        let back = parse_nifti(&encode_f32(vol.meta(), vol.data()).unwrap()).unwrap();
        assert_eq!(back.data(), vol.data());
        assert_eq!(back.meta().dims, [2, 2, 2]);
        for axis in 0..3 {
            assert_eq!(back.meta().spacing[axis], vol.meta().spacing[axis] as f32 as f64);
            assert_eq!(back.meta().origin[axis], vol.meta().origin[axis] as f32 as f64);
        }
    }

    #[test]
    fn int16_with_scaling() {
        let m = GridMeta::new([1, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let mut bytes = header(&m, DT_INT16);
        wr_f32(&mut bytes, 112, 2.0);
        wr_f32(&mut bytes, 116, 1.0);
        bytes.extend_from_slice(&3i16.to_le_bytes());
        assert_eq!(parse_nifti(&bytes).unwrap().data(), &[7.0]);
    }

    #[test]
    fn zero_slope_means_unscaled() {
        let m = GridMeta::new([1, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let mut bytes = header(&m, DT_INT16);
        wr_f32(&mut bytes, 112, 0.0);
        wr_f32(&mut bytes, 116, 5.0);
        bytes.extend_from_slice(&3i16.to_le_bytes());
        assert_eq!(parse_nifti(&bytes).unwrap().data(), &[3.0]);
    }

    #[test]
    fn truncated_reports_shortfall() {
        let mut bytes = encode_f32(&meta(), &[1.0; 8]).unwrap();
        bytes.truncate(bytes.len() - 5);
        let err = parse_nifti(&bytes).unwrap_err();
        assert!(matches!(err, NiftiError::Truncated { needed: 384, actual: 379 }));
        assert!(err.to_string().contains("5 bytes short"));
        assert!(matches!(parse_nifti(&bytes[..100]), Err(NiftiError::Truncated { needed: 348, actual: 100 })));
    }

    #[test]
    fn header_validation_errors() {
        let good = encode_f32(&meta(), &[1.0; 8]).unwrap();
        let mut bad = good.clone();
        bad[344] = b'x';
        assert!(matches!(parse_nifti(&bad), Err(NiftiError::BadMagic(_))));
        let mut bad = good.clone();
        wr_i16(&mut bad, 70, 64);
        assert!(matches!(parse_nifti(&bad), Err(NiftiError::UnsupportedDatatype(64))));
        let mut bad = good;
        wr_i16(&mut bad, 40, 4);
        assert!(matches!(parse_nifti(&bad), Err(NiftiError::DimCount(4))));
    }

    #[test]
    fn refuses_non_finite() {
        assert!(matches!(encode_f32(&meta(), &[1.0, f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), Err(NiftiError::NonFinite { index: 1 })));
        assert!(matches!(encode_f32(&meta(), &[1e300; 8]), Err(NiftiError::NonFinite { index: 0 })));
    }

    #[test]
    fn labels_written_as_int16() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.nii");
        write_label_nifti(&meta(), &[0, 1, 2, 3, 4, 5, 6, 0], &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 352 + 16);
        let back = read_nifti(&path).unwrap();
        assert_eq!(back.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0]);
    }
}
