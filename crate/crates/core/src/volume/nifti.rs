//! Minimal NIfTI-1 single-file (`n+1`) support.
//!
//! Only axis-aligned volumes are accepted. Axis flips in the affine are
//! resolved by reordering the payload so that spacing stays positive; any
//! rotation or axis permutation is rejected.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use nalgebra::{Matrix3, Vector3};

use super::VoxelGrid;
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

/// Sample types accepted by the reader and writer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDtype {
    U8,
    I16,
    F32,
}

impl NiftiDtype {
    fn code(self) -> i16 {
        match self {
            NiftiDtype::U8 => DT_UINT8,
            NiftiDtype::I16 => DT_INT16,
            NiftiDtype::F32 => DT_FLOAT32,
        }
    }

    fn from_code(code: i16) -> Result<Self> {
        match code {
            DT_UINT8 => Ok(NiftiDtype::U8),
            DT_INT16 => Ok(NiftiDtype::I16),
            DT_FLOAT32 => Ok(NiftiDtype::F32),
            other => Err(Error::UnsupportedDatatype(format!("NIfTI datatype code {other}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            NiftiDtype::U8 => 1,
            NiftiDtype::I16 => 2,
            NiftiDtype::F32 => 4,
        }
    }
}

struct Reader<'a, B> {
    bytes: &'a [u8],
    _order: std::marker::PhantomData<B>,
}

impl<'a, B: ByteOrder> Reader<'a, B> {
    fn i16(&self, off: usize) -> i16 {
        B::read_i16(&self.bytes[off..])
    }
    fn f32(&self, off: usize) -> f32 {
        B::read_f32(&self.bytes[off..])
    }
}

struct Parsed {
    dims: [usize; 3],
    dtype: NiftiDtype,
    vox_offset: usize,
    slope: f64,
    inter: f64,
    /// Rows of the voxel-to-world affine (mm).
    linear: Matrix3<f64>,
    offset: Vector3<f64>,
}

fn parse<B: ByteOrder>(bytes: &[u8]) -> Result<Parsed> {
    let r = Reader::<B> {
        bytes,
        _order: Default::default(),
    };
    let ndim = r.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for (axis, d) in dims.iter_mut().enumerate().take(ndim.min(3) as usize) {
        let v = r.i16(42 + 2 * axis);
        if v < 1 {
            return Err(Error::MalformedHeader(format!("dim[{}] = {v}", axis + 1)));
        }
        *d = v as usize;
    }
    for axis in 3..ndim as usize {
        if r.i16(42 + 2 * axis) > 1 {
            return Err(Error::UnsupportedDatatype("multi-volume NIfTI images".into()));
        }
    }
    let dtype = NiftiDtype::from_code(r.i16(70))?;
    let pixdim: Vec<f64> = (0..8).map(|i| r.f32(76 + 4 * i) as f64).collect();
    let vox_offset = r.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::MalformedHeader(format!("vox_offset = {vox_offset}")));
    }
    let raw_slope = r.f32(112) as f64;
    let (slope, inter) = if raw_slope != 0.0 && raw_slope.is_finite() {
        (raw_slope, r.f32(116) as f64)
    } else {
        (1.0, 0.0)
    };
    let qform_code = r.i16(252);
    let sform_code = r.i16(254);

    let (linear, offset) = if sform_code > 0 {
        let row = |base: usize| -> [f64; 4] { std::array::from_fn(|i| r.f32(base + 4 * i) as f64) };
        let (x, y, z) = (row(280), row(296), row(312));
        (
            Matrix3::new(x[0], x[1], x[2], y[0], y[1], y[2], z[0], z[1], z[2]),
            Vector3::new(x[3], y[3], z[3]),
        )
    } else if qform_code > 0 {
        let (b, c, d) = (r.f32(256) as f64, r.f32(260) as f64, r.f32(264) as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = Matrix3::new(
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - b * b - c * c,
        );
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = Matrix3::from_diagonal(&Vector3::new(pixdim[1], pixdim[2], pixdim[3] * qfac));
        (
            rot * scale,
            Vector3::new(r.f32(268) as f64, r.f32(272) as f64, r.f32(276) as f64),
        )
    } else {
        (
            Matrix3::from_diagonal(&Vector3::new(pixdim[1], pixdim[2], pixdim[3])),
            Vector3::zeros(),
        )
    };
    Ok(Parsed {
        dims,
        dtype,
        vox_offset: vox_offset as usize,
        slope,
        inter,
        linear,
        offset,
    })
}

/// Load a NIfTI-1 single-file image. Intensities are scaled by
/// `scl_slope`/`scl_inter` when the slope is non-zero.
pub fn load_nifti(path: &Path) -> Result<VoxelGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader("file shorter than a NIfTI-1 header".into()));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::MalformedHeader("missing 'n+1' magic".into()));
    }
    let parsed = if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse::<LittleEndian>(&bytes)?
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse::<BigEndian>(&bytes)?
    } else {
        return Err(Error::MalformedHeader("sizeof_hdr is not 348".into()));
    };
    let big_endian = LittleEndian::read_i32(&bytes[0..4]) != HEADER_SIZE as i32;

    let count: usize = parsed.dims.iter().product();
    let payload = &bytes[parsed.vox_offset.min(bytes.len())..];
    let needed = count * parsed.dtype.size();
    if payload.len() < needed {
        return Err(Error::SizeMismatch {
            expected: count,
            found: payload.len() / parsed.dtype.size(),
        });
    }
    let payload = &payload[..needed];
    let raw: Vec<f64> = match (parsed.dtype, big_endian) {
        (NiftiDtype::U8, _) => payload.iter().map(|&b| b as f64).collect(),
        (NiftiDtype::I16, false) => payload
            .chunks_exact(2)
            .map(|c| LittleEndian::read_i16(c) as f64)
            .collect(),
        (NiftiDtype::I16, true) => payload.chunks_exact(2).map(|c| BigEndian::read_i16(c) as f64).collect(),
        (NiftiDtype::F32, false) => payload
            .chunks_exact(4)
            .map(|c| LittleEndian::read_f32(c) as f64)
            .collect(),
        (NiftiDtype::F32, true) => payload.chunks_exact(4).map(|c| BigEndian::read_f32(c) as f64).collect(),
    };
    let values: Vec<f64> = raw.iter().map(|v| v * parsed.slope + parsed.inter).collect();

    // Axis-aligned check: every column has exactly one significant entry, on the diagonal.
    let m = parsed.linear;
    let scale = m.abs().max();
    if !(scale > 0.0) {
        return Err(Error::NonPositiveSpacing([m[(0, 0)], m[(1, 1)], m[(2, 2)]]));
    }
    for i in 0..3 {
        for j in 0..3 {
            if i != j && m[(i, j)].abs() > 1e-6 * scale {
                return Err(Error::ObliqueAffine(format!("affine entry ({i},{j}) = {}", m[(i, j)])));
            }
        }
    }
    let diag = [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
    if diag.iter().any(|d| *d == 0.0 || !d.is_finite()) {
        return Err(Error::NonPositiveSpacing(diag));
    }
    let flip = diag.map(|d| d < 0.0);
    let spacing = diag.map(f64::abs);
    let dims = parsed.dims;
    let origin: [f64; 3] = std::array::from_fn(|a| {
        if flip[a] {
            parsed.offset[a] + diag[a] * (dims[a] - 1) as f64
        } else {
            parsed.offset[a]
        }
    });
    let intensities = if flip.iter().any(|&f| f) {
        let mut out = vec![0.0; count];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let src = [x, y, z];
                    let dst: [usize; 3] = std::array::from_fn(|a| if flip[a] { dims[a] - 1 - src[a] } else { src[a] });
                    out[dst[0] + dims[0] * (dst[1] + dims[1] * dst[2])] = values[x + dims[0] * (y + dims[1] * z)];
                }
            }
        }
        out
    } else {
        values
    };
    VoxelGrid::new(dims, spacing, origin, intensities)
}

/// Write a little-endian NIfTI-1 single file with an axis-aligned sform.
/// Labels are not written; store masks as a separate image.
pub fn write_nifti(path: &Path, grid: &VoxelGrid, dtype: NiftiDtype) -> Result<()> {
    let mut h = vec![0u8; HEADER_SIZE + 4];
    LittleEndian::write_i32(&mut h[0..], HEADER_SIZE as i32);
    let dims = grid.dims();
    LittleEndian::write_i16(&mut h[40..], 3);
    for (i, d) in dims.iter().enumerate() {
        LittleEndian::write_i16(&mut h[42 + 2 * i..], *d as i16);
    }
    for i in 3..7 {
        LittleEndian::write_i16(&mut h[42 + 2 * i..], 1);
    }
    LittleEndian::write_i16(&mut h[70..], dtype.code());
    LittleEndian::write_i16(&mut h[72..], (dtype.size() * 8) as i16);
    let sp = grid.spacing();
    LittleEndian::write_f32(&mut h[76..], 1.0);
    for i in 0..3 {
        LittleEndian::write_f32(&mut h[80 + 4 * i..], sp[i] as f32);
    }
    LittleEndian::write_f32(&mut h[108..], (HEADER_SIZE + 4) as f32);
    LittleEndian::write_f32(&mut h[112..], 1.0);
    LittleEndian::write_i16(&mut h[254..], 1);
    let o = grid.origin();
    for row in 0..3 {
        let base = 280 + 16 * row;
        LittleEndian::write_f32(&mut h[base + 4 * row..], sp[row] as f32);
        LittleEndian::write_f32(&mut h[base + 12..], o[row] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    for &v in grid.intensities() {
        match dtype {
            NiftiDtype::U8 => h.push(v.round().clamp(0.0, 255.0) as u8),
            NiftiDtype::I16 => {
                let mut b = [0u8; 2];
                LittleEndian::write_i16(&mut b, v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16);
                h.extend_from_slice(&b);
            }
            NiftiDtype::F32 => {
                let mut b = [0u8; 4];
                LittleEndian::write_f32(&mut b, v as f32);
                h.extend_from_slice(&b);
            }
        }
    }
    fs::write(path, h).map_err(|e| Error::io(path, e))
}
