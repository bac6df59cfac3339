//! Reader and writer for the simple `mvol` volume format.
//!
//! An `mvol` file is an ASCII header followed by a raw little-endian payload
//! in x-fastest order. The header is a sequence of `key value...` lines and is
//! terminated by a line containing only `end`:
//!
//! ```text
//! MVOL 1
//! dims 64 64 32
//! spacing 0.5 0.5 1.0
//! origin -16 -16 0
//! dtype f32
//! byte_order little
//! labels scan.labels.mvol
//! end
//! ```
//!
//! `labels` is optional and names a companion `mvol` file (relative to the
//! header's directory) with an integer dtype and identical geometry.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::VoxelGrid;
use crate::error::{Error, Result};

const MAGIC: &str = "MVOL 1";

/// Payload sample type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvolDtype {
    U8,
    I16,
    F32,
}

impl MvolDtype {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(MvolDtype::U8),
            "i16" => Ok(MvolDtype::I16),
            "f32" => Ok(MvolDtype::F32),
            other => Err(Error::UnsupportedDatatype(other.to_string())),
        }
    }

    fn name(self) -> &'static str {
        match self {
            MvolDtype::U8 => "u8",
            MvolDtype::I16 => "i16",
            MvolDtype::F32 => "f32",
        }
    }

    fn size(self) -> usize {
        match self {
            MvolDtype::U8 => 1,
            MvolDtype::I16 => 2,
            MvolDtype::F32 => 4,
        }
    }
}

struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: MvolDtype,
    labels: Option<String>,
}

fn parse_triple<T: std::str::FromStr>(key: &str, parts: &[&str]) -> Result<[T; 3]> {
    if parts.len() != 3 {
        return Err(Error::MalformedHeader(format!(
            "'{key}' expects 3 values, got {}",
            parts.len()
        )));
    }
    let parse = |s: &str| {
        s.parse::<T>()
            .map_err(|_| Error::MalformedHeader(format!("bad value '{s}' for '{key}'")))
    };
    Ok([parse(parts[0])?, parse(parts[1])?, parse(parts[2])?])
}

fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    // The header is ASCII; look for the terminating "end" line.
    let mut start = 0;
    while start < bytes.len() {
        let stop = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| start + p)
            .ok_or_else(|| Error::MalformedHeader("missing 'end' line".into()))?;
        let line = std::str::from_utf8(&bytes[start..stop])
            .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
        if line.trim_end_matches('\r') == "end" {
            let header = std::str::from_utf8(&bytes[..start])
                .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
            return Ok((header, &bytes[stop + 1..]));
        }
        start = stop + 1;
    }
    Err(Error::MalformedHeader("missing 'end' line".into()))
}

fn parse_header(text: &str) -> Result<Header> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    if lines.next() != Some(MAGIC) {
        return Err(Error::MalformedHeader(format!("expected '{MAGIC}' magic line")));
    }
    let (mut dims, mut spacing, mut origin, mut dtype, mut labels) = (None, None, None, None, None);
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let Some((&key, rest)) = parts.split_first() else {
            continue;
        };
        match key {
            "dims" => dims = Some(parse_triple::<usize>(key, rest)?),
            "spacing" => spacing = Some(parse_triple::<f64>(key, rest)?),
            "origin" => origin = Some(parse_triple::<f64>(key, rest)?),
            "dtype" => {
                let v = rest
                    .first()
                    .ok_or_else(|| Error::MalformedHeader("'dtype' needs a value".into()))?;
                dtype = Some(MvolDtype::parse(v)?);
            }
            "byte_order" => {
                if rest != ["little"] {
                    return Err(Error::MalformedHeader(format!("unsupported byte order {rest:?}")));
                }
            }
            "labels" => labels = Some(rest.join(" ")),
            other => return Err(Error::MalformedHeader(format!("unknown key '{other}'"))),
        }
    }
    let missing = |k: &str| Error::MalformedHeader(format!("missing '{k}'"));
    Ok(Header {
        dims: dims.ok_or_else(|| missing("dims"))?,
        spacing: spacing.ok_or_else(|| missing("spacing"))?,
        origin: origin.ok_or_else(|| missing("origin"))?,
        dtype: dtype.ok_or_else(|| missing("dtype"))?,
        labels,
    })
}

fn decode(payload: &[u8], dtype: MvolDtype, count: usize) -> Result<Vec<f64>> {
    let size = dtype.size();
    if payload.len() != count * size {
        return Err(Error::SizeMismatch {
            expected: count,
            found: payload.len() / size,
        });
    }
    Ok(match dtype {
        MvolDtype::U8 => payload.iter().map(|&b| b as f64).collect(),
        MvolDtype::I16 => payload
            .chunks_exact(2)
            .map(|c| LittleEndian::read_i16(c) as f64)
            .collect(),
        MvolDtype::F32 => payload
            .chunks_exact(4)
            .map(|c| LittleEndian::read_f32(c) as f64)
            .collect(),
    })
}

fn read_raw(path: &Path) -> Result<(Header, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (text, payload) = split_header(&bytes)?;
    let header = parse_header(text)?;
    if header.spacing.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::NonPositiveSpacing(header.spacing));
    }
    let count = header.dims.iter().product();
    let values = decode(payload, header.dtype, count)?;
    Ok((header, values))
}

/// Load an `mvol` volume, including its companion label file when declared.
pub fn load_mvol(path: &Path) -> Result<VoxelGrid> {
    let (header, values) = read_raw(path)?;
    let grid = VoxelGrid::new(header.dims, header.spacing, header.origin, values)?;
    let Some(label_name) = header.labels else {
        return Ok(grid);
    };
    let label_path = path.parent().unwrap_or(Path::new(".")).join(&label_name);
    let (lheader, lvalues) = read_raw(&label_path)?;
    if lheader.dtype == MvolDtype::F32 {
        return Err(Error::UnsupportedDatatype("label masks must be u8 or i16".into()));
    }
    if lheader.dims != header.dims || lheader.spacing != header.spacing || lheader.origin != header.origin {
        return Err(Error::MalformedHeader(format!(
            "label file {} does not share the volume geometry",
            label_path.display()
        )));
    }
    grid.with_labels(lvalues.into_iter().map(|v| v as i32).collect())
}

fn header_text(grid: &VoxelGrid, dtype: MvolDtype, labels: Option<&str>) -> String {
    let [nx, ny, nz] = grid.dims();
    let [sx, sy, sz] = grid.spacing();
    let [ox, oy, oz] = grid.origin();
    let mut h = format!(
        "{MAGIC}\ndims {nx} {ny} {nz}\nspacing {sx:?} {sy:?} {sz:?}\norigin {ox:?} {oy:?} {oz:?}\ndtype {}\nbyte_order little\n",
        dtype.name()
    );
    if let Some(l) = labels {
        h.push_str(&format!("labels {l}\n"));
    }
    h.push_str("end\n");
    h
}

fn encode(values: impl Iterator<Item = f64>, dtype: MvolDtype, out: &mut Vec<u8>) {
    for v in values {
        match dtype {
            MvolDtype::U8 => out.push(v.round().clamp(0.0, 255.0) as u8),
            MvolDtype::I16 => {
                let mut b = [0u8; 2];
                LittleEndian::write_i16(&mut b, v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16);
                out.extend_from_slice(&b);
            }
            MvolDtype::F32 => {
                let mut b = [0u8; 4];
                LittleEndian::write_f32(&mut b, v as f32);
                out.extend_from_slice(&b);
            }
        }
    }
}

fn write_file(path: &Path, header: String, payload: Vec<u8>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(header.as_bytes())
        .and_then(|_| f.write_all(&payload))
        .map_err(|e| Error::io(path, e))
}

/// Write `grid` as an `mvol` file. When the grid has labels they are written
/// to `<stem>.labels.mvol` (i16) next to it and referenced from the header.
pub fn write_mvol(path: &Path, grid: &VoxelGrid, dtype: MvolDtype) -> Result<()> {
    let label_name = grid.labels().map(|_| {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("volume");
        format!("{stem}.labels.mvol")
    });
    if let (Some(labels), Some(name)) = (grid.labels(), &label_name) {
        let mut payload = Vec::with_capacity(labels.len() * 2);
        encode(labels.iter().map(|&l| l as f64), MvolDtype::I16, &mut payload);
        let lpath = path.parent().unwrap_or(Path::new(".")).join(name);
        write_file(&lpath, header_text(grid, MvolDtype::I16, None), payload)?;
    }
    let mut payload = Vec::with_capacity(grid.len() * dtype.size());
    encode(grid.intensities().iter().copied(), dtype, &mut payload);
    write_file(path, header_text(grid, dtype, label_name.as_deref()), payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_identity_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mvol");
        let mut bytes = b"MVOL 1\ndims 2 2 2\nspacing 1 1 1\norigin 0 0 0\ndtype u8\nbyte_order little\nend\n".to_vec();
        bytes.extend(0u8..8);
        fs::write(&path, bytes).unwrap();
        let g = load_mvol(&path).unwrap();
        assert_eq!(g.dims(), [2, 2, 2]);
        assert_eq!(g.intensities(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert!(g.labels().is_none());
    }

    #[test]
    fn rejects_short_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mvol");
        let mut bytes = b"MVOL 1\ndims 4 4 4\nspacing 1 1 1\norigin 0 0 0\ndtype f32\nend\n".to_vec();
        bytes.extend(std::iter::repeat_n(0u8, 60 * 4));
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_mvol(&path),
            Err(Error::SizeMismatch {
                expected: 64,
                found: 60
            })
        ));
    }

    #[test]
    fn rejects_malformed_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mvol");
        for header in [
            "MVOL 2\ndims 1 1 1\nspacing 1 1 1\norigin 0 0 0\ndtype u8\nend\n",
            "MVOL 1\ndims 1 1\nspacing 1 1 1\norigin 0 0 0\ndtype u8\nend\n",
            "MVOL 1\ndims 1 1 1\nspacing 1 1 1\ndtype u8\nend\n",
            "MVOL 1\ndims 1 1 1\nspacing 1 1 1\norigin 0 0 0\ndtype u8\n",
            "MVOL 1\ndims 1 1 1\nspacing 1 1 1\norigin 0 0 0\ndtype u8\nbyte_order big\nend\n",
        ] {
            let mut bytes = header.as_bytes().to_vec();
            bytes.push(0);
            fs::write(&path, bytes).unwrap();
            assert!(matches!(load_mvol(&path), Err(Error::MalformedHeader(_))), "{header}");
        }
        let mut bytes = b"MVOL 1\ndims 1 1 1\nspacing 1 -1 1\norigin 0 0 0\ndtype u8\nend\n".to_vec();
        bytes.push(0);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_mvol(&path), Err(Error::NonPositiveSpacing(_))));
    }

    #[test]
    fn preserves_raw_hounsfield_units() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ct.mvol");
        let values = vec![-1000.0, -200.0, 0.0, 40.0, 700.0, 1500.0, 2200.0, 3000.0];
        let grid = VoxelGrid::new([2, 2, 2], [0.8, 0.8, 2.5], [-10.0, 4.0, 100.0], values.clone())
            .unwrap()
            .with_labels(vec![0, 0, 1, 1, 2, 2, 0, 3])
            .unwrap();
        write_mvol(&path, &grid, MvolDtype::I16).unwrap();
        let back = load_mvol(&path).unwrap();
        assert_eq!(back, grid);
        assert_eq!(back.intensity_range(), (-1000.0, 3000.0));
        assert!(dir.path().join("ct.labels.mvol").exists());
    }

    #[test]
    fn f32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.mvol");
        let values: Vec<f64> = (0..24).map(|i| (i as f32 * 0.37) as f64).collect();
        let grid = VoxelGrid::new([2, 3, 4], [0.5, 0.25, 1.0], [0.1, 0.2, 0.3], values).unwrap();
        write_mvol(&path, &grid, MvolDtype::F32).unwrap();
        assert_eq!(load_mvol(&path).unwrap(), grid);
    }
}
