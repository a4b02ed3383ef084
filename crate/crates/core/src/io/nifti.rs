//! NIfTI-1 single-file (`.nii`, `.nii.gz`) reading and writing.
//!
//! Reads either byte order, detected from `dim[0]`; writes little-endian with
//! `vox_offset = 352`, an sform built from the grid affine and unit scaling.
//! Trailing singleton dimensions beyond the third are squeezed.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{Affine, Grid, LabelVolume, ProbVolume, TissueClass, Volume};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: [u8; 4] = *b"n+1\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
    U16,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
            Datatype::U16 => 512,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            512 => Datatype::U16,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    pub fn size(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 | Datatype::U16 => 2,
            Datatype::I32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }

    fn range(self) -> Option<(f64, f64)> {
        match self {
            Datatype::U8 => Some((0.0, u8::MAX as f64)),
            Datatype::I16 => Some((i16::MIN as f64, i16::MAX as f64)),
            Datatype::I32 => Some((i32::MIN as f64, i32::MAX as f64)),
            Datatype::U16 => Some((0.0, u16::MAX as f64)),
            Datatype::F32 | Datatype::F64 => None,
        }
    }
}

/// Decoded image: grid, scaled voxel values and on-disk datatype.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiImage {
    pub grid: Grid,
    pub data: Vec<f64>,
    pub datatype: Datatype,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        match GzDecoder::new(&raw[..]).read_to_end(&mut out) {
            Ok(_) => Ok(out),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::UnexpectedEof {
                offset: out.len() as u64,
            }),
            Err(e) => Err(e.into()),
        }
    } else {
        Ok(raw)
    }
}

struct Fields<'a> {
    buf: &'a [u8],
    big: bool,
}

impl Fields<'_> {
    fn i16(&self, at: usize) -> i16 {
        if self.big {
            BigEndian::read_i16(&self.buf[at..])
        } else {
            LittleEndian::read_i16(&self.buf[at..])
        }
    }

    fn f32(&self, at: usize) -> f64 {
        (if self.big {
            BigEndian::read_f32(&self.buf[at..])
        } else {
            LittleEndian::read_f32(&self.buf[at..])
        }) as f64
    }
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    read_file(path)
        .and_then(|b| decode_nifti(&b))
        .map_err(|e| e.at_path(path))
}

pub fn decode_nifti(buf: &[u8]) -> Result<NiftiImage> {
    if buf.len() < HEADER_SIZE {
        return Err(Error::UnexpectedEof {
            offset: buf.len() as u64,
        });
    }
    let magic: [u8; 4] = buf[344..348].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let le = LittleEndian::read_i16(&buf[40..]);
    let h = Fields {
        buf,
        big: !(1..=7).contains(&le),
    };
    let ndim = h.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::BadDimensions(format!("dim[0] = {ndim}")));
    }
    let mut dim: Vec<i16> = (1..=ndim as usize).map(|i| h.i16(40 + 2 * i)).collect();
    if let Some(&d) = dim.iter().find(|&&d| d < 1) {
        return Err(Error::BadDimensions(format!("non-positive extent {d} in {dim:?}")));
    }
    while dim.len() > 3 && dim.last() == Some(&1) {
        dim.pop();
    }
    if dim.len() != 3 {
        return Err(Error::BadDimensions(format!("expected 3 dimensions, got {dim:?}")));
    }
    let dims = [dim[0] as usize, dim[1] as usize, dim[2] as usize];
    let datatype = Datatype::from_code(h.i16(70))?;

    let pixdim: [f64; 8] = std::array::from_fn(|i| h.f32(76 + 4 * i));
    let affine = header_affine(&h, &pixdim);
    let spacing: [f64; 3] = std::array::from_fn(|a| {
        let p = pixdim[a + 1].abs();
        if p.is_finite() && p > 0.0 {
            p
        } else {
            let n = (0..3).map(|r| affine[r][a] * affine[r][a]).sum::<f64>().sqrt();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        }
    });
    let grid = Grid::with_affine(dims, spacing, affine)?;

    let vox_offset = h.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f64) {
        return Err(Error::BadDimensions(format!("vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let n = grid.len();
    let end = start + n * datatype.size();
    if buf.len() < end {
        return Err(Error::UnexpectedEof {
            offset: buf.len() as u64,
        });
    }
    let data = &buf[start..end];
    let mut values = if h.big {
        decode_values::<BigEndian>(data, datatype)
    } else {
        decode_values::<LittleEndian>(data, datatype)
    };

    let slope = h.f32(112);
    let inter = h.f32(116);
    if slope.is_finite() && slope != 0.0 && inter.is_finite() && (slope != 1.0 || inter != 0.0) {
        for v in values.iter_mut() {
            *v = *v * slope + inter;
        }
    }
    Ok(NiftiImage {
        grid,
        data: values,
        datatype,
    })
}

fn decode_values<B: ByteOrder>(data: &[u8], dt: Datatype) -> Vec<f64> {
    let step = dt.size();
    data.chunks_exact(step)
        .map(|c| match dt {
            Datatype::U8 => c[0] as f64,
            Datatype::I16 => B::read_i16(c) as f64,
            Datatype::U16 => B::read_u16(c) as f64,
            Datatype::I32 => B::read_i32(c) as f64,
            Datatype::F32 => B::read_f32(c) as f64,
            Datatype::F64 => B::read_f64(c),
        })
        .collect()
}

/// sform if set, else qform, else a diagonal from pixdim.
fn header_affine(h: &Fields<'_>, pixdim: &[f64; 8]) -> Affine {
    let mut a = crate::volume::identity_affine();
    let qform_code = h.i16(252);
    let sform_code = h.i16(254);
    if sform_code > 0 {
        for (r, row) in a.iter_mut().take(3).enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = h.f32(280 + 16 * r + 4 * c);
            }
        }
    } else if qform_code > 0 {
        let (b, c, d) = (h.f32(256), h.f32(260), h.f32(264));
        let aa = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = [
            [
                aa * aa + b * b - c * c - d * d,
                2.0 * (b * c - aa * d),
                2.0 * (b * d + aa * c),
            ],
            [
                2.0 * (b * c + aa * d),
                aa * aa + c * c - b * b - d * d,
                2.0 * (c * d - aa * b),
            ],
            [
                2.0 * (b * d - aa * c),
                2.0 * (c * d + aa * b),
                aa * aa + d * d - c * c - b * b,
            ],
        ];
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = [pixdim[1], pixdim[2], pixdim[3] * qfac];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] = rot[r][c] * scale[c];
            }
            a[r][3] = h.f32(268 + 4 * r);
        }
    } else {
        for i in 0..3 {
            a[i][i] = if pixdim[i + 1] > 0.0 { pixdim[i + 1] } else { 1.0 };
        }
    }
    a
}

/// Encodes values into a complete NIfTI-1 file. Integer datatypes require
/// integral values within range.
pub fn encode_nifti(grid: &Grid, values: &[f64], dt: Datatype) -> Result<Vec<u8>> {
    if values.len() != grid.len() {
        return Err(Error::InvalidValue(format!(
            "{} values for a grid of {} voxels",
            values.len(),
            grid.len()
        )));
    }
    if let Some(&d) = grid.dims.iter().find(|&&d| d > i16::MAX as usize) {
        return Err(Error::BadDimensions(format!(
            "extent {d} does not fit a NIfTI-1 header"
        )));
    }
    let mut buf = vec![0u8; VOX_OFFSET + values.len() * dt.size()];
    {
        let h = &mut buf[..VOX_OFFSET];
        LittleEndian::write_i32(&mut h[0..], HEADER_SIZE as i32);
        h[38] = b'r';
        let mut dim = [1i16; 8];
        dim[0] = 3;
        for a in 0..3 {
            dim[a + 1] = grid.dims[a] as i16;
        }
        for (i, d) in dim.iter().enumerate() {
            LittleEndian::write_i16(&mut h[40 + 2 * i..], *d);
        }
        LittleEndian::write_i16(&mut h[70..], dt.code());
        LittleEndian::write_i16(&mut h[72..], (dt.size() * 8) as i16);
        let mut pixdim = [1.0f32; 8];
        for a in 0..3 {
            pixdim[a + 1] = grid.spacing[a] as f32;
        }
        for (i, p) in pixdim.iter().enumerate() {
            LittleEndian::write_f32(&mut h[76 + 4 * i..], *p);
        }
        LittleEndian::write_f32(&mut h[108..], VOX_OFFSET as f32);
        LittleEndian::write_f32(&mut h[112..], 1.0);
        LittleEndian::write_f32(&mut h[116..], 0.0);
        h[123] = 2; // millimetres
        LittleEndian::write_i16(&mut h[254..], 1);
        for r in 0..3 {
            for c in 0..4 {
                LittleEndian::write_f32(&mut h[280 + 16 * r + 4 * c..], grid.affine[r][c] as f32);
            }
        }
        h[344..348].copy_from_slice(&MAGIC);
    }
    let range = dt.range();
    for (idx, (&v, out)) in values
        .iter()
        .zip(buf[VOX_OFFSET..].chunks_exact_mut(dt.size()))
        .enumerate()
    {
        if let Some((lo, hi)) = range {
            if v.fract() != 0.0 || !(lo..=hi).contains(&v) {
                return Err(Error::InvalidValue(format!(
                    "value {v} at voxel {idx} is not representable as {dt:?}"
                )));
            }
        }
        match dt {
            Datatype::U8 => out[0] = v as u8,
            Datatype::I16 => LittleEndian::write_i16(out, v as i16),
            Datatype::U16 => LittleEndian::write_u16(out, v as u16),
            Datatype::I32 => LittleEndian::write_i32(out, v as i32),
            Datatype::F32 => LittleEndian::write_f32(out, v as f32),
            Datatype::F64 => LittleEndian::write_f64(out, v),
        }
    }
    Ok(buf)
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

pub fn write_nifti_values(path: impl AsRef<Path>, grid: &Grid, values: &[f64], dt: Datatype) -> Result<()> {
    let path = path.as_ref();
    let inner = || -> Result<()> {
        let bytes = encode_nifti(grid, values, dt)?;
        if is_gz(path) {
            let mut enc = GzEncoder::new(Vec::new(), Compression::new(6));
            enc.write_all(&bytes)?;
            fs::write(path, enc.finish()?)?;
        } else {
            fs::write(path, bytes)?;
        }
        Ok(())
    };
    inner().map_err(|e| e.at_path(path))
}

pub fn write_nifti(v: &Volume, path: impl AsRef<Path>, dt: Datatype) -> Result<()> {
    let values: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    write_nifti_values(path, v.grid(), &values, dt)
}

pub fn write_labels(l: &LabelVolume, path: impl AsRef<Path>, dt: Datatype) -> Result<()> {
    let values: Vec<f64> = l.data().iter().map(|&x| x as f64).collect();
    write_nifti_values(path, l.grid(), &values, dt)
}

pub fn write_prob(p: &ProbVolume, path: impl AsRef<Path>, dt: Datatype) -> Result<()> {
    let values: Vec<f64> = p.data().iter().map(|&x| x as f64).collect();
    write_nifti_values(path, p.grid(), &values, dt)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let img = read_nifti(path)?;
    let data = img.data.iter().map(|&v| v as f32).collect();
    Volume::new(img.grid, data).map_err(|e| e.at_path(path))
}

fn label_values(img: &NiftiImage) -> Result<Vec<u32>> {
    img.data
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value.fract() != 0.0 || !(0.0..=u32::MAX as f64).contains(&value) {
                Err(Error::NonIntegralLabel { index, value })
            } else {
                Ok(value as u32)
            }
        })
        .collect()
}

/// Reads a label map; without a table, labels are classified with FreeSurfer conventions.
pub fn read_labels(path: impl AsRef<Path>, table: Option<&BTreeMap<u32, TissueClass>>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let img = read_nifti(path)?;
    let inner = || {
        let data = label_values(&img)?;
        match table {
            Some(t) => LabelVolume::new(img.grid.clone(), data, t.clone()),
            None => LabelVolume::with_freesurfer_table(img.grid.clone(), data),
        }
    };
    inner().map_err(|e| e.at_path(path))
}

pub fn read_prob(path: impl AsRef<Path>) -> Result<ProbVolume> {
    let path = path.as_ref();
    let img = read_nifti(path)?;
    let inner = || {
        if let Some((index, &value)) = img.data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ProbabilityOutOfRange { index, value });
        }
        ProbVolume::new(img.grid.clone(), img.data.iter().map(|&v| v as f32).collect())
    };
    inner().map_err(|e| e.at_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_fields() {
        let g = Grid::new([3, 4, 5], [1.0, 2.0, 0.5]).unwrap();
        let b = encode_nifti(&g, &vec![0.0; 60], Datatype::F32).unwrap();
        assert_eq!(b.len(), 352 + 240);
        assert_eq!(LittleEndian::read_i32(&b), 348);
        assert_eq!(LittleEndian::read_i16(&b[40..]), 3);
        assert_eq!(LittleEndian::read_i16(&b[46..]), 5);
        assert_eq!(LittleEndian::read_f32(&b[80..]), 1.0);
        assert_eq!(LittleEndian::read_f32(&b[84..]), 2.0);
        assert_eq!(LittleEndian::read_f32(&b[108..]), 352.0);
        assert_eq!(&b[344..348], b"n+1\0");
        let back = decode_nifti(&b).unwrap();
        assert_eq!(back.grid, g);
    }

    #[test]
    fn integer_types_reject_unrepresentable() {
        let g = Grid::cubic(1);
        assert!(encode_nifti(&g, &[0.5], Datatype::U8).is_err());
        assert!(encode_nifti(&g, &[256.0], Datatype::U8).is_err());
        assert!(encode_nifti(&g, &[-1.0], Datatype::I16).is_ok());
    }

    #[test]
    fn big_endian_is_detected() {
        let g = Grid::new([2, 1, 1], [1.0; 3]).unwrap();
        let mut b = encode_nifti(&g, &[1.0, -2.0], Datatype::I16).unwrap();
        // Swap every header field and the voxel data to big-endian.
        let swap = |b: &mut [u8], at: usize, n: usize| b[at..at + n].reverse();
        swap(&mut b, 0, 4);
        for i in 0..8 {
            swap(&mut b, 40 + 2 * i, 2);
            swap(&mut b, 76 + 4 * i, 4);
        }
        for at in [70, 72, 252, 254] {
            swap(&mut b, at, 2);
        }
        for at in [108, 112, 116] {
            swap(&mut b, at, 4);
        }
        for i in 0..12 {
            swap(&mut b, 280 + 4 * i, 4);
        }
        swap(&mut b, 352, 2);
        swap(&mut b, 354, 2);
        let img = decode_nifti(&b).unwrap();
        assert_eq!(img.data, vec![1.0, -2.0]);
        assert_eq!(img.grid, g);
    }
}
