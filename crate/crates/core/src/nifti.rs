//! Single-file NIfTI-1 (`.nii`) reading and writing.
//!
//! Only the fields the pipeline needs are decoded. Orientation (qform/sform)
//! is skipped; voxels stay in stored order. The parsed [`NdVolume`] lists its
//! extents slowest-axis first, so a file with `dim = [3, W, H, D]` becomes a
//! `D x H x W` row-major volume and the data section is never reordered.

use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const MIN_VOX_OFFSET: usize = 352;
pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_INT32: i16 = 8;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

/// Decoded NIfTI-1 header fields.
#[derive(Debug, Clone, PartialEq)]
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
    pub little_endian: bool,
}

impl NiftiHeader {
    pub fn rank(&self) -> usize {
        self.dim[0] as usize
    }

    /// Extents in file order, fastest axis first.
    pub fn file_extents(&self) -> Vec<usize> {
        (1..=self.rank()).map(|i| self.dim[i] as usize).collect()
    }
}

/// A dense scalar array with row-major (last axis fastest) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NdVolume {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NdVolume {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    le: bool,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[at..at + N]);
        out
    }
    fn i16(&self, at: usize) -> i16 {
        let b = self.arr::<2>(at);
        if self.le { i16::from_le_bytes(b) } else { i16::from_be_bytes(b) }
    }
    fn i32(&self, at: usize) -> i32 {
        let b = self.arr::<4>(at);
        if self.le { i32::from_le_bytes(b) } else { i32::from_be_bytes(b) }
    }
    fn f32(&self, at: usize) -> f32 {
        let b = self.arr::<4>(at);
        if self.le { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }
    }
}

fn bytes_per_voxel(datatype: i16) -> Result<usize> {
    match datatype {
        DT_UINT8 => Ok(1),
        DT_INT16 => Ok(2),
        DT_INT32 | DT_FLOAT32 => Ok(4),
        DT_FLOAT64 => Ok(8),
        other => Err(Error::UnsupportedDatatype(other)),
    }
}

/// Decode the 348-byte header, detecting byte order from `sizeof_hdr`.
pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < MIN_VOX_OFFSET {
        return Err(Error::TruncatedData {
            needed: MIN_VOX_OFFSET as u64,
            available: bytes.len() as u64,
        });
    }
    let raw: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    let le = if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
        true
    } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
        false
    } else {
        return Err(Error::BadHeader(format!(
            "sizeof_hdr is {} (little-endian reading), expected 348",
            i32::from_le_bytes(raw)
        )));
    };
    let r = Reader { bytes, le };

    let magic: [u8; 4] = r.arr(344);
    if magic != MAGIC_SINGLE {
        return Err(Error::BadMagic(magic));
    }

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = r.i16(40 + 2 * i);
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = r.f32(76 + 4 * i);
    }
    let header = NiftiHeader {
        sizeof_hdr: r.i32(0),
        dim,
        datatype: r.i16(70),
        bitpix: r.i16(72),
        pixdim,
        vox_offset: r.f32(108),
        scl_slope: r.f32(112),
        scl_inter: r.f32(116),
        magic,
        little_endian: le,
    };

    let rank = header.dim[0];
    if !(1..=7).contains(&rank) {
        return Err(Error::BadHeader(format!("dim[0] = {rank} outside 1..=7")));
    }
    if let Some(bad) = header.dim[1..=rank as usize].iter().find(|&&d| d < 1) {
        return Err(Error::BadHeader(format!("non-positive extent {bad}")));
    }
    let bpv = bytes_per_voxel(header.datatype)?;
    if header.bitpix as usize != bpv * 8 {
        return Err(Error::BadHeader(format!(
            "bitpix {} disagrees with datatype {}",
            header.bitpix, header.datatype
        )));
    }
    if !header.vox_offset.is_finite() || header.vox_offset < MIN_VOX_OFFSET as f32 {
        return Err(Error::BadHeader(format!(
            "vox_offset {} below {MIN_VOX_OFFSET}",
            header.vox_offset
        )));
    }
    Ok(header)
}

/// Parse a complete single-file NIfTI-1 image.
///
/// Never panics: any input yields either a volume or a typed error.
pub fn parse_nifti(bytes: &[u8]) -> Result<(NiftiHeader, NdVolume)> {
    let header = parse_header(bytes)?;
    let bpv = bytes_per_voxel(header.datatype)?;
    let extents = header.file_extents();

    let too_big = || Error::TruncatedData { needed: u64::MAX, available: bytes.len() as u64 };
    let count = extents
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(too_big)?;
    let payload = count.checked_mul(bpv).ok_or_else(too_big)?;
    let start = header.vox_offset as usize;
    let end = start.checked_add(payload).ok_or_else(too_big)?;
    if end > bytes.len() {
        return Err(Error::TruncatedData { needed: end as u64, available: bytes.len() as u64 });
    }

    let raw = &bytes[start..end];
    let r = Reader { bytes: raw, le: header.little_endian };
    let mut data: Vec<f32> = match header.datatype {
        DT_UINT8 => raw.iter().map(|&b| b as f32).collect(),
        DT_INT16 => (0..count).map(|i| r.i16(2 * i) as f32).collect(),
        DT_INT32 => (0..count).map(|i| r.i32(4 * i) as f32).collect(),
        DT_FLOAT32 => (0..count).map(|i| r.f32(4 * i)).collect(),
        DT_FLOAT64 => (0..count)
            .map(|i| {
                let b: [u8; 8] = raw[8 * i..8 * i + 8].try_into().expect("in range");
                let v = if header.little_endian { f64::from_le_bytes(b) } else { f64::from_be_bytes(b) };
                v as f32
            })
            .collect(),
        other => return Err(Error::UnsupportedDatatype(other)),
    };

    // scl_slope == 0 means "no scaling" in NIfTI-1.
    let (slope, inter) = (header.scl_slope, header.scl_inter);
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }

    let shape: Vec<usize> = extents.iter().rev().copied().collect();
    Ok((header, NdVolume { shape, data }))
}

/// Encode a volume as little-endian float32 NIfTI-1.
///
/// `pixdim` gives voxel spacing per axis in the same slowest-first order as
/// `volume.shape`; missing entries default to 1 mm.
pub fn write_nifti(volume: &NdVolume, pixdim: &[f32]) -> Result<Vec<u8>> {
    write_nifti_typed(volume, pixdim, DT_FLOAT32)
}

/// Like [`write_nifti`] but for `u8` masks: values are rounded and clamped.
pub fn write_nifti_u8(volume: &NdVolume, pixdim: &[f32]) -> Result<Vec<u8>> {
    write_nifti_typed(volume, pixdim, DT_UINT8)
}

fn write_nifti_typed(volume: &NdVolume, pixdim: &[f32], datatype: i16) -> Result<Vec<u8>> {
    let rank = volume.shape.len();
    if !(1..=7).contains(&rank) {
        return Err(Error::BadRank(rank));
    }
    if volume.shape.iter().any(|&e| e == 0 || e > i16::MAX as usize) {
        return Err(Error::ZeroExtent(volume.shape.clone()));
    }
    if volume.shape.iter().product::<usize>() != volume.data.len() {
        return Err(Error::ShapeMismatch("volume data length disagrees with shape".into()));
    }
    let bpv = bytes_per_voxel(datatype)?;
    let mut out = vec![0u8; MIN_VOX_OFFSET + volume.data.len() * bpv];

    let put_i16 = |out: &mut [u8], at: usize, v: i16| out[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |out: &mut [u8], at: usize, v: f32| out[at..at + 4].copy_from_slice(&v.to_le_bytes());

    out[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    put_i16(&mut out, 40, rank as i16);
    for (i, &e) in volume.shape.iter().rev().enumerate() {
        put_i16(&mut out, 42 + 2 * i, e as i16);
    }
    for i in rank + 1..8 {
        put_i16(&mut out, 40 + 2 * i, 1);
    }
    put_i16(&mut out, 70, datatype);
    put_i16(&mut out, 72, (bpv * 8) as i16);
    put_f32(&mut out, 76, 1.0); // qfac
    for i in 0..rank {
        let spacing = pixdim.get(rank - 1 - i).copied().unwrap_or(1.0);
        put_f32(&mut out, 80 + 4 * i, spacing);
    }
    put_f32(&mut out, 108, MIN_VOX_OFFSET as f32);
    put_f32(&mut out, 112, 1.0);
    put_f32(&mut out, 116, 0.0);
    out[123] = 2; // xyzt_units: millimetres
    out[344..348].copy_from_slice(&MAGIC_SINGLE);

    let body = &mut out[MIN_VOX_OFFSET..];
    match datatype {
        DT_FLOAT32 => {
            for (chunk, v) in body.chunks_exact_mut(4).zip(&volume.data) {
                chunk.copy_from_slice(&v.to_le_bytes());
            }
        }
        DT_UINT8 => {
            for (b, v) in body.iter_mut().zip(&volume.data) {
                *b = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        _ => unreachable!("writer only emits f32 and u8"),
    }
    Ok(out)
}
