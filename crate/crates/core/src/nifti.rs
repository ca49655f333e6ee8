//! NIfTI-1 single-file (`.nii`, `.nii.gz`) reading and writing.
//!
//! Only little-endian `n+1` files are handled. Geometry comes from the sform
//! when present, else the qform, else the bare pixdim diagonal. Affines must
//! be axis-aligned; oblique ones are rejected instead of resampled. On load
//! the volume is reoriented so that the `k` axis runs inferior to superior.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::volume::{
    AxisCode, AxisCodes, ImageVolume, LabelVolume, Volume, VoxelGrid, DEFAULT_SCHEMA_ID,
};

pub const HEADER_SIZE: usize = 348;
const DEFAULT_VOX_OFFSET: usize = 352;
/// Largest deviation of an affine column from a world axis that is still
/// treated as axis-aligned.
pub const OBLIQUE_TOLERANCE: f64 = 1e-3;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const INTENT_NAME: usize = 328;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed NIfTI header field `{field}`: {detail}")]
    Parse { field: &'static str, detail: String },
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("invalid label data: {0}")]
    Domain(String),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
}

impl NiftiError {
    fn parse(field: &'static str, detail: impl Into<String>) -> Self {
        NiftiError::Parse {
            field,
            detail: detail.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        NiftiError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Image,
    Label,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedVolume {
    Image(ImageVolume),
    Label(LabelVolume),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i16)]
enum DataType {
    UInt8 = 2,
    Int16 = 4,
    Int32 = 8,
    Float32 = 16,
    Float64 = 64,
    Int8 = 256,
    UInt16 = 512,
    UInt32 = 768,
}

impl DataType {
    fn from_code(code: i16) -> Result<Self, NiftiError> {
        Ok(match code {
            2 => DataType::UInt8,
            4 => DataType::Int16,
            8 => DataType::Int32,
            16 => DataType::Float32,
            64 => DataType::Float64,
            256 => DataType::Int8,
            512 => DataType::UInt16,
            768 => DataType::UInt32,
            other => return Err(NiftiError::UnsupportedDatatype(other)),
        })
    }

    fn size(self) -> usize {
        match self {
            DataType::UInt8 | DataType::Int8 => 1,
            DataType::Int16 | DataType::UInt16 => 2,
            DataType::Int32 | DataType::UInt32 | DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }

}

/// Fields of a parsed header that the loader uses.
#[derive(Debug, Clone)]
struct Header {
    dims: [usize; 3],
    datatype: DataType,
    vox_offset: usize,
    scl_slope: f32,
    scl_inter: f32,
    /// Rows of the 3x4 voxel-to-world affine (RAS+ mm).
    affine: [[f64; 4]; 3],
    intent_name: String,
}

fn read_i16(b: &[u8], off: usize) -> i16 {
    LittleEndian::read_i16(&b[off..off + 2])
}

fn read_f32(b: &[u8], off: usize) -> f32 {
    LittleEndian::read_f32(&b[off..off + 4])
}

fn parse_header(bytes: &[u8]) -> Result<Header, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::parse(
            "sizeof_hdr",
            format!("file holds {} bytes, header needs {HEADER_SIZE}", bytes.len()),
        ));
    }
    let sizeof_hdr = LittleEndian::read_i32(&bytes[offsets::SIZEOF_HDR..4]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        let detail = if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            "big-endian files are not supported".to_string()
        } else {
            format!("expected 348, found {sizeof_hdr}")
        };
        return Err(NiftiError::parse("sizeof_hdr", detail));
    }
    let magic = &bytes[offsets::MAGIC..offsets::MAGIC + 4];
    if magic != b"n+1\0" {
        let detail = if magic == b"ni1\0" {
            "two-file (.hdr/.img) datasets are not supported".to_string()
        } else {
            format!("expected \"n+1\", found {magic:?}")
        };
        return Err(NiftiError::parse("magic", detail));
    }

    let mut dim = [0i16; 8];
    for (n, d) in dim.iter_mut().enumerate() {
        *d = read_i16(bytes, offsets::DIM + 2 * n);
    }
    if !(1..=7).contains(&dim[0]) {
        return Err(NiftiError::parse("dim", format!("dim[0] = {} not in 1..=7", dim[0])));
    }
    let rank = dim[0] as usize;
    let mut dims = [1usize; 3];
    for axis in 0..rank.min(3) {
        let d = dim[axis + 1];
        if d < 1 {
            return Err(NiftiError::parse("dim", format!("dim[{}] = {d}", axis + 1)));
        }
        dims[axis] = d as usize;
    }
    for (n, &d) in dim.iter().enumerate().take(rank + 1).skip(4) {
        if d > 1 {
            return Err(NiftiError::parse(
                "dim",
                format!("dim[{n}] = {d}: only 3D volumes are supported"),
            ));
        }
    }

    let datatype = DataType::from_code(read_i16(bytes, offsets::DATATYPE))?;
    let bitpix = read_i16(bytes, offsets::BITPIX);
    if bitpix as usize != datatype.size() * 8 {
        return Err(NiftiError::parse(
            "bitpix",
            format!("{bitpix} does not match datatype {:?}", datatype),
        ));
    }

    let vox_offset = read_f32(bytes, offsets::VOX_OFFSET);
    if !vox_offset.is_finite() || vox_offset.fract() != 0.0 || vox_offset < HEADER_SIZE as f32 {
        return Err(NiftiError::parse("vox_offset", format!("{vox_offset}")));
    }
    let vox_offset = vox_offset as usize;

    let mut pixdim = [0f32; 8];
    for (n, p) in pixdim.iter_mut().enumerate() {
        *p = read_f32(bytes, offsets::PIXDIM + 4 * n);
    }

    let qform_code = read_i16(bytes, offsets::QFORM_CODE);
    let sform_code = read_i16(bytes, offsets::SFORM_CODE);
    let affine = if sform_code > 0 {
        let mut rows = [[0.0; 4]; 3];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = read_f32(bytes, offsets::SROW_X + 16 * r + 4 * c) as f64;
            }
        }
        rows
    } else if qform_code > 0 {
        let q = [
            read_f32(bytes, offsets::QUATERN_B) as f64,
            read_f32(bytes, offsets::QUATERN_B + 4) as f64,
            read_f32(bytes, offsets::QUATERN_B + 8) as f64,
        ];
        let offset = [
            read_f32(bytes, offsets::QOFFSET_X) as f64,
            read_f32(bytes, offsets::QOFFSET_X + 4) as f64,
            read_f32(bytes, offsets::QOFFSET_X + 8) as f64,
        ];
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let spacing = [pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64];
        quatern_to_affine(q, offset, spacing, qfac)
    } else {
        [
            [pixdim[1] as f64, 0.0, 0.0, 0.0],
            [0.0, pixdim[2] as f64, 0.0, 0.0],
            [0.0, 0.0, pixdim[3] as f64, 0.0],
        ]
    };

    let intent_raw = &bytes[offsets::INTENT_NAME..offsets::INTENT_NAME + 16];
    let end = intent_raw.iter().position(|&b| b == 0).unwrap_or(16);
    let intent_name = String::from_utf8_lossy(&intent_raw[..end]).into_owned();

    Ok(Header {
        dims,
        datatype,
        vox_offset,
        scl_slope: read_f32(bytes, offsets::SCL_SLOPE),
        scl_inter: read_f32(bytes, offsets::SCL_INTER),
        affine,
        intent_name,
    })
}

fn quatern_to_affine(q: [f64; 3], offset: [f64; 3], spacing: [f64; 3], qfac: f64) -> [[f64; 4]; 3] {
    let [b, c, d] = q;
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let r = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ];
    let scale = [spacing[0], spacing[1], spacing[2] * qfac];
    let mut out = [[0.0; 4]; 3];
    for row in 0..3 {
        for col in 0..3 {
            out[row][col] = r[row][col] * scale[col];
        }
        out[row][3] = offset[row];
    }
    out
}

/// Split an axis-aligned affine into spacing, origin and axis codes.
fn decompose_affine(affine: &[[f64; 4]; 3]) -> Result<([f64; 3], [f64; 3], AxisCodes), NiftiError> {
    let mut spacing = [0.0; 3];
    let mut codes = [AxisCode::R; 3];
    for col in 0..3 {
        let v = [affine[0][col], affine[1][col], affine[2][col]];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(NiftiError::UnsupportedGeometry(format!(
                "affine column {col} has zero or non-finite length"
            )));
        }
        let unit = v.map(|x| x / norm);
        let world = (0..3)
            .max_by(|&x, &y| unit[x].abs().total_cmp(&unit[y].abs()))
            .unwrap_or(0);
        if unit[world].abs() < 1.0 - OBLIQUE_TOLERANCE {
            return Err(NiftiError::UnsupportedGeometry(format!(
                "oblique affine: column {col} direction {unit:?} is not axis-aligned"
            )));
        }
        spacing[col] = norm;
        codes[col] = AxisCode::from_world(world, unit[world] > 0.0);
    }
    let codes = AxisCodes(codes);
    if !codes.is_valid() {
        return Err(NiftiError::UnsupportedGeometry(format!(
            "axis codes {codes} map two index axes onto one world axis"
        )));
    }
    let origin = [affine[0][3], affine[1][3], affine[2][3]];
    if origin.iter().any(|o| !o.is_finite()) {
        return Err(NiftiError::UnsupportedGeometry("non-finite origin".into()));
    }
    Ok((spacing, origin, codes))
}

/// Permutation and flips that bring the craniocaudal axis to `k`, pointing
/// superior. The remaining axes keep their on-disk order and direction.
fn canonical_transform(codes: &AxisCodes) -> ([usize; 3], [bool; 3]) {
    let cc = codes.index_axis_for_world(2).unwrap_or(2);
    let others: Vec<usize> = (0..3).filter(|&a| a != cc).collect();
    let perm = [others[0], others[1], cc];
    let flip = [false, false, codes.0[cc] == AxisCode::I];
    (perm, flip)
}

fn decode_values(bytes: &[u8], header: &Header) -> Result<Vec<f64>, NiftiError> {
    let count = header.dims[0]
        .checked_mul(header.dims[1])
        .and_then(|n| n.checked_mul(header.dims[2]))
        .ok_or_else(|| NiftiError::parse("dim", "voxel count overflows"))?;
    let width = header.datatype.size();
    let needed = count
        .checked_mul(width)
        .and_then(|n| n.checked_add(header.vox_offset))
        .ok_or_else(|| NiftiError::parse("dim", "data size overflows"))?;
    if bytes.len() < needed {
        return Err(NiftiError::parse(
            "vox_offset",
            format!(
                "data needs {needed} bytes from offset {}, file holds {}",
                header.vox_offset,
                bytes.len()
            ),
        ));
    }
    let raw = &bytes[header.vox_offset..needed];
    let values = match header.datatype {
        DataType::UInt8 => raw.iter().map(|&v| v as f64).collect(),
        DataType::Int8 => raw.iter().map(|&v| v as i8 as f64).collect(),
        DataType::Int16 => raw.chunks_exact(2).map(|c| LittleEndian::read_i16(c) as f64).collect(),
        DataType::UInt16 => raw.chunks_exact(2).map(|c| LittleEndian::read_u16(c) as f64).collect(),
        DataType::Int32 => raw.chunks_exact(4).map(|c| LittleEndian::read_i32(c) as f64).collect(),
        DataType::UInt32 => raw.chunks_exact(4).map(|c| LittleEndian::read_u32(c) as f64).collect(),
        DataType::Float32 => raw.chunks_exact(4).map(|c| LittleEndian::read_f32(c) as f64).collect(),
        DataType::Float64 => raw.chunks_exact(8).map(|c| LittleEndian::read_f64(c)).collect(),
    };
    Ok(values)
}

fn is_identity_scaling(slope: f32, inter: f32) -> bool {
    (slope == 0.0 || slope == 1.0) && inter == 0.0
}

/// Decode an in-memory NIfTI-1 file (optionally gzip-compressed).
pub fn parse_nifti(bytes: &[u8], kind: VolumeKind) -> Result<LoadedVolume, NiftiError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut plain = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut plain)
            .map_err(|e| NiftiError::parse("gzip", e.to_string()))?;
        return parse_nifti(&plain, kind);
    }
    let header = parse_header(bytes)?;
    let (spacing, origin, codes) = decompose_affine(&header.affine)?;
    let grid = VoxelGrid::with_placement(header.dims, spacing, origin, codes)
        .map_err(|e| NiftiError::UnsupportedGeometry(e.to_string()))?;
    let (perm, flip) = canonical_transform(&codes);
    let needs_reorient = perm != [0, 1, 2] || flip.iter().any(|&f| f);

    match kind {
        VolumeKind::Image => {
            let voxels: Vec<f32> = if header.datatype == DataType::Float32
                && is_identity_scaling(header.scl_slope, header.scl_inter)
            {
                // keep exact bit patterns
                let end = header.vox_offset + grid.len() * 4;
                if bytes.len() < end {
                    return Err(NiftiError::parse("vox_offset", "truncated data"));
                }
                bytes[header.vox_offset..end]
                    .chunks_exact(4)
                    .map(LittleEndian::read_f32)
                    .collect()
            } else {
                let values = decode_values(bytes, &header)?;
                if is_identity_scaling(header.scl_slope, header.scl_inter)
                    || !header.scl_slope.is_finite()
                {
                    values.into_iter().map(|v| v as f32).collect()
                } else {
                    let (m, b) = (header.scl_slope as f64, header.scl_inter as f64);
                    values.into_iter().map(|v| (v * m + b) as f32).collect()
                }
            };
            let mut vol = Volume::new(grid, voxels).map_err(|e| NiftiError::parse("dim", e.to_string()))?;
            if needs_reorient {
                vol = vol.reoriented(perm, flip);
            }
            Ok(LoadedVolume::Image(vol))
        }
        VolumeKind::Label => {
            if !is_identity_scaling(header.scl_slope, header.scl_inter) {
                return Err(NiftiError::Domain(format!(
                    "label volumes need identity scaling, found slope {} inter {}",
                    header.scl_slope, header.scl_inter
                )));
            }
            let values = decode_values(bytes, &header)?;
            let mut labels = Vec::with_capacity(values.len());
            for v in values {
                if !v.is_finite() || v.fract() != 0.0 {
                    return Err(NiftiError::Domain(format!("non-integer label {v}")));
                }
                if !(0.0..=255.0).contains(&v) {
                    return Err(NiftiError::Domain(format!("label value {v} outside 0..255")));
                }
                labels.push(v as u8);
            }
            let mut vol = Volume::new(grid, labels).map_err(|e| NiftiError::parse("dim", e.to_string()))?;
            if needs_reorient {
                vol = vol.reoriented(perm, flip);
            }
            let schema_id = if header.intent_name.is_empty() {
                DEFAULT_SCHEMA_ID.to_string()
            } else {
                header.intent_name
            };
            Ok(LoadedVolume::Label(LabelVolume::from_volume(vol, schema_id)))
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, NiftiError> {
    fs::read(path).map_err(|e| NiftiError::io(path, e))
}

pub fn read_nifti(path: impl AsRef<Path>, kind: VolumeKind) -> Result<LoadedVolume, NiftiError> {
    let path = path.as_ref();
    parse_nifti(&read_file(path)?, kind)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageVolume, NiftiError> {
    match read_nifti(path, VolumeKind::Image)? {
        LoadedVolume::Image(v) => Ok(v),
        LoadedVolume::Label(_) => unreachable!("image kind requested"),
    }
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume, NiftiError> {
    match read_nifti(path, VolumeKind::Label)? {
        LoadedVolume::Label(v) => Ok(v),
        LoadedVolume::Image(_) => unreachable!("label kind requested"),
    }
}

/// Voxel payload ready for serialization.
enum Payload<'a> {
    UInt8(&'a [u8]),
    Int16(Vec<i16>),
    Float32(&'a [f32]),
}

impl Payload<'_> {
    fn datatype(&self) -> DataType {
        match self {
            Payload::UInt8(_) => DataType::UInt8,
            Payload::Int16(_) => DataType::Int16,
            Payload::Float32(_) => DataType::Float32,
        }
    }
}

/// Volumes that can be written as NIfTI-1.
pub trait NiftiWritable {
    #[doc(hidden)]
    fn nifti_grid(&self) -> &VoxelGrid;
    #[doc(hidden)]
    fn nifti_intent_name(&self) -> &str {
        ""
    }
    #[doc(hidden)]
    fn encode_payload(&self, out: &mut Vec<u8>);
    #[doc(hidden)]
    fn nifti_datatype(&self) -> i16;
}

fn image_payload(img: &ImageVolume) -> Payload<'_> {
    let as_i16: Option<Vec<i16>> = img
        .data()
        .iter()
        .map(|&v| {
            let c = v as i16;
            ((c as f32).to_bits() == v.to_bits()).then_some(c)
        })
        .collect();
    match as_i16 {
        Some(v) => Payload::Int16(v),
        None => Payload::Float32(img.data()),
    }
}

fn encode(payload: &Payload<'_>, out: &mut Vec<u8>) {
    match payload {
        Payload::UInt8(v) => out.extend_from_slice(v),
        Payload::Int16(v) => {
            for &x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Payload::Float32(v) => {
            for &x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

impl NiftiWritable for ImageVolume {
    fn nifti_grid(&self) -> &VoxelGrid {
        self.grid()
    }

    fn encode_payload(&self, out: &mut Vec<u8>) {
        encode(&image_payload(self), out)
    }

    fn nifti_datatype(&self) -> i16 {
        image_payload(self).datatype() as i16
    }
}

impl NiftiWritable for LabelVolume {
    fn nifti_grid(&self) -> &VoxelGrid {
        self.grid()
    }

    fn nifti_intent_name(&self) -> &str {
        self.schema_id()
    }

    fn encode_payload(&self, out: &mut Vec<u8>) {
        encode(&Payload::UInt8(self.labels()), out)
    }

    fn nifti_datatype(&self) -> i16 {
        DataType::UInt8 as i16
    }
}

/// Rotation (unit columns) of an axis-aligned grid.
fn rotation_of(grid: &VoxelGrid) -> [[f64; 3]; 3] {
    let mut r = [[0.0; 3]; 3];
    for (col, code) in grid.axis_codes.0.iter().enumerate() {
        r[code.world_axis()][col] = code.sign();
    }
    r
}

/// Quaternion (b, c, d) and qfac for a proper or improper rotation.
fn rotation_to_quatern(mut r: [[f64; 3]; 3]) -> ([f64; 3], f64) {
    let det = r[0][0] * (r[1][1] * r[2][2] - r[2][1] * r[1][2])
        - r[0][1] * (r[1][0] * r[2][2] - r[2][0] * r[1][2])
        + r[0][2] * (r[1][0] * r[2][1] - r[2][0] * r[1][1]);
    let qfac = if det < 0.0 {
        for row in r.iter_mut() {
            row[2] = -row[2];
        }
        -1.0
    } else {
        1.0
    };
    let (r11, r12, r13) = (r[0][0], r[0][1], r[0][2]);
    let (r21, r22, r23) = (r[1][0], r[1][1], r[1][2]);
    let (r31, r32, r33) = (r[2][0], r[2][1], r[2][2]);
    let trace = r11 + r22 + r33 + 1.0;
    let (a, mut b, mut c, mut d): (f64, f64, f64, f64);
    if trace > 0.5 {
        a = 0.5 * trace.sqrt();
        b = 0.25 * (r32 - r23) / a;
        c = 0.25 * (r13 - r31) / a;
        d = 0.25 * (r21 - r12) / a;
    } else {
        let xd = 1.0 + r11 - (r22 + r33);
        let yd = 1.0 + r22 - (r11 + r33);
        let zd = 1.0 + r33 - (r11 + r22);
        if xd > 1.0 {
            b = 0.5 * xd.sqrt();
            c = 0.25 * (r12 + r21) / b;
            d = 0.25 * (r13 + r31) / b;
            a = 0.25 * (r32 - r23) / b;
        } else if yd > 1.0 {
            c = 0.5 * yd.sqrt();
            b = 0.25 * (r12 + r21) / c;
            d = 0.25 * (r23 + r32) / c;
            a = 0.25 * (r13 - r31) / c;
        } else {
            d = 0.5 * zd.sqrt();
            b = 0.25 * (r13 + r31) / d;
            c = 0.25 * (r23 + r32) / d;
            a = 0.25 * (r21 - r12) / d;
        }
        if a < 0.0 {
            b = -b;
            c = -c;
            d = -d;
        }
    }
    ([b, c, d], qfac)
}

fn build_header(grid: &VoxelGrid, datatype: i16, intent_name: &str) -> Vec<u8> {
    let mut h = vec![0u8; DEFAULT_VOX_OFFSET];
    LittleEndian::write_i32(&mut h[offsets::SIZEOF_HDR..4], HEADER_SIZE as i32);
    let dim = [3, grid.dims[0], grid.dims[1], grid.dims[2], 1, 1, 1, 1];
    for (n, &d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[offsets::DIM + 2 * n..], d as i16);
    }
    LittleEndian::write_i16(&mut h[offsets::DATATYPE..], datatype);
    let bitpix = DataType::from_code(datatype).map(|d| d.size() * 8).unwrap_or(8);
    LittleEndian::write_i16(&mut h[offsets::BITPIX..], bitpix as i16);

    let rotation = rotation_of(grid);
    let (quat, qfac) = rotation_to_quatern(rotation);
    let pixdim = [qfac, grid.spacing_mm[0], grid.spacing_mm[1], grid.spacing_mm[2], 1.0, 1.0, 1.0, 1.0];
    for (n, &p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[offsets::PIXDIM + 4 * n..], p as f32);
    }
    LittleEndian::write_f32(&mut h[offsets::VOX_OFFSET..], DEFAULT_VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[offsets::SCL_SLOPE..], 1.0);
    LittleEndian::write_f32(&mut h[offsets::SCL_INTER..], 0.0);
    // NIFTI_UNITS_MM
    h[offsets::XYZT_UNITS] = 2;
    let descrip = b"hnlevels";
    h[offsets::DESCRIP..offsets::DESCRIP + descrip.len()].copy_from_slice(descrip);

    // NIFTI_XFORM_SCANNER_ANAT for both forms
    LittleEndian::write_i16(&mut h[offsets::QFORM_CODE..], 1);
    LittleEndian::write_i16(&mut h[offsets::SFORM_CODE..], 1);
    for (n, &q) in quat.iter().enumerate() {
        LittleEndian::write_f32(&mut h[offsets::QUATERN_B + 4 * n..], q as f32);
    }
    for n in 0..3 {
        LittleEndian::write_f32(&mut h[offsets::QOFFSET_X + 4 * n..], grid.origin_mm[n] as f32);
    }
    for row in 0..3 {
        for col in 0..3 {
            let v = rotation[row][col] * grid.spacing_mm[col];
            LittleEndian::write_f32(&mut h[offsets::SROW_X + 16 * row + 4 * col..], v as f32);
        }
        LittleEndian::write_f32(&mut h[offsets::SROW_X + 16 * row + 12..], grid.origin_mm[row] as f32);
    }

    let name = intent_name.as_bytes();
    let n = name.len().min(15);
    h[offsets::INTENT_NAME..offsets::INTENT_NAME + n].copy_from_slice(&name[..n]);
    h[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");
    h
}

/// Serialize a volume to NIfTI-1 bytes (uncompressed).
pub fn to_nifti_bytes<V: NiftiWritable + ?Sized>(volume: &V) -> Vec<u8> {
    let grid = volume.nifti_grid();
    let mut out = build_header(grid, volume.nifti_datatype(), volume.nifti_intent_name());
    volume.encode_payload(&mut out);
    out
}

/// Write a volume; `.gz` paths are gzip-compressed. The file appears
/// atomically: on failure nothing is left at `path`.
pub fn write_nifti<V: NiftiWritable + ?Sized>(volume: &V, path: impl AsRef<Path>) -> Result<(), NiftiError> {
    let path = path.as_ref();
    let bytes = to_nifti_bytes(volume);
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".hnlevels-")
        .tempfile_in(&parent)
        .map_err(|e| NiftiError::io(path, e))?;
    let gz = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    if gz {
        let mut enc = GzEncoder::new(tmp.as_file_mut(), Compression::fast());
        enc.write_all(&bytes).map_err(|e| NiftiError::io(path, e))?;
        enc.finish().map_err(|e| NiftiError::io(path, e))?;
    } else {
        tmp.write_all(&bytes).map_err(|e| NiftiError::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| NiftiError::io(path, e))?;
    tmp.persist(path).map_err(|e| NiftiError::io(path, e.error))?;
    Ok(())
}
