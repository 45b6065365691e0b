//! NIfTI-1 single-file (`.nii` / `.nii.gz`) reader and writer.
//!
//! Handles both byte orders; endianness is detected from `dim[0]`, which
//! must lie in 1..=7 when read in the file's own byte order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::VolumeGeometry;
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

mod offset {
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
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDataType {
    UInt8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl NiftiDataType {
    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Self::UInt8,
            4 => Self::Int16,
            8 => Self::Int32,
            16 => Self::Float32,
            64 => Self::Float64,
            other => return Err(Error::Unsupported(format!("NIfTI datatype code {other}"))),
        })
    }

    pub fn code(self) -> i16 {
        match self {
            Self::UInt8 => 2,
            Self::Int16 => 4,
            Self::Int32 => 8,
            Self::Float32 => 16,
            Self::Float64 => 64,
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            Self::UInt8 => 1,
            Self::Int16 => 2,
            Self::Int32 | Self::Float32 => 4,
            Self::Float64 => 8,
        }
    }
}

/// A loaded image: geometry plus one or more 3-D volumes stored back to back,
/// each with the first axis varying fastest. Values are already scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiImage {
    pub geometry: VolumeGeometry,
    pub n_volumes: usize,
    pub data: Vec<f64>,
    pub descrip: String,
}

impl NiftiImage {
    pub fn volume(&self, index: usize) -> &[f64] {
        let n = self.geometry.n_voxels();
        &self.data[index * n..(index + 1) * n]
    }
}

#[derive(Debug, Clone)]
pub struct WriteOptions {
    pub datatype: NiftiDataType,
    pub little_endian: bool,
    /// Truncated to 79 bytes plus NUL.
    pub descrip: String,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self {
            datatype: NiftiDataType::Float32,
            little_endian: true,
            descrip: String::new(),
        }
    }
}

pub fn load_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        out
    } else {
        raw
    };
    parse_nifti(&bytes)
}

/// Writes `data` (one or more volumes matching `geometry`) to `path`;
/// a `.gz` extension selects gzip compression.
pub fn save_nifti(
    path: impl AsRef<Path>,
    geometry: &VolumeGeometry,
    data: &[f64],
    options: &WriteOptions,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(geometry, data, options)?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    let write = || -> std::io::Result<()> {
        let file = File::create(path)?;
        if gz {
            let mut enc = GzEncoder::new(file, Compression::fast());
            enc.write_all(&bytes)?;
            enc.finish()?.sync_all()
        } else {
            let mut file = file;
            file.write_all(&bytes)?;
            file.sync_all()
        }
    };
    write().map_err(|e| Error::io(path, e))
}

fn endianness(header: &[u8]) -> Result<bool> {
    let le = LittleEndian::read_i16(&header[offset::DIM..]);
    let be = BigEndian::read_i16(&header[offset::DIM..]);
    if (1..=7).contains(&le) {
        Ok(true)
    } else if (1..=7).contains(&be) {
        Ok(false)
    } else {
        Err(Error::Format("dim[0] is outside 1..=7 in both byte orders".into()))
    }
}

pub(crate) fn parse_nifti(bytes: &[u8]) -> Result<NiftiImage> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "header is {} bytes, expected {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let le = endianness(bytes)?;
    if le {
        parse_with::<LittleEndian>(bytes)
    } else {
        parse_with::<BigEndian>(bytes)
    }
}

fn parse_with<B: ByteOrder>(bytes: &[u8]) -> Result<NiftiImage> {
    let h = &bytes[..HEADER_SIZE];
    if B::read_i32(&h[offset::SIZEOF_HDR..]) != HEADER_SIZE as i32 {
        return Err(Error::Format("sizeof_hdr is not 348".into()));
    }
    let magic = &h[offset::MAGIC..offset::MAGIC + 4];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    if magic == b"ni1\0" {
        return Err(Error::Unsupported("two-file (.hdr/.img) NIfTI pairs".into()));
    }

    let mut dim = [0i16; 8];
    for (d, v) in dim.iter_mut().enumerate() {
        *v = B::read_i16(&h[offset::DIM + 2 * d..]);
    }
    let ndim = dim[0];
    if ndim != 3 && ndim != 4 {
        return Err(Error::Shape(format!("dim[0] = {ndim}, expected 3 or 4")));
    }
    if dim[1..=ndim as usize].iter().any(|&d| d < 1) {
        return Err(Error::Shape(format!("non-positive extent in dim {:?}", &dim[1..=ndim as usize])));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let n_volumes = if ndim == 4 { dim[4] as usize } else { 1 };

    let datatype = NiftiDataType::from_code(B::read_i16(&h[offset::DATATYPE..]))?;
    let mut pixdim = [0f32; 8];
    for (d, v) in pixdim.iter_mut().enumerate() {
        *v = B::read_f32(&h[offset::PIXDIM + 4 * d..]);
    }
    let vox_offset = B::read_f32(&h[offset::VOX_OFFSET..]);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::Format(format!("vox_offset {vox_offset} inside header")));
    }
    let vox_offset = vox_offset as usize;
    let slope = B::read_f32(&h[offset::SCL_SLOPE..]) as f64;
    let inter = B::read_f32(&h[offset::SCL_INTER..]) as f64;
    let scale = slope != 0.0 && slope.is_finite();
    let inter = if scale && inter.is_finite() { inter } else { 0.0 };

    let qform_code = B::read_i16(&h[offset::QFORM_CODE..]);
    let sform_code = B::read_i16(&h[offset::SFORM_CODE..]);
    let affine = if sform_code > 0 {
        let mut a = [[0.0; 4]; 4];
        for (r, row) in a.iter_mut().take(3).enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = B::read_f32(&h[offset::SROW_X + 16 * r + 4 * c..]) as f64;
            }
        }
        a[3][3] = 1.0;
        a
    } else if qform_code > 0 {
        let q = |i: usize| B::read_f32(&h[offset::QUATERN_B + 4 * i..]) as f64;
        let o = |i: usize| B::read_f32(&h[offset::QOFFSET_X + 4 * i..]) as f64;
        qform_affine(
            [q(0), q(1), q(2)],
            [o(0), o(1), o(2)],
            [pixdim[0] as f64, pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64],
        )
    } else {
        let mut a = [[0.0; 4]; 4];
        for d in 0..3 {
            a[d][d] = pixdim[d + 1] as f64;
        }
        a[3][3] = 1.0;
        a
    };
    let geometry = VolumeGeometry::with_affine(dims, affine)?;

    let descrip_raw = &h[offset::DESCRIP..offset::DESCRIP + 80];
    let end = descrip_raw.iter().position(|&b| b == 0).unwrap_or(80);
    let descrip = String::from_utf8_lossy(&descrip_raw[..end]).into_owned();

    let count = geometry.n_voxels() * n_volumes;
    let size = datatype.byte_size();
    let payload = bytes
        .get(vox_offset..vox_offset + count * size)
        .ok_or_else(|| Error::Format(format!("data section truncated: need {} bytes", count * size)))?;
    let data = payload
        .chunks_exact(size)
        .map(|c| {
            let raw = match datatype {
                NiftiDataType::UInt8 => c[0] as f64,
                NiftiDataType::Int16 => B::read_i16(c) as f64,
                NiftiDataType::Int32 => B::read_i32(c) as f64,
                NiftiDataType::Float32 => B::read_f32(c) as f64,
                NiftiDataType::Float64 => B::read_f64(c),
            };
            if scale {
                raw * slope + inter
            } else {
                raw
            }
        })
        .collect();

    Ok(NiftiImage {
        geometry,
        n_volumes,
        data,
        descrip,
    })
}

/// Standard NIfTI quaternion → affine conversion.
fn qform_affine(quat: [f64; 3], offset: [f64; 3], pixdim: [f64; 4]) -> [[f64; 4]; 4] {
    let [b, c, d] = quat;
    let a2 = 1.0 - (b * b + c * c + d * d);
    let (a, b, c, d) = if a2 < 1e-7 {
        let s = (b * b + c * c + d * d).sqrt();
        (0.0, b / s, c / s, d / s)
    } else {
        (a2.sqrt(), b, c, d)
    };
    let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let r = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ];
    let scale = [pixdim[1], pixdim[2], pixdim[3] * qfac];
    let mut m = [[0.0; 4]; 4];
    for row in 0..3 {
        for col in 0..3 {
            m[row][col] = r[row][col] * scale[col];
        }
        m[row][3] = offset[row];
    }
    m[3][3] = 1.0;
    m
}

pub(crate) fn encode_nifti(
    geometry: &VolumeGeometry,
    data: &[f64],
    options: &WriteOptions,
) -> Result<Vec<u8>> {
    if options.little_endian {
        encode_with::<LittleEndian>(geometry, data, options)
    } else {
        encode_with::<BigEndian>(geometry, data, options)
    }
}

fn encode_with<B: ByteOrder>(
    geometry: &VolumeGeometry,
    data: &[f64],
    options: &WriteOptions,
) -> Result<Vec<u8>> {
    geometry.validate()?;
    let n_vox = geometry.n_voxels();
    if data.is_empty() || data.len() % n_vox != 0 {
        return Err(Error::Shape(format!(
            "{} values do not form whole {:?} volumes",
            data.len(),
            geometry.dims
        )));
    }
    let n_volumes = data.len() / n_vox;
    if geometry.dims.iter().chain([&n_volumes]).any(|&d| d > i16::MAX as usize) {
        return Err(Error::Shape("extent exceeds NIfTI-1 limit of 32767".into()));
    }

    let size = options.datatype.byte_size();
    let mut buf = vec![0u8; VOX_OFFSET + data.len() * size];
    let h = &mut buf[..HEADER_SIZE];
    B::write_i32(&mut h[offset::SIZEOF_HDR..], HEADER_SIZE as i32);
    let ndim: i16 = if n_volumes > 1 { 4 } else { 3 };
    let dims = [
        ndim,
        geometry.dims[0] as i16,
        geometry.dims[1] as i16,
        geometry.dims[2] as i16,
        n_volumes as i16,
        1,
        1,
        1,
    ];
    for (d, &v) in dims.iter().enumerate() {
        B::write_i16(&mut h[offset::DIM + 2 * d..], v);
    }
    B::write_i16(&mut h[offset::DATATYPE..], options.datatype.code());
    B::write_i16(&mut h[offset::BITPIX..], (size * 8) as i16);
    let pixdim = [
        1.0,
        geometry.voxel_sizes[0] as f32,
        geometry.voxel_sizes[1] as f32,
        geometry.voxel_sizes[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (d, &v) in pixdim.iter().enumerate() {
        B::write_f32(&mut h[offset::PIXDIM + 4 * d..], v);
    }
    B::write_f32(&mut h[offset::VOX_OFFSET..], VOX_OFFSET as f32);
    B::write_f32(&mut h[offset::SCL_SLOPE..], 1.0);
    B::write_f32(&mut h[offset::SCL_INTER..], 0.0);
    // mm, unknown time unit
    h[offset::XYZT_UNITS] = 2;
    let descrip = options.descrip.as_bytes();
    let n = descrip.len().min(79);
    h[offset::DESCRIP..offset::DESCRIP + n].copy_from_slice(&descrip[..n]);
    B::write_i16(&mut h[offset::QFORM_CODE..], 0);
    B::write_i16(&mut h[offset::SFORM_CODE..], 2);
    for r in 0..3 {
        for c in 0..4 {
            B::write_f32(&mut h[offset::SROW_X + 16 * r + 4 * c..], geometry.affine[r][c] as f32);
        }
    }
    h[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(b"n+1\0");

    for (chunk, &v) in buf[VOX_OFFSET..].chunks_exact_mut(size).zip(data) {
        match options.datatype {
            NiftiDataType::UInt8 => chunk[0] = v.round().clamp(0.0, u8::MAX as f64) as u8,
            NiftiDataType::Int16 => {
                B::write_i16(chunk, v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
            }
            NiftiDataType::Int32 => {
                B::write_i32(chunk, v.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
            }
            NiftiDataType::Float32 => B::write_f32(chunk, v as f32),
            NiftiDataType::Float64 => B::write_f64(chunk, v),
        }
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> VolumeGeometry {
        VolumeGeometry::new([2, 2, 2], [1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn zero_volume_round_trip() {
        let g = geometry();
        let bytes = encode_nifti(&g, &[0.0; 8], &WriteOptions::default()).unwrap();
        let img = parse_nifti(&bytes).unwrap();
        assert_eq!(img.geometry.dims, [2, 2, 2]);
        assert_eq!(img.n_volumes, 1);
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaling_applies_slope_and_intercept() {
        let g = geometry();
        let opts = WriteOptions {
            datatype: NiftiDataType::Int16,
            ..Default::default()
        };
        let mut bytes = encode_nifti(&g, &[3.0; 8], &opts).unwrap();
        LittleEndian::write_f32(&mut bytes[offset::SCL_SLOPE..], 2.0);
        LittleEndian::write_f32(&mut bytes[offset::SCL_INTER..], 1.0);
        let img = parse_nifti(&bytes).unwrap();
        // 2 * 3 + 1
        assert!(img.data.iter().all(|&v| v == 7.0));
    }

    #[test]
    fn zero_slope_means_unscaled() {
        let mut bytes = encode_nifti(&geometry(), &[3.0; 8], &WriteOptions::default()).unwrap();
        LittleEndian::write_f32(&mut bytes[offset::SCL_SLOPE..], 0.0);
        LittleEndian::write_f32(&mut bytes[offset::SCL_INTER..], 5.0);
        assert!(parse_nifti(&bytes).unwrap().data.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn four_d_volume_count() {
        let g = VolumeGeometry::new([2, 1, 1], [1.0; 3]).unwrap();
        let data: Vec<f64> = (0..2 * 129).map(|x| x as f64).collect();
        let img = parse_nifti(&encode_nifti(&g, &data, &WriteOptions::default()).unwrap()).unwrap();
        assert_eq!(img.n_volumes, 129);
        assert_eq!(img.volume(128), &[256.0, 257.0]);
    }

    #[test]
    fn rejects_short_header() {
        assert!(matches!(parse_nifti(&[0u8; 100]), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_bad_magic_and_datatype_and_dim() {
        let good = encode_nifti(&geometry(), &[0.0; 8], &WriteOptions::default()).unwrap();

        let mut bad = good.clone();
        bad[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(b"xyz\0");
        assert!(matches!(parse_nifti(&bad), Err(Error::Format(_))));

        let mut bad = good.clone();
        LittleEndian::write_i16(&mut bad[offset::DATATYPE..], 32); // complex64
        assert!(matches!(parse_nifti(&bad), Err(Error::Unsupported(_))));

        let mut bad = good.clone();
        LittleEndian::write_i16(&mut bad[offset::DIM..], 2);
        assert!(matches!(parse_nifti(&bad), Err(Error::Shape(_))));

        let mut bad = good;
        LittleEndian::write_i16(&mut bad[offset::DIM..], 99);
        assert!(matches!(parse_nifti(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn nan_passes_through_float_maps() {
        let data = [f64::NAN, 1.0, f64::INFINITY, -2.5, 0.0, f64::NAN, 3.0, 4.0];
        let img = parse_nifti(&encode_nifti(&geometry(), &data, &WriteOptions::default()).unwrap()).unwrap();
        for (a, b) in img.data.iter().zip(data) {
            assert!(a == &b || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn qform_used_when_no_sform() {
        let mut bytes = encode_nifti(&geometry(), &[0.0; 8], &WriteOptions::default()).unwrap();
        LittleEndian::write_i16(&mut bytes[offset::SFORM_CODE..], 0);
        LittleEndian::write_i16(&mut bytes[offset::QFORM_CODE..], 1);
        // 180° about z: b = c = 0, d = 1
        LittleEndian::write_f32(&mut bytes[offset::QUATERN_B + 8..], 1.0);
        LittleEndian::write_f32(&mut bytes[offset::QOFFSET_X..], 10.0);
        LittleEndian::write_f32(&mut bytes[offset::PIXDIM + 4..], 2.0);
        let img = parse_nifti(&bytes).unwrap();
        let a = img.geometry.affine;
        assert_eq!(a[0][0], -2.0);
        assert_eq!(a[1][1], -1.0);
        assert_eq!(a[2][2], 1.0);
        assert_eq!(a[0][3], 10.0);
        assert_eq!(img.geometry.voxel_sizes, [2.0, 1.0, 1.0]);
    }

    #[test]
    fn sform_preferred_over_qform() {
        let mut g = geometry();
        g.affine[0][3] = -7.0;
        let mut bytes = encode_nifti(&g, &[0.0; 8], &WriteOptions::default()).unwrap();
        LittleEndian::write_i16(&mut bytes[offset::QFORM_CODE..], 1);
        LittleEndian::write_f32(&mut bytes[offset::QOFFSET_X..], 99.0);
        assert_eq!(parse_nifti(&bytes).unwrap().geometry.affine[0][3], -7.0);
    }

    #[test]
    fn descrip_truncated() {
        let opts = WriteOptions {
            descrip: "x".repeat(200),
            ..Default::default()
        };
        let img = parse_nifti(&encode_nifti(&geometry(), &[0.0; 8], &opts).unwrap()).unwrap();
        assert_eq!(img.descrip.len(), 79);
    }
}
