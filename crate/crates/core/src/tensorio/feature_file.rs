//! `VADF` feature files: one tensor per file.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size  | field                                   |
//! |--------|-------|-----------------------------------------|
//! | 0      | 4     | magic `b"VADF"`                         |
//! | 4      | 2     | version (u16, currently 1)              |
//! | 6      | 1     | dtype tag (0 = f32 little-endian)       |
//! | 7      | 1     | reserved, written as 0                  |
//! | 8      | 12    | C, H, W (u32 each)                      |
//! | 20     | 1     | layer count L (u8)                      |
//! | 21     | 4·L   | layer boundaries (u32 each)             |
//! | 21+4L  | C·H·W·4 | f32 values, channel-major then row-major |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{validate_boundaries, FeatureTensor};

pub const FEATURE_MAGIC: [u8; 4] = *b"VADF";
pub const FEATURE_VERSION: u16 = 1;

/// Element type of the payload. Only one exists today; the tag byte leaves room
/// for more (e.g. multispectral payloads).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32Le = 0,
}

impl TryFrom<u8> for Dtype {
    type Error = Error;

    fn try_from(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32Le),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }
}

/// Parsed fixed header of a feature file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureFileHeader {
    pub version: u16,
    pub dtype: Dtype,
    pub dims: [u32; 3],
    pub layer_boundaries: Vec<u32>,
}

impl FeatureFileHeader {
    /// Size in bytes of the encoded header.
    pub fn encoded_len(&self) -> usize {
        header_len(self.layer_boundaries.len())
    }

    pub fn payload_len(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product::<u64>() * 4
    }
}

pub fn header_len(layers: usize) -> usize {
    21 + 4 * layers
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::DimOverflow(v))
}

pub fn encode_feature(tensor: &FeatureTensor) -> Result<Vec<u8>> {
    let [c, h, w] = tensor.dims();
    let (c32, h32, w32) = (to_u32(c)?, to_u32(h)?, to_u32(w)?);
    let bounds = tensor.layer_boundaries();
    let layer_count =
        u8::try_from(bounds.len()).map_err(|_| Error::DimOverflow(bounds.len()))?;

    let mut out = Vec::with_capacity(header_len(bounds.len()) + tensor.data().len() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.push(Dtype::F32Le as u8);
    out.push(0);
    for d in [c32, h32, w32] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.push(layer_count);
    for b in bounds {
        out.extend_from_slice(&b.to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_header(bytes: &[u8]) -> Result<FeatureFileHeader> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedHeader);
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            expected: FEATURE_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < header_len(0) {
        return Err(Error::TruncatedHeader);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = Dtype::try_from(bytes[6])?;
    let dims = [read_u32(bytes, 8), read_u32(bytes, 12), read_u32(bytes, 16)];
    if dims.contains(&0) {
        return Err(Error::ZeroDim(dims.map(|d| d as usize)));
    }
    let layers = bytes[20] as usize;
    if bytes.len() < header_len(layers) {
        return Err(Error::TruncatedHeader);
    }
    let layer_boundaries: Vec<u32> = (0..layers).map(|i| read_u32(bytes, 21 + 4 * i)).collect();
    validate_boundaries(&layer_boundaries, dims[0] as usize)?;
    Ok(FeatureFileHeader {
        version,
        dtype,
        dims,
        layer_boundaries,
    })
}

pub fn decode_feature(bytes: &[u8]) -> Result<FeatureTensor> {
    let header = decode_header(bytes)?;
    let payload = &bytes[header.encoded_len()..];
    let expected = header.payload_len();
    if payload.len() as u64 != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len() as u64,
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let [c, h, w] = header.dims.map(|d| d as usize);
    FeatureTensor::with_layers(data, c, h, w, header.layer_boundaries)
}

pub fn write_feature_file(tensor: &FeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature(tensor)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature(&bytes)
}
