//! `VADM` model artifacts.
//!
//! ```text
//! magic "VADM" | u16 version | u8 detector tag
//! u32 config length | config echo (UTF-8 JSON object)
//! payload blocks: (u8 block id | u64 byte length | bytes)*
//! u32 CRC-32 (IEEE) over the payload blocks
//! ```
//!
//! The fixed overhead of an artifact is [`ARTIFACT_HEADER_LEN`] +
//! config length + [`ARTIFACT_TRAILER_LEN`], plus [`BLOCK_HEADER_LEN`] per block.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::detector::DetectorKind;
use crate::error::{Error, Result};

pub const ARTIFACT_MAGIC: [u8; 4] = *b"VADM";
pub const ARTIFACT_VERSION: u16 = 1;
pub const ARTIFACT_HEADER_LEN: usize = 4 + 2 + 1 + 4;
pub const ARTIFACT_TRAILER_LEN: usize = 4;
pub const BLOCK_HEADER_LEN: usize = 1 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct PayloadBlock {
    pub id: u8,
    pub bytes: Vec<u8>,
}

impl PayloadBlock {
    pub fn new(id: u8, bytes: Vec<u8>) -> Self {
        Self { id, bytes }
    }

    pub fn from_u32s(id: u8, values: &[u32]) -> Self {
        Self::new(id, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn from_f32s(id: u8, values: &[f32]) -> Self {
        Self::new(id, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn as_u32s(&self) -> Result<Vec<u32>> {
        self.words()
            .map(|w| w.map(u32::from_le_bytes).collect())
    }

    pub fn as_f32s(&self) -> Result<Vec<f32>> {
        self.words()
            .map(|w| w.map(f32::from_le_bytes).collect())
    }

    fn words(&self) -> Result<impl Iterator<Item = [u8; 4]> + '_> {
        if !self.bytes.len().is_multiple_of(4) {
            return Err(Error::MalformedArtifact(format!(
                "block {} length {} is not a multiple of 4",
                self.id,
                self.bytes.len()
            )));
        }
        Ok(self.bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]))
    }
}

/// A serialized detector: kind, echoed fit configuration and opaque blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub detector: DetectorKind,
    pub version: u16,
    pub config_echo: Map<String, Value>,
    pub blocks: Vec<PayloadBlock>,
}

impl ModelArtifact {
    pub fn new(detector: DetectorKind, config_echo: Map<String, Value>) -> Self {
        Self {
            detector,
            version: ARTIFACT_VERSION,
            config_echo,
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, block: PayloadBlock) {
        self.blocks.push(block);
    }

    pub fn block(&self, id: u8) -> Result<&PayloadBlock> {
        self.blocks
            .iter()
            .find(|b| b.id == id)
            .ok_or_else(|| Error::MalformedArtifact(format!("missing payload block {id}")))
    }

    pub fn config_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&self.config_echo)?)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let config = self.config_bytes()?;
        let config_len = u32::try_from(config.len()).map_err(|_| Error::DimOverflow(config.len()))?;
        let mut out = Vec::with_capacity(self.encoded_len()?);
        out.extend_from_slice(&ARTIFACT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.detector.tag());
        out.extend_from_slice(&config_len.to_le_bytes());
        out.extend_from_slice(&config);
        let payload_start = out.len();
        for block in &self.blocks {
            out.push(block.id);
            out.extend_from_slice(&(block.bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&block.bytes);
        }
        let crc = crc32fast::hash(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn encoded_len(&self) -> Result<usize> {
        let blocks: usize = self
            .blocks
            .iter()
            .map(|b| BLOCK_HEADER_LEN + b.bytes.len())
            .sum();
        Ok(ARTIFACT_HEADER_LEN + self.config_bytes()?.len() + blocks + ARTIFACT_TRAILER_LEN)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let short = || Error::MalformedArtifact("truncated".into());
        if bytes.len() < 4 {
            return Err(short());
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != ARTIFACT_MAGIC {
            return Err(Error::BadMagic {
                expected: ARTIFACT_MAGIC,
                found: magic,
            });
        }
        if bytes.len() < ARTIFACT_HEADER_LEN + ARTIFACT_TRAILER_LEN {
            return Err(short());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != ARTIFACT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let detector = DetectorKind::from_tag(bytes[6])?;
        let config_len = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let payload_start = ARTIFACT_HEADER_LEN
            .checked_add(config_len)
            .filter(|&s| s + ARTIFACT_TRAILER_LEN <= bytes.len())
            .ok_or_else(short)?;
        let config_echo: Map<String, Value> =
            serde_json::from_slice(&bytes[ARTIFACT_HEADER_LEN..payload_start])?;

        let payload_end = bytes.len() - ARTIFACT_TRAILER_LEN;
        let payload = &bytes[payload_start..payload_end];
        let stored = u32::from_le_bytes(bytes[payload_end..].try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }

        let mut blocks = Vec::new();
        let mut at = 0usize;
        while at < payload.len() {
            if payload.len() - at < BLOCK_HEADER_LEN {
                return Err(short());
            }
            let id = payload[at];
            let len = u64::from_le_bytes(payload[at + 1..at + 9].try_into().unwrap());
            let start = at + BLOCK_HEADER_LEN;
            let end = usize::try_from(len)
                .ok()
                .and_then(|l| start.checked_add(l))
                .filter(|&e| e <= payload.len())
                .ok_or_else(short)?;
            blocks.push(PayloadBlock::new(id, payload[start..end].to_vec()));
            at = end;
        }
        Ok(Self {
            detector,
            version,
            config_echo,
            blocks,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> ModelArtifact {
        let mut cfg = Map::new();
        cfg.insert("epsilon".into(), json!(0.01f32));
        cfg.insert("seed".into(), json!(7u64));
        let mut a = ModelArtifact::new(DetectorKind::Padim, cfg);
        a.push(PayloadBlock::from_u32s(1, &[1, 2, 3]));
        a.push(PayloadBlock::from_f32s(2, &[0.5, -1.25]));
        a
    }

    #[test]
    fn round_trip_and_length() {
        let a = sample();
        let bytes = a.encode().unwrap();
        assert_eq!(bytes.len(), a.encoded_len().unwrap());
        let back = ModelArtifact::decode(&bytes).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.block(2).unwrap().as_f32s().unwrap(), vec![0.5, -1.25]);
    }

    #[test]
    fn empty_payload_is_header_plus_config_plus_trailer() {
        let a = ModelArtifact::new(DetectorKind::PatchCore, Map::new());
        // "{}" is two bytes
        assert_eq!(a.encode().unwrap().len(), ARTIFACT_HEADER_LEN + 2 + ARTIFACT_TRAILER_LEN);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = sample().encode().unwrap();
        let n = bytes.len();
        bytes[n - 6] ^= 0x01;
        assert!(matches!(
            ModelArtifact::decode(&bytes),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn header_errors() {
        let good = sample().encode().unwrap();
        let mut m = good.clone();
        m[0] = b'X';
        assert!(matches!(ModelArtifact::decode(&m), Err(Error::BadMagic { .. })));
        let mut t = good.clone();
        t[6] = 42;
        assert!(matches!(ModelArtifact::decode(&t), Err(Error::UnknownDetector(42))));
        assert!(ModelArtifact::decode(&good[..9]).is_err());
    }

    #[test]
    fn config_echo_round_trips_exactly() {
        let a = sample();
        let back = ModelArtifact::decode(&a.encode().unwrap()).unwrap();
        assert_eq!(back.config_echo["epsilon"].as_f64().unwrap() as f32, 0.01f32);
        assert_eq!(back.config_echo, a.config_echo);
    }
}
