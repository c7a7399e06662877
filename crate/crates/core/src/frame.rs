//! Frames: snapshots of a world for viewers, on disk and on the wire.
//!
//! Wire layout (little-endian), followed by the payload:
//!
//! | bytes | field |
//! |-------|-------|
//! | 0..4  | magic `FLNF` |
//! | 4..6  | version (1) |
//! | 6     | encoding: 0 raw `f32` planes, 1 RGB8 |
//! | 7     | reserved (0) |
//! | 8..16 | step |
//! | 16..20 | width |
//! | 20..24 | height |
//! | 24..28 | channels |
//!
//! Raw payloads hold `channels` planes of `width × height` `f32`, row-major.
//! RGB payloads hold `width × height` pixels of three bytes; `channels` is 3.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{species_color, ParamMap};
use crate::error::{Error, Result};
use crate::field::MultiField;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"FLNF";
pub const WIRE_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameEncoding {
    RawF32,
    Rgb8,
}

impl FrameEncoding {
    fn code(self) -> u8 {
        match self {
            FrameEncoding::RawF32 => 0,
            FrameEncoding::Rgb8 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(FrameEncoding::RawF32),
            1 => Ok(FrameEncoding::Rgb8),
            _ => Err(Error::Frame(format!("unknown encoding {code}"))),
        }
    }

    /// Extension of the payload file next to a JSON sidecar.
    pub fn extension(self) -> &'static str {
        match self {
            FrameEncoding::RawF32 => "f32",
            FrameEncoding::Rgb8 => "rgb",
        }
    }

    fn bytes_per_value(self) -> usize {
        match self {
            FrameEncoding::RawF32 => 4,
            FrameEncoding::Rgb8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMessage {
    pub step: u64,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub encoding: FrameEncoding,
    pub payload: Vec<u8>,
}

/// Everything but the payload; the JSON sidecar of a frame file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub step: u64,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub encoding: FrameEncoding,
}

impl FrameHeader {
    pub fn payload_len(&self) -> usize {
        self.width * self.height * self.channels * self.encoding.bytes_per_value()
    }
}

impl FrameMessage {
    /// Raw planes of the matter state, converted to `f32`.
    pub fn raw<T: Scalar>(step: u64, state: &MultiField<T>) -> Self {
        let (w, h) = state.dims();
        let mut payload = Vec::with_capacity(w * h * state.channel_count() * 4);
        for c in state.channels() {
            for &v in c.values() {
                payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        Self {
            step,
            width: w,
            height: h,
            channels: state.channel_count(),
            encoding: FrameEncoding::RawF32,
            payload,
        }
    }

    /// Server-side composite. With a parameter map, each cell shows its species
    /// colour scaled by `min(A_Σ, 1)`; otherwise channel `c < 3` drives colour
    /// component `c` (a single channel is drawn in grey).
    pub fn composite<T: Scalar>(step: u64, state: &MultiField<T>, params: Option<&ParamMap<T>>) -> Self {
        let (w, h) = state.dims();
        let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut payload = Vec::with_capacity(w * h * 3);
        for i in 0..w * h {
            let values: Vec<f64> = state.channels().iter().map(|c| c.values()[i].as_f64()).collect();
            let rgb = match params {
                Some(p) => {
                    let vector: Vec<f64> = p.cell(i).iter().map(|v| v.as_f64()).collect();
                    let level = values.iter().sum::<f64>().clamp(0.0, 1.0);
                    species_color(&vector).map(|c| (c as f64 * level).round() as u8)
                }
                None if values.len() == 1 => [byte(values[0]); 3],
                None => {
                    let mut rgb = [0u8; 3];
                    for (slot, &v) in rgb.iter_mut().zip(&values) {
                        *slot = byte(v);
                    }
                    rgb
                }
            };
            payload.extend_from_slice(&rgb);
        }
        Self {
            step,
            width: w,
            height: h,
            channels: 3,
            encoding: FrameEncoding::Rgb8,
            payload,
        }
    }

    pub fn header(&self) -> FrameHeader {
        FrameHeader {
            step: self.step,
            width: self.width,
            height: self.height,
            channels: self.channels,
            encoding: self.encoding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want = self.header().payload_len();
        if self.payload.len() != want {
            return Err(Error::Frame(format!("payload holds {} bytes, header implies {want}", self.payload.len())));
        }
        if self.encoding == FrameEncoding::Rgb8 && self.channels != 3 {
            return Err(Error::Frame("RGB frames have three channels".into()));
        }
        Ok(())
    }

    /// Plane `c` of a raw frame.
    pub fn plane(&self, c: usize) -> Result<Vec<f32>> {
        if self.encoding != FrameEncoding::RawF32 || c >= self.channels {
            return Err(Error::Frame(format!("no raw plane {c}")));
        }
        let n = self.width * self.height;
        Ok(self.payload[c * n * 4..(c + 1) * n * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
        out.push(self.encoding.code());
        out.push(0);
        out.extend_from_slice(&self.step.to_le_bytes());
        for v in [self.width, self.height, self.channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Frame("missing frame header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != WIRE_VERSION {
            return Err(Error::Frame(format!("unsupported frame version {version}")));
        }
        let frame = Self {
            encoding: FrameEncoding::from_code(bytes[6])?,
            step: u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")),
            width: u32_at(16),
            height: u32_at(20),
            channels: u32_at(24),
            payload: bytes[HEADER_LEN..].to_vec(),
        };
        frame.validate()?;
        Ok(frame)
    }

    /// Writes `<stem>.f32` or `<stem>.rgb` (payload) and `<stem>.json` (header) into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let data = dir.join(format!("{stem}.{}", self.encoding.extension()));
        let meta = dir.join(format!("{stem}.json"));
        std::fs::write(&data, &self.payload)?;
        std::fs::write(&meta, serde_json::to_string_pretty(&self.header())?)?;
        Ok((data, meta))
    }

    /// Reads a frame from its JSON sidecar; the payload sits next to it.
    pub fn read_files(meta: &Path) -> Result<Self> {
        let header: FrameHeader = serde_json::from_str(&std::fs::read_to_string(meta)?)?;
        let payload = std::fs::read(meta.with_extension(header.encoding.extension()))?;
        let frame = Self {
            step: header.step,
            width: header.width,
            height: header.height,
            channels: header.channels,
            encoding: header.encoding,
            payload,
        };
        frame.validate()?;
        Ok(frame)
    }
}
