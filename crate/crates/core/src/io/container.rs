//! Binary recording container.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `HDMG` |
//! | 4 | 2 | format version (1) |
//! | 6 | 2 | channel count `m` |
//! | 8 | 8 | sample rate, f64 |
//! | 16 | 8 | sample count `T`, u64 |
//! | 24 | 2 | dtype code (1 = f32) |
//! | 26 | `ceil(m/8)` | channel mask, bit `c % 8` of byte `c / 8` set when active |
//! | … | `4·T·m` | samples, time-major f32 |
//! | … | 4 | metadata length `n`, u32 |
//! | … | `n` | metadata, UTF-8 JSON object of strings |

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::signal::Recording;

pub const RECORDING_MAGIC: &[u8; 4] = b"HDMG";
pub const RECORDING_VERSION: u16 = 1;
pub const DTYPE_F32: u16 = 1;
const HEADER_LEN: usize = 26;

/// Serializes a recording; samples are stored in single precision.
pub fn encode_recording(rec: &Recording) -> Result<Vec<u8>> {
    let m = rec.num_channels();
    let channels = u16::try_from(m)
        .map_err(|_| Error::invalid(format!("{m} channels exceed the container limit")))?;
    let meta = serde_json::to_vec(rec.meta())?;
    let meta_len = u32::try_from(meta.len())
        .map_err(|_| Error::invalid("metadata block too large"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + m.div_ceil(8) + 4 * rec.samples().len() + 4 + meta.len());
    out.extend_from_slice(RECORDING_MAGIC);
    out.extend_from_slice(&RECORDING_VERSION.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&rec.sample_rate().to_le_bytes());
    out.extend_from_slice(&(rec.num_samples() as u64).to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    let mut mask = vec![0u8; m.div_ceil(8)];
    for (c, &on) in rec.channel_mask().iter().enumerate() {
        if on {
            mask[c / 8] |= 1 << (c % 8);
        }
    }
    out.extend_from_slice(&mask);
    for &v in rec.samples().iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Corruption {
                offset: self.bytes.len() as u64,
                message: format!(
                    "file ends at byte {} but {what} needs bytes {}..{}",
                    self.bytes.len(),
                    self.pos,
                    self.pos as u128 + n as u128
                ),
            });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn format_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn decode_recording(bytes: &[u8]) -> Result<Recording> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != RECORDING_MAGIC {
        return Err(format_error(0, format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = cur.u16("version")?;
    if version != RECORDING_VERSION {
        return Err(format_error(4, format!("unsupported version {version}")));
    }
    let m = cur.u16("channel count")? as usize;
    if m == 0 {
        return Err(format_error(6, "zero channels"));
    }
    let sample_rate = cur.f64("sample rate")?;
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(format_error(8, format!("invalid sample rate {sample_rate}")));
    }
    let count = cur.u64("sample count")?;
    let dtype = cur.u16("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(format_error(24, format!("unknown dtype code {dtype}")));
    }
    let mask_start = cur.pos;
    let mask_bytes = cur.take(m.div_ceil(8), "channel mask")?;
    let mask: Vec<bool> = (0..m).map(|c| mask_bytes[c / 8] >> (c % 8) & 1 == 1).collect();
    if m % 8 != 0 && mask_bytes[m / 8] >> (m % 8) != 0 {
        return Err(format_error(mask_start + m / 8, "mask bits set beyond the channel count"));
    }
    let t = usize::try_from(count).map_err(|_| format_error(16, "sample count overflows"))?;
    if t == 0 {
        return Err(format_error(16, "zero samples"));
    }
    let n_values = t
        .checked_mul(m)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| format_error(16, "sample count overflows"))?;
    let samples_start = cur.pos;
    let raw = cur.take(n_values, "samples")?;
    let mut values = Vec::with_capacity(t * m);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(format_error(samples_start + 4 * i, "non-finite sample"));
        }
        values.push(v as f64);
    }
    let meta_len = cur.u32("metadata length")? as usize;
    let meta_start = cur.pos;
    let meta_raw = cur.take(meta_len, "metadata")?;
    let meta: BTreeMap<String, String> = serde_json::from_slice(meta_raw)
        .map_err(|e| format_error(meta_start, format!("metadata is not a JSON string map: {e}")))?;
    if cur.pos != bytes.len() {
        return Err(format_error(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let samples = Array2::from_shape_vec((t, m), values).expect("length checked");
    Recording::with_mask(sample_rate, samples, mask, meta)
}

pub fn write_recording(path: impl AsRef<Path>, rec: &Recording) -> Result<()> {
    std::fs::write(path, encode_recording(rec)?)?;
    Ok(())
}

pub fn read_recording(path: impl AsRef<Path>) -> Result<Recording> {
    decode_recording(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Recording {
        let data = Array2::from_shape_fn((10, 3), |(t, c)| (t as f64) * 0.5 - c as f64);
        let mut rec = Recording::new(2048.0, data).unwrap();
        rec.set_channel_mask(vec![true, false, true]).unwrap();
        rec.meta_mut().insert("subject".into(), "synthetic \"A\" é".into());
        rec
    }

    #[test]
    fn round_trip_is_exact() {
        let rec = sample();
        let back = decode_recording(&encode_recording(&rec).unwrap()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn header_fields_sit_at_documented_offsets() {
        let bytes = encode_recording(&sample()).unwrap();
        assert_eq!(&bytes[0..4], b"HDMG");
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 3);
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2048.0);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 10);
        assert_eq!(bytes[26], 0b101);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut bytes = encode_recording(&sample()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_recording(&bytes), Err(Error::Format { offset: 0, .. })));
        bytes[..4].copy_from_slice(b"HDMG");
        bytes[4] = 9;
        assert!(matches!(decode_recording(&bytes), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn truncated_payload_names_the_offset() {
        let rec = Recording::new(1000.0, Array2::ones((5, 2))).unwrap();
        let mut bytes = encode_recording(&rec).unwrap();
        // claim 10 samples while the file carries 5
        bytes[16..24].copy_from_slice(&10u64.to_le_bytes());
        match decode_recording(&bytes) {
            Err(Error::Corruption { offset, message }) => {
                assert_eq!(offset, bytes.len() as u64);
                assert!(message.contains("samples"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = encode_recording(&sample()).unwrap();
        bytes.push(0);
        assert!(matches!(decode_recording(&bytes), Err(Error::Format { .. })));
    }
}
