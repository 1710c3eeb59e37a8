//! Binary network parameter blob.
//!
//! Little-endian: magic `HDNN`, u16 version, fifteen u32 geometry fields
//! (window, channels, kernel h/w, stride h/w, pool h/w, pool stride h/w,
//! filters, hidden, classes, two reserved zeros), f64 input scale, then each
//! tensor as u32 rows, u32 cols and `rows * cols` f64 values in row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gesture::{NetworkParams, NetworkShape, Tensors};

pub const MODEL_MAGIC: &[u8; 4] = b"HDNN";
pub const MODEL_VERSION: u16 = 1;

fn shape_fields(s: &NetworkShape) -> [usize; 15] {
    [
        s.window_samples,
        s.channels,
        s.kernel.0,
        s.kernel.1,
        s.stride.0,
        s.stride.1,
        s.pool.0,
        s.pool.1,
        s.pool_stride.0,
        s.pool_stride.1,
        s.filters,
        s.hidden,
        s.classes,
        0,
        0,
    ]
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit the model format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_model(params: &NetworkParams) -> Result<Vec<u8>> {
    params.validate()?;
    let mut out = Vec::with_capacity(8 * params.weights.num_values() + 128);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for v in shape_fields(&params.shape) {
        put_u32(&mut out, v)?;
    }
    out.extend_from_slice(&params.input_scale.to_le_bytes());
    let w = &params.weights;
    let dims = [
        w.conv_w.dim(),
        (1, w.conv_b.len()),
        w.dense1_w.dim(),
        (1, w.dense1_b.len()),
        w.dense2_w.dim(),
        (1, w.dense2_b.len()),
    ];
    for ((rows, cols), data) in dims.into_iter().zip(w.slices()) {
        put_u32(&mut out, rows)?;
        put_u32(&mut out, cols)?;
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Corruption {
                offset: self.bytes.len() as u64,
                message: format!("model blob ends before byte {}", self.pos as u128 + n as u128),
            }),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<NetworkParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad model magic".into(),
        });
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != MODEL_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported model version {version}"),
        });
    }
    let mut f = [0usize; 15];
    for v in f.iter_mut() {
        *v = r.u32()?;
    }
    let shape = NetworkShape {
        window_samples: f[0],
        channels: f[1],
        kernel: (f[2], f[3]),
        stride: (f[4], f[5]),
        pool: (f[6], f[7]),
        pool_stride: (f[8], f[9]),
        filters: f[10],
        hidden: f[11],
        classes: f[12],
    };
    shape.validate().map_err(|e| Error::Format {
        offset: 6,
        message: e.to_string(),
    })?;
    let input_scale = r.f64()?;
    let mut weights = Tensors::zeros(&shape);
    let expected = [
        weights.conv_w.dim(),
        (1, weights.conv_b.len()),
        weights.dense1_w.dim(),
        (1, weights.dense1_b.len()),
        weights.dense2_w.dim(),
        (1, weights.dense2_b.len()),
    ];
    for (dims, dst) in expected.into_iter().zip(weights.slices_mut()) {
        let at = r.pos;
        let got = (r.u32()?, r.u32()?);
        if got != dims {
            return Err(Error::Format {
                offset: at as u64,
                message: format!("tensor shape {got:?} does not match geometry {dims:?}"),
            });
        }
        for v in dst.iter_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    let params = NetworkParams {
        shape,
        input_scale,
        weights,
    };
    params.validate()?;
    Ok(params)
}

pub fn write_model(path: impl AsRef<Path>, params: &NetworkParams) -> Result<()> {
    std::fs::write(path, encode_model(params)?)?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<NetworkParams> {
    decode_model(&std::fs::read(path)?)
}
