//! EUDM checkpoint codec.
//!
//! ```text
//! "EUDM" | version u16 | d u64 | C u64 | layer_count u16 | (out u64, in u64) per layer
//! | running_mean d f64 | running_std d f64
//! | gain | bias | (W, b) per layer | classifier W | classifier b      (all f64 LE)
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::{Dense, InputNorm, ModelParams};
use crate::error::{EudaError, Result};

const MAGIC: &[u8; 4] = b"EUDM";
const VERSION: u16 = 1;

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    params.validate()?;
    fs::write(path, encode(params)).map_err(|e| EudaError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| EudaError::io(path, e))?;
    decode(&bytes)
}

fn put(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.write_f64::<LittleEndian>(v).unwrap();
    }
}

pub(crate) fn encode(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u16::<LittleEndian>(VERSION).unwrap();
    buf.write_u64::<LittleEndian>(params.input_dim() as u64).unwrap();
    buf.write_u64::<LittleEndian>(params.num_classes() as u64).unwrap();
    buf.write_u16::<LittleEndian>(params.layers.len() as u16).unwrap();
    for l in &params.layers {
        buf.write_u64::<LittleEndian>(l.out_dim() as u64).unwrap();
        buf.write_u64::<LittleEndian>(l.in_dim() as u64).unwrap();
    }
    let n = &params.input_norm;
    put(&mut buf, n.running_mean.iter().copied());
    put(&mut buf, n.running_std.iter().copied());
    put(&mut buf, n.gain.iter().copied());
    put(&mut buf, n.bias.iter().copied());
    for l in params.layers.iter().chain(std::iter::once(&params.classifier)) {
        put(&mut buf, l.weight.iter().copied());
        put(&mut buf, l.bias.iter().copied());
    }
    buf
}

fn truncated(_: std::io::Error) -> EudaError {
    EudaError::Format("checkpoint ends early".into())
}

fn take_u64(cur: &mut Cursor<&[u8]>) -> Result<usize> {
    let v = cur.read_u64::<LittleEndian>().map_err(truncated)?;
    usize::try_from(v).map_err(|_| EudaError::Format(format!("dimension {v} overflows usize")))
}

fn take_vec(cur: &mut Cursor<&[u8]>, len: usize) -> Result<Array1<f64>> {
    let remaining = cur.get_ref().len() as u64 - cur.position();
    if (len as u64).saturating_mul(8) > remaining {
        return Err(EudaError::Format("checkpoint ends early".into()));
    }
    let mut v = vec![0.0; len];
    cur.read_f64_into::<LittleEndian>(&mut v).map_err(truncated)?;
    Ok(Array1::from(v))
}

fn take_dense(cur: &mut Cursor<&[u8]>, out: usize, inp: usize) -> Result<Dense> {
    let len = out
        .checked_mul(inp)
        .ok_or_else(|| EudaError::Format("layer size overflows".into()))?;
    let weight = Array2::from_shape_vec((out, inp), take_vec(cur, len)?.to_vec())
        .map_err(|e| EudaError::Format(e.to_string()))?;
    Ok(Dense {
        weight,
        bias: take_vec(cur, out)?,
    })
}

pub(crate) fn decode(bytes: &[u8]) -> Result<ModelParams> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(EudaError::Format("not an EUDM checkpoint".into()));
    }
    let version = cur.read_u16::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(EudaError::Format(format!("unsupported checkpoint version {version}")));
    }
    let d = take_u64(&mut cur)?;
    let c = take_u64(&mut cur)?;
    let layer_count = cur.read_u16::<LittleEndian>().map_err(truncated)? as usize;
    if layer_count == 0 {
        return Err(EudaError::Shape("checkpoint has no bottleneck layers".into()));
    }
    let mut dims = Vec::with_capacity(layer_count);
    let mut fan_in = d;
    for k in 0..layer_count {
        let out = take_u64(&mut cur)?;
        let inp = take_u64(&mut cur)?;
        if inp != fan_in || out == 0 {
            return Err(EudaError::Shape(format!(
                "layer {k} declared {out}x{inp}, expected input width {fan_in}"
            )));
        }
        dims.push((out, inp));
        fan_in = out;
    }
    let running_mean = take_vec(&mut cur, d)?;
    let running_std = take_vec(&mut cur, d)?;
    let gain = take_vec(&mut cur, d)?;
    let bias = take_vec(&mut cur, d)?;
    let layers = dims
        .iter()
        .map(|&(out, inp)| take_dense(&mut cur, out, inp))
        .collect::<Result<Vec<_>>>()?;
    let classifier = take_dense(&mut cur, c, fan_in)?;
    if (cur.position() as usize) != bytes.len() {
        return Err(EudaError::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - cur.position() as usize
        )));
    }
    let params = ModelParams {
        input_norm: InputNorm {
            gain,
            bias,
            running_mean,
            running_std,
        },
        layers,
        classifier,
    };
    params.validate()?;
    Ok(params)
}
