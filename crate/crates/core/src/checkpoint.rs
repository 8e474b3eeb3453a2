//! Binary model checkpoints.
//!
//! Layout: the magic `FUCRT1\n`, then decimal text lines (layer count, one
//! `in out` line per layer, encoder depth, class count), then every layer's
//! weights (row-major) and biases as little-endian `f64`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Layer, ModelParams};

pub const MAGIC: &[u8] = b"FUCRT1\n";

fn header(params: &ModelParams) -> String {
    let mut h = format!("{}\n", params.layers().len());
    for l in params.layers() {
        h.push_str(&format!("{} {}\n", l.in_dim, l.out_dim));
    }
    h.push_str(&format!(
        "{}\n{}\n",
        params.encoder_depth(),
        params.class_count()
    ));
    h
}

/// Length in bytes of the magic plus text header for `params`.
pub fn header_len(params: &ModelParams) -> usize {
    MAGIC.len() + header(params).len()
}

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(params) + params.byte_size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header(params).as_bytes());
    for l in params.layers() {
        for v in l.weights.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn line(&mut self) -> Result<&str> {
        let start = self.pos;
        let end = self.bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| start + p)
            .ok_or(Error::Format {
                offset: start,
                detail: "unterminated header line".into(),
            })?;
        self.pos = end + 1;
        std::str::from_utf8(&self.bytes[start..end]).map_err(|_| Error::Format {
            offset: start,
            detail: "header line is not UTF-8".into(),
        })
    }

    fn numbers<const N: usize>(&mut self) -> Result<[usize; N]> {
        let offset = self.pos;
        let line = self.line()?;
        let parts: Vec<&str> = line.split(' ').collect();
        let bad = || Error::Format {
            offset,
            detail: format!("expected {N} decimal value(s), found {line:?}"),
        };
        if parts.len() != N {
            return Err(bad());
        }
        let mut out = [0; N];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = p.parse().map_err(|_| bad())?;
        }
        Ok(out)
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let end = self.pos + count * 8;
        if end > self.bytes.len() {
            return Err(Error::Format {
                offset: self.bytes.len(),
                detail: format!("parameter data truncated, expected {end} bytes"),
            });
        }
        let out = self.bytes[self.pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        self.pos = end;
        Ok(out)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::Format {
            offset: 0,
            detail: "missing FUCRT1 magic".into(),
        });
    }
    let mut cur = Cursor {
        bytes,
        pos: MAGIC.len(),
    };
    let [layer_count] = cur.numbers::<1>()?;
    let mut shapes = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        shapes.push(cur.numbers::<2>()?);
    }
    let [encoder_depth] = cur.numbers::<1>()?;
    let offset = cur.pos;
    let [classes] = cur.numbers::<1>()?;
    if shapes.last().map(|s| s[1]) != Some(classes) {
        return Err(Error::Format {
            offset,
            detail: "class count disagrees with the last layer".into(),
        });
    }
    let mut layers = Vec::with_capacity(layer_count);
    for [in_dim, out_dim] in shapes {
        let weights = cur.floats(in_dim * out_dim)?;
        let bias = cur.floats(out_dim)?;
        layers.push(Layer {
            in_dim,
            out_dim,
            weights,
            bias,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            offset: cur.pos,
            detail: "trailing bytes after parameters".into(),
        });
    }
    ModelParams::from_layers(layers, encoder_depth)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
