//! `NSTW` v1 weight container.
//!
//! ```text
//! "NSTW" | u32 version = 1 | u32 tensor count
//! per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
//!             f32 data (row-major)
//! u32 CRC-32 of every preceding byte
//! ```
//! All integers and floats are little-endian.
//!
//! Tensor names:
//! - `encoder.{i}.weight` `[out, in, k, k]` / `encoder.{i}.bias` `[out]`
//! - `encoder.{i}.relu`, `encoder.{i}.maxpool`: zero-element markers `[0]`
//! - `decoder.{i}.*` likewise, with `upsample` in place of `maxpool`
//! - `proj.{query,key,value}.weight` `[out, in]` / `.bias` `[out]`
//! - `meta.seed` `[2]`: high and low 32 bits of the generator seed, stored as
//!   raw bit patterns

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Conv1x1Params, Matrix};

use super::{ConvLayer, DecoderParams, EncoderParams, Layer, ModelParams};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"NSTW";
pub const WEIGHTS_VERSION: u32 = 1;

struct Tensor {
    name: String,
    dims: Vec<u32>,
    data: Vec<f32>,
}

impl Tensor {
    fn new(name: String, dims: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name,
            dims: dims.into_iter().map(|d| d as u32).collect(),
            data,
        }
    }

    fn marker(name: String) -> Self {
        Self::new(name, vec![0], vec![])
    }
}

fn layer_tensors(prefix: &str, layers: &[Layer], out: &mut Vec<Tensor>) {
    for (i, layer) in layers.iter().enumerate() {
        match layer {
            Layer::Conv(c) => {
                out.push(Tensor::new(
                    format!("{prefix}.{i}.weight"),
                    vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                    c.weight.clone(),
                ));
                out.push(Tensor::new(format!("{prefix}.{i}.bias"), vec![c.out_channels], c.bias.clone()));
            }
            Layer::Relu => out.push(Tensor::marker(format!("{prefix}.{i}.relu"))),
            Layer::MaxPool => out.push(Tensor::marker(format!("{prefix}.{i}.maxpool"))),
            Layer::Upsample => out.push(Tensor::marker(format!("{prefix}.{i}.upsample"))),
        }
    }
}

/// Serializes `params` to the bit-exact `NSTW` v1 layout.
pub fn write_weights(params: &ModelParams) -> Vec<u8> {
    let mut tensors = Vec::new();
    layer_tensors("encoder", params.encoder.layers(), &mut tensors);
    layer_tensors("decoder", params.decoder.layers(), &mut tensors);
    for (name, p) in [("query", &params.query), ("key", &params.key), ("value", &params.value)] {
        tensors.push(Tensor::new(
            format!("proj.{name}.weight"),
            vec![p.out_channels(), p.in_channels()],
            p.weight.as_slice().to_vec(),
        ));
        tensors.push(Tensor::new(format!("proj.{name}.bias"), vec![p.out_channels()], p.bias.clone()));
    }
    if let Some(seed) = params.seed {
        let halves = [f32::from_bits((seed >> 32) as u32), f32::from_bits(seed as u32)];
        tensors.push(Tensor::new("meta.seed".into(), vec![2], halves.to_vec()));
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        buf.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(t.dims.len() as u8);
        for d in &t.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn save_weights(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_weights(params))?;
    Ok(())
}

/// Reads a weight file. Unreadable files report as `FormatError`.
pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    read_weights(&bytes)
}

/// Structural failure while walking the tensor records.
struct ParseError(String);

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ParseError> {
        if self.buf.len() - self.pos < n {
            return Err(ParseError(format!("record at byte {} runs past the end of the file", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, ParseError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, ParseError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, ParseError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn parse_tensors(payload: &[u8]) -> std::result::Result<Vec<Tensor>, ParseError> {
    let mut r = Reader { buf: payload, pos: 12 };
    let count = u32::from_le_bytes(payload[8..12].try_into().unwrap());
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| ParseError(format!("tensor name at byte {} is not UTF-8", r.pos - len)))?
            .to_owned();
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()?);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| ParseError(format!("tensor {name} dims {dims:?} overflow")))?;
        let raw = r
            .take(n)
            .map_err(|_| ParseError(format!("tensor {name} declares dims {dims:?} beyond the data present")))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_bits(u32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        tensors.push(Tensor { name, dims, data });
    }
    if r.pos != payload.len() {
        return Err(ParseError(format!(
            "{} bytes of data beyond the declared tensors",
            payload.len() - r.pos
        )));
    }
    Ok(tensors)
}

/// Parses an in-memory weight file.
///
/// When the checksum is intact the bytes are exactly as written, so any
/// record that fails to line up means the declared dims disagree with the
/// data: `ShapeError`. With a bad checksum, a file that no longer parses is
/// reported as truncated (`FormatError`), otherwise as `ChecksumError`.
pub fn read_weights(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!("file is {} bytes, too short for a header", bytes.len())));
    }
    if &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (payload, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    match (parse_tensors(payload), stored == computed) {
        (Ok(tensors), true) => assemble(tensors),
        (Err(ParseError(msg)), true) => Err(Error::Shape(msg)),
        (Err(ParseError(msg)), false) => Err(Error::Format(format!("file is truncated or corrupt: {msg}"))),
        (Ok(_), false) => Err(Error::Checksum { stored, computed }),
    }
}

#[derive(Default)]
struct LayerParts {
    weight: Option<Tensor>,
    bias: Option<Tensor>,
    marker: Option<&'static str>,
}

fn assemble(tensors: Vec<Tensor>) -> Result<ModelParams> {
    let mut encoder: BTreeMap<usize, LayerParts> = BTreeMap::new();
    let mut decoder: BTreeMap<usize, LayerParts> = BTreeMap::new();
    let mut proj: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut seed = None;

    for t in tensors {
        let parts: Vec<&str> = t.name.split('.').collect();
        match parts.as_slice() {
            [side @ ("encoder" | "decoder"), idx, kind] => {
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::Format(format!("bad layer index in {}", t.name)))?;
                let map = if *side == "encoder" { &mut encoder } else { &mut decoder };
                let entry = map.entry(idx).or_default();
                let slot_taken = entry.marker.is_some();
                match *kind {
                    "weight" if entry.weight.is_none() && !slot_taken => entry.weight = Some(t),
                    "bias" if entry.bias.is_none() && !slot_taken => entry.bias = Some(t),
                    m @ ("relu" | "maxpool" | "upsample")
                        if !slot_taken && entry.weight.is_none() && entry.bias.is_none() =>
                    {
                        if t.dims != [0] {
                            return Err(Error::Shape(format!("marker {} has dims {:?}", t.name, t.dims)));
                        }
                        entry.marker = Some(match m {
                            "relu" => "relu",
                            "maxpool" => "maxpool",
                            _ => "upsample",
                        });
                    }
                    _ => return Err(Error::Format(format!("unexpected tensor {}", t.name))),
                }
            }
            ["proj", "query" | "key" | "value", "weight" | "bias"] => {
                if proj.contains_key(&t.name) {
                    return Err(Error::Format(format!("duplicate tensor {}", t.name)));
                }
                proj.insert(t.name.clone(), t);
            }
            ["meta", "seed"] => {
                if t.dims != [2] {
                    return Err(Error::Shape(format!("meta.seed has dims {:?}", t.dims)));
                }
                seed = Some(((t.data[0].to_bits() as u64) << 32) | t.data[1].to_bits() as u64);
            }
            _ => return Err(Error::Format(format!("unknown tensor {}", t.name))),
        }
    }

    let encoder = EncoderParams::new(build_layers("encoder", encoder)?)?;
    let decoder = DecoderParams::new(build_layers("decoder", decoder)?)?;
    let mut projection = |name: &str| -> Result<Conv1x1Params> {
        let w = proj
            .remove(&format!("proj.{name}.weight"))
            .ok_or_else(|| Error::Format(format!("missing proj.{name}.weight")))?;
        let b = proj
            .remove(&format!("proj.{name}.bias"))
            .ok_or_else(|| Error::Format(format!("missing proj.{name}.bias")))?;
        if w.dims.len() != 2 {
            return Err(Error::Shape(format!("proj.{name}.weight has rank {}", w.dims.len())));
        }
        if b.dims != [w.dims[0]] {
            return Err(Error::Shape(format!(
                "proj.{name}.bias dims {:?} do not match weight dims {:?}",
                b.dims, w.dims
            )));
        }
        let weight = Matrix::new(w.dims[0] as usize, w.dims[1] as usize, w.data)?;
        Conv1x1Params::new(weight, b.data)
    };
    let query = projection("query")?;
    let key = projection("key")?;
    let value = projection("value")?;
    ModelParams::new(encoder, decoder, query, key, value, seed)
}

fn build_layers(side: &str, parts: BTreeMap<usize, LayerParts>) -> Result<Vec<Layer>> {
    let mut layers = Vec::with_capacity(parts.len());
    for (expected, (idx, part)) in parts.into_iter().enumerate() {
        if idx != expected {
            return Err(Error::Format(format!("{side} layer {expected} is missing")));
        }
        let layer = match (part.marker, part.weight, part.bias) {
            (Some("relu"), None, None) => Layer::Relu,
            (Some("maxpool"), None, None) => Layer::MaxPool,
            (Some("upsample"), None, None) => Layer::Upsample,
            (None, Some(w), Some(b)) => {
                if w.dims.len() != 4 || w.dims[2] != w.dims[3] {
                    return Err(Error::Shape(format!("{} has dims {:?}", w.name, w.dims)));
                }
                if b.dims != [w.dims[0]] {
                    return Err(Error::Shape(format!(
                        "{} declares {:?} but {} has {} output channels",
                        b.name, b.dims, w.name, w.dims[0]
                    )));
                }
                let [out, inp, k, _] = [w.dims[0], w.dims[1], w.dims[2], w.dims[3]].map(|d| d as usize);
                Layer::Conv(ConvLayer::new(inp, out, k, w.data, b.data)?)
            }
            _ => return Err(Error::Format(format!("{side} layer {idx} is incomplete"))),
        };
        layers.push(layer);
    }
    Ok(layers)
}
