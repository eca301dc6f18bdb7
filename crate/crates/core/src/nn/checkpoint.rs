//! Binary network checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DBNN" | version: u32 | layer_count: u32
//! layer_count x { record_len: u32 | record bytes }
//! param_count: u64 | param_count x f64
//! ```
//!
//! A layer record is a one-byte tag followed by the layer's fields.

use std::fs;
use std::path::Path;

use super::layer::{Activation, Layer};
use super::network::Network;
use crate::binio::{put_f64s, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DBNN";
pub const VERSION: u32 = 1;

fn encode_layer(layer: &Layer) -> Vec<u8> {
    let (tag, fields): (u8, Vec<u64>) = match *layer {
        Layer::Dense { inputs, outputs } => (0, vec![inputs as u64, outputs as u64]),
        Layer::Conv {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => (
            1,
            vec![in_channels as u64, out_channels as u64, kernel as u64, stride as u64],
        ),
        Layer::Activation(a) => (
            2,
            vec![match a {
                Activation::Relu => 0,
                Activation::Silu => 1,
                Activation::Sigmoid => 2,
            }],
        ),
        Layer::Dropout { rate } => (3, vec![rate.to_bits()]),
        Layer::Flatten => (4, vec![]),
        Layer::GlobalAvgPool => (5, vec![]),
    };
    let mut rec = vec![tag];
    for f in fields {
        rec.extend_from_slice(&f.to_le_bytes());
    }
    rec
}

fn decode_layer(rec: &[u8]) -> Result<Layer> {
    let (&tag, body) = rec
        .split_first()
        .ok_or_else(|| Error::CorruptHeader("empty layer record".into()))?;
    if body.len() % 8 != 0 {
        return Err(Error::CorruptHeader(format!("layer record of {} bytes", rec.len())));
    }
    let fields: Vec<u64> = body
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let want = |n: usize| -> Result<()> {
        if fields.len() == n {
            Ok(())
        } else {
            Err(Error::CorruptHeader(format!(
                "layer tag {tag} expects {n} fields, found {}",
                fields.len()
            )))
        }
    };
    let layer = match tag {
        0 => {
            want(2)?;
            Layer::Dense {
                inputs: fields[0] as usize,
                outputs: fields[1] as usize,
            }
        }
        1 => {
            want(4)?;
            Layer::Conv {
                in_channels: fields[0] as usize,
                out_channels: fields[1] as usize,
                kernel: fields[2] as usize,
                stride: fields[3] as usize,
            }
        }
        2 => {
            want(1)?;
            Layer::Activation(match fields[0] {
                0 => Activation::Relu,
                1 => Activation::Silu,
                2 => Activation::Sigmoid,
                other => return Err(Error::CorruptHeader(format!("unknown activation {other}"))),
            })
        }
        3 => {
            want(1)?;
            Layer::Dropout {
                rate: f64::from_bits(fields[0]),
            }
        }
        4 => {
            want(0)?;
            Layer::Flatten
        }
        5 => {
            want(0)?;
            Layer::GlobalAvgPool
        }
        other => return Err(Error::CorruptHeader(format!("unknown layer tag {other}"))),
    };
    Ok(layer)
}

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + net.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        let rec = encode_layer(layer);
        out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
        out.extend_from_slice(&rec);
    }
    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    put_f64s(&mut out, net.params());
    out
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION, "network checkpoint")?;
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        layers.push(decode_layer(r.take(len)?)?);
    }
    let n_params = r.u64()? as usize;
    let params = r.f64s(n_params)?;
    if r.remaining() != 0 {
        return Err(Error::CorruptHeader(format!("{} trailing bytes", r.remaining())));
    }
    Network::from_parts(layers, params)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(net))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_net() -> Network {
        Network::init(
            vec![
                Layer::Conv {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    stride: 2,
                },
                Layer::Activation(Activation::Silu),
                Layer::Dropout { rate: 0.05 },
                Layer::GlobalAvgPool,
                Layer::Flatten,
                Layer::Dense { inputs: 3, outputs: 1 },
                Layer::Activation(Activation::Sigmoid),
            ],
            5,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let net = sample_net();
        let bytes = encode(&net);
        assert_eq!(&bytes[..4], b"DBNN");
        assert_eq!(decode(&bytes).unwrap(), net);
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = encode(&sample_net());
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::CorruptHeader(_))));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(Error::VersionMismatch { found: 9, .. })));
    }
}
