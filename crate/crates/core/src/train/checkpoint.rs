//! Checkpoint files.
//!
//! Layout (all integers little-endian):
//! `SONN`, u8 version = 1, u32 config-block length, the config block as
//! tagged fields (u8 tag, u16 length, payload), u32 parameter-buffer count,
//! then per buffer a u64 element count and the f64 values, then a u8 Adam
//! flag followed, when set, by the u64 step and every buffer's first and
//! second moments.

use std::path::Path;

use super::AdamState;
use crate::error::{Error, Result};
use crate::layers::{Activation, PoolKind};
use crate::network::{Network, NetworkConfig};
use crate::tensor::Padding;

const MAGIC: &[u8; 4] = b"SONN";
const VERSION: u8 = 1;

mod tag {
    pub const INPUT_CHANNELS: u8 = 1;
    pub const INPUT_SIZE: u8 = 2;
    pub const WIDTHS: u8 = 3;
    pub const KERNELS: u8 = 4;
    pub const POOLS: u8 = 5;
    pub const Q: u8 = 6;
    pub const DENSE_WIDTHS: u8 = 7;
    pub const PADDING: u8 = 8;
    pub const POOL_KIND: u8 = 9;
    pub const OUTPUT_ACTIVATION: u8 = 10;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub adam: Option<AdamState>,
}

fn field(out: &mut Vec<u8>, tag: u8, payload: &[u8]) {
    out.push(tag);
    out.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    out.extend_from_slice(payload);
}

fn u32s(values: impl IntoIterator<Item = usize>) -> Vec<u8> {
    values.into_iter().flat_map(|v| (v as u32).to_le_bytes()).collect()
}

fn encode_config(cfg: &NetworkConfig) -> Vec<u8> {
    let mut b = Vec::new();
    field(&mut b, tag::INPUT_CHANNELS, &u32s([cfg.input_channels]));
    field(&mut b, tag::INPUT_SIZE, &u32s([cfg.input_size.0, cfg.input_size.1]));
    field(&mut b, tag::WIDTHS, &u32s(cfg.widths.iter().copied()));
    field(&mut b, tag::KERNELS, &u32s(cfg.kernels.iter().flat_map(|&(m, n)| [m, n])));
    field(&mut b, tag::POOLS, &u32s(cfg.pools.iter().copied()));
    field(&mut b, tag::Q, &u32s([cfg.q]));
    field(&mut b, tag::DENSE_WIDTHS, &u32s(cfg.dense_widths.iter().copied()));
    field(&mut b, tag::PADDING, &[cfg.padding as u8]);
    field(&mut b, tag::POOL_KIND, &[cfg.pool_kind as u8]);
    field(&mut b, tag::OUTPUT_ACTIVATION, &[cfg.output_activation as u8]);
    b
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let cfg = encode_config(ck.network.config());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let bufs = ck.network.param_buffers();
    out.extend_from_slice(&(bufs.len() as u32).to_le_bytes());
    for b in &bufs {
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        put_f64s(&mut out, b);
    }
    match &ck.adam {
        None => out.push(0),
        Some(a) => {
            out.push(1);
            out.extend_from_slice(&a.t.to_le_bytes());
            for (m, v) in a.m.iter().zip(&a.v) {
                put_f64s(&mut out, m);
                put_f64s(&mut out, v);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::parse(self.pos, format!("truncated checkpoint while reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::parse(self.pos, "length overflow"))?, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn decode_config(block: &[u8], base: usize) -> Result<NetworkConfig> {
    let mut r = Reader { bytes: block, pos: 0 };
    let mut cfg = NetworkConfig::default();
    let mut seen = 0u32;
    while r.pos < block.len() {
        let at = base + r.pos;
        let t = r.u8("config tag")?;
        let len = r.u16("config field length")? as usize;
        let payload = r.take(len, "config field")?;
        let words: Vec<usize> = payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let byte = || payload.first().copied().ok_or_else(|| Error::parse(at, "empty enum field"));
        let need = |n: usize| {
            if words.len() == n && len.is_multiple_of(4) {
                Ok(())
            } else {
                Err(Error::parse(at, format!("config field {t} has wrong length {len}")))
            }
        };
        match t {
            tag::INPUT_CHANNELS => {
                need(1)?;
                cfg.input_channels = words[0];
            }
            tag::INPUT_SIZE => {
                need(2)?;
                cfg.input_size = (words[0], words[1]);
            }
            tag::WIDTHS => cfg.widths = words,
            tag::KERNELS => {
                if !words.len().is_multiple_of(2) {
                    return Err(Error::parse(at, "odd kernel list"));
                }
                cfg.kernels = words.chunks_exact(2).map(|p| (p[0], p[1])).collect();
            }
            tag::POOLS => cfg.pools = words,
            tag::Q => {
                need(1)?;
                cfg.q = words[0];
            }
            tag::DENSE_WIDTHS => cfg.dense_widths = words,
            tag::PADDING => {
                cfg.padding = match byte()? {
                    0 => Padding::Valid,
                    1 => Padding::Same,
                    v => return Err(Error::parse(at, format!("unknown padding {v}"))),
                }
            }
            tag::POOL_KIND => {
                cfg.pool_kind = match byte()? {
                    0 => PoolKind::Max,
                    1 => PoolKind::Average,
                    v => return Err(Error::parse(at, format!("unknown pool kind {v}"))),
                }
            }
            tag::OUTPUT_ACTIVATION => {
                cfg.output_activation = match byte()? {
                    0 => Activation::Tanh,
                    1 => Activation::Linear,
                    v => return Err(Error::parse(at, format!("unknown activation {v}"))),
                }
            }
            other => return Err(Error::parse(at, format!("unknown config tag {other}"))),
        }
        seen |= 1 << t;
    }
    let all = (1..=tag::OUTPUT_ACTIVATION).fold(0u32, |a, t| a | 1 << t);
    if seen != all {
        return Err(Error::parse(base, "config block is missing fields"));
    }
    Ok(cfg)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse(0, "bad magic, expected SONN"));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = r.u32("config length")? as usize;
    let base = r.pos;
    let cfg = decode_config(r.take(cfg_len, "config block")?, base)?;
    let mut net = Network::zeroed(&cfg).map_err(|e| Error::parse(base, e.to_string()))?;
    let at = r.pos;
    let count = r.u32("buffer count")? as usize;
    let expected: Vec<usize> = net.param_buffers().iter().map(|b| b.len()).collect();
    if count != expected.len() {
        return Err(Error::parse(at, format!("{count} parameter buffers, config implies {}", expected.len())));
    }
    let mut buffers = Vec::with_capacity(count);
    for &len in &expected {
        let at = r.pos;
        let n = r.u64("buffer length")? as usize;
        if n != len {
            return Err(Error::parse(at, format!("buffer of {n} values, config implies {len}")));
        }
        buffers.push(r.f64s(n, "parameters")?);
    }
    net.set_params(&buffers).map_err(|e| Error::parse(at, e.to_string()))?;
    let adam = match r.u8("adam flag")? {
        0 => None,
        1 => {
            let t = r.u64("adam step")?;
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for &len in &expected {
                m.push(r.f64s(len, "adam first moment")?);
                v.push(r.f64s(len, "adam second moment")?);
            }
            Some(AdamState { m, v, t })
        }
        f => return Err(Error::parse(r.pos - 1, format!("bad adam flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes after checkpoint"));
    }
    Ok(Checkpoint { network: net, adam })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            input_size: (20, 20),
            widths: vec![3, 2, 2],
            kernels: vec![(3, 3), (3, 2), (2, 2)],
            pools: vec![2, 2, 1],
            q: 3,
            dense_widths: vec![4, 2],
            padding: Padding::Same,
            pool_kind: PoolKind::Average,
            output_activation: Activation::Linear,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Network::build(&small_config(), 11).unwrap();
        let mut adam = AdamState::new(net.param_buffers());
        adam.t = 7;
        adam.m[0][1] = -0.0;
        adam.v[3][0] = 1e-300;
        for ck in [
            Checkpoint {
                network: net.clone(),
                adam: None,
            },
            Checkpoint {
                network: net,
                adam: Some(adam),
            },
        ] {
            let bytes = encode_checkpoint(&ck);
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(encode_checkpoint(&back), bytes);
            assert_eq!(back.network.config(), ck.network.config());
        }
    }

    #[test]
    fn corrupt_inputs_are_parse_errors() {
        let net = Network::build(&small_config(), 1).unwrap();
        let bytes = encode_checkpoint(&Checkpoint { network: net, adam: None });
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Parse { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Parse { offset: 0, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Parse { .. })));
    }
}
