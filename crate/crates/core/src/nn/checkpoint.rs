//! Binary parameter files.
//!
//! Network block (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MADPLNN\0"
//! version    u32      = 1
//! hidden     u8       activation tag (0 identity, 1 relu, 2 sigmoid, 3 tanh)
//! output     u8       activation tag
//! n_layers   u32
//! dims       (n_layers + 1) x u32
//! params     f64 x N  per layer: weights row-major (in x out), then biases
//! ```
//!
//! Bundle file: magic `"MADPLPK\0"`, version u32, count u32, then per entry
//! `name_len u32`, UTF-8 name, `block_len u64`, network block.

use std::path::Path;

use super::mlp::{Activation, MlpNet};
use crate::error::{Error, Result};

const NET_MAGIC: &[u8; 8] = b"MADPLNN\0";
const BUNDLE_MAGIC: &[u8; 8] = b"MADPLPK\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_net(net: &MlpNet) -> Vec<u8> {
    let dims = net.dims();
    let mut out = Vec::with_capacity(24 + 4 * dims.len() + 8 * net.num_params());
    out.extend_from_slice(NET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(net.hidden.tag());
    out.push(net.output.tag());
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_net(bytes: &[u8]) -> Result<MlpNet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != NET_MAGIC {
        return Err(Error::Checkpoint("bad network magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let tag = |t: u8| Activation::from_tag(t).ok_or_else(|| Error::Checkpoint(format!("bad activation tag {t}")));
    let hidden = tag(r.u8()?)?;
    let output = tag(r.u8()?)?;
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {n_layers}")));
    }
    let dims = (0..=n_layers).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let mut net = MlpNet::zeros(&dims, output);
    net.hidden = hidden;
    let params = (0..net.num_params()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    net.set_params(&params)?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(net)
}

pub fn encode_bundle(nets: &[(&str, &MlpNet)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for (name, net) in nets {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let block = encode_net(net);
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        out.extend_from_slice(&block);
    }
    out
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Vec<(String, MlpNet)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != BUNDLE_MAGIC {
        return Err(Error::Checkpoint("bad bundle magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut nets = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Checkpoint(e.to_string()))?.to_string();
        let block_len = r.u64()? as usize;
        nets.push((name, decode_net(r.take(block_len)?)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(nets)
}

pub fn save_bundle(path: &Path, nets: &[(&str, &MlpNet)]) -> Result<()> {
    std::fs::write(path, encode_bundle(nets))?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<Vec<(String, MlpNet)>> {
    decode_bundle(&std::fs::read(path)?)
}

/// Removes the named network from a decoded bundle.
pub fn take_named(nets: &mut Vec<(String, MlpNet)>, name: &str) -> Result<MlpNet> {
    let i = nets
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Checkpoint(format!("bundle has no `{name}` network")))?;
    Ok(nets.remove(i).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_layout() {
        let net = MlpNet::zeros(&[3, 2], Activation::Sigmoid);
        let bytes = encode_net(&net);
        assert_eq!(&bytes[..8], NET_MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(bytes[12], 1);
        assert_eq!(bytes[13], 2);
        assert_eq!(&bytes[14..18], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 18 + 2 * 4 + 8 * (6 + 2));
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let net = MlpNet::zeros(&[3, 2], Activation::Sigmoid);
        let mut bytes = encode_net(&net);
        assert!(decode_net(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_net(&bytes).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn bundle_round_trip(seed in any::<u64>(), hidden in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = MlpNet::new(&[4, hidden, hidden, 3], Activation::Tanh, &mut rng);
            let b = MlpNet::new(&[2, hidden, 1], Activation::Identity, &mut rng);
            let mut decoded = decode_bundle(&encode_bundle(&[("a", &a), ("b", &b)])).unwrap();
            prop_assert_eq!(take_named(&mut decoded, "b").unwrap(), b);
            prop_assert_eq!(take_named(&mut decoded, "a").unwrap(), a);
        }
    }
}
