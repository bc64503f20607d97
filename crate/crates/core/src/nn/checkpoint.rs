//! Versioned little-endian binary checkpoints.
//!
//! Layout: `b"CLPNET"`, format version (u16), scalar width in bytes (u8),
//! layer count + 1 (u32), layer dims (u64 each), then every parameter as an
//! IEEE-754 f64 in checkpoint order (per layer: row-major weights, then bias).

use std::path::Path;

use super::network::Network;
use crate::error::{Error, Result};
use crate::report::atomic_write;
use crate::scalar::Scalar;

const MAGIC: &[u8; 6] = b"CLPNET";
const VERSION: u16 = 1;

pub fn to_bytes<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let dims = net.layer_dims();
    let params = net.flat_parameters();
    let mut out = Vec::with_capacity(16 + dims.len() * 8 + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(std::mem::size_of::<T>() as u8);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for p in params {
        out.extend_from_slice(&p.widen().to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(6)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let _width = r.take(1)?[0];
    let n = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    if n < 2 || n > 1024 {
        return Err(Error::Checkpoint(format!("implausible layer count {n}")));
    }
    let dims = (0..n).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let count: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if bytes.len() != r.pos + count * 8 {
        return Err(Error::Checkpoint(format!("expected {count} parameters")));
    }
    let params = (0..count)
        .map(|_| r.u64().map(|b| T::of(f64::from_bits(b))))
        .collect::<Result<Vec<_>>>()?;
    Network::from_flat(&dims, &params).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let bytes = to_bytes(net);
    atomic_write(path, |w| {
        w.write_all(&bytes)?;
        Ok(())
    })
}

pub fn load<T: Scalar>(path: &Path) -> Result<Network<T>> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_is_little_endian() {
        let net = Network::<f64>::zeros(&[2, 1]).unwrap();
        let b = to_bytes(&net);
        assert_eq!(&b[..6], b"CLPNET");
        assert_eq!(&b[6..8], &[1, 0]);
        assert_eq!(b[8], 8);
        assert_eq!(&b[9..13], &[2, 0, 0, 0]);
        assert_eq!(&b[13..21], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(b.len(), 13 + 16 + 3 * 8);
    }

    #[test]
    fn f32_survives_the_f64_encoding() {
        let net = Network::<f32>::random(&[5, 7, 3], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let back: Network<f32> = from_bytes(&to_bytes(&net)).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let net = Network::<f64>::zeros(&[2, 3]).unwrap();
        let mut b = to_bytes(&net);
        b.pop();
        assert!(from_bytes::<f64>(&b).is_err());
        let mut b = to_bytes(&net);
        b[0] = b'X';
        assert!(from_bytes::<f64>(&b).is_err());
    }
}
