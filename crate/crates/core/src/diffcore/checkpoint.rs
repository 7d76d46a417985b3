//! Binary checkpoint format.
//!
//! ```text
//! "TRIAD1"
//! u32 LE                      number of parameter entries
//! entry*                      parameters
//! u32 LE                      number of optimizer entries
//! entry*                      optimizer state
//! [u8; 32]                    SHA-256 of every preceding byte
//!
//! entry := u32 LE name length, name bytes (UTF-8), u8 rank,
//!          rank × u32 LE extents, row-major f64 LE values
//! ```
//!
//! A rank-0 entry carries a single value (used for step counters).

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"TRIAD1";

pub type NamedTensor = (String, Tensor<f64>);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub parameters: Vec<NamedTensor>,
    pub optimizer: Vec<NamedTensor>,
}

fn put_entry(out: &mut Vec<u8>, name: &str, t: &Tensor<f64>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Integrity {
            section: self.section.to_string(),
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn entry(&mut self) -> Result<NamedTensor> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| self.fail("entry name is not UTF-8"))?
            .to_string();
        let rank = self.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.fail("extent overflow"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = if rank == 0 {
            Tensor::new(vec![], data)
        } else {
            Tensor::new(shape, data)
        }
        .map_err(|e| self.fail(format!("entry `{name}`: {e}")))?;
        Ok((name, t))
    }

    fn section(&mut self, section: &'static str) -> Result<Vec<NamedTensor>> {
        self.section = section;
        let count = self.u32()? as usize;
        (0..count).map(|_| self.entry()).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for section in [&self.parameters, &self.optimizer] {
            out.extend_from_slice(&(section.len() as u32).to_le_bytes());
            for (name, t) in section {
                put_entry(&mut out, name, t);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses a checkpoint; nothing is returned unless every section and
    /// the trailing digest validate.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            section: "header",
        };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(r.fail("bad magic"));
        }
        let parameters = r.section("parameters")?;
        let optimizer = r.section("optimizer")?;
        r.section = "checksum";
        let body_end = r.pos;
        let stored = r.take(32)?;
        if r.pos != bytes.len() {
            return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != stored {
            return Err(r.fail("digest mismatch"));
        }
        Ok(Self {
            parameters,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.parameters
            .iter()
            .chain(&self.optimizer)
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

/// Widens any scalar tensor for storage.
pub fn to_stored<T: Scalar>(t: &Tensor<T>) -> Tensor<f64> {
    t.cast()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            parameters: vec![
                ("w".into(), Tensor::new(vec![2, 2], vec![1.0, -0.5, 1e-300, f64::MAX]).unwrap()),
                ("b".into(), Tensor::vector(vec![0.1]).unwrap()),
            ],
            optimizer: vec![("step".into(), Tensor::scalar(12.0))],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..6], b"TRIAD1");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_names_the_section() {
        let bytes = sample().to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..20]).unwrap_err();
        match err {
            Error::Integrity { section, .. } => assert_eq!(section, "parameters"),
            e => panic!("unexpected {e}"),
        }
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 40]).unwrap_err();
        match err {
            Error::Integrity { section, .. } => assert_eq!(section, "optimizer"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn flipped_bit_fails_checksum() {
        let mut bytes = sample().to_bytes();
        bytes[30] ^= 1;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }
}
