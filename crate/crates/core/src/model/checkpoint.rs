//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "EFCK" | u32 version = 1 | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | u32 × rank extents
//!             | f32 × product(extents)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"EFCK";
pub const VERSION: u32 = 1;

/// One decoded tensor record.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode<S: Scalar>(store: &ParamStore<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + store.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(t.rank() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Record>> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    let magic = r.take(4).map_err(|_| Error::BadMagic {
        path: path.to_path_buf(),
        expected: "EFCK",
        found: bytes.to_vec(),
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "EFCK",
            found: magic.to_vec(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = r
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Record { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after last tensor", bytes.len() - r.pos),
        ));
    }
    Ok(records)
}

/// Overwrites every tensor of `store` from `records`, which must carry
/// exactly the same names and shapes.
pub fn load_into<S: Scalar>(store: &mut ParamStore<S>, records: &[Record]) -> Result<()> {
    let mut seen = vec![false; store.len()];
    for rec in records {
        let id = store.id(&rec.name).ok_or_else(|| Error::CheckpointMismatch {
            name: rec.name.clone(),
            detail: "not a parameter of this model".into(),
        })?;
        if seen[id.0] {
            return Err(Error::CheckpointMismatch {
                name: rec.name.clone(),
                detail: "appears twice".into(),
            });
        }
        seen[id.0] = true;
        let t = Tensor::from_vec(&rec.shape, rec.data.iter().map(|&v| S::lit(f64::from(v))).collect())
            .map_err(|_| Error::CheckpointMismatch {
                name: rec.name.clone(),
                detail: format!("invalid shape {:?}", rec.shape),
            })?;
        store.set(id, t)?;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::CheckpointMismatch {
            name: store.names()[i].clone(),
            detail: "missing from checkpoint".into(),
        });
    }
    Ok(())
}

pub fn save<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<Record>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.w", Tensor::from_rows(&[&[1.0, -2.5], &[0.125, 3.0]]));
        s.add("b", Tensor::from_vec(&[3], vec![0.5, 1.5, -0.0]).unwrap());
        s
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = encode(&sample_store());
        let mut expect = b"EFCK".to_vec();
        expect.extend(1u32.to_le_bytes());
        expect.extend(2u32.to_le_bytes());
        expect.extend(3u16.to_le_bytes());
        expect.extend(b"a.w");
        expect.push(2);
        expect.extend(2u32.to_le_bytes());
        expect.extend(2u32.to_le_bytes());
        for v in [1.0f32, -2.5, 0.125, 3.0] {
            expect.extend(v.to_le_bytes());
        }
        expect.extend(1u16.to_le_bytes());
        expect.extend(b"b");
        expect.push(1);
        expect.extend(3u32.to_le_bytes());
        for v in [0.5f32, 1.5, -0.0] {
            expect.extend(v.to_le_bytes());
        }
        assert_eq!(bytes, expect);
    }

    #[test]
    fn round_trip_and_load() {
        let store = sample_store();
        let recs = decode(&encode(&store), Path::new("x")).unwrap();
        let mut target = store.with_tensors(store.tensors().map(|t| Tensor::zeros(t.shape())).collect());
        load_into(&mut target, &recs).unwrap();
        assert_eq!(encode(&target), encode(&store));
    }

    #[test]
    fn errors_name_the_tensor() {
        let store = sample_store();
        let mut recs = decode(&encode(&store), Path::new("x")).unwrap();
        recs[1].name = "c".into();
        let mut target = store.clone();
        let err = load_into(&mut target, &recs).unwrap_err();
        assert!(matches!(&err, Error::CheckpointMismatch { name, .. } if name == "c"));

        let mut recs = decode(&encode(&store), Path::new("x")).unwrap();
        recs[0].shape = vec![4];
        let err = load_into(&mut target, &recs).unwrap_err();
        assert!(matches!(&err, Error::CheckpointMismatch { name, .. } if name == "a.w"));

        let recs = decode(&encode(&store), Path::new("x")).unwrap();
        let err = load_into(&mut target, &recs[..1]).unwrap_err();
        assert!(matches!(&err, Error::CheckpointMismatch { name, .. } if name == "b"));
    }

    #[test]
    fn malformed_bytes_rejected() {
        let bytes = encode(&sample_store());
        let p = Path::new("x");
        assert!(matches!(decode(b"EFCX\x01\0\0\0", p), Err(Error::BadMagic { .. })));
        assert!(matches!(decode(&bytes[..bytes.len() - 1], p), Err(Error::Truncated { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra, p), Err(Error::Format { .. })));
    }

    #[test]
    fn random_stores_round_trip() {
        let mut rng = Rng::new(77);
        for case in 0..20 {
            let mut s = ParamStore::<f32>::new();
            for i in 0..1 + rng.below(4) {
                let rank = 1 + rng.below(3);
                let shape: Vec<usize> = (0..rank).map(|_| 1 + rng.below(4)).collect();
                s.add(format!("t{case}.{i}"), rng.gaussian_tensor(&shape, 0.0, 3.0));
            }
            let recs = decode(&encode(&s), Path::new("x")).unwrap();
            for (r, (n, t)) in recs.iter().zip(s.iter()) {
                assert_eq!(r.name, n);
                assert_eq!(r.shape, t.shape());
                assert_eq!(r.data, t.data());
            }
        }
    }
}
