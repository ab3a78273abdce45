//! Binary checkpoint: `ERAE`, a u32 format version, then records of
//! `{u32 name length, name bytes, u32 rank, rank x u32 dims, f32 values}`,
//! all little-endian, until end of file.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ERAE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Record {
    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Self {
        Self {
            name: name.into(),
            shape,
            data: data.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &r.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let mut records = Vec::new();
    while r.pos < buf.len() {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("record too large".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

pub fn save(path: &Path, records: &[Record]) -> Result<()> {
    fs::write(path, encode(records))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Record>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = encode(&[Record::from_f64("ab", vec![2], &[1.0, -0.5])]);
        assert_eq!(&bytes[0..4], b"ERAE");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..14], b"ab");
        assert_eq!(&bytes[14..18], &1u32.to_le_bytes());
        assert_eq!(&bytes[18..22], &2u32.to_le_bytes());
        assert_eq!(&bytes[22..26], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 30);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"NOPE\x01\0\0\0").is_err());
        assert!(decode(b"ERAE\x02\0\0\0").is_err());
        let mut ok = encode(&[Record::from_f64("w", vec![3], &[1.0, 2.0, 3.0])]);
        ok.pop();
        assert!(decode(&ok).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(
            recs in prop::collection::vec(
                ("[a-z.]{1,12}", prop::collection::vec(1usize..4, 0..3))
                    .prop_flat_map(|(name, shape)| {
                        let n = shape.iter().product::<usize>();
                        (Just(name), Just(shape), prop::collection::vec(-1e6f32..1e6, n))
                    }),
                0..5,
            )
        ) {
            let records: Vec<Record> = recs
                .into_iter()
                .map(|(name, shape, data)| Record { name, shape, data })
                .collect();
            prop_assert_eq!(decode(&encode(&records)).unwrap(), records);
        }
    }
}
