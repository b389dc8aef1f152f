//! `.ldvt` tensor archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LDVT" | version: u32 | entry count: u32
//! per entry: name_len: u16 | name: UTF-8 | dtype: u8 | ndim: u8 | dims: u64 * ndim | payload
//! ```
//!
//! dtype `0` is float32, `1` is uint8. Payloads are raw row-major.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Tensor, VideoTensor};

pub const MAGIC: &[u8; 4] = b"LDVT";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;

#[derive(Debug, Clone)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

impl PartialEq for TensorData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::U8(a), TensorData::U8(b)) => a == b,
            _ => false,
        }
    }
}

/// One named entry. Equality is bitwise on the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveTensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl ArchiveTensor {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::checked(shape, TensorData::F32(data))
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::checked(shape, TensorData::U8(data))
    }

    fn checked(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.len() > u8::MAX as usize {
            return Err(Error::InvalidShape(format!(
                "{} dims is too many",
                shape.len()
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {n} elements, payload has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::U8(_) => None,
        }
    }
}

impl From<&Tensor> for ArchiveTensor {
    fn from(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: TensorData::F32(t.data().to_vec()),
        }
    }
}

impl From<&VideoTensor> for ArchiveTensor {
    fn from(v: &VideoTensor) -> Self {
        Self {
            shape: v.dims().to_shape(),
            data: TensorData::F32(v.data().to_vec()),
        }
    }
}

impl From<&LatentTensor> for ArchiveTensor {
    fn from(v: &LatentTensor) -> Self {
        Self {
            shape: v.dims().to_shape(),
            data: TensorData::F32(v.data().to_vec()),
        }
    }
}

/// Ordered collection of uniquely named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    entries: Vec<(String, ArchiveTensor)>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArchiveTensor) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::Config(format!(
                "entry name too long ({} bytes)",
                name.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::Config(format!("duplicate archive entry `{name}`")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn insert_f32(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        self.insert(name, ArchiveTensor::f32(shape, data)?)
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&ArchiveTensor> {
        self.get(name)
            .ok_or_else(|| Error::State(format!("archive has no entry `{name}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let t = self.require(name)?;
        let data = t
            .as_f32()
            .ok_or_else(|| Error::Version(format!("entry `{name}` is not float32")))?;
        Tensor::new(t.shape.clone(), data.to_vec())
    }

    pub fn video(&self, name: &str) -> Result<VideoTensor> {
        VideoTensor::from_tensor(self.tensor(name)?)
    }

    pub fn latent(&self, name: &str) -> Result<LatentTensor> {
        LatentTensor::from_tensor(self.tensor(name)?)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let code = match t.data {
                TensorData::F32(_) => DTYPE_F32,
                TensorData::U8(_) => DTYPE_U8,
            };
            out.push(code);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => {
                    out.reserve(v.len() * 4);
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                TensorData::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptArchive("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version(format!("format version {version}")));
        }
        let count = r.u32()? as usize;
        let mut archive = TensorArchive::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::CorruptArchive("entry name is not UTF-8".into()))?
                .to_owned();
            let code = r.u8()?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| Error::CorruptArchive("dimension overflows usize".into()))?;
                shape.push(d);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::CorruptArchive("element count overflow".into()))?;
            let data = match code {
                DTYPE_F32 => {
                    let nbytes = n
                        .checked_mul(4)
                        .ok_or_else(|| Error::CorruptArchive("payload size overflow".into()))?;
                    let raw = r.take(nbytes)?;
                    TensorData::F32(
                        raw.chunks_exact(4)
                            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                            .collect(),
                    )
                }
                DTYPE_U8 => TensorData::U8(r.take(n)?.to_vec()),
                other => return Err(Error::Version(format!("unknown dtype code {other}"))),
            };
            archive
                .insert(name, ArchiveTensor { shape, data })
                .map_err(|e| Error::CorruptArchive(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptArchive(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(archive)
    }

    /// SHA-256 of the serialized bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::CorruptArchive(format!(
                    "truncated: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn archive_save(archive: &TensorArchive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, archive.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn archive_load(path: impl AsRef<Path>) -> Result<TensorArchive> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorArchive::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_archive_is_header_only() {
        let a = TensorArchive::new();
        let bytes = a.to_bytes();
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..4], b"LDVT");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &0u32.to_le_bytes());
        assert_eq!(TensorArchive::from_bytes(&bytes).unwrap(), a);
    }

    #[test]
    fn two_by_two_layout_is_exact() {
        let mut a = TensorArchive::new();
        a.insert_f32("m", vec![2, 2], vec![0.0, 1.0, 2.0, 3.0])
            .unwrap();
        let bytes = a.to_bytes();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"LDVT");
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u16.to_le_bytes());
        expect.push(b'm');
        expect.push(0);
        expect.push(2);
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(&2u64.to_le_bytes());
        for v in [0.0f32, 1.0, 2.0, 3.0] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expect);
        assert_eq!(TensorArchive::from_bytes(&bytes).unwrap(), a);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ldvt");
        let mut a = TensorArchive::new();
        a.insert_f32("a", vec![3], vec![-0.0, f32::MIN_POSITIVE, 7.5])
            .unwrap();
        a.insert("b", ArchiveTensor::u8(vec![2, 1], vec![9, 255]).unwrap())
            .unwrap();
        archive_save(&a, &p).unwrap();
        assert_eq!(archive_load(&p).unwrap(), a);
    }

    #[test]
    fn bad_magic_and_truncation_are_corrupt() {
        let mut a = TensorArchive::new();
        a.insert_f32("m", vec![2, 2], vec![0.0, 1.0, 2.0, 3.0])
            .unwrap();
        let mut bytes = a.to_bytes();
        for cut in [0, 3, 11, 13, bytes.len() - 1] {
            assert!(
                matches!(
                    TensorArchive::from_bytes(&bytes[..cut]),
                    Err(Error::CorruptArchive(_))
                ),
                "cut at {cut}"
            );
        }
        bytes[0] = b'X';
        assert!(matches!(
            TensorArchive::from_bytes(&bytes),
            Err(Error::CorruptArchive(_))
        ));
    }

    #[test]
    fn unknown_dtype_and_version_are_version_errors() {
        let mut a = TensorArchive::new();
        a.insert_f32("m", vec![1], vec![1.0]).unwrap();
        let mut bytes = a.to_bytes();
        // dtype byte sits after header(12) + name_len(2) + name(1)
        bytes[15] = 7;
        assert!(matches!(
            TensorArchive::from_bytes(&bytes),
            Err(Error::Version(_))
        ));
        let mut bytes = a.to_bytes();
        bytes[4] = 2;
        assert!(matches!(
            TensorArchive::from_bytes(&bytes),
            Err(Error::Version(_))
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut a = TensorArchive::new();
        a.insert_f32("x", vec![1], vec![1.0]).unwrap();
        assert!(a.insert_f32("x", vec![1], vec![2.0]).is_err());
    }

    fn arb_entry() -> impl Strategy<Value = ArchiveTensor> {
        prop::collection::vec(1usize..5, 0..4).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            prop_oneof![
                prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n).prop_map({
                    let shape = shape.clone();
                    move |d| ArchiveTensor::f32(shape.clone(), d).unwrap()
                }),
                prop::collection::vec(any::<u8>(), n).prop_map(move |d| ArchiveTensor::u8(
                    shape.clone(),
                    d
                )
                .unwrap()),
            ]
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(entries in prop::collection::vec(arb_entry(), 0..5)) {
            let mut a = TensorArchive::new();
            for (i, e) in entries.into_iter().enumerate() {
                a.insert(format!("t{i}"), e).unwrap();
            }
            let bytes = a.to_bytes();
            let b = TensorArchive::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&b, &a);
            prop_assert_eq!(b.to_bytes(), bytes);
        }
    }
}
