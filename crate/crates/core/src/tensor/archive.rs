//! Named-blob archive used for checkpoints, training state and NIQE models.
//!
//! An archive at `path` is two files:
//!
//! * `path`: binary. Magic `SRARCHIV`, `u32` format version, `u32` entry
//!   count, then per entry: `u32` name length, UTF-8 name, `u8` element type
//!   (0 = f32, 1 = f64), `u32` rank, `u64` extents, raw little-endian values.
//! * `path.json`: manifest listing every entry with its byte offset, the
//!   format version, the SHA-256 of the binary file and free-form metadata.
//!
//! All integers are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Scalar;
use crate::error::{Error, Result};

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SRARCHIV";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArchiveData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArchiveData {
    pub fn dtype(&self) -> DType {
        match self {
            ArchiveData::F32(_) => DType::F32,
            ArchiveData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArchiveData::F32(v) => v.len(),
            ArchiveData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_slice<T: Scalar>(values: &[T]) -> Self {
        match T::DTYPE {
            DType::F32 => ArchiveData::F32(values.iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => ArchiveData::F64(values.iter().map(|v| v.as_f64()).collect()),
        }
    }

    /// Values converted to `T`; exact when the element types agree.
    pub fn to_vec<T: Scalar>(&self) -> Vec<T> {
        match self {
            ArchiveData::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            ArchiveData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArchiveData,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    sha256: String,
    entries: Vec<ManifestEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub entries: Vec<ArchiveEntry>,
    pub metadata: serde_json::Value,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, shape: &[usize], values: &[T]) {
        self.entries.push(ArchiveEntry {
            name: name.into(),
            shape: shape.to_vec(),
            data: ArchiveData::from_slice(values),
        });
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Looks up an entry and checks its shape.
    pub fn expect<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Vec<T>> {
        let entry = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))?;
        if entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "entry {name} has shape {:?}, expected {:?}",
                entry.shape, shape
            )));
        }
        Ok(entry.data.to_vec())
    }

    fn encode(&self) -> Result<(Vec<u8>, Vec<ManifestEntry>)> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&ARCHIVE_FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut listing = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            if e.shape.iter().product::<usize>() != e.data.len() {
                return Err(Error::Checkpoint(format!(
                    "entry {} has shape {:?} but {} values",
                    e.name,
                    e.shape,
                    e.data.len()
                )));
            }
            let name = e.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name);
            buf.push(e.data.dtype().code());
            buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let offset = buf.len() as u64;
            match &e.data {
                ArchiveData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
                ArchiveData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            }
            listing.push(ManifestEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                dtype: e.data.dtype(),
                offset,
                nbytes: buf.len() as u64 - offset,
            });
        }
        Ok((buf, listing))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (bytes, entries) = self.encode()?;
        let manifest = Manifest {
            format_version: ARCHIVE_FORMAT_VERSION,
            sha256: hex_digest(&bytes),
            entries,
            metadata: self.metadata.clone(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        let mpath = manifest_path(path);
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mpath = manifest_path(path);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", mpath.display())))?;
        if manifest.format_version != ARCHIVE_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "archive format version {} is not supported (expected {})",
                manifest.format_version, ARCHIVE_FORMAT_VERSION
            )));
        }
        let digest = hex_digest(&bytes);
        if digest != manifest.sha256 {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch for {}: manifest {}, file {}",
                path.display(),
                manifest.sha256,
                digest
            )));
        }
        let entries = decode(&bytes)?;
        if entries.len() != manifest.entries.len()
            || entries
                .iter()
                .zip(&manifest.entries)
                .any(|(e, m)| e.name != m.name || e.shape != m.shape || e.data.dtype() != m.dtype)
        {
            return Err(Error::Checkpoint(format!(
                "manifest {} does not describe {}",
                mpath.display(),
                path.display()
            )));
        }
        Ok(Archive {
            entries,
            metadata: manifest.metadata,
        })
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
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
            .ok_or_else(|| Error::Checkpoint("truncated archive".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<ArchiveEntry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != ARCHIVE_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "archive format version {version} is not supported (expected {ARCHIVE_FORMAT_VERSION})"
        )));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let code = r.take(1)?[0];
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown element type {code}")))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * dtype.width())?;
        let data = match dtype {
            DType::F32 => ArchiveData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => ArchiveData::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        entries.push(ArchiveEntry { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last entry".into()));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            a in proptest::collection::vec(any::<f32>(), 0..40),
            b in proptest::collection::vec(-1e300f64..1e300, 1..20),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("x.ckpt");
            let mut ar = Archive::new();
            ar.entries.push(ArchiveEntry { name: "a".into(), shape: vec![a.len()], data: ArchiveData::F32(a.clone()) });
            ar.push("layer.b", &[b.len(), 1], &b);
            ar.metadata = serde_json::json!({"k": 1});
            ar.save(&path).unwrap();
            let back = Archive::load(&path).unwrap();
            match &back.entries[0].data {
                ArchiveData::F32(v) => {
                    let lhs: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
                    let rhs: Vec<u32> = a.iter().map(|x| x.to_bits()).collect();
                    prop_assert_eq!(lhs, rhs);
                }
                _ => prop_assert!(false),
            }
            prop_assert_eq!(&back.entries[1], &ar.entries[1]);
            prop_assert_eq!(back.metadata, ar.metadata);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut ar = Archive::new();
        ar.push("w", &[3], &[1.0f32, 2.0, 3.0]);
        ar.save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x55;
        fs::write(&path, bytes).unwrap();
        let err = Archive::load(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn expect_reports_shape_mismatch() {
        let mut ar = Archive::new();
        ar.push("gen.head.weight", &[16, 3, 3, 3], &vec![0.0f32; 16 * 27]);
        let err = ar.expect::<f32>("gen.head.weight", &[64, 3, 3, 3]).unwrap_err();
        assert!(err.to_string().contains("gen.head.weight"));
    }
}
