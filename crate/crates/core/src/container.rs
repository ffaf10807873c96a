//! On-disk container for checkpoints and preprocessed datasets.
//!
//! Layout: one JSON header line, then the concatenation of all tensor
//! buffers as little-endian f32. The header lists every tensor with its
//! path, shape, and element offset/length into the blob. Entries are
//! sorted by path and JSON keys are sorted, so writing the same contents
//! twice produces identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsanError};

pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    path: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    meta: serde_json::Value,
    entries: Vec<Entry>,
}

/// Accumulates tensors and metadata, then writes them out in one pass.
pub struct ContainerWriter {
    kind: String,
    meta: serde_json::Map<String, serde_json::Value>,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl ContainerWriter {
    pub fn new(kind: &str) -> Self {
        ContainerWriter {
            kind: kind.to_string(),
            meta: serde_json::Map::new(),
            tensors: BTreeMap::new(),
        }
    }

    /// Attach a JSON metadata section (config, schema, provenance...).
    pub fn set_meta(&mut self, key: &str, value: serde_json::Value) {
        self.meta.insert(key.to_string(), value);
    }

    pub fn add(&mut self, path: &str, shape: &[usize], data: &[f32]) -> Result<()> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TsanError::shape(format!(
                "container entry {path:?}: shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if self
            .tensors
            .insert(path.to_string(), (shape.to_vec(), data.to_vec()))
            .is_some()
        {
            return Err(TsanError::contract(format!(
                "container entry {path:?} added twice"
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0usize;
        for (path, (shape, data)) in &self.tensors {
            entries.push(Entry {
                path: path.clone(),
                shape: shape.clone(),
                offset,
                len: data.len(),
            });
            offset += data.len();
        }
        let header = Header {
            version: CONTAINER_VERSION,
            kind: self.kind.clone(),
            meta: serde_json::Value::Object(self.meta.clone()),
            entries,
        };
        let line = serde_json::to_string(&header)
            .map_err(|e| TsanError::format(format!("container header: {e}")))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        for (_, (_, data)) in &self.tensors {
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// A fully-loaded container.
#[derive(Debug)]
pub struct ContainerReader {
    kind: String,
    meta: serde_json::Value,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl ContainerReader {
    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut header_bytes = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            let n = reader.read(&mut byte)?;
            if n == 0 {
                return Err(TsanError::format(
                    "container: missing header line".to_string(),
                ));
            }
            if byte[0] == b'\n' {
                break;
            }
            header_bytes.push(byte[0]);
        }
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| TsanError::format(format!("container header: {e}")))?;
        if header.version != CONTAINER_VERSION {
            return Err(TsanError::format(format!(
                "container version {} unsupported (expected {})",
                header.version, CONTAINER_VERSION
            )));
        }
        let mut blob_bytes = Vec::new();
        reader.read_to_end(&mut blob_bytes)?;
        if blob_bytes.len() % 4 != 0 {
            return Err(TsanError::format(format!(
                "container blob length {} is not a multiple of 4",
                blob_bytes.len()
            )));
        }
        let blob: Vec<f32> = blob_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let total: usize = header.entries.iter().map(|e| e.len).sum();
        if total != blob.len() {
            return Err(TsanError::format(format!(
                "container blob holds {} elements but the header claims {}",
                blob.len(),
                total
            )));
        }
        let mut tensors = BTreeMap::new();
        for e in &header.entries {
            let numel: usize = e.shape.iter().product();
            if numel != e.len {
                return Err(TsanError::format(format!(
                    "container entry {:?}: shape {:?} inconsistent with len {}",
                    e.path, e.shape, e.len
                )));
            }
            let end = e.offset.checked_add(e.len).filter(|&end| end <= blob.len());
            let end = end.ok_or_else(|| {
                TsanError::format(format!(
                    "container entry {:?}: range {}..+{} outside blob",
                    e.path, e.offset, e.len
                ))
            })?;
            if tensors
                .insert(
                    e.path.clone(),
                    (e.shape.clone(), blob[e.offset..end].to_vec()),
                )
                .is_some()
            {
                return Err(TsanError::format(format!(
                    "container entry {:?} listed twice",
                    e.path
                )));
            }
        }
        Ok(ContainerReader {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            TsanError::Io(std::io::Error::new(
                e.kind(),
                format!("cannot open {}: {e}", path.display()),
            ))
        })?;
        Self::read_from(file)
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn meta(&self) -> &serde_json::Value {
        &self.meta
    }

    pub fn meta_section(&self, key: &str) -> Result<&serde_json::Value> {
        self.meta.get(key).ok_or_else(|| {
            TsanError::format(format!("container is missing the {key:?} metadata section"))
        })
    }

    pub fn get(&self, path: &str) -> Result<(&[usize], &[f32])> {
        self.tensors
            .get(path)
            .map(|(s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| TsanError::format(format!("container has no entry {path:?}")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}
