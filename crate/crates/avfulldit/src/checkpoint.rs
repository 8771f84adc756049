//! On-disk container: magic, text header, named f64 blobs, checksum.
//!
//! Layout (all integers little-endian u64):
//!
//! ```text
//! "AVFD1"
//! header_len, header bytes (UTF-8 text, canonical key = value lines)
//! blob_count
//! per blob: name_len, name bytes, rank, dims..., f64 payload
//! fnv1a64 checksum of every byte above
//! ```
//!
//! Payload floats are stored as raw IEEE-754 bits, so a round trip is
//! bit-exact. Writers emit blobs in sorted-name order; a parameter set saved,
//! loaded, and saved again produces identical bytes.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, Model};
use crate::tensor::{fnv1a64, Tensor};

pub const MAGIC: &[u8; 5] = b"AVFD1";

/// A parsed container: free-form header text plus named tensors in file order.
#[derive(Debug, Clone)]
pub struct Container {
    pub header: String,
    pub blobs: Vec<(String, Tensor)>,
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serialize a container to bytes. Blobs are written in the order given;
/// callers wanting canonical output pass them sorted by name.
pub fn container_bytes<'a>(
    header: &str,
    blobs: impl Iterator<Item = (&'a String, &'a Tensor)>,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u64(&mut out, header.len() as u64);
    out.extend_from_slice(header.as_bytes());
    let blobs: Vec<_> = blobs.collect();
    push_u64(&mut out, blobs.len() as u64);
    for (name, t) in blobs {
        push_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        push_u64(&mut out, t.shape().len() as u64);
        for &d in t.shape() {
            push_u64(&mut out, d as u64);
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let checksum = fnv1a64(&out);
    push_u64(&mut out, checksum);
    out
}

pub fn save_container<'a>(
    path: &Path,
    header: &str,
    blobs: impl Iterator<Item = (&'a String, &'a Tensor)>,
) -> Result<()> {
    fs::write(path, container_bytes(header, blobs))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated container: wanted {n} bytes at offset {}, only {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .map_err(|_| Error::Checkpoint(format!("length {v} does not fit in usize")))
    }
}

/// Parse container bytes, verifying the checksum before trusting anything.
pub fn parse_container(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Checkpoint(format!(
            "file too short to be a container ({} bytes)",
            bytes.len()
        )));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored =
        u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:#018x}, computed {computed:#018x} — refusing corrupted container"
        )));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}: not a checkpoint container or unsupported version",
            String::from_utf8_lossy(magic)
        )));
    }
    let header_len = r.usize()?;
    let header = String::from_utf8(r.take(header_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("header is not valid UTF-8".into()))?;
    let blob_count = r.usize()?;
    let mut blobs = Vec::with_capacity(blob_count.min(1 << 20));
    for _ in 0..blob_count {
        let name_len = r.usize()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("blob name is not valid UTF-8".into()))?;
        let rank = r.usize()?;
        let mut shape = Vec::with_capacity(rank.min(64));
        for _ in 0..rank {
            shape.push(r.usize()?);
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * 8)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        blobs.push((
            name,
            Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?,
        ));
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last blob",
            body.len() - r.pos
        )));
    }
    Ok(Container { header, blobs })
}

pub fn load_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_container(&bytes)
}

impl Model {
    /// Write the model to a container file (canonical: sorted blob names,
    /// canonical header).
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = self.config.header_text(self.kind);
        save_container(path, &header, self.params.iter())
    }

    /// Read a model back, validating that the stored blobs exactly match the
    /// parameter schema of the stored architecture.
    pub fn load(path: &Path) -> Result<Model> {
        let c = load_container(path)?;
        let (config, kind) = ArchitectureConfig::from_header_text(&c.header)?;
        let mut params: IndexMap<String, Tensor> = IndexMap::new();
        for (name, t) in c.blobs {
            if params.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {name:?}")));
            }
        }
        // Validate against the schema the header implies: every expected
        // parameter present with the right shape, nothing extra.
        let expected = Model::build(&config, kind, 0)?;
        if params.len() != expected.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter set mismatch: file has {} tensors, architecture ({} {}) expects {}",
                params.len(),
                kind.name(),
                config.attention.name(),
                expected.params.len()
            )));
        }
        for (name, t) in &expected.params {
            let got = params.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter {name:?} for stored architecture"))
            })?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name:?}: file has {:?}, architecture expects {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        params.sort_keys();
        Ok(Model { config, kind, params })
    }
}
