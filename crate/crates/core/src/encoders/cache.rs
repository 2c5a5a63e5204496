use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use super::{EncoderSpec, FeatureSeq};
use crate::error::{Error, Result};

/// On-disk feature cache.
///
/// Layout: `<root>/<modality>/<encoder_id>/<key>.f32` holds row-major
/// little-endian `f32` values; `<key>.meta` holds `rows cols checksum` where the
/// checksum is the first 16 bytes of the payload's SHA-256, hex encoded. Both
/// files are published with write-temp-then-rename, payload first, so a reader
/// that sees a `.meta` file always finds its payload.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    root: PathBuf,
}

pub fn checksum_hex(payload: &[u8]) -> String {
    hex::encode(&Sha256::digest(payload)[..16])
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, spec: &EncoderSpec) -> PathBuf {
        self.root.join(spec.modality.as_str()).join(sanitize(&spec.encoder_id))
    }

    pub fn paths(&self, key: &str, spec: &EncoderSpec) -> (PathBuf, PathBuf) {
        let dir = self.dir(spec);
        (dir.join(format!("{key}.f32")), dir.join(format!("{key}.meta")))
    }

    /// Returns the cached sequence for `key`, or runs `producer`, stores its
    /// output and returns it. A hit never invokes `producer`.
    pub fn get_or_encode<F>(&self, key: &str, spec: &EncoderSpec, producer: F) -> Result<FeatureSeq>
    where
        F: FnOnce() -> Result<FeatureSeq>,
    {
        if let Some(hit) = self.get(key, spec)? {
            return Ok(hit);
        }
        let seq = producer()?;
        self.put(key, spec, &seq)?;
        Ok(seq)
    }

    pub fn get(&self, key: &str, spec: &EncoderSpec) -> Result<Option<FeatureSeq>> {
        let (payload_path, meta_path) = self.paths(key, spec);
        let meta = match fs::read_to_string(&meta_path) {
            Ok(m) => m,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(meta_path, e)),
        };
        let corrupt = |reason: String| Error::CacheCorrupt {
            key: key.to_string(),
            reason,
        };
        let fields: Vec<&str> = meta.split_whitespace().collect();
        let [rows, cols, checksum] = fields[..] else {
            return Err(corrupt(format!("malformed meta {meta:?}")));
        };
        let rows: usize = rows.parse().map_err(|_| corrupt("bad row count".into()))?;
        let cols: usize = cols.parse().map_err(|_| corrupt("bad column count".into()))?;
        let payload = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
        if payload.len() != rows * cols * 4 {
            return Err(corrupt(format!(
                "payload has {} bytes, meta says {rows}x{cols}",
                payload.len()
            )));
        }
        if checksum_hex(&payload) != checksum {
            return Err(corrupt("checksum mismatch".into()));
        }
        if cols != spec.output_dim {
            return Err(corrupt(format!(
                "cached dim {cols} differs from registered dim {}",
                spec.output_dim
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        FeatureSeq::new(data, rows, cols, spec.modality, spec.encoder_id.clone())
            .map_err(|e| corrupt(e.to_string()))
            .map(Some)
    }

    pub fn put(&self, key: &str, spec: &EncoderSpec, seq: &FeatureSeq) -> Result<()> {
        let dir = self.dir(spec);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (payload_path, meta_path) = self.paths(key, spec);
        let payload: Vec<u8> = seq.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let meta = format!("{} {} {}\n", seq.rows(), seq.dim(), checksum_hex(&payload));
        publish(&dir, &payload_path, &payload)?;
        publish(&dir, &meta_path, meta.as_bytes())
    }

    pub fn remove(&self, key: &str, spec: &EncoderSpec) -> Result<()> {
        let (payload_path, meta_path) = self.paths(key, spec);
        for p in [meta_path, payload_path] {
            match fs::remove_file(&p) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(Error::io(p, e)),
            }
        }
        Ok(())
    }
}

fn publish(dir: &Path, target: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(target).map_err(|e| Error::io(target, e.error))?;
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
