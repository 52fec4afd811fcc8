//! Versioned weight checkpoints.
//!
//! Layout: `"DSCK"`, `u32 version`, `u32` kind length + kind, `u64` metadata
//! length + metadata JSON, serialized parameter store, SHA-256 trailer over
//! all preceding bytes.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use diffservo_nn::ParamStore;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DSCK";

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

/// Hex SHA-256 of a file's contents.
pub fn file_hash(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = fs::File::open(path)?;
    std::io::copy(&mut f, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

pub fn write_checkpoint<M: Serialize>(
    path: &Path,
    kind: &str,
    meta: &M,
    store: &ParamStore,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    buf.write_u32::<LittleEndian>(kind.len() as u32)?;
    buf.extend_from_slice(kind.as_bytes());
    let json = serde_json::to_vec(meta).map_err(|e| Error::Other(e.to_string()))?;
    buf.write_u64::<LittleEndian>(json.len() as u64)?;
    buf.extend_from_slice(&json);
    store.write_to(&mut buf)?;
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_checkpoint<M: DeserializeOwned>(path: &Path, kind: &str) -> Result<(M, ParamStore)> {
    let err = |detail: String| Error::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    if bytes.len() < 4 + 4 + 32 || &bytes[..4] != MAGIC {
        return Err(err("not a checkpoint file".into()));
    }
    let body = &bytes[..bytes.len() - 32];
    if Sha256::digest(body).as_slice() != &bytes[bytes.len() - 32..] {
        return Err(err("checksum mismatch".into()));
    }
    let mut c = Cursor::new(&body[4..]);
    let version = c.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let klen = c.read_u32::<LittleEndian>()? as usize;
    let mut k = vec![0u8; klen.min(256)];
    c.read_exact(&mut k)?;
    if k != kind.as_bytes() {
        return Err(err(format!(
            "expected a {kind} checkpoint, found {}",
            String::from_utf8_lossy(&k)
        )));
    }
    let jlen = c.read_u64::<LittleEndian>()? as usize;
    if jlen > body.len() {
        return Err(err("metadata length exceeds file".into()));
    }
    let mut json = vec![0u8; jlen];
    c.read_exact(&mut json)?;
    let meta = serde_json::from_slice(&json).map_err(|e| err(format!("metadata: {e}")))?;
    let store = ParamStore::read_from(&mut c).map_err(|e| err(e.to_string()))?;
    Ok((meta, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffservo_nn::Tensor;

    #[test]
    fn round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![2], vec![1.5, -2.0]));
        write_checkpoint(&path, "demo", &vec![1, 2, 3], &store).unwrap();
        let (meta, back): (Vec<i32>, _) = read_checkpoint(&path, "demo").unwrap();
        assert_eq!(meta, vec![1, 2, 3]);
        assert_eq!(back, store);
        assert!(read_checkpoint::<Vec<i32>>(&path, "other").is_err());
        let mut bytes = fs::read(&path).unwrap();
        bytes[12] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(read_checkpoint::<Vec<i32>>(&path, "demo").is_err());
    }
}
