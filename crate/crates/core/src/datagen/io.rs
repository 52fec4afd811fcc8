//! Binary dataset container.
//!
//! ```text
//! magic  "DSVD"
//! u32    version
//! u32    record count
//! u32    image height, u32 image width
//! f64    discount, f64 return_min, f64 return_max
//! u64    payload length in bytes
//! ...    payload: records back to back
//! [32]   SHA-256 of every preceding byte
//! ```
//! Each record: `u64 seed, u32 L, u8 arrived, f64 raw_return, f64 norm_return`,
//! then poses `(L+1)x3 f64`, feature poses `(L+1)x4 f64`, actions `Lx3 f64`,
//! rewards `(L+1) f64`, images `(L+1)xHxWx3 u8`. All integers and floats are
//! little-endian.

use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::{Dataset, TrajectoryRecord};
use crate::world::{Action, FeaturePose, Image, RobotPose};
use crate::{Error, Result};

pub const DATASET_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DSVD";
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 8 * 3 + 8;
const CHECKSUM_LEN: usize = 32;

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

fn record_bytes(r: &TrajectoryRecord, pixels: usize) -> u64 {
    let l = r.actions.len() as u64;
    let frames = l + 1;
    8 + 4 + 1 + 16 + frames * (3 + 4 + 1) * 8 + l * 3 * 8 + frames * pixels as u64
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let (h, w) = dataset.image_dims().unwrap_or((0, 0));
    let pixels = h * w * 3;
    for r in &dataset.records {
        r.check_consistency().map_err(Error::DatasetFormat)?;
        if r.images.iter().any(|im| im.height() != h || im.width() != w) {
            return Err(Error::DatasetFormat("mixed image sizes".into()));
        }
    }
    let payload: u64 = dataset.records.iter().map(|r| record_bytes(r, pixels)).sum();
    let file = File::create(path)?;
    let mut out = HashingWriter {
        inner: BufWriter::new(file),
        hasher: Sha256::new(),
    };
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(DATASET_VERSION)?;
    out.write_u32::<LittleEndian>(dataset.records.len() as u32)?;
    out.write_u32::<LittleEndian>(h as u32)?;
    out.write_u32::<LittleEndian>(w as u32)?;
    out.write_f64::<LittleEndian>(dataset.discount)?;
    out.write_f64::<LittleEndian>(dataset.return_min)?;
    out.write_f64::<LittleEndian>(dataset.return_max)?;
    out.write_u64::<LittleEndian>(payload)?;
    for r in &dataset.records {
        out.write_u64::<LittleEndian>(r.seed)?;
        out.write_u32::<LittleEndian>(r.actions.len() as u32)?;
        out.write_u8(r.arrived as u8)?;
        out.write_f64::<LittleEndian>(r.raw_return)?;
        out.write_f64::<LittleEndian>(r.norm_return)?;
        for p in &r.poses {
            for v in [p.x, p.y, p.psi] {
                out.write_f64::<LittleEndian>(v)?;
            }
        }
        for f in &r.feature_poses {
            for v in f.to_array() {
                out.write_f64::<LittleEndian>(v)?;
            }
        }
        for a in &r.actions {
            for v in a.to_array() {
                out.write_f64::<LittleEndian>(v)?;
            }
        }
        for &v in &r.rewards {
            out.write_f64::<LittleEndian>(v)?;
        }
        for im in &r.images {
            out.write_all(im.raw())?;
        }
    }
    let digest = out.hasher.finalize();
    let mut inner = out.inner;
    inner.write_all(&digest)?;
    inner.flush()?;
    Ok(())
}

fn format_err(e: std::io::Error) -> Error {
    Error::DatasetFormat(format!("payload does not match header: {e}"))
}

fn read_f64s(c: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    c.read_f64_into::<LittleEndian>(&mut v).map_err(format_err)?;
    Ok(v)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Dataset> {
    let truncated = |expected: usize| Error::DatasetTruncated {
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    if bytes.len() < 8 {
        return Err(truncated(HEADER_LEN + CHECKSUM_LEN));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::DatasetFormat("not a dataset file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::DatasetVersion {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN + CHECKSUM_LEN));
    }
    let mut c = Cursor::new(&bytes[8..HEADER_LEN]);
    let count = c.read_u32::<LittleEndian>()? as usize;
    let h = c.read_u32::<LittleEndian>()? as usize;
    let w = c.read_u32::<LittleEndian>()? as usize;
    let discount = c.read_f64::<LittleEndian>()?;
    let return_min = c.read_f64::<LittleEndian>()?;
    let return_max = c.read_f64::<LittleEndian>()?;
    let payload = c.read_u64::<LittleEndian>()? as usize;
    let expected = HEADER_LEN + payload + CHECKSUM_LEN;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::DatasetFormat(format!(
            "{} trailing bytes after checksum",
            bytes.len() - expected
        )));
    }
    let body_end = HEADER_LEN + payload;
    let digest = Sha256::digest(&bytes[..body_end]);
    if digest.as_slice() != &bytes[body_end..] {
        return Err(Error::DatasetChecksum);
    }

    let pixels = h * w * 3;
    let mut c = Cursor::new(&bytes[HEADER_LEN..body_end]);
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let seed = c.read_u64::<LittleEndian>().map_err(format_err)?;
        let l = c.read_u32::<LittleEndian>().map_err(format_err)? as usize;
        let arrived = c.read_u8().map_err(format_err)? != 0;
        let raw_return = c.read_f64::<LittleEndian>().map_err(format_err)?;
        let norm_return = c.read_f64::<LittleEndian>().map_err(format_err)?;
        let frames = l + 1;
        let poses = read_f64s(&mut c, frames * 3)?
            .chunks(3)
            .map(|p| RobotPose {
                x: p[0],
                y: p[1],
                psi: p[2],
            })
            .collect();
        let feature_poses = read_f64s(&mut c, frames * 4)?
            .chunks(4)
            .map(|f| FeaturePose {
                r: f[0],
                theta: f[1],
                phi: f[2],
                gamma: f[3],
            })
            .collect();
        let actions = read_f64s(&mut c, l * 3)?.chunks(3).map(Action::from_slice).collect();
        let rewards = read_f64s(&mut c, frames)?;
        let mut images = Vec::with_capacity(frames);
        for _ in 0..frames {
            let mut px = vec![0u8; pixels];
            c.read_exact(&mut px).map_err(format_err)?;
            images.push(Image::from_raw(h, w, px));
        }
        records.push(TrajectoryRecord {
            seed,
            images,
            feature_poses,
            actions,
            rewards,
            poses,
            raw_return,
            norm_return,
            arrived,
        });
    }
    if (c.position() as usize) != payload {
        return Err(Error::DatasetFormat("payload length disagrees with records".into()));
    }
    Ok(Dataset {
        records,
        return_min,
        return_max,
        discount,
    })
}
