//! Versioned little-endian container for trained parameters.
//!
//! ```text
//! "UNSG" | version u32 | tensor_count u32
//! in_channels u32 | out_channels u32 | depth u32 | base_width u32 | img_size u32
//! per tensor, sorted by name:
//!     name_len u32 | name (UTF-8) | rank u32 | extents u32 × rank | values f32 × numel
//! ```

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::unet::{ParamStore, UNetConfig};

pub const MAGIC: [u8; 4] = *b"UNSG";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes `params` under `config`. Values are stored as `f32` whatever `T` is.
pub fn encode<T: Real>(params: &ParamStore<T>, config: &UNetConfig) -> Result<Vec<u8>> {
    let payload: usize = params.num_scalars() * 4
        + params.iter().map(|(n, t)| 8 + n.len() + 4 * t.rank()).sum::<usize>();
    let mut out = Vec::with_capacity(32 + payload);
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, params.len())?;
    for v in [
        config.in_channels,
        config.out_channels,
        config.depth,
        config.base_width,
        config.img_size,
    ] {
        put_u32(&mut out, v)?;
    }
    for (name, tensor) in params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, tensor.rank())?;
        for &e in tensor.shape() {
            put_u32(&mut out, e)?;
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Integrity(format!(
                "truncated at byte {} reading {what}: need {n}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Inverse of [`encode`]. Every length is checked against the bytes that
/// remain before anything is allocated.
pub fn decode(bytes: &[u8]) -> Result<(ParamStore<f32>, UNetConfig)> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32("tensor count")?;
    let config = UNetConfig {
        in_channels: r.u32("config")?,
        out_channels: r.u32("config")?,
        depth: r.u32("config")?,
        base_width: r.u32("config")?,
        img_size: r.u32("config")?,
    };
    config
        .validate()
        .map_err(|e| Error::Integrity(format!("embedded model config is invalid: {e}")))?;

    let mut params = ParamStore::new();
    for i in 0..count {
        let name_len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Integrity(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")?;
        if rank.saturating_mul(4) > r.remaining() {
            return Err(Error::Integrity(format!("{name}: rank {rank} runs past end of file")));
        }
        let shape = (0..rank).map(|_| r.u32("extent")).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::Integrity(format!("{name}: shape {shape:?} runs past end of file")))?;
        let data = r
            .take(numel * 4, &name)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| Error::Integrity(format!("{name}: {e}")))?;
        if params.insert(name.clone(), tensor).is_some() {
            return Err(Error::Integrity(format!("duplicate tensor {name}")));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Integrity(format!("{} trailing bytes", r.remaining())));
    }
    params.check_layout(&config)?;
    Ok((params, config))
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = std::ffi::OsString::from(".");
    name.push(path.file_name().unwrap_or_default());
    name.push(format!(".{}.tmp", std::process::id()));
    path.with_file_name(name)
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers see either the old file or the complete new one.
pub fn save_checkpoint<T: Real>(params: &ParamStore<T>, config: &UNetConfig, path: &Path) -> Result<()> {
    let bytes = encode(params, config)?;
    let tmp = temp_path(path);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore<f32>, UNetConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Integrity(m) => Error::Integrity(format!("{}: {m}", path.display())),
        other => other,
    })
}
