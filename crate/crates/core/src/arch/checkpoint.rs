//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! "RNAN"                     4 bytes magic
//! version                    u32 (currently 1)
//! config_len, config         u32 + UTF-8 TOML of the NetworkConfig
//! param_count                u32
//! param_count × entry        parameter values in canonical order
//! has_moments                u8 (0 or 1)
//! [step                      u64
//!  param_count × entry       Adam first moments
//!  param_count × entry]      Adam second moments
//!
//! entry = name_len u32, name bytes, 4 × u32 dims (n, c, h, w), n·c·h·w × f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::NetworkConfig;
use super::network::Rnan;
use super::params::{Param, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub const MAGIC: &[u8; 4] = b"RNAN";
pub const FORMAT_VERSION: u32 = 1;

/// A decoded checkpoint. Moments are zero when the file carried none.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub store: ParamStore<f32>,
    pub has_moments: bool,
}

impl Checkpoint {
    /// Builds the network described by the checkpoint and checks the stored
    /// parameters match it.
    pub fn network(&self) -> Result<Rnan> {
        let net = Rnan::new(&self.config)?;
        self.store.check_layout(net.layout())?;
        Ok(net)
    }
}

pub fn write_checkpoint<T: Real, W: Write>(
    mut w: W,
    config: &NetworkConfig,
    store: &ParamStore<T>,
    with_moments: bool,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let text = toml::to_string(config).map_err(|e| Error::Format(e.to_string()))?;
    write_u32(&mut w, text.len())?;
    w.write_all(text.as_bytes())?;
    write_u32(&mut w, store.len())?;
    for p in store.params() {
        write_entry(&mut w, &p.name, &p.value)?;
    }
    w.write_all(&[u8::from(with_moments)])?;
    if with_moments {
        w.write_all(&store.step().to_le_bytes())?;
        for p in store.params() {
            write_entry(&mut w, &p.name, &p.m)?;
        }
        for p in store.params() {
            write_entry(&mut w, &p.name, &p.v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an RNAN checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let text = String::from_utf8(read_bytes(&mut r, len)?)
        .map_err(|_| Error::Format("config is not UTF-8".into()))?;
    let config: NetworkConfig =
        toml::from_str(&text).map_err(|e| Error::Format(format!("bad embedded config: {e}")))?;
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        entries.push(read_entry(&mut r)?);
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let has_moments = match flag[0] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad moments flag {other}"))),
    };
    let mut params: Vec<Param<f32>> = entries
        .into_iter()
        .map(|(name, value)| Param {
            m: Tensor4::zeros(value.dims()),
            v: Tensor4::zeros(value.dims()),
            name,
            value,
        })
        .collect();
    let mut step = 0;
    if has_moments {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        step = u64::from_le_bytes(buf);
        for which in 0..2 {
            for p in params.iter_mut() {
                let (name, t) = read_entry(&mut r)?;
                if name != p.name || t.dims() != p.value.dims() {
                    return Err(Error::Format(format!("moment entry {name} does not match {}", p.name)));
                }
                if which == 0 {
                    p.m = t;
                } else {
                    p.v = t;
                }
            }
        }
    }
    let store = ParamStore::from_params(params, step)?;
    Ok(Checkpoint { config, store, has_moments })
}

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    config: &NetworkConfig,
    store: &ParamStore<T>,
    with_moments: bool,
) -> Result<()> {
    let file = File::create(path)?;
    write_checkpoint(BufWriter::new(file), config, store, with_moments)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_bytes<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.by_ref().take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    Ok(buf)
}

fn write_entry<T: Real, W: Write>(w: &mut W, name: &str, t: &Tensor4<T>) -> Result<()> {
    write_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    for d in t.dims() {
        write_u32(w, d)?;
    }
    let mut bytes = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn read_entry<R: Read>(r: &mut R) -> Result<(String, Tensor4<f32>)> {
    let len = read_u32(r)? as usize;
    let name = String::from_utf8(read_bytes(r, len)?)
        .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = read_u32(r)? as usize;
    }
    let count: usize = dims.iter().product();
    let bytes = read_bytes(r, count * 4)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((name, Tensor4::from_vec(dims, data)?))
}
