//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FSV2" | u32 version | u32 entry count | u32 config bytes | config text
//! per entry: u16 name bytes | name | u8 rank | rank x u64 dims | f32 payload
//! u64 CRC-64/XZ of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use crate::adapter::ADAPTER_PREFIX;
use crate::config::KvDoc;
use crate::error::{Error, Result};
use crate::params::ParameterStore;

pub const MAGIC: &[u8; 4] = b"FSV2";
pub const FORMAT_VERSION: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    BackboneOnly,
    BackboneAndAdapter,
}

impl std::fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CheckpointKind::BackboneOnly => "backbone only",
            CheckpointKind::BackboneAndAdapter => "backbone + adapter",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: KvDoc,
    pub store: ParameterStore,
}

impl Checkpoint {
    pub fn kind(&self) -> CheckpointKind {
        if self.store.entries().iter().any(|e| e.name.starts_with(ADAPTER_PREFIX)) {
            CheckpointKind::BackboneAndAdapter
        } else {
            CheckpointKind::BackboneOnly
        }
    }
}

pub fn encode(store: &ParameterStore, config: &KvDoc) -> Result<Vec<u8>> {
    let text = config.render();
    let mut out = Vec::with_capacity(16 + text.len() + store.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_len(store.len(), "entry count")?.to_le_bytes());
    out.extend_from_slice(&u32_len(text.len(), "config block")?.to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for e in store.entries() {
        let name = e.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("parameter name `{}` is too long", e.name)))?;
        let rank = u8::try_from(e.shape.len())
            .map_err(|_| Error::Checkpoint(format!("`{}` has too many dimensions", e.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &e.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = CRC64.checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} too large")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 + 4 + 4 + 4 + 8 {
        return Err(Error::Checkpoint(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes, not a checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let actual = CRC64.checksum(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch (stored {stored:016x}, computed {actual:016x}); file is corrupt"
        )));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = r.u32("entry count")? as usize;
    let cfg_len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(cfg_len, "config block")?)
        .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
    let config = KvDoc::parse(text)?;
    let mut store = ParameterStore::new(0);
    for k in 0..count {
        let n = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(n, "name")?)
            .map_err(|_| Error::Checkpoint(format!("entry {k} name is not UTF-8")))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("`{name}` shape overflows")))?;
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| Error::Checkpoint(format!("`{name}` shape overflows")))?,
            "payload",
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        store
            .insert(&name, shape, values)
            .map_err(|e| Error::Checkpoint(format!("entry `{name}`: {e}")))?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last entry",
            body.len() - r.pos
        )));
    }
    Ok(Checkpoint { config, store })
}

pub fn save(path: &Path, store: &ParameterStore, config: &KvDoc) -> Result<()> {
    fs::write(path, encode(store, config)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}
