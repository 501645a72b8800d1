//! Versioned binary container for parameter arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GDX1" | version u32 | tag (u32 len + utf8) | meta json (u32 len + utf8)
//! entry count u32
//! per entry: name (u32 len + utf8) | kind u8 (0 raw, 1 net)
//!            [net: layer count u32, per layer: in u32, out u32, activation u8]
//!            value count u64
//! then every entry's values as f64, in entry order
//! ```

use std::io::Write;
use std::path::Path;

use super::{Activation, LayerSpec, Net, NnError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GDX1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub layers: Option<Vec<LayerSpec>>,
    pub values: Vec<f64>,
}

impl CheckpointEntry {
    pub fn raw(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            layers: None,
            values,
        }
    }

    pub fn net(name: impl Into<String>, net: &Net) -> Self {
        Self {
            name: name.into(),
            layers: Some(net.layers().to_vec()),
            values: net.params().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub component: String,
    /// Free-form JSON kept verbatim so that round trips are byte-exact.
    pub meta: String,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn new(component: impl Into<String>, meta: String) -> Self {
        Self {
            component: component.into(),
            meta,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: CheckpointEntry) {
        self.entries.push(entry);
    }

    pub fn entry(&self, name: &str) -> Result<&CheckpointEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing entry {name:?}")))
    }

    pub fn raw(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.entry(name)?.values)
    }

    pub fn net(&self, name: &str) -> Result<Net> {
        let e = self.entry(name)?;
        let layers = e
            .layers
            .clone()
            .ok_or_else(|| NnError::Checkpoint(format!("entry {name:?} is not a net")))?;
        if layers.is_empty() || layers.windows(2).any(|w| w[0].output != w[1].input) {
            return Err(NnError::Checkpoint(format!("entry {name:?} has a bad layer table")));
        }
        Net::from_params(layers, e.values.clone())
    }

    pub fn expect_component(&self, component: &str) -> Result<()> {
        if self.component != component {
            return Err(NnError::Checkpoint(format!(
                "expected component {component:?}, found {:?}",
                self.component
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let data_len: usize = self.entries.iter().map(|e| e.values.len() * 8).sum();
        let mut out = Vec::with_capacity(64 + data_len);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.component);
        put_str(&mut out, &self.meta);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            put_str(&mut out, &e.name);
            match &e.layers {
                None => out.push(0),
                Some(layers) => {
                    out.push(1);
                    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
                    for l in layers {
                        out.extend_from_slice(&(l.input as u32).to_le_bytes());
                        out.extend_from_slice(&(l.output as u32).to_le_bytes());
                        out.push(l.activation.code());
                    }
                }
            }
            out.extend_from_slice(&(e.values.len() as u64).to_le_bytes());
        }
        for e in &self.entries {
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let component = r.string()?;
        let meta = r.string()?;
        let count = r.u32()? as usize;
        let mut headers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let layers = match r.u8()? {
                0 => None,
                1 => {
                    let n = r.u32()? as usize;
                    let mut layers = Vec::with_capacity(n.min(1024));
                    for _ in 0..n {
                        let input = r.u32()? as usize;
                        let output = r.u32()? as usize;
                        let code = r.u8()?;
                        let activation = Activation::from_code(code).ok_or_else(|| {
                            NnError::Checkpoint(format!("unknown activation code {code}"))
                        })?;
                        layers.push(LayerSpec::new(input, output, activation));
                    }
                    Some(layers)
                }
                k => return Err(NnError::Checkpoint(format!("unknown entry kind {k}"))),
            };
            let len = r.u64()? as usize;
            if let Some(layers) = &layers {
                let expected: usize = layers.iter().map(|l| l.param_count()).sum();
                if expected != len {
                    return Err(NnError::Checkpoint(format!(
                        "entry {name:?}: layer table implies {expected} values, header says {len}"
                    )));
                }
            }
            headers.push((name, layers, len));
        }
        let mut entries = Vec::with_capacity(headers.len());
        for (name, layers, len) in headers {
            let raw = r.take(len.checked_mul(8).ok_or_else(|| {
                NnError::Checkpoint("value count overflow".into())
            })?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(CheckpointEntry {
                name,
                layers,
                values,
            });
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            component,
            meta,
            entries,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
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
            .ok_or_else(|| NnError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| NnError::Checkpoint("invalid utf-8".into()))
    }
}
