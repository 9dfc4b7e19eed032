//! MNCP checkpoint format, all integers little-endian:
//!
//! ```text
//! "MNCP" | version u32 = 1 | tensor count u32
//! per tensor: name length u16 | UTF-8 name | rank u8 | dims u32 × rank | f64 × numel
//! echo length u32 | UTF-8 "key=value\n" lines
//! ```

use std::collections::HashSet;
use std::path::Path;

use modenorm::Tensor;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"MNCP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub echo: Vec<(String, String)>,
}

fn err(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            err(format!(
                "truncated while reading {what}: need {n} bytes at offset {}, have {}",
                self.at,
                self.bytes.len() - self.at
            ))
        })?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| err(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.tensors.len()).map_err(|_| err("too many tensors"))?;
        out.extend_from_slice(&count.to_le_bytes());
        let mut seen = HashSet::new();
        for (name, t) in &self.tensors {
            if !seen.insert(name.as_str()) {
                return Err(err(format!("duplicate tensor name {name:?}")));
            }
            let len = u16::try_from(name.len()).map_err(|_| err(format!("tensor name too long: {name:?}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.rank()).map_err(|_| err(format!("rank of {name:?} exceeds 255")))?;
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| err(format!("dimension of {name:?} exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut echo = String::new();
        for (k, v) in &self.echo {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(err(format!("echo entry {k:?}={v:?} is not a single key=value line")));
            }
            echo.push_str(&format!("{k}={v}\n"));
        }
        let len = u32::try_from(echo.len()).map_err(|_| err("config echo too long"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(echo.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(err("bad magic, not an MNCP checkpoint"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(err(format!("unsupported version {version}, expected {VERSION}")));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = r.utf8(len, "tensor name")?;
            if !seen.insert(name.clone()) {
                return Err(err(format!("duplicate tensor name {name:?}")));
            }
            let rank = r.u8("rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| err("tensor too large"))?;
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| err("tensor too large"))?, "tensor data")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        let len = r.u32("config echo length")? as usize;
        let text = r.utf8(len, "config echo")?;
        let echo = text
            .lines()
            .map(|line| {
                line.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| err(format!("malformed echo line {line:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if r.at != bytes.len() {
            return Err(err(format!("{} trailing bytes after config echo", bytes.len() - r.at)));
        }
        Ok(Self { tensors, echo })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| CliError::io(path, e))?)
    }

    pub fn echo_value(&self, key: &str) -> Option<&str> {
        self.echo.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}
