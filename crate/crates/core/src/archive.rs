//! Matrix archive container shared by features, representations and
//! embeddings.
//!
//! The `.ark` file is a concatenation of records:
//!
//! ```text
//! u32 LE  id length, then id bytes (UTF-8)
//! u32 LE  rows (T), u32 LE cols (D)
//! T·D     f32 LE values, row-major        -- when T > 0
//! u32 LE  reason length, reason bytes     -- when T == 0 && D == 0 (skip entry)
//! ```
//!
//! The `.idx` file holds one `id<TAB>byte-offset` line per record.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::{read_to_string, write_atomic};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Matrix { rows: usize, cols: usize, data: Vec<f32> },
    Skip { reason: String },
}

impl Entry {
    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Self {
        Entry::Matrix {
            rows,
            cols,
            data: data.iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn to_tensor(&self) -> Option<Tensor> {
        match self {
            Entry::Matrix { rows, cols, data } => Some(
                Tensor::matrix(*rows, *cols, data.iter().map(|v| *v as f64).collect())
                    .expect("archive record shape"),
            ),
            Entry::Skip { .. } => None,
        }
    }
}

#[derive(Default)]
pub struct ArchiveWriter {
    bytes: Vec<u8>,
    index: String,
}

impl ArchiveWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, id: &str, entry: &Entry) -> Result<()> {
        if id.contains(['\t', '\n']) {
            return Err(Error::InvalidArgument(format!("archive id {id:?} contains a tab or newline")));
        }
        let offset = self.bytes.len();
        writeln!(self.index, "{id}\t{offset}").expect("string write");
        put_str(&mut self.bytes, id);
        match entry {
            Entry::Matrix { rows, cols, data } => {
                if *rows == 0 || rows * cols != data.len() {
                    return Err(Error::shape("archive", &[*rows, *cols], &[data.len()]));
                }
                self.bytes.extend_from_slice(&(*rows as u32).to_le_bytes());
                self.bytes.extend_from_slice(&(*cols as u32).to_le_bytes());
                for v in data {
                    self.bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            Entry::Skip { reason } => {
                self.bytes.extend_from_slice(&0u32.to_le_bytes());
                self.bytes.extend_from_slice(&0u32.to_le_bytes());
                put_str(&mut self.bytes, reason);
            }
        }
        Ok(())
    }

    pub fn finish(self, ark: &Path, idx: &Path) -> Result<()> {
        write_atomic(ark, &self.bytes)?;
        write_atomic(idx, self.index.as_bytes())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// In-memory archive with index lookup.
#[derive(Clone, Debug, Default)]
pub struct Archive {
    ids: Vec<String>,
    entries: HashMap<String, Entry>,
}

impl Archive {
    pub fn read(ark: &Path, idx: &Path) -> Result<Self> {
        let bytes = std::fs::read(ark).map_err(|e| Error::io(ark, e))?;
        let index = read_to_string(idx)?;
        let mut out = Archive::default();
        for (ln, line) in index.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                path: idx.display().to_string(),
                line: ln + 1,
                msg: msg.to_string(),
            };
            let (id, off) = line.split_once('\t').ok_or_else(|| parse_err("expected id<TAB>offset"))?;
            let off: usize = off.parse().map_err(|_| parse_err("bad offset"))?;
            let (rec_id, entry) = parse_record(&bytes, off)
                .ok_or_else(|| Error::io(ark, std::io::ErrorKind::UnexpectedEof.into()))?;
            if rec_id != id {
                return Err(parse_err(&format!("index id {id} points at record {rec_id}")));
            }
            out.ids.push(id.to_string());
            out.entries.insert(id.to_string(), entry);
        }
        Ok(out)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&Entry> {
        self.entries.get(id)
    }

    pub fn tensor(&self, id: &str) -> Option<Tensor> {
        self.get(id).and_then(Entry::to_tensor)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn parse_record(bytes: &[u8], mut off: usize) -> Option<(String, Entry)> {
    let u32_at = |off: &mut usize| -> Option<u32> {
        let b = bytes.get(*off..*off + 4)?;
        *off += 4;
        Some(u32::from_le_bytes(b.try_into().ok()?))
    };
    let n = u32_at(&mut off)? as usize;
    let id = String::from_utf8(bytes.get(off..off + n)?.to_vec()).ok()?;
    off += n;
    let rows = u32_at(&mut off)? as usize;
    let cols = u32_at(&mut off)? as usize;
    if rows == 0 && cols == 0 {
        let n = u32_at(&mut off)? as usize;
        let reason = String::from_utf8(bytes.get(off..off + n)?.to_vec()).ok()?;
        return Some((id, Entry::Skip { reason }));
    }
    let raw = bytes.get(off..off + rows * cols * 4)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Some((id, Entry::Matrix { rows, cols, data }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_skip_entries() {
        let dir = tempfile::tempdir().unwrap();
        let ark = dir.path().join("x.ark");
        let idx = dir.path().join("x.idx");
        let mut w = ArchiveWriter::new();
        w.push("utt-a", &Entry::from_rows(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5])).unwrap();
        w.push("utt-b", &Entry::Skip { reason: "no-speech".into() }).unwrap();
        w.finish(&ark, &idx).unwrap();
        let a = Archive::read(&ark, &idx).unwrap();
        assert_eq!(a.ids(), &["utt-a".to_string(), "utt-b".to_string()]);
        assert_eq!(a.tensor("utt-a").unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
        assert_eq!(a.get("utt-b"), Some(&Entry::Skip { reason: "no-speech".into() }));
        let text = std::fs::read_to_string(&idx).unwrap();
        assert_eq!(text.lines().next(), Some("utt-a\t0"));
    }

    #[test]
    fn truncated_archive_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let ark = dir.path().join("x.ark");
        let idx = dir.path().join("x.idx");
        let mut w = ArchiveWriter::new();
        w.push("u", &Entry::from_rows(1, 4, &[0.0; 4])).unwrap();
        w.finish(&ark, &idx).unwrap();
        let bytes = std::fs::read(&ark).unwrap();
        std::fs::write(&ark, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(Archive::read(&ark, &idx), Err(Error::Io { .. })));
    }
}
