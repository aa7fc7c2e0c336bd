//! Binary checkpoints and embedding tables.
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::eval::EmbeddingTable;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GSSLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const EMBEDDING_MAGIC: &[u8; 8] = b"GSSLEMB1";

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), msg: msg.into() }
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| format_err(self.path, "size overflow"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn push_u32(out: &mut Vec<u8>, v: usize, path: &Path) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| format_err(path, format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Writes named matrices. Records follow the header until end of file.
pub fn save_checkpoint<'a>(path: impl AsRef<Path>, records: impl IntoIterator<Item = (&'a str, &'a Matrix)>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (name, m) in records {
        if !m.data().iter().all(|&v| (v as f32).is_finite()) {
            return Err(Error::Training(format!("refusing to checkpoint non-finite parameter '{name}'")));
        }
        push_u32(&mut out, name.len(), path)?;
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, m.rows(), path)?;
        push_u32(&mut out, m.cols(), path)?;
        for v in m.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    write_file(path, &out)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Matrix)>> {
    let path = path.as_ref();
    let buf = read_file(path)?;
    let mut r = Reader { path, buf: &buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(format_err(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(path, format!("unsupported checkpoint version {version}")));
    }
    let mut records = Vec::new();
    while !r.done() {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| format_err(path, "parameter name is not UTF-8"))?;
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let data = r.f32s(rows * cols)?;
        records.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingFormat {
    Binary,
    Csv,
}

impl EmbeddingFormat {
    /// `.csv` files are text; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => EmbeddingFormat::Csv,
            _ => EmbeddingFormat::Binary,
        }
    }
}

pub fn export_embeddings(emb: &EmbeddingTable, path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<()> {
    let path = path.as_ref();
    if emb.n() == 0 {
        return Err(Error::contract("refusing to export an empty embedding table"));
    }
    let mut out = Vec::new();
    match format {
        EmbeddingFormat::Binary => {
            out.extend_from_slice(EMBEDDING_MAGIC);
            push_u32(&mut out, emb.n(), path)?;
            push_u32(&mut out, emb.d(), path)?;
            for v in emb.data().data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            for &id in emb.ids() {
                push_u32(&mut out, id, path)?;
            }
        }
        EmbeddingFormat::Csv => {
            let mut text = String::from("id");
            for j in 0..emb.d() {
                text.push_str(&format!(",e{j}"));
            }
            text.push('\n');
            for (i, &id) in emb.ids().iter().enumerate() {
                text.push_str(&id.to_string());
                for v in emb.data().row(i) {
                    text.push_str(&format!(",{}", *v as f32));
                }
                text.push('\n');
            }
            out = text.into_bytes();
        }
    }
    write_file(path, &out)
}

pub fn import_embeddings(path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let buf = read_file(path)?;
    match format {
        EmbeddingFormat::Binary => {
            let mut r = Reader { path, buf: &buf, pos: 0 };
            if r.take(8)? != EMBEDDING_MAGIC {
                return Err(format_err(path, "not an embedding file (bad magic)"));
            }
            let (n, d) = (r.u32()? as usize, r.u32()? as usize);
            let data = r.f32s(n * d)?;
            let ids = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            if !r.done() {
                return Err(format_err(path, "trailing bytes after ids"));
            }
            EmbeddingTable::new(Matrix::from_vec(n, d, data)?, ids)
        }
        EmbeddingFormat::Csv => {
            let text = String::from_utf8(buf).map_err(|_| format_err(path, "not UTF-8"))?;
            let mut lines = text.lines();
            let header = lines.next().ok_or_else(|| format_err(path, "empty file"))?;
            let d = header.split(',').count() - 1;
            let (mut data, mut ids) = (Vec::new(), Vec::new());
            for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let bad = || format_err(path, format!("line {}: malformed row", i + 2));
                let mut fields = line.split(',');
                ids.push(fields.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?);
                let row: Vec<f64> =
                    fields.map(|s| s.trim().parse::<f32>().map(f64::from)).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
                if row.len() != d {
                    return Err(bad());
                }
                data.extend(row);
            }
            EmbeddingTable::new(Matrix::from_vec(ids.len(), d, data)?, ids)
        }
    }
}
