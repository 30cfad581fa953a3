//! Embedding container: magic "PEMB", version u32, n / c_seq / c_ter as
//! u64, then the e_seq, e_sec and e_ter blocks as row-major f32, all
//! little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use plp_tensor::Tensor;

use super::{MultiLevelEmbeddings, C_SEC};
use crate::error::{Error, Result};

pub const PEMB_MAGIC: &[u8; 4] = b"PEMB";
pub const PEMB_VERSION: u32 = 1;

fn fmt_err(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        field,
        reason: reason.into(),
    }
}

pub fn write_embeddings<W: Write>(emb: &MultiLevelEmbeddings, w: &mut W) -> Result<()> {
    emb.validate()?;
    w.write_all(PEMB_MAGIC)?;
    w.write_all(&PEMB_VERSION.to_le_bytes())?;
    for d in [emb.len(), emb.c_seq(), emb.c_ter()] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for t in [&emb.e_seq, &emb.e_sec, &emb.e_ter] {
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for &x in t.data() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], field: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => fmt_err(field, "file ends early"),
        _ => Error::Io(e),
    })
}

fn read_u64(r: &mut impl Read, field: &'static str) -> Result<usize> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, field)?;
    usize::try_from(u64::from_le_bytes(b)).map_err(|_| fmt_err(field, "value does not fit in memory"))
}

fn read_block(r: &mut impl Read, rows: usize, cols: usize, field: &'static str) -> Result<Tensor> {
    let len = rows
        .checked_mul(cols)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| fmt_err(field, "declared size overflows"))?;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(fmt_err(
            field,
            format!("payload holds {} bytes, header declares {len}", buf.len()),
        ));
    }
    let data: Vec<f64> = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(fmt_err(field, "non-finite value"));
    }
    Ok(Tensor::new([rows, cols], data)?)
}

pub fn read_embeddings<R: Read>(r: &mut R) -> Result<MultiLevelEmbeddings> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != PEMB_MAGIC {
        return Err(fmt_err("magic", format!("expected {PEMB_MAGIC:?}, found {magic:?}")));
    }
    let mut v = [0u8; 4];
    read_exact(r, &mut v, "version")?;
    let version = u32::from_le_bytes(v);
    if version != PEMB_VERSION {
        return Err(fmt_err("version", format!("unsupported version {version}")));
    }
    let n = read_u64(r, "n")?;
    let c_seq = read_u64(r, "c_seq")?;
    let c_ter = read_u64(r, "c_ter")?;
    if n == 0 {
        return Err(fmt_err("n", "zero residues"));
    }
    if c_seq == 0 {
        return Err(fmt_err("c_seq", "zero width"));
    }
    if c_ter == 0 {
        return Err(fmt_err("c_ter", "zero width"));
    }
    let e_seq = read_block(r, n, c_seq, "e_seq")?;
    let e_sec = read_block(r, n, C_SEC, "e_sec")?;
    let e_ter = read_block(r, n, c_ter, "e_ter")?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(fmt_err("trailer", "bytes after the e_ter block"));
    }
    MultiLevelEmbeddings::new(e_seq, e_sec, e_ter)
}

/// Atomic write: the file appears complete or not at all.
pub fn save_embeddings(emb: &MultiLevelEmbeddings, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_embeddings(emb, &mut buf)?;
    let tmp = path.with_extension("pemb.tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<MultiLevelEmbeddings> {
    let bytes = fs::read(path)?;
    read_embeddings(&mut bytes.as_slice())
}
