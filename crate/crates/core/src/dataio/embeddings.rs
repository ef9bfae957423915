//! FEMB: little-endian frame-embedding dump.
//!
//! ```text
//! "FEMB" | u32 version | u32 D | u64 count
//! count × ( u16 id_len | id bytes | u32 T | T·D × f32 )
//! ```

use std::path::Path;

use super::{put_string, read_file_bytes, write_file_bytes, ByteReader};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FEMB_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"FEMB";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    /// `T × D`; values are stored as 32-bit floats.
    pub frames: Tensor,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, frames: Tensor) -> Self {
        Self { id: id.into(), frames }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

pub fn encode_embeddings(dim: usize, records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let dim32 = u32::try_from(dim).map_err(|_| Error::invalid("dim", "exceeds u32"))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FEMB_VERSION.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        let (t, d) = match r.frames.shape() {
            [t, d] => (*t, *d),
            s => return Err(Error::shape("write_embeddings", format!("`{}` frames must be T × D, got {s:?}", r.id))),
        };
        if d != dim {
            return Err(Error::shape(
                "write_embeddings",
                format!("`{}` has width {d}, file width is {dim}", r.id),
            ));
        }
        put_string(&mut out, &r.id, "utterance id")?;
        let t32 = u32::try_from(t).map_err(|_| Error::invalid("frames", "T exceeds u32"))?;
        out.extend_from_slice(&t32.to_le_bytes());
        for &v in r.frames.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingFile> {
    let mut r = ByteReader::new(bytes, "FEMB");
    r.magic(MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != FEMB_VERSION {
        return Err(r.error_at(at, format!("unsupported version {version}")));
    }
    let dim = r.u32("dimension")? as usize;
    let count = r.u64("record count")?;
    let mut records = Vec::new();
    for _ in 0..count {
        let id = r.string("utterance id")?;
        let at = r.offset();
        let t = r.u32("frame count")? as usize;
        if t == 0 || dim == 0 {
            return Err(r.error_at(at, format!("`{id}` has an empty {t} × {dim} frame matrix")));
        }
        let raw = r.take(t * dim * 4, "frame data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect();
        records.push(EmbeddingRecord::new(id, Tensor::new(vec![t, dim], data)?));
    }
    r.finish()?;
    Ok(EmbeddingFile { dim, records })
}

pub fn write_embeddings(path: &Path, dim: usize, records: &[EmbeddingRecord]) -> Result<()> {
    write_file_bytes(path, &encode_embeddings(dim, records)?)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingFile> {
    decode_embeddings(&read_file_bytes(path)?)
}
