//! On-disk formats (FEMB embeddings, FCKP checkpoints, label/prediction CSV)
//! and the seeded synthetic dataset generator.

mod checkpoint;
mod embeddings;
mod labels;
mod synth;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, FCKP_VERSION};
pub use embeddings::{
    decode_embeddings, encode_embeddings, read_embeddings, write_embeddings, EmbeddingFile, EmbeddingRecord,
    FEMB_VERSION,
};
pub use labels::{
    parse_labels, parse_predictions, read_labels, read_predictions, render_labels, write_labels, write_predictions,
    LabelRow, LABELS_HEADER,
};
pub use synth::{gen_synthetic, SynthConfig, DEFAULT_ANCHORS};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::taxonomy::{AttributeVector, Emotion};

pub const SPEECH_FILE: &str = "speech.femb";
pub const TEXT_FILE: &str = "text.femb";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test1,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test1 => "test1",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test1" => Ok(Split::Test1),
            _ => Err(Error::invalid("split", format!("expected train|dev|test1, got `{s}`"))),
        }
    }
}

/// One utterance with both modalities' frame features and whatever labels it has.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub split: Split,
    /// `T_s × D_s`
    pub speech: Tensor,
    /// `T_t × D_t`
    pub text: Tensor,
    pub emotion: Option<Emotion>,
    pub attributes: Option<AttributeVector>,
}

impl UtteranceRecord {
    pub fn label_row(&self) -> LabelRow {
        LabelRow {
            id: self.id.clone(),
            split: self.split,
            emotion: self.emotion,
            attributes: self.attributes,
        }
    }
}

pub fn in_split(records: &[UtteranceRecord], split: Split) -> Vec<&UtteranceRecord> {
    records.iter().filter(|r| r.split == split).collect()
}

fn common_dim(records: &[UtteranceRecord], pick: fn(&UtteranceRecord) -> &Tensor, what: &str) -> Result<usize> {
    let mut dim = None;
    for r in records {
        let d = pick(r).shape()[1];
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::invalid(
                    "records",
                    format!("{what} width {d} of `{}` differs from {prev}", r.id),
                ))
            }
            _ => {}
        }
    }
    Ok(dim.unwrap_or(0))
}

/// Writes `speech.femb`, `text.femb` and `labels.csv` under `dir`.
pub fn write_dataset(dir: &Path, records: &[UtteranceRecord]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let speech: Vec<EmbeddingRecord> = records
        .iter()
        .map(|r| EmbeddingRecord::new(r.id.clone(), r.speech.clone()))
        .collect();
    let text: Vec<EmbeddingRecord> = records
        .iter()
        .map(|r| EmbeddingRecord::new(r.id.clone(), r.text.clone()))
        .collect();
    let paths = [dir.join(SPEECH_FILE), dir.join(TEXT_FILE), dir.join(LABELS_FILE)];
    write_embeddings(&paths[0], common_dim(records, |r| &r.speech, "speech")?, &speech)?;
    write_embeddings(&paths[1], common_dim(records, |r| &r.text, "text")?, &text)?;
    let rows: Vec<LabelRow> = records.iter().map(UtteranceRecord::label_row).collect();
    write_labels(&paths[2], &rows)?;
    Ok(paths.to_vec())
}

/// Reads a dataset directory, joining the two embedding files onto the label
/// rows by id. Row order follows the label file.
pub fn read_dataset(dir: &Path) -> Result<Vec<UtteranceRecord>> {
    let labels_path = dir.join(LABELS_FILE);
    let rows = read_labels(&labels_path)?;
    let mut speech = index_by_id(read_embeddings(&dir.join(SPEECH_FILE))?);
    let mut text = index_by_id(read_embeddings(&dir.join(TEXT_FILE))?);
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            let missing = |m: &str| Error::Csv {
                path: labels_path.display().to_string(),
                line: i + 2,
                reason: format!("no {m} features for id `{}`", row.id),
            };
            let s = speech.remove(&row.id).ok_or_else(|| missing("speech"))?;
            let t = text.remove(&row.id).ok_or_else(|| missing("text"))?;
            Ok(UtteranceRecord {
                id: row.id,
                split: row.split,
                speech: s,
                text: t,
                emotion: row.emotion,
                attributes: row.attributes,
            })
        })
        .collect()
}

fn index_by_id(file: EmbeddingFile) -> std::collections::HashMap<String, Tensor> {
    file.records.into_iter().map(|r| (r.id, r.frames)).collect()
}

/// Cursor over a byte buffer whose errors carry the offset they occurred at.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], format: &'static str) -> Self {
        Self { buf, pos: 0, format }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn error_at(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            format: self.format,
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error_at(
                self.pos,
                format!("truncated while reading {what} ({n} bytes needed, {} left)", self.buf.len() - self.pos),
            )),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("take returns N bytes"))
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        self.array(what).map(u16::from_le_bytes)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        self.array(what).map(u32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        self.array(what).map(u64::from_le_bytes)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(self.error_at(
                0,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(expected)),
            ));
        }
        Ok(())
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.error_at(at, format!("{what} is not valid UTF-8")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.error_at(self.pos, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str, what: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::invalid("id", format!("{what} longer than 65535 bytes")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn read_file_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
