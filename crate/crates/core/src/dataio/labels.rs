//! Label and prediction tables: `id,split,emotion,arousal,valence,dominance`.
//! Either the emotion or all three attributes may be left empty.

use std::collections::HashSet;
use std::path::Path;

use super::{read_file_bytes, write_file_bytes, Split};
use crate::error::{Error, Result};
use crate::taxonomy::{AttributeVector, Emotion};

pub const LABELS_HEADER: [&str; 6] = ["id", "split", "emotion", "arousal", "valence", "dominance"];

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub id: String,
    pub split: Split,
    pub emotion: Option<Emotion>,
    pub attributes: Option<AttributeVector>,
}

/// Parses a label table; attributes must lie in `[1, 7]`.
pub fn parse_labels(text: &str, source: &str) -> Result<Vec<LabelRow>> {
    parse_table(text, source, true)
}

/// Parses a prediction table; attributes may be unclamped but must be finite.
pub fn parse_predictions(text: &str, source: &str) -> Result<Vec<LabelRow>> {
    parse_table(text, source, false)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    parse_labels(&read_text(path)?, &path.display().to_string())
}

pub fn read_predictions(path: &Path) -> Result<Vec<LabelRow>> {
    parse_predictions(&read_text(path)?, &path.display().to_string())
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read_file_bytes(path)?;
    String::from_utf8(bytes).map_err(|_| Error::Csv {
        path: path.display().to_string(),
        line: 0,
        reason: "file is not valid UTF-8".into(),
    })
}

fn parse_table(text: &str, source: &str, strict_range: bool) -> Result<Vec<LabelRow>> {
    let err = |line: usize, reason: String| Error::Csv {
        path: source.to_string(),
        line,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| err(1, e.to_string()))?,
        None => return Err(err(1, "empty file, expected a header".into())),
    };
    if header.iter().collect::<Vec<_>>() != LABELS_HEADER {
        return Err(err(1, format!("header must be `{}`", LABELS_HEADER.join(","))));
    }

    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(err(line, "empty id".into()));
        }
        let split: Split = field(1).parse().map_err(|e: Error| err(line, e.to_string()))?;
        let emotion = match field(2) {
            "" => None,
            code => {
                let mut chars = code.chars();
                let e = match (chars.next(), chars.next()) {
                    (Some(c), None) => Emotion::from_code(c),
                    _ => None,
                };
                Some(e.ok_or_else(|| err(line, format!("unknown emotion code `{code}`, expected one of A,C,D,F,H,N,S,U")))?)
            }
        };
        let raw = [field(3), field(4), field(5)];
        let attributes = if raw.iter().all(|s| s.is_empty()) {
            None
        } else {
            let mut v = [0.0; 3];
            for (j, s) in raw.iter().enumerate() {
                let name = LABELS_HEADER[3 + j];
                let x: f64 = s
                    .parse()
                    .map_err(|_| err(line, format!("{name} `{s}` is not a number")))?;
                if !x.is_finite() {
                    return Err(err(line, format!("{name} `{s}` is not finite")));
                }
                if strict_range && !(1.0..=7.0).contains(&x) {
                    return Err(err(line, format!("attribute out of range [1,7]: {name} = {x}")));
                }
                v[j] = x;
            }
            Some(AttributeVector::from_array(v))
        };
        if emotion.is_none() && attributes.is_none() {
            return Err(err(line, format!("`{id}` has neither an emotion nor attributes")));
        }
        if !seen.insert(id.clone()) {
            return Err(err(line, format!("duplicate id `{id}`")));
        }
        rows.push(LabelRow {
            id,
            split,
            emotion,
            attributes,
        });
    }
    Ok(rows)
}

/// Floats use the shortest representation that parses back to the same value.
pub fn render_labels(rows: &[LabelRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Csv {
        path: "<memory>".into(),
        line: 0,
        reason: e.to_string(),
    };
    w.write_record(LABELS_HEADER).map_err(csv_err)?;
    for r in rows {
        let emo = r.emotion.map(|e| e.code().to_string()).unwrap_or_default();
        let attrs = r
            .attributes
            .map(|a| a.to_array().map(|x| x.to_string()))
            .unwrap_or_default();
        w.write_record([r.id.as_str(), r.split.name(), &emo, &attrs[0], &attrs[1], &attrs[2]])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv {
        path: "<memory>".into(),
        line: 0,
        reason: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8 for UTF-8 input"))
}

pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    write_file_bytes(path, render_labels(rows)?.as_bytes())
}

pub fn write_predictions(path: &Path, rows: &[LabelRow]) -> Result<()> {
    write_labels(path, rows)
}
