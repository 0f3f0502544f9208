//! JSON-lines and tab-separated dataset ingestion.
//!
//! JSON-lines rows are objects with `text`, optional `text_pair`, and
//! `label`. Labels may be integers, numbers, or strings resolved through a
//! [`LabelMap`]. Tab-separated files are read by column index.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use super::{Label, Sample};
use crate::error::{Error, Result};
use crate::nn::TaskKind;

/// Label string → class id.
pub type LabelMap = BTreeMap<String, usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct JsonlSchema {
    pub kind: TaskKind,
    pub label_map: Option<LabelMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsvColumns {
    pub text: usize,
    pub text_pair: Option<usize>,
    pub label: usize,
    pub kind: TaskKind,
    pub label_map: Option<LabelMap>,
}

pub fn load_jsonl(path: &Path, schema: &JsonlSchema) -> Result<Vec<Sample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let row: Value = serde_json::from_str(&line).map_err(|e| fail(format!("malformed JSON: {e}")))?;
        let obj = row.as_object().ok_or_else(|| fail("row is not a JSON object".into()))?;
        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| fail("missing string field `text`".into()))?;
        let text_pair = match obj.get("text_pair") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(fail("`text_pair` must be a string".into())),
        };
        let raw = obj.get("label").ok_or_else(|| fail("missing field `label`".into()))?;
        let label = parse_label(raw, schema.kind, schema.label_map.as_ref()).map_err(fail)?;
        out.push(Sample {
            text: text.to_owned(),
            text_pair,
            label,
        });
    }
    Ok(out)
}

pub fn load_tsv(path: &Path, columns: &TsvColumns, has_header: bool) -> Result<Vec<Sample>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(has_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let lineno = record.position().map_or(0, |p| p.line() as usize);
        let fail = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let field = |i: usize| {
            record
                .get(i)
                .ok_or_else(|| fail(format!("missing column {i} (row has {} columns)", record.len())))
        };
        let text = field(columns.text)?.to_owned();
        let text_pair = columns.text_pair.map(field).transpose()?.map(str::to_owned);
        let raw = field(columns.label)?.trim();
        let value = match raw.parse::<f64>() {
            Ok(_) if raw.parse::<i64>().is_ok() => Value::from(raw.parse::<i64>().unwrap()),
            Ok(v) => Value::from(v),
            Err(_) => Value::from(raw),
        };
        let label = parse_label(&value, columns.kind, columns.label_map.as_ref()).map_err(fail)?;
        out.push(Sample { text, text_pair, label });
    }
    Ok(out)
}

fn parse_label(raw: &Value, kind: TaskKind, map: Option<&LabelMap>) -> std::result::Result<Label, String> {
    match kind {
        TaskKind::Classification { num_classes } => {
            let class = match raw {
                Value::String(s) => match map {
                    Some(m) => *m.get(s).ok_or_else(|| format!("unknown label `{s}`"))?,
                    None => return Err(format!("label `{s}` needs a label map")),
                },
                Value::Number(n) => {
                    if let (Some(m), Some(v)) = (map, n.as_u64()) {
                        if let Some(&c) = m.get(&v.to_string()) {
                            return check_class(c, num_classes);
                        }
                    }
                    n.as_u64()
                        .ok_or_else(|| format!("class label {n} is not a non-negative integer"))?
                        as usize
                }
                other => return Err(format!("unsupported label {other}")),
            };
            check_class(class, num_classes)
        }
        TaskKind::Regression => match raw {
            Value::Number(n) => n
                .as_f64()
                .filter(|v| v.is_finite())
                .map(Label::Score)
                .ok_or_else(|| format!("label {n} is not a finite number")),
            Value::String(s) => s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Label::Score)
                .ok_or_else(|| format!("label `{s}` is not a number")),
            other => Err(format!("unsupported label {other}")),
        },
    }
}

fn check_class(class: usize, num_classes: usize) -> std::result::Result<Label, String> {
    if class < num_classes {
        Ok(Label::Class(class))
    } else {
        Err(format!("class {class} not in [0, {num_classes})"))
    }
}

/// Writes one JSON object per sample.
pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
