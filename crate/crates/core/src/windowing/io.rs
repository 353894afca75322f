//! Frame-stream ingestion and emission.
//!
//! JSONL: one object per frame, `{"frame_index":0,"label":2,"features":[...]}`.
//! CSV: header `frame_index,label,f0,...,f{F-1}`, one row per frame.
//! Frame indices must run `0..N` in order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FrameLabel, LabeledFrameStream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    Jsonl,
    Csv,
}

impl StreamFormat {
    pub fn extension(self) -> &'static str {
        match self {
            StreamFormat::Jsonl => "jsonl",
            StreamFormat::Csv => "csv",
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => Ok(StreamFormat::Jsonl),
            Some("csv") => Ok(StreamFormat::Csv),
            _ => Err(Error::InvalidArgument(format!(
                "cannot infer stream format from {}",
                path.display()
            ))),
        }
    }
}

impl std::str::FromStr for StreamFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(StreamFormat::Jsonl),
            "csv" => Ok(StreamFormat::Csv),
            other => Err(Error::Config(format!("unknown stream format {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FrameRecord<'a> {
    frame_index: usize,
    label: FrameLabel,
    features: std::borrow::Cow<'a, [f64]>,
}

pub fn read_stream(path: &Path) -> Result<LabeledFrameStream> {
    match StreamFormat::from_path(path)? {
        StreamFormat::Jsonl => read_stream_jsonl(path),
        StreamFormat::Csv => read_stream_csv(path),
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_stream_jsonl(path: &Path) -> Result<LabeledFrameStream> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    let mut features = Vec::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        if record.frame_index != labels.len() {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected frame_index {}, got {}", labels.len(), record.frame_index),
            ));
        }
        let d = *dim.get_or_insert(record.features.len());
        if record.features.len() != d {
            return Err(parse_err(path, i + 1, format!("expected {d} features, got {}", record.features.len())));
        }
        labels.push(record.label);
        features.extend_from_slice(&record.features);
    }
    let dim = dim.ok_or_else(|| parse_err(path, 0, "empty stream"))?;
    LabeledFrameStream::new(labels, features, dim)
}

pub fn read_stream_csv(path: &Path) -> Result<LabeledFrameStream> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    if headers.len() < 3 || &headers[0] != "frame_index" || &headers[1] != "label" {
        return Err(parse_err(path, 1, "header must be frame_index,label,f0,..."));
    }
    for (k, name) in headers.iter().skip(2).enumerate() {
        if name != format!("f{k}") {
            return Err(parse_err(path, 1, format!("column {} should be f{k}, got {name}", k + 2)));
        }
    }
    let dim = headers.len() - 2;
    let mut labels = Vec::new();
    let mut features = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(path, line, e.to_string()))?;
        let frame_index: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, "bad frame_index"))?;
        if frame_index != labels.len() {
            return Err(parse_err(path, line, format!("expected frame_index {}", labels.len())));
        }
        let label: u8 = record[1].trim().parse().map_err(|_| parse_err(path, line, "bad label"))?;
        labels.push(FrameLabel::try_from(label).map_err(|e| parse_err(path, line, e.to_string()))?);
        for field in record.iter().skip(2) {
            features.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("bad feature value {field:?}")))?,
            );
        }
    }
    LabeledFrameStream::new(labels, features, dim)
}

pub fn write_stream_jsonl(stream: &LabeledFrameStream, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (frame, &label) in stream.labels().iter().enumerate() {
        let record = FrameRecord {
            frame_index: frame,
            label,
            features: std::borrow::Cow::Borrowed(stream.frame_features(frame)),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_stream_csv(stream: &LabeledFrameStream, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut header = vec!["frame_index".to_string(), "label".to_string()];
    header.extend((0..stream.feature_dim()).map(|k| format!("f{k}")));
    writer.write_record(&header).map_err(|e| Error::io(path, e.into()))?;
    for (frame, &label) in stream.labels().iter().enumerate() {
        let mut row = vec![frame.to_string(), u8::from(label).to_string()];
        row.extend(stream.frame_features(frame).iter().map(|v| v.to_string()));
        writer.write_record(&row).map_err(|e| Error::io(path, e.into()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
