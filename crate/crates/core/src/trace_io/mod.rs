//! Trace files, campaign configs and manifests.
//!
//! # Trace file format (`midori-cpa/1`)
//!
//! ```text
//! # format: midori-cpa/1
//! # num_traces: 2
//! # samples_per_trace: 3
//! # key_known: false
//! # note: free text up to the end of the line
//! 0123456789ABCDEF,3C9CCEDA2BBD449A,0.25,-1,2.5
//! FFFFFFFFFFFFFFFF,0000000000000000,1,2,3
//! ```
//!
//! The header is the leading block of `#` lines, each `key: value`.
//! `format`, `num_traces` and `samples_per_trace` are required; `key_known`
//! (`true`/`false`) and `note` are optional. Each data row holds the
//! plaintext and ciphertext as 16 hex digits followed by exactly
//! `samples_per_trace` decimal samples. Samples are written in shortest
//! round-trip form, so reading a written file reproduces every `f64`
//! exactly and equal trace sets produce byte-identical files.

mod config;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cipher::{block_to_hex, parse_block_hex};
use crate::leakage::{Trace, TraceSet};

pub use config::{
    config_keys, load_campaign, load_config, manifest_path_for, parse_config, read_manifest,
    render_config, write_manifest, CampaignConfig, CampaignManifest, ConfigError, MANIFEST_FORMAT,
};

pub const FORMAT_VERSION: &str = "midori-cpa/1";

/// Parsed `#` header of a trace file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFileHeader {
    pub format_version: String,
    pub num_traces: usize,
    pub samples_per_trace: usize,
    pub sampling_note: String,
    pub key_known_flag: bool,
}

/// Malformed trace file content. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("line {line}: bad header: {message}")]
    BadHeader { line: usize, message: String },
    #[error("line {line}: bad hex in {field} field: {value:?}")]
    BadHex {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: expected {expected} samples, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: sample {column} is not a finite number: {value:?}")]
    NonNumericSample {
        line: usize,
        column: usize,
        value: String,
    },
    #[error("trace {trace}: ciphertext does not match encryption under the manifest key")]
    Nonconforming { trace: usize },
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("{}: file not found", path.display())]
    MissingFile { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {error}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        error: ParseError,
    },
    #[error("{}: {source}", path.display())]
    Manifest {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
}

impl TraceIoError {
    fn io(path: &Path, source: io::Error) -> TraceIoError {
        if source.kind() == io::ErrorKind::NotFound {
            TraceIoError::MissingFile {
                path: path.to_path_buf(),
            }
        } else {
            TraceIoError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    /// The parse error, if this is a content problem.
    pub fn parse_error(&self) -> Option<&ParseError> {
        match self {
            TraceIoError::Parse { error, .. } => Some(error),
            _ => None,
        }
    }
}

/// Serializes a trace set. `note` must be a single line.
pub fn format_traceset(ts: &TraceSet, note: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("# format: {FORMAT_VERSION}\n"));
    out.push_str(&format!("# num_traces: {}\n", ts.num_traces()));
    out.push_str(&format!(
        "# samples_per_trace: {}\n",
        ts.samples_per_trace()
    ));
    out.push_str(&format!("# key_known: {}\n", ts.key_known().is_some()));
    let note = note.replace(['\n', '\r'], " ");
    out.push_str(&format!("# note: {note}\n"));
    for t in ts.traces() {
        out.push_str(&block_to_hex(t.plaintext));
        out.push(',');
        out.push_str(&block_to_hex(t.ciphertext));
        for s in &t.samples {
            out.push(',');
            out.push_str(&s.to_string());
        }
        out.push('\n');
    }
    out
}

/// Writes atomically: the file appears complete or not at all.
pub fn write_traceset(ts: &TraceSet, path: &Path, note: &str) -> Result<(), TraceIoError> {
    write_atomic(path, format_traceset(ts, note).as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TraceIoError> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| TraceIoError::io(path, e))?;
    tmp.write_all(bytes)
        .map_err(|e| TraceIoError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| TraceIoError::io(path, e.error))?;
    Ok(())
}

pub fn read_traceset(path: &Path) -> Result<TraceSet, TraceIoError> {
    read_traceset_with_header(path).map(|(_, ts)| ts)
}

pub fn read_traceset_with_header(path: &Path) -> Result<(TraceFileHeader, TraceSet), TraceIoError> {
    let bytes = fs::read(path).map_err(|e| TraceIoError::io(path, e))?;
    parse_traceset(&bytes).map_err(|error| TraceIoError::Parse {
        path: path.to_path_buf(),
        error,
    })
}

fn bad_header(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::BadHeader {
        line,
        message: message.into(),
    }
}

struct HeaderLines {
    header: TraceFileHeader,
    num_traces_line: usize,
    /// Number of header lines and their byte length.
    line_count: usize,
    byte_len: usize,
}

fn parse_header(bytes: &[u8]) -> Result<HeaderLines, ParseError> {
    let mut format = None;
    let mut num_traces = None;
    let mut samples = None;
    let mut key_known = false;
    let mut note = String::new();
    let mut last_line = 0;
    let mut byte_len = 0;

    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = i + 1;
        let Some(rest) = raw.strip_prefix(b"#") else {
            break;
        };
        last_line = line;
        byte_len = (byte_len + raw.len() + 1).min(bytes.len());
        let text = std::str::from_utf8(rest)
            .map_err(|_| bad_header(line, "header line is not UTF-8"))?
            .trim_end_matches('\r');
        let (key, value) = text
            .split_once(':')
            .ok_or_else(|| bad_header(line, format!("expected `key: value`, got {text:?}")))?;
        let value = value.trim();
        match key.trim() {
            "format" => {
                if value != FORMAT_VERSION {
                    return Err(bad_header(
                        line,
                        format!("unsupported format {value:?}, expected {FORMAT_VERSION:?}"),
                    ));
                }
                format = Some(value.to_string());
            }
            "num_traces" => {
                let d: usize = value.parse().map_err(|_| {
                    bad_header(line, format!("num_traces {value:?} is not a count"))
                })?;
                if d == 0 {
                    return Err(bad_header(line, "num_traces must be at least 1"));
                }
                num_traces = Some((d, line));
            }
            "samples_per_trace" => {
                samples = Some(value.parse::<usize>().map_err(|_| {
                    bad_header(line, format!("samples_per_trace {value:?} is not a count"))
                })?);
            }
            "key_known" => {
                key_known = value.parse().map_err(|_| {
                    bad_header(line, format!("key_known {value:?} is not a boolean"))
                })?;
            }
            "note" => note = value.to_string(),
            other => return Err(bad_header(line, format!("unknown header key {other:?}"))),
        }
    }

    let next = last_line + 1;
    let format_version = format.ok_or_else(|| bad_header(next, "missing `format` header"))?;
    let (num_traces, num_traces_line) =
        num_traces.ok_or_else(|| bad_header(next, "missing `num_traces` header"))?;
    let samples_per_trace =
        samples.ok_or_else(|| bad_header(next, "missing `samples_per_trace` header"))?;
    Ok(HeaderLines {
        header: TraceFileHeader {
            format_version,
            num_traces,
            samples_per_trace,
            sampling_note: note,
            key_known_flag: key_known,
        },
        num_traces_line,
        line_count: last_line,
        byte_len,
    })
}

fn parse_hex_field(field: &[u8], line: usize, name: &'static str) -> Result<u64, ParseError> {
    let bad = || ParseError::BadHex {
        line,
        field: name,
        value: String::from_utf8_lossy(field).into_owned(),
    };
    let text = std::str::from_utf8(field).map_err(|_| bad())?;
    parse_block_hex(text).map_err(|_| bad())
}

/// Parses trace file content. Any input yields a trace set or a
/// categorized error.
pub fn parse_traceset(bytes: &[u8]) -> Result<(TraceFileHeader, TraceSet), ParseError> {
    let HeaderLines {
        header,
        num_traces_line,
        line_count,
        byte_len,
    } = parse_header(bytes)?;
    let t = header.samples_per_trace;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(&bytes[byte_len..]);

    let mut traces = Vec::with_capacity(header.num_traces.min(1 << 16));
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = line_count + e.position().map_or(1, |p| p.line() as usize);
                return Err(ParseError::Csv {
                    line,
                    message: e.to_string(),
                });
            }
        }
        let line = line_count + record.position().map_or(1, |p| p.line() as usize);
        let found = record.len().saturating_sub(2);
        if record.len() < 2 || found != t {
            return Err(ParseError::RaggedRow {
                line,
                expected: t,
                found,
            });
        }
        let plaintext = parse_hex_field(&record[0], line, "plaintext")?;
        let ciphertext = parse_hex_field(&record[1], line, "ciphertext")?;
        let mut samples = Vec::with_capacity(t);
        for (k, field) in record.iter().skip(2).enumerate() {
            let value = std::str::from_utf8(field)
                .ok()
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| ParseError::NonNumericSample {
                    line,
                    column: k,
                    value: String::from_utf8_lossy(field).into_owned(),
                })?;
            samples.push(value);
        }
        traces.push(Trace {
            plaintext,
            ciphertext,
            samples,
        });
    }

    if traces.len() != header.num_traces {
        return Err(bad_header(
            num_traces_line,
            format!(
                "header declares {} traces but the file holds {}",
                header.num_traces,
                traces.len()
            ),
        ));
    }
    let ts = TraceSet::new(traces, None, None).expect("non-empty, uniform rows checked above");
    Ok((header, ts))
}
