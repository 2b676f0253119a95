//! Flat `key = value` campaign configs and the manifests written next to
//! simulated trace files.
//!
//! Config keys and defaults:
//!
//! | key                 | default | constraint                 |
//! |---------------------|---------|----------------------------|
//! | `noise_sigma`       | `1.0`   | finite, `>= 0`             |
//! | `samples_per_trace` | `512`   | `>= 1`                     |
//! | `poi_offset`        | `16`    | `>= 0`                     |
//! | `poi_stride`        | `15`    | `>= 1`                     |
//! | `repeats`           | `1`     | `1..=4294967295`           |
//! | `baseline`          | `0.0`   | finite                     |
//! | `seed`              | `0`     | `0..=2^64-1`               |
//! | `num_traces`        | `300`   | `>= 1`                     |
//!
//! and `poi_offset + 31 * poi_stride < samples_per_trace`. The syntax is the
//! flat subset of TOML: `#` comments, one `key = value` per line. Seeds
//! above `2^63 - 1` are written as quoted decimal strings.
//!
//! A manifest is the same flat file plus `format`, `trace_file` (relative
//! to the manifest's directory) and, for simulated campaigns, `true_key`.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use toml::{Table, Value};

use super::{read_traceset, write_atomic, ParseError, TraceIoError};
use crate::cipher::MasterKey;
use crate::leakage::{LeakageConfig, LeakageError, TraceSet};

pub const MANIFEST_FORMAT: &str = "midori-cpa-manifest/1";

const DEFAULT_NUM_TRACES: usize = 300;

/// Leakage parameters plus the campaign size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignConfig {
    pub leakage: LeakageConfig,
    pub num_traces: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            leakage: LeakageConfig::default(),
            num_traces: DEFAULT_NUM_TRACES,
        }
    }
}

/// Keys accepted in a config file, in canonical order.
pub fn config_keys() -> [&'static str; 8] {
    [
        "noise_sigma",
        "samples_per_trace",
        "poi_offset",
        "poi_stride",
        "repeats",
        "baseline",
        "seed",
        "num_traces",
    ]
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{}: file not found", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key}: expected {expected}")]
    WrongType { key: String, expected: &'static str },
    #[error("{key} = {value} is out of range ({constraint})")]
    OutOfRange {
        key: String,
        value: String,
        constraint: &'static str,
    },
    #[error(transparent)]
    Invariant(#[from] LeakageError),
    #[error("manifest: missing {0:?}")]
    MissingManifestKey(&'static str),
    #[error("manifest: {0}")]
    BadManifest(String),
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ConfigError::MissingFile(path.to_path_buf()),
        _ => ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    })
}

pub fn load_config(path: &Path) -> Result<CampaignConfig, ConfigError> {
    parse_config(&read_text(path)?)
}

pub fn parse_config(text: &str) -> Result<CampaignConfig, ConfigError> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
    config_from_table(table)
}

fn out_of_range(key: &str, value: &Value, constraint: &'static str) -> ConfigError {
    ConfigError::OutOfRange {
        key: key.to_string(),
        value: value.to_string(),
        constraint,
    }
}

fn get_float(key: &str, value: &Value) -> Result<f64, ConfigError> {
    match value {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(ConfigError::WrongType {
            key: key.to_string(),
            expected: "a number",
        }),
    }
}

fn get_count(
    key: &str,
    value: &Value,
    min: i64,
    constraint: &'static str,
) -> Result<u64, ConfigError> {
    match value {
        Value::Integer(i) if *i >= min => Ok(*i as u64),
        Value::Integer(_) => Err(out_of_range(key, value, constraint)),
        _ => Err(ConfigError::WrongType {
            key: key.to_string(),
            expected: "an integer",
        }),
    }
}

fn to_usize(key: &str, value: &Value, n: u64) -> Result<usize, ConfigError> {
    usize::try_from(n).map_err(|_| out_of_range(key, value, "fits in usize"))
}

fn config_from_table(table: Table) -> Result<CampaignConfig, ConfigError> {
    let mut cfg = CampaignConfig::default();
    for (key, value) in &table {
        let leak = &mut cfg.leakage;
        match key.as_str() {
            "noise_sigma" => {
                leak.noise_sigma = get_float(key, value)?;
                if !(leak.noise_sigma.is_finite() && leak.noise_sigma >= 0.0) {
                    return Err(out_of_range(key, value, "finite and >= 0"));
                }
            }
            "baseline" => {
                leak.baseline = get_float(key, value)?;
                if !leak.baseline.is_finite() {
                    return Err(out_of_range(key, value, "finite"));
                }
            }
            "samples_per_trace" => {
                let n = get_count(key, value, 1, ">= 1")?;
                leak.samples_per_trace = to_usize(key, value, n)?;
            }
            "poi_offset" => {
                let n = get_count(key, value, 0, ">= 0")?;
                leak.poi_offset = to_usize(key, value, n)?;
            }
            "poi_stride" => {
                let n = get_count(key, value, 1, ">= 1")?;
                leak.poi_stride = to_usize(key, value, n)?;
            }
            "repeats" => {
                let n = get_count(key, value, 1, ">= 1")?;
                leak.repeats =
                    u32::try_from(n).map_err(|_| out_of_range(key, value, "<= 4294967295"))?;
            }
            "seed" => {
                leak.seed = match value {
                    Value::String(s) => s
                        .parse::<u64>()
                        .map_err(|_| out_of_range(key, value, "0..=2^64-1"))?,
                    _ => get_count(key, value, 0, "0..=2^64-1")?,
                };
            }
            "num_traces" => {
                let n = get_count(key, value, 1, ">= 1")?;
                cfg.num_traces = to_usize(key, value, n)?;
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
    }
    cfg.leakage.validate()?;
    Ok(cfg)
}

/// Canonical flat rendering; `parse_config(render_config(c)) == c`.
pub fn render_config(cfg: &CampaignConfig) -> String {
    let l = &cfg.leakage;
    let seed = if l.seed <= i64::MAX as u64 {
        l.seed.to_string()
    } else {
        format!("\"{}\"", l.seed)
    };
    format!(
        "noise_sigma = {:?}\n\
         samples_per_trace = {}\n\
         poi_offset = {}\n\
         poi_stride = {}\n\
         repeats = {}\n\
         baseline = {:?}\n\
         seed = {}\n\
         num_traces = {}\n",
        l.noise_sigma,
        l.samples_per_trace,
        l.poi_offset,
        l.poi_stride,
        l.repeats,
        l.baseline,
        seed,
        cfg.num_traces
    )
}

/// Ground truth and generation parameters of a simulated campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignManifest {
    pub config: CampaignConfig,
    /// As written in the manifest; relative paths are resolved against the
    /// manifest's directory.
    pub trace_file: PathBuf,
    pub true_key: Option<MasterKey>,
}

/// `traces.csv` -> `traces.manifest.toml`.
pub fn manifest_path_for(trace_path: &Path) -> PathBuf {
    trace_path.with_extension("manifest.toml")
}

fn quote(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

pub fn write_manifest(manifest: &CampaignManifest, path: &Path) -> Result<(), TraceIoError> {
    let mut text = format!(
        "format = {}\ntrace_file = {}\n",
        quote(MANIFEST_FORMAT),
        quote(&manifest.trace_file.to_string_lossy())
    );
    if let Some(key) = &manifest.true_key {
        text.push_str(&format!("true_key = {}\n", quote(&key.to_hex())));
    }
    text.push_str(&render_config(&manifest.config));
    write_atomic(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<CampaignManifest, ConfigError> {
    let mut table: Table = read_text(path)?
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
    let mut take_string = |key: &'static str| -> Result<Option<String>, ConfigError> {
        match table.remove(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(ConfigError::WrongType {
                key: key.to_string(),
                expected: "a string",
            }),
        }
    };
    let format = take_string("format")?.ok_or(ConfigError::MissingManifestKey("format"))?;
    if format != MANIFEST_FORMAT {
        return Err(ConfigError::BadManifest(format!(
            "unsupported format {format:?}, expected {MANIFEST_FORMAT:?}"
        )));
    }
    let trace_file =
        take_string("trace_file")?.ok_or(ConfigError::MissingManifestKey("trace_file"))?;
    let true_key = take_string("true_key")?
        .map(|k| {
            MasterKey::from_hex(&k).map_err(|e| ConfigError::BadManifest(format!("true_key: {e}")))
        })
        .transpose()?;
    Ok(CampaignManifest {
        config: config_from_table(table)?,
        trace_file: PathBuf::from(trace_file),
        true_key,
    })
}

/// Loads the trace file a manifest points to and attaches the manifest's
/// key and config. Checks the row count against the manifest and, when a
/// key is present, every ciphertext against it.
pub fn load_campaign(manifest_path: &Path) -> Result<TraceSet, TraceIoError> {
    let manifest = read_manifest(manifest_path).map_err(|source| TraceIoError::Manifest {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let trace_path = match manifest_path.parent() {
        Some(dir) if manifest.trace_file.is_relative() => dir.join(&manifest.trace_file),
        _ => manifest.trace_file.clone(),
    };
    let ts = read_traceset(&trace_path)?;
    if ts.num_traces() != manifest.config.num_traces {
        return Err(TraceIoError::Manifest {
            path: manifest_path.to_path_buf(),
            source: ConfigError::BadManifest(format!(
                "manifest declares {} traces but {} holds {}",
                manifest.config.num_traces,
                trace_path.display(),
                ts.num_traces()
            )),
        });
    }
    if ts.samples_per_trace() != manifest.config.leakage.samples_per_trace {
        return Err(TraceIoError::Manifest {
            path: manifest_path.to_path_buf(),
            source: ConfigError::BadManifest(format!(
                "manifest declares {} samples per trace but {} holds {}",
                manifest.config.leakage.samples_per_trace,
                trace_path.display(),
                ts.samples_per_trace()
            )),
        });
    }
    if let Some(key) = &manifest.true_key {
        if let Some(index) = ts.first_nonconforming(key) {
            return Err(TraceIoError::Parse {
                path: trace_path,
                error: ParseError::Nonconforming { trace: index },
            });
        }
    }
    Ok(ts
        .with_key(manifest.true_key)
        .with_config(Some(manifest.config.leakage)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(parse_config("").unwrap(), CampaignConfig::default());
    }

    #[test]
    fn repeats_256_parses() {
        let cfg = parse_config("repeats = 256\n# comment\nnoise_sigma = 2\n").unwrap();
        assert_eq!(cfg.leakage.repeats, 256);
        assert_eq!(cfg.leakage.noise_sigma, 2.0);
        assert!(render_config(&cfg).contains("repeats = 256\n"));
    }

    #[test]
    fn unknown_key() {
        assert_eq!(
            parse_config("noise = 1"),
            Err(ConfigError::UnknownKey("noise".into()))
        );
    }

    #[test]
    fn out_of_range_values() {
        assert!(matches!(
            parse_config("repeats = 0"),
            Err(ConfigError::OutOfRange { .. })
        ));
        assert!(matches!(
            parse_config("noise_sigma = -0.5"),
            Err(ConfigError::OutOfRange { .. })
        ));
        assert!(matches!(
            parse_config("num_traces = 0"),
            Err(ConfigError::OutOfRange { .. })
        ));
        assert!(matches!(
            parse_config("noise_sigma = nan"),
            Err(ConfigError::OutOfRange { .. })
        ));
        assert!(matches!(
            parse_config("seed = \"abc\""),
            Err(ConfigError::OutOfRange { .. })
        ));
        assert!(matches!(
            parse_config("repeats = \"two\""),
            Err(ConfigError::WrongType { .. })
        ));
    }

    #[test]
    fn poi_invariant_names_both_values() {
        let err =
            parse_config("samples_per_trace = 100\npoi_offset = 10\npoi_stride = 3\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Invariant(LeakageError::PoiOutOfRange {
                poi_offset: 10,
                poi_stride: 3,
                last_poi: 103,
                samples_per_trace: 100
            })
        );
        let msg = err.to_string();
        assert!(msg.contains("103") && msg.contains("100"), "{msg}");
    }

    #[test]
    fn syntax_error() {
        assert!(matches!(
            parse_config("noise_sigma ="),
            Err(ConfigError::Syntax(_))
        ));
    }

    #[test]
    fn large_seed_roundtrips() {
        let mut cfg = CampaignConfig::default();
        cfg.leakage.seed = u64::MAX;
        assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
        cfg.leakage.seed = 12345;
        cfg.leakage.noise_sigma = 0.1;
        assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn missing_config_file() {
        assert!(matches!(
            load_config(Path::new("/no/such/config.toml")),
            Err(ConfigError::MissingFile(_))
        ));
    }

    #[test]
    fn manifest_path_naming() {
        assert_eq!(
            manifest_path_for(Path::new("out/traces.csv")),
            PathBuf::from("out/traces.manifest.toml")
        );
    }
}
