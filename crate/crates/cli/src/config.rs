use std::path::{Path, PathBuf};

use mcse::metrics::CISDRConfig;
use mcse::net::NetConfig;
use mcse::simulate::SamplerConfig;
use mcse::{Error, Result};
use serde::Deserialize;

/// Settings read from `--config`. Every field is optional; flags win.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub seed: Option<u64>,
    pub array: Option<String>,
    /// One-based microphone numbers.
    pub channels: Option<Vec<usize>>,
    pub mask: Option<String>,
    pub gmin_db: Option<f64>,
    pub reference: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub count: Option<usize>,
    pub duration_s: Option<f64>,
    pub sampler: Option<SamplerConfig>,
    pub net: Option<NetConfig>,
    pub metrics: Option<CISDRConfig>,
}

impl JobConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

/// Converts one-based microphone numbers to indices.
pub fn zero_based(channels: &[usize], available: usize) -> Result<Vec<usize>> {
    channels
        .iter()
        .map(|&c| {
            if c == 0 || c > available {
                Err(Error::InvalidConfig(format!("channel {c} outside 1..={available}")))
            } else {
                Ok(c - 1)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaskSpec {
    Oracle,
    Net(PathBuf),
}

impl MaskSpec {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "oracle" {
            Ok(Self::Oracle)
        } else if let Some(p) = s.strip_prefix("net:") {
            Ok(Self::Net(PathBuf::from(p)))
        } else {
            Err(Error::InvalidConfig(format!(
                "mask {s:?} is neither oracle nor net:PATH"
            )))
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Oracle => "oracle".into(),
            Self::Net(p) => format!("net:{}", p.display()),
        }
    }
}
