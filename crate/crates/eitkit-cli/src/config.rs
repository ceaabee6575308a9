//! Flat `key=value` run configuration.
//!
//! Config files are plain text: one `key=value` per line, `#` starts a
//! comment, blank lines are ignored. Every command documents the keys it
//! understands; consuming a key removes it from the set, and any key left
//! over at the end of resolution is reported as a usage error so typos
//! fail loudly instead of silently falling back to defaults.

use crate::CliError;
use eitkit::recon::{LevelSpec, TrueSigma};
use std::collections::BTreeMap;
use std::path::Path;

/// Parsed configuration: raw keys plus the resolved `key value` pairs that
/// commands record for the run manifest.
pub struct Config {
    raw: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

impl Config {
    /// Empty configuration (no `--config` given); all lookups fall back to
    /// their defaults.
    pub fn empty() -> Config {
        Config {
            raw: BTreeMap::new(),
            resolved: Vec::new(),
        }
    }

    /// Loads `key=value` lines from `path`.
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut raw = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            if raw.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!(
                    "{}:{}: duplicate key {key:?}",
                    path.display(),
                    lineno + 1
                )));
            }
        }
        Ok(Config {
            raw,
            resolved: Vec::new(),
        })
    }

    /// Errors on any key that no lookup consumed.
    pub fn finish(self) -> Result<Vec<(String, String)>, CliError> {
        if let Some(key) = self.raw.keys().next() {
            return Err(CliError::Usage(format!(
                "unknown config key {key:?} for this command"
            )));
        }
        Ok(self.resolved)
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.raw.remove(key)
    }

    fn record(&mut self, key: &str, value: impl std::fmt::Display) {
        self.resolved.push((key.to_string(), value.to_string()));
    }

    // ---- typed lookups -----------------------------------------------------

    /// String value with a default.
    pub fn str_or(&mut self, key: &str, default: &str) -> String {
        let v = self.take(key).unwrap_or_else(|| default.to_string());
        self.record(key, &v);
        v
    }

    /// Required string value; missing keys are usage errors naming the key.
    pub fn str_required(&mut self, key: &str) -> Result<String, CliError> {
        let v = self.take(key).ok_or_else(|| {
            CliError::Usage(format!("missing required config key {key:?}"))
        })?;
        self.record(key, &v);
        Ok(v)
    }

    /// Float with a default.
    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.take(key) {
            None => {
                self.record(key, default);
                Ok(default)
            }
            Some(s) => {
                let v = parse_f64(key, &s)?;
                self.record(key, &s);
                Ok(v)
            }
        }
    }

    /// Required float; missing keys are usage errors naming the key.
    pub fn f64_required(&mut self, key: &str) -> Result<f64, CliError> {
        let s = self.take(key).ok_or_else(|| {
            CliError::Usage(format!("missing required config key {key:?}"))
        })?;
        let v = parse_f64(key, &s)?;
        self.record(key, &s);
        Ok(v)
    }

    /// Unsigned integer with a default.
    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.take(key) {
            None => {
                self.record(key, default);
                Ok(default)
            }
            Some(s) => {
                let v = s.parse::<usize>().map_err(|_| {
                    CliError::Usage(format!("config key {key:?}: {s:?} is not an integer"))
                })?;
                self.record(key, &s);
                Ok(v)
            }
        }
    }

    /// Seed with a default, overridable by `--seed`.
    pub fn seed_or(&mut self, flag: Option<u64>, default: u64) -> Result<u64, CliError> {
        let from_file = match self.take("seed") {
            None => None,
            Some(s) => Some(s.parse::<u64>().map_err(|_| {
                CliError::Usage(format!("config key \"seed\": {s:?} is not an integer"))
            })?),
        };
        let v = flag.or(from_file).unwrap_or(default);
        self.record("seed", v);
        Ok(v)
    }

    /// Comma-separated integer list with a default.
    pub fn usize_list_or(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>, CliError> {
        match self.take(key) {
            None => {
                let joined = default
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                self.record(key, &joined);
                Ok(default.to_vec())
            }
            Some(s) => {
                let list = s
                    .split(',')
                    .map(|tok| {
                        tok.trim().parse::<usize>().map_err(|_| {
                            CliError::Usage(format!(
                                "config key {key:?}: {tok:?} is not an integer"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if list.is_empty() {
                    return Err(CliError::Usage(format!("config key {key:?} is empty")));
                }
                self.record(key, &s);
                Ok(list)
            }
        }
    }

    /// Comma-separated float list with a default.
    pub fn f64_list_or(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        match self.take(key) {
            None => {
                let joined = default
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                self.record(key, &joined);
                Ok(default.to_vec())
            }
            Some(s) => {
                let list = s
                    .split(',')
                    .map(|tok| parse_f64(key, tok.trim()))
                    .collect::<Result<Vec<_>, _>>()?;
                if list.is_empty() {
                    return Err(CliError::Usage(format!("config key {key:?} is empty")));
                }
                self.record(key, &s);
                Ok(list)
            }
        }
    }

    /// Refinement schedule `n:iters,n:iters,...` with a default.
    pub fn schedule_or(&mut self, default: &[LevelSpec]) -> Result<Vec<LevelSpec>, CliError> {
        match self.take("schedule") {
            None => {
                let joined = default
                    .iter()
                    .map(|l| format!("{}:{}", l.n_subdiv, l.iters))
                    .collect::<Vec<_>>()
                    .join(",");
                self.record("schedule", &joined);
                Ok(default.to_vec())
            }
            Some(s) => {
                let levels = s
                    .split(',')
                    .map(|tok| {
                        let bad = || {
                            CliError::Usage(format!(
                                "config key \"schedule\": {tok:?} is not n:iters"
                            ))
                        };
                        let (n, iters) = tok.trim().split_once(':').ok_or_else(bad)?;
                        Ok(LevelSpec {
                            n_subdiv: n.parse().map_err(|_| bad())?,
                            iters: iters.parse().map_err(|_| bad())?,
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                if levels.is_empty() {
                    return Err(CliError::Usage("config key \"schedule\" is empty".into()));
                }
                self.record("schedule", &s);
                Ok(levels)
            }
        }
    }

    /// Conductivity named by `key`: a catalog name (`linear_ramp`,
    /// `gaussian_blob`, `two_squares`, `four_squares`) or `uniform:VALUE`.
    pub fn sigma_required(&mut self, key: &str) -> Result<TrueSigma, CliError> {
        let s = self.str_required(key)?;
        parse_sigma(key, &s)
    }
}

fn parse_f64(key: &str, s: &str) -> Result<f64, CliError> {
    s.parse::<f64>()
        .map_err(|_| CliError::Usage(format!("config key {key:?}: {s:?} is not a number")))
}

fn parse_sigma(key: &str, s: &str) -> Result<TrueSigma, CliError> {
    if let Some(v) = s.strip_prefix("uniform:") {
        let value = parse_f64(key, v)?;
        return Ok(TrueSigma::Uniform(value));
    }
    TrueSigma::from_name(s).map_err(|_| {
        CliError::Usage(format!(
            "config key {key:?}: {s:?} is not a conductivity \
             (expected linear_ramp, gaussian_blob, two_squares, four_squares, or uniform:VALUE)"
        ))
    })
}
