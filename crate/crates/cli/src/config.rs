//! Key=value config overlay. Explicit flags always win; unknown keys are
//! rejected up front.

use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

/// Every key any subcommand understands. A shared config file may carry
/// keys for several stages of the pipeline.
const KNOWN_KEYS: &[&str] = &[
    "scenario",
    "seed",
    "duration",
    "rtus",
    "poll-interval",
    "jitter",
    "tls",
    "payload-seed",
    "pcap",
    "mode",
    "timespan",
    "idle-timeout",
    "stride",
    "out",
    "out-pcap",
    "out-labels",
    "out-summary",
    "out-csv",
    "features",
    "k",
    "algo",
    "score",
    "grid",
    "eps",
    "min-samples",
    "min-cluster-size",
    "model",
    "results",
    "labels",
    "effect-as-positive",
];

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (idx, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{} line {}: expected key = value, got '{raw}'",
                    path.display(),
                    idx + 1
                ))
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "{} line {}: unknown key '{key}'",
                    path.display(),
                    idx + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get_string(&self, key: &str) -> Option<String> {
        self.values.get(key).cloned()
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                CliError::Usage(format!("config key '{key}': cannot parse '{raw}'"))
            }),
        }
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, CliError> {
        match self.values.get(key).map(|s| s.as_str()) {
            None => Ok(false),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(other) => Err(CliError::Usage(format!(
                "config key '{key}': expected true/false, got '{other}'"
            ))),
        }
    }
}
