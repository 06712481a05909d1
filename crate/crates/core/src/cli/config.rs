use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::{Error, Result};

pub const SEED_ENV: &str = "ROLEFUSE_SEED";
pub const DEFAULT_SEED: u64 = 42;

/// Overlays the flags given on the command line on top of an optional JSON
/// config file. Flags left unset are skipped when serializing, so file values
/// survive unless overridden. Keys unknown to `T` are rejected.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(round_trip(flags));
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let Value::Object(mut merged) = file else {
        return Err(Error::Usage(format!("{}: config must be a JSON object", path.display())));
    };
    let Value::Object(overrides) = serde_json::to_value(flags).expect("flags serialize") else {
        unreachable!("flag structs serialize to objects");
    };
    merged.extend(overrides);
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

fn round_trip<T: Serialize + DeserializeOwned>(flags: &T) -> T {
    serde_json::from_value(serde_json::to_value(flags).expect("flags serialize")).expect("flags deserialize")
}

/// The seed from a flag or config value, else `ROLEFUSE_SEED`, else 42.
pub fn resolve_seed(explicit: Option<u64>) -> Result<u64> {
    if let Some(seed) = explicit {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Record of one artifact-writing run, written beside its primary output.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: Value,
    pub outputs: Vec<String>,
    pub metrics: Value,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, config: &impl Serialize, seed: Option<u64>) -> Self {
        Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config: serde_json::to_value(config).expect("config serializes"),
            outputs: Vec::new(),
            metrics: Value::Object(Map::new()),
        }
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn metrics(mut self, metrics: Value) -> Self {
        self.metrics = metrics;
        self
    }

    /// Writes `<primary>.manifest.json` and returns its path.
    pub fn write(&self, primary: &Path) -> Result<PathBuf> {
        let path = manifest_path(primary);
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
