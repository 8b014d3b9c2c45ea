//! Run configuration: a JSON file overlaid by command-line flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

pub const RESOLVED_FILE: &str = "config.resolved.json";
pub const SEED_ENV: &str = "ADAPTDEPTH_SEED";

/// Flag values that were actually given, keyed by config field.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set<V: Serialize>(&mut self, key: &str, value: Option<V>) -> &mut Self {
        if let Some(v) = value {
            self.0
                .insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
        }
        self
    }
}

pub fn read_json_value(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Merges `file` < `ADAPTDEPTH_SEED` < `flags` and deserializes the result.
pub fn resolve<T: DeserializeOwned>(file: Option<&Path>, flags: Overrides) -> Result<T, CliError> {
    let mut merged = match file {
        Some(p) => match read_json_value(p)? {
            Value::Object(m) => m,
            _ => return Err(CliError::Config(format!("{}: expected a JSON object", p.display()))),
        },
        None => Map::new(),
    };
    if let Some(seed) = env_seed()? {
        merged.insert("seed".into(), seed.into());
    }
    merged.extend(flags.0);
    serde_json::from_value(Value::Object(merged)).map_err(|e| match file {
        Some(p) => CliError::Config(format!("{}: {}", p.display(), located::<T>(p).unwrap_or(e))),
        None => CliError::Config(e.to_string()),
    })
}

/// The file's own parse error, which carries line and column, unless it
/// is only a missing field that flags may have supplied.
fn located<T: DeserializeOwned>(path: &Path) -> Option<serde_json::Error> {
    let text = fs::read_to_string(path).ok()?;
    let e = serde_json::from_str::<T>(&text).err()?;
    (!e.to_string().starts_with("missing field")).then_some(e)
}

pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn write_resolved<T: Serialize>(dir: &Path, config: &T) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(RESOLVED_FILE);
    let mut text = serde_json::to_string_pretty(config).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
