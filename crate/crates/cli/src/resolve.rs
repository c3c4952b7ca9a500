//! Flag resolution: command line, then the `--config` file, then the preset.

use std::path::Path;

use ipiqa::pipelines::Preset;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Collects every resolved value so it can be echoed as `config.json`.
/// Config-file keys are the long flag names with `-` replaced by `_`.
#[derive(Debug)]
pub struct Resolver {
    command: &'static str,
    preset: Preset,
    file: Map<String, Value>,
    resolved: Map<String, Value>,
    dry: bool,
}

impl Resolver {
    pub fn new(
        command: &'static str,
        cli_preset: Option<Preset>,
        config: Option<&Path>,
    ) -> Result<Self, CliError> {
        let mut file = match config {
            None => Map::new(),
            Some(path) => read_config(path)?,
        };
        if let Some(v) = file.remove("command") {
            if v.as_str() != Some(command) {
                return Err(CliError::Usage(format!(
                    "config file is for command {v}, not `{command}`"
                )));
            }
        }
        let from_file = match file.remove("preset") {
            None => None,
            Some(v) => Some(decode::<Preset>("preset", v)?),
        };
        let preset = cli_preset.or(from_file).unwrap_or(Preset::Toy);
        let mut resolved = Map::new();
        resolved.insert("command".into(), command.into());
        resolved.insert("preset".into(), to_value(&preset));
        Ok(Self {
            command,
            preset,
            file,
            resolved,
            dry: false,
        })
    }

    /// Missing required values resolve to placeholders and are left out of
    /// the result, for printing defaults.
    pub fn dry(self) -> Self {
        Self { dry: true, ..self }
    }

    pub fn preset(&self) -> Preset {
        self.preset
    }

    pub fn optional<T: Serialize + DeserializeOwned>(
        &mut self,
        key: &str,
        cli: Option<T>,
    ) -> Result<Option<T>, CliError> {
        let from_file = self.file.remove(key);
        let value = match (cli, from_file) {
            (Some(v), _) => Some(v),
            (None, Some(v)) => Some(decode(key, v)?),
            (None, None) => None,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), to_value(v));
        }
        Ok(value)
    }

    pub fn value<T: Serialize + DeserializeOwned>(
        &mut self,
        key: &str,
        cli: Option<T>,
        default: T,
    ) -> Result<T, CliError> {
        let v = self.optional(key, cli)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), to_value(&v));
        Ok(v)
    }

    pub fn required<T: Serialize + DeserializeOwned + Default>(
        &mut self,
        key: &str,
        cli: Option<T>,
    ) -> Result<T, CliError> {
        let v = self.optional(key, cli)?;
        if self.dry {
            return Ok(v.unwrap_or_default());
        }
        v.ok_or_else(|| {
            CliError::Usage(format!(
                "`{}` needs --{} (or `{key}` in the config file)",
                self.command,
                key.replace('_', "-")
            ))
        })
    }

    /// The resolved map; fails on config-file keys no flag consumed.
    pub fn finish(self) -> Result<Map<String, Value>, CliError> {
        if let Some(key) = self.file.keys().next() {
            return Err(CliError::Usage(format!(
                "unknown key `{key}` in config file for `{}`",
                self.command
            )));
        }
        Ok(self.resolved)
    }
}

fn read_config(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::Usage(format!("config {} is not a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("config {}: {e}", path.display()))),
    }
}

fn decode<T: DeserializeOwned>(key: &str, v: Value) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("config key `{key}`: {e}")))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("flag values serialize")
}
