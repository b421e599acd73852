use std::path::Path;

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::CliError;

/// Flag values loaded from `--config`. Keys may use dashes or underscores.
#[derive(Debug, Default)]
pub struct FileConfig(Map<String, Value>);

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(map)) => Ok(Self(map.into_iter().map(|(k, v)| (k.replace('_', "-"), v)).collect())),
            Ok(_) => Err(CliError::Invalid(format!(
                "config {}: expected a JSON object",
                path.display()
            ))),
            Err(e) => Err(CliError::Invalid(format!("config {}: {e}", path.display()))),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    fn value<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.0
            .get(key)
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| CliError::Invalid(format!("config key {key}: {e}"))))
            .transpose()
    }

    /// The flag if given, else the config entry, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.value(key)?.unwrap_or(default)),
        }
    }

    pub fn pick_opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.value(key),
        }
    }

    /// Like [`pick`](Self::pick) for choice flags spelled as on the command line.
    pub fn pick_enum<T: ValueEnum>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.value::<String>(key)? {
            None => Ok(default),
            Some(s) => T::from_str(&s, true).map_err(|e| CliError::Invalid(format!("config key {key}: {e}"))),
        }
    }

    pub fn pick_enum_opt<T: ValueEnum>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if let Some(v) = flag {
            return Ok(Some(v));
        }
        match self.value::<String>(key)? {
            None => Ok(None),
            Some(s) => T::from_str(&s, true)
                .map(Some)
                .map_err(|e| CliError::Invalid(format!("config key {key}: {e}"))),
        }
    }

    /// Overlays a config object (for example `"train": {...}`) onto `base`.
    pub fn section<T: serde::Serialize + DeserializeOwned>(&self, key: &str, base: T) -> Result<T, CliError> {
        let Some(over) = self.0.get(key) else {
            return Ok(base);
        };
        let Value::Object(over) = over else {
            return Err(CliError::Invalid(format!("config key {key}: expected an object")));
        };
        let mut merged = serde_json::to_value(base).expect("config serialises");
        let obj = merged.as_object_mut().expect("struct serialises to an object");
        for (k, v) in over {
            obj.insert(k.replace('-', "_"), v.clone());
        }
        serde_json::from_value(merged).map_err(|e| CliError::Invalid(format!("config key {key}: {e}")))
    }
}
