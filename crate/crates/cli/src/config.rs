//! Run configuration: one JSON document with `model`, `train`, `data` and
//! `erf` sections. Every field is optional; unknown keys are rejected.

use std::path::Path;

use lkd::analysis::ErfConfig;
use lkd::haze::DataConfig;
use lkd::model::{LkdConfig, Variant};
use lkd::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: LkdConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub erf: ErfConfig,
}

impl Default for RunConfig {
    /// The desk-scale tiny model with its standard training setup.
    fn default() -> Self {
        RunConfig {
            model: LkdConfig::desk(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            erf: ErfConfig::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    #[serde(default)]
    model: Map<String, Value>,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    data: DataConfig,
    #[serde(default)]
    erf: ErfConfig,
}

/// Base for the `model` section, selected by its optional `preset` key.
fn preset_base(name: &str) -> Result<LkdConfig, CliError> {
    Ok(match name {
        "desk" => LkdConfig::desk(),
        "t" => LkdConfig::preset(Variant::T),
        "s" => LkdConfig::preset(Variant::S),
        "b" => LkdConfig::preset(Variant::B),
        "l" => LkdConfig::preset(Variant::L),
        _ => {
            return Err(CliError::Config(format!(
                "unknown model preset {name:?} (expected desk, t, s, b or l)"
            )))
        }
    })
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let raw: RawRunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut fields = raw.model;
        let base = match fields.remove("preset") {
            None => LkdConfig::desk(),
            Some(Value::String(s)) => preset_base(&s)?,
            Some(v) => {
                return Err(CliError::Config(format!(
                    "model.preset must be a string, got {v}"
                )))
            }
        };
        // Model fields override the preset one by one.
        let Value::Object(mut merged) =
            serde_json::to_value(&base).map_err(|e| CliError::Config(e.to_string()))?
        else {
            unreachable!("model config serializes to an object")
        };
        for (k, v) in fields {
            if !merged.contains_key(&k) {
                return Err(CliError::Config(format!("unknown field `{k}` in model")));
            }
            merged.insert(k, v);
        }
        let model: LkdConfig = serde_json::from_value(Value::Object(merged))
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        model.validate()?;
        raw.train.validate()?;
        raw.data.validate()?;
        Ok(RunConfig {
            model,
            train: raw.train,
            data: raw.data,
            erf: raw.erf,
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                RunConfig::from_json(&text)
            }
        }
    }

    /// Applies a global seed to every seeded section.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.data.seed = s;
            self.erf.seed = s;
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn model_fields_override_the_preset() {
        let c = RunConfig::from_json(r#"{"model": {"preset": "t", "use_cefn": false}}"#).unwrap();
        assert_eq!(c.model.dims, LkdConfig::preset(Variant::T).dims);
        assert!(!c.model.use_cefn);
        let d =
            RunConfig::from_json(r#"{"model": {"plain_kernel": 9, "use_dlk": false}}"#).unwrap();
        assert_eq!(d.model, LkdConfig::desk().with_plain_kernel(9));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            r#"{"modle": {}}"#,
            r#"{"model": {"use_cefm": true}}"#,
            r#"{"train": {"stpes": 3}}"#,
            r#"{"data": {"sise": 8}}"#,
            r#"{"erf": {"tapp": "output"}}"#,
            r#"{"model": {"preset": "xl"}}"#,
        ] {
            assert!(RunConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"data": {"size": 30}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"dims": [8, 16, 32, 16, 4]}}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::default().with_seed(Some(7));
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
