//! Run configuration: a JSON object of flat dotted keys over the nested
//! module configs, e.g.
//!
//! ```json
//! { "gen.rho": 1.0, "train.steps": 500, "train.model.preset": "micro", "train.model.heads": 2 }
//! ```
//!
//! `train.model.preset` replaces the whole model block before any other
//! `train.model.*` key is applied.

use gimo_core::fusion::ModelConfig;
use gimo_core::synthgen::{GenConfig, Split};
use gimo_core::trainer::TrainConfig;
use gimo_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use std::path::Path;

pub const PRESET_KEY: &str = "train.model.preset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub splits: Vec<Split>,
    /// Attention maps dumped by `ablate`.
    pub attention_episodes: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            splits: vec![Split::TestKnown, Split::TestNew],
            attention_episodes: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

fn contract(msg: String) -> Error {
    Error::Contract(msg)
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| contract(format!("unknown config key '{key}'")))?;
        let slot = obj.get_mut(*part).ok_or_else(|| contract(format!("unknown config key '{key}'")))?;
        if i + 1 == parts.len() {
            if slot.is_object() {
                return Err(contract(format!("config key '{key}' names a section, not a value")));
            }
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

impl RunConfig {
    /// Defaults overridden by `entries`.
    pub fn from_flat(entries: &BTreeMap<String, Value>) -> Result<Self> {
        let mut root = serde_json::to_value(RunConfig::default())?;
        if let Some(p) = entries.get(PRESET_KEY) {
            let name = p.as_str().ok_or_else(|| contract(format!("'{PRESET_KEY}' must be a string")))?;
            set_model(&mut root, ModelConfig::preset(name)?)?;
        }
        for (k, v) in entries.iter().filter(|(k, _)| k.as_str() != PRESET_KEY) {
            set_path(&mut root, k, v.clone())?;
        }
        let cfg: RunConfig = serde_json::from_value(root).map_err(|e| contract(format!("bad config value: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let entries: BTreeMap<String, Value> = serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_flat(&entries).map_err(|e| match e {
            Error::Contract(m) => Error::Parse {
                source_name: source_name.to_string(),
                line: 1,
                message: m,
            },
            other => other,
        })
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => Self::parse(&std::fs::read_to_string(p)?, &p.display().to_string()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()
    }

    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }
}

fn set_model(root: &mut Value, model: ModelConfig) -> Result<()> {
    let train = root.get_mut("train").and_then(Value::as_object_mut).expect("train section");
    train.insert("model".into(), serde_json::to_value(model)?);
    Ok(())
}

/// `resolved_config.json` contents: the command, its flat config, and the
/// hashes of its inputs.
pub fn snapshot(command: &str, config: &RunConfig, inputs: &BTreeMap<String, String>) -> String {
    let mut m = Map::new();
    m.insert("command".into(), Value::String(command.into()));
    m.insert("config".into(), Value::Object(config.to_flat().into_iter().collect()));
    m.insert("inputs".into(), Value::Object(inputs.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect()));
    serde_json::to_string_pretty(&Value::Object(m)).expect("snapshot serializes") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use gimo_core::fusion::Variant;

    #[test]
    fn flat_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_flat(&cfg.to_flat()).unwrap(), cfg);
        assert!(cfg.to_flat().contains_key("train.model.scene.sa1_radius"));
    }

    #[test]
    fn overrides_and_preset() {
        let text = r#"{ "gen.rho": 1.0, "train.variant": "no_gaze", "train.model.preset": "micro", "train.model.heads": 4 }"#;
        let cfg = RunConfig::parse(text, "c.json").unwrap();
        assert_eq!(cfg.gen.rho, 1.0);
        assert_eq!(cfg.train.variant, Variant::NoGaze);
        assert_eq!(cfg.train.model.d_model, ModelConfig::micro().d_model);
        assert_eq!(cfg.train.model.heads, 4);
    }

    #[test]
    fn bad_keys_and_values_are_named() {
        for (text, needle) in [
            (r#"{ "gen.nope": 1 }"#, "gen.nope"),
            (r#"{ "gen": 1 }"#, "section"),
            (r#"{ "gen.rho": "high" }"#, "bad config value"),
            (r#"{ "gen.rho": 2.0 }"#, "rho"),
            (r#"{ "train.model.preset": "huge" }"#, "huge"),
        ] {
            let e = RunConfig::parse(text, "c.json").unwrap_err().to_string();
            assert!(e.contains(needle) && e.contains("c.json"), "{e}");
        }
        let e = RunConfig::parse("{\n\"gen.rho\": ,\n}", "c.json").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    }
}
