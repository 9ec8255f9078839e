//! Layered settings: command-line flags over the config file over defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Config file contents: one optional object per section.
#[derive(Default)]
pub struct ConfigFile {
    sections: Map<String, Value>,
}

const SECTIONS: [&str; 6] = [
    "tokenizer",
    "model",
    "pretrain",
    "finetune",
    "sts",
    "mining",
];

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Value::Object(sections) = value else {
            bail!("{}: top level must be a JSON object", path.display());
        };
        if let Some(k) = sections.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            bail!(
                "{}: unknown section {k:?} (expected one of {})",
                path.display(),
                SECTIONS.join(", ")
            );
        }
        Ok(ConfigFile { sections })
    }

    /// Defaults, then the named section, then `flags`. Keys must already
    /// exist in the defaults; nested objects merge key by key.
    pub fn resolve<T>(&self, section: &str, flags: Vec<(&str, Option<Value>)>) -> Result<T>
    where
        T: Serialize + DeserializeOwned + Default,
    {
        let mut value = serde_json::to_value(T::default())?;
        if let Some(file) = self.sections.get(section) {
            merge(&mut value, file, section)?;
        }
        let flags: Map<String, Value> = flags
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
            .collect();
        merge(&mut value, &Value::Object(flags), section)?;
        serde_json::from_value(value).with_context(|| format!("invalid {section} settings"))
    }
}

fn merge(base: &mut Value, layer: &Value, path: &str) -> Result<()> {
    let (Value::Object(base), Value::Object(layer)) = (&mut *base, layer) else {
        bail!("{path} must be a JSON object");
    };
    for (k, v) in layer {
        let key = format!("{path}.{k}");
        match base.get_mut(k) {
            None => bail!("unknown setting {key}"),
            Some(slot @ Value::Object(_)) => merge(slot, v, &key)?,
            Some(slot) => *slot = v.clone(),
        }
    }
    Ok(())
}

pub fn flag<T: Serialize>(v: Option<T>) -> Option<Value> {
    v.map(|v| serde_json::to_value(v).expect("plain values serialize"))
}
