//! Effective run configuration: defaults, then a config file, then `--set`
//! overrides. Every key must already exist in the defaults.

use std::path::Path;

use serde_json::Value;
use topogbm::config::RunConfig;
use topogbm::{Error, Result};

fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Replace the value at a dotted path such as `stage2.lr` or `alpha.1`.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    for part in path.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("unknown config key `{path}`")))?;
    }
    *cur = value;
    Ok(())
}

fn merge(root: &mut Value, prefix: &str, patch: Value) -> Result<()> {
    match patch {
        Value::Object(map) => {
            for (k, v) in map {
                let path = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                merge(root, &path, v)?;
            }
            Ok(())
        }
        v if prefix.is_empty() => Err(Error::Config(format!("config file must hold an object, got {v}"))),
        v => set_path(root, prefix, v),
    }
}

fn apply_assignment(root: &mut Value, line: &str) -> Result<()> {
    let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{line}`")))?;
    set_path(root, k.trim(), parse_value(v))
}

/// Merge a JSON object or `key = value` lines (with `#` comments).
pub fn apply_text(root: &mut Value, text: &str) -> Result<()> {
    if text.trim_start().starts_with('{') {
        let patch: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        return merge(root, "", patch);
    }
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if !line.is_empty() {
            apply_assignment(root, line)?;
        }
    }
    Ok(())
}

pub fn load(file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut root = serde_json::to_value(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(path) = file {
        apply_text(&mut root, &std::fs::read_to_string(path)?)?;
    }
    for s in sets {
        apply_assignment(&mut root, s)?;
    }
    let cfg: RunConfig = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_json(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes") + "\n"
}
