//! Plain-text configuration documents.
//!
//! A document is either a JSON object or `key = value` lines. Dotted keys
//! address nested objects (`model.dim = 64`), values are parsed as JSON when
//! possible and kept as strings otherwise, and `#` starts a comment.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Parses a JSON object or a `key = value` document.
pub fn parse_document(text: &str) -> Result<Value> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let v: Value = serde_json::from_str(text)?;
        return Ok(v);
    }
    let mut root = Value::Object(Map::new());
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
        set_path(&mut root, key.trim(), parse_value(value.trim()))?;
    }
    Ok(root)
}

/// JSON literal if it parses as one, otherwise the raw string.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `a.b.c` inside `root`, creating intermediate objects.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("invalid key {key:?}")));
    }
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part:?} is inside a non-object value")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("key has at least one part")
}

/// Recursively overlays `top` onto `base`; objects merge, everything else
/// replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then each layer in order, deserialized into `T`.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, layers: impl IntoIterator<Item = Value>) -> Result<T> {
    let mut v = serde_json::to_value(defaults)?;
    for layer in layers {
        merge(&mut v, layer);
    }
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Inner {
        dim: usize,
        norm: String,
    }

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Cfg {
        lr: f64,
        epochs: usize,
        model: Inner,
    }

    fn defaults() -> Cfg {
        Cfg {
            lr: 1e-3,
            epochs: 600,
            model: Inner {
                dim: 256,
                norm: "post".into(),
            },
        }
    }

    #[test]
    fn key_value_document() {
        let v = parse_document("# run\nepochs = 2\nmodel.dim=64  # small\nmodel.norm = pre\n").unwrap();
        assert_eq!(v, json!({"epochs": 2, "model": {"dim": 64, "norm": "pre"}}));
    }

    #[test]
    fn json_document() {
        let v = parse_document("{\"lr\": 0.5}").unwrap();
        assert_eq!(v, json!({"lr": 0.5}));
    }

    #[test]
    fn layers_apply_in_order() {
        let file = parse_document("epochs = 2\nlr = 0.1").unwrap();
        let flags = json!({"lr": 0.2});
        let cfg = resolve(&defaults(), [file, flags]).unwrap();
        assert_eq!(cfg.lr, 0.2);
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.model.dim, 256);
    }

    #[test]
    fn unknown_keys_and_bad_lines_fail() {
        assert!(resolve(&defaults(), [json!({"lrr": 1})]).is_err());
        assert!(parse_document("epochs 2").is_err());
        assert!(parse_document("a..b = 1").is_err());
    }
}
