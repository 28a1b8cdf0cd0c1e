//! JSON configuration files with dotted-key command-line overrides.

use std::path::Path;

use admgs_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Split `--a.b=value` arguments (a dot in the key) out of `args`; the rest
/// are returned untouched for the regular parser.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        if let Some(body) = a.strip_prefix("--") {
            if let Some((k, v)) = body.split_once('=') {
                if k.contains('.') {
                    overrides.push((k.to_string(), v.to_string()));
                    continue;
                }
            }
        }
        rest.push(a);
    }
    (rest, overrides)
}

/// Parse `key=value` as given to `--set`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| Error::invalid(format!("override {s:?} is not of the form key=value")))
}

/// Set `key` (dot separated) in `root`. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::invalid(format!("empty component in override key {key:?}")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::invalid(format!("override {key:?}: {} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

/// Start from `file` (or the defaults when absent), apply `overrides` in
/// order and deserialize; unknown keys are rejected by the target type.
pub fn load<T: DeserializeOwned + Serialize>(base: Value, file: Option<&Path>, overrides: &[(String, String)]) -> Result<(T, Value)> {
    let mut v = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?
        }
        None => base,
    };
    for (k, raw) in overrides {
        apply_override(&mut v, k, raw)?;
    }
    let parsed: T = serde_json::from_value(v).map_err(|e| Error::invalid(format!("configuration: {e}")))?;
    // Echo the fully populated configuration, defaults included.
    let effective = serde_json::to_value(&parsed)?;
    Ok((parsed, effective))
}

#[cfg(test)]
mod tests {
    use super::*;
    use admgs_core::train::TrainConfig;

    fn defaults() -> Value {
        serde_json::to_value(TrainConfig::default()).unwrap()
    }

    #[test]
    fn dotted_arguments_are_split_out() {
        let args = ["train", "--data", "d", "--loss.lambda_decomp=0", "--out=x"].map(String::from).to_vec();
        let (rest, ov) = split_overrides(args);
        assert_eq!(rest, ["train", "--data", "d", "--out=x"]);
        assert_eq!(ov, vec![("loss.lambda_decomp".to_string(), "0".to_string())]);
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let ov = vec![("loss.lambda_decomp".into(), "0".into()), ("iterations".into(), "7".into())];
        let (c, eff): (TrainConfig, Value) = load(defaults(), None, &ov).unwrap();
        assert_eq!(c.loss.lambda_decomp, 0.0);
        assert_eq!(c.iterations, 7);
        assert_eq!(eff["loss"]["lambda_decomp"], 0.0);
        let bad = vec![("loss.lambda_dcomp".into(), "0".into())];
        assert!(load::<TrainConfig>(defaults(), None, &bad).is_err());
        let through_scalar = vec![("iterations.x".into(), "1".into())];
        assert!(load::<TrainConfig>(defaults(), None, &through_scalar).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"iterations": 12, "seed": 3}"#).unwrap();
        let (c, _): (TrainConfig, Value) = load(defaults(), Some(&p), &[("seed".into(), "4".into())]).unwrap();
        assert_eq!((c.iterations, c.seed), (12, 4));
        assert_eq!(c.lr, TrainConfig::default().lr);
    }
}
