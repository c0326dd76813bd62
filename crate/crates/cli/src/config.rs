//! Config files plus `--key value` overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{Map, Value};

/// Load `path` (or an empty object) and apply overrides. Keys may be
/// dotted paths into nested objects (`--optimizer.step_size 0.05`).
pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Value> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Value::Object(Map::new()),
    };
    if !config.is_object() {
        bail!("config must be a JSON object");
    }
    for (key, raw) in overrides {
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
        set_path(&mut config, key, value)?;
    }
    Ok(config)
}

fn set_path(config: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = config;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().with_context(|| format!("cannot set `{key}`: `{part}` is not an object"))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node.as_object_mut().with_context(|| format!("cannot set `{key}`"))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Global flags found among the free-form arguments.
#[derive(Debug, Default, PartialEq)]
pub struct Split {
    pub config: Option<String>,
    pub seed: Option<String>,
    pub out: Option<String>,
    pub threads: Option<String>,
    pub overrides: Vec<(String, String)>,
}

/// Pair up `--key value` / `--key=value` tokens.
pub fn split_args(args: &[String]) -> Result<Split> {
    let mut split = Split::default();
    let mut it = args.iter();
    while let Some(tok) = it.next() {
        let Some(body) = tok.strip_prefix("--") else {
            bail!("unexpected argument `{tok}`; overrides take the form --key value");
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().with_context(|| format!("missing value for --{body}"))?;
                (body.to_string(), v.clone())
            }
        };
        match key.as_str() {
            "config" => split.config = Some(value),
            "seed" => split.seed = Some(value),
            "out" => split.out = Some(value),
            "threads" => split.threads = Some(value),
            _ => split.overrides.push((key.replace('-', "_"), value)),
        }
    }
    Ok(split)
}
