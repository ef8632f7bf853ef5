//! `--key value` overrides applied to a JSON config before it is deserialized.

use anyhow::{bail, Context, Result};
use serde_json::{Map, Value};

/// Splits `--key value` / `--key=value` tokens into pairs. Dashes inside a
/// key become underscores so `--batch-size` and `--batch_size` agree.
pub fn pairs(tokens: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let Some(flag) = tok.strip_prefix("--") else {
            bail!("unexpected argument {tok:?} (overrides take the form --key value)");
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().with_context(|| format!("--{flag} needs a value"))?;
                (flag.to_string(), v.clone())
            }
        };
        if key.is_empty() {
            bail!("empty override key in {tok:?}");
        }
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

/// Removes the first pair named `key`, if any.
pub fn take(pairs: &mut Vec<(String, String)>, key: &str) -> Option<String> {
    let i = pairs.iter().position(|(k, _)| k == key)?;
    Some(pairs.remove(i).1)
}

/// Values that parse as JSON keep their type; anything else is a string,
/// so paths and names need no quoting.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `a.b.c = value` inside `root`, creating objects along the way.
pub fn apply(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Map::new());
            } else {
                bail!("cannot override {key}: {} is not an object", parts[..i].join("."));
            }
        }
        let obj = node.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parse_value(raw));
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split always yields at least one part")
}
