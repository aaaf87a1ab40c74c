use anyhow::{bail, Context, Result};
use serde_json::{Map, Value};

/// Parses `a.b.c=value` into `{"a": {"b": {"c": value}}}`. The value is
/// read as JSON when it parses, otherwise kept as a string.
pub fn parse_override(spec: &str) -> Result<Value> {
    let (key, raw) = spec
        .split_once('=')
        .with_context(|| format!("override {spec:?} is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override {spec:?} has an empty key segment");
    }
    let mut value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    for seg in key.rsplit('.') {
        let mut m = Map::new();
        m.insert(seg.to_string(), value);
        value = Value::Object(m);
    }
    Ok(value)
}
