use aevit_core::{CoreError, Result, RunConfig};
use toml::Value;

/// Apply `key.path=value` overrides; values are parsed as TOML, falling back
/// to a bare string.
pub fn apply(cfg: &RunConfig, sets: &[String]) -> Result<RunConfig> {
    if sets.is_empty() {
        return Ok(cfg.clone());
    }
    let mut root = Value::try_from(cfg).map_err(|e| CoreError::Config(e.to_string()))?;
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| CoreError::config(format!("override `{s}` is not KEY=VALUE")))?;
        set(&mut root, key.trim(), parse(raw.trim()))?;
    }
    let out: RunConfig = root
        .try_into()
        .map_err(|e: toml::de::Error| CoreError::Config(e.to_string()))?;
    out.validate()?;
    Ok(out)
}

fn parse(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CoreError::config(format!("`{key}`: `{p}` is not a section")))?;
        node = table
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CoreError::config(format!("`{key}` does not name a key inside a section")))?;
    let last = parts[parts.len() - 1];
    // Integers given for float keys keep the key's type.
    let value = match (table.get(last), value) {
        (Some(Value::Float(_)), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    };
    table.insert(last.to_string(), value);
    Ok(())
}
