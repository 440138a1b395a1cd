//! Run configuration: defaults, then an optional JSON config file, then
//! command-line flags, merged key by key.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Malformed input file or config; reported with exit code 2.
#[derive(Debug)]
pub struct SchemaFailure(pub String);

impl fmt::Display for SchemaFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SchemaFailure {}

fn as_object(v: Value, what: &str) -> Result<Map<String, Value>, SchemaFailure> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(SchemaFailure(format!("{what} must be a JSON object"))),
    }
}

/// Resolves `R` from its defaults, the config file at `config` and the
/// flags set on the command line (unset flags serialize to nothing).
pub fn resolve<R, F>(flags: &F, config: Option<&Path>) -> anyhow::Result<R>
where
    R: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let mut merged = as_object(serde_json::to_value(R::default())?, "defaults")?;
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| SchemaFailure(format!("config {}: {e}", path.display())))?;
        merged.extend(as_object(file, "config file")?);
    }
    let flags = as_object(serde_json::to_value(flags)?, "flags")?;
    merged.extend(flags.into_iter().filter(|(_, v)| !v.is_null()));
    serde_json::from_value(Value::Object(merged)).map_err(|e| SchemaFailure(format!("configuration: {e}")).into())
}
