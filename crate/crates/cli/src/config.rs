//! JSON run configuration: loading, path resolution, flag overrides, hashing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Keys whose string values are file paths, resolved against the config's directory.
const PATH_KEYS: [&str; 7] = ["returns", "residuals", "w1", "w2", "w", "out_dir", "path"];

/// Reads a config file (or starts from `{}`) and makes relative paths absolute
/// with respect to the file's directory.
pub fn load(path: Option<&Path>) -> CliResult<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
    let mut v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !v.is_object() {
        return Err(CliError::validation("config must be a JSON object"));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve_paths(&mut v, &base);
    Ok(v)
}

fn resolve_paths(v: &mut Value, base: &Path) {
    match v {
        Value::Object(map) => {
            for (k, child) in map.iter_mut() {
                if let (true, Value::String(s)) = (PATH_KEYS.contains(&k.as_str()), &*child) {
                    let p = Path::new(s);
                    if p.is_relative() {
                        *child = Value::String(base.join(p).to_string_lossy().into_owned());
                    }
                } else {
                    resolve_paths(child, base);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|c| resolve_paths(c, base)),
        _ => {}
    }
}

/// Sets `a.b.c` to `value`, creating intermediate objects.
pub fn set(v: &mut Value, dotted: &str, value: Value) -> CliResult<()> {
    let mut cur = v;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::validation(format!("bad override key `{dotted}`")));
        }
        let map = cur
            .as_object_mut()
            .ok_or_else(|| CliError::validation(format!("override `{dotted}`: `{part}` is not inside an object")))?;
        if k + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Parses `key=value`; the value is read as JSON when it parses, else as a string.
pub fn parse_assignment(s: &str) -> CliResult<(String, Value)> {
    let (k, raw) = s.split_once('=').ok_or_else(|| CliError::validation(format!("override `{s}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((k.trim().to_string(), value))
}

pub fn apply(v: &mut Value, overrides: Vec<(String, Value)>) -> CliResult<()> {
    overrides.into_iter().try_for_each(|(k, val)| set(v, &k, val))
}

pub fn decode<T: DeserializeOwned>(v: &Value) -> CliResult<T> {
    T::deserialize(v).map_err(|e| CliError::validation(format!("invalid configuration: {e}")))
}

/// SHA-256 of the canonical (sorted-key, compact) JSON, ignoring `out_dir`.
pub fn config_hash(v: &Value) -> String {
    let mut c = v.clone();
    if let Some(map) = c.as_object_mut() {
        map.remove("out_dir");
    }
    hex::encode(Sha256::digest(c.to_string().as_bytes()))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(format!("{what} file {} does not exist", path.display())))
    }
}

pub fn out_dir(v: &Value) -> CliResult<PathBuf> {
    match v.get("out_dir") {
        Some(Value::String(s)) => Ok(PathBuf::from(s)),
        Some(_) => Err(CliError::validation("out_dir must be a string")),
        None => Err(CliError::validation("no output directory: set out_dir in the config or pass --out")),
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::io(e.to_string()))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))
}
