//! `--config` files: a TOML table whose keys are long flag names. Keys in a
//! `[<command>]` section apply to that command only; top-level scalar keys
//! apply to every command that accepts them.

use std::path::Path;

/// Splits `--config <path>` / `--config=<path>` out of the raw arguments.
pub fn take_config_flag(args: &mut Vec<String>) -> Result<Option<String>, String> {
    let mut found = None;
    let mut i = 1;
    while i < args.len() {
        if args[i] == "--config" {
            if i + 1 >= args.len() {
                return Err("--config needs a path".into());
            }
            found = Some(args.remove(i + 1));
            args.remove(i);
        } else if let Some(p) = args[i].strip_prefix("--config=") {
            found = Some(p.to_string());
            args.remove(i);
        } else {
            i += 1;
        }
    }
    Ok(found)
}

fn value_to_string(key: &str, v: &toml::Value) -> Result<String, String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        toml::Value::Array(items) => items
            .iter()
            .map(|item| value_to_string(key, item))
            .collect::<Result<Vec<_>, _>>()
            .map(|parts| parts.join(",")),
        _ => Err(format!("config key '{key}' has an unsupported value")),
    }
}

fn push_entry(out: &mut Vec<String>, key: &str, v: &toml::Value) -> Result<(), String> {
    match v {
        toml::Value::Boolean(true) => out.push(format!("--{key}")),
        toml::Value::Boolean(false) => {}
        // repeatable flags such as --axis
        toml::Value::Array(items) if key == "axis" => {
            for item in items {
                out.push(format!("--{key}"));
                out.push(value_to_string(key, item)?);
            }
        }
        _ => {
            out.push(format!("--{key}"));
            out.push(value_to_string(key, v)?);
        }
    }
    Ok(())
}

fn given(user: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    user.iter()
        .any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
}

/// Flag arguments for `command` read from the config text. Keys the user
/// passed explicitly are skipped, so flags win.
pub fn config_args(
    text: &str,
    command: &str,
    accepted: &[String],
    user: &[String],
) -> Result<Vec<String>, String> {
    let table: toml::Table = text.parse().map_err(|e| format!("config: {e}"))?;
    let mut out = Vec::new();
    for (key, v) in &table {
        if v.is_table() {
            continue;
        }
        if accepted.iter().any(|a| a == key) && !given(user, key) {
            push_entry(&mut out, key, v)?;
        }
    }
    if let Some(section) = table.get(command) {
        let section = section
            .as_table()
            .ok_or_else(|| format!("config: '{command}' must be a table"))?;
        for (key, v) in section {
            if !accepted.iter().any(|a| a == key) {
                return Err(format!("config: unknown key '{key}' for '{command}'"));
            }
            if given(user, key) {
                continue;
            }
            push_entry(&mut out, key, v)?;
        }
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))
}
