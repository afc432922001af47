//! `--config <file.json>` support: the JSON object is turned into flags placed
//! right after the subcommand, so explicit flags given later win.

use std::ffi::OsString;

use serde_json::Value;

/// Expands the first `--config` found after the subcommand. Keys may use
/// dashes or underscores; `true` becomes a bare switch, `false` and `null`
/// are dropped, arrays are joined with commas (nested arrays are flattened).
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    if args.len() < 2 {
        return Ok(args);
    }
    let mut path = None;
    for (i, a) in args.iter().enumerate().skip(2) {
        let Some(s) = a.to_str() else { continue };
        if s == "--config" {
            path = args.get(i + 1).cloned();
            break;
        }
        if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
            break;
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config {}: {e}", path.to_string_lossy()))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.to_string_lossy()))?;
    let Value::Object(map) = value else {
        return Err("config file must hold a JSON object".into());
    };
    let mut flags: Vec<OsString> = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Bool(true) => flags.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let mut parts = Vec::new();
                flatten(&items, &mut parts)?;
                flags.push(flag.into());
                flags.push(parts.join(",").into());
            }
            other => {
                flags.push(flag.into());
                flags.push(scalar(&other)?.into());
            }
        }
    }
    let mut out = args[..2].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

fn scalar(v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(format!("unsupported config value {other}")),
    }
}

fn flatten(items: &[Value], out: &mut Vec<String>) -> Result<(), String> {
    for v in items {
        match v {
            Value::Array(inner) => flatten(inner, out)?,
            other => out.push(scalar(other)?),
        }
    }
    Ok(())
}
