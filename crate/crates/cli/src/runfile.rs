//! JSON run files. A run file maps command names to flag values, e.g.
//!
//! ```json
//! { "train": { "batch_size": 8, "seed": 3 }, "speechlm": { "fit": { "clusters": 50 } } }
//! ```
//!
//! The section of the invoked command is turned into `--flag value` arguments
//! placed before the user's own flags, so explicit flags win.

use std::ffi::OsString;
use std::path::Path;

use clap::Command;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Position just past the subcommand path in `argv`, plus the path itself.
fn subcommand_path(root: &Command, argv: &[OsString]) -> (usize, Vec<String>) {
    let mut cmd = root;
    let mut path = Vec::new();
    let mut i = 1;
    while i < argv.len() {
        let tok = argv[i].to_string_lossy();
        if tok == "--config" {
            i += 2;
            continue;
        }
        if tok.starts_with("--config=") {
            i += 1;
            continue;
        }
        if tok.starts_with('-') {
            break;
        }
        match cmd.find_subcommand(tok.as_ref()) {
            Some(sub) => {
                path.push(sub.get_name().to_string());
                cmd = sub;
                i += 1;
                if !cmd.has_subcommands() {
                    break;
                }
            }
            None => break,
        }
    }
    (i, path)
}

/// The `--config` value in `argv`, if any.
pub fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
        if s == "--" {
            break;
        }
    }
    None
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

/// Checks every section of the run file against the command tree.
fn validate(cmd: &Command, obj: &Map<String, Value>, section: &str) -> Result<(), CliError> {
    for (key, value) in obj {
        let label = if section.is_empty() {
            key.clone()
        } else {
            format!("{section}.{key}")
        };
        if cmd.has_subcommands() {
            let sub = cmd
                .find_subcommand(key)
                .ok_or_else(|| usage(format!("run file: unknown section `{label}`")))?;
            let inner = value
                .as_object()
                .ok_or_else(|| usage(format!("run file: section `{label}` must be an object")))?;
            validate(sub, inner, &label)?;
        } else {
            let arg = cmd
                .get_arguments()
                .find(|a| a.get_id() == key.as_str() && a.get_long().is_some() && key != "config")
                .ok_or_else(|| usage(format!("run file: unknown key `{label}`")))?;
            to_flag_args(arg, value, &label)?;
        }
    }
    Ok(())
}

fn scalar(value: &Value, label: &str) -> Result<String, CliError> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(usage(format!(
            "run file: `{label}` must be a string, number or boolean"
        ))),
    }
}

fn to_flag_args(arg: &clap::Arg, value: &Value, label: &str) -> Result<Vec<OsString>, CliError> {
    let flag = format!("--{}", arg.get_long().expect("checked by caller"));
    if !arg.get_action().takes_values() {
        return match value {
            Value::Bool(true) => Ok(vec![flag.into()]),
            Value::Bool(false) => Ok(vec![]),
            _ => Err(usage(format!(
                "run file: `{label}` is a switch and needs true or false"
            ))),
        };
    }
    let values = match value {
        Value::Array(items) => items
            .iter()
            .map(|v| scalar(v, label))
            .collect::<Result<Vec<_>, _>>()?,
        other => vec![scalar(other, label)?],
    };
    // `--flag=value` keeps negative numbers from reading as flags
    Ok(values
        .into_iter()
        .map(|v| format!("{flag}={v}").into())
        .collect())
}

/// Loads the run file and splices the invoked command's section into `argv`.
pub fn expand(root: &Command, argv: Vec<OsString>, path: &Path) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
    let json: Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let obj = json.as_object().ok_or_else(|| {
        usage(format!(
            "{}: run file must be a JSON object",
            path.display()
        ))
    })?;
    validate(root, obj, "")?;

    let (at, names) = subcommand_path(root, &argv);
    let mut cmd = root;
    let mut section = Some(obj);
    for name in &names {
        cmd = cmd.find_subcommand(name).expect("path came from this tree");
        section = section.and_then(|s| s.get(name)).and_then(Value::as_object);
    }
    let mut injected = Vec::new();
    if let Some(section) = section.filter(|_| !cmd.has_subcommands()) {
        for (key, value) in section {
            let arg = cmd
                .get_arguments()
                .find(|a| a.get_id() == key.as_str())
                .expect("validated above");
            injected.extend(to_flag_args(arg, value, key)?);
        }
    }
    let mut out = argv[..at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}
