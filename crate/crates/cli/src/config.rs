//! `key=value` config files, spliced into argv so that explicit flags win.

use std::fs;
use std::path::Path;

use clap::Command;

/// Parse a flat `key=value` file. Blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!(
                "{}:{}: expected key=value, got '{line}'",
                path.display(),
                n + 1
            ));
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        entries.push((key, value.trim().to_string()));
    }
    Ok(entries)
}

/// Turn config entries into flag tokens for `sub`. Switches take `true` or
/// `false`; `false` simply omits the switch.
pub fn config_tokens(sub: &Command, entries: &[(String, String)]) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            return Err("config files cannot include other config files".into());
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            return Err(format!("unknown config key '{key}' for '{}'", sub.get_name()));
        };
        if arg.get_action().takes_values() {
            tokens.push(format!("--{key}={value}"));
        } else {
            match value.as_str() {
                "true" => tokens.push(format!("--{key}")),
                "false" => {}
                other => return Err(format!("config key '{key}' expects true or false, got '{other}'")),
            }
        }
    }
    Ok(tokens)
}

/// Find `--config <path>` or `--config=<path>` in raw arguments.
pub fn find_config_arg(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}
