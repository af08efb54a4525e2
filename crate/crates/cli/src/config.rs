//! Line-oriented `key = value` configuration files.
//!
//! Keys name long flags of the selected subcommand (`_` and `-` are
//! interchangeable). Config entries are spliced into the argument list
//! before parsing, so flags given on the command line take precedence.

use std::collections::HashSet;

use clap::{ArgAction, Command};

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected 'key = value', got '{line}'", lineno + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(format!("config line {}: empty key", lineno + 1));
        }
        if !seen.insert(key.clone()) {
            return Err(format!("config line {}: duplicate key '{key}'", lineno + 1));
        }
        out.push((key, value));
    }
    Ok(out)
}

fn has_flag(args: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    args.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

/// Appends config entries to `args` for every flag of `sub` not already
/// present. Unknown keys are rejected.
pub fn splice(args: &mut Vec<String>, sub: &Command, entries: &[(String, String)]) -> Result<(), String> {
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config" && key != "help")
            .ok_or_else(|| {
                let mut valid: Vec<&str> = sub
                    .get_arguments()
                    .filter_map(|a| a.get_long())
                    .filter(|l| *l != "config" && *l != "help")
                    .collect();
                valid.sort_unstable();
                format!(
                    "unknown config key '{key}' for {}; valid keys are {}",
                    sub.get_name(),
                    valid.join(", ")
                )
            })?;
        if has_flag(args, key) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => args.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                _ => return Err(format!("config key '{key}' expects true or false, got '{value}'")),
            },
            _ => {
                let multi = arg.get_num_args().is_some_and(|r| r.max_values() > 1);
                args.push(format!("--{key}"));
                if multi {
                    args.extend(
                        value
                            .split(|c: char| c.is_whitespace() || c == ',')
                            .filter(|s| !s.is_empty())
                            .map(String::from),
                    );
                } else {
                    args.push(value.clone());
                }
            }
        }
    }
    Ok(())
}
