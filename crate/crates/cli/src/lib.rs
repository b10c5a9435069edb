//! Command-line driver: argument parsing, config files, run manifests.

mod args;
mod commands;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::Parser;
use serde_json::Value;

pub use args::Cli;
pub use error::CliError;
pub use manifest::{git_blob_hash, RunManifest};

/// Value of `--config` in raw argv, if given.
fn config_path(argv: &[String]) -> Option<PathBuf> {
    argv.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            argv.get(i + 1).map(PathBuf::from)
        } else {
            a.strip_prefix("--config=").map(PathBuf::from)
        }
    })
}

fn flag_given(argv: &[String], flag: &str) -> bool {
    argv.iter()
        .any(|a| a == flag || a.strip_prefix(flag).is_some_and(|r| r.starts_with('=')))
}

/// Turns a flat JSON object into flags. Keys use flag names, with `_` or `-`.
/// Keys already present on the command line are skipped so flags win.
/// `true` becomes a bare switch, `false` and `null` are dropped, arrays repeat the flag.
pub fn config_flags(config: &Value, argv: &[String]) -> Result<Vec<String>, CliError> {
    let obj = config
        .as_object()
        .ok_or_else(|| error::invalid("config file must hold a JSON object"))?;
    let mut out = Vec::new();
    for (key, value) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || flag_given(argv, &flag) {
            continue;
        }
        let scalar = |v: &Value| -> Result<String, CliError> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err(error::invalid(format!("config key `{key}` must be a string, number or boolean"))),
            }
        };
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag),
            Value::Array(items) => {
                for item in items {
                    out.push(flag.clone());
                    out.push(scalar(item)?);
                }
            }
            other => {
                out.push(flag);
                out.push(scalar(other)?);
            }
        }
    }
    Ok(out)
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    if let Some(path) = config_path(&argv) {
        let extra = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", path.display())))
            .and_then(|text| serde_json::from_str::<Value>(&text).map_err(|e| error::invalid(format!("config {}: {e}", path.display()))))
            .and_then(|v| config_flags(&v, &argv));
        match extra {
            Ok(flags) => argv.extend(flags),
            Err(e) => {
                eprintln!("error: {}", e.message());
                return e.exit_code();
            }
        }
    }
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::run(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn flags_override_config() {
        let cfg = json!({"k": [1, 3], "seed": 7, "sweep": true, "unweighted": false, "dev_corpus": "d.jsonl"});
        let flags = config_flags(&cfg, &argv("ragate retrieve-eval --k 5 --seed=2")).unwrap();
        assert_eq!(flags, argv("--dev-corpus d.jsonl --sweep"));
    }

    #[test]
    fn nested_values_rejected() {
        assert!(config_flags(&json!({"k": {"a": 1}}), &[]).is_err());
        assert!(config_flags(&json!([1]), &[]).is_err());
    }

    #[test]
    fn config_path_forms() {
        assert_eq!(config_path(&argv("x --config a.json")), Some("a.json".into()));
        assert_eq!(config_path(&argv("x --config=b.json")), Some("b.json".into()));
        assert_eq!(config_path(&argv("x")), None);
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(dispatch(argv("ragate index --bogus 1")), 1);
        assert_eq!(dispatch(argv("ragate frobnicate")), 1);
        assert_eq!(dispatch(argv("ragate --help")), 0);
    }
}
