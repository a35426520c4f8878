//! `--config` files: `key=value` lines whose keys are long flag names.
//!
//! The file's entries are spliced into the argument list directly after the
//! subcommand, so anything given on the command line (which comes later)
//! overrides them.

use std::ffi::OsString;
use std::fs;

use clap::{ArgAction, CommandFactory};
use sketchreg_core::provenance::Sidecar;

use crate::args::Cli;
use crate::CliError;

/// Root options that take a value; their values are skipped when looking
/// for the subcommand.
const VALUE_OPTIONS: [&str; 2] = ["--config", "--threads"];

pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Runtime(format!("{path}: {e}")))?;
    let entries = Sidecar::parse(&text).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;

    let root = Cli::command();
    let Some((position, name)) = find_subcommand(&argv, &root) else {
        // Let clap report the missing subcommand.
        return Ok(argv);
    };
    let sub = root
        .find_subcommand(&name)
        .expect("name was matched against the subcommands");

    let mut injected = Vec::new();
    for (key, value) in entries.entries() {
        let long = key.replace('_', "-");
        if long == "config" {
            return Err(CliError::Usage(format!(
                "{path}: config files cannot include other config files"
            )));
        }
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(long.as_str()))
            .ok_or_else(|| CliError::Usage(format!("{path}: unknown key `{key}` for `{name}`")))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" | "1" | "yes" => injected.push(OsString::from(format!("--{long}"))),
                "false" | "0" | "no" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "{path}: `{key}` expects true or false, got {other:?}"
                    )))
                }
            }
        } else {
            injected.push(OsString::from(format!("--{long}")));
            injected.push(OsString::from(value));
        }
    }
    let mut out = argv;
    out.splice(position + 1..position + 1, injected);
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<String> {
    let mut iter = argv.iter().skip(1).map(|a| a.to_string_lossy());
    let mut found = None;
    while let Some(arg) = iter.next() {
        if arg == "--" {
            break;
        }
        if arg == "--config" {
            found = iter.next().map(|v| v.into_owned());
        } else if let Some(v) = arg.strip_prefix("--config=") {
            found = Some(v.to_string());
        }
    }
    found
}

fn find_subcommand(argv: &[OsString], root: &clap::Command) -> Option<(usize, String)> {
    let mut skip_next = false;
    for (i, arg) in argv.iter().enumerate().skip(1) {
        let arg = arg.to_string_lossy();
        if skip_next {
            skip_next = false;
            continue;
        }
        if VALUE_OPTIONS.contains(&arg.as_ref()) {
            skip_next = true;
            continue;
        }
        if arg.starts_with('-') {
            continue;
        }
        return root
            .get_subcommands()
            .find(|s| s.get_name() == arg)
            .map(|s| (i, s.get_name().to_string()));
    }
    None
}
