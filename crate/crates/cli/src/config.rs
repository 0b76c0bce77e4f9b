//! `--config` support: a TSV file of `flag<TAB>value` lines supplying values
//! for flags not given on the command line.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command, CommandFactory};

use crate::args::Cli;
use crate::error::CliError;

fn parse_entries(text: &str, path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('\t').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected `flag<TAB>value`",
                path.display(),
                n + 1
            ))
        })?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        entries.push((key, value.trim().to_string()));
    }
    Ok(entries)
}

fn knows_flag(cmd: &Command, long: &str) -> bool {
    cmd.get_arguments().any(|a| a.get_long() == Some(long))
        || cmd.get_subcommands().any(|c| knows_flag(c, long))
}

/// Returns `raw` with config-file values appended for every flag of the
/// selected command that the command line left unset.
pub fn merge(raw: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut root = Cli::command();
    root.build();
    // Flags supplied only by the config file may be required, so this pass
    // just locates the command and the flags given explicitly.
    let matches = root.clone().ignore_errors(true).try_get_matches_from(&raw)?;
    let Some(path) = matches.get_one::<std::path::PathBuf>("config").cloned() else {
        return Ok(raw);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let entries = parse_entries(&text, &path)?;

    let mut leaf: &Command = &root;
    let mut leaf_matches: &ArgMatches = &matches;
    while let Some((name, sub)) = leaf_matches.subcommand() {
        leaf = leaf.find_subcommand(name).expect("parsed subcommand exists");
        leaf_matches = sub;
    }

    let mut merged = raw;
    for (key, value) in entries {
        if key == "config" {
            return Err(CliError::Usage("config files cannot include other config files".into()));
        }
        let Some(arg) = leaf.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            if knows_flag(&root, &key) {
                // Meant for another command.
                continue;
            }
            return Err(CliError::Usage(format!(
                "{}: unknown config key {key:?}",
                path.display()
            )));
        };
        if leaf_matches.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => {
                let on: bool = value.parse().map_err(|_| {
                    CliError::Usage(format!("config key {key:?} expects true or false"))
                })?;
                if on {
                    merged.push(format!("--{key}").into());
                }
            }
            _ => {
                merged.push(format!("--{key}").into());
                merged.push(value.into());
            }
        }
    }
    Ok(merged)
}
