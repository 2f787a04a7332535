//! `--help-json`: the clap command tree as a JSON document.

use clap::{Arg, ArgAction, Command};
use serde::Serialize;

#[derive(Serialize)]
pub struct HelpDoc {
    pub name: String,
    pub version: String,
    pub about: String,
    pub flags: Vec<FlagHelp>,
    pub subcommands: Vec<SubcommandHelp>,
}

#[derive(Serialize)]
pub struct SubcommandHelp {
    pub name: String,
    pub about: String,
    pub flags: Vec<FlagHelp>,
}

#[derive(Serialize)]
pub struct FlagHelp {
    pub long: String,
    pub help: String,
    pub takes_value: bool,
    pub required: bool,
    pub list: bool,
    pub default: Option<String>,
    pub possible_values: Vec<String>,
    pub conflicts_with: Vec<String>,
}

fn flag(cmd: &Command, arg: &Arg) -> Option<FlagHelp> {
    let long = arg.get_long()?;
    let takes_value = matches!(arg.get_action(), ArgAction::Set | ArgAction::Append);
    let default = arg
        .get_default_values()
        .first()
        .map(|v| v.to_string_lossy().into_owned());
    Some(FlagHelp {
        long: format!("--{long}"),
        help: arg.get_help().map(|h| h.to_string()).unwrap_or_default(),
        takes_value,
        required: arg.is_required_set(),
        list: arg.get_value_delimiter().is_some(),
        default,
        possible_values: arg
            .get_possible_values()
            .iter()
            .map(|v| v.get_name().to_owned())
            .collect(),
        conflicts_with: cmd
            .get_arg_conflicts_with(arg)
            .iter()
            .filter_map(|a| a.get_long())
            .map(|l| format!("--{l}"))
            .collect(),
    })
}

fn flags(cmd: &Command) -> Vec<FlagHelp> {
    cmd.get_arguments().filter_map(|a| flag(cmd, a)).collect()
}

pub fn describe(mut cmd: Command) -> HelpDoc {
    cmd.build();
    HelpDoc {
        name: cmd.get_name().to_owned(),
        version: cmd.get_version().unwrap_or_default().to_owned(),
        about: cmd.get_about().map(|a| a.to_string()).unwrap_or_default(),
        flags: flags(&cmd),
        subcommands: cmd
            .get_subcommands()
            .filter(|s| s.get_name() != "help")
            .map(|s| SubcommandHelp {
                name: s.get_name().to_owned(),
                about: s.get_about().map(|a| a.to_string()).unwrap_or_default(),
                flags: flags(s),
            })
            .collect(),
    }
}
