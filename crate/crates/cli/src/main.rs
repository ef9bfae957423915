mod args;
mod cfgfile;
mod cmd;
mod manifest;
mod sweep;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};

use args::{AnalyzeCommand, Cli, Command, LlmCommand};

/// Exit 1 for bad input, 2 for failures while running.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
    Usage(clap::Error),
    Lib(serlab::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Usage(_) => 1,
            CliError::Lib(e) if e.is_validation() => 1,
            CliError::Runtime(_) | CliError::Lib(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::Usage(e) => write!(f, "{}", e.render().to_string().trim_end()),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<serlab::Error> for CliError {
    fn from(e: serlab::Error) -> Self {
        CliError::Lib(e)
    }
}

/// Later occurrences of a flag replace earlier ones, so config-file values
/// spliced in front can be overridden.
fn command() -> clap::Command {
    fn overriding(c: clap::Command) -> clap::Command {
        let names: Vec<String> = c.get_subcommands().map(|s| s.get_name().to_string()).collect();
        names
            .iter()
            .fold(c.args_override_self(true), |c, n| c.mut_subcommand(n, overriding))
    }
    overriding(Cli::command())
}

pub fn run(argv: Vec<OsString>) -> Result<(), CliError> {
    let argv = cfgfile::expand_config(argv)?;
    let matches = match command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e)),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(CliError::Usage)?;
    let recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let argv = &recorded;
    match &cli.command {
        Command::GenSynth(a) => cmd::gen_synth(a, argv),
        Command::TrainStage1(a) => cmd::train_stage1_cmd(a, argv),
        Command::TrainStage2(a) => cmd::train_stage2_cmd(a, argv),
        Command::Predict(a) => cmd::predict_cmd(a, argv),
        Command::Evaluate(a) => cmd::evaluate_cmd(a, argv),
        Command::Analyze(AnalyzeCommand::Bins(a)) => cmd::bins_cmd(a, argv),
        Command::Analyze(AnalyzeCommand::Stats(a)) => cmd::stats_cmd(a, argv),
        Command::Analyze(AnalyzeCommand::Compare(a)) => cmd::compare_cmd(a, argv),
        Command::Llm(LlmCommand::Prompt(a)) => cmd::prompt_cmd(a),
        Command::Llm(LlmCommand::Run(a)) => cmd::llm_run_cmd(a, argv),
        Command::Llm(LlmCommand::Score(a)) => cmd::llm_score_cmd(a, argv),
        Command::Sweep(a) => sweep::sweep_cmd(a, argv),
        Command::Replay(a) => cmd::replay_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            let _ = e.print();
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
