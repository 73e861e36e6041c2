//! Scenario runner behind the `rmtq` binary.
//!
//! Every subcommand validates its parameters, computes in memory, and only
//! then writes its CSV and a JSON manifest next to it. Errors are reported on
//! one stderr line of the form `rmtq: error kind=<kind> exit=<code>: <msg>`.

mod args;
mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::io::Write;

use clap::{CommandFactory, FromArgMatches};

pub use args::Cli;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] rmtq::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                rmtq::ErrorKind::Validation => 2,
                rmtq::ErrorKind::Numerical => 3,
                rmtq::ErrorKind::Resource => 4,
                rmtq::ErrorKind::Io => 1,
            },
            CliError::Usage(_) => 2,
            CliError::Io(_) => 1,
        }
    }

    pub fn kind_label(&self) -> &'static str {
        match self {
            CliError::Core(e) => match e.kind() {
                rmtq::ErrorKind::Validation => "validation",
                rmtq::ErrorKind::Numerical => "numerical",
                rmtq::ErrorKind::Resource => "resource",
                rmtq::ErrorKind::Io => "io",
            },
            CliError::Usage(_) => "validation",
            CliError::Io(_) => "io",
        }
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn command() -> clap::Command {
    Cli::command().mut_subcommands(|s| s.allow_negative_numbers(true))
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let result = config::merge(args).and_then(|args| {
        let matches = match command().try_get_matches_from(args) {
            Ok(m) => m,
            Err(e) => return Ok(Err(e)),
        };
        let cli = Cli::from_arg_matches(&matches).map_err(|e| usage(e.to_string()))?;
        Ok(Ok(cli))
    });
    let cli = match result {
        Ok(Ok(cli)) => cli,
        Ok(Err(e)) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
        Err(e) => return report(&e, err),
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => report(&e, err),
    }
}

fn report(e: &CliError, err: &mut dyn Write) -> i32 {
    let code = e.exit_code();
    let msg = e.to_string().replace(['\n', '\r'], " ");
    let _ = writeln!(err, "rmtq: error kind={} exit={code}: {msg}", e.kind_label());
    code
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let threads = match cli.threads {
        Some(0) => return Err(usage("--threads must be at least 1")),
        Some(k) => {
            // a second call in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            k
        }
        None => rayon::current_num_threads(),
    };
    commands::dispatch(&cli.command, threads, out)
}
