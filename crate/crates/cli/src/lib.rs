//! Command-line front end for `hardwall-core`.
//!
//! Every subcommand renders one table whose header embeds the full run
//! configuration and its content hash; `verify` runs the acceptance suite.

pub mod commands;
pub mod output;
pub mod range;
pub mod verify;

use std::io::Write;

use hardwall_core::HardwallError;
use serde_json::Value;
use thiserror::Error;

pub use commands::{Cli, Command};
pub use output::Format;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Acceptance(_) => 3,
        }
    }
}

impl From<HardwallError> for CliError {
    fn from(e: HardwallError) -> Self {
        match e {
            HardwallError::InvalidArgument(_)
            | HardwallError::GridMismatch(_)
            | HardwallError::OutOfGrid { .. }
            | HardwallError::Precondition(_) => CliError::Validation(e.to_string()),
            HardwallError::Numerical(_) | HardwallError::NoConvergence { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

/// What a run produced: the file contents, and for `verify` the failure to
/// report once the file is written.
pub struct Rendered {
    pub bytes: Vec<u8>,
    pub failure: Option<CliError>,
}

pub fn config_of(cli: &Cli) -> Value {
    serde_json::to_value(cli).expect("config serialises")
}

/// Compute a command's output without writing it anywhere.
pub fn render(cli: &Cli) -> Result<Rendered, CliError> {
    let config = config_of(cli);
    let format = cli.command.format();
    let table = match &cli.command {
        Command::Tails(a) => commands::tails(a)?,
        Command::Theta(a) => commands::theta(a)?,
        Command::Profile(a) => commands::profile(a)?,
        Command::Covariance(a) => commands::covariance(a)?,
        Command::Kernel(a) => commands::kernel(a)?,
        Command::Tv(a) => commands::tv(a)?,
        Command::FreeEnergy(a) => commands::free_energy(a)?,
        Command::Sample(a) => commands::sample(a)?,
        Command::Verify(a) => {
            let selection = verify::select(a.only.as_deref())?;
            let results = verify::run(&selection, a.common.seed, |r| eprintln!("{}", r.summary_line()));
            let failed = results.iter().filter(|r| !r.passed).count();
            let bytes = verify::report(&results, &config, format)?;
            let failure = (failed > 0).then(|| CliError::Acceptance(format!("{failed} of {} criteria failed", results.len())));
            return Ok(Rendered { bytes, failure });
        }
    };
    Ok(Rendered { bytes: output::render(&table, &config, format)?, failure: None })
}

/// Render and write to `--out` (atomically) or stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    // Fail before computing, not after.
    if let Some(dir) = cli.command.common().out.as_ref().and_then(|p| p.parent()) {
        if !dir.as_os_str().is_empty() && !dir.is_dir() {
            return Err(CliError::Validation(format!("--out: directory {} does not exist", dir.display())));
        }
    }
    let r = render(cli)?;
    match &cli.command.common().out {
        Some(path) => output::write_atomic(path, &r.bytes)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(&r.bytes).and_then(|_| out.flush()).map_err(|e| CliError::Validation(format!("stdout: {e}")))?;
        }
    }
    r.failure.map_or(Ok(()), Err)
}
