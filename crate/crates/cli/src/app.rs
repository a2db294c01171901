//! Argument parsing and dispatch for the `stgf` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use stgf_core::check::CheckConfig;

use crate::commands::{cmd_bench, cmd_check, cmd_equilibrium, cmd_run, RunOptions};
use crate::config::{ControllerType, RunConfig};
use crate::CliError;

#[derive(Parser)]
#[command(
    name = "stgf",
    version,
    about = "Safe trajectory gradient flow inverter control"
)]
struct Cli {
    /// Omit the timestamp comment line and write zero solve times, so the
    /// CSV depends on the configuration only.
    #[arg(long, global = true)]
    no_timestamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Stgf,
    Droop,
    OpenLoop,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the time series as CSV.
    Run {
        /// TOML configuration; defaults apply when omitted.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Output CSV path.
        #[arg(short, long, default_value = "run.csv")]
        output: PathBuf,
        /// Override `ctrl.type`.
        #[arg(long, value_enum)]
        controller: Option<Kind>,
    },
    /// Solve for the optimal steady state of the final references.
    Equilibrium {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Per-cycle controller timing for STGF (warm and cold) and droop.
    Bench {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long, default_value_t = 5)]
        repetitions: usize,
    },
    /// Run the derivative, QP, form-equivalence and feasibility suites.
    Check {
        #[arg(long, default_value_t = CheckConfig::default().seed)]
        seed: u64,
    },
}

fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch<W: Write>(cli: Cli, out: &mut W) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            output,
            controller,
        } => {
            let cfg = load(config.as_deref())?;
            let kind = controller.map(|k| match k {
                Kind::Stgf => ControllerType::Stgf,
                Kind::Droop => ControllerType::Droop,
                Kind::OpenLoop => ControllerType::OpenLoop,
            });
            let opts = RunOptions {
                timestamp: !cli.no_timestamp,
            };
            cmd_run(&cfg, kind, &output, opts, out)?;
        }
        Command::Equilibrium { config } => {
            cmd_equilibrium(&load(config.as_deref())?, out)?;
        }
        Command::Bench {
            config,
            repetitions,
        } => {
            cmd_bench(&load(config.as_deref())?, repetitions, out)?;
        }
        Command::Check { seed } => {
            let cfg = CheckConfig {
                seed,
                ..CheckConfig::default()
            };
            cmd_check(&cfg, out)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Parse `args` (including the program name), run the command writing its
/// report to `out`, and return the process exit code.
pub fn run<I, T, W>(args: I, out: &mut W, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("stgf").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn equilibrium_defaults_report_active_limit() {
        let (code, out, _) = call(&["equilibrium"]);
        assert_eq!(code, 0);
        assert!(out.contains("constraint active       yes"), "{out}");
    }

    #[test]
    fn malformed_config_exits_2_naming_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, "[plant]\nl_pu = 0.02\nbogus_key = 1\n").unwrap();
        let (code, _, err) = call(&["equilibrium", "-c", p.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert!(err.contains("bogus_key"), "{err}");
        let (code, _, _) = call(&["run", "-c", "/nonexistent/x.toml"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn unwritable_output_is_a_runtime_failure() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.toml");
        std::fs::write(&p, "[sim]\nn_steps = 3\n[scenario]\nsteps = []\n").unwrap();
        let (code, _, err) = call(&[
            "run",
            "-c",
            p.to_str().unwrap(),
            "-o",
            "/nonexistent/dir/x.csv",
        ]);
        assert_eq!(code, 1, "{err}");
    }

    #[test]
    fn bad_arguments_exit_2() {
        assert_eq!(call(&["frobnicate"]).0, 2);
        assert_eq!(call(&["bench", "-r", "0"]).0, 2);
        assert_eq!(call(&["--help"]).0, 0);
    }
}
