//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation or I/O error,
//! 3 numerical failure. Failures print one line `error[<kind>]: <message>`
//! on stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_prefix, profile_firing, sweep_prefixes};
use crate::plot::{read_sweep_csv, render_svg};
use crate::train::checkpoint::Checkpoint;
use crate::train::{fit, prepare_out_dir, FitOptions, RunConfig};
use crate::verify::{gradcheck_suite, oracle_suite, CheckResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "spikecl", version, about = "Spiking neural network training with temporal contrastive objectives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
        /// Record 0 wall-clock seconds so repeated runs are byte-identical.
        #[arg(long)]
        deterministic: bool,
    },
    /// Accuracy and mean cross-entropy at T' steps.
    Eval(EvalArgs),
    /// Accuracy for every T' = 1..t.
    Sweep(EvalArgs),
    /// Per-block firing rates.
    ProfileFiring(EvalArgs),
    /// Generate a synthetic dataset from a JSON spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare engine numerics with the scalar-loop references.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plot accuracy against T' for sweep CSVs as SVG.
    Plot {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Inference steps; defaults to the training T.
    #[arg(long)]
    t: Option<usize>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

fn kind(e: &Error) -> (&'static str, i32) {
    match e {
        Error::NonFinite { .. } | Error::Numerical(_) => ("numerical", EXIT_NUMERICAL),
        Error::Io { .. } => ("io", EXIT_VALIDATION),
        Error::Format { .. } => ("format", EXIT_VALIDATION),
        Error::Config(_) => ("config", EXIT_VALIDATION),
        Error::ShapeMismatch { .. } | Error::Invalid(_) => ("validation", EXIT_VALIDATION),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {}", one_line(first));
            return EXIT_USAGE;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let (k, code) = kind(&e);
            eprintln!("error[{k}]: {}", one_line(&e.to_string()));
            code
        }
    }
}

fn emit(text: &str, out: Option<&Path>, force: bool) -> Result<()> {
    match out {
        Some(path) => {
            if path.exists() && !force {
                return Err(Error::Invalid(format!(
                    "{} exists (use --force to overwrite)",
                    path.display()
                )));
            }
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn report(suite: &str, checks: &[CheckResult]) -> i32 {
    let passed = checks.iter().filter(|c| c.passed).count();
    for c in checks {
        println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("{suite}: {passed}/{} passed", checks.len());
    if passed == checks.len() {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train {
            config,
            out,
            seed,
            force,
            deterministic,
        } => {
            let mut run = RunConfig::load(&config)?;
            if let Some(s) = seed {
                run.optim.seed = s;
            }
            let summary = fit(&run, &out, &FitOptions { force, deterministic })?;
            if let Some(last) = summary.history.last() {
                println!(
                    "trained {} epochs: final eval accuracy {:.2}%, best {:.2}%",
                    last.epoch,
                    last.eval_acc,
                    summary.best_eval_acc.unwrap_or(last.eval_acc)
                );
            } else {
                println!("no epochs run; wrote {}", summary.last.display());
            }
        }
        Command::Eval(a) => {
            let ck = Checkpoint::load(&a.ckpt)?;
            let net = ck.network()?;
            let ds = load_dataset(&a.data)?;
            let train_t = ck.meta.time_steps;
            let t = a.t.unwrap_or(train_t);
            let res = evaluate_prefix(&net, &ds, train_t.max(t), t)?;
            let csv = format!(
                "inference_t,accuracy,mean_ce,train_t\n{t},{},{},{train_t}\n",
                res.accuracy, res.mean_ce
            );
            emit(&csv, a.out.as_deref(), a.force)?;
        }
        Command::Sweep(a) => {
            let ck = Checkpoint::load(&a.ckpt)?;
            let net = ck.network()?;
            let ds = load_dataset(&a.data)?;
            let train_t = ck.meta.time_steps;
            let rep = sweep_prefixes(&net, &ds, train_t, a.t.unwrap_or(train_t))?;
            emit(&rep.to_csv(), a.out.as_deref(), a.force)?;
        }
        Command::ProfileFiring(a) => {
            let ck = Checkpoint::load(&a.ckpt)?;
            let net = ck.network()?;
            let ds = load_dataset(&a.data)?;
            let rep = profile_firing(&net, &ds, a.t.unwrap_or(ck.meta.time_steps), None)?;
            emit(&rep.to_csv(), a.out.as_deref(), a.force)?;
        }
        Command::GenData { spec, out, force } => {
            let text = fs::read_to_string(&spec).map_err(|e| Error::io(&spec, e))?;
            let spec_v: SyntheticSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", spec.display())))?;
            let ds = generate_synthetic(&spec_v)?;
            prepare_out_dir(&out, force)?;
            save_dataset(&ds, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Gradcheck { seed } => return Ok(report("gradcheck", &gradcheck_suite(seed))),
        Command::OracleCheck { seed } => return Ok(report("oracle-check", &oracle_suite(seed))),
        Command::Plot { inputs, out, force } => {
            let series = inputs
                .iter()
                .map(|p| read_sweep_csv(p))
                .collect::<Result<Vec<_>>>()?;
            emit(&render_svg(&series)?, Some(&out), force)?;
        }
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["spikecl"]), EXIT_USAGE);
        assert_eq!(run(["spikecl", "train", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["spikecl", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_config_is_validation_error() {
        assert_eq!(
            run(["spikecl", "train", "--config", "/nonexistent/missing.json", "--out", "/tmp/x"]),
            EXIT_VALIDATION
        );
    }

    #[test]
    fn error_kinds() {
        assert_eq!(kind(&Error::Numerical("nan".into())).1, EXIT_NUMERICAL);
        assert_eq!(kind(&Error::Config("x".into())).0, "config");
        assert_eq!(one_line("a\n  b"), "a b");
    }
}
