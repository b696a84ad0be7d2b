use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use htbo_core::harness::config::{ExperimentConfig, Overrides};
use htbo_core::harness::runner::{run_experiment, write_csv, write_outputs};
use htbo_core::harness::{audit, ks_from_csv};
use htbo_core::policies::PolicyKind;
use htbo_core::Error;

#[derive(Parser)]
#[command(name = "htbo", version, about = "Bandit optimization under heavy-tailed rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write trials.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// gp-ucb, tgp-ucb, ata-qff or ata-nystrom
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long = "T", visible_alias = "horizon")]
        horizon: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; without it the CSV goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the invariant checks and print a report.
    Audit {
        #[arg(long)]
        config: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Kolmogorov-Smirnov normality test on one CSV column.
    Ks {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        column: String,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::TrialsAborted { .. } => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run {
            config,
            policy,
            horizon,
            trials,
            seed,
            out,
            workers,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.apply(&Overrides {
                policy,
                horizon,
                trials,
                seed,
                output: out,
                workers,
            });
            let result = run_experiment(&cfg)?;
            let s = &result.summary;
            match &cfg.output {
                Some(dir) => {
                    let (csv, json) = write_outputs(&result, dir)?;
                    eprintln!("wrote {} and {}", csv.display(), json.display());
                }
                None => {
                    let stdout = io::stdout();
                    write_csv(&result.trials, stdout.lock())?;
                }
            }
            eprintln!(
                "{}: T = {}, {} trials ({} aborted), final R_T/T = {:.5} +- {:.5}",
                s.policy,
                s.horizon,
                s.trials,
                s.aborted,
                s.final_mean_time_average_regret,
                s.final_std_time_average_regret
            );
            Ok(0)
        }
        Command::Audit { config, json } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = audit(&cfg)?;
            let mut out = io::stdout().lock();
            if json {
                serde_json::to_writer_pretty(&mut out, &report)?;
                writeln!(out)?;
            } else {
                for e in &report.entries {
                    writeln!(
                        out,
                        "{} {:<28} measured {:<12.6e} threshold {:<12.6e} {}",
                        if e.passed { "PASS" } else { "FAIL" },
                        e.name,
                        e.measured,
                        e.threshold,
                        e.detail
                    )?;
                }
            }
            Ok(if report.all_passed() { 0 } else { 2 })
        }
        Command::Ks { input, column } => {
            let file = File::open(&input).map_err(|e| Error::Input(format!("cannot open {}: {e}", input.display())))?;
            let r = ks_from_csv(BufReader::new(file), &column)?;
            println!("n = {}  D = {:.6}  p = {:.6}", r.n, r.statistic, r.p_value);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
