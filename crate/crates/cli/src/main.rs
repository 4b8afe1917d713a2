//! `fsl` — command-line driver for the few-shot imbalance laboratory.
//!
//! Exit codes: 0 success, 1 usage/config errors, 2 data or capacity errors,
//! 3 numeric failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fsl_core::Error;

use crate::config::Experiment;

#[derive(Parser)]
#[command(name = "fsl", about = "Few-shot learning laboratory with controlled class imbalance", version)]
struct Cli {
    /// Worker threads for matrix cells (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic pool and write manifests for the
    /// full pool and each split.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Subsample a manifest according to an imbalance spec, or step one
    /// class group down to k_min with --group.
    Induce {
        #[arg(long)]
        manifest: PathBuf,
        /// Imbalance spec, e.g. "linear(30,570,64)" or "step(25,444,64,22)".
        #[arg(long, conflicts_with_all = ["group", "k_min", "k_max"])]
        spec: Option<String>,
        /// Group tag whose classes are subsampled to k_min (all others get
        /// k_max); requires --k-min and --k-max.
        #[arg(long, requires = "k_min", requires = "k_max")]
        group: Option<String>,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        /// Seed for profile-to-class assignment (ignored with --group).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output manifest path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one learner under one condition for every configured seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        learner: String,
        #[arg(long)]
        condition: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the configured test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full learner x condition x seed matrix.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a results directory (expects results.csv).
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Output directory (default: the results directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::Parse { .. } => 1,
        Error::Capacity { .. } | Error::Io(_) => 2,
        Error::Dimension { .. } | Error::Contract(_) | Error::Numeric(_) => 3,
    }
}

fn out_dir(explicit: Option<PathBuf>, exp: &Experiment) -> PathBuf {
    explicit
        .or_else(|| exp.file.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(jobs) = cli.jobs {
        // Ignore the error when a global pool already exists (e.g. tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    }
    match cli.command {
        Command::Gen { config, out } => {
            let exp = Experiment::load(&config)?;
            let out = out_dir(out, &exp);
            commands::cmd_gen(&exp, &out)
        }
        Command::Induce { manifest, spec, group, k_min, k_max, seed, out } => match (spec, group) {
            (Some(spec), None) => commands::cmd_induce(&manifest, &spec, seed, &out),
            (None, Some(group)) => commands::cmd_induce_group(
                &manifest,
                &group,
                k_min.expect("clap requires"),
                k_max.expect("clap requires"),
                &out,
            ),
            _ => Err(Error::InvalidInput("induce needs exactly one of --spec or --group".into())),
        },
        Command::Train { config, learner, condition, out } => {
            let exp = Experiment::load(&config)?;
            let out = out_dir(out, &exp);
            commands::cmd_train(&exp, &learner, &condition, &out)
        }
        Command::Eval { config, checkpoint, out } => {
            let exp = Experiment::load(&config)?;
            let out = out_dir(out, &exp);
            commands::cmd_eval(&exp, &checkpoint, &out)
        }
        Command::Matrix { config, out } => {
            let exp = Experiment::load(&config)?;
            let out = out_dir(out, &exp);
            commands::cmd_matrix(&exp, &out)
        }
        Command::Report { results, out } => {
            let out = out.unwrap_or_else(|| results.clone());
            commands::cmd_report(&results, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; everything else is usage.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
