mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use commands::{EvaluateArgs, Outcome, SweepArgs};
use config::{BackendFlags, RunFlags};
use treesimp::fluency::{DEFAULT_DISCOUNT, DEFAULT_ORDER};

/// Unsupervised sentence simplification over dependency trees.
#[derive(Parser, Debug)]
#[command(name = "treesimp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a POS n-gram language model
    TrainLm {
        /// One tag sequence per line, or a .conllu file
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ORDER)]
        order: usize,
        #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
        discount: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simplify every sentence of a CoNLL-U file
    Simplify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Per-sentence JSON lines (default: <output>.jsonl)
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Score system outputs against originals and references
    Evaluate {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        sys: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        refs: Vec<PathBuf>,
        /// Skip embedding similarity
        #[arg(long)]
        no_sim: bool,
        /// Write the corpus report as JSON
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write per-instance rows as TSV
        #[arg(long)]
        instances: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendFlags,
    },
    /// Simplify over a grid of thresholds and length ratios
    Sweep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.70,0.80,0.90,0.95")]
        taus: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        lambdas: Vec<f64>,
        /// Reference files aligned with the sentences, for SARI
        #[arg(long, num_args = 1..)]
        refs: Vec<PathBuf>,
        /// Directory for one output file per grid cell
        #[arg(long)]
        outputs: Option<PathBuf>,
        /// Also write the grid to this file
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Leave-one-out token importance profile
    Analyze {
        #[arg(long)]
        input: PathBuf,
        /// Table output (default: stdout)
        #[arg(long)]
        output: Option<PathBuf>,
        /// Long-format TSV for plotting
        #[arg(long)]
        tsv: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendFlags,
    },
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::TrainLm {
            corpus,
            order,
            discount,
            out,
        } => commands::train_lm(&corpus, order, discount, &out),
        Command::Simplify {
            input,
            output,
            sidecar,
            flags,
        } => commands::simplify(&input, &output, sidecar, &flags),
        Command::Evaluate {
            orig,
            sys,
            refs,
            no_sim,
            json,
            instances,
            backend,
        } => commands::evaluate(EvaluateArgs {
            orig: &orig,
            sys: &sys,
            refs: &refs,
            no_sim,
            json: json.as_deref(),
            instances: instances.as_deref(),
            backend: &backend,
        }),
        Command::Sweep {
            input,
            taus,
            lambdas,
            refs,
            outputs,
            table,
            flags,
        } => commands::sweep(SweepArgs {
            input: &input,
            taus: &taus,
            lambdas: &lambdas,
            refs: &refs,
            outputs: outputs.as_deref(),
            table: table.as_deref(),
            flags: &flags,
        }),
        Command::Analyze {
            input,
            output,
            tsv,
            backend,
        } => commands::analyze(&input, output.as_deref(), tsv.as_deref(), &backend),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
