use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cvdespeck_cli::{self as cli, CliError, EvalInputs};

#[derive(Parser, Debug)]
#[command(name = "cvdespeck", version, about = "Complex-valued despeckling of dual-pol SAR covariance matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (key = value); defaults to the built-in desk protocol.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scene, its noisy realizations and the reference.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a simulated container and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Container written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        /// History table path (default: <out>.history.csv).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Despeckle one field with a checkpoint.
    Despeckle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Field record to despeckle (default: last noisy_* record).
        #[arg(long)]
        record: Option<String>,
    },
    /// Compute the metric report of an estimate.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long, default_value = "estimated")]
        estimate_record: String,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value = "clean")]
        reference_record: String,
        #[arg(long)]
        noisy: PathBuf,
        #[arg(long)]
        noisy_record: Option<String>,
        /// Container with masks/* records (default: the reference container).
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, default_value = "estimate")]
        method: String,
    },
    /// Write a false-color PNG of one field record.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        record: String,
    },
}

fn run(cmd: Command) -> Result<(), CliError> {
    cli::init_threads()?;
    match cmd {
        Command::Simulate { common } => {
            let cfg = cli::load_config(common.config.as_deref(), common.seed)?;
            cli::simulate(&cfg, &common.out)?;
            if !common.quiet {
                println!("wrote {}", common.out.display());
            }
        }
        Command::Train { common, data, history } => {
            let cfg = cli::load_config(common.config.as_deref(), common.seed)?;
            let history = history.unwrap_or_else(|| common.out.with_extension("history.csv"));
            let r = cli::train(&cfg, &data, &common.out, &history, common.quiet)?;
            if !common.quiet {
                println!("{} steps; wrote {} and {}", r.steps, common.out.display(), history.display());
            }
        }
        Command::Despeckle { common, checkpoint, input, record } => {
            cli::despeckle(&checkpoint, &input, record.as_deref(), &common.out)?;
            if !common.quiet {
                println!("wrote {}", common.out.display());
            }
        }
        Command::Evaluate {
            common,
            estimate,
            estimate_record,
            reference,
            reference_record,
            noisy,
            noisy_record,
            masks,
            method,
        } => {
            let inputs = EvalInputs {
                estimate: &estimate,
                estimate_record: &estimate_record,
                reference: &reference,
                reference_record: &reference_record,
                noisy: &noisy,
                noisy_record: noisy_record.as_deref(),
                masks: masks.as_deref(),
                method: &method,
            };
            let report = cli::evaluate(&inputs, &common.out)?;
            if !common.quiet {
                print!("{}", report.to_text());
            }
        }
        Command::Render { common, input, record } => {
            cli::render(&input, &record, &common.out)?;
            if !common.quiet {
                println!("wrote {}", common.out.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
