use clap::{Parser, Subcommand};
use pixelbox::commands::{
    cmd_compare, cmd_dump_sample, cmd_eval, cmd_gradcheck, cmd_scale_sweep, cmd_train,
    CommandError,
};
use pixelbox::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pixelbox", version, about = "Pixel-wise box regression testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify analytic gradients against central differences
    Gradcheck {
        /// Random (prediction, target) pairs for the loss check
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Maximum allowed relative error
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Write per-check results to this CSV file
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train a model per a TOML run config
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a trained checkpoint on held-out scenes
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Override the scene count from the checkpoint's config
        #[arg(long)]
        scenes: Option<usize>,
        /// Override the evaluation stream seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Race both box losses under the fair selection protocol
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Probe trained models on rescaled versions of a test scene
    ScaleSweep {
        #[arg(long)]
        iou_checkpoint: PathBuf,
        #[arg(long)]
        l2_checkpoint: PathBuf,
        /// Scale factors, comma separated
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 4.0])]
        factors: Vec<f64>,
        #[arg(long, default_value = "scale_sweep.csv")]
        out: PathBuf,
    },
    /// Write one training sample (image and targets) as PGM files
    DumpSample {
        /// Run config; omit to use defaults
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long, default_value = "dump")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool, CommandError> {
    match cli.command {
        Command::Gradcheck { samples, seed, tol, csv } => {
            cmd_gradcheck(samples, seed, tol, csv.as_deref())
        }
        Command::Train { config, quiet } => {
            cmd_train(&config, quiet)?;
            Ok(true)
        }
        Command::Eval { checkpoint, scenes, seed, threads, csv } => {
            cmd_eval(&checkpoint, scenes, seed, threads, csv.as_deref())?;
            Ok(true)
        }
        Command::Compare { config, quiet } => {
            let cfg = RunConfig::load(&config)?;
            cmd_compare(&cfg, quiet)?;
            Ok(true)
        }
        Command::ScaleSweep { iou_checkpoint, l2_checkpoint, factors, out } => {
            cmd_scale_sweep(&iou_checkpoint, &l2_checkpoint, &factors, &out)?;
            Ok(true)
        }
        Command::DumpSample { config, index, out } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            cmd_dump_sample(&cfg, index, &out)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ CommandError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
