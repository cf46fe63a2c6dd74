use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mimo_sense::experiment::{
    cmd_control, cmd_featurize, cmd_simulate, cmd_sweep_antennas, cmd_train_eval, dataset_dir, features_dir,
    ExperimentManifest,
};
use mimo_sense::{Error, Result};

#[derive(Parser)]
#[command(name = "mimo-sense", version, about = "Activity sensing from simulated massive-MIMO channel tensors")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Overrides the manifest's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the simulation, ALS and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the labelled record set.
    Simulate,
    /// Interpolate, window and extract CP features from a dataset.
    Featurize {
        /// Dataset directory; defaults to the one the manifest describes.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Keep only the first N antennas.
        #[arg(long)]
        antennas: Option<usize>,
    },
    /// Split, train and evaluate the classifier on a feature directory.
    TrainEval {
        /// Feature directory; defaults to the one the manifest describes.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        antennas: Option<usize>,
    },
    /// Accuracy against the number of antennas kept.
    SweepAntennas {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Early/late leakage check per activity.
    Control {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

fn load_manifest(c: &Common) -> Result<ExperimentManifest> {
    let path = c.manifest.as_ref().ok_or_else(|| Error::Config("--manifest is required".into()))?;
    let mut m = ExperimentManifest::load(path)?;
    if let Some(out) = &c.out {
        m.output_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        m.sim.seed = seed;
        m.als.seed = seed;
        m.train.seed = seed;
    }
    m.validate()?;
    Ok(m)
}

fn run(cli: Cli) -> Result<PathBuf> {
    if let Some(n) = cli.common.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let m = load_manifest(&cli.common)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&m),
        Command::Featurize { dataset, antennas } => {
            let dataset = dataset.map_or_else(|| dataset_dir(&m), Ok)?;
            cmd_featurize(&dataset, &m, antennas)
        }
        Command::TrainEval { features, antennas } => {
            let features = features.map_or_else(|| features_dir(&m, antennas), Ok)?;
            cmd_train_eval(&features, &m)
        }
        Command::SweepAntennas { dataset } => cmd_sweep_antennas(&dataset.map_or_else(|| dataset_dir(&m), Ok)?, &m),
        Command::Control { dataset } => cmd_control(&dataset.map_or_else(|| dataset_dir(&m), Ok)?, &m),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
