//! `affordgen`: dataset generation, training, latent arithmetic, affordance
//! tests, export and serving from the command line.
//!
//! Exit status is 0 on success, 1 on a domain error and 2 on a usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "affordgen", version, about = "Functionality-driven voxel shape generation")]
pub struct Cli {
    /// TOML run configuration; defaults to $AFFORDGEN_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a labeled shape corpus.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the shape model on a corpus's training split.
    Train(TrainArgs),
    /// Encode a binvox grid into a latent code (JSON).
    Encode(EncodeArgs),
    /// Compute, decode and save the essence of one class.
    Essence(ClassArgs),
    /// Importance vector of a class essence.
    Importance(ClassArgs),
    /// Merge the essences of two classes.
    Combine(CombineArgs),
    /// Encode and decode a grid, reporting the IoU.
    Reconstruct(ReconstructArgs),
    /// Run a geometric affordance test on a binvox grid.
    #[command(subcommand)]
    AffordTest(AffordCommand),
    /// Surface mesh (OBJ) and optional SDF model of a binvox grid.
    ExportMesh(ExportArgs),
    /// Generate an object providing the requested affordances.
    Request(RequestArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Subcommand, Debug)]
pub enum DatasetCommand {
    /// Procedurally generate the registered classes.
    Gen(GenArgs),
    /// Voxelize a directory of OFF meshes, one subdirectory per class.
    Ingest(IngestArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CorpusLayout {
    /// Grid edge in voxels.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of each class kept for training; the rest is held out.
    #[arg(long, conflicts_with = "no_split")]
    pub train_fraction: Option<f64>,
    /// Keep every shape in the training split.
    #[arg(long)]
    pub no_split: bool,
    /// Skip the 90/180/270 degree rotated copies.
    #[arg(long)]
    pub no_augment: bool,
    /// TOML file with `[[class]]` entries replacing the built-in classes.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Output corpus directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub layout: CorpusLayout,
    /// Shapes per class before augmentation.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub layout: CorpusLayout,
    /// Directory with one subdirectory of OFF files per class.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelPaths {
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Corpus directory.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub paths: ModelPaths,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Seeds both initialization and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file receiving the epoch history and held-out IoU.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// binvox grid to encode.
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClassArgs {
    /// Class label.
    pub class: String,
    #[command(flatten)]
    pub paths: ModelPaths,
    /// Output directory (essence) or JSON file (importance; stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct AffordFlags {
    /// Probe cube edge in meters.
    #[arg(long)]
    pub probe_side: Option<f64>,
    /// Largest accepted height step under the probe, in voxels.
    #[arg(long)]
    pub flatness_tol: Option<u32>,
    /// Sphere radius in meters; a sixteenth of the grid edge by default.
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CombineArgs {
    #[arg(long)]
    pub base: String,
    #[arg(long)]
    pub top: String,
    #[arg(long)]
    pub base_percent: f64,
    #[arg(long)]
    pub top_percent: f64,
    #[command(flatten)]
    pub paths: ModelPaths,
    #[command(flatten)]
    pub afford: AffordFlags,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    /// Output binvox.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum AffordCommand {
    /// Map of positions where a cube rests stably.
    Support(SupportArgs),
    /// Fill with spheres and report the contained volume ratio.
    Contain(ContainArgs),
}

#[derive(Args, Debug)]
pub struct SupportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub probe_side: Option<f64>,
    #[arg(long)]
    pub flatness_tol: Option<u32>,
    /// Also write the map as a PGM image.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Output JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ContainArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Output JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output OBJ.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write an SDF model (with its OBJ sidecar) to this file.
    #[arg(long)]
    pub sdf: Option<PathBuf>,
    /// Mass in kilograms for the SDF inertial block.
    #[arg(long, default_value_t = 1.0)]
    pub mass: f64,
    #[arg(long, default_value = "generated_object")]
    pub name: String,
}

#[derive(Args, Debug)]
pub struct RequestArgs {
    /// Two comma-separated affordances: the base's first, then the top's.
    #[arg(long, value_delimiter = ',', required = true)]
    pub affordances: Vec<String>,
    /// Base class when the first affordance maps to several classes.
    #[arg(long)]
    pub base: Option<String>,
    /// Top class when the second affordance maps to several classes.
    #[arg(long)]
    pub top: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub base_percent: f64,
    #[arg(long, default_value_t = 0.5)]
    pub top_percent: f64,
    #[command(flatten)]
    pub paths: ModelPaths,
    #[command(flatten)]
    pub afford: AffordFlags,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub paths: ModelPaths,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long, env = "AFFORDGEN_PORT")]
    pub port: Option<u16>,
}

/// The invocation itself was wrong.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
