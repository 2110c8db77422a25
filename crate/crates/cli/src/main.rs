//! `labelfuse`: synthetic fixtures, mask tracking, labeled MVS fusion, RGBD
//! reconstruction, evaluation and PLY export.

mod commands;
mod failure;
mod layout;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use labelfuse::io::PlyFormat;

#[derive(Parser, Debug)]
#[command(
    name = "labelfuse",
    version,
    about = "Label-carrying 3D reconstruction from masked image sequences"
)]
struct Cli {
    /// Worker threads for the parallel stages (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// RNG seed; overrides the seed in any config file.
    #[arg(long, global = true, env = "LABELFUSE_SEED")]
    seed: Option<u64>,
    /// Only report warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render color, depth, mask and normal frames of a scene along its orbit,
    /// with the camera poses as an SfM text model.
    Synth(SynthArgs),
    /// Propagate seed masks through an image sequence.
    Track(TrackArgs),
    /// Fuse per-view depth maps into a labeled point cloud.
    FuseMvs(FuseMvsArgs),
    /// Odometry, fragment registration and TSDF integration of an RGBD
    /// sequence with masks.
    ReconRgbd(ReconArgs),
    /// Score a labeled PLY against a scene description.
    Eval(EvalArgs),
    /// Convert a labeled PLY between encodings, optionally dropping
    /// unlabeled points.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Encoding {
    Ascii,
    #[default]
    Binary,
}

impl From<Encoding> for PlyFormat {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Ascii => PlyFormat::Ascii,
            Encoding::Binary => PlyFormat::BinaryLittleEndian,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Extract {
    Cloud,
    Mesh,
    Voxel,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// Scene description file.
    #[arg(long)]
    scene: PathBuf,
    /// Number of frames along the orbit.
    #[arg(long)]
    frames: usize,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrackArgs {
    /// Directory of color frames.
    #[arg(long)]
    images: PathBuf,
    /// Directory of seed masks named `<frame>.mask.png`; the first frame
    /// must have one.
    #[arg(long)]
    seeds: PathBuf,
    /// Output directory for one mask per frame.
    #[arg(long)]
    out: PathBuf,
    /// Run configuration (tracker keys).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FuseMvsArgs {
    /// Directory with `cameras.txt` and `images.txt`.
    #[arg(long)]
    model: PathBuf,
    /// Directory of `<frame>.depth.png` rasters.
    #[arg(long)]
    depth: PathBuf,
    /// Directory of `<frame>.normal.png` rasters; normal checks are skipped
    /// without it.
    #[arg(long)]
    normals: Option<PathBuf>,
    /// Directory of `<frame>.mask.png` rasters.
    #[arg(long)]
    masks: PathBuf,
    /// Directory of color frames (default: the model directory).
    #[arg(long)]
    images: Option<PathBuf>,
    /// Use every `stride`-th view, in image-id order.
    #[arg(long)]
    stride: Option<usize>,
    /// Output PLY.
    #[arg(long)]
    out: PathBuf,
    /// Keep points that received no label.
    #[arg(long)]
    keep_unlabeled: bool,
    #[arg(long, value_enum, default_value_t)]
    format: Encoding,
    /// Run configuration (fusion keys).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReconArgs {
    /// Directory of color and depth frames with `cameras.txt`; frame order
    /// and the world frame come from `images.txt` when present.
    #[arg(long)]
    frames: PathBuf,
    /// Directory of `<frame>.mask.png` rasters.
    #[arg(long)]
    masks: PathBuf,
    /// Run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output prefix: writes `<prefix>_poses.txt` and `<prefix>_<kind>.ply`.
    #[arg(long)]
    out: PathBuf,
    /// TSDF voxel edge in meters (overrides the config).
    #[arg(long)]
    voxel_size: Option<f64>,
    /// TSDF truncation distance in meters (default: four voxels).
    #[arg(long)]
    truncation: Option<f64>,
    /// Products to extract from the volume; repeatable.
    #[arg(long, value_enum, default_values_t = [Extract::Mesh])]
    extract: Vec<Extract>,
    #[arg(long, value_enum, default_value_t)]
    format: Encoding,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Labeled PLY (cloud or mesh) to score.
    #[arg(long)]
    pred: PathBuf,
    /// Scene description file.
    #[arg(long)]
    scene: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ExportArgs {
    /// Labeled PLY to read.
    #[arg(long)]
    input: PathBuf,
    /// PLY to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    format: Encoding,
    /// Drop points with label 0 (and the faces that use them).
    #[arg(long)]
    keep_labeled: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("labelfuse: module=cli operation=\"thread pool\" cause=\"{e}\"");
            return ExitCode::FAILURE;
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a, cli.seed),
        Command::Track(a) => commands::track(a),
        Command::FuseMvs(a) => commands::fuse_mvs(a),
        Command::ReconRgbd(a) => commands::recon_rgbd(a, cli.seed),
        Command::Eval(a) => commands::eval(a),
        Command::Export(a) => commands::export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("labelfuse: {e}");
            let mut cause = std::error::Error::source(&e.source);
            while let Some(c) = cause {
                eprintln!("  caused by: {c}");
                cause = c.source();
            }
            ExitCode::FAILURE
        }
    }
}
