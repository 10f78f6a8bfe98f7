use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod benchmark;
mod commands;

/// Robust rigid registration of sparse point clouds against gradient SDFs.
#[derive(Parser, Debug)]
#[command(name = "gsreg", version, about)]
pub struct Cli {
    /// Seed for every stochastic step; overrides seeds given in spec and plan files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (1 runs everything sequentially).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    /// More log output; repeat for debug detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a gradient SDF from a mesh and write it in GSDF format.
    BuildSdf(BuildSdfArgs),
    /// Generate a synthetic trial: probe strokes, pose, noise and outliers.
    Simulate(SimulateArgs),
    /// Register a point cloud against a GSDF file.
    Register(RegisterArgs),
    /// Score a registration result against the ground truth of a trial.
    Evaluate(EvaluateArgs),
    /// Run a grid of synthetic trials from a TOML plan and write CSV tables.
    Benchmark(BenchmarkArgs),
    /// Write one of the built-in test meshes.
    GenerateMesh(GenerateMeshArgs),
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be a positive number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be a non-negative number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok([x, y, z]),
        _ => Err(format!("expected three finite numbers x,y,z, got {s:?}")),
    }
}

#[derive(Args, Debug)]
pub struct BuildSdfArgs {
    /// Mesh file (OBJ, PLY or STL).
    pub mesh: PathBuf,
    /// Output GSDF file.
    pub out: PathBuf,
    /// Voxel edge length in mm.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub voxel: f64,
    /// Margin around the mesh bounding box in mm.
    #[arg(long, default_value_t = 10.0, value_parser = non_negative)]
    pub padding: f64,
    /// Factor applied to mesh coordinates on load (1000 for meshes in metres).
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub scale: f64,
}

/// Which part of the mesh the probe may touch.
#[derive(Args, Debug, Clone, Default)]
pub struct RegionArgs {
    /// File with one face index per line.
    #[arg(long, conflicts_with_all = ["cap_center", "cap_radius"])]
    pub mask: Option<PathBuf>,
    /// Centre of a geodesic cap, as x,y,z in mm (snapped to the nearest vertex).
    #[arg(long, value_parser = point, requires = "cap_radius")]
    pub cap_center: Option<[f64; 3]>,
    /// Geodesic radius of the cap in mm.
    #[arg(long, requires = "cap_center", value_parser = positive)]
    pub cap_radius: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    pub mesh: PathBuf,
    /// Directory receiving points.csv, points.ply, clean_points.csv, landmarks.csv and manifest.json.
    pub out_dir: PathBuf,
    /// TOML experiment spec; defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[command(flatten)]
    pub region: RegionArgs,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub scale: f64,
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    /// GSDF file built by `build-sdf`.
    pub sdf: PathBuf,
    /// Point cloud (CSV, TXT or PLY) in the probe frame.
    pub points: PathBuf,
    /// Output result JSON.
    pub out: PathBuf,
    /// identity, landmarks:<pairs.csv> or matrix:<file>.
    #[arg(long, default_value = "identity")]
    pub init: String,
    /// TOML file with registration settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cauchy scale c in mm.
    #[arg(long, value_parser = positive)]
    pub cauchy_c: Option<f64>,
    /// Re-estimate c from the median residual every round.
    #[arg(long)]
    pub auto_scale: bool,
    /// Discard threshold on converged weights.
    #[arg(long)]
    pub delta: Option<f64>,
    /// IRLS stopping tolerance on the RMS weight change.
    #[arg(long, value_parser = positive)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_irls: Option<usize>,
    #[arg(long)]
    pub max_gn: Option<usize>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Initial Levenberg damping.
    #[arg(long, value_parser = positive)]
    pub lambda0: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Result JSON written by `register`.
    pub result: PathBuf,
    /// manifest.json of the trial that was registered.
    pub manifest: PathBuf,
    /// Model mesh, for the Chamfer distance.
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub scale: f64,
    /// Dense surface samples used as the Chamfer reference.
    #[arg(long, default_value_t = 200_000)]
    pub samples: usize,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// TOML plan.
    pub plan: PathBuf,
    /// Directory receiving trials.csv and summary.csv.
    pub out_dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MeshKind {
    Icosphere,
    Box,
    Bone,
}

#[derive(Args, Debug)]
pub struct GenerateMeshArgs {
    pub kind: MeshKind,
    /// Output file; the extension picks OBJ, PLY or STL.
    pub out: PathBuf,
    /// Sphere radius or cube edge length in mm.
    #[arg(long, default_value_t = 50.0, value_parser = positive)]
    pub size: f64,
    /// Refinement level.
    #[arg(long, default_value_t = 4)]
    pub subdivisions: u32,
}

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or unreadable input: exit 2.
    Input(anyhow::Error),
    /// Registration could not produce a transform: exit 3.
    Registration(anyhow::Error),
    /// Output could not be written: exit 4.
    Output(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Registration(_) => 3,
            Failure::Output(_) => 4,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Registration(e) | Failure::Output(e) => e,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs as usize).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let ctx = commands::Context::from(&cli);
    let outcome = match &cli.command {
        Command::BuildSdf(a) => commands::build_sdf(&ctx, a),
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Register(a) => commands::register(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Benchmark(a) => benchmark::run(&ctx, a),
        Command::GenerateMesh(a) => commands::generate_mesh(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
