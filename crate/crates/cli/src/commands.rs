use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use anyhow::anyhow;
use gsreg::experiment::{discard_stats, evaluate as score, ModelSurface};
use gsreg::geometry::umeyama_align;
use gsreg::io::{self, ResultDocument};
use gsreg::mesh::{bone_like, box_mesh, icosphere};
use gsreg::simulate::{make_trial, ExperimentSpec, RegionMask};
use gsreg::{build_gradient_sdf, robust_register, BuildOptions, Execution, GradientSdf, RegistrationError, RigidTransform, RobustConfig, TriangleMesh, Vec3};
use log::{info, warn};
use serde::de::DeserializeOwned;

use crate::{BuildSdfArgs, Cli, EvaluateArgs, Failure, GenerateMeshArgs, MeshKind, RegionArgs, RegisterArgs, SimulateArgs};

pub type Outcome = Result<(), Failure>;

/// Settings shared by all subcommands.
pub struct Context {
    pub seed: Option<u64>,
    pub execution: Execution,
}

impl From<&Cli> for Context {
    fn from(cli: &Cli) -> Self {
        Self {
            seed: cli.seed,
            execution: if cli.jobs == Some(1) { Execution::Sequential } else { Execution::Parallel },
        }
    }
}

pub fn input<E: Into<anyhow::Error>>(what: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Input(e.into().context(what.to_string()))
}

pub fn output<E: Into<anyhow::Error>>(what: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Output(e.into().context(what.to_string()))
}

pub fn load_mesh(path: &Path, scale: f64) -> Result<TriangleMesh, Failure> {
    let loaded = io::load_mesh(path).map_err(input("loading mesh"))?;
    if loaded.dropped_faces > 0 {
        warn!("{}: dropped {} degenerate faces", path.display(), loaded.dropped_faces);
    }
    Ok(if scale == 1.0 { loaded.mesh } else { loaded.mesh.scaled(scale) })
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(input(format!("reading {}", path.display())))?;
    toml::from_str(&text).map_err(input(format!("parsing {}", path.display())))
}

pub fn load_sdf(path: &Path) -> Result<GradientSdf, Failure> {
    let file = File::open(path).map_err(input(format!("opening {}", path.display())))?;
    GradientSdf::deserialize(BufReader::new(file)).map_err(input(format!("reading GSDF {}", path.display())))
}

pub fn region(mesh: &TriangleMesh, args: &RegionArgs, base: &Path) -> Result<RegionMask, Failure> {
    if let Some(mask) = &args.mask {
        let path = base.join(mask);
        let text = fs::read_to_string(&path).map_err(input(format!("reading mask {}", path.display())))?;
        return RegionMask::parse(&text, mesh).map_err(input(format!("mask {}", path.display())));
    }
    match (&args.cap_center, args.cap_radius) {
        (Some(c), Some(radius)) => {
            let centre = RegionMask::nearest_vertex(mesh, &Vec3::new(c[0], c[1], c[2]));
            RegionMask::spherical_cap(mesh, centre, radius).map_err(input("cap region"))
        }
        _ => Ok(RegionMask::whole(mesh)),
    }
}

pub fn build_sdf(ctx: &Context, a: &BuildSdfArgs) -> Outcome {
    let mesh = load_mesh(&a.mesh, a.scale)?;
    let opts = BuildOptions {
        voxel_size: a.voxel,
        padding: a.padding,
        execution: ctx.execution,
        ..Default::default()
    };
    let start = Instant::now();
    let (sdf, report) = build_gradient_sdf(&mesh, &opts).map_err(input("building SDF"))?;
    let secs = start.elapsed().as_secs_f64();
    for w in &report.warnings {
        warn!("{w:?}");
    }
    let file = File::create(&a.out).map_err(output(format!("creating {}", a.out.display())))?;
    sdf.serialize(BufWriter::new(file)).map_err(output("writing result"))?;
    println!(
        "dims {} x {} x {}, voxel {} mm, built in {secs:.3} s",
        sdf.dims[0], sdf.dims[1], sdf.dims[2], sdf.voxel_size
    );
    Ok(())
}

pub fn simulate(ctx: &Context, a: &SimulateArgs) -> Outcome {
    let mesh = load_mesh(&a.mesh, a.scale)?;
    let mut spec: ExperimentSpec = match &a.spec {
        Some(p) => load_toml(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    let mask = region(&mesh, &a.region, Path::new(""))?;
    let trial = make_trial(&mesh, &mask, &spec).map_err(input("generating trial"))?;
    let manifest = io::write_trial(&a.out_dir, &trial, &spec).map_err(output("writing trial"))?;
    println!(
        "{} inliers, {} outliers (ratio {:.3}), seed {}, written to {}",
        manifest.n_inliers,
        manifest.n_outliers,
        manifest.achieved_ratio,
        spec.seed,
        a.out_dir.display()
    );
    Ok(())
}

fn initial_transform(init: &str) -> Result<RigidTransform, Failure> {
    let (kind, arg) = init.split_once(':').unwrap_or((init, ""));
    match (kind, arg) {
        ("identity", "") => Ok(RigidTransform::identity()),
        ("matrix", path) if !path.is_empty() => {
            io::load_transform(Path::new(path)).map_err(input("reading initial transform"))
        }
        ("landmarks", path) if !path.is_empty() => {
            let pairs = io::load_landmark_pairs(Path::new(path)).map_err(input("reading landmarks"))?;
            if pairs.model.len() < 3 {
                return Err(Failure::Input(anyhow!("{path}: need at least 3 landmark pairs, found {}", pairs.model.len())));
            }
            umeyama_align(&pairs.probe, &pairs.model).map_err(input(format!("aligning landmarks from {path}")))
        }
        _ => Err(Failure::Input(anyhow!(
            "--init must be identity, landmarks:<file> or matrix:<file>, got {init:?}"
        ))),
    }
}

pub fn register(ctx: &Context, a: &RegisterArgs) -> Outcome {
    let mut config: RobustConfig = match &a.config {
        Some(p) => load_toml(p)?,
        None => RobustConfig::default(),
    };
    config.execution = ctx.execution;
    if let Some(c) = a.cauchy_c {
        config.cauchy_c = c;
    }
    config.auto_scale |= a.auto_scale;
    if let Some(d) = a.delta {
        config.outlier_delta = d;
    }
    if let Some(e) = a.eps {
        config.weight_eps = e;
    }
    if let Some(n) = a.max_irls {
        config.max_irls_iters = n;
    }
    if let Some(n) = a.max_gn {
        config.max_gn_iters = n;
    }
    if let Some(n) = a.max_outer {
        config.max_outer_rounds = n;
    }
    if let Some(l) = a.lambda0 {
        config.lm_lambda0 = l;
    }
    config.validate().map_err(input("registration settings"))?;

    let sdf = load_sdf(&a.sdf)?;
    let cloud = io::load_points(&a.points).map_err(input("loading points"))?;
    let x0 = initial_transform(&a.init)?;
    info!("registering {} points, config {config:?}", cloud.len());

    let result = robust_register(&sdf, &cloud.points, &x0, &config).map_err(|e| match e {
        RegistrationError::InvalidConfig(_) => Failure::Input(e.into()),
        e => Failure::Registration(anyhow::Error::new(e).context("registration failed")),
    })?;
    println!(
        "kept {} of {} points after {} outer / {} IRLS rounds in {:.3} s",
        result.inlier_count(),
        cloud.len(),
        result.outer_rounds,
        result.irls_rounds,
        result.elapsed
    );
    let doc = ResultDocument::new(result, config, ctx.seed);
    io::save_result(&doc, &a.out).map_err(output("writing result"))
}

pub fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Outcome {
    let doc = io::load_result(&a.result).map_err(input("loading result"))?;
    let (_, trial) = io::load_trial(&a.manifest).map_err(input("loading trial"))?;
    if doc.result.inlier_mask.len() != trial.combined.len() {
        return Err(Failure::Input(anyhow!(
            "result covers {} points but the trial has {}",
            doc.result.inlier_mask.len(),
            trial.combined.len()
        )));
    }
    let mesh = load_mesh(&a.mesh, a.scale)?;
    let surface = ModelSurface::new(&mesh, a.samples.max(1), ctx.seed.unwrap_or(0)).map_err(input("sampling model surface"))?;
    let report = score(&trial, &doc.result, &surface, ctx.execution);
    let stats = discard_stats(&doc.result.inlier_mask, &trial.labels);
    info!(
        "outlier recall {:.3}, inlier retention {:.3}",
        stats.outlier_recall, stats.inlier_retention
    );
    match &a.out {
        Some(path) => io::save_report(&report, path).map_err(output("writing report")),
        None => {
            let text = serde_json::to_string_pretty(&report).map_err(output("serialising report"))?;
            println!("{text}");
            Ok(())
        }
    }
}

pub fn generate_mesh(a: &GenerateMeshArgs) -> Outcome {
    let mesh = match a.kind {
        MeshKind::Icosphere => icosphere(a.size, a.subdivisions),
        MeshKind::Box => box_mesh(Vec3::zeros(), Vec3::repeat(a.size), a.subdivisions.max(1) as usize),
        MeshKind::Bone => bone_like(a.subdivisions),
    };
    io::save_mesh(&mesh, &a.out).map_err(|e| match e {
        gsreg::IoError::UnsupportedFormat(_) => Failure::Input(e.into()),
        e => Failure::Output(anyhow::Error::new(e).context(format!("writing {}", a.out.display()))),
    })?;
    println!("{} vertices, {} faces", mesh.vertices.len(), mesh.faces.len());
    Ok(())
}

pub fn context_path(base: &Path, p: &str) -> std::path::PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub fn plan_dir(plan: &Path) -> &Path {
    plan.parent().unwrap_or(Path::new(""))
}
