//! Batch trials from a TOML plan.
//!
//! ```toml
//! mesh = "builtin:bone"         # or a mesh path relative to the plan
//! repetitions = 5
//! seed = 0
//! region = { cap_center = [20.0, 10.0, 80.0], cap_radius = 65.0 }
//! config = { cauchy_c = 1.0 }
//!
//! [[cases]]
//! label = "iso 0.5"
//! spec = { noise_sigma = [0.5, 0.5, 0.5] }
//! ```
//!
//! Every case runs `repetitions` times with seeds `seed, seed + 1, ...`.
//! Trials run in parallel; each registration runs sequentially, so times
//! are comparable across `--jobs` settings.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use gsreg::experiment::{run_trial, DiscardStats, InitStrategy, ModelSurface, TrialRun};
use gsreg::metrics::EvalReport;
use gsreg::mesh::{bone_like, icosphere};
use gsreg::simulate::ExperimentSpec;
use gsreg::{build_gradient_sdf, BuildOptions, Execution, GradientSdf, RegistrationError, RegistrationResult, RobustConfig, TriangleMesh};
use log::info;
use rayon::prelude::*;
use serde::Deserialize;

use crate::commands::{context_path, load_mesh, load_toml, output, plan_dir, region, Context, Outcome};
use crate::{BenchmarkArgs, Failure, RegionArgs};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub mask: Option<PathBuf>,
    pub cap_center: Option<[f64; 3]>,
    pub cap_radius: Option<f64>,
}

impl RegionSpec {
    fn args(&self) -> RegionArgs {
        RegionArgs {
            mask: self.mask.clone(),
            cap_center: self.cap_center,
            cap_radius: self.cap_radius,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    pub label: Option<String>,
    pub mesh: Option<String>,
    pub region: Option<RegionSpec>,
    pub config: Option<RobustConfig>,
    #[serde(default)]
    pub spec: ExperimentSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkPlan {
    pub mesh: String,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "one")]
    pub voxel: f64,
    #[serde(default = "ten")]
    pub padding: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_rep")]
    pub repetitions: usize,
    #[serde(default)]
    pub region: RegionSpec,
    #[serde(default)]
    pub config: RobustConfig,
    #[serde(default)]
    pub init: InitStrategy,
    #[serde(default = "samples")]
    pub surface_samples: usize,
    #[serde(default)]
    pub cases: Vec<Case>,
}

fn one() -> f64 {
    1.0
}
fn ten() -> f64 {
    10.0
}
fn one_rep() -> usize {
    1
}
fn samples() -> usize {
    100_000
}

type Scored = (RegistrationResult, EvalReport, DiscardStats);

struct Model {
    mesh: TriangleMesh,
    sdf: GradientSdf,
    surface: ModelSurface,
}

fn builtin(name: &str) -> Option<TriangleMesh> {
    match name {
        "builtin:bone" => Some(bone_like(4)),
        "builtin:icosphere" => Some(icosphere(50.0, 4)),
        _ => None,
    }
}

fn prepare(plan: &BenchmarkPlan, name: &str, base: &Path, seed: u64) -> Result<Model, Failure> {
    let mesh = match builtin(name) {
        Some(m) => m.scaled(plan.scale),
        None => load_mesh(&context_path(base, name), plan.scale)?,
    };
    let opts = BuildOptions {
        voxel_size: plan.voxel,
        padding: plan.padding,
        ..Default::default()
    };
    let (sdf, _) = build_gradient_sdf(&mesh, &opts).map_err(|e| Failure::Input(anyhow!(e).context(format!("building SDF for {name}"))))?;
    let surface = ModelSurface::new(&mesh, plan.surface_samples.max(1), seed)
        .map_err(|e| Failure::Input(anyhow!(e).context(format!("sampling {name}"))))?;
    info!("{name}: grid {:?}", sdf.dims);
    Ok(Model { mesh, sdf, surface })
}

fn noise_label(sigma: &[f64; 3]) -> String {
    if sigma[0] == sigma[1] && sigma[1] == sigma[2] {
        format!("{}", sigma[0])
    } else {
        format!("{}/{}/{}", sigma[0], sigma[1], sigma[2])
    }
}

struct Job {
    case: usize,
    repetition: usize,
    spec: ExperimentSpec,
}

pub fn run(ctx: &Context, a: &BenchmarkArgs) -> Outcome {
    let mut plan: BenchmarkPlan = load_toml(&a.plan)?;
    if let Some(seed) = ctx.seed {
        plan.seed = seed;
    }
    if plan.cases.is_empty() || plan.repetitions == 0 {
        return Err(Failure::Input(anyhow!("{}: plan has no cases or zero repetitions", a.plan.display())));
    }
    let base = plan_dir(&a.plan);

    let mut models: HashMap<String, Model> = HashMap::new();
    let mut masks = Vec::new();
    for case in &plan.cases {
        let name = case.mesh.clone().unwrap_or_else(|| plan.mesh.clone());
        if !models.contains_key(&name) {
            let model = prepare(&plan, &name, base, plan.seed)?;
            models.insert(name.clone(), model);
        }
        let spec = case.region.as_ref().unwrap_or(&plan.region);
        masks.push(region(&models[&name].mesh, &spec.args(), base)?);
    }

    let jobs: Vec<Job> = (0..plan.cases.len())
        .flat_map(|case| (0..plan.repetitions).map(move |repetition| (case, repetition)))
        .map(|(case, repetition)| Job {
            case,
            repetition,
            spec: ExperimentSpec {
                seed: plan.seed + repetition as u64,
                ..plan.cases[case].spec.clone()
            },
        })
        .collect();
    for job in &jobs {
        job.spec.validate().map_err(|e| Failure::Input(anyhow!(e).context(format!("case {}", job.case))))?;
    }

    let runs: Vec<Result<TrialRun, Failure>> = jobs
        .par_iter()
        .map(|job| {
            let case = &plan.cases[job.case];
            let model = &models[case.mesh.as_ref().unwrap_or(&plan.mesh)];
            let config = RobustConfig {
                execution: Execution::Sequential,
                ..case.config.clone().unwrap_or_else(|| plan.config.clone())
            };
            run_trial(&model.mesh, &model.sdf, &masks[job.case], &job.spec, &config, plan.init, &model.surface)
                .map_err(|e| Failure::Input(anyhow!(e).context(format!("case {} repetition {}", job.case, job.repetition))))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;

    fs::create_dir_all(&a.out_dir).map_err(output(format!("creating {}", a.out_dir.display())))?;
    let trials = trials_csv(&plan, &jobs, &runs);
    let summary = summary_csv(&plan, &jobs, &runs);
    for (name, text) in [("trials.csv", &trials), ("summary.csv", &summary)] {
        let path = a.out_dir.join(name);
        fs::write(&path, text).map_err(output(format!("writing {}", path.display())))?;
    }
    print!("{summary}");
    Ok(())
}

fn label(plan: &BenchmarkPlan, case: usize) -> String {
    plan.cases[case].label.clone().unwrap_or_else(|| format!("case{case}")).replace(',', ";")
}

fn trials_csv(plan: &BenchmarkPlan, jobs: &[Job], runs: &[TrialRun]) -> String {
    let mut s = String::from("case,label,repetition,seed,noise,outlier_ratio,status,mae_r,mae_t,cd,tre,recall,retention,outer_rounds,time\n");
    for (job, run) in jobs.iter().zip(runs) {
        let _ = write!(
            s,
            "{},{},{},{},{},{},",
            job.case,
            label(plan, job.case),
            job.repetition,
            job.spec.seed,
            noise_label(&job.spec.noise_sigma),
            job.spec.outlier_ratio
        );
        match &run.outcome {
            Ok((result, report, stats)) => {
                let _ = write!(
                    s,
                    "ok,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},",
                    report.mae_rot_deg,
                    report.mae_trans_mm,
                    report.chamfer_mm,
                    report.tre_mean_mm,
                    stats.outlier_recall,
                    stats.inlier_retention,
                    result.outer_rounds
                );
            }
            Err(e) => {
                let _ = write!(s, "{},,,,,,,,", status(e));
            }
        }
        let _ = writeln!(s, "{:.6}", run.registration_s);
    }
    s
}

fn status(e: &RegistrationError) -> &'static str {
    match e {
        RegistrationError::RankDeficient => "rank_deficient",
        RegistrationError::TooFewInliers { .. } => "too_few_inliers",
        RegistrationError::TooFewPoints { .. } => "too_few_points",
        RegistrationError::InvalidConfig(_) => "invalid_config",
    }
}

/// One row per case; errors are averaged over the converged repetitions.
fn summary_csv(plan: &BenchmarkPlan, jobs: &[Job], runs: &[TrialRun]) -> String {
    let mut s = String::from("case,label,noise,outlier_ratio,repetitions,converged,mae_r,mae_t,cd,tre,recall,retention,time\n");
    for case in 0..plan.cases.len() {
        let mine: Vec<&TrialRun> = jobs.iter().zip(runs).filter(|(j, _)| j.case == case).map(|(_, r)| r).collect();
        let ok: Vec<_> = mine.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let mean = |f: &dyn Fn(&Scored) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|o| f(o)).sum::<f64>() / ok.len() as f64
            }
        };
        let time = mine.iter().map(|r| r.registration_s).sum::<f64>() / mine.len() as f64;
        let spec = &plan.cases[case].spec;
        let _ = writeln!(
            s,
            "{case},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{time:.6}",
            label(plan, case),
            noise_label(&spec.noise_sigma),
            spec.outlier_ratio,
            mine.len(),
            ok.len(),
            mean(&|o| o.1.mae_rot_deg),
            mean(&|o| o.1.mae_trans_mm),
            mean(&|o| o.1.chamfer_mm),
            mean(&|o| o.1.tre_mean_mm),
            mean(&|o| o.2.outlier_recall),
            mean(&|o| o.2.inlier_retention),
        );
    }
    s
}
