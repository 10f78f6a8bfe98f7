//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so that every criterion is
//! evaluated and reported even when an earlier one fails.

use std::process::ExitCode;
use std::time::Instant;

use gsreg::experiment::{landmark_init, run_trial, InitStrategy, ModelSurface, TrialRun};
use gsreg::geometry::{from_euler_zyx, Twist};
use gsreg::mesh::{bone_like, box_mesh, icosphere};
use gsreg::registration::{cauchy_weight, gauss_newton_solve, jacobian_row, residual};
use gsreg::simulate::{make_trial, ExperimentSpec, RegionMask};
use gsreg::{build_gradient_sdf, BuildOptions, Execution, GradientSdf, RigidTransform, RobustConfig, TriangleMesh, Vec3};
use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;

struct Verdict {
    pass: bool,
    detail: String,
}

struct Bone {
    mesh: TriangleMesh,
    sdf: GradientSdf,
    surface: ModelSurface,
    regions: Vec<RegionMask>,
}

impl Bone {
    fn new() -> Self {
        let mesh = bone_like(4);
        let sdf = build_gradient_sdf(&mesh, &BuildOptions::default()).expect("bone sdf").0;
        let surface = ModelSurface::new(&mesh, 200_000, 1).expect("surface samples");
        // exposed areas around the two end lumps, as a surgeon would reach them
        let regions = [Vec3::new(20.0, 10.0, 80.0), Vec3::new(-25.0, -10.0, -60.0)]
            .iter()
            .map(|c| RegionMask::spherical_cap(&mesh, RegionMask::nearest_vertex(&mesh, c), 65.0).expect("cap"))
            .collect();
        Self { mesh, sdf, surface, regions }
    }

    fn run(&self, spec: &ExperimentSpec, config: &RobustConfig) -> TrialRun {
        let region = &self.regions[(spec.seed % self.regions.len() as u64) as usize];
        run_trial(&self.mesh, &self.sdf, region, spec, config, InitStrategy::default(), &self.surface).expect("trial generation")
    }
}

fn spec(seed: u64, strokes: usize, per_stroke: usize, sigma: [f64; 3], ratio: f64) -> ExperimentSpec {
    ExperimentSpec {
        seed,
        n_strokes: strokes,
        points_per_stroke: per_stroke,
        noise_sigma: sigma,
        outlier_ratio: ratio,
        ..Default::default()
    }
}

/// Trial-averaged errors for one experimental level.
#[derive(Default)]
struct Level {
    trials: usize,
    failures: usize,
    rot: f64,
    trans: f64,
    chamfer: f64,
    tre: f64,
    recall: f64,
    retention: f64,
}

impl Level {
    fn collect(runs: &[TrialRun]) -> Self {
        let mut l = Level {
            trials: runs.len(),
            ..Default::default()
        };
        let mut ok = 0.0;
        for run in runs {
            match &run.outcome {
                Ok((_, report, stats)) => {
                    ok += 1.0;
                    l.rot += report.mae_rot_deg;
                    l.trans += report.mae_trans_mm;
                    l.chamfer += report.chamfer_mm;
                    l.tre += report.tre_mean_mm;
                    l.recall += stats.outlier_recall;
                    l.retention += stats.inlier_retention;
                }
                Err(_) => l.failures += 1,
            }
        }
        if ok > 0.0 {
            for v in [&mut l.rot, &mut l.trans, &mut l.chamfer, &mut l.tre, &mut l.recall, &mut l.retention] {
                *v /= ok;
            }
        }
        l
    }
}

fn fd_jacobian(sdf: &GradientSdf, x: &RigidTransform, p: &Vec3, h: f64) -> Vector6<f64> {
    Vector6::from_fn(|k, _| {
        let mut d = [0.0; 6];
        d[k] = h;
        let plus = residual(sdf, &x.compose_update(&Twist::from_slice(&d)), p);
        d[k] = -h;
        let minus = residual(sdf, &x.compose_update(&Twist::from_slice(&d)), p);
        (plus - minus) / (2.0 * h)
    })
}

fn jacobian_fd() -> Verdict {
    let start = Instant::now();
    // a 100 mm cube with 1 mm voxels puts cell boundaries on integer coordinates
    let mesh = box_mesh(Vec3::zeros(), Vec3::new(100.0, 100.0, 100.0), 1);
    let sdf = build_gradient_sdf(&mesh, &BuildOptions::default()).expect("cube sdf").0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let inside_cell = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.random_range(lo..hi).floor() + rng.random_range(0.2..0.8);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let side = if rng.random::<bool>() { 50.0 } else { -50.0 };
        let (a, b) = (inside_cell(&mut rng, -44.0, 44.0), inside_cell(&mut rng, -44.0, 44.0));
        let n = side + inside_cell(&mut rng, -2.0, 2.0);
        let world = match rng.random_range(0..3) {
            0 => Vec3::new(n, a, b),
            1 => Vec3::new(a, n, b),
            _ => Vec3::new(a, b, n),
        };
        let angle = |rng: &mut ChaCha8Rng| rng.random_range(-45.0..45.0);
        let x = RigidTransform::new(
            from_euler_zyx(angle(&mut rng), angle(&mut rng), angle(&mut rng)),
            Vec3::new(rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0)),
        );
        let p = x.inverse().transform_point(&world);
        let j = jacobian_row(&sdf, &x, &p);
        worst = worst.max((j - fd_jacobian(&sdf, &x, &p, 1e-4)).norm() / j.norm());
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        pass: worst <= 1e-3 && secs < 10.0,
        detail: format!("worst relative error {worst:.2e} over 1000 samples (<= 1e-3), {secs:.2} s (< 10 s)"),
    }
}

fn sdf_fidelity() -> Verdict {
    let mesh = icosphere(50.0, 4);
    let sdf = build_gradient_sdf(&mesh, &BuildOptions::default()).expect("sphere sdf").0;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut within = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let dir = loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                break v / n;
            }
        };
        let r = rng.random_range(45.0..55.0);
        let err = (sdf.distance_at(&(dir * r)) - (r - 50.0)).abs();
        worst = worst.max(err);
        within += (err <= 0.5) as usize;
    }
    let unit_dev = sdf
        .gradient
        .iter()
        .map(|g| (Vec3::new(g[0] as f64, g[1] as f64, g[2] as f64).norm() - 1.0).abs())
        .fold(0.0f64, f64::max);

    let small = icosphere(8.0, 2);
    let opts = BuildOptions {
        voxel_size: 0.75,
        padding: 2.0,
        ..Default::default()
    };
    let fast = build_gradient_sdf(&small, &opts).expect("bvh build").0;
    let brute = build_gradient_sdf(&small, &BuildOptions { accelerate: false, ..opts }).expect("brute build").0;
    let exact = fast == brute;

    Verdict {
        pass: within >= 990 && unit_dev <= 1e-6 && exact,
        detail: format!(
            "{within}/1000 within 0.5 mm (need 990, worst {worst:.3} mm); max | |g| - 1 | {unit_dev:.1e} (<= 1e-6); BVH build {} brute force on {:?} grid",
            if exact { "equals" } else { "DIFFERS from" },
            fast.dims
        ),
    }
}

fn noise_free(bone: &Bone) -> Verdict {
    let runs: Vec<TrialRun> = (0..SEEDS).map(|s| bone.run(&spec(s, 5, 100, [0.0; 3], 0.0), &RobustConfig::default())).collect();
    let l = Level::collect(&runs);
    Verdict {
        pass: l.failures == 0 && l.rot <= 0.5 && l.trans <= 0.5 && l.chamfer <= 1.0,
        detail: format!(
            "{} trials x 500 points: MAE(R) {:.3} deg (<= 0.5), MAE(t) {:.3} mm (<= 0.5), CD {:.3} mm (<= 1), failures {}",
            l.trials, l.rot, l.trans, l.chamfer, l.failures
        ),
    }
}

fn noise_sweep(bone: &Bone) -> Verdict {
    let levels: [[f64; 3]; 8] = [
        [0.5; 3],
        [0.7; 3],
        [0.9; 3],
        [1.2; 3],
        [0.3, 0.5, 0.7],
        [0.5, 0.7, 0.9],
        [0.7, 0.9, 1.1],
        [1.0, 1.2, 1.4],
    ];
    let mut worst_rot = 0.0f64;
    let mut worst_trans = 0.0f64;
    let mut failures = 0;
    let mut table = Vec::new();
    for sigma in levels {
        let runs: Vec<TrialRun> = (0..SEEDS).map(|s| bone.run(&spec(s, 6, 100, sigma, 0.0), &RobustConfig::default())).collect();
        let l = Level::collect(&runs);
        worst_rot = worst_rot.max(l.rot);
        worst_trans = worst_trans.max(l.trans);
        failures += l.failures;
        table.push(format!("{sigma:?}: {:.2}/{:.2}", l.rot, l.trans));
    }
    Verdict {
        pass: failures == 0 && worst_rot <= 2.5 && worst_trans <= 2.0,
        detail: format!(
            "worst MAE(R) {worst_rot:.3} deg (<= 2.5), worst MAE(t) {worst_trans:.3} mm (<= 2), failures {failures}; per level deg/mm {}",
            table.join(", ")
        ),
    }
}

fn outlier_sweep(bone: &Bone) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut shell_note = Vec::new();
    for ratio in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let runs: Vec<TrialRun> = (0..SEEDS).map(|s| bone.run(&spec(s, 6, 100, [0.5; 3], ratio), &RobustConfig::default())).collect();
        let l = Level::collect(&runs);
        pass &= l.failures == 0;
        let mut part = format!("{:.0}%: failures {}", ratio * 100.0, l.failures);
        if ratio >= 0.9 {
            pass &= l.rot <= 2.0 && l.trans <= 1.5;
            part += &format!(", MAE(R) {:.3} deg (<= 2), MAE(t) {:.3} mm (<= 1.5)", l.rot, l.trans);
        }
        if ratio <= 0.5 {
            pass &= l.recall >= 0.95 && l.retention >= 0.95;
            part += &format!(", recall {:.3} (>= 0.95), retention {:.3} (>= 0.95)", l.recall, l.retention);
            shell_note.push(format!("{:.0}%: {:.3}", ratio * 100.0, recall_beyond_shell(bone, &runs, 3.0)));
        }
        parts.push(part);
    }
    println!(
        "      info: recall among outliers more than 3 mm from the surface (where the Cauchy weight at c = 1 drops below 0.1): {}",
        shell_note.join(", ")
    );
    Verdict {
        pass,
        detail: parts.join("; "),
    }
}

/// Discard recall restricted to injected outliers whose true distance to the
/// model exceeds `shell`.
fn recall_beyond_shell(bone: &Bone, runs: &[TrialRun], shell: f64) -> f64 {
    let (mut far, mut dropped) = (0usize, 0usize);
    for run in runs {
        let Ok((result, _, _)) = &run.outcome else { continue };
        let gt = &run.trial.gt_transform;
        for ((p, inlier), kept) in run.trial.combined.iter().zip(&run.trial.labels).zip(&result.inlier_mask) {
            if !*inlier && bone.sdf.distance_at(&gt.transform_point(p)).abs() > shell {
                far += 1;
                dropped += !*kept as usize;
            }
        }
    }
    dropped as f64 / far.max(1) as f64
}

fn runtime(bone: &Bone) -> Verdict {
    let grid_ok = bone.sdf.dims.iter().all(|&d| d <= 200);
    let mut pass = grid_ok;
    let mut parts = Vec::new();
    // total point count stays at 1000 while the outlier share grows
    for (ratio, strokes, per_stroke) in [(0.0, 10, 100), (0.3, 7, 100), (0.5, 5, 100), (0.7, 6, 50), (0.9, 4, 25)] {
        let runs: Vec<TrialRun> = (0..5).map(|s| bone.run(&spec(s, strokes, per_stroke, [0.5; 3], ratio), &RobustConfig::default())).collect();
        let total = runs[0].trial.combined.len();
        let slowest = runs.iter().map(|r| r.registration_s).fold(0.0, f64::max);
        let limit = if ratio <= 0.7 { 1.0 } else { 5.0 };
        pass &= total <= 1000 && slowest < limit;
        parts.push(format!("{:.0}% ({total} pts): {slowest:.3} s (< {limit} s)", ratio * 100.0));
    }
    Verdict {
        pass,
        detail: format!("grid {:?}; slowest of 5 trials per level: {}", bone.sdf.dims, parts.join(", ")),
    }
}

fn target_registration_error(bone: &Bone) -> Verdict {
    let runs: Vec<TrialRun> = (0..SEEDS).map(|s| bone.run(&spec(s, 6, 100, [0.5; 3], 0.0), &RobustConfig::default())).collect();
    let l = Level::collect(&runs);
    Verdict {
        pass: l.failures == 0 && l.tre <= 2.5 && bone.sdf.voxel_size == 1.0,
        detail: format!("mean TRE over 10 landmarks and {} trials {:.3} mm (<= 2.5), failures {}", l.trials, l.tre, l.failures),
    }
}

fn robust_loop_properties(bone: &Bone) -> Verdict {
    let mut failed = Vec::new();

    let table = [(0.0, 1.0), (1.0, 0.5), (3.0, 0.1)];
    if table.iter().any(|(e, w)| cauchy_weight(*e, 1.0) != *w) {
        failed.push("cauchy table");
    }

    // zero weights on the injected outliers of a real trial versus removing them
    let trial = make_trial(&bone.mesh, &bone.regions[0], &spec(5, 6, 100, [0.5; 3], 0.5)).expect("trial");
    let x0 = landmark_init(&trial, 3, 0.5, 5).expect("init");
    let cfg = RobustConfig {
        execution: Execution::Sequential,
        ..Default::default()
    };
    let weights: Vec<f64> = trial.labels.iter().map(|l| if *l { 1.0 } else { 0.0 }).collect();
    let with_zeros = gauss_newton_solve(&bone.sdf, &x0, &trial.combined, &weights, &cfg).expect("weighted solve");
    let removed = gauss_newton_solve(&bone.sdf, &x0, &trial.noisy_points, &vec![1.0; trial.noisy_points.len()], &cfg).expect("solve");
    let dr = (with_zeros.transform.rotation - removed.transform.rotation).abs().max();
    let dt = (with_zeros.transform.translation - removed.transform.translation).abs().max();
    if dr > 1e-9 || dt > 1e-9 {
        failed.push("zero-weight invariance");
    }

    // every Gauss-Newton trace over noisy and contaminated trials
    let mut traces = 0;
    let mut monotone = true;
    for (s, ratio) in [(0, 0.0), (1, 0.3), (2, 0.7), (3, 0.9)] {
        if let Ok((result, _, _)) = &bone.run(&spec(s, 6, 100, [0.9; 3], ratio), &RobustConfig::default()).outcome {
            for trace in &result.cost_history {
                traces += 1;
                monotone &= trace.windows(2).all(|c| c[1] <= c[0]);
            }
        } else {
            monotone = false;
        }
    }
    if !monotone {
        failed.push("cost monotonicity");
    }

    let single = (0..SEEDS).all(|s| match &bone.run(&spec(s, 6, 100, [0.0; 3], 0.0), &RobustConfig::default()).outcome {
        Ok((r, _, _)) => r.outer_rounds == 1 && r.inlier_mask.iter().all(|k| *k),
        Err(_) => false,
    });
    if !single {
        failed.push("single outer round without outliers");
    }

    let strip = |run: TrialRun| {
        let (mut result, report, stats) = run.outcome.expect("registration");
        result.elapsed = 0.0;
        (run.trial, run.init, result, report.mae_rot_deg, report.mae_trans_mm, report.tre_mm, stats)
    };
    let s = spec(7, 6, 100, [0.7; 3], 0.5);
    let a = strip(bone.run(&s, &RobustConfig::default()));
    let b = strip(bone.run(&s, &RobustConfig::default()));
    let c = strip(bone.run(&s, &cfg));
    if a != b || a != c {
        failed.push("determinism");
    }

    Verdict {
        pass: failed.is_empty(),
        detail: format!(
            "cauchy 1/0.5/0.1 at e = 0/1/3; zero-weight max diff R {dr:.1e} t {dt:.1e} (<= 1e-9); {traces} cost traces non-increasing: {monotone}; \
             single round without outliers: {single}; trials repeatable across runs and execution modes: {}{}",
            !failed.contains(&"determinism"),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    }
}

fn main() -> ExitCode {
    let total = Instant::now();
    let mut all_pass = true;
    let mut report = |id: usize, name: &str, run: &dyn Fn() -> Verdict| {
        let start = Instant::now();
        let v = run();
        all_pass &= v.pass;
        println!(
            "{} {id} {name} ({:.1} s): {}",
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    };
    report(1, "jacobian-finite-differences", &jacobian_fd);
    report(2, "sdf-fidelity", &sdf_fidelity);
    let bone = Bone::new();
    report(3, "noise-free-recovery", &|| noise_free(&bone));
    report(4, "noise-robustness", &|| noise_sweep(&bone));
    report(5, "outlier-robustness", &|| outlier_sweep(&bone));
    report(6, "runtime", &|| runtime(&bone));
    report(7, "target-registration-error", &|| target_registration_error(&bone));
    report(8, "robust-loop-properties", &|| robust_loop_properties(&bone));
    println!("acceptance finished in {:.1} s", total.elapsed().as_secs_f64());
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
