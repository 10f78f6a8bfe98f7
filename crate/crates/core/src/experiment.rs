//! End-to-end synthetic trials: generate, initialise, register, evaluate.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, RegistrationError, SimulationError};
use crate::geometry::{umeyama_align, RigidTransform, Vec3};
use crate::mesh::TriangleMesh;
use crate::metrics::{chamfer_one_sided_with, mae_rotation, mae_translation, tre, EvalReport, KdTree};
use crate::par::Execution;
use crate::registration::{robust_register, RegistrationResult, RobustConfig};
use crate::sdf::GradientSdf;
use crate::simulate::{make_trial, sample_surface_uniform, ExperimentSpec, RegionMask, SyntheticTrial};

/// How the initial estimate is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitStrategy {
    Identity,
    /// Least-squares fit to the first `count` landmarks, each probe-frame
    /// landmark perturbed by isotropic noise of `sigma` mm.
    Landmarks { count: usize, sigma: f64 },
}

impl Default for InitStrategy {
    fn default() -> Self {
        InitStrategy::Landmarks { count: 3, sigma: 0.5 }
    }
}

/// Rigid fit from noisy probe-frame landmarks to their model positions.
pub fn landmark_init(trial: &SyntheticTrial, count: usize, sigma: f64, seed: u64) -> Result<RigidTransform, GeometryError> {
    let count = count.min(trial.landmarks_model.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6e64_6d61_726b);
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("non-negative sigma");
    let probe: Vec<Vec3> = trial.landmarks_moved[..count]
        .iter()
        .map(|p| {
            if sigma > 0.0 {
                p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                *p
            }
        })
        .collect();
    umeyama_align(&probe, &trial.landmarks_model[..count])
}

/// Share of injected outliers discarded and share of surface points kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscardStats {
    pub outlier_recall: f64,
    pub inlier_retention: f64,
}

pub fn discard_stats(inlier_mask: &[bool], labels: &[bool]) -> DiscardStats {
    let (mut out_total, mut out_dropped, mut in_total, mut in_kept) = (0usize, 0usize, 0usize, 0usize);
    for (kept, is_inlier) in inlier_mask.iter().zip(labels) {
        if *is_inlier {
            in_total += 1;
            in_kept += *kept as usize;
        } else {
            out_total += 1;
            out_dropped += !*kept as usize;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    DiscardStats {
        outlier_recall: ratio(out_dropped, out_total),
        inlier_retention: ratio(in_kept, in_total),
    }
}

/// Dense model-surface samples for Chamfer evaluation.
pub struct ModelSurface {
    tree: KdTree,
}

impl ModelSurface {
    pub fn new(mesh: &TriangleMesh, samples: usize, seed: u64) -> Result<Self, SimulationError> {
        let pts = sample_surface_uniform(mesh, &RegionMask::whole(mesh), samples, seed)?;
        Ok(Self { tree: KdTree::new(&pts) })
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }
}

/// Metrics for a registration of `trial`.
///
/// Rotation and translation errors compare the transform that was applied
/// to the probe cloud (`gt⁻¹`) with the inverse of the estimate, so the
/// translation error is measured where the model sits rather than at the
/// far-away probe-frame origin. Chamfer distance is one-sided: the
/// registered points kept by the robust loop against dense samples of the
/// full model, since a partial cloud cannot cover the whole surface.
pub fn evaluate(
    trial: &SyntheticTrial,
    result: &RegistrationResult,
    surface: &ModelSurface,
    exec: Execution,
) -> EvalReport {
    let x = &result.transform;
    let applied = trial.gt_transform.inverse();
    let estimated = x.inverse();
    let kept: Vec<Vec3> = trial
        .combined
        .iter()
        .zip(&result.inlier_mask)
        .filter(|(_, k)| **k)
        .map(|(p, _)| x.transform_point(p))
        .collect();
    let chamfer = chamfer_one_sided_with(&kept, surface.tree(), exec).unwrap_or(f64::NAN);
    let (tre_mm, tre_mean_mm) = tre(x, &trial.landmarks_moved, &trial.landmarks_model).unwrap_or((Vec::new(), f64::NAN));
    EvalReport {
        mae_rot_deg: mae_rotation(&estimated.rotation, &applied.rotation),
        mae_trans_mm: mae_translation(&estimated.translation, &applied.translation),
        chamfer_mm: chamfer,
        tre_mm,
        tre_mean_mm,
        runtime_s: result.elapsed,
    }
}

/// Everything produced by one trial.
#[derive(Clone, Debug)]
pub struct TrialRun {
    pub trial: SyntheticTrial,
    pub init: RigidTransform,
    pub outcome: Result<(RegistrationResult, EvalReport, DiscardStats), RegistrationError>,
    /// Registration wall time in seconds, measured around the call.
    pub registration_s: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrialError {
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("landmark initialisation failed: {0}")]
    Init(#[from] GeometryError),
}

/// Generates a trial from `spec`, initialises, registers and evaluates it.
pub fn run_trial(
    mesh: &TriangleMesh,
    sdf: &GradientSdf,
    mask: &RegionMask,
    spec: &ExperimentSpec,
    config: &RobustConfig,
    init: InitStrategy,
    surface: &ModelSurface,
) -> Result<TrialRun, TrialError> {
    let trial = make_trial(mesh, mask, spec)?;
    let x0 = match init {
        InitStrategy::Identity => RigidTransform::identity(),
        InitStrategy::Landmarks { count, sigma } => landmark_init(&trial, count, sigma, spec.seed)?,
    };
    let start = Instant::now();
    let result = robust_register(sdf, &trial.combined, &x0, config);
    let registration_s = start.elapsed().as_secs_f64();
    let outcome = result.map(|r| {
        let report = evaluate(&trial, &r, surface, config.execution);
        let stats = discard_stats(&r.inlier_mask, &trial.labels);
        (r, report, stats)
    });
    Ok(TrialRun {
        trial,
        init: x0,
        outcome,
        registration_s,
    })
}
