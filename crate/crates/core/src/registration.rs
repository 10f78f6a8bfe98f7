//! Point-to-SDF registration.
//!
//! The objective is `F(X) = Σ w_k · SDF(R·p_k + t)²`. Each residual's
//! Jacobian with respect to the increment `[ξ | φ]` is
//! `∇SDF(P_k)ᵀ · [-(R·p_k)^ | I]`, where the gradient comes straight from
//! the stored gradient field. [`gauss_newton_solve`] minimises the weighted
//! problem with Levenberg damping; [`irls_register`] alternates Cauchy
//! reweighting with those solves; [`robust_register`] wraps the IRLS loop in
//! rounds that discard points whose weight falls below `δ`.

use std::time::Instant;

use log::debug;
use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::RegistrationError;
use crate::geometry::{skew, RigidTransform, Twist, Vec3};
use crate::par::{self, Execution};
use crate::sdf::GradientSdf;

/// Fewest points with positive weight that constrain all six degrees of freedom.
pub const MIN_POINTS: usize = 6;

/// Reciprocal condition number below which the centred, scale-normalised
/// normal matrix is treated as singular.
pub const RCOND_MIN: f64 = 1e-10;

const LAMBDA_MAX: f64 = 1e16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustConfig {
    /// Cauchy scale `c` in mm.
    pub cauchy_c: f64,
    /// IRLS stops when the RMS weight change is at most this.
    pub weight_eps: f64,
    /// Points whose converged weight is below this are discarded.
    pub outlier_delta: f64,
    pub max_irls_iters: usize,
    pub max_gn_iters: usize,
    /// Gauss-Newton stops once `‖ΔX‖` falls below this.
    pub gn_step_tol: f64,
    pub lm_lambda0: f64,
    /// Re-estimate `c = 1.4826 · median|e|` every IRLS round.
    pub auto_scale: bool,
    pub max_outer_rounds: usize,
    pub execution: Execution,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            cauchy_c: 1.0,
            weight_eps: 1e-3,
            outlier_delta: 0.1,
            max_irls_iters: 50,
            max_gn_iters: 30,
            gn_step_tol: 1e-8,
            lm_lambda0: 1e-6,
            auto_scale: false,
            max_outer_rounds: 10,
            execution: Execution::Parallel,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let bad = |m: &str| Err(RegistrationError::InvalidConfig(m.to_string()));
        if !(self.cauchy_c > 0.0) {
            return bad("cauchy_c must be > 0");
        }
        if !(self.weight_eps > 0.0) {
            return bad("weight_eps must be > 0");
        }
        if !(self.outlier_delta > 0.0 && self.outlier_delta < 1.0) {
            return bad("outlier_delta must lie in (0, 1)");
        }
        if self.max_irls_iters == 0 || self.max_gn_iters == 0 || self.max_outer_rounds == 0 {
            return bad("iteration caps must be >= 1");
        }
        if !(self.gn_step_tol > 0.0) || !(self.lm_lambda0 > 0.0) {
            return bad("gn_step_tol and lm_lambda0 must be > 0");
        }
        Ok(())
    }
}

/// IRLS weight as a function of the absolute residual.
pub trait WeightFunction: Sync {
    fn weight(&self, residual: f64) -> f64;

    /// Hook to re-estimate a scale from the current absolute residuals.
    fn rescale(&mut self, _abs_residuals: &[f64]) {}
}

/// Cauchy's M-estimator, `ρ(e) = c²/2 · log(1 + (e/c)²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cauchy {
    pub c: f64,
    pub auto_scale: bool,
}

impl Cauchy {
    pub fn new(c: f64) -> Self {
        Self { c, auto_scale: false }
    }
}

impl WeightFunction for Cauchy {
    fn weight(&self, residual: f64) -> f64 {
        cauchy_weight(residual, self.c)
    }

    fn rescale(&mut self, abs_residuals: &[f64]) {
        if !self.auto_scale || abs_residuals.is_empty() {
            return;
        }
        let mut v = abs_residuals.to_vec();
        let mid = v.len() / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
        let scale = 1.4826 * *m;
        if scale > 1e-9 {
            self.c = scale;
        }
    }
}

/// `w(e) = 1 / (1 + (e/c)²)`.
#[inline]
pub fn cauchy_weight(e: f64, c: f64) -> f64 {
    let r = e / c;
    1.0 / (1.0 + r * r)
}

/// Signed residual `SDF(R·p + t)`.
#[inline]
pub fn residual(sdf: &GradientSdf, x: &RigidTransform, p: &Vec3) -> f64 {
    sdf.query(&x.transform_point(p)).distance
}

/// `∇SDF(R·p + t)ᵀ · [-(R·p)^ | I]`, ordered `[ξ | φ]`.
#[inline]
pub fn jacobian_row(sdf: &GradientSdf, x: &RigidTransform, p: &Vec3) -> Vector6<f64> {
    linearize(sdf, x, p).1
}

#[inline]
fn linearize(sdf: &GradientSdf, x: &RigidTransform, p: &Vec3) -> (f64, Vector6<f64>) {
    let rp = x.rotation * p;
    let s = sdf.query(&(rp + x.translation));
    let g = s.gradient;
    // gᵀ·(-(Rp)^) = (Rp × g)ᵀ
    let rot = rp.cross(&g);
    (s.distance, Vector6::new(rot.x, rot.y, rot.z, g.x, g.y, g.z))
}

struct NormalEquations {
    h: Matrix6<f64>,
    b: Vector6<f64>,
    cost: f64,
    /// `Σ w`, `Σ w·R·p` and `Σ w·‖R·p‖²` over the weighted points.
    moments: (f64, Vec3, f64),
}

type Accum = (Matrix6<f64>, Vector6<f64>, f64, (f64, Vec3, f64));

fn normal_equations(
    sdf: &GradientSdf,
    x: &RigidTransform,
    points: &[Vec3],
    weights: &[f64],
    exec: Execution,
) -> NormalEquations {
    let (h, b, cost, moments) = par::chunked_reduce(
        exec,
        points.len(),
        || -> Accum { (Matrix6::zeros(), Vector6::zeros(), 0.0, (0.0, Vec3::zeros(), 0.0)) },
        |(mut h, mut b, mut cost, (sw, swp, swpp)), k| {
            let w = weights[k];
            if w == 0.0 {
                return (h, b, cost, (sw, swp, swpp));
            }
            let rp = x.rotation * points[k];
            let (r, j) = linearize(sdf, x, &points[k]);
            h.ger(w, &j, &j, 1.0);
            b.axpy(w * r, &j, 1.0);
            cost += w * r * r;
            (h, b, cost, (sw + w, swp + rp * w, swpp + w * rp.norm_squared()))
        },
        |(h0, b0, c0, m0), (h1, b1, c1, m1)| (h0 + h1, b0 + b1, c0 + c1, (m0.0 + m1.0, m0.1 + m1.1, m0.2 + m1.2)),
    );
    NormalEquations { h, b, cost, moments }
}

/// `Σ w_k · r_k²` at `x`.
pub fn weighted_cost(
    sdf: &GradientSdf,
    x: &RigidTransform,
    points: &[Vec3],
    weights: &[f64],
    exec: Execution,
) -> f64 {
    par::chunked_reduce(
        exec,
        points.len(),
        || 0.0,
        |acc, k| {
            let w = weights[k];
            if w == 0.0 {
                return acc;
            }
            let r = residual(sdf, x, &points[k]);
            acc + w * r * r
        },
        |a, b| a + b,
    )
}

fn reciprocal_condition(a: &Matrix6<f64>) -> f64 {
    let ev = a.symmetric_eigenvalues();
    let max = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if max > 0.0 && min.is_finite() {
        min / max
    } else {
        0.0
    }
}

/// Normal matrix re-expressed for rotations about the weighted centroid of
/// the transformed points, with rotational columns scaled by their RMS lever
/// arm. Its conditioning depends only on the point geometry, not on where
/// the cloud sits relative to the origin.
fn centred_normal_matrix(ne: &NormalEquations) -> Matrix6<f64> {
    let (sw, swp, swpp) = ne.moments;
    let m = swp / sw;
    let spread = (swpp / sw - m.norm_squared()).max(0.0).sqrt().max(1e-12);
    // J = J_c · T with T = [[I, 0], [-m^, I]], so H_c = T⁻ᵀ H T⁻¹.
    let mut t_inv = Matrix6::identity();
    t_inv.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&m));
    let hc = t_inv.transpose() * ne.h * t_inv;
    let s = Vector6::new(spread, spread, spread, 1.0, 1.0, 1.0);
    Matrix6::from_fn(|i, j| hc[(i, j)] * s[i] * s[j])
}

fn check_rank(ne: &NormalEquations, lambda0: f64) -> Result<(), RegistrationError> {
    let damped = ne.h + Matrix6::identity() * (1e3 * lambda0);
    if damped.cholesky().is_none() || reciprocal_condition(&centred_normal_matrix(ne)) < RCOND_MIN {
        return Err(RegistrationError::RankDeficient);
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct GaussNewtonOutcome {
    pub transform: RigidTransform,
    /// Weighted cost before the first step and after every accepted step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

/// Levenberg-damped Gauss-Newton on the weighted SDF objective.
///
/// Each proposed step solves `(JᵀWJ + λI) ΔX = -JᵀW r`. A step is accepted
/// only if it does not increase the weighted cost (then `λ /= 10`);
/// otherwise `λ *= 10` and the step is re-proposed.
pub fn gauss_newton_solve(
    sdf: &GradientSdf,
    x0: &RigidTransform,
    points: &[Vec3],
    weights: &[f64],
    config: &RobustConfig,
) -> Result<GaussNewtonOutcome, RegistrationError> {
    assert_eq!(points.len(), weights.len(), "one weight per point");
    let active = weights.iter().filter(|w| **w > 0.0).count();
    if active < MIN_POINTS {
        return Err(RegistrationError::TooFewPoints {
            got: active,
            required: MIN_POINTS,
        });
    }
    let exec = config.execution;
    let mut x = *x0;
    let mut lambda = config.lm_lambda0;
    let mut ne = normal_equations(sdf, &x, points, weights, exec);
    let mut history = vec![ne.cost];
    let mut iterations = 0;

    'outer: while iterations < config.max_gn_iters {
        iterations += 1;
        check_rank(&ne, config.lm_lambda0)?;
        loop {
            let a = ne.h + Matrix6::identity() * lambda;
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    break 'outer;
                }
                continue;
            };
            let delta = -chol.solve(&ne.b);
            let step = Twist::from_slice(delta.as_slice());
            if step.norm() < config.gn_step_tol {
                break 'outer;
            }
            let candidate = x.compose_update(&step);
            let cost = weighted_cost(sdf, &candidate, points, weights, exec);
            if cost <= ne.cost {
                x = candidate;
                lambda = (lambda / 10.0).max(1e-15);
                ne = normal_equations(sdf, &x, points, weights, exec);
                history.push(ne.cost);
                break;
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                break 'outer;
            }
        }
    }
    Ok(GaussNewtonOutcome {
        transform: x,
        cost_history: history,
        iterations,
    })
}

#[derive(Clone, Debug)]
pub struct IrlsOutcome {
    pub transform: RigidTransform,
    pub weights: Vec<f64>,
    pub rounds: usize,
    pub cost_history: Vec<Vec<f64>>,
}

/// Absolute residuals `|SDF(R·p_k + t)|`.
pub fn abs_residuals(sdf: &GradientSdf, x: &RigidTransform, points: &[Vec3], exec: Execution) -> Vec<f64> {
    par::map_range(exec, points.len(), |k| residual(sdf, x, &points[k]).abs())
}

/// Cauchy IRLS with the scale from `config`.
pub fn irls_register(
    sdf: &GradientSdf,
    points: &[Vec3],
    x0: &RigidTransform,
    config: &RobustConfig,
) -> Result<IrlsOutcome, RegistrationError> {
    let kernel = Cauchy {
        c: config.cauchy_c,
        auto_scale: config.auto_scale,
    };
    irls_register_with(sdf, points, x0, config, kernel)
}

/// Iteratively reweighted least squares with an arbitrary weight function.
///
/// Each round computes `w_k = w(e_k)` at the latest estimate, then solves the
/// weighted problem warm-started from it. Stops when
/// `sqrt(mean((wⁱ - wⁱ⁻¹)²)) ≤ ε`, with `w⁰ = 1`.
pub fn irls_register_with<K: WeightFunction>(
    sdf: &GradientSdf,
    points: &[Vec3],
    x0: &RigidTransform,
    config: &RobustConfig,
    mut kernel: K,
) -> Result<IrlsOutcome, RegistrationError> {
    config.validate()?;
    if points.len() < MIN_POINTS {
        return Err(RegistrationError::TooFewPoints {
            got: points.len(),
            required: MIN_POINTS,
        });
    }
    let exec = config.execution;
    let mut x = *x0;
    let mut prev = vec![1.0; points.len()];
    let mut history = Vec::new();
    let mut rounds = 0;
    while rounds < config.max_irls_iters {
        rounds += 1;
        let residuals = abs_residuals(sdf, &x, points, exec);
        kernel.rescale(&residuals);
        let weights: Vec<f64> = residuals.iter().map(|e| kernel.weight(*e)).collect();
        let gn = gauss_newton_solve(sdf, &x, points, &weights, config)?;
        x = gn.transform;
        history.push(gn.cost_history);
        let change = (weights
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / points.len() as f64)
            .sqrt();
        prev = weights;
        debug!("irls round {rounds}: rms weight change {change:.3e}");
        if change <= config.weight_eps {
            break;
        }
    }
    Ok(IrlsOutcome {
        transform: x,
        weights: prev,
        rounds,
        cost_history: history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    #[serde(with = "transform_serde")]
    pub transform: RigidTransform,
    /// Final weight per input point; discarded points keep their weight at discard time.
    pub weights: Vec<f64>,
    pub inlier_mask: Vec<bool>,
    /// Input indices discarded in each outer round.
    pub discarded_rounds: Vec<Vec<usize>>,
    /// One weighted-cost trace per Gauss-Newton solve.
    pub cost_history: Vec<Vec<f64>>,
    pub outer_rounds: usize,
    pub irls_rounds: usize,
    /// Wall-clock seconds.
    pub elapsed: f64,
}

impl RegistrationResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|m| **m).count()
    }
}

/// Robust registration with Cauchy weights and iterative outlier discarding.
pub fn robust_register(
    sdf: &GradientSdf,
    points: &[Vec3],
    x0: &RigidTransform,
    config: &RobustConfig,
) -> Result<RegistrationResult, RegistrationError> {
    let kernel = Cauchy {
        c: config.cauchy_c,
        auto_scale: config.auto_scale,
    };
    robust_register_with(sdf, points, x0, config, kernel)
}

/// Outer loop: run IRLS on the surviving points; if any converged weight is
/// below `δ`, drop those points, reset the remaining weights to one and run
/// again from the current estimate. Ends when nothing is dropped or after
/// `max_outer_rounds` rounds.
pub fn robust_register_with<K: WeightFunction + Clone>(
    sdf: &GradientSdf,
    points: &[Vec3],
    x0: &RigidTransform,
    config: &RobustConfig,
    kernel: K,
) -> Result<RegistrationResult, RegistrationError> {
    let start = Instant::now();
    config.validate()?;
    let n = points.len();
    let mut active: Vec<usize> = (0..n).collect();
    let mut weights = vec![1.0; n];
    let mut inlier_mask = vec![true; n];
    let mut discarded_rounds = Vec::new();
    let mut cost_history = Vec::new();
    let mut irls_rounds = 0;
    let mut outer_rounds = 0;
    let mut x = *x0;

    while outer_rounds < config.max_outer_rounds {
        if active.len() < MIN_POINTS {
            return Err(RegistrationError::TooFewInliers {
                remaining: active.len(),
                required: MIN_POINTS,
            });
        }
        outer_rounds += 1;
        let subset: Vec<Vec3> = active.iter().map(|&k| points[k]).collect();
        let irls = irls_register_with(sdf, &subset, &x, config, kernel.clone())?;
        x = irls.transform;
        irls_rounds += irls.rounds;
        cost_history.extend(irls.cost_history);
        for (&k, &w) in active.iter().zip(&irls.weights) {
            weights[k] = w;
        }
        let dropped: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&k| weights[k] < config.outlier_delta)
            .collect();
        debug!(
            "outer round {outer_rounds}: {} irls rounds, {} points dropped",
            irls.rounds,
            dropped.len()
        );
        if dropped.is_empty() {
            break;
        }
        for &k in &dropped {
            inlier_mask[k] = false;
        }
        active.retain(|&k| inlier_mask[k]);
        discarded_rounds.push(dropped);
        if active.len() < MIN_POINTS {
            return Err(RegistrationError::TooFewInliers {
                remaining: active.len(),
                required: MIN_POINTS,
            });
        }
    }

    Ok(RegistrationResult {
        transform: x,
        weights,
        inlier_mask,
        discarded_rounds,
        cost_history,
        outer_rounds,
        irls_rounds,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// Serialises a transform as `{ "rotation": [9 row-major], "translation": [3] }`.
pub mod transform_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::geometry::RigidTransform;

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rotation: [f64; 9],
        translation: [f64; 3],
    }

    pub fn serialize<S: Serializer>(x: &RigidTransform, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            rotation: x.rotation_row_major(),
            translation: [x.translation.x, x.translation.y, x.translation.z],
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RigidTransform, D::Error> {
        let r = Repr::deserialize(d)?;
        Ok(RigidTransform::from_row_major(&r.rotation, &r.translation))
    }
}
