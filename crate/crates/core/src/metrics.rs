//! Evaluation metrics: Euler-angle and translation MAE, Chamfer distance and
//! target registration error.
//!
//! Rotation MAE compares intrinsic Z-Y-X Euler angles (see
//! [`crate::geometry::euler_zyx`]); per-axis differences are wrapped into
//! `[0°, 180°]` before averaging.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::geometry::{euler_zyx, Mat3, RigidTransform, Vec3};
use crate::par::{self, Execution};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae_rot_deg: f64,
    pub mae_trans_mm: f64,
    pub chamfer_mm: f64,
    pub tre_mm: Vec<f64>,
    pub tre_mean_mm: f64,
    pub runtime_s: f64,
}

fn wrapped_abs_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Mean absolute per-axis Euler-angle difference, in degrees.
pub fn mae_rotation(r_est: &Mat3, r_gt: &Mat3) -> f64 {
    let a = euler_zyx(r_est);
    let b = euler_zyx(r_gt);
    (0..3).map(|k| wrapped_abs_diff_deg(a[k], b[k])).sum::<f64>() / 3.0
}

/// Mean of `|Δx|, |Δy|, |Δz|`.
pub fn mae_translation(t_est: &Vec3, t_gt: &Vec3) -> f64 {
    (t_est - t_gt).abs().sum() / 3.0
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Static 3-d tree for exact nearest-neighbour distances.
///
/// Distances are computed with the same expression as a linear scan, so the
/// reported minimum is bit-identical to brute force.
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Implicit balanced tree: node `lo..hi` splits at `mid` on `axis[mid]`.
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(cloud: &[Vec3]) -> Self {
        let mut points: Vec<[f64; 3]> = cloud.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut axis = vec![0u8; points.len()];
        let n = points.len();
        Self::build(&mut points, &mut axis, 0, n);
        Self { points, axis }
    }

    fn build(points: &mut [[f64; 3]], axis: &mut [u8], lo: usize, hi: usize) {
        if hi - lo <= 1 {
            return;
        }
        let slice = &points[lo..hi];
        let mut spread = [0.0f64; 3];
        for (k, s) in spread.iter_mut().enumerate() {
            let (mn, mx) = slice
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[k]), b.max(p[k])));
            *s = mx - mn;
        }
        let ax = (0..3).max_by(|&a, &b| spread[a].total_cmp(&spread[b])).unwrap();
        let mid = (lo + hi) / 2;
        points[lo..hi].select_nth_unstable_by(mid - lo, |a, b| a[ax].total_cmp(&b[ax]));
        axis[mid] = ax as u8;
        Self::build(points, axis, lo, mid);
        Self::build(points, axis, mid + 1, hi);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared distance to the nearest stored point.
    pub fn nearest_dist2(&self, q: &Vec3) -> f64 {
        let q = [q.x, q.y, q.z];
        let mut best = f64::INFINITY;
        self.search(&q, 0, self.points.len(), &mut best);
        best
    }

    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let p = &self.points[mid];
        let d = dist2(q, p);
        if d < *best {
            *best = d;
        }
        if hi - lo == 1 {
            return;
        }
        let ax = self.axis[mid] as usize;
        let delta = q[ax] - p[ax];
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        if delta * delta <= *best {
            self.search(q, far.0, far.1, best);
        }
    }
}

/// Mean over `a` of the distance to the nearest point of `b`.
pub fn chamfer_one_sided(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricsError> {
    chamfer_one_sided_with(a, &KdTree::new(b), Execution::Parallel)
}

/// One-sided Chamfer distance against a prebuilt tree.
pub fn chamfer_one_sided_with(a: &[Vec3], tree: &KdTree, exec: Execution) -> Result<f64, MetricsError> {
    if a.is_empty() || tree.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let d = par::map_range(exec, a.len(), |i| tree.nearest_dist2(&a[i]).sqrt());
    Ok(d.iter().sum::<f64>() / a.len() as f64)
}

/// Symmetric Chamfer distance `½ (mean_a min_b |a−b| + mean_b min_a |b−a|)`.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricsError> {
    Ok(0.5 * (chamfer_one_sided(a, b)? + chamfer_one_sided(b, a)?))
}

/// Per-landmark `‖R̂·p_moved + t̂ − p_model‖` and their mean.
pub fn tre(
    x_est: &RigidTransform,
    targets_moved: &[Vec3],
    targets_model: &[Vec3],
) -> Result<(Vec<f64>, f64), MetricsError> {
    if targets_moved.len() != targets_model.len() {
        return Err(MetricsError::CountMismatch {
            moved: targets_moved.len(),
            model: targets_model.len(),
        });
    }
    if targets_moved.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let errors: Vec<f64> = targets_moved
        .iter()
        .zip(targets_model)
        .map(|(m, p)| (x_est.transform_point(m) - p).norm())
        .collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok((errors, mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, from_euler_zyx};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn brute_one_sided(a: &[Vec3], b: &[Vec3]) -> f64 {
        let mut total = 0.0;
        for p in a {
            let mut best = f64::INFINITY;
            for q in b {
                let d = dist2(&[p.x, p.y, p.z], &[q.x, q.y, q.z]);
                if d < best {
                    best = d;
                }
            }
            total += best.sqrt();
        }
        total / a.len() as f64
    }

    fn random_cloud(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
            .collect()
    }

    #[test]
    fn mae_rotation_examples() {
        let r = from_euler_zyx(12.0, -20.0, 33.0);
        assert_eq!(mae_rotation(&r, &r), 0.0);
        let rz9 = exp_so3(&Vec3::new(0.0, 0.0, 9f64.to_radians()));
        let r_est = rz9 * r;
        assert!((mae_rotation(&r_est, &r) - 3.0).abs() < 1e-9);
        assert_eq!(mae_rotation(&r_est, &r), mae_rotation(&r, &r_est));
    }

    #[test]
    fn mae_rotation_wraps_at_180() {
        let a = from_euler_zyx(0.0, 0.0, 179.0);
        let b = from_euler_zyx(0.0, 0.0, -179.0);
        assert!((mae_rotation(&a, &b) - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn mae_translation_examples() {
        let t = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(mae_translation(&t, &t), 0.0);
        assert_eq!(mae_translation(&Vec3::new(3.0, 0.0, 0.0), &Vec3::zeros()), 1.0);
        assert_eq!(mae_translation(&Vec3::new(1.0, 2.0, 3.0), &Vec3::zeros()), 2.0);
    }

    #[test]
    fn chamfer_examples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = random_cloud(&mut rng, 50);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        let d = chamfer_distance(&[Vec3::zeros()], &[Vec3::new(3.0, 4.0, 0.0)]).unwrap();
        assert_eq!(d, 5.0);
        assert!(matches!(chamfer_distance(&[], &a), Err(MetricsError::EmptyCloud)));
        assert!(matches!(chamfer_distance(&a, &[]), Err(MetricsError::EmptyCloud)));
    }

    #[test]
    fn chamfer_equals_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_cloud(&mut rng, 200);
            let b = random_cloud(&mut rng, 200);
            let tree = KdTree::new(&b);
            for p in &a {
                let brute = b
                    .iter()
                    .map(|q| dist2(&[p.x, p.y, p.z], &[q.x, q.y, q.z]))
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(tree.nearest_dist2(p), brute);
            }
            let expected = 0.5 * (brute_one_sided(&a, &b) + brute_one_sided(&b, &a));
            assert_eq!(chamfer_distance(&a, &b).unwrap(), expected);
        }
    }

    #[test]
    fn kdtree_handles_duplicates() {
        let mut cloud = vec![Vec3::new(1.0, 1.0, 1.0); 100];
        cloud.push(Vec3::new(5.0, 5.0, 5.0));
        let tree = KdTree::new(&cloud);
        assert_eq!(tree.nearest_dist2(&Vec3::new(1.0, 1.0, 2.0)), 1.0);
        assert_eq!(tree.nearest_dist2(&Vec3::new(5.0, 5.0, 5.0)), 0.0);
    }

    #[test]
    fn tre_examples() {
        let gt = RigidTransform::new(from_euler_zyx(10.0, 5.0, -30.0), Vec3::new(100.0, -40.0, 7.0));
        let model: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64 * 3.0, (i * i) as f64, -(i as f64))).collect();
        let moved: Vec<Vec3> = model.iter().map(|p| gt.inverse().transform_point(p)).collect();
        let (errs, mean) = tre(&gt, &moved, &model).unwrap();
        assert!(errs.iter().all(|e| *e < 1e-9) && mean < 1e-9);

        let shifted = gt.compose_update(&crate::geometry::Twist::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)));
        let (errs, mean) = tre(&shifted, &moved, &model).unwrap();
        assert!(errs.iter().all(|e| (e - 1.0).abs() < 1e-9));
        assert!((mean - 1.0).abs() < 1e-9);

        assert!(matches!(tre(&gt, &moved[..3], &model), Err(MetricsError::CountMismatch { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn chamfer_symmetric_and_translation_invariant(seed in any::<u64>(), shift in (-100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64)) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(&mut rng, 40);
            let b = random_cloud(&mut rng, 60);
            let ab = chamfer_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, chamfer_distance(&b, &a).unwrap());
            let t = Vec3::new(shift.0, shift.1, shift.2);
            let a2: Vec<Vec3> = a.iter().map(|p| p + t).collect();
            let b2: Vec<Vec3> = b.iter().map(|p| p + t).collect();
            prop_assert!((chamfer_distance(&a2, &b2).unwrap() - ab).abs() < 1e-9);
        }

        #[test]
        fn tre_permutation_invariant(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let model = random_cloud(&mut rng, 10);
            let moved = random_cloud(&mut rng, 10);
            let x = RigidTransform::new(from_euler_zyx(rng.random_range(-40.0..40.0), 3.0, 1.0), Vec3::new(1.0, 2.0, 3.0));
            let (_, m0) = tre(&x, &moved, &model).unwrap();
            let mut idx: Vec<usize> = (0..10).collect();
            idx.reverse();
            idx.swap(2, 7);
            let pm: Vec<Vec3> = idx.iter().map(|&i| model[i]).collect();
            let pv: Vec<Vec3> = idx.iter().map(|&i| moved[i]).collect();
            let (_, m1) = tre(&x, &pv, &pm).unwrap();
            prop_assert!((m0 - m1).abs() < 1e-9);
        }
    }
}
