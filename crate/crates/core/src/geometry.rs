//! Rotation and rigid-transform algebra on SO(3)/SE(3).
//!
//! The update `X ⊕ ΔX` follows the decoupled parameterization used by the
//! solver: the rotational increment left-multiplies the rotation and the
//! translational increment is added to the translation.

use nalgebra::{Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Cross-product matrix of `v`, so that `skew(v) * w == v.cross(&w)`.
#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula. Below `1e-8` rad the second-order Taylor expansion
/// `I + K + K²/2` is used.
pub fn exp_so3(xi: &Vec3) -> Mat3 {
    let theta2 = xi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(xi);
    let k2 = k * k;
    if theta < 1e-8 {
        return Mat3::identity() + k + k2 * 0.5;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Mat3::identity() + k * a + k2 * b
}

/// Six-dimensional increment `[ξ | φ]`: rotation (radians) then translation (mm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub xi: Vec3,
    pub phi: Vec3,
}

impl Twist {
    pub fn new(xi: Vec3, phi: Vec3) -> Self {
        Self { xi, phi }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
    }

    pub fn norm(&self) -> f64 {
        (self.xi.norm_squared() + self.phi.norm_squared()).sqrt()
    }
}

/// A rigid motion `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `X ⊕ ΔX = (exp(ξ^)·R, t + φ)`.
    pub fn compose_update(&self, dx: &Twist) -> Self {
        Self::new(exp_so3(&dx.xi) * self.rotation, self.translation + dx.phi)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`, i.e. apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn from_row_major(rotation: &[f64; 9], translation: &[f64; 3]) -> Self {
        Self::new(
            Mat3::from_row_slice(rotation),
            Vec3::new(translation[0], translation[1], translation[2]),
        )
    }

    /// Rotation angle of `self⁻¹ ∘ other`, in radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}

/// Checks `RᵀR = I` and `det R = 1` within `tol`.
pub fn is_rotation(r: &Mat3, tol: f64) -> bool {
    (r.transpose() * r - Mat3::identity()).norm() <= tol && (r.determinant() - 1.0).abs() <= tol
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Builds `Rz(rz)·Ry(ry)·Rx(rx)` from angles in degrees.
pub fn from_euler_zyx(rx_deg: f64, ry_deg: f64, rz_deg: f64) -> Mat3 {
    rot_z(rz_deg.to_radians()) * rot_y(ry_deg.to_radians()) * rot_x(rx_deg.to_radians())
}

const GIMBAL_EPS: f64 = 1e-6;

fn wrap_half_open_deg(a: f64) -> f64 {
    // atan2 may return exactly -180
    if a <= -180.0 {
        a + 360.0
    } else {
        a
    }
}

/// Intrinsic Z-Y-X decomposition of `R = Rz·Ry·Rx`, returned as
/// `[rx, ry, rz]` in degrees, each in `(-180, 180]`.
///
/// Within `1e-6` rad of gimbal lock, `rx` is set to zero and the
/// remaining rotation about the common axis is reported in `rz`.
pub fn euler_zyx(r: &Mat3) -> [f64; 3] {
    let sy = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let ry = sy.asin();
    let (rx, rz) = if (ry.abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_EPS {
        (0.0, (-r[(0, 1)]).atan2(r[(1, 1)]))
    } else {
        (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
    };
    [
        wrap_half_open_deg(rx.to_degrees()),
        wrap_half_open_deg(ry.to_degrees()),
        wrap_half_open_deg(rz.to_degrees()),
    ]
}

/// Least-squares rigid fit (no scale) mapping `src[i]` onto `dst[i]`.
///
/// Sign-corrected SVD keeps `det R = +1`.
pub fn umeyama_align(src: &[Vec3], dst: &[Vec3]) -> Result<RigidTransform, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::CountMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "need at least 3 correspondences, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;

    if is_collinear(src, &cs) || is_collinear(dst, &cd) {
        return Err(GeometryError::DegenerateConfiguration(
            "points are collinear".into(),
        ));
    }

    let mut cov = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - cd) * (s - cs).transpose();
    }
    cov /= n;

    let svd = SVD::new(cov, true, true);
    let u = svd.u.ok_or_else(|| GeometryError::DegenerateConfiguration("SVD failed".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| GeometryError::DegenerateConfiguration("SVD failed".into()))?;
    let mut s = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let translation = cd - rotation * cs;
    Ok(RigidTransform::new(rotation, translation))
}

fn is_collinear(points: &[Vec3], centroid: &Vec3) -> bool {
    let mut scatter = Mat3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0]
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut min = [first.x, first.y, first.z];
        let mut max = min;
        for p in it {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Some(Self { min, max })
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn extent(&self) -> Vec3 {
        Vec3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
    }

    /// Scales the half-extents about the center by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let h = self.extent() * (0.5 * factor);
        Self {
            min: [c.x - h.x, c.y - h.y, c.z - h.z],
            max: [c.x + h.x, c.y + h.y, c.z + h.z],
        }
    }

    pub fn padded(&self, pad: f64) -> Self {
        Self {
            min: [self.min[0] - pad, self.min[1] - pad, self.min[2] - pad],
            max: [self.max[0] + pad, self.max[1] + pad, self.max[2] + pad],
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    /// Truncated power series of the matrix exponential.
    fn exp_series(xi: &Vec3, terms: usize) -> Mat3 {
        let k = skew(xi);
        let mut sum = Mat3::identity();
        let mut term = Mat3::identity();
        for n in 1..terms {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    fn homogeneous(x: &RigidTransform) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&x.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&x.translation);
        m
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        assert_eq!(
            skew(&Vec3::new(1.0, 0.0, 0.0)),
            Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
        );
        let v = skew(&Vec3::new(1.0, 2.0, 3.0)) * Vec3::new(4.0, 5.0, 6.0);
        assert_eq!(v, Vec3::new(-3.0, 6.0, -3.0));
    }

    #[test]
    fn exp_examples() {
        assert_eq!(exp_so3(&Vec3::zeros()), Mat3::identity());
        let r = exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);

        let xi = Vec3::new(0.3, -0.2, 0.1);
        assert_relative_eq!(exp_so3(&xi), exp_series(&xi, 20), epsilon = 1e-12);
    }

    #[test]
    fn exp_small_angle_branch_matches_series() {
        let xi = Vec3::new(3e-9, -1e-9, 2e-9);
        assert_relative_eq!(exp_so3(&xi), exp_series(&xi, 6), epsilon = 1e-16);
    }

    #[test]
    fn compose_update_examples() {
        let x = RigidTransform::identity();
        assert_eq!(x.compose_update(&Twist::zero()), x);

        let x = RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let y = x.compose_update(&Twist::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)));
        assert_eq!(y.rotation, Mat3::identity());
        assert_eq!(y.translation, Vec3::new(2.0, 2.0, 3.0));

        let r0 = from_euler_zyx(10.0, -20.0, 30.0);
        let t0 = Vec3::new(4.0, 5.0, 6.0);
        let xi = Vec3::new(0.0, 0.0, FRAC_PI_2);
        let y = RigidTransform::new(r0, t0).compose_update(&Twist::new(xi, Vec3::zeros()));
        let z90 = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(y.rotation, z90 * r0, epsilon = 1e-12);
        assert_eq!(y.translation, t0);
    }

    #[test]
    fn transform_point_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(RigidTransform::identity().transform_point(&p), p);
        let rz = RigidTransform::new(exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_2)), Vec3::zeros());
        assert_relative_eq!(
            rz.transform_point(&Vec3::new(1.0, 0.0, 0.0)),
            Vec3::new(0.0, 1.0, 0.0),
            epsilon = 1e-15
        );
        let x = RigidTransform::new(from_euler_zyx(33.0, -12.0, 71.0), Vec3::new(-4.0, 9.5, 120.0));
        let p = Vec3::new(0.7, -3.1, 8.2);
        let h = homogeneous(&x) * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
        assert_relative_eq!(x.transform_point(&p), h.xyz(), epsilon = 1e-12);
    }

    #[test]
    fn euler_examples() {
        assert_eq!(euler_zyx(&Mat3::identity()), [0.0, 0.0, 0.0]);
        let e = euler_zyx(&exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_4)));
        assert_relative_eq!(e[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(e[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(e[2], 45.0, epsilon = 1e-12);
        let e = euler_zyx(&from_euler_zyx(10.0, 20.0, 30.0));
        for (a, b) in e.iter().zip([10.0, 20.0, 30.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn euler_range_is_half_open() {
        let e = euler_zyx(&exp_so3(&Vec3::new(0.0, 0.0, PI)));
        assert_relative_eq!(e[2], 180.0, epsilon = 1e-9);
        assert!(e.iter().all(|a| *a > -180.0 && *a <= 180.0));
    }

    #[test]
    fn euler_gimbal_lock_folds_into_rz() {
        for (rx, rz, ry) in [(20.0, 35.0, 90.0), (20.0, 35.0, -90.0)] {
            let r = from_euler_zyx(rx, ry, rz);
            let e = euler_zyx(&r);
            assert_eq!(e[0], 0.0);
            assert_relative_eq!(from_euler_zyx(e[0], e[1], e[2]), r, epsilon = 1e-9);
        }
    }

    #[test]
    fn umeyama_identity_and_exact() {
        let src = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(0.0, 7.0, 1.0),
        ];
        let x = umeyama_align(&src, &src).unwrap();
        assert_relative_eq!(x.rotation, Mat3::identity(), epsilon = 1e-10);
        assert_relative_eq!(x.translation, Vec3::zeros(), epsilon = 1e-10);

        let gt = RigidTransform::new(from_euler_zyx(40.0, -30.0, 120.0), Vec3::new(300.0, -20.0, 5.0));
        let dst: Vec<Vec3> = src.iter().map(|p| gt.transform_point(p)).collect();
        let x = umeyama_align(&src, &dst).unwrap();
        assert_relative_eq!(x.rotation, gt.rotation, epsilon = 1e-9);
        assert_relative_eq!(x.translation, gt.translation, epsilon = 1e-9);
    }

    #[test]
    fn umeyama_noisy_beats_identity() {
        use rand::{Rng, SeedableRng};
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut worst_ratio: f64 = 0.0;
        for _ in 0..200 {
            let gt = RigidTransform::new(
                from_euler_zyx(
                    rng.random_range(-45.0..45.0),
                    rng.random_range(-45.0..45.0),
                    rng.random_range(-45.0..45.0),
                ),
                Vec3::new(
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                ),
            );
            let src: Vec<Vec3> = (0..10)
                .map(|_| Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
                .collect();
            let dst: Vec<Vec3> = src
                .iter()
                .map(|p| gt.transform_point(p) + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            let x = umeyama_align(&src, &dst).unwrap();
            let rms = |t: &RigidTransform| {
                (src.iter().zip(&dst).map(|(s, d)| (t.transform_point(s) - d).norm_squared()).sum::<f64>() / 10.0).sqrt()
            };
            let fit = rms(&x);
            assert!(fit <= 3.0 * 0.5, "residual rms {fit}");
            assert!(fit < rms(&RigidTransform::identity()));
            worst_ratio = worst_ratio.max(fit / 0.5);
            assert!(is_rotation(&x.rotation, 1e-9));
        }
        assert!(worst_ratio > 0.0);
    }

    #[test]
    fn umeyama_rejects_degenerate() {
        let line = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0), Vec3::new(2.0, 2.0, 2.0)];
        assert!(matches!(umeyama_align(&line, &line), Err(GeometryError::DegenerateConfiguration(_))));
        let two = vec![Vec3::zeros(), Vec3::x()];
        assert!(matches!(umeyama_align(&two, &two), Err(GeometryError::DegenerateConfiguration(_))));
    }

    #[test]
    fn umeyama_reflection_case_keeps_proper_rotation() {
        // planar set mirrored through its plane: best proper rotation still has det +1
        let src = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(3.0, 1.0, 0.0),
        ];
        let dst: Vec<Vec3> = src.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let x = umeyama_align(&src, &dst).unwrap();
        assert!(is_rotation(&x.rotation, 1e-9));
    }

    fn arb_vec(range: f64) -> impl Strategy<Value = Vec3> {
        (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn arb_axis_angle() -> impl Strategy<Value = Vec3> {
        (arb_vec(1.0), 0.0..=PI).prop_filter_map("nonzero axis", |(a, th)| {
            let n = a.norm();
            (n > 1e-3).then(|| a / n * th)
        })
    }

    proptest! {
        #[test]
        fn exp_is_rotation(xi in arb_axis_angle()) {
            prop_assert!(is_rotation(&exp_so3(&xi), 1e-9));
        }

        #[test]
        fn exp_of_negation_is_transpose(xi in arb_axis_angle()) {
            let d = (exp_so3(&-xi) - exp_so3(&xi).transpose()).abs().max();
            prop_assert!(d <= 1e-10);
        }

        #[test]
        fn transform_preserves_distances(xi in arb_axis_angle(), t in arb_vec(1000.0), p in arb_vec(200.0), q in arb_vec(200.0)) {
            let x = RigidTransform::new(exp_so3(&xi), t);
            let d0 = (p - q).norm();
            let d1 = (x.transform_point(&p) - x.transform_point(&q)).norm();
            prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
        }

        #[test]
        fn euler_round_trip(rx in -179.0..179.0f64, ry in -85.0..85.0f64, rz in -179.0..179.0f64) {
            let e = euler_zyx(&from_euler_zyx(rx, ry, rz));
            prop_assert!((e[0] - rx).abs() < 1e-9 && (e[1] - ry).abs() < 1e-9 && (e[2] - rz).abs() < 1e-9);
        }

        #[test]
        fn umeyama_exact_on_noise_free(xi in arb_axis_angle(), t in arb_vec(1000.0), pts in proptest::collection::vec(arb_vec(100.0), 4..20)) {
            let gt = RigidTransform::new(exp_so3(&xi), t);
            let dst: Vec<Vec3> = pts.iter().map(|p| gt.transform_point(p)).collect();
            if let Ok(x) = umeyama_align(&pts, &dst) {
                for (s, d) in pts.iter().zip(&dst) {
                    prop_assert!((x.transform_point(s) - d).norm() <= 1e-9);
                }
            }
        }
    }
}
