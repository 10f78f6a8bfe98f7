//! Synthetic trial generation: probe strokes on exposed mesh regions, random
//! rigid displacements, Gaussian noise and outlier injection.
//!
//! Frame convention: the model and its SDF stay fixed. Sampled surface points
//! are moved by the inverse of the ground-truth transform, so registering the
//! moved cloud should recover the ground truth itself. Every operation is a
//! pure function of its inputs and seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SimulationError;
use crate::geometry::{exp_so3, from_euler_zyx, Aabb, RigidTransform, Vec3};
use crate::mesh::{MeshTopology, TriangleMesh};

/// Number of held-out landmarks per trial.
pub const LANDMARK_COUNT: usize = 10;

/// Faces of a mesh that are exposed and may be probed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    faces: Vec<u32>,
}

impl RegionMask {
    /// Validates indices against `mesh`; duplicates are removed.
    pub fn new(mut faces: Vec<u32>, mesh: &TriangleMesh) -> Result<Self, SimulationError> {
        if faces.is_empty() {
            return Err(SimulationError::InvalidMask("mask is empty".into()));
        }
        if let Some(bad) = faces.iter().find(|f| **f as usize >= mesh.faces.len()) {
            return Err(SimulationError::InvalidMask(format!(
                "face index {bad} out of range (mesh has {} faces)",
                mesh.faces.len()
            )));
        }
        faces.sort_unstable();
        faces.dedup();
        Ok(Self { faces })
    }

    pub fn whole(mesh: &TriangleMesh) -> Self {
        Self {
            faces: (0..mesh.faces.len() as u32).collect(),
        }
    }

    /// Parses one face index per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, mesh: &TriangleMesh) -> Result<Self, SimulationError> {
        let mut faces = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f = line
                .parse::<u32>()
                .map_err(|_| SimulationError::InvalidMask(format!("line {}: not a face index: {line:?}", n + 1)))?;
            faces.push(f);
        }
        Self::new(faces, mesh)
    }

    /// Faces whose three vertices lie within geodesic distance `radius` of
    /// `center_vertex`, measured along mesh edges.
    pub fn spherical_cap(mesh: &TriangleMesh, center_vertex: usize, radius: f64) -> Result<Self, SimulationError> {
        if center_vertex >= mesh.vertices.len() {
            return Err(SimulationError::InvalidMask(format!(
                "centre vertex {center_vertex} out of range"
            )));
        }
        if !(radius > 0.0) {
            return Err(SimulationError::InvalidMask("cap radius must be positive".into()));
        }
        let dist = edge_geodesic(mesh, center_vertex, radius);
        let faces: Vec<u32> = mesh
            .faces
            .iter()
            .enumerate()
            .filter(|(_, t)| t.iter().all(|v| dist[*v as usize] <= radius))
            .map(|(f, _)| f as u32)
            .collect();
        if faces.is_empty() {
            return Err(SimulationError::RegionTooSmall(format!(
                "no face lies entirely within {radius} mm of vertex {center_vertex}"
            )));
        }
        Ok(Self { faces })
    }

    pub fn faces(&self) -> &[u32] {
        &self.faces
    }

    pub fn contains(&self, f: usize) -> bool {
        self.faces.binary_search(&(f as u32)).is_ok()
    }

    pub fn area(&self, mesh: &TriangleMesh) -> f64 {
        self.faces.iter().map(|&f| mesh.face_area(f as usize)).sum()
    }

    /// Vertex closest to `p` among all mesh vertices.
    pub fn nearest_vertex(mesh: &TriangleMesh, p: &Vec3) -> usize {
        mesh.vertices
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - p).norm_squared().total_cmp(&(b.1 - p).norm_squared()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over mesh edges, truncated at `limit`.
fn edge_geodesic(mesh: &TriangleMesh, source: usize, limit: f64) -> Vec<f64> {
    let adj = MeshTopology::new(mesh).vertex_neighbors(mesh);
    let mut dist = vec![f64::INFINITY; mesh.vertices.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, v)) = heap.pop() {
        if d > dist[v] || d > limit {
            continue;
        }
        for &u in &adj[v] {
            let u = u as usize;
            let nd = d + (mesh.vertices[u] - mesh.vertices[v]).norm();
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(HeapItem(nd, u));
            }
        }
    }
    dist
}

fn random_barycentric(rng: &mut impl Rng) -> [f64; 3] {
    let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    [1.0 - u - v, u, v]
}

fn area_sampler(mesh: &TriangleMesh, faces: &[u32]) -> Result<WeightedIndex<f64>, SimulationError> {
    let areas: Vec<f64> = faces.iter().map(|&f| mesh.face_area(f as usize)).collect();
    WeightedIndex::new(&areas).map_err(|_| SimulationError::RegionTooSmall("region has zero area".into()))
}

/// `n` points uniformly distributed by area over the masked faces.
pub fn sample_surface_uniform(
    mesh: &TriangleMesh,
    mask: &RegionMask,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec3>, SimulationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = area_sampler(mesh, mask.faces())?;
    Ok((0..n)
        .map(|_| {
            let f = mask.faces()[dist.sample(&mut rng)] as usize;
            let bary = random_barycentric(&mut rng);
            mesh.point_on_face(f, bary)
        })
        .collect())
}

/// Barycentric coordinates of the projection of `p` onto the plane of face `f`.
fn barycentric(mesh: &TriangleMesh, f: usize, p: &Vec3) -> [f64; 3] {
    let [a, b, c] = mesh.triangle(f);
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let den = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    [1.0 - v - w, v, w]
}

fn clamp_bary(mut l: [f64; 3]) -> [f64; 3] {
    for x in l.iter_mut() {
        *x = x.max(0.0);
    }
    let s: f64 = l.iter().sum();
    l.map(|x| x / s)
}

/// Position on the surface during a stroke.
#[derive(Clone, Copy, Debug)]
struct Walker {
    face: usize,
    bary: [f64; 3],
    /// Unit heading in the plane of `face`.
    dir: Vec3,
}

enum Step {
    Arrived(Walker),
    Blocked,
}

/// Moves `len` mm along the surface, unfolding the heading across shared
/// edges. Fails if the path would leave the masked region.
fn advance(mesh: &TriangleMesh, topo: &MeshTopology, mask: &RegionMask, mut w: Walker, len: f64) -> Step {
    let mut remaining = len;
    for _ in 0..10_000 {
        let p = mesh.point_on_face(w.face, w.bary);
        let ahead = barycentric(mesh, w.face, &(p + w.dir));
        let rate = [0, 1, 2].map(|i| ahead[i] - w.bary[i]);
        let mut exit: Option<(f64, usize)> = None;
        for i in 0..3 {
            if rate[i] < -1e-15 {
                let s = (w.bary[i] / -rate[i]).max(0.0);
                if exit.is_none_or(|(best, _)| s < best) {
                    exit = Some((s, i));
                }
            }
        }
        let Some((s, edge)) = exit else {
            return Step::Blocked;
        };
        if s >= remaining {
            let bary = [0, 1, 2].map(|i| w.bary[i] + rate[i] * remaining);
            w.bary = clamp_bary(bary);
            return Step::Arrived(w);
        }
        remaining -= s;
        let Some(next) = topo.neighbors[w.face][edge] else {
            return Step::Blocked;
        };
        let next = next as usize;
        if !mask.contains(next) {
            return Step::Blocked;
        }
        let crossing = p + w.dir * s;
        let tri = mesh.faces[w.face];
        let ea = mesh.vertices[tri[(edge + 1) % 3] as usize];
        let eb = mesh.vertices[tri[(edge + 2) % 3] as usize];
        let e = (eb - ea).normalize();
        let nf = mesh.face_normal(w.face);
        let ng = mesh.face_normal(next);
        let along = w.dir.dot(&e);
        let across = w.dir.dot(&nf.cross(&e));
        let dir = (e * along + ng.cross(&e) * across).normalize();
        let bary = clamp_bary(barycentric(mesh, next, &crossing));
        // nudge off the shared edge so the next exit test starts inside
        let start = mesh.point_on_face(next, bary);
        let nudged = clamp_bary(barycentric(mesh, next, &(start + dir * 1e-9)));
        remaining -= 1e-9;
        w = Walker {
            face: next,
            bary: nudged,
            dir,
        };
        if remaining <= 0.0 {
            return Step::Arrived(w);
        }
    }
    Step::Blocked
}

fn rotate_in_plane(dir: &Vec3, normal: &Vec3, angle: f64) -> Vec3 {
    (exp_so3(&(normal * angle)) * dir).normalize()
}

fn random_tangent(normal: &Vec3, rng: &mut impl Rng) -> Vec3 {
    let helper = if normal.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = normal.cross(&helper).normalize();
    rotate_in_plane(&u, normal, rng.random_range(0.0..std::f64::consts::TAU))
}

const STROKE_ATTEMPTS: usize = 200;
const HEADING_RETRIES: usize = 24;
/// Standard deviation of the per-step change in turning rate, radians.
const TURN_JITTER: f64 = 0.04;
const MAX_TURN: f64 = 0.2;

/// Curved probe strokes over the masked faces.
///
/// Each stroke starts at an area-weighted random point of the mask and
/// walks across adjacent masked faces with a slowly drifting heading,
/// emitting one point every `spacing` mm of path length. When the walk
/// would leave the mask the heading is re-drawn; a stroke that stays stuck
/// is restarted elsewhere.
pub fn sample_probe_strokes(
    mesh: &TriangleMesh,
    mask: &RegionMask,
    n_strokes: usize,
    points_per_stroke: usize,
    spacing: f64,
    seed: u64,
) -> Result<Vec<Vec3>, SimulationError> {
    if n_strokes == 0 || points_per_stroke == 0 || !(spacing > 0.0) {
        return Err(SimulationError::InvalidSpec(
            "strokes, points per stroke and spacing must be positive".into(),
        ));
    }
    let area = mask.area(mesh);
    let needed = (n_strokes * points_per_stroke) as f64 * spacing * spacing;
    if area < needed {
        return Err(SimulationError::RegionTooSmall(format!(
            "mask area {area:.1} mm² is below the {needed:.1} mm² needed for {n_strokes}×{points_per_stroke} points at {spacing} mm"
        )));
    }
    let topo = MeshTopology::new(mesh);
    let sampler = area_sampler(mesh, mask.faces())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_strokes * points_per_stroke);
    for s in 0..n_strokes {
        let stroke = (0..STROKE_ATTEMPTS)
            .find_map(|_| one_stroke(mesh, &topo, mask, &sampler, points_per_stroke, spacing, &mut rng))
            .ok_or_else(|| {
                SimulationError::RegionTooSmall(format!(
                    "stroke {s}: could not fit {points_per_stroke} points at {spacing} mm spacing inside the mask"
                ))
            })?;
        out.extend(stroke);
    }
    Ok(out)
}

fn one_stroke(
    mesh: &TriangleMesh,
    topo: &MeshTopology,
    mask: &RegionMask,
    sampler: &WeightedIndex<f64>,
    n: usize,
    spacing: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec3>> {
    let face = mask.faces()[sampler.sample(rng)] as usize;
    let bary = random_barycentric(rng);
    let mut w = Walker {
        face,
        bary,
        dir: random_tangent(&mesh.face_normal(face), rng),
    };
    let jitter = Normal::new(0.0, TURN_JITTER).expect("valid deviation");
    let mut turn = 0.0f64;
    let mut points = vec![mesh.point_on_face(w.face, w.bary)];
    while points.len() < n {
        let mut moved = None;
        for attempt in 0..HEADING_RETRIES {
            let mut trial = w;
            if attempt > 0 {
                // widen the search: alternate sides with growing deflection
                let k = attempt.div_ceil(2) as f64;
                let sign = if attempt % 2 == 1 { 1.0 } else { -1.0 };
                let angle = sign * k * std::f64::consts::PI / (HEADING_RETRIES / 2) as f64;
                trial.dir = rotate_in_plane(&w.dir, &mesh.face_normal(w.face), angle);
            }
            if let Step::Arrived(next) = advance(mesh, topo, mask, trial, spacing) {
                moved = Some(next);
                break;
            }
        }
        w = moved?;
        points.push(mesh.point_on_face(w.face, w.bary));
        turn = (turn + jitter.sample(rng)).clamp(-MAX_TURN, MAX_TURN);
        w.dir = rotate_in_plane(&w.dir, &mesh.face_normal(w.face), turn);
    }
    Some(points)
}

fn symmetric_uniform(rng: &mut impl Rng, range: f64) -> f64 {
    if range == 0.0 {
        0.0
    } else {
        rng.random_range(-range..=range)
    }
}

/// Euler angles uniform in `[-rot_range, rot_range]` degrees (Z-Y-X) and
/// translation components uniform in `[-trans_range, trans_range]` mm.
pub fn random_rigid_transform(rot_range: f64, trans_range: f64, seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rx, ry, rz) = (
        symmetric_uniform(&mut rng, rot_range),
        symmetric_uniform(&mut rng, rot_range),
        symmetric_uniform(&mut rng, rot_range),
    );
    let t = Vec3::new(
        symmetric_uniform(&mut rng, trans_range),
        symmetric_uniform(&mut rng, trans_range),
        symmetric_uniform(&mut rng, trans_range),
    );
    RigidTransform::new(from_euler_zyx(rx, ry, rz), t)
}

/// Adds independent zero-mean Gaussian offsets; axis `k` uses `sigma[k]`.
pub fn add_gaussian_noise(points: &[Vec3], sigma: &Vec3, seed: u64) -> Result<Vec<Vec3>, SimulationError> {
    if sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(SimulationError::InvalidSpec(format!(
            "noise sigma must be finite and non-negative, got {sigma:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes = [0, 1, 2].map(|k| Normal::new(0.0, sigma[k]).expect("checked sigma"));
    Ok(points
        .iter()
        .map(|p| {
            let mut q = *p;
            for k in 0..3 {
                if sigma[k] > 0.0 {
                    q[k] += axes[k].sample(&mut rng);
                }
            }
            q
        })
        .collect())
}

/// Outlier count giving `ratio = N_out / (N_in + N_out)`.
pub fn outlier_count(n_inliers: usize, ratio: f64) -> usize {
    (ratio * n_inliers as f64 / (1.0 - ratio)).round() as usize
}

/// Mixed cloud and labels (`true` = inlier).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledCloud {
    pub points: Vec<Vec3>,
    pub inlier: Vec<bool>,
    pub outliers: Vec<Vec3>,
}

/// Draws outliers uniformly in `aabb` with half-extents scaled by
/// `1 + inflation` and shuffles them into `points`.
pub fn inject_outliers(
    points: &[Vec3],
    aabb: &Aabb,
    ratio: f64,
    inflation: f64,
    seed: u64,
) -> Result<LabelledCloud, SimulationError> {
    inject_outliers_in_frame(points, aabb, ratio, inflation, &RigidTransform::identity(), seed)
}

/// As [`inject_outliers`], with the box given in another frame: outliers are
/// drawn in the box and then mapped by `to_points_frame`.
pub fn inject_outliers_in_frame(
    points: &[Vec3],
    aabb: &Aabb,
    ratio: f64,
    inflation: f64,
    to_points_frame: &RigidTransform,
    seed: u64,
) -> Result<LabelledCloud, SimulationError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(SimulationError::InvalidSpec(format!("outlier ratio must lie in [0, 1), got {ratio}")));
    }
    if !(inflation >= 0.0) {
        return Err(SimulationError::InvalidSpec(format!("inflation must be non-negative, got {inflation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = aabb.scaled(1.0 + inflation);
    let n_out = outlier_count(points.len(), ratio);
    let outliers: Vec<Vec3> = (0..n_out)
        .map(|_| {
            let p = Vec3::new(
                uniform_between(&mut rng, region.min[0], region.max[0]),
                uniform_between(&mut rng, region.min[1], region.max[1]),
                uniform_between(&mut rng, region.min[2], region.max[2]),
            );
            to_points_frame.transform_point(&p)
        })
        .collect();
    let mut tagged: Vec<(Vec3, bool)> = points
        .iter()
        .map(|p| (*p, true))
        .chain(outliers.iter().map(|p| (*p, false)))
        .collect();
    tagged.shuffle(&mut rng);
    let (points, inlier) = tagged.into_iter().unzip();
    Ok(LabelledCloud {
        points,
        inlier,
        outliers,
    })
}

fn uniform_between(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Farthest-point sampling over mesh vertices from a seeded random start.
/// Ties go to the lowest vertex index.
pub fn farthest_point_landmarks(mesh: &TriangleMesh, n: usize, seed: u64) -> Vec<Vec3> {
    if mesh.vertices.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..mesh.vertices.len())];
    let mut dist: Vec<f64> = mesh
        .vertices
        .iter()
        .map(|v| (v - mesh.vertices[chosen[0]]).norm_squared())
        .collect();
    while chosen.len() < n.min(mesh.vertices.len()) {
        let (next, _) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, d)| if *d > best.1 { (i, *d) } else { best });
        chosen.push(next);
        for (d, v) in dist.iter_mut().zip(&mesh.vertices) {
            *d = d.min((v - mesh.vertices[next]).norm_squared());
        }
    }
    chosen.iter().map(|&i| mesh.vertices[i]).collect()
}

/// Declarative description of one synthetic trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub n_strokes: usize,
    pub points_per_stroke: usize,
    /// Arc length between consecutive stroke points, mm.
    pub stroke_spacing: f64,
    /// Per-axis Euler range, degrees.
    pub rot_range: f64,
    /// Per-axis translation range, mm.
    pub trans_range: f64,
    /// Per-axis noise standard deviation, mm.
    pub noise_sigma: [f64; 3],
    pub outlier_ratio: f64,
    pub aabb_inflation: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_strokes: 6,
            points_per_stroke: 100,
            stroke_spacing: 1.5,
            rot_range: 45.0,
            trans_range: 1000.0,
            noise_sigma: [0.0; 3],
            outlier_ratio: 0.0,
            aabb_inflation: 0.2,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidSpec(m));
        if self.n_strokes == 0 || self.points_per_stroke == 0 {
            return bad("n_strokes and points_per_stroke must be >= 1".into());
        }
        if !(self.stroke_spacing > 0.0) {
            return bad(format!("stroke_spacing must be positive, got {}", self.stroke_spacing));
        }
        if !(self.rot_range >= 0.0 && self.trans_range >= 0.0) {
            return bad("transform ranges must be non-negative".into());
        }
        if self.noise_sigma.iter().any(|s| !(*s >= 0.0)) {
            return bad("noise_sigma components must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.outlier_ratio) {
            return bad(format!("outlier_ratio must lie in [0, 1), got {}", self.outlier_ratio));
        }
        if !(self.aabb_inflation >= 0.0) {
            return bad("aabb_inflation must be non-negative".into());
        }
        Ok(())
    }

    pub fn n_inliers(&self) -> usize {
        self.n_strokes * self.points_per_stroke
    }
}

/// One synthetic registration problem with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTrial {
    /// Stroke points on the model surface (model frame).
    pub clean_points: Vec<Vec3>,
    /// Stroke points moved by `gt⁻¹` with noise added.
    pub noisy_points: Vec<Vec3>,
    /// Outliers in the moved frame.
    pub outlier_points: Vec<Vec3>,
    /// Shuffled union of noisy points and outliers.
    pub combined: Vec<Vec3>,
    /// `true` where `combined[k]` is a surface point.
    pub labels: Vec<bool>,
    /// Maps the moved frame onto the model.
    pub gt_transform: RigidTransform,
    pub landmarks_model: Vec<Vec3>,
    /// `gt⁻¹` applied to the model landmarks, noise-free.
    pub landmarks_moved: Vec<Vec3>,
}

impl SyntheticTrial {
    pub fn achieved_ratio(&self) -> f64 {
        self.outlier_points.len() as f64 / self.combined.len() as f64
    }
}

/// Independent sub-seeds for the stages of a trial.
struct Seeds {
    strokes: u64,
    transform: u64,
    noise: u64,
    outliers: u64,
    landmarks: u64,
}

impl Seeds {
    fn from(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        Self {
            strokes: master.next_u64(),
            transform: master.next_u64(),
            noise: master.next_u64(),
            outliers: master.next_u64(),
            landmarks: master.next_u64(),
        }
    }
}

/// Strokes, then `gt⁻¹`, then noise, then outliers; plus FPS landmarks.
///
/// Outliers are drawn around the model (its inflated bounding box) and
/// moved into the probe frame together with the surface points.
pub fn make_trial(mesh: &TriangleMesh, mask: &RegionMask, spec: &ExperimentSpec) -> Result<SyntheticTrial, SimulationError> {
    spec.validate()?;
    let seeds = Seeds::from(spec.seed);
    let clean = sample_probe_strokes(
        mesh,
        mask,
        spec.n_strokes,
        spec.points_per_stroke,
        spec.stroke_spacing,
        seeds.strokes,
    )?;
    let gt = random_rigid_transform(spec.rot_range, spec.trans_range, seeds.transform);
    let inv = gt.inverse();
    let moved: Vec<Vec3> = clean.iter().map(|p| inv.transform_point(p)).collect();
    let noisy = add_gaussian_noise(&moved, &Vec3::from(spec.noise_sigma), seeds.noise)?;
    let aabb = mesh
        .aabb()
        .ok_or_else(|| SimulationError::InvalidSpec("mesh has no vertices".into()))?;
    let mixed = inject_outliers_in_frame(&noisy, &aabb, spec.outlier_ratio, spec.aabb_inflation, &inv, seeds.outliers)?;
    let landmarks_model = farthest_point_landmarks(mesh, LANDMARK_COUNT, seeds.landmarks);
    let landmarks_moved = landmarks_model.iter().map(|p| inv.transform_point(p)).collect();
    Ok(SyntheticTrial {
        clean_points: clean,
        noisy_points: noisy,
        outlier_points: mixed.outliers,
        combined: mixed.points,
        labels: mixed.inlier,
        gt_transform: gt,
        landmarks_model,
        landmarks_moved,
    })
}
