//! Gradient signed-distance fields.
//!
//! A [`GradientSdf`] stores, at every voxel centre, the signed Euclidean
//! distance to a triangle mesh (negative inside) together with the unit
//! gradient of that distance. Queries interpolate both trilinearly.

use std::io::{Read, Write};

use log::warn;

use crate::error::SdfError;
use crate::geometry::{Aabb, Vec3};
use crate::mesh::{closest_point_on_triangle, Feature, MeshTopology, Pseudonormals, TriangleMesh};
use crate::par::{self, Execution};

pub const GSDF_MAGIC: &[u8; 4] = b"GSDF";
pub const GSDF_VERSION: u32 = 1;
/// Magic, version, dims, origin and voxel size.
pub const GSDF_HEADER_LEN: usize = 4 + 4 + 12 + 24 + 8;
pub const GSDF_RECORD_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct GradientSdf {
    /// Centre of voxel `(0, 0, 0)`.
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub distance: Vec<f32>,
    pub gradient: Vec<[f32; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfSample {
    pub distance: f64,
    pub gradient: Vec3,
    pub inside_grid: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    pub voxel_size: f64,
    pub padding: f64,
    pub execution: Execution,
    /// Use the BVH; `false` scans every triangle per voxel.
    pub accelerate: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            voxel_size: 1.0,
            padding: 10.0,
            execution: Execution::Parallel,
            accelerate: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SdfWarning {
    /// Signs are unreliable: some edges are not shared by exactly two faces.
    NonWatertightMesh { open_edges: usize },
}

#[derive(Clone, Debug, Default)]
pub struct BuildReport {
    pub warnings: Vec<SdfWarning>,
}

impl GradientSdf {
    pub fn from_parts(
        origin: Vec3,
        voxel_size: f64,
        dims: [usize; 3],
        distance: Vec<f32>,
        gradient: Vec<[f32; 3]>,
    ) -> Result<Self, SdfError> {
        let n = dims.iter().product::<usize>();
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(SdfError::InvalidParameter(format!("voxel size {voxel_size}")));
        }
        if n == 0 || distance.len() != n || gradient.len() != n {
            return Err(SdfError::InvalidParameter(format!(
                "dims {dims:?} do not match {} distances / {} gradients",
                distance.len(),
                gradient.len()
            )));
        }
        Ok(Self {
            origin,
            voxel_size,
            dims,
            distance,
            gradient,
        })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn len(&self) -> usize {
        self.distance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distance.is_empty()
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Bounding box of the lattice of voxel centres.
    pub fn lattice_bounds(&self) -> Aabb {
        let hi = self.voxel_center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1);
        Aabb {
            min: [self.origin.x, self.origin.y, self.origin.z],
            max: [hi.x, hi.y, hi.z],
        }
    }

    pub fn diagonal(&self) -> f64 {
        self.lattice_bounds().extent().norm()
    }

    fn stored(&self, idx: usize) -> (f64, Vec3) {
        let g = self.gradient[idx];
        (
            self.distance[idx] as f64,
            Vec3::new(g[0] as f64, g[1] as f64, g[2] as f64),
        )
    }

    /// Distance and gradient at `p`.
    ///
    /// Inside the lattice both are trilinearly interpolated and the gradient
    /// renormalised. Outside, `p` is clamped to the nearest lattice point `q`
    /// and the distance extrapolated as `d(q) + |p - q|`.
    pub fn query(&self, p: &Vec3) -> SdfSample {
        let g = (p - self.origin) / self.voxel_size;
        let mut clamped = g;
        let mut inside = true;
        for k in 0..3 {
            let hi = (self.dims[k] - 1) as f64;
            if !(g[k] >= 0.0 && g[k] <= hi) {
                inside = false;
                clamped[k] = g[k].clamp(0.0, hi);
            }
        }
        if inside {
            let (distance, gradient) = self.interpolate(&g);
            return SdfSample {
                distance,
                gradient,
                inside_grid: true,
            };
        }
        let q = self.origin + clamped * self.voxel_size;
        let (dq, gq) = self.interpolate(&clamped);
        let out = p - q;
        let len = out.norm();
        let mut gradient = (out / len) * 0.5 + gq * 0.5;
        let n = gradient.norm();
        gradient = if n > 1e-9 { gradient / n } else { out / len };
        SdfSample {
            distance: dq + len,
            gradient,
            inside_grid: false,
        }
    }

    /// Interpolated distance only.
    pub fn distance_at(&self, p: &Vec3) -> f64 {
        self.query(p).distance
    }

    fn lattice_snap(&self, g: &Vec3) -> Option<usize> {
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let r = g[k].round();
            if (g[k] - r).abs() > 1e-9 {
                return None;
            }
            idx[k] = r as usize;
        }
        Some(self.index(idx[0], idx[1], idx[2]))
    }

    fn cell(&self, g: &Vec3) -> ([usize; 3], [usize; 3], [f64; 3]) {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0.0; 3];
        for k in 0..3 {
            let n = self.dims[k];
            if n == 1 {
                continue;
            }
            let i = (g[k].floor() as usize).min(n - 2);
            lo[k] = i;
            hi[k] = i + 1;
            t[k] = g[k] - i as f64;
        }
        (lo, hi, t)
    }

    fn trilinear_distance(&self, g: &Vec3) -> f64 {
        let (lo, hi, t) = self.cell(g);
        let mut acc = 0.0;
        for c in 0..8 {
            let (i, wi) = if c & 1 == 0 { (lo[0], 1.0 - t[0]) } else { (hi[0], t[0]) };
            let (j, wj) = if c & 2 == 0 { (lo[1], 1.0 - t[1]) } else { (hi[1], t[1]) };
            let (k, wk) = if c & 4 == 0 { (lo[2], 1.0 - t[2]) } else { (hi[2], t[2]) };
            acc += wi * wj * wk * self.distance[self.index(i, j, k)] as f64;
        }
        acc
    }

    fn interpolate(&self, g: &Vec3) -> (f64, Vec3) {
        if let Some(idx) = self.lattice_snap(g) {
            return self.stored(idx);
        }
        let (lo, hi, t) = self.cell(g);
        let mut d = 0.0;
        let mut grad = Vec3::zeros();
        for c in 0..8 {
            let (i, wi) = if c & 1 == 0 { (lo[0], 1.0 - t[0]) } else { (hi[0], t[0]) };
            let (j, wj) = if c & 2 == 0 { (lo[1], 1.0 - t[1]) } else { (hi[1], t[1]) };
            let (k, wk) = if c & 4 == 0 { (lo[2], 1.0 - t[2]) } else { (hi[2], t[2]) };
            let w = wi * wj * wk;
            let (dv, gv) = self.stored(self.index(i, j, k));
            d += w * dv;
            grad += gv * w;
        }
        let n = grad.norm();
        if n >= 1e-6 {
            return (d, grad / n);
        }
        (d, self.finite_difference_gradient(g))
    }

    fn finite_difference_gradient(&self, g: &Vec3) -> Vec3 {
        let h = 0.25;
        let mut out = Vec3::zeros();
        for k in 0..3 {
            let hi = (self.dims[k] - 1) as f64;
            let mut gp = *g;
            let mut gm = *g;
            gp[k] = (g[k] + h).min(hi);
            gm[k] = (g[k] - h).max(0.0);
            let span = (gp[k] - gm[k]) * self.voxel_size;
            if span > 0.0 {
                out[k] = (self.trilinear_distance(&gp) - self.trilinear_distance(&gm)) / span;
            }
        }
        let n = out.norm();
        if n > 0.0 {
            out / n
        } else {
            Vec3::x()
        }
    }

    /// Writes the little-endian GSDF format.
    pub fn serialize<W: Write>(&self, mut sink: W) -> Result<(), SdfError> {
        let mut header = Vec::with_capacity(GSDF_HEADER_LEN);
        header.extend_from_slice(GSDF_MAGIC);
        header.extend_from_slice(&GSDF_VERSION.to_le_bytes());
        for d in self.dims {
            header.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.origin.iter() {
            header.extend_from_slice(&v.to_le_bytes());
        }
        header.extend_from_slice(&self.voxel_size.to_le_bytes());
        sink.write_all(&header)?;
        let mut buf = Vec::with_capacity(GSDF_RECORD_LEN * 4096);
        for (d, g) in self.distance.iter().zip(&self.gradient) {
            buf.extend_from_slice(&d.to_le_bytes());
            for c in g {
                buf.extend_from_slice(&c.to_le_bytes());
            }
            if buf.len() >= GSDF_RECORD_LEN * 4096 {
                sink.write_all(&buf)?;
                buf.clear();
            }
        }
        sink.write_all(&buf)?;
        sink.flush()?;
        Ok(())
    }

    pub fn deserialize<R: Read>(mut source: R) -> Result<Self, SdfError> {
        let mut header = [0u8; GSDF_HEADER_LEN];
        read_exact(&mut source, &mut header[..4])?;
        if &header[..4] != GSDF_MAGIC {
            return Err(SdfError::BadMagic);
        }
        read_exact(&mut source, &mut header[4..])?;
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != GSDF_VERSION {
            return Err(SdfError::UnsupportedVersion(version));
        }
        let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
        let origin = Vec3::new(f64_at(20), f64_at(28), f64_at(36));
        let voxel_size = f64_at(44);
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| SdfError::InvalidParameter(format!("dims {dims:?}")))?;
        let mut distance = Vec::with_capacity(n.min(1 << 24));
        let mut gradient = Vec::with_capacity(n.min(1 << 24));
        let mut rec = [0u8; GSDF_RECORD_LEN];
        let f32_at = |r: &[u8; GSDF_RECORD_LEN], o: usize| f32::from_le_bytes(r[o..o + 4].try_into().unwrap());
        let mut reader = std::io::BufReader::new(source);
        for _ in 0..n {
            read_exact(&mut reader, &mut rec)?;
            distance.push(f32_at(&rec, 0));
            gradient.push([f32_at(&rec, 4), f32_at(&rec, 8), f32_at(&rec, 12)]);
        }
        Self::from_parts(origin, voxel_size, dims, distance, gradient)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), SdfError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => SdfError::TruncatedStream,
        _ => SdfError::Io(e),
    })
}

/// Result of a closest-triangle search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestHit {
    pub face: usize,
    pub point: Vec3,
    pub feature: Feature,
    pub dist2: f64,
}

impl ClosestHit {
    /// Lexicographic `(dist2, face)` order used for tie-breaking.
    #[inline]
    fn beats(&self, other: &ClosestHit) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.face < other.face)
    }
}

fn hit(mesh: &TriangleMesh, f: usize, p: &Vec3) -> ClosestHit {
    let [a, b, c] = mesh.triangle(f);
    let (q, feature) = closest_point_on_triangle(p, &a, &b, &c);
    ClosestHit {
        face: f,
        point: q,
        feature,
        dist2: (p - q).norm_squared(),
    }
}

/// Scans every triangle; keeps the lowest face index on ties.
pub fn closest_brute_force(mesh: &TriangleMesh, p: &Vec3) -> Option<ClosestHit> {
    let mut best: Option<ClosestHit> = None;
    for f in 0..mesh.faces.len() {
        let h = hit(mesh, f, p);
        if best.as_ref().is_none_or(|b| h.beats(b)) {
            best = Some(h);
        }
    }
    best
}

#[derive(Clone, Copy, Debug)]
struct BvhNode {
    min: [f64; 3],
    max: [f64; 3],
    /// Leaf: `[start, start + count)` into `order`. Inner: children indices.
    left_or_start: u32,
    right_or_count: u32,
    leaf: bool,
}

impl BvhNode {
    #[inline]
    fn dist2(&self, p: &Vec3) -> f64 {
        let mut acc = 0.0;
        for k in 0..3 {
            let d = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            acc += d * d;
        }
        acc
    }
}

/// Bounding volume hierarchy over mesh triangles for exact closest-point search.
pub struct TriangleBvh<'m> {
    mesh: &'m TriangleMesh,
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

const LEAF_SIZE: usize = 4;

impl<'m> TriangleBvh<'m> {
    pub fn new(mesh: &'m TriangleMesh) -> Self {
        let mut order: Vec<u32> = (0..mesh.faces.len() as u32).collect();
        let centroids: Vec<Vec3> = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (a + b + c) / 3.0
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * mesh.faces.len() / LEAF_SIZE + 1);
        if !order.is_empty() {
            let n = order.len();
            build_node(mesh, &centroids, &mut order, 0, n, &mut nodes);
        }
        Self { mesh, nodes, order }
    }

    /// Exact closest triangle, identical to [`closest_brute_force`] including
    /// tie-breaks. `seed` is an optional face whose distance bounds the search.
    pub fn closest(&self, p: &Vec3, seed: Option<usize>) -> Option<ClosestHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = seed.map(|f| hit(self.mesh, f, p));
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, self.nodes[0].dist2(p)));
        while let Some((ni, lb)) = stack.pop() {
            if let Some(b) = &best {
                if prune(lb, b.dist2) {
                    continue;
                }
            }
            let node = &self.nodes[ni as usize];
            if node.leaf {
                let start = node.left_or_start as usize;
                for &f in &self.order[start..start + node.right_or_count as usize] {
                    let h = hit(self.mesh, f as usize, p);
                    if best.as_ref().is_none_or(|b| h.beats(b)) {
                        best = Some(h);
                    }
                }
            } else {
                let l = node.left_or_start;
                let r = node.right_or_count;
                let dl = self.nodes[l as usize].dist2(p);
                let dr = self.nodes[r as usize].dist2(p);
                // nearer child popped first
                if dl <= dr {
                    stack.push((r, dr));
                    stack.push((l, dl));
                } else {
                    stack.push((l, dl));
                    stack.push((r, dr));
                }
            }
        }
        best
    }
}

#[inline]
fn prune(box_d2: f64, best_d2: f64) -> bool {
    // slack covers rounding in the closest-point computation
    box_d2 > best_d2 * (1.0 + 1e-9) + 1e-12
}

fn build_node(
    mesh: &TriangleMesh,
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<BvhNode>,
) -> u32 {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    let mut cmin = [f64::INFINITY; 3];
    let mut cmax = [f64::NEG_INFINITY; 3];
    for &f in &order[start..end] {
        for v in mesh.triangle(f as usize) {
            for k in 0..3 {
                min[k] = min[k].min(v[k]);
                max[k] = max[k].max(v[k]);
            }
        }
        let c = centroids[f as usize];
        for k in 0..3 {
            cmin[k] = cmin[k].min(c[k]);
            cmax[k] = cmax[k].max(c[k]);
        }
    }
    let id = nodes.len() as u32;
    nodes.push(BvhNode {
        min,
        max,
        left_or_start: start as u32,
        right_or_count: (end - start) as u32,
        leaf: true,
    });
    if end - start <= LEAF_SIZE {
        return id;
    }
    let axis = (0..3)
        .max_by(|&a, &b| (cmax[a] - cmin[a]).total_cmp(&(cmax[b] - cmin[b])))
        .unwrap();
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let l = build_node(mesh, centroids, order, start, mid, nodes);
    let r = build_node(mesh, centroids, order, mid, end, nodes);
    let node = &mut nodes[id as usize];
    node.leaf = false;
    node.left_or_start = l;
    node.right_or_count = r;
    id
}

/// Grid geometry for a mesh: the lattice of voxel centres covers the mesh
/// bounding box inflated by `padding` on every side.
pub fn grid_layout(bounds: &Aabb, voxel_size: f64, padding: f64) -> (Vec3, [usize; 3]) {
    let b = bounds.padded(padding);
    let e = b.extent();
    let dims = [0, 1, 2].map(|k| ((e[k] / voxel_size).ceil() as usize + 1).max(2));
    (Vec3::new(b.min[0], b.min[1], b.min[2]), dims)
}

/// Builds a gradient SDF from `mesh` at the requested resolution.
pub fn build_gradient_sdf(
    mesh: &TriangleMesh,
    options: &BuildOptions,
) -> Result<(GradientSdf, BuildReport), SdfError> {
    if mesh.is_empty() {
        return Err(SdfError::EmptyMesh);
    }
    if !(options.voxel_size > 0.0 && options.voxel_size.is_finite()) {
        return Err(SdfError::InvalidParameter(format!(
            "voxel size must be positive, got {}",
            options.voxel_size
        )));
    }
    if !(options.padding >= 0.0 && options.padding.is_finite()) {
        return Err(SdfError::InvalidParameter(format!(
            "padding must be non-negative, got {}",
            options.padding
        )));
    }
    let topo = MeshTopology::new(mesh);
    let mut report = BuildReport::default();
    if !topo.is_watertight() {
        warn!(
            "mesh is not watertight ({} open or non-manifold edges); distance signs may be unreliable",
            topo.non_manifold_edges
        );
        report.warnings.push(SdfWarning::NonWatertightMesh {
            open_edges: topo.non_manifold_edges,
        });
    }
    let normals = Pseudonormals::new(mesh, &topo);
    let bounds = mesh.aabb().ok_or(SdfError::EmptyMesh)?;
    let (origin, dims) = grid_layout(&bounds, options.voxel_size, options.padding);
    let n = dims.iter().product::<usize>();
    let bvh = options.accelerate.then(|| TriangleBvh::new(mesh));

    let mut records = vec![(0f32, [0f32; 3]); n];
    let row = dims[0];
    par::fill_chunks(options.execution, &mut records, row, |start, slice| {
        let j = (start / row) % dims[1];
        let k = start / (row * dims[1]);
        let mut seed = None;
        for (i, rec) in slice.iter_mut().enumerate() {
            let p = origin + Vec3::new(i as f64, j as f64, k as f64) * options.voxel_size;
            let h = match &bvh {
                Some(bvh) => bvh.closest(&p, seed),
                None => closest_brute_force(mesh, &p),
            }
            .expect("non-empty mesh");
            seed = Some(h.face);
            *rec = voxel_record(mesh, &normals, &p, &h);
        }
    });
    let (distance, gradient) = records.into_iter().unzip();
    let sdf = GradientSdf::from_parts(origin, options.voxel_size, dims, distance, gradient)?;
    Ok((sdf, report))
}

fn voxel_record(mesh: &TriangleMesh, normals: &Pseudonormals, p: &Vec3, h: &ClosestHit) -> (f32, [f32; 3]) {
    let unsigned = h.dist2.sqrt();
    let pn = normals.at(mesh, h.face, h.feature);
    let offset = p - h.point;
    let sign = if offset.dot(&pn) < 0.0 { -1.0 } else { 1.0 };
    let gradient = if unsigned >= 1e-9 {
        offset / (sign * unsigned)
    } else {
        pn
    };
    let g = gradient.normalize();
    ((sign * unsigned) as f32, [g.x as f32, g.y as f32, g.z as f32])
}
