//! Triangle meshes: storage, topology, closest-point queries and a few
//! procedural shapes used for synthetic experiments.

use std::collections::HashMap;

use crate::geometry::{Aabb, Vec3};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        Self { vertices, faces }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    #[inline]
    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit outward normal from the counter-clockwise winding.
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(self.vertices.iter())
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Removes faces with out-of-range indices, repeated indices or zero
    /// area. Returns the number of faces dropped.
    pub fn drop_degenerate_faces(&mut self) -> usize {
        let n = self.vertices.len() as u32;
        let before = self.faces.len();
        let verts = &self.vertices;
        self.faces.retain(|&[a, b, c]| {
            if a >= n || b >= n || c >= n || a == b || b == c || a == c {
                return false;
            }
            let (pa, pb, pc) = (verts[a as usize], verts[b as usize], verts[c as usize]);
            let cross = (pb - pa).cross(&(pc - pa));
            cross.norm_squared() > 0.0 && cross.iter().all(|v| v.is_finite())
        });
        before - self.faces.len()
    }

    /// Rigidly moves every vertex.
    pub fn transformed(&self, x: &crate::geometry::RigidTransform) -> Self {
        Self::new(
            self.vertices.iter().map(|v| x.transform_point(v)).collect(),
            self.faces.clone(),
        )
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.vertices.iter().map(|v| v * s).collect(), self.faces.clone())
    }

    /// Point at barycentric coordinates `(u, v, 1-u-v)` on face `f`.
    pub fn point_on_face(&self, f: usize, bary: [f64; 3]) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        a * bary[0] + b * bary[1] + c * bary[2]
    }
}

/// Edge-face incidence and per-face neighbours.
#[derive(Clone, Debug)]
pub struct MeshTopology {
    /// `neighbors[f][i]` is the face across the edge opposite vertex `i`.
    pub neighbors: Vec<[Option<u32>; 3]>,
    /// Number of edges not shared by exactly two faces.
    pub non_manifold_edges: usize,
    vertex_faces: Vec<Vec<u32>>,
}

impl MeshTopology {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let mut edges: HashMap<(u32, u32), Vec<(u32, usize)>> = HashMap::new();
        let mut vertex_faces = vec![Vec::new(); mesh.vertices.len()];
        for (f, tri) in mesh.faces.iter().enumerate() {
            for i in 0..3 {
                let a = tri[(i + 1) % 3];
                let b = tri[(i + 2) % 3];
                edges.entry((a.min(b), a.max(b))).or_default().push((f as u32, i));
                vertex_faces[tri[i] as usize].push(f as u32);
            }
        }
        let mut neighbors = vec![[None; 3]; mesh.faces.len()];
        let mut non_manifold_edges = 0;
        for incident in edges.values() {
            if incident.len() != 2 {
                non_manifold_edges += 1;
                continue;
            }
            let (f0, i0) = incident[0];
            let (f1, i1) = incident[1];
            neighbors[f0 as usize][i0] = Some(f1);
            neighbors[f1 as usize][i1] = Some(f0);
        }
        Self {
            neighbors,
            non_manifold_edges,
            vertex_faces,
        }
    }

    pub fn is_watertight(&self) -> bool {
        self.non_manifold_edges == 0
    }

    pub fn faces_of_vertex(&self, v: usize) -> &[u32] {
        &self.vertex_faces[v]
    }

    /// Vertex adjacency lists derived from face incidence.
    pub fn vertex_neighbors(&self, mesh: &TriangleMesh) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); mesh.vertices.len()];
        for tri in &mesh.faces {
            for i in 0..3 {
                let a = tri[i] as usize;
                for j in 1..3 {
                    let b = tri[(i + j) % 3];
                    if !adj[a].contains(&b) {
                        adj[a].push(b);
                    }
                }
            }
        }
        adj
    }
}

/// Which feature of a triangle a closest point lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Face,
    /// Edge opposite local vertex `i`.
    Edge(u8),
    /// Local vertex `i`.
    Vertex(u8),
}

/// Closest point on triangle `(a, b, c)` to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5), with the Voronoi feature it lies in.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(2));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(1));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(0));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}

/// Angle-weighted pseudonormals for signing distances to a closed mesh.
#[derive(Clone, Debug)]
pub struct Pseudonormals {
    pub face: Vec<Vec3>,
    pub vertex: Vec<Vec3>,
    /// Per face, the normal of the edge opposite each local vertex.
    pub edge: Vec<[Vec3; 3]>,
}

impl Pseudonormals {
    pub fn new(mesh: &TriangleMesh, topo: &MeshTopology) -> Self {
        let face: Vec<Vec3> = (0..mesh.faces.len()).map(|f| mesh.face_normal(f)).collect();
        let mut vertex = vec![Vec3::zeros(); mesh.vertices.len()];
        for (f, tri) in mesh.faces.iter().enumerate() {
            let pts = mesh.triangle(f);
            for i in 0..3 {
                let e1 = pts[(i + 1) % 3] - pts[i];
                let e2 = pts[(i + 2) % 3] - pts[i];
                let angle = e1.normalize().dot(&e2.normalize()).clamp(-1.0, 1.0).acos();
                vertex[tri[i] as usize] += face[f] * angle;
            }
        }
        for v in &mut vertex {
            let n = v.norm();
            if n > 0.0 {
                *v /= n;
            }
        }
        let edge = (0..mesh.faces.len())
            .map(|f| {
                let mut out = [face[f]; 3];
                for (i, slot) in out.iter_mut().enumerate() {
                    if let Some(g) = topo.neighbors[f][i] {
                        let s = face[f] + face[g as usize];
                        let n = s.norm();
                        if n > 0.0 {
                            *slot = s / n;
                        }
                    }
                }
                out
            })
            .collect();
        Self { face, vertex, edge }
    }

    pub fn at(&self, mesh: &TriangleMesh, f: usize, feature: Feature) -> Vec3 {
        match feature {
            Feature::Face => self.face[f],
            Feature::Edge(i) => self.edge[f][i as usize],
            Feature::Vertex(i) => self.vertex[mesh.faces[f][i as usize] as usize],
        }
    }
}

/// Icosphere centred at the origin. Subdivision 0 is the icosahedron
/// (20 faces); each level multiplies the face count by 4.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = ((vertices[a as usize] + vertices[b as usize]) * 0.5).normalize();
                vertices.push(m);
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriangleMesh::new(vertices, faces)
}

/// Axis-aligned box centred at `center` with full side lengths `size`,
/// each face split into `n × n` quads (two triangles each).
pub fn box_mesh(center: Vec3, size: Vec3, n: usize) -> TriangleMesh {
    let n = n.max(1);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut index: HashMap<[i64; 3], u32> = HashMap::new();
    // integer lattice coordinates on the cube surface, welded by key
    let mut vid = |g: [i64; 3], vertices: &mut Vec<Vec3>| -> u32 {
        *index.entry(g).or_insert_with(|| {
            let p = Vec3::new(
                center.x + size.x * (g[0] as f64 / n as f64 - 0.5),
                center.y + size.y * (g[1] as f64 / n as f64 - 0.5),
                center.z + size.z * (g[2] as f64 / n as f64 - 0.5),
            );
            vertices.push(p);
            (vertices.len() - 1) as u32
        })
    };
    let ni = n as i64;
    for axis in 0..3 {
        for &side in &[0i64, ni] {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..ni {
                for j in 0..ni {
                    let mut q = [[0i64; 3]; 4];
                    for (k, (di, dj)) in [(0, 0), (1, 0), (1, 1), (0, 1)].iter().enumerate() {
                        q[k][axis] = side;
                        q[k][u] = i + di;
                        q[k][v] = j + dj;
                    }
                    let ids: Vec<u32> = q.iter().map(|g| vid(*g, &mut vertices)).collect();
                    // (u, v, axis) is right-handed, so CCW in (u, v) faces +axis
                    if side == ni {
                        faces.push([ids[0], ids[1], ids[2]]);
                        faces.push([ids[0], ids[2], ids[3]]);
                    } else {
                        faces.push([ids[0], ids[2], ids[1]]);
                        faces.push([ids[0], ids[3], ids[2]]);
                    }
                }
            }
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// A smooth, asymmetric, watertight test shape loosely resembling a
/// proximal femur: an elongated ellipsoid with a bulbous head, a lesser
/// bump and a gentle bend. Lengths in millimetres, centred near the origin.
pub fn bone_like(subdivisions: u32) -> TriangleMesh {
    let sphere = icosphere(1.0, subdivisions);
    let lumps: [(Vec3, f64, f64); 5] = [
        (Vec3::new(0.5, 0.3, 0.81).normalize(), 0.45, 0.35),
        (Vec3::new(-0.6, 0.2, 0.77).normalize(), 0.18, 0.25),
        (Vec3::new(0.2, -0.9, -0.3).normalize(), 0.22, 0.30),
        (Vec3::new(-0.7, -0.4, -0.6).normalize(), 0.30, 0.35),
        (Vec3::new(0.9, 0.1, -0.4).normalize(), -0.12, 0.30),
    ];
    let semi = Vec3::new(30.0, 24.0, 75.0);
    let vertices = sphere
        .vertices
        .iter()
        .map(|u| {
            let bump: f64 = lumps
                .iter()
                .map(|(c, h, w)| h * (-(u - c).norm_squared() / (2.0 * w * w)).exp())
                .sum();
            let p = u.component_mul(&semi) * (1.0 + bump);
            // bend about y: x' = x + k z²
            Vec3::new(p.x + 0.0025 * p.z * p.z - 6.0, p.y, p.z)
        })
        .collect();
    TriangleMesh::new(vertices, sphere.faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signed_volume(m: &TriangleMesh) -> f64 {
        (0..m.faces.len())
            .map(|f| {
                let [a, b, c] = m.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    #[test]
    fn icosphere_counts_and_orientation() {
        let m = icosphere(50.0, 2);
        assert_eq!(m.faces.len(), 320);
        assert_eq!(m.vertices.len(), 162);
        assert!(MeshTopology::new(&m).is_watertight());
        assert!(signed_volume(&m) > 0.0);
        for v in &m.vertices {
            assert!((v.norm() - 50.0).abs() < 1e-9);
        }
    }

    #[test]
    fn box_is_closed_and_outward() {
        let m = box_mesh(Vec3::zeros(), Vec3::new(100.0, 100.0, 100.0), 3);
        assert_eq!(m.faces.len(), 6 * 9 * 2);
        assert!(MeshTopology::new(&m).is_watertight());
        assert!((signed_volume(&m) - 1e6).abs() < 1e-6);
        for f in 0..m.faces.len() {
            let [a, b, c] = m.triangle(f);
            let centroid = (a + b + c) / 3.0;
            assert!(m.face_normal(f).dot(&centroid) > 0.0);
        }
    }

    #[test]
    fn bone_like_is_closed_and_outward() {
        let m = bone_like(3);
        let topo = MeshTopology::new(&m);
        assert!(topo.is_watertight());
        assert!(signed_volume(&m) > 0.0);
        let bb = m.aabb().unwrap();
        assert!(bb.extent().z > 150.0);
    }

    #[test]
    fn closest_point_features() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        let (q, f) = closest_point_on_triangle(&Vec3::new(0.2, 0.2, 3.0), &a, &b, &c);
        assert_eq!(f, Feature::Face);
        assert!((q - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        let (q, f) = closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.5), &a, &b, &c);
        assert_eq!((q, f), (a, Feature::Vertex(0)));
        let (q, f) = closest_point_on_triangle(&Vec3::new(0.5, -2.0, 0.0), &a, &b, &c);
        assert_eq!(f, Feature::Edge(2));
        assert_eq!(q, Vec3::new(0.5, 0.0, 0.0));
        let (_, f) = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert_eq!(f, Feature::Edge(0));
        let (_, f) = closest_point_on_triangle(&Vec3::new(-1.0, 0.5, 0.0), &a, &b, &c);
        assert_eq!(f, Feature::Edge(1));
    }

    #[test]
    fn drops_degenerate_faces() {
        let mut m = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::x() * 2.0],
            vec![[0, 1, 2], [0, 1, 3], [0, 0, 2], [0, 1, 9]],
        );
        assert_eq!(m.drop_degenerate_faces(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        let mut m = icosphere(1.0, 1);
        m.faces.pop();
        assert!(!MeshTopology::new(&m).is_watertight());
    }
}
