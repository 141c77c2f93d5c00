//! Indexed triangle terrain: construction, point location, height queries
//! and finite-difference gradients.
//!
//! A [`TriangleMesh`] is immutable once built. All derived data (normals,
//! areas, one-rings, face adjacency and the 2D face index) is computed in
//! [`TriangleMesh::new`].

mod io;
mod shapes;
mod terrain;

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::spatial::GridIndex;

pub use io::{load_mesh, write_obj, MeshFormat};
pub use shapes::{cube, icosphere};
pub use terrain::{generate_terrain, TerrainKind, TerrainSpec};

/// Faces with area at or below this are dropped at construction.
pub const MIN_FACE_AREA: f64 = 1e-12;
/// Edge tolerance for the 2D point-in-triangle test.
pub const EDGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{format} parse error at line {line}: {message}")]
    Parse {
        format: &'static str,
        line: usize,
        message: String,
    },
    #[error("mesh has no usable faces")]
    Empty,
    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("query ({x:.6}, {y:.6}) is off the mesh")]
    OffMesh { x: f64, y: f64 },
    #[error("face {face} is vertical; height is undefined")]
    DegenerateFace { face: usize },
    #[error("invalid terrain spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How [`TriangleMesh::terrain_height`] turns a located face into a height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeightMode {
    /// Intersect the vertical line through `(x, y)` with the face plane.
    #[default]
    VerticalSolve,
    /// Project `(x, y, z0)` along the face normal and take the z component.
    NormalProjection,
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    face_normals: Vec<Vector3<f64>>,
    face_centroids: Vec<Point3<f64>>,
    face_areas: Vec<f64>,
    vertex_faces: Vec<Vec<usize>>,
    vertex_neighbors: Vec<Vec<usize>>,
    /// Entry `k` is the face across edge `(f[k], f[(k + 1) % 3])`.
    face_adjacency: Vec<[Option<usize>; 3]>,
    boundary: Vec<bool>,
    index: GridIndex,
    centroid_index: GridIndex,
    vertex_index: GridIndex,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    dropped_degenerate: usize,
}

impl TriangleMesh {
    /// Build a mesh from a vertex list and triangle index triples.
    ///
    /// Faces are re-wound so their normal has `n_z >= 0`; faces with area
    /// at most [`MIN_FACE_AREA`] are dropped and counted.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let n = vertices.len();
        let mut kept = Vec::with_capacity(faces.len());
        let mut dropped = 0;
        for (fi, f) in faces.into_iter().enumerate() {
            for &v in &f {
                if v >= n {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: v,
                        count: n,
                    });
                }
            }
            let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            let cross = (b - a).cross(&(c - a));
            if 0.5 * cross.norm() <= MIN_FACE_AREA || f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                dropped += 1;
                continue;
            }
            if cross.z < 0.0 {
                kept.push([f[0], f[2], f[1]]);
            } else {
                kept.push(f);
            }
        }
        if kept.is_empty() {
            return Err(MeshError::Empty);
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} degenerate faces");
        }
        let faces = kept;

        let mut face_normals = Vec::with_capacity(faces.len());
        let mut face_centroids = Vec::with_capacity(faces.len());
        let mut face_areas = Vec::with_capacity(faces.len());
        for f in &faces {
            let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            let cross = (b - a).cross(&(c - a));
            let len = cross.norm();
            face_normals.push(cross / len);
            face_areas.push(0.5 * len);
            face_centroids.push(Point3::from((a.coords + b.coords + c.coords) / 3.0));
        }

        let mut vertex_faces = vec![Vec::new(); n];
        let mut vertex_neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut edges: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                vertex_faces[a].push(fi);
                edges.entry((a.min(b), a.max(b))).or_default().push((fi, k));
                for (u, w) in [(a, b), (b, a)] {
                    if !vertex_neighbors[u].contains(&w) {
                        vertex_neighbors[u].push(w);
                    }
                }
            }
        }
        let mut face_adjacency = vec![[None; 3]; faces.len()];
        let mut boundary = vec![false; n];
        for (&(a, b), owners) in &edges {
            if owners.len() == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
            if owners.len() == 2 {
                let (f0, k0) = owners[0];
                let (f1, k1) = owners[1];
                face_adjacency[f0][k0] = Some(f1);
                face_adjacency[f1][k1] = Some(f0);
            }
        }
        for nb in &mut vertex_neighbors {
            nb.sort_unstable();
        }

        let mut bbox_min = [f64::INFINITY; 3];
        let mut bbox_max = [f64::NEG_INFINITY; 3];
        for v in &vertices {
            for k in 0..3 {
                bbox_min[k] = bbox_min[k].min(v[k]);
                bbox_max[k] = bbox_max[k].max(v[k]);
            }
        }

        let mean_diameter = faces
            .iter()
            .map(|f| {
                let p = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
                (0..3)
                    .map(|k| {
                        let d = p[(k + 1) % 3] - p[k];
                        d.x.hypot(d.y)
                    })
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / faces.len() as f64;
        let mut index = GridIndex::new([bbox_min[0], bbox_min[1]], [bbox_max[0], bbox_max[1]], mean_diameter);
        for (fi, f) in faces.iter().enumerate() {
            let (lo, hi) = footprint(&vertices, f);
            index.insert_box(fi, lo, hi);
        }
        let mut centroid_index = GridIndex::new([bbox_min[0], bbox_min[1]], [bbox_max[0], bbox_max[1]], mean_diameter);
        for (fi, c) in face_centroids.iter().enumerate() {
            centroid_index.insert_point(fi, c.x, c.y);
        }
        let mut vertex_index = GridIndex::new([bbox_min[0], bbox_min[1]], [bbox_max[0], bbox_max[1]], mean_diameter);
        for (vi, v) in vertices.iter().enumerate() {
            vertex_index.insert_point(vi, v.x, v.y);
        }

        Ok(Self {
            vertices,
            faces,
            face_normals,
            face_centroids,
            face_areas,
            vertex_faces,
            vertex_neighbors,
            face_adjacency,
            boundary,
            index,
            centroid_index,
            vertex_index,
            bbox_min,
            bbox_max,
            dropped_degenerate: dropped,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_normals(&self) -> &[Vector3<f64>] {
        &self.face_normals
    }

    pub fn face_centroids(&self) -> &[Point3<f64>] {
        &self.face_centroids
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    /// Faces incident to each vertex.
    pub fn vertex_faces(&self) -> &[Vec<usize>] {
        &self.vertex_faces
    }

    /// One-ring vertex neighbors, sorted.
    pub fn vertex_neighbors(&self) -> &[Vec<usize>] {
        &self.vertex_neighbors
    }

    pub fn face_adjacency(&self) -> &[[Option<usize>; 3]] {
        &self.face_adjacency
    }

    /// True for vertices on an edge used by only one face.
    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn dropped_degenerate(&self) -> usize {
        self.dropped_degenerate
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        (self.bbox_min, self.bbox_max)
    }

    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    /// Default reference height for normal-projection queries.
    pub fn default_z0(&self) -> f64 {
        self.bbox_max[2] + 1.0
    }

    pub fn face_points(&self, face: usize) -> [Point3<f64>; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    /// 2D barycentric coordinates of `(x, y)` in `face`'s footprint.
    /// `None` for faces with a degenerate footprint.
    pub fn barycentric_2d(&self, face: usize, x: f64, y: f64) -> Option<[f64; 3]> {
        let [a, b, c] = self.face_points(face);
        let det = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
        if det.abs() < 2.0 * MIN_FACE_AREA {
            return None;
        }
        let l0 = ((b.y - c.y) * (x - c.x) + (c.x - b.x) * (y - c.y)) / det;
        let l1 = ((c.y - a.y) * (x - c.x) + (a.x - c.x) * (y - c.y)) / det;
        Some([l0, l1, 1.0 - l0 - l1])
    }

    fn footprint_contains(&self, face: usize, x: f64, y: f64) -> bool {
        self.barycentric_2d(face, x, y)
            .is_some_and(|l| l.iter().all(|&w| w >= -EDGE_TOLERANCE))
    }

    /// Signed distance from `(x, y, z0)` to the plane of `face`.
    pub fn plane_distance(&self, face: usize, x: f64, y: f64, z0: f64) -> f64 {
        let n = self.face_normals[face];
        let d = -n.dot(&self.face_centroids[face].coords);
        n.x * x + n.y * y + n.z * z0 + d
    }

    /// Face under `(x, y)` using the default reference height.
    pub fn locate_face(&self, x: f64, y: f64) -> Option<usize> {
        self.locate_face_from(x, y, self.default_z0())
    }

    /// Among faces whose footprint contains `(x, y)`, the one whose plane is
    /// nearest (smallest `|gamma|`) to the reference point `(x, y, z0)`.
    /// Ties go to the lower face index.
    pub fn locate_face_from(&self, x: f64, y: f64, z0: f64) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for &fi in self.index.at(x, y) {
            let fi = fi as usize;
            if !self.footprint_contains(fi, x, y) {
                continue;
            }
            let g = self.plane_distance(fi, x, y, z0).abs();
            match best {
                Some((bg, bf)) if g > bg || (g == bg && fi > bf) => {}
                _ => best = Some((g, fi)),
            }
        }
        best.map(|(_, f)| f)
    }

    /// Same contract as [`locate_face_from`](Self::locate_face_from) without
    /// the spatial index. Used to cross-check the index.
    pub fn locate_face_brute(&self, x: f64, y: f64, z0: f64) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for fi in 0..self.faces.len() {
            if !self.footprint_contains(fi, x, y) {
                continue;
            }
            let g = self.plane_distance(fi, x, y, z0).abs();
            match best {
                Some((bg, bf)) if g > bg || (g == bg && fi > bf) => {}
                _ => best = Some((g, fi)),
            }
        }
        best.map(|(_, f)| f)
    }

    /// Height of the face plane under `(x, y)` for a given face.
    pub fn face_height(&self, face: usize, x: f64, y: f64, mode: HeightMode, z0: f64) -> Result<f64, MeshError> {
        let n = self.face_normals[face];
        let d = -n.dot(&self.face_centroids[face].coords);
        match mode {
            HeightMode::VerticalSolve => {
                if n.z.abs() < 1e-9 {
                    return Err(MeshError::DegenerateFace { face });
                }
                Ok(-(n.x * x + n.y * y + d) / n.z)
            }
            HeightMode::NormalProjection => {
                let gamma = (n.x * x + n.y * y + n.z * z0 + d) / n.norm();
                Ok(z0 - gamma * n.z)
            }
        }
    }

    /// Terrain height at `(x, y)`; `Ok(None)` off the mesh.
    pub fn terrain_height(&self, x: f64, y: f64, mode: HeightMode) -> Result<Option<f64>, MeshError> {
        let z0 = self.default_z0();
        match self.locate_face_from(x, y, z0) {
            None => Ok(None),
            Some(f) => self.face_height(f, x, y, mode, z0).map(Some),
        }
    }

    /// Default-mode height; `None` off the mesh or on a vertical face.
    pub fn height(&self, x: f64, y: f64) -> Option<f64> {
        self.terrain_height(x, y, HeightMode::VerticalSolve).ok().flatten()
    }

    /// Central-difference terrain gradient with step `step`.
    pub fn terrain_gradient(&self, x: f64, y: f64, step: f64) -> Result<(f64, f64), MeshError> {
        let h = |px: f64, py: f64| -> Result<f64, MeshError> {
            self.terrain_height(px, py, HeightMode::VerticalSolve)?
                .ok_or(MeshError::OffMesh { x: px, y: py })
        };
        let hx = (h(x + step, y)? - h(x - step, y)?) / (2.0 * step);
        let hy = (h(x, y + step)? - h(x, y - step)?) / (2.0 * step);
        Ok((hx, hy))
    }

    /// Visit faces whose centroid lies within 3D distance `radius` of `q`,
    /// passing the face id and that distance.
    pub fn for_each_face_near(&self, q: &Point3<f64>, radius: f64, mut f: impl FnMut(usize, f64)) {
        self.centroid_index.for_each_near(q.x, q.y, radius, |fi| {
            let d = (self.face_centroids[fi] - q).norm();
            if d <= radius {
                f(fi, d);
            }
        });
    }

    /// Visit vertices within 3D distance `radius` of `q`.
    pub fn for_each_vertex_near(&self, q: &Point3<f64>, radius: f64, mut f: impl FnMut(usize, f64)) {
        self.vertex_index.for_each_near(q.x, q.y, radius, |vi| {
            let d = (self.vertices[vi] - q).norm();
            if d <= radius {
                f(vi, d);
            }
        });
    }

    /// Copy of the mesh with every vertex shifted by `offset`.
    pub fn translated(&self, offset: Vector3<f64>) -> Result<Self, MeshError> {
        let verts = self.vertices.iter().map(|p| p + offset).collect();
        Self::new(verts, self.faces.clone())
    }
}

fn footprint(vertices: &[Point3<f64>], f: &[usize; 3]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &v in f {
        lo[0] = lo[0].min(vertices[v].x);
        lo[1] = lo[1].min(vertices[v].y);
        hi[0] = hi[0].max(vertices[v].x);
        hi[1] = hi[1].max(vertices[v].y);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn plane(f: impl Fn(f64, f64) -> f64, n: usize, extent: f64) -> TriangleMesh {
        let spec = TerrainSpec::grid(n, extent);
        let mut mesh_v = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let x = spec.extent[0] + (spec.extent[1] - spec.extent[0]) * i as f64 / (n - 1) as f64;
                let y = spec.extent[2] + (spec.extent[3] - spec.extent[2]) * j as f64 / (n - 1) as f64;
                mesh_v.push(Point3::new(x, y, f(x, y)));
            }
        }
        TriangleMesh::new(mesh_v, terrain::grid_faces(n, n)).unwrap()
    }

    #[test]
    fn upward_orientation_and_degenerate_drop() {
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ];
        let m = TriangleMesh::new(v, vec![[0, 2, 1], [0, 1, 3]]).unwrap();
        assert_eq!(m.num_faces(), 1);
        assert_eq!(m.dropped_degenerate(), 1);
        assert_abs_diff_eq!(m.face_normals()[0].z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let v = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        assert!(matches!(
            TriangleMesh::new(v, vec![[0, 1, 2]]),
            Err(MeshError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn height_modes_on_a_tilted_plane() {
        let m = plane(|x, _| 0.5 * x, 11, 2.0);
        let h = m.terrain_height(1.0, 0.0, HeightMode::VerticalSolve).unwrap().unwrap();
        assert_abs_diff_eq!(h, 0.5, epsilon = 1e-12);

        // Hand evaluation with z0 = 10 and the plane through the origin.
        let z0 = 10.0;
        let f = m.locate_face_from(1.0, 0.0, z0).unwrap();
        let s = 1.25f64.sqrt();
        let gamma = (-0.5 * 1.0 + z0) / s;
        let expected = z0 - gamma * (1.0 / s);
        let got = m.face_height(f, 1.0, 0.0, HeightMode::NormalProjection, z0).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        assert!((got - 0.5).abs() > 1e-3);
    }

    #[test]
    fn modes_agree_on_horizontal_faces() {
        let m = plane(|_, _| 2.0, 5, 1.0);
        for mode in [HeightMode::VerticalSolve, HeightMode::NormalProjection] {
            let h = m.terrain_height(0.3, -0.2, mode).unwrap().unwrap();
            assert_abs_diff_eq!(h, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stacked_planes_pick_nearest() {
        let mut v = Vec::new();
        for z in [0.0, 5.0] {
            v.extend([
                Point3::new(-1.0, -1.0, z),
                Point3::new(1.0, -1.0, z),
                Point3::new(0.0, 1.0, z),
            ]);
        }
        let m = TriangleMesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        // gamma = 1 for the lower plane, -4 for the upper.
        assert_eq!(m.locate_face_from(0.0, 0.0, 1.0), Some(0));
        assert_eq!(m.locate_face_from(0.0, 0.0, 4.0), Some(1));
    }

    #[test]
    fn off_mesh_queries() {
        let m = plane(|_, _| 0.0, 3, 1.0);
        assert_eq!(m.locate_face(5.0, 0.0), None);
        assert!(m.terrain_height(5.0, 0.0, HeightMode::VerticalSolve).unwrap().is_none());
        assert!(matches!(
            m.terrain_gradient(0.995, 0.0, 0.01),
            Err(MeshError::OffMesh { .. })
        ));
    }

    #[test]
    fn gradient_of_linear_and_sinusoid() {
        let m = plane(|x, y| 0.5 * x + 0.2 * y, 9, 2.0);
        let (gx, gy) = m.terrain_gradient(0.13, -0.41, 0.05).unwrap();
        assert_abs_diff_eq!(gx, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(gy, 0.2, epsilon = 1e-9);

        // Vertex spacing equal to the stencil step makes the mesh stencil
        // reproduce the analytic one.
        let m = plane(|x, _| x.sin(), 101, 0.5);
        let (gx, gy) = m.terrain_gradient(0.0, 0.0, 0.01).unwrap();
        assert_abs_diff_eq!(gx, 0.01f64.sin() / 0.01, epsilon = 1e-9);
        assert_abs_diff_eq!(gy, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn adjacency_and_boundary() {
        let m = plane(|_, _| 0.0, 3, 1.0);
        assert_eq!(m.num_faces(), 8);
        // Center vertex of a 3x3 grid is interior with six neighbors.
        assert!(!m.is_boundary(4));
        assert_eq!(m.vertex_neighbors()[4].len(), 6);
        assert!(m.is_boundary(0));
        let interior_edges = m.face_adjacency().iter().flatten().filter(|a| a.is_some()).count();
        // 8 interior edges, counted from both sides.
        assert_eq!(interior_edges, 16);
    }
}
