//! Closed reference surfaces with known curvature.

use std::collections::HashMap;

use nalgebra::Point3;

use super::{MeshError, TriangleMesh};

/// Geodesic sphere from a subdivided icosahedron, vertices on the sphere.
pub fn icosphere(radius: f64, subdivisions: usize) -> Result<TriangleMesh, MeshError> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Point3::from(Point3::new(p[0], p[1], p[2]).coords.normalize() * radius))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
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
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Point3<f64>>| -> usize {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (verts[a].coords + verts[b].coords).normalize() * radius;
                verts.push(Point3::from(m));
                verts.len() - 1
            })
        };
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.extend([[f[0], ab, ca], [f[1], bc, ab], [f[2], ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriangleMesh::new(verts, faces)
}

/// Axis-aligned cube `[0, side]^3`, two triangles per face.
pub fn cube(side: f64) -> Result<TriangleMesh, MeshError> {
    let verts = (0..8)
        .map(|i| {
            Point3::new(
                side * (i & 1) as f64,
                side * ((i >> 1) & 1) as f64,
                side * ((i >> 2) & 1) as f64,
            )
        })
        .collect();
    let quads = [
        [0, 1, 3, 2],
        [4, 6, 7, 5],
        [0, 4, 5, 1],
        [2, 3, 7, 6],
        [0, 2, 6, 4],
        [1, 5, 7, 3],
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriangleMesh::new(verts, faces)
}
