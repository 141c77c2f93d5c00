//! Local terrain descriptor and the discrete curvature operators behind it.
//!
//! Per-vertex curvature follows Meyer et al. (2003): Gaussian curvature from
//! the angle defect and mean curvature from the cotangent Laplace-Beltrami
//! operator, both normalized by the mixed Voronoi area. Query-point values
//! are inverse-distance blends of the vertex values.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::TriangleMesh;

/// Stabilizer in the distance weights `1 / (d + eps)`.
pub const WEIGHT_EPS: f64 = 1e-6;
/// Default neighborhood radius in meters.
pub const DEFAULT_RADIUS: f64 = 0.5;
const COT_CLAMP: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("no faces within {radius} m of ({x:.3}, {y:.3}, {z:.3})")]
    EmptyNeighborhood { x: f64, y: f64, z: f64, radius: f64 },
}

fn empty(q: &Point3<f64>, radius: f64) -> DescriptorError {
    DescriptorError::EmptyNeighborhood {
        x: q.x,
        y: q.y,
        z: q.z,
        radius,
    }
}

/// `[n_x, n_y, n_z, sigma_z, K, H, A_total]` around a query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainDescriptor {
    pub n_x: f64,
    pub n_y: f64,
    pub n_z: f64,
    /// Standard deviation of centroid heights, m.
    pub sigma_z: f64,
    /// Interpolated Gaussian curvature, 1/m^2.
    pub gauss_k: f64,
    /// Interpolated mean curvature, 1/m.
    pub mean_h: f64,
    /// Total area of faces in the neighborhood, m^2.
    pub a_total: f64,
}

impl TerrainDescriptor {
    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.n_x, self.n_y, self.n_z)
    }

    pub fn roughness(&self) -> f64 {
        self.sigma_z
    }

    /// Angle between the averaged normal and vertical, in `[0, pi/2]`.
    pub fn inclination(&self) -> f64 {
        descriptor_inclination(self)
    }

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.n_x,
            self.n_y,
            self.n_z,
            self.sigma_z,
            self.gauss_k,
            self.mean_h,
            self.a_total,
        ]
    }
}

pub fn descriptor_inclination(d: &TerrainDescriptor) -> f64 {
    d.n_z.clamp(0.0, 1.0).acos()
}

/// Area- and inverse-distance-weighted face normal around `q`.
pub fn weighted_normal(mesh: &TriangleMesh, q: &Point3<f64>, radius: f64) -> Result<Vector3<f64>, DescriptorError> {
    let mut acc = Vector3::zeros();
    let mut any = false;
    mesh.for_each_face_near(q, radius, |f, d| {
        acc += mesh.face_normals()[f] * (mesh.face_areas()[f] / (d + WEIGHT_EPS));
        any = true;
    });
    if !any {
        return Err(empty(q, radius));
    }
    let n = acc.norm();
    if n == 0.0 {
        return Ok(Vector3::z());
    }
    let mut out = acc / n;
    if out.z < 0.0 {
        out = -out;
    }
    Ok(out)
}

/// Population standard deviation of face-centroid heights around `q`.
pub fn roughness(mesh: &TriangleMesh, q: &Point3<f64>, radius: f64) -> Result<f64, DescriptorError> {
    let mut zs = Vec::new();
    mesh.for_each_face_near(q, radius, |f, _| zs.push(mesh.face_centroids()[f].z));
    if zs.is_empty() {
        return Err(empty(q, radius));
    }
    Ok(population_std(&zs))
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Per-vertex curvature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureCache {
    pub gauss_k: Vec<f64>,
    pub mean_h: Vec<f64>,
    pub mixed_area: Vec<f64>,
    /// Boundary vertices measure the angle defect against pi.
    pub boundary: Vec<bool>,
    /// False for vertices without incident faces.
    pub valid: Vec<bool>,
}

fn cot(u: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    let s = u.cross(v).norm();
    if s == 0.0 {
        return COT_CLAMP.copysign(u.dot(v));
    }
    (u.dot(v) / s).clamp(-COT_CLAMP, COT_CLAMP)
}

fn angle(u: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    u.cross(v).norm().atan2(u.dot(v))
}

pub fn vertex_curvatures(mesh: &TriangleMesh) -> CurvatureCache {
    let n = mesh.num_vertices();
    let mut angle_sum = vec![0.0; n];
    let mut mixed = vec![0.0; n];
    let mut laplace = vec![Vector3::zeros(); n];
    let verts = mesh.vertices();
    for (fi, f) in mesh.faces().iter().enumerate() {
        let area = mesh.face_areas()[fi];
        let p = [verts[f[0]], verts[f[1]], verts[f[2]]];
        let ang: [f64; 3] = std::array::from_fn(|k| angle(&(p[(k + 1) % 3] - p[k]), &(p[(k + 2) % 3] - p[k])));
        let cots: [f64; 3] = std::array::from_fn(|k| cot(&(p[(k + 1) % 3] - p[k]), &(p[(k + 2) % 3] - p[k])));
        let obtuse = ang.iter().position(|&a| a > FRAC_PI_2);
        for k in 0..3 {
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            let v = f[k];
            angle_sum[v] += ang[k];
            // Edge (k, i) is opposite corner j, edge (k, j) opposite corner i.
            let e_ki = p[k] - p[i];
            let e_kj = p[k] - p[j];
            laplace[v] += e_ki * cots[j] + e_kj * cots[i];
            mixed[v] += match obtuse {
                None => (e_kj.norm_squared() * cots[i] + e_ki.norm_squared() * cots[j]) / 8.0,
                Some(o) if o == k => area / 2.0,
                Some(_) => area / 4.0,
            };
        }
    }
    let mut gauss_k = vec![0.0; n];
    let mut mean_h = vec![0.0; n];
    let mut boundary = vec![false; n];
    let mut valid = vec![false; n];
    for v in 0..n {
        if mesh.vertex_faces()[v].is_empty() || mixed[v] <= 0.0 {
            continue;
        }
        valid[v] = true;
        boundary[v] = mesh.is_boundary(v);
        let full = if boundary[v] { PI } else { TAU };
        gauss_k[v] = (full - angle_sum[v]) / mixed[v];
        mean_h[v] = 0.5 * (laplace[v] / (2.0 * mixed[v])).norm();
    }
    CurvatureCache {
        gauss_k,
        mean_h,
        mixed_area: mixed,
        boundary,
        valid,
    }
}

/// Inverse-distance blend of vertex curvatures around `q`.
pub fn interpolate_curvature(
    cache: &CurvatureCache,
    mesh: &TriangleMesh,
    q: &Point3<f64>,
    radius: f64,
) -> Result<(f64, f64), DescriptorError> {
    let (mut wk, mut wh, mut ws) = (0.0, 0.0, 0.0);
    mesh.for_each_vertex_near(q, radius, |v, d| {
        if cache.valid[v] {
            let w = 1.0 / (d + WEIGHT_EPS);
            wk += w * cache.gauss_k[v];
            wh += w * cache.mean_h[v];
            ws += w;
        }
    });
    if ws == 0.0 {
        return Err(empty(q, radius));
    }
    Ok((wk / ws, wh / ws))
}

/// Full descriptor around `q`, one pass over the face neighborhood.
pub fn local_descriptor(
    mesh: &TriangleMesh,
    cache: &CurvatureCache,
    q: &Point3<f64>,
    radius: f64,
) -> Result<TerrainDescriptor, DescriptorError> {
    let mut acc = Vector3::zeros();
    let mut count = 0usize;
    let (mut a_total, mut z_sum, mut z_sq) = (0.0, 0.0, 0.0);
    // Shifted sums keep the variance well conditioned at large z.
    let z_ref = q.z;
    mesh.for_each_face_near(q, radius, |f, d| {
        let area = mesh.face_areas()[f];
        acc += mesh.face_normals()[f] * (area / (d + WEIGHT_EPS));
        a_total += area;
        let z = mesh.face_centroids()[f].z - z_ref;
        z_sum += z;
        z_sq += z * z;
        count += 1;
    });
    if count == 0 {
        return Err(empty(q, radius));
    }
    let nrm = acc.norm();
    let mut normal = if nrm > 0.0 { acc / nrm } else { Vector3::z() };
    if normal.z < 0.0 {
        normal = -normal;
    }
    let n = count as f64;
    let mean = z_sum / n;
    let sigma_z = (z_sq / n - mean * mean).max(0.0).sqrt();
    let (gauss_k, mean_h) = interpolate_curvature(cache, mesh, q, radius).unwrap_or((0.0, 0.0));
    Ok(TerrainDescriptor {
        n_x: normal.x,
        n_y: normal.y,
        n_z: normal.z,
        sigma_z,
        gauss_k,
        mean_h,
        a_total,
    })
}

/// 95th percentile of `sigma_z` over `samples` uniform on-mesh points.
/// Used to normalize roughness; never below 1e-6.
pub fn calibrate_roughness_max(mesh: &TriangleMesh, radius: f64, samples: usize, seed: u64) -> f64 {
    let (lo, hi) = mesh.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(samples);
    let mut attempts = 0;
    while values.len() < samples && attempts < samples * 20 {
        attempts += 1;
        let x = rng.random_range(lo[0]..=hi[0]);
        let y = rng.random_range(lo[1]..=hi[1]);
        let Some(z) = mesh.height(x, y) else { continue };
        if let Ok(s) = roughness(mesh, &Point3::new(x, y, z), radius) {
            values.push(s);
        }
    }
    if values.is_empty() {
        return 1e-6;
    }
    values.sort_by(f64::total_cmp);
    let idx = ((values.len() as f64 * 0.95).ceil() as usize).clamp(1, values.len()) - 1;
    values[idx].max(1e-6)
}
