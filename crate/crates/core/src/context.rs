//! A mesh bundled with the per-mesh precomputation that planning needs.

use nalgebra::Point3;

use crate::descriptor::{self, CurvatureCache, TerrainDescriptor, DEFAULT_RADIUS};
use crate::mesh::TriangleMesh;

pub const DEFAULT_FD_STEP: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct TerrainContext {
    pub mesh: TriangleMesh,
    pub curvature: CurvatureCache,
    /// Calibrated roughness normalizer (95th percentile of `sigma_z`).
    pub roughness_max: f64,
    pub radius: f64,
    /// Finite-difference step for terrain gradients.
    pub fd_step: f64,
}

impl TerrainContext {
    pub fn new(mesh: TriangleMesh) -> Self {
        Self::with_radius(mesh, DEFAULT_RADIUS, 0)
    }

    pub fn with_radius(mesh: TriangleMesh, radius: f64, seed: u64) -> Self {
        let curvature = descriptor::vertex_curvatures(&mesh);
        let roughness_max = descriptor::calibrate_roughness_max(&mesh, radius, 500, seed);
        Self {
            mesh,
            curvature,
            roughness_max,
            radius,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn descriptor(&self, p: &Point3<f64>) -> Option<TerrainDescriptor> {
        descriptor::local_descriptor(&self.mesh, &self.curvature, p, self.radius).ok()
    }

    /// Face and height under `(x, y)`.
    pub fn surface(&self, x: f64, y: f64) -> Option<(usize, f64)> {
        let f = self.mesh.locate_face(x, y)?;
        let z = self
            .mesh
            .face_height(f, x, y, Default::default(), self.mesh.default_z0())
            .ok()?;
        Some((f, z))
    }

    /// Central-difference gradient, falling back to the face plane slope
    /// when a stencil point leaves the mesh.
    pub fn gradient(&self, x: f64, y: f64, face: usize) -> (f64, f64) {
        match self.mesh.terrain_gradient(x, y, self.fd_step) {
            Ok(g) => g,
            Err(_) => {
                let n = self.mesh.face_normals()[face];
                if n.z.abs() < 1e-9 {
                    (0.0, 0.0)
                } else {
                    (-n.x / n.z, -n.y / n.z)
                }
            }
        }
    }
}
