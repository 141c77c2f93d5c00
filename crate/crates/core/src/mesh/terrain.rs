use nalgebra::Point3;
use noise::{Fbm, MultiFractal, NoiseFn, Perlin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MeshError, TriangleMesh};

/// Height-field shape for a generated terrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TerrainKind {
    FlatPlane,
    /// `z = slope * (x cos(heading) + y sin(heading))`.
    InclinedPlane {
        slope: f64,
        #[serde(default)]
        heading: f64,
    },
    /// `z = amplitude * sin(2 pi x / wavelength)`.
    Sinusoidal {
        amplitude: f64,
        wavelength: f64,
    },
    /// Perlin fBm scaled by `amplitude`.
    FractalNoise {
        amplitude: f64,
        octaves: usize,
        seed: u32,
        #[serde(default = "default_wavelength")]
        wavelength: f64,
    },
    /// Gaussian ring ridge of the given height around `(x, y)`.
    Crater {
        x: f64,
        y: f64,
        radius: f64,
        width: f64,
        height: f64,
    },
    /// `count` Gaussian bumps scattered uniformly over
    /// `[-spread, spread]^2`, each with height drawn from
    /// `[0.6, 1.0] * height` and standard deviation `sigma`.
    Mounds {
        count: usize,
        height: f64,
        sigma: f64,
        spread: f64,
        seed: u64,
    },
    /// Pointwise sum of several layers.
    Sum {
        layers: Vec<TerrainKind>,
    },
}

fn default_wavelength() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainSpec {
    #[serde(flatten)]
    pub kind: TerrainKind,
    /// `[x_min, x_max, y_min, y_max]` in meters.
    pub extent: [f64; 4],
    /// Vertices along x and y.
    pub resolution: [usize; 2],
}

impl TerrainSpec {
    pub fn new(kind: TerrainKind, extent: [f64; 4], resolution: [usize; 2]) -> Self {
        Self {
            kind,
            extent,
            resolution,
        }
    }

    /// Flat square `[-half, half]^2` with `n` vertices per axis.
    pub fn grid(n: usize, half: f64) -> Self {
        Self::new(TerrainKind::FlatPlane, [-half, half, -half, half], [n, n])
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.resolution[0] < 2 || self.resolution[1] < 2 {
            return Err(MeshError::InvalidSpec("resolution must be at least 2 per axis".into()));
        }
        let [x0, x1, y0, y1] = self.extent;
        if !(x1 > x0 && y1 > y0) || !self.extent.iter().all(|v| v.is_finite()) {
            return Err(MeshError::InvalidSpec(format!("degenerate extent {:?}", self.extent)));
        }
        self.kind.validate()
    }
}

impl TerrainKind {
    fn validate(&self) -> Result<(), MeshError> {
        match self {
            TerrainKind::Sinusoidal { wavelength, .. } | TerrainKind::FractalNoise { wavelength, .. }
                if *wavelength <= 0.0 =>
            {
                Err(MeshError::InvalidSpec("wavelength must be positive".into()))
            }
            TerrainKind::FractalNoise { octaves: 0, .. } => {
                Err(MeshError::InvalidSpec("octaves must be at least 1".into()))
            }
            TerrainKind::Crater { width, .. } if *width <= 0.0 => {
                Err(MeshError::InvalidSpec("crater width must be positive".into()))
            }
            TerrainKind::Mounds { sigma, spread, .. } if *sigma <= 0.0 || *spread < 0.0 => Err(MeshError::InvalidSpec(
                "mound sigma must be positive and spread non-negative".into(),
            )),
            TerrainKind::Sum { layers } => layers.iter().try_for_each(|l| l.validate()),
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> Box<dyn Fn(f64, f64) -> f64 + Send + Sync> {
        match self.clone() {
            TerrainKind::FlatPlane => Box::new(|_, _| 0.0),
            TerrainKind::InclinedPlane { slope, heading } => {
                let (s, c) = heading.sin_cos();
                Box::new(move |x, y| slope * (x * c + y * s))
            }
            TerrainKind::Sinusoidal { amplitude, wavelength } => {
                Box::new(move |x, _| amplitude * (std::f64::consts::TAU * x / wavelength).sin())
            }
            TerrainKind::FractalNoise {
                amplitude,
                octaves,
                seed,
                wavelength,
            } => {
                let fbm = Fbm::<Perlin>::new(seed)
                    .set_octaves(octaves)
                    .set_frequency(1.0 / wavelength);
                Box::new(move |x, y| amplitude * fbm.get([x, y]))
            }
            TerrainKind::Crater {
                x: cx,
                y: cy,
                radius,
                width,
                height,
            } => Box::new(move |x, y| {
                let r = (x - cx).hypot(y - cy);
                height * (-((r - radius) / width).powi(2)).exp()
            }),
            TerrainKind::Mounds {
                count,
                height,
                sigma,
                spread,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let bumps: Vec<(f64, f64, f64)> = (0..count)
                    .map(|_| {
                        let x = rng.random_range(-spread..=spread);
                        let y = rng.random_range(-spread..=spread);
                        (x, y, height * rng.random_range(0.6..=1.0))
                    })
                    .collect();
                let inv = 1.0 / (2.0 * sigma * sigma);
                Box::new(move |x, y| {
                    bumps
                        .iter()
                        .map(|&(bx, by, h)| h * (-((x - bx).powi(2) + (y - by).powi(2)) * inv).exp())
                        .sum()
                })
            }
            TerrainKind::Sum { layers } => {
                let fs: Vec<_> = layers.iter().map(|l| l.sampler()).collect();
                Box::new(move |x, y| fs.iter().map(|f| f(x, y)).sum())
            }
        }
    }
}

/// Two triangles per grid cell, split along the `(i, j) -> (i+1, j+1)`
/// diagonal. Vertex `(i, j)` has index `j * nx + i`.
pub(crate) fn grid_faces(nx: usize, ny: usize) -> Vec<[usize; 3]> {
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let v00 = j * nx + i;
            let v10 = v00 + 1;
            let v01 = v00 + nx;
            let v11 = v01 + 1;
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    faces
}

/// Regular-grid terrain mesh with `2 (nx - 1) (ny - 1)` faces.
pub fn generate_terrain(spec: &TerrainSpec) -> Result<TriangleMesh, MeshError> {
    spec.validate()?;
    let [nx, ny] = spec.resolution;
    let [x0, x1, y0, y1] = spec.extent;
    let height = spec.kind.sampler();
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = y0 + (y1 - y0) * j as f64 / (ny - 1) as f64;
        for i in 0..nx {
            let x = x0 + (x1 - x0) * i as f64 / (nx - 1) as f64;
            vertices.push(Point3::new(x, y, height(x, y)));
        }
    }
    TriangleMesh::new(vertices, grid_faces(nx, ny))
}
