//! Scenarios and the built-in benchmark suites.

use std::path::PathBuf;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::TerrainContext;
use crate::dynamics::{orientation_deviation, State};
use crate::fmm::{compute_field, vertex_costs, VertexCostParams};
use crate::mesh::{generate_terrain, load_mesh, MeshError, MeshFormat, TerrainKind, TerrainSpec, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioClass {
    GentleSlope,
    Rough,
}

impl ScenarioClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioClass::GentleSlope => "gentle-slope",
            ScenarioClass::Rough => "rough",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gentle-slope" | "gentle" => Some(ScenarioClass::GentleSlope),
            "rough" => Some(ScenarioClass::Rough),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshSource {
    Terrain(TerrainSpec),
    File(PathBuf),
}

impl MeshSource {
    pub fn load(&self) -> Result<TriangleMesh, MeshError> {
        match self {
            MeshSource::Terrain(spec) => generate_terrain(spec),
            MeshSource::File(p) => {
                let fmt = MeshFormat::from_path(p).unwrap_or(MeshFormat::Obj);
                load_mesh(p, fmt)
            }
        }
    }
}

fn default_repeats() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    /// `[x, y, yaw]`.
    pub start: [f64; 3],
    /// `[x, y]`; height comes from the mesh.
    pub goal: [f64; 2],
    pub class: ScenarioClass,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), String> {
        if self.repeats < 1 {
            return Err(format!("scenario {}: repeats must be at least 1", self.id));
        }
        if self.start[0] == self.goal[0] && self.start[1] == self.goal[1] {
            return Err(format!("scenario {}: start equals goal", self.id));
        }
        Ok(())
    }

    pub fn goal_point(&self, ctx: &TerrainContext) -> Point3<f64> {
        let z = ctx.mesh.height(self.goal[0], self.goal[1]).unwrap_or(0.0);
        Point3::new(self.goal[0], self.goal[1], z)
    }
}

/// One mesh and the scenarios run on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub name: String,
    pub mesh: MeshSource,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

impl Suite {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let s: Suite = toml::from_str(text).map_err(|e| e.to_string())?;
        for sc in &s.scenarios {
            sc.validate()?;
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("suite serializes")
    }
}

pub const SUITE_SCENARIOS: usize = 20;
const SUITE_HALF: f64 = 12.0;
const SUITE_VERTS: usize = 97;

/// Terrain for the built-in suites: 24 m square, 0.25 m spacing. Gentle is
/// a tilted plane with low-amplitude noise; rough is higher-amplitude noise
/// scattered with steep mounds that must be skirted.
pub fn suite_terrain(class: ScenarioClass) -> TerrainSpec {
    let kind = match class {
        ScenarioClass::GentleSlope => TerrainKind::Sum {
            layers: vec![
                TerrainKind::InclinedPlane {
                    slope: 0.15,
                    heading: 0.6,
                },
                TerrainKind::FractalNoise {
                    amplitude: 0.4,
                    octaves: 3,
                    seed: 11,
                    wavelength: 10.0,
                },
            ],
        },
        ScenarioClass::Rough => TerrainKind::Sum {
            layers: vec![
                TerrainKind::FractalNoise {
                    amplitude: 1.2,
                    octaves: 4,
                    seed: 7,
                    wavelength: 8.0,
                },
                TerrainKind::FractalNoise {
                    amplitude: 0.06,
                    octaves: 2,
                    seed: 8,
                    wavelength: 1.5,
                },
                TerrainKind::Mounds {
                    count: 80,
                    height: 1.2,
                    sigma: 0.6,
                    spread: 11.0,
                    seed: 5,
                },
            ],
        },
    };
    TerrainSpec::new(
        kind,
        [-SUITE_HALF, SUITE_HALF, -SUITE_HALF, SUITE_HALF],
        [SUITE_VERTS, SUITE_VERTS],
    )
}

/// Deterministic start/goal pairs on `ctx`: both ends on gentle,
/// non-lethal ground away from the border, 8 to 12 m apart, and the goal
/// reachable from the start through the guidance field.
pub fn sample_scenarios(
    ctx: &TerrainContext,
    class: ScenarioClass,
    count: usize,
    seed: u64,
    costs: &VertexCostParams,
) -> Vec<Scenario> {
    let mesh = &ctx.mesh;
    let vc = vertex_costs(mesh, costs);
    let (lo, hi) = mesh.bounds();
    let margin = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_dev = 25f64.to_radians();
    let tilt = |x: f64, y: f64| -> Option<f64> {
        let s = State::on_terrain(ctx, x, y, 0.0)?;
        let d = ctx.descriptor(&s.position())?;
        let (a, b) = orientation_deviation(&s, &d);
        Some(a.abs().max(b.abs()))
    };
    // Gentle ground at the point and on a 1 m ring around it, and no lethal
    // vertex on the face underneath.
    let ok_point = |x: f64, y: f64| -> bool {
        let Some(f) = mesh.locate_face(x, y) else { return false };
        if mesh.faces()[f].iter().any(|&v| vc.lethal[v]) {
            return false;
        }
        (0..=8).all(|k| {
            let (px, py) = if k == 0 {
                (x, y)
            } else {
                let a = k as f64 * std::f64::consts::FRAC_PI_4;
                (x + a.cos(), y + a.sin())
            };
            tilt(px, py).is_some_and(|t| t < max_dev)
        })
    };
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 200_000 {
        attempts += 1;
        let sx = rng.random_range(lo[0] + margin..hi[0] - margin);
        let sy = rng.random_range(lo[1] + margin..hi[1] - margin);
        let dist = rng.random_range(8.0..12.0);
        let ang = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let gx = sx + dist * ang.cos();
        let gy = sy + dist * ang.sin();
        let yaw_jitter = rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
        if gx < lo[0] + margin || gx > hi[0] - margin || gy < lo[1] + margin || gy > hi[1] - margin {
            continue;
        }
        if !ok_point(sx, sy) || !ok_point(gx, gy) {
            continue;
        }
        let goal = Point3::new(gx, gy, mesh.height(gx, gy).unwrap());
        let Ok(field) = compute_field(mesh, goal, &vc) else {
            continue;
        };
        let Some(sf) = mesh.locate_face(sx, sy) else { continue };
        if !mesh.faces()[sf].iter().all(|&v| field.is_reachable(v)) {
            continue;
        }
        let yaw = crate::dynamics::wrap_angle(ang + yaw_jitter);
        out.push(Scenario {
            id: format!("{}-{:02}", class.as_str(), out.len()),
            start: [round3(sx), round3(sy), round3(yaw)],
            goal: [round3(gx), round3(gy)],
            class,
            repeats: default_repeats(),
        });
    }
    out
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// The built-in suite for one class.
pub fn benchmark_suite(class: ScenarioClass) -> Result<(Suite, TerrainContext), MeshError> {
    let spec = suite_terrain(class);
    let mesh = generate_terrain(&spec)?;
    let ctx = TerrainContext::new(mesh);
    let seed = match class {
        ScenarioClass::GentleSlope => 101,
        ScenarioClass::Rough => 202,
    };
    let scenarios = sample_scenarios(&ctx, class, SUITE_SCENARIOS, seed, &VertexCostParams::default());
    let suite = Suite {
        name: class.as_str().into(),
        mesh: MeshSource::Terrain(spec),
        scenarios,
    };
    Ok((suite, ctx))
}
