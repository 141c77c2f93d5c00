//! Python bindings: terrains, guidance fields, single planning steps,
//! whole runs and batches. Structured results come back as plain dicts.

use std::path::PathBuf;

use meshnav::context::TerrainContext;
use meshnav::dynamics::State;
use meshnav::fmm::{compute_field, goal_scaling as core_goal_scaling, query_direction, vertex_costs, VectorField};
use meshnav::harness::batch::run_batch_to_dir;
use meshnav::harness::{benchmark_suite, ExperimentConfig, OutputDir, ScenarioClass};
use meshnav::mesh::{generate_terrain, load_mesh, MeshFormat, TerrainSpec};
use meshnav::objectives::{tilt_violation as core_tilt_violation, ObjectiveParams};
use meshnav::planner::{mix, plan_step as core_plan_step, run_episode, EpisodeSpec, PlanContext};
use nalgebra::Point3;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Serializes through JSON into native Python objects.
fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn config(overrides: Vec<String>) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_toml("", &overrides).map_err(value_err)
}

fn surface_point(ctx: &TerrainContext, x: f64, y: f64) -> PyResult<Point3<f64>> {
    let z = ctx
        .mesh
        .height(x, y)
        .ok_or_else(|| value_err(format!("({x}, {y}) is off the mesh")))?;
    Ok(Point3::new(x, y, z))
}

/// A triangle-mesh terrain with its planning precomputation.
#[pyclass(frozen)]
struct Terrain {
    ctx: TerrainContext,
}

#[pymethods]
impl Terrain {
    /// Terrain of a built-in benchmark suite: "gentle-slope" or "rough".
    #[staticmethod]
    fn suite(name: &str) -> PyResult<Self> {
        let class = ScenarioClass::parse(name).ok_or_else(|| value_err(format!("unknown suite {name:?}")))?;
        let (_, ctx) = benchmark_suite(class).map_err(runtime_err)?;
        Ok(Self { ctx })
    }

    /// Procedural terrain from a TOML spec, e.g.
    /// `kind = "flat-plane"\nextent = [-5, 5, -5, 5]\nresolution = [21, 21]`.
    #[staticmethod]
    fn generate(spec_toml: &str) -> PyResult<Self> {
        let spec: TerrainSpec = toml::from_str(spec_toml).map_err(value_err)?;
        let mesh = generate_terrain(&spec).map_err(value_err)?;
        Ok(Self {
            ctx: TerrainContext::new(mesh),
        })
    }

    /// OBJ, PLY or STL file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let fmt = MeshFormat::from_path(&path).unwrap_or(MeshFormat::Obj);
        let mesh = load_mesh(&path, fmt).map_err(value_err)?;
        Ok(Self {
            ctx: TerrainContext::new(mesh),
        })
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.ctx.mesh.num_vertices()
    }

    #[getter]
    fn num_faces(&self) -> usize {
        self.ctx.mesh.num_faces()
    }

    /// `((x_min, y_min, z_min), (x_max, y_max, z_max))`.
    #[getter]
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        self.ctx.mesh.bounds()
    }

    /// Surface height, or None off the mesh.
    fn height(&self, x: f64, y: f64) -> Option<f64> {
        self.ctx.mesh.height(x, y)
    }

    /// `[n_x, n_y, n_z, sigma_z, K, H, A_total]` at `(x, y)`, or None.
    fn descriptor(&self, x: f64, y: f64) -> Option<[f64; 7]> {
        let z = self.ctx.mesh.height(x, y)?;
        self.ctx.descriptor(&Point3::new(x, y, z)).map(|d| d.as_array())
    }
}

/// Geodesic guidance field towards one goal.
#[pyclass(frozen)]
struct Field {
    field: VectorField,
}

#[pymethods]
impl Field {
    /// Field over `terrain` towards the surface point above `goal`.
    /// `overrides` use the `fmm.key=value` syntax of the config file.
    #[new]
    #[pyo3(signature = (terrain, goal, overrides = Vec::new()))]
    fn new(terrain: &Terrain, goal: (f64, f64), overrides: Vec<String>) -> PyResult<Self> {
        let cfg = config(overrides)?;
        let ctx = &terrain.ctx;
        let g = surface_point(ctx, goal.0, goal.1)?;
        let costs = vertex_costs(&ctx.mesh, &cfg.fmm);
        let field = compute_field(&ctx.mesh, g, &costs).map_err(runtime_err)?;
        Ok(Self { field })
    }

    /// Per-vertex arrival time; infinite where unreachable.
    fn distance(&self) -> Vec<f64> {
        self.field.distance().to_vec()
    }

    fn lethal(&self) -> Vec<bool> {
        self.field.lethal().to_vec()
    }

    /// Unit descent direction at a surface point.
    fn direction(&self, terrain: &Terrain, x: f64, y: f64) -> PyResult<[f64; 3]> {
        let p = surface_point(&terrain.ctx, x, y)?;
        let d = query_direction(&self.field, &terrain.ctx.mesh, &p).map_err(runtime_err)?;
        Ok([d.x, d.y, d.z])
    }
}

/// Penalty for one attitude deviation in radians, with default thresholds.
#[pyfunction]
fn tilt_violation(delta: f64) -> f64 {
    core_tilt_violation(delta, &ObjectiveParams::default())
}

/// Goal-proximity weight `1 - (d / d_max)^exponent`, clamped to `[0, 1]`.
#[pyfunction]
#[pyo3(signature = (p, goal, d_max, exponent = 2.0))]
fn goal_scaling(p: [f64; 3], goal: [f64; 3], d_max: f64, exponent: f64) -> f64 {
    core_goal_scaling(&Point3::from(p), &Point3::from(goal), d_max, exponent)
}

/// One epsilon-constraint planning step from `(x, y, yaw)` resting on
/// the terrain. Returns the chosen control and selection statistics.
#[pyfunction]
#[pyo3(signature = (terrain, field, start, overrides = Vec::new(), iteration = 0))]
fn plan_step<'py>(
    py: Python<'py>,
    terrain: &Terrain,
    field: &Field,
    start: (f64, f64, f64),
    overrides: Vec<String>,
    iteration: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(overrides)?;
    let ctx = &terrain.ctx;
    let state = State::on_terrain(ctx, start.0, start.1, start.2).ok_or_else(|| value_err("start is off the mesh"))?;
    let pc = PlanContext {
        ctx,
        field: &field.field,
        model: None,
        objectives: &cfg.objectives,
    };
    let r = core_plan_step(&state, &pc, None, &cfg.planner, iteration).map_err(runtime_err)?;
    let best = r.best_score();
    let out = serde_json::json!({
        "control": [r.control.u0, r.control.u1],
        "epsilon": r.epsilon,
        "feasible_count": r.feasible_count,
        "best_index": r.best_index,
        "best_f1": best.map(|b| b.f1),
        "best_f2": best.map(|b| b.f2),
        "fallback": r.fallback,
        "time_ms": r.time_ms,
    });
    to_py(py, &out)
}

/// A full receding-horizon run with the first configured method.
#[pyfunction]
#[pyo3(signature = (terrain, start, goal, overrides = Vec::new()))]
fn run<'py>(
    py: Python<'py>,
    terrain: &Terrain,
    start: (f64, f64, f64),
    goal: (f64, f64),
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(overrides)?;
    let ctx = &terrain.ctx;
    let g = surface_point(ctx, goal.0, goal.1)?;
    let costs = vertex_costs(&ctx.mesh, &cfg.fmm);
    let field = compute_field(&ctx.mesh, g, &costs).map_err(runtime_err)?;
    let state = State::on_terrain(ctx, start.0, start.1, start.2).ok_or_else(|| value_err("start is off the mesh"))?;
    let method = cfg
        .methods()
        .into_iter()
        .next()
        .ok_or_else(|| value_err("batch.methods is empty"))?;
    let pc = PlanContext {
        ctx,
        field: &field,
        model: None,
        objectives: &cfg.objectives,
    };
    let spec = EpisodeSpec {
        start: state,
        goal: g,
        delta_term: cfg.planner.delta_term,
        max_iters: cfg.planner.max_iters,
        dt: cfg.planner.dt,
        plant: cfg.batch.plant,
        plant_seed: mix(cfg.batch.seed, 1),
        keep_log: false,
    };
    let mut planner = method.build(cfg.batch.seed);
    let r = run_episode(planner.as_mut(), &pc, &spec);
    let out = serde_json::json!({
        "method": method.name,
        "outcome": r.outcome,
        "traveled": r.traveled,
        "straight_line": r.straight_line,
        "delta_l": r.delta_l(),
        "phi_max_deg": r.phi_max_deg,
        "tipover": r.tipover,
        "iterations": r.iterations,
        "fallbacks": r.fallbacks,
        "mean_plan_ms": r.mean_plan_time_ms(),
        "path": r.states.iter().map(|s| [s.x, s.y, s.z]).collect::<Vec<_>>(),
    });
    to_py(py, &out)
}

/// Runs a batch as configured (optionally from a TOML file) into
/// `batch.out_dir` and returns one summary dict per method.
#[pyfunction]
#[pyo3(signature = (config_path = None, overrides = Vec::new()))]
fn run_batch<'py>(
    py: Python<'py>,
    config_path: Option<PathBuf>,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::load(config_path.as_deref(), &overrides).map_err(value_err)?;
    let summary = py.detach(|| -> Result<_, String> {
        let (suite, ctx) = cfg.suite()?;
        let out = run_batch_to_dir(
            &ctx,
            &suite.scenarios,
            &cfg.methods(),
            None,
            &cfg.batch_options(),
            &OutputDir::new(&cfg.batch.out_dir),
            cfg.normalization(),
        )
        .map_err(|e| e.to_string())?;
        Ok(out.summarize(cfg.normalization()))
    });
    to_py(py, &summary.map_err(runtime_err)?)
}

/// Scenarios of a built-in suite.
#[pyfunction]
fn suite_scenarios<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
    let class = ScenarioClass::parse(name).ok_or_else(|| value_err(format!("unknown suite {name:?}")))?;
    let (suite, _) = benchmark_suite(class).map_err(runtime_err)?;
    to_py(py, &suite.scenarios)
}

#[pymodule]
fn meshnav_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Terrain>()?;
    m.add_class::<Field>()?;
    m.add_function(wrap_pyfunction!(tilt_violation, m)?)?;
    m.add_function(wrap_pyfunction!(goal_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(plan_step, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    m.add_function(wrap_pyfunction!(suite_scenarios, m)?)?;
    Ok(())
}
