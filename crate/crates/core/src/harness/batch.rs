//! Batch execution: scenarios x repeats x methods with derived seeds,
//! resumable CSV output and per-iteration logs.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{compute_metrics, MetricsSummary, RunRecord, TradeoffNormalization};
use super::suite::Scenario;
use crate::baselines::{fixed_epsilon_config, MppiConfig, MppiPlanner};
use crate::context::TerrainContext;
use crate::dynamics::State;
use crate::fmm::{compute_field, vertex_costs, VectorField, VertexCostParams};
use crate::objectives::ObjectiveParams;
use crate::planner::{
    mix, run_episode, EpisodeSpec, EpsPlanner, IterationLog, Outcome, PlanContext, PlannerConfig, Plant, StepPlanner,
};
use crate::residual::ResidualModel;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "planner", rename_all = "kebab-case")]
pub enum MethodKind {
    EpsAdaptive,
    EpsFixed { eps: f64 },
    Mppi(MppiConfig),
}

/// A named planner configuration compared within a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub kind: MethodKind,
    pub planner: PlannerConfig,
}

impl MethodSpec {
    pub fn eps_adaptive(name: &str, planner: PlannerConfig) -> Self {
        Self {
            name: name.into(),
            kind: MethodKind::EpsAdaptive,
            planner,
        }
    }

    pub fn eps_fixed(name: &str, planner: PlannerConfig, eps: f64) -> Self {
        Self {
            name: name.into(),
            kind: MethodKind::EpsFixed { eps },
            planner,
        }
    }

    pub fn mppi(name: &str, planner: PlannerConfig, cfg: MppiConfig) -> Self {
        Self {
            name: name.into(),
            kind: MethodKind::Mppi(cfg),
            planner,
        }
    }

    pub fn validate(&self) -> Result<(), BatchError> {
        self.planner
            .validate()
            .map_err(|e| BatchError::Invalid(format!("{}: {e}", self.name)))?;
        if let MethodKind::Mppi(m) = &self.kind {
            m.validate()
                .map_err(|e| BatchError::Invalid(format!("{}: {e}", self.name)))?;
        }
        if let MethodKind::EpsFixed { eps } = self.kind {
            if !(eps >= 0.0) {
                return Err(BatchError::Invalid(format!("{}: eps must be non-negative", self.name)));
            }
        }
        Ok(())
    }

    /// Planner instance for one run.
    pub fn build(&self, seed: u64) -> Box<dyn StepPlanner> {
        let cfg = PlannerConfig {
            seed,
            ..self.planner.clone()
        };
        match &self.kind {
            MethodKind::EpsAdaptive => Box::new(EpsPlanner::new(cfg)),
            MethodKind::EpsFixed { eps } => Box::new(EpsPlanner::new(fixed_epsilon_config(&cfg, *eps))),
            MethodKind::Mppi(m) => Box::new(MppiPlanner::new(m.clone(), cfg)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    pub base_seed: u64,
    pub plant: Plant,
    pub objectives: ObjectiveParams,
    pub costs: VertexCostParams,
    /// Overrides each scenario's repeat count when set.
    pub repeats: Option<usize>,
    pub keep_log: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            base_seed: 0,
            plant: Plant::Model,
            objectives: ObjectiveParams::default(),
            costs: VertexCostParams::default(),
            repeats: None,
            keep_log: false,
        }
    }
}

/// Seed of one run; shared by every method so that they face the same
/// noise stream on the same scenario and repeat.
pub fn run_seed(base: u64, scenario_index: usize, repeat: usize) -> u64 {
    mix(mix(base, scenario_index as u64), repeat as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub scenario: String,
    pub method: String,
    pub repeat: usize,
    pub iterations: usize,
    pub mean_plan_ms: f64,
    pub max_plan_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
struct LogLine<'a> {
    scenario: &'a str,
    method: &'a str,
    repeat: usize,
    #[serde(flatten)]
    iteration: &'a IterationLog,
}

/// Everything a batch produced, sorted by (scenario, method, repeat).
#[derive(Debug, Clone, Default)]
pub struct BatchOutput {
    pub runs: Vec<RunRecord>,
    pub timings: Vec<TimingRecord>,
}

impl BatchOutput {
    pub fn sort(&mut self) {
        self.runs.sort_by(|a, b| a.key().cmp(&b.key()));
        self.timings
            .sort_by(|a, b| (&a.scenario, &a.method, a.repeat).cmp(&(&b.scenario, &b.method, b.repeat)));
    }

    pub fn summarize(&self, norm: TradeoffNormalization) -> Vec<MetricsSummary> {
        compute_metrics(&self.runs, norm)
    }
}

/// Where batch files go. Each file is replaced atomically.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub dir: PathBuf,
}

impl OutputDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn runs(&self) -> PathBuf {
        self.dir.join("runs.csv")
    }

    pub fn timings(&self) -> PathBuf {
        self.dir.join("timings.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.csv")
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join("iterations.jsonl")
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BatchError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, BatchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| BatchError::Io(e.into_error()))
}

pub fn runs_csv(runs: &[RunRecord]) -> Result<Vec<u8>, BatchError> {
    csv_bytes(runs)
}

pub fn summary_csv(summary: &[MetricsSummary]) -> Result<Vec<u8>, BatchError> {
    csv_bytes(summary)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, BatchError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Reads runs and, when present, joins their planning times back in.
pub fn read_output(dir: &OutputDir) -> Result<BatchOutput, BatchError> {
    let mut runs: Vec<RunRecord> = read_csv(&dir.runs())?;
    let timings: Vec<TimingRecord> = if dir.timings().exists() {
        read_csv(&dir.timings())?
    } else {
        Vec::new()
    };
    let by_key: BTreeMap<(String, String, usize), f64> = timings
        .iter()
        .map(|t| ((t.scenario.clone(), t.method.clone(), t.repeat), t.mean_plan_ms))
        .collect();
    for r in runs.iter_mut() {
        r.mean_plan_ms = by_key.get(&r.key()).copied().unwrap_or(f64::NAN);
    }
    let mut out = BatchOutput { runs, timings };
    out.sort();
    Ok(out)
}

pub fn write_output(dir: &OutputDir, out: &BatchOutput, norm: TradeoffNormalization) -> Result<(), BatchError> {
    fs::create_dir_all(&dir.dir)?;
    write_atomic(&dir.runs(), &runs_csv(&out.runs)?)?;
    write_atomic(&dir.timings(), &csv_bytes(&out.timings)?)?;
    write_atomic(&dir.summary(), &summary_csv(&out.summarize(norm))?)?;
    Ok(())
}

/// One run, with panics turned into a FAILURE-ERROR row.
#[allow(clippy::too_many_arguments)]
fn execute(
    ctx: &TerrainContext,
    field: Result<&VectorField, String>,
    model: Option<&ResidualModel>,
    scenario: &Scenario,
    method: &MethodSpec,
    repeat: usize,
    seed: u64,
    opts: &BatchOptions,
) -> (RunRecord, TimingRecord, Vec<IterationLog>) {
    let straight_guess = {
        let g = scenario.goal_point(ctx);
        ctx.mesh
            .height(scenario.start[0], scenario.start[1])
            .map(|z| ((scenario.start[0] - g.x).powi(2) + (scenario.start[1] - g.y).powi(2) + (z - g.z).powi(2)).sqrt())
            .unwrap_or(f64::NAN)
    };
    let failed = |outcome: Outcome, msg: String| RunRecord {
        scenario: scenario.id.clone(),
        method: method.name.clone(),
        repeat,
        seed,
        outcome,
        traveled: 0.0,
        straight_line: straight_guess,
        delta_l: -straight_guess,
        phi_max_deg: 0.0,
        tipover: false,
        iterations: 0,
        fallbacks: 0,
        message: msg,
        mean_plan_ms: 0.0,
    };
    let timing = |r: &RunRecord, max: f64| TimingRecord {
        scenario: r.scenario.clone(),
        method: r.method.clone(),
        repeat,
        iterations: r.iterations,
        mean_plan_ms: r.mean_plan_ms,
        max_plan_ms: max,
    };
    let field = match field {
        Ok(f) => f,
        Err(msg) => {
            let r = failed(Outcome::Infeasible, msg);
            let t = timing(&r, 0.0);
            return (r, t, Vec::new());
        }
    };
    let Some(start) = State::on_terrain(ctx, scenario.start[0], scenario.start[1], scenario.start[2]) else {
        let r = failed(Outcome::FailureOffmesh, "start off mesh".into());
        let t = timing(&r, 0.0);
        return (r, t, Vec::new());
    };
    let pc = PlanContext {
        ctx,
        field,
        model,
        objectives: &opts.objectives,
    };
    let spec = EpisodeSpec {
        start,
        goal: scenario.goal_point(ctx),
        delta_term: method.planner.delta_term,
        max_iters: method.planner.max_iters,
        dt: method.planner.dt,
        plant: opts.plant,
        plant_seed: mix(seed, 1),
        keep_log: opts.keep_log,
    };
    let result = catch_unwind(AssertUnwindSafe(|| {
        let mut planner = method.build(seed);
        run_episode(planner.as_mut(), &pc, &spec)
    }));
    match result {
        Ok(r) => {
            let max = r.plan_times_ms.iter().copied().fold(0.0, f64::max);
            let rec = RunRecord {
                scenario: scenario.id.clone(),
                method: method.name.clone(),
                repeat,
                seed,
                outcome: r.outcome,
                traveled: r.traveled,
                straight_line: r.straight_line,
                delta_l: r.delta_l(),
                phi_max_deg: r.phi_max_deg,
                tipover: r.tipover,
                iterations: r.iterations,
                fallbacks: r.fallbacks,
                message: r.message.clone(),
                mean_plan_ms: r.mean_plan_time_ms(),
            };
            let t = timing(&rec, max);
            (rec, t, r.log)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            let r = failed(Outcome::FailureError, format!("panic: {msg}"));
            let t = timing(&r, 0.0);
            (r, t, Vec::new())
        }
    }
}

/// Runs every (scenario, repeat, method) not already in `existing`.
/// `sink` sees the accumulated output after each scenario so callers can
/// checkpoint; `log` receives per-iteration records when enabled.
pub fn run_batch(
    ctx: &TerrainContext,
    scenarios: &[Scenario],
    methods: &[MethodSpec],
    model: Option<&ResidualModel>,
    opts: &BatchOptions,
    existing: BatchOutput,
    mut sink: impl FnMut(&BatchOutput) -> Result<(), BatchError>,
    mut log: Option<&mut dyn Write>,
) -> Result<BatchOutput, BatchError> {
    let mut names = HashSet::new();
    for m in methods {
        m.validate()?;
        if !names.insert(m.name.as_str()) {
            return Err(BatchError::Invalid(format!("duplicate method name {}", m.name)));
        }
    }
    let mut ids = HashSet::new();
    for s in scenarios {
        s.validate().map_err(BatchError::Invalid)?;
        if !ids.insert(s.id.as_str()) {
            return Err(BatchError::Invalid(format!("duplicate scenario id {}", s.id)));
        }
    }
    let done: HashSet<(String, String, usize)> = existing.runs.iter().map(|r| r.key()).collect();
    let mut out = existing;
    let costs = vertex_costs(&ctx.mesh, &opts.costs);
    for (si, sc) in scenarios.iter().enumerate() {
        let repeats = opts.repeats.unwrap_or(sc.repeats);
        let pending: Vec<(usize, &MethodSpec)> = (0..repeats)
            .flat_map(|r| methods.iter().map(move |m| (r, m)))
            .filter(|(r, m)| !done.contains(&(sc.id.clone(), m.name.clone(), *r)))
            .collect();
        if pending.is_empty() {
            continue;
        }
        let field = compute_field(&ctx.mesh, sc.goal_point(ctx), &costs).map_err(|e| e.to_string());
        for (repeat, m) in pending {
            let seed = run_seed(opts.base_seed, si, repeat);
            let (rec, t, iters) = execute(
                ctx,
                field.as_ref().map_err(Clone::clone),
                model,
                sc,
                m,
                repeat,
                seed,
                opts,
            );
            if let Some(w) = log.as_deref_mut() {
                for it in &iters {
                    let line = LogLine {
                        scenario: &sc.id,
                        method: &m.name,
                        repeat,
                        iteration: it,
                    };
                    serde_json::to_writer(&mut *w, &line)?;
                    w.write_all(b"\n")?;
                }
            }
            out.runs.push(rec);
            out.timings.push(t);
        }
        out.sort();
        sink(&out)?;
    }
    out.sort();
    Ok(out)
}

/// `run_batch` against an output directory: resumes from its runs file,
/// checkpoints after each scenario and writes the summary at the end.
pub fn run_batch_to_dir(
    ctx: &TerrainContext,
    scenarios: &[Scenario],
    methods: &[MethodSpec],
    model: Option<&ResidualModel>,
    opts: &BatchOptions,
    dir: &OutputDir,
    norm: TradeoffNormalization,
) -> Result<BatchOutput, BatchError> {
    fs::create_dir_all(&dir.dir)?;
    let existing = if dir.runs().exists() {
        read_output(dir)?
    } else {
        BatchOutput::default()
    };
    let mut log_file = if opts.keep_log {
        Some(fs::OpenOptions::new().create(true).append(true).open(dir.log())?)
    } else {
        None
    };
    let out = run_batch(
        ctx,
        scenarios,
        methods,
        model,
        opts,
        existing,
        |o| write_output(dir, o, norm),
        log_file.as_mut().map(|f| f as &mut dyn Write),
    )?;
    write_output(dir, &out, norm)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    AlphaFmm,
    Horizon,
    NCand,
    /// Scales `gamma_r` and `gamma_s` together, keeping their ratio.
    Gamma,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "alpha_fmm" | "alpha-fmm" => Some(SweepAxis::AlphaFmm),
            "horizon" => Some(SweepAxis::Horizon),
            "n_cand" | "n-cand" => Some(SweepAxis::NCand),
            "gamma" => Some(SweepAxis::Gamma),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::AlphaFmm => "alpha_fmm",
            SweepAxis::Horizon => "horizon",
            SweepAxis::NCand => "n_cand",
            SweepAxis::Gamma => "gamma",
        }
    }

    /// Base configuration with this axis set to `v`.
    pub fn apply(self, base: &PlannerConfig, v: f64) -> Result<PlannerConfig, BatchError> {
        let mut c = base.clone();
        let count = |v: f64| -> Result<usize, BatchError> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(BatchError::Invalid(format!(
                    "{} needs a positive integer, got {v}",
                    self.as_str()
                )))
            }
        };
        match self {
            SweepAxis::AlphaFmm => c.alpha_fmm = v,
            SweepAxis::Horizon => c.horizon = count(v)?,
            SweepAxis::NCand => c.n_cand = count(v)?,
            SweepAxis::Gamma => {
                c.gamma_r = v;
                c.gamma_s = if base.gamma_r > 0.0 {
                    v * base.gamma_s / base.gamma_r
                } else {
                    v
                };
            }
        }
        c.validate().map_err(|e| BatchError::Invalid(e.to_string()))?;
        Ok(c)
    }

    pub fn method_name(self, v: f64) -> String {
        format!("{}={v}", self.as_str())
    }
}

/// One epsilon-constraint method per axis value, named `axis=value`.
pub fn sweep_methods(axis: SweepAxis, values: &[f64], base: &PlannerConfig) -> Result<Vec<MethodSpec>, BatchError> {
    values
        .iter()
        .map(|&v| Ok(MethodSpec::eps_adaptive(&axis.method_name(v), axis.apply(base, v)?)))
        .collect()
}

/// Runs the sweep and returns one summary row per value, in value order.
pub fn ablation_sweep(
    ctx: &TerrainContext,
    scenarios: &[Scenario],
    axis: SweepAxis,
    values: &[f64],
    base: &PlannerConfig,
    model: Option<&ResidualModel>,
    opts: &BatchOptions,
    norm: TradeoffNormalization,
) -> Result<(BatchOutput, Vec<MetricsSummary>), BatchError> {
    let methods = sweep_methods(axis, values, base)?;
    let out = run_batch(
        ctx,
        scenarios,
        &methods,
        model,
        opts,
        BatchOutput::default(),
        |_| Ok(()),
        None,
    )?;
    let summary = order_like(out.summarize(norm), &methods);
    Ok((out, summary))
}

/// Reorders summaries to follow the method list.
pub fn order_like(summary: Vec<MetricsSummary>, methods: &[MethodSpec]) -> Vec<MetricsSummary> {
    let mut by_name: BTreeMap<String, MetricsSummary> = summary.into_iter().map(|s| (s.method.clone(), s)).collect();
    methods.iter().filter_map(|m| by_name.remove(&m.name)).collect()
}
