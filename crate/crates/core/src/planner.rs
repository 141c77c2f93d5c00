//! Terrain-adaptive epsilon-constraint sampling planner and the
//! receding-horizon loop shared by every planner.

use std::time::Instant;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::TerrainContext;
use crate::descriptor::{descriptor_inclination, TerrainDescriptor};
use crate::dynamics::{
    corrected_step, orientation_deviation, wrap_angle, Control, ControlLimits, RolloutEnv, State, Step, Trajectory,
};
use crate::fmm::{query_direction, DMaxMode, VectorField};
use crate::objectives::{path_alignment_cost, stability_cost, ObjectiveParams};
use crate::residual::ResidualModel;
use crate::world::{SlipParams, SlipWorld};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("state ({x:.3}, {y:.3}) is off the mesh")]
    OffMesh { x: f64, y: f64 },
    #[error("invalid planner configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonMode {
    #[default]
    Adaptive,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Horizon in steps.
    pub horizon: usize,
    pub dt: f64,
    pub n_cand: usize,
    pub alpha_fmm: f64,
    pub eps_base: f64,
    pub gamma_r: f64,
    pub gamma_s: f64,
    pub eps_floor: f64,
    pub eps_mode: EpsilonMode,
    /// Constant used when `eps_mode` is fixed.
    pub eps_fixed: f64,
    pub sigma_v: f64,
    pub sigma_omega: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Fraction of `v_max` commanded by the field-following controller.
    pub beta: f64,
    /// Heading gain of the field-following controller.
    pub k_p: f64,
    pub delta_term: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub d_max_mode: DMaxMode,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.1,
            n_cand: 100,
            alpha_fmm: 0.7,
            eps_base: 0.5,
            gamma_r: 0.5,
            gamma_s: 0.3,
            eps_floor: 0.3,
            eps_mode: EpsilonMode::Adaptive,
            eps_fixed: 25.0,
            sigma_v: 0.5,
            sigma_omega: 0.3,
            v_max: 1.5,
            omega_max: 3.22,
            beta: 0.7,
            k_p: 1.5,
            delta_term: 0.5,
            max_iters: 400,
            seed: 0,
            d_max_mode: DMaxMode::Euclidean,
        }
    }
}

impl PlannerConfig {
    pub fn limits(&self) -> ControlLimits {
        ControlLimits {
            v_max: self.v_max,
            omega_max: self.omega_max,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Config(m.into()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if self.n_cand < 2 {
            return bad("n_cand must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.alpha_fmm) {
            return bad("alpha_fmm must lie in [0, 1]");
        }
        if !(self.eps_floor > 0.0 && self.eps_floor <= 1.0) {
            return bad("eps_floor must lie in (0, 1]");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]");
        }
        for (name, v) in [
            ("dt", self.dt),
            ("eps_base", self.eps_base),
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
            ("k_p", self.k_p),
            ("delta_term", self.delta_term),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.sigma_v < 0.0 || self.sigma_omega < 0.0 || self.gamma_r < 0.0 || self.gamma_s < 0.0 {
            return bad("noise scales and gammas must be non-negative");
        }
        if self.eps_fixed < 0.0 {
            return bad("eps_fixed must be non-negative");
        }
        Ok(())
    }
}

/// `eps_base * max(eps_floor, min(f_r, f_s))`.
pub fn adaptive_epsilon(desc: &TerrainDescriptor, roughness_max: f64, cfg: &PlannerConfig) -> f64 {
    let f_r = 1.0 - cfg.gamma_r * (desc.sigma_z / roughness_max).min(1.0);
    let f_s = 1.0 - cfg.gamma_s * (descriptor_inclination(desc) / std::f64::consts::FRAC_PI_2).min(1.0);
    cfg.eps_base * cfg.eps_floor.max(f_r.min(f_s))
}

/// Per-candidate generator: one seed per planning call, one stream per
/// candidate, so results do not depend on evaluation order.
pub fn candidate_rng(seed: u64, iteration: u64, candidate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, iteration));
    rng.set_stream(candidate);
    rng
}

/// SplitMix64 finalizer over a pair.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shift left by one, repeat the last element, add clamped Gaussian noise.
pub fn warm_start_sequence(prev: &[Control], cfg: &PlannerConfig, rng: &mut impl Rng) -> Vec<Control> {
    let lim = cfg.limits();
    let nv = Normal::new(0.0, cfg.sigma_v).expect("finite sigma");
    let nw = Normal::new(0.0, cfg.sigma_omega).expect("finite sigma");
    let h = prev.len();
    (0..h)
        .map(|i| {
            let base = prev[(i + 1).min(h - 1)];
            Control::new(base.u0 + nv.sample(rng), base.u1 + nw.sample(rng), &lim)
        })
        .collect()
}

pub fn warm_start_candidates(
    prev: &[Control],
    count: usize,
    cfg: &PlannerConfig,
    rng: &mut impl Rng,
) -> Vec<Vec<Control>> {
    (0..count).map(|_| warm_start_sequence(prev, cfg, rng)).collect()
}

/// Heading error to the field direction at `state`, wrapped.
pub fn heading_error(state: &State, field: &VectorField, ctx: &TerrainContext) -> Option<f64> {
    let d = query_direction(field, &ctx.mesh, &state.position()).ok()?;
    if d.x.hypot(d.y) < 1e-12 {
        return None;
    }
    Some(wrap_angle(d.y.atan2(d.x) - state.psi))
}

/// Proportional field follower `(beta v_max, k_p * heading error)`.
pub fn fmm_suggested_control(
    state: &State,
    field: &VectorField,
    ctx: &TerrainContext,
    cfg: &PlannerConfig,
) -> Option<Control> {
    let err = heading_error(state, field, ctx)?;
    Some(Control::new(cfg.beta * cfg.v_max, cfg.k_p * err, &cfg.limits()))
}

/// Rotate in place toward the field at a bounded rate.
pub fn fallback_maneuver(state: &State, field: &VectorField, ctx: &TerrainContext, cfg: &PlannerConfig) -> Control {
    match heading_error(state, field, ctx) {
        Some(err) if err != 0.0 => {
            let w = (cfg.k_p * err.abs()).min(0.5 * cfg.omega_max);
            Control {
                u0: 0.0,
                u1: w * err.signum(),
            }
        }
        _ => Control::ZERO,
    }
}

fn uniform_control(cfg: &PlannerConfig, rng: &mut impl Rng) -> Control {
    Control {
        u0: rng.random_range(-cfg.v_max..=cfg.v_max),
        u1: rng.random_range(-cfg.omega_max..=cfg.omega_max),
    }
}

/// Start-of-horizon data shared by every candidate.
#[derive(Clone, Copy)]
pub struct Origin {
    pub state: State,
    pub face: Option<usize>,
    pub desc: Option<TerrainDescriptor>,
}

impl Origin {
    pub fn new(state: State, ctx: &TerrainContext) -> Self {
        Self {
            state,
            face: ctx.mesh.locate_face(state.x, state.y),
            desc: ctx.descriptor(&state.position()),
        }
    }
}

/// Roll out `horizon` steps choosing each control from the current state.
pub fn rollout_with(
    origin: &Origin,
    horizon: usize,
    env: &RolloutEnv,
    mut policy: impl FnMut(usize, &State) -> Control,
) -> Trajectory {
    let mut controls = Vec::with_capacity(horizon);
    let mut states = vec![origin.state];
    let mut faces = vec![origin.face];
    let mut descs = vec![origin.desc];
    for i in 0..horizon {
        let s = *states.last().unwrap();
        let u = policy(i, &s);
        let step = corrected_step(&s, &u, env.ctx, descs.last().unwrap().as_ref(), env.model, env.dt);
        controls.push(u);
        states.push(step.state);
        faces.push(step.face);
        descs.push(step.face.and_then(|_| env.ctx.descriptor(&step.state.position())));
    }
    assemble(states, controls, faces, descs, env)
}

fn assemble(
    states: Vec<State>,
    controls: Vec<Control>,
    faces: Vec<Option<usize>>,
    descs: Vec<Option<TerrainDescriptor>>,
    env: &RolloutEnv,
) -> Trajectory {
    let n = states.len();
    let mut deviations = Vec::with_capacity(n);
    let mut off_mesh = Vec::with_capacity(n);
    let mut lethal = Vec::with_capacity(n);
    for i in 0..n {
        let s = &states[i];
        deviations.push(descs[i].as_ref().map_or((0.0, 0.0), |d| orientation_deviation(s, d)));
        off_mesh.push(faces[i].is_none() || descs[i].is_none());
        lethal.push(match (faces[i], env.field) {
            (Some(f), Some(field)) => crate::dynamics::is_lethal_at(env.ctx, field, f, s.x, s.y),
            _ => false,
        });
    }
    Trajectory {
        states,
        controls,
        descriptors: descs,
        deviations,
        off_mesh,
        lethal,
    }
}

/// FMM-biased candidate: each control blends the field follower at the
/// simulated state with a uniform sample.
pub fn fmm_biased_rollout(
    origin: &Origin,
    field: &VectorField,
    env: &RolloutEnv,
    cfg: &PlannerConfig,
    rng: &mut impl Rng,
) -> Trajectory {
    let lim = cfg.limits();
    let a = cfg.alpha_fmm;
    rollout_with(origin, cfg.horizon, env, |_, s| {
        let r = uniform_control(cfg, rng);
        if a == 0.0 {
            return r;
        }
        match fmm_suggested_control(s, field, env.ctx, cfg) {
            Some(f) => Control::new(a * f.u0 + (1.0 - a) * r.u0, a * f.u1 + (1.0 - a) * r.u1, &lim),
            None => r,
        }
    })
}

pub fn fmm_biased_candidates(
    origin: &Origin,
    field: &VectorField,
    env: &RolloutEnv,
    count: usize,
    cfg: &PlannerConfig,
    rng: &mut impl Rng,
) -> Vec<Vec<Control>> {
    (0..count)
        .map(|_| fmm_biased_rollout(origin, field, env, cfg, rng).controls)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub f1: f64,
    pub f2: f64,
    pub hard_violation: bool,
    pub feasible: bool,
}

pub fn score(
    traj: &Trajectory,
    field: &VectorField,
    ctx: &TerrainContext,
    d_max: f64,
    obj: &ObjectiveParams,
) -> CandidateScore {
    let a = path_alignment_cost(traj, field, &ctx.mesh, d_max, obj);
    let b = stability_cost(traj, obj);
    CandidateScore {
        f1: a.value,
        f2: b.value,
        hard_violation: a.hard_violation || b.hard_violation,
        feasible: false,
    }
}

/// Marks feasibility against `eps` and returns the argmin of `f1` among
/// feasible candidates, ties by `f2` then index.
pub fn select_best(scores: &mut [CandidateScore], eps: f64) -> Option<usize> {
    for s in scores.iter_mut() {
        s.feasible = !s.hard_violation && s.f2 <= eps;
    }
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.feasible)
        .min_by(|(i, a), (j, b)| a.f1.total_cmp(&b.f1).then(a.f2.total_cmp(&b.f2)).then(i.cmp(j)))
        .map(|(i, _)| i)
}

/// No feasible candidate is strictly better on both objectives.
pub fn is_non_dominated(scores: &[CandidateScore], best: usize) -> bool {
    let b = scores[best];
    !scores.iter().any(|s| s.feasible && s.f1 < b.f1 && s.f2 < b.f2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStepResult {
    pub control: Control,
    /// Best sequence as simulated; the next call shifts it when warm
    /// starting. Empty after a fallback.
    pub best_controls: Vec<Control>,
    pub best_index: Option<usize>,
    pub feasible_count: usize,
    pub epsilon: f64,
    pub candidates: Vec<CandidateScore>,
    pub fallback: bool,
    pub warm_started: usize,
    pub time_ms: f64,
}

impl PlanStepResult {
    pub fn best_score(&self) -> Option<CandidateScore> {
        self.best_index.map(|i| self.candidates[i])
    }
}

/// Read-only inputs of a planning call.
#[derive(Clone, Copy)]
pub struct PlanContext<'a> {
    pub ctx: &'a TerrainContext,
    pub field: &'a VectorField,
    pub model: Option<&'a ResidualModel>,
    pub objectives: &'a ObjectiveParams,
}

impl<'a> PlanContext<'a> {
    pub fn env(&self, dt: f64) -> RolloutEnv<'a> {
        RolloutEnv {
            ctx: self.ctx,
            field: Some(self.field),
            model: self.model,
            dt,
        }
    }

    pub fn d_max(&self, mode: DMaxMode) -> f64 {
        self.field.d_max(mode)
    }
}

pub fn epsilon_for(origin: &Origin, pc: &PlanContext, cfg: &PlannerConfig) -> f64 {
    match cfg.eps_mode {
        EpsilonMode::Fixed => cfg.eps_fixed,
        EpsilonMode::Adaptive => match &origin.desc {
            Some(d) => adaptive_epsilon(d, pc.ctx.roughness_max, cfg),
            None => cfg.eps_base * cfg.eps_floor,
        },
    }
}

/// One planning cycle.
pub fn plan_step(
    state: &State,
    pc: &PlanContext,
    prev_best: Option<&[Control]>,
    cfg: &PlannerConfig,
    iteration: u64,
) -> Result<PlanStepResult, PlanError> {
    let t0 = Instant::now();
    let origin = Origin::new(*state, pc.ctx);
    if origin.face.is_none() {
        return Err(PlanError::OffMesh { x: state.x, y: state.y });
    }
    let eps = epsilon_for(&origin, pc, cfg);
    let env = pc.env(cfg.dt);
    let d_max = pc.d_max(cfg.d_max_mode);
    let prev = prev_best.filter(|p| p.len() == cfg.horizon);
    let n_warm = if prev.is_some() { cfg.n_cand / 2 } else { 0 };

    let evaluated: Vec<(Trajectory, CandidateScore)> = (0..cfg.n_cand)
        .into_par_iter()
        .map(|j| {
            let mut rng = candidate_rng(cfg.seed, iteration, j as u64);
            let traj = match prev {
                Some(p) if j < n_warm => {
                    let seq = warm_start_sequence(p, cfg, &mut rng);
                    rollout_with(&origin, cfg.horizon, &env, |i, _| seq[i])
                }
                _ => fmm_biased_rollout(&origin, pc.field, &env, cfg, &mut rng),
            };
            let s = score(&traj, pc.field, pc.ctx, d_max, pc.objectives);
            (traj, s)
        })
        .collect();
    let mut scores: Vec<CandidateScore> = evaluated.iter().map(|(_, s)| *s).collect();
    let best = select_best(&mut scores, eps);
    let feasible_count = scores.iter().filter(|s| s.feasible).count();
    let (control, best_controls, fallback) = match best {
        Some(b) => {
            debug_assert!(is_non_dominated(&scores, b));
            let seq = evaluated[b].0.controls.clone();
            (seq[0], seq, false)
        }
        None => (fallback_maneuver(state, pc.field, pc.ctx, cfg), Vec::new(), true),
    };
    Ok(PlanStepResult {
        control,
        best_controls,
        best_index: best,
        feasible_count,
        epsilon: eps,
        candidates: scores,
        fallback,
        warm_started: n_warm,
        time_ms: t0.elapsed().as_secs_f64() * 1e3,
    })
}

/// What one planner call hands back to the episode loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub control: Control,
    pub epsilon: f64,
    pub feasible_count: usize,
    pub best_f1: Option<f64>,
    pub best_f2: Option<f64>,
    pub fallback: bool,
    pub time_ms: f64,
}

/// A receding-horizon policy with whatever memory it carries between calls.
pub trait StepPlanner {
    fn reset(&mut self);
    fn plan(&mut self, state: &State, pc: &PlanContext, iteration: u64) -> Result<StepReport, PlanError>;
}

/// The epsilon-constraint planner with its warm-start memory.
#[derive(Debug, Clone)]
pub struct EpsPlanner {
    pub cfg: PlannerConfig,
    prev_best: Option<Vec<Control>>,
}

impl EpsPlanner {
    pub fn new(cfg: PlannerConfig) -> Self {
        Self { cfg, prev_best: None }
    }
}

impl StepPlanner for EpsPlanner {
    fn reset(&mut self) {
        self.prev_best = None;
    }

    fn plan(&mut self, state: &State, pc: &PlanContext, iteration: u64) -> Result<StepReport, PlanError> {
        let r = plan_step(state, pc, self.prev_best.as_deref(), &self.cfg, iteration)?;
        self.prev_best = if r.fallback {
            None
        } else {
            Some(r.best_controls.clone())
        };
        let best = r.best_score();
        Ok(StepReport {
            control: r.control,
            epsilon: r.epsilon,
            feasible_count: r.feasible_count,
            best_f1: best.map(|b| b.f1),
            best_f2: best.map(|b| b.f2),
            fallback: r.fallback,
            time_ms: r.time_ms,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Outcome {
    Success,
    FailureTipover,
    FailureOffmesh,
    Timeout,
    Infeasible,
    FailureError,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "SUCCESS",
            Outcome::FailureTipover => "FAILURE-TIPOVER",
            Outcome::FailureOffmesh => "FAILURE-OFFMESH",
            Outcome::Timeout => "TIMEOUT",
            Outcome::Infeasible => "INFEASIBLE",
            Outcome::FailureError => "FAILURE-ERROR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Outcome::Success,
            Outcome::FailureTipover,
            Outcome::FailureOffmesh,
            Outcome::Timeout,
            Outcome::Infeasible,
            Outcome::FailureError,
        ]
        .into_iter()
        .find(|o| o.as_str() == s)
    }
}

/// How executed controls move the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Plant {
    /// The planner's own (corrected) model.
    #[default]
    Model,
    /// Synthetic slip world.
    Slip(SlipParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub state: State,
    pub control: Control,
    pub epsilon: f64,
    pub feasible_count: usize,
    pub best_f1: Option<f64>,
    pub best_f2: Option<f64>,
    pub fallback: bool,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub outcome: Outcome,
    pub states: Vec<State>,
    pub plan_times_ms: Vec<f64>,
    /// Meters; on success includes the final gap to the goal.
    pub traveled: f64,
    pub straight_line: f64,
    /// Largest attitude deviation over executed states, degrees.
    pub phi_max_deg: f64,
    pub tipover: bool,
    pub iterations: usize,
    pub fallbacks: usize,
    pub message: String,
    pub log: Vec<IterationLog>,
}

impl RunResult {
    fn empty(outcome: Outcome, start: &State, straight_line: f64, message: impl Into<String>) -> Self {
        Self {
            outcome,
            states: vec![*start],
            plan_times_ms: Vec::new(),
            traveled: 0.0,
            straight_line,
            phi_max_deg: 0.0,
            tipover: false,
            iterations: 0,
            fallbacks: 0,
            message: message.into(),
            log: Vec::new(),
        }
    }

    /// Traveled minus straight-line distance.
    pub fn delta_l(&self) -> f64 {
        self.traveled - self.straight_line
    }

    pub fn mean_plan_time_ms(&self) -> f64 {
        if self.plan_times_ms.is_empty() {
            0.0
        } else {
            self.plan_times_ms.iter().sum::<f64>() / self.plan_times_ms.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub start: State,
    pub goal: Point3<f64>,
    pub delta_term: f64,
    pub max_iters: usize,
    pub dt: f64,
    pub plant: Plant,
    pub plant_seed: u64,
    pub keep_log: bool,
}

/// Receding-horizon loop: plan, execute the first control, repeat.
pub fn run_episode(planner: &mut dyn StepPlanner, pc: &PlanContext, spec: &EpisodeSpec) -> RunResult {
    planner.reset();
    let goal = spec.goal;
    let mut state = spec.start;
    let straight = (state.position() - goal).norm();
    if straight < spec.delta_term {
        return RunResult::empty(Outcome::Success, &state, straight, "start within goal tolerance");
    }
    let start_face = match pc.ctx.mesh.locate_face(state.x, state.y) {
        Some(f) => f,
        None => return RunResult::empty(Outcome::FailureOffmesh, &state, straight, "start off mesh"),
    };
    if pc.ctx.mesh.faces()[start_face]
        .iter()
        .all(|&v| !pc.field.is_reachable(v))
    {
        return RunResult::empty(Outcome::Infeasible, &state, straight, "goal unreachable from start");
    }
    let mut world = match spec.plant {
        Plant::Slip(p) => Some(SlipWorld::new(p, spec.plant_seed)),
        Plant::Model => None,
    };
    let mut out = RunResult::empty(Outcome::Timeout, &state, straight, "");
    let mut desc = pc.ctx.descriptor(&state.position());
    let track = |s: &State, d: &Option<TerrainDescriptor>| -> f64 {
        d.as_ref().map_or(0.0, |d| {
            let (a, b) = orientation_deviation(s, d);
            a.abs().max(b.abs())
        })
    };
    let mut dev_max = track(&state, &desc);
    for k in 0..spec.max_iters {
        let report = match planner.plan(&state, pc, k as u64) {
            Ok(r) => r,
            Err(e) => {
                out.outcome = Outcome::FailureOffmesh;
                out.message = e.to_string();
                break;
            }
        };
        out.iterations += 1;
        out.plan_times_ms.push(report.time_ms);
        if report.fallback {
            out.fallbacks += 1;
        }
        if spec.keep_log {
            out.log.push(IterationLog {
                iteration: k,
                state,
                control: report.control,
                epsilon: report.epsilon,
                feasible_count: report.feasible_count,
                best_f1: report.best_f1,
                best_f2: report.best_f2,
                fallback: report.fallback,
                time_ms: report.time_ms,
            });
        }
        let step: Step = match world.as_mut() {
            Some(w) => w.step(&state, &report.control, pc.ctx, spec.dt),
            None => corrected_step(&state, &report.control, pc.ctx, desc.as_ref(), pc.model, spec.dt),
        };
        out.traveled += (step.state.position() - state.position()).norm();
        state = step.state;
        out.states.push(state);
        if step.face.is_none() {
            out.outcome = Outcome::FailureOffmesh;
            out.message = "executed state left the mesh".into();
            break;
        }
        desc = pc.ctx.descriptor(&state.position());
        let dev = track(&state, &desc);
        dev_max = dev_max.max(dev);
        if dev >= pc.objectives.alpha_max {
            out.outcome = Outcome::FailureTipover;
            out.tipover = true;
            out.message = format!("attitude deviation {:.2} deg", dev.to_degrees());
            break;
        }
        let gap = (state.position() - goal).norm();
        if gap < spec.delta_term {
            out.outcome = Outcome::Success;
            out.traveled += gap;
            break;
        }
    }
    out.phi_max_deg = dev_max.to_degrees();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn desc(sigma: f64, incl: f64) -> TerrainDescriptor {
        TerrainDescriptor {
            n_x: -incl.sin(),
            n_y: 0.0,
            n_z: incl.cos(),
            sigma_z: sigma,
            gauss_k: 0.0,
            mean_h: 0.0,
            a_total: 1.0,
        }
    }

    #[test]
    fn adaptive_epsilon_cases() {
        let cfg = PlannerConfig::default();
        assert_abs_diff_eq!(adaptive_epsilon(&desc(0.0, 0.0), 0.2, &cfg), 0.5, epsilon = 1e-9);
        let d = desc(0.2, std::f64::consts::FRAC_PI_4);
        assert_abs_diff_eq!(adaptive_epsilon(&d, 0.2, &cfg), 0.25, epsilon = 1e-9);
        let cfg = PlannerConfig {
            gamma_r: 0.8,
            ..Default::default()
        };
        assert_abs_diff_eq!(adaptive_epsilon(&desc(0.2, 0.0), 0.2, &cfg), 0.15, epsilon = 1e-9);
    }

    #[test]
    fn selection_rules() {
        let mk = |f1: f64, f2: f64, hard: bool| CandidateScore {
            f1,
            f2,
            hard_violation: hard,
            feasible: false,
        };
        let mut s = vec![mk(3.0, 0.0, false), mk(1.0, 0.0, false), mk(2.0, 0.0, false)];
        assert_eq!(select_best(&mut s, 0.5), Some(1));
        let mut s = vec![mk(0.0, 0.6, false), mk(9.9, 0.1, false)];
        assert_eq!(select_best(&mut s, 0.5), Some(1));
        assert!(!s[0].feasible);
        let mut s = vec![mk(0.0, 0.0, true), mk(1.0, 0.0, true)];
        assert_eq!(select_best(&mut s, 0.5), None);
        let mut s = vec![mk(1.0, 0.3, false), mk(1.0, 0.1, false), mk(1.0, 0.1, false)];
        assert_eq!(select_best(&mut s, 0.5), Some(1));
    }

    #[test]
    fn warm_start_shift_and_clamp() {
        let prev: Vec<Control> = (0..5)
            .map(|i| Control {
                u0: i as f64 * 0.1,
                u1: 0.0,
            })
            .collect();
        let cfg = PlannerConfig {
            sigma_v: 0.0,
            sigma_omega: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = warm_start_sequence(&prev, &cfg, &mut rng);
        let u0: Vec<f64> = s.iter().map(|u| u.u0).collect();
        assert_eq!(u0, vec![0.1, 0.2, 0.30000000000000004, 0.4, 0.4]);
        let full = vec![Control { u0: 1.5, u1: 0.0 }; 4];
        let s = warm_start_sequence(&full, &PlannerConfig::default(), &mut rng);
        assert!(s.iter().all(|u| u.u0 <= 1.5 && u.u1.abs() <= 3.22));
        let a = warm_start_sequence(&full, &PlannerConfig::default(), &mut candidate_rng(3, 4, 5));
        let b = warm_start_sequence(&full, &PlannerConfig::default(), &mut candidate_rng(3, 4, 5));
        assert_eq!(a, b);
    }

    #[test]
    fn mix_separates_streams() {
        assert_ne!(mix(1, 2), mix(2, 1));
        let mut a = candidate_rng(7, 0, 0);
        let mut b = candidate_rng(7, 0, 1);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn outcome_names_roundtrip() {
        for o in [Outcome::Success, Outcome::Timeout, Outcome::FailureTipover] {
            assert_eq!(Outcome::parse(o.as_str()), Some(o));
        }
    }
}
