//! MPPI with weighted-sum scalarization of the two objectives. The
//! fixed-epsilon and unbiased-sampling baselines are configurations of
//! [`EpsPlanner`](crate::planner::EpsPlanner).

use std::time::Instant;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, State};
use crate::planner::{
    candidate_rng, fmm_suggested_control, rollout_with, score, EpsilonMode, Origin, PlanContext, PlanError,
    PlannerConfig, StepPlanner, StepReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiConfig {
    /// Softmax temperature.
    pub lambda: f64,
    pub w1: f64,
    pub w2: f64,
    pub samples: usize,
    pub sigma_v: f64,
    pub sigma_omega: f64,
    /// Cost added to rollouts with a hard violation.
    pub hard_penalty: f64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            w1: 1.0,
            w2: 1.0,
            samples: 100,
            sigma_v: 0.5,
            sigma_omega: 0.3,
            hard_penalty: 1e6,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.lambda > 0.0) {
            return Err(PlanError::Config("mppi lambda must be positive".into()));
        }
        if self.w1 < 0.0 || self.w2 < 0.0 || (self.w1 == 0.0 && self.w2 == 0.0) {
            return Err(PlanError::Config(
                "mppi weights must be non-negative and not both zero".into(),
            ));
        }
        if self.samples < 1 {
            return Err(PlanError::Config("mppi needs at least one sample".into()));
        }
        Ok(())
    }
}

/// Normalized `exp(-(c - c_min) / lambda)`.
pub fn mppi_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let c_min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = costs.iter().map(|c| (-(c - c_min) / lambda).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Nominal plus the weighted mean of the perturbations.
pub fn mppi_update(nominal: &[Control], perturbations: &[Vec<Control>], weights: &[f64]) -> Vec<Control> {
    let mut out = nominal.to_vec();
    for (p, &w) in perturbations.iter().zip(weights) {
        for (o, d) in out.iter_mut().zip(p) {
            o.u0 += w * d.u0;
            o.u1 += w * d.u1;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MppiPlanner {
    pub cfg: MppiConfig,
    /// Horizon, timing, limits, controller gains and seed.
    pub base: PlannerConfig,
    nominal: Option<Vec<Control>>,
}

impl MppiPlanner {
    pub fn new(cfg: MppiConfig, base: PlannerConfig) -> Self {
        Self {
            cfg,
            base,
            nominal: None,
        }
    }

    /// Field-following rollout used to seed the nominal sequence.
    fn initial_nominal(&self, origin: &Origin, pc: &PlanContext) -> Vec<Control> {
        let env = pc.env(self.base.dt);
        rollout_with(origin, self.base.horizon, &env, |_, s| {
            fmm_suggested_control(s, pc.field, pc.ctx, &self.base).unwrap_or(Control::ZERO)
        })
        .controls
    }
}

impl StepPlanner for MppiPlanner {
    fn reset(&mut self) {
        self.nominal = None;
    }

    fn plan(&mut self, state: &State, pc: &PlanContext, iteration: u64) -> Result<StepReport, PlanError> {
        let t0 = Instant::now();
        let origin = Origin::new(*state, pc.ctx);
        if origin.face.is_none() {
            return Err(PlanError::OffMesh { x: state.x, y: state.y });
        }
        let nominal = match self.nominal.take() {
            Some(n) if n.len() == self.base.horizon => n,
            _ => self.initial_nominal(&origin, pc),
        };
        let lim = self.base.limits();
        let env = pc.env(self.base.dt);
        let d_max = pc.d_max(self.base.d_max_mode);
        let nv = Normal::new(0.0, self.cfg.sigma_v).expect("finite sigma");
        let nw = Normal::new(0.0, self.cfg.sigma_omega).expect("finite sigma");
        let rolled: Vec<(Vec<Control>, f64, bool)> = (0..self.cfg.samples)
            .into_par_iter()
            .map(|j| {
                let mut rng = candidate_rng(self.base.seed, iteration, j as u64);
                let seq: Vec<Control> = nominal
                    .iter()
                    .map(|u| Control::new(u.u0 + nv.sample(&mut rng), u.u1 + nw.sample(&mut rng), &lim))
                    .collect();
                let traj = rollout_with(&origin, seq.len(), &env, |i, _| seq[i]);
                let s = score(&traj, pc.field, pc.ctx, d_max, pc.objectives);
                let mut c = self.cfg.w1 * s.f1 + self.cfg.w2 * s.f2;
                if s.hard_violation {
                    c += self.cfg.hard_penalty;
                }
                // Effective perturbation after clamping.
                let eff = seq
                    .iter()
                    .zip(&nominal)
                    .map(|(a, b)| Control {
                        u0: a.u0 - b.u0,
                        u1: a.u1 - b.u1,
                    })
                    .collect();
                (eff, c, s.hard_violation)
            })
            .collect();
        let costs: Vec<f64> = rolled.iter().map(|r| r.1).collect();
        let weights = mppi_weights(&costs, self.cfg.lambda);
        let perts: Vec<Vec<Control>> = rolled.iter().map(|r| r.0.clone()).collect();
        let updated: Vec<Control> = mppi_update(&nominal, &perts, &weights)
            .into_iter()
            .map(|u| Control::new(u.u0, u.u1, &lim))
            .collect();
        let control = updated[0];
        let mut next: Vec<Control> = updated[1..].to_vec();
        next.push(*updated.last().unwrap());
        self.nominal = Some(next);
        let feasible = rolled.iter().filter(|r| !r.2).count();
        let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(StepReport {
            control,
            epsilon: f64::NAN,
            feasible_count: feasible,
            best_f1: Some(best),
            best_f2: None,
            fallback: false,
            time_ms: t0.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Planner configuration for the fixed-epsilon baseline.
pub fn fixed_epsilon_config(base: &PlannerConfig, eps: f64) -> PlannerConfig {
    PlannerConfig {
        eps_mode: EpsilonMode::Fixed,
        eps_fixed: eps,
        ..base.clone()
    }
}

/// Planner configuration for pure random sampling.
pub fn unbiased_config(base: &PlannerConfig) -> PlannerConfig {
    PlannerConfig {
        alpha_fmm: 0.0,
        ..base.clone()
    }
}
