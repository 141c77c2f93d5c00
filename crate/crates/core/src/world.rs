//! Synthetic ground-truth vehicle: the kinematic model plus slope-driven
//! attitude slip and speed-proportional yaw drift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::context::TerrainContext;
use crate::dynamics::{nominal_step, wrap_angle, Control, ControlLimits, State, Step};
use crate::objectives::terrain_aligned_orientation;
use crate::residual::{residual_features, FeatureMode, ResidualSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlipParams {
    /// Roll offset per radian of terrain pitch.
    pub roll_gain: f64,
    /// Pitch offset per radian of terrain roll.
    pub pitch_gain: f64,
    /// Yaw drift in rad per meter of commanded travel.
    pub yaw_drift: f64,
    /// Standard deviation of attitude noise, radians.
    pub noise: f64,
}

impl Default for SlipParams {
    fn default() -> Self {
        Self {
            roll_gain: 0.05,
            pitch_gain: 0.05,
            yaw_drift: 0.02,
            noise: 0.002,
        }
    }
}

/// Stateful ground-truth plant; owns its noise stream.
#[derive(Debug, Clone)]
pub struct SlipWorld {
    pub params: SlipParams,
    rng: ChaCha8Rng,
}

impl SlipWorld {
    pub fn new(params: SlipParams, seed: u64) -> Self {
        Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn step(&mut self, state: &State, u: &Control, ctx: &TerrainContext, dt: f64) -> Step {
        let nominal = nominal_step(state, u, ctx, dt);
        let noise = Normal::new(0.0, self.params.noise.max(0.0)).expect("finite sigma");
        let (n_roll, n_pitch) = (noise.sample(&mut self.rng), noise.sample(&mut self.rng));
        if nominal.face.is_none() {
            return nominal;
        }
        let mut s = nominal.state;
        if let Some(d) = ctx.descriptor(&s.position()) {
            let (theta_t, phi_t) = terrain_aligned_orientation(&d.normal());
            s.phi = wrap_angle(s.phi + self.params.roll_gain * theta_t + n_roll);
            s.theta = wrap_angle(s.theta + self.params.pitch_gain * phi_t + n_pitch);
        }
        s.psi = wrap_angle(s.psi + self.params.yaw_drift * u.u0 * dt);
        Step {
            state: s,
            face: nominal.face,
        }
    }
}

/// Residual between the slip world and the kinematic model along random
/// drives. Each drive holds a random control for a few steps and restarts
/// at a random on-mesh point when it leaves the mesh.
pub fn collect_residuals(
    ctx: &TerrainContext,
    params: SlipParams,
    limits: &ControlLimits,
    dt: f64,
    count: usize,
    mode: FeatureMode,
    seed: u64,
) -> Vec<ResidualSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = SlipWorld::new(params, seed.wrapping_add(1));
    let (lo, hi) = ctx.mesh.bounds();
    let spawn = |rng: &mut ChaCha8Rng| loop {
        let x = rng.random_range(lo[0]..=hi[0]);
        let y = rng.random_range(lo[1]..=hi[1]);
        let psi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        if let Some(s) = State::on_terrain(ctx, x, y, psi) {
            return s;
        }
    };
    let mut out = Vec::with_capacity(count);
    let mut state = spawn(&mut rng);
    let mut u = Control::ZERO;
    let mut hold = 0;
    while out.len() < count {
        if hold == 0 {
            u = Control::new(
                rng.random_range(0.0..=limits.v_max),
                rng.random_range(-limits.omega_max..=limits.omega_max) * 0.5,
                limits,
            );
            hold = rng.random_range(3..12);
        }
        hold -= 1;
        let Some(desc) = ctx.descriptor(&state.position()) else {
            state = spawn(&mut rng);
            continue;
        };
        let nominal = nominal_step(&state, &u, ctx, dt);
        let truth = world.step(&state, &u, ctx, dt);
        if truth.face.is_none() {
            state = spawn(&mut rng);
            continue;
        }
        let a = nominal.state.as_array();
        let b = truth.state.as_array();
        let mut delta = [0.0; 6];
        for k in 0..6 {
            delta[k] = if k >= 3 { wrap_angle(b[k] - a[k]) } else { b[k] - a[k] };
        }
        out.push(ResidualSample {
            features: residual_features(&state, &u, &desc, mode),
            delta,
        });
        state = truth.state;
    }
    out
}
