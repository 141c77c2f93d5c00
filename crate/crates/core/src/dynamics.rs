//! Kinematic vehicle model on the mesh and horizon rollouts.

use std::f64::consts::{PI, TAU};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::context::TerrainContext;
use crate::descriptor::TerrainDescriptor;
use crate::fmm::VectorField;
use crate::objectives::terrain_aligned_orientation;
use crate::residual::ResidualModel;

/// Wrap to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % TAU;
    if r <= -PI {
        r += TAU;
    } else if r > PI {
        r -= TAU;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl State {
    pub fn new(x: f64, y: f64, z: f64, phi: f64, theta: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            z,
            phi,
            theta,
            psi,
        }
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::new(self.x, self.y, self.z)
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.phi, self.theta, self.psi]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    /// State resting on the terrain at `(x, y)` with heading `psi`.
    pub fn on_terrain(ctx: &TerrainContext, x: f64, y: f64, psi: f64) -> Option<Self> {
        let (face, z) = ctx.surface(x, y)?;
        let (gx, gy) = ctx.gradient(x, y, face);
        let (phi, theta) = terrain_roll_pitch(gx, gy);
        Some(Self::new(x, y, z, phi, theta, wrap_angle(psi)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlLimits {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            v_max: 1.5,
            omega_max: 3.22,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub u0: f64,
    pub u1: f64,
}

impl Control {
    /// Control clamped to the admissible box.
    pub fn new(u0: f64, u1: f64, limits: &ControlLimits) -> Self {
        Self {
            u0: u0.clamp(-limits.v_max, limits.v_max),
            u1: u1.clamp(-limits.omega_max, limits.omega_max),
        }
    }

    pub const ZERO: Control = Control { u0: 0.0, u1: 0.0 };
}

/// Vehicle roll and pitch resting on a surface with gradient `(gx, gy)`.
pub fn terrain_roll_pitch(gx: f64, gy: f64) -> (f64, f64) {
    let phi = (-gy).atan2((1.0 + gx * gx).sqrt());
    let theta = gx.atan2((1.0 + gy * gy).sqrt());
    (phi, theta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: State,
    /// Face under the new position; `None` when it left the mesh.
    pub face: Option<usize>,
}

impl Step {
    pub fn off_mesh(&self) -> bool {
        self.face.is_none()
    }
}

/// One step of the kinematic model. Off the mesh, the planar advance and
/// yaw are applied and height and attitude are held.
pub fn nominal_step(state: &State, u: &Control, ctx: &TerrainContext, dt: f64) -> Step {
    let ds = u.u0 * state.theta.cos() * dt;
    let x = state.x + ds * state.psi.cos();
    let y = state.y + ds * state.psi.sin();
    let psi = wrap_angle(state.psi + u.u1 * dt);
    match ctx.surface(x, y) {
        Some((face, z)) => {
            let (gx, gy) = ctx.gradient(x, y, face);
            let (phi, theta) = terrain_roll_pitch(gx, gy);
            Step {
                state: State::new(x, y, z, phi, theta, psi),
                face: Some(face),
            }
        }
        None => Step {
            state: State { x, y, psi, ..*state },
            face: None,
        },
    }
}

/// Nominal step plus the learned residual. Without a model (or without a
/// descriptor to featurize) this is exactly [`nominal_step`].
pub fn corrected_step(
    state: &State,
    u: &Control,
    ctx: &TerrainContext,
    desc: Option<&TerrainDescriptor>,
    model: Option<&ResidualModel>,
    dt: f64,
) -> Step {
    let step = nominal_step(state, u, ctx, dt);
    let (Some(model), Some(desc), Some(_)) = (model, desc, step.face) else {
        return step;
    };
    let delta = model.predict_step(state, u, desc);
    let s = step.state;
    let next = State::new(
        s.x + delta[0],
        s.y + delta[1],
        s.z + delta[2],
        wrap_angle(s.phi + delta[3]),
        wrap_angle(s.theta + delta[4]),
        wrap_angle(s.psi + delta[5]),
    );
    Step {
        face: ctx.mesh.locate_face(next.x, next.y),
        state: next,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    pub descriptors: Vec<Option<TerrainDescriptor>>,
    /// `(delta_theta, delta_phi)` against the terrain-aligned attitude.
    pub deviations: Vec<(f64, f64)>,
    pub off_mesh: Vec<bool>,
    pub lethal: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

/// Attitude deviation of `state` from the terrain-aligned orientation of
/// `desc`, each wrapped to `(-pi, pi]`.
pub fn orientation_deviation(state: &State, desc: &TerrainDescriptor) -> (f64, f64) {
    let (theta_t, phi_t) = terrain_aligned_orientation(&desc.normal());
    (wrap_angle(state.theta - theta_t), wrap_angle(state.phi - phi_t))
}

/// Whether the vertex nearest `(x, y)` within `face` is lethal.
pub fn is_lethal_at(ctx: &TerrainContext, field: &VectorField, face: usize, x: f64, y: f64) -> bool {
    let f = ctx.mesh.faces()[face];
    let lam = ctx.mesh.barycentric_2d(face, x, y).unwrap_or([1.0 / 3.0; 3]);
    let k = (0..3).max_by(|&a, &b| lam[a].total_cmp(&lam[b])).unwrap();
    field.lethal()[f[k]]
}

/// Everything a rollout reads.
#[derive(Clone, Copy)]
pub struct RolloutEnv<'a> {
    pub ctx: &'a TerrainContext,
    pub field: Option<&'a VectorField>,
    pub model: Option<&'a ResidualModel>,
    pub dt: f64,
}

/// Roll `controls` forward from `x0`.
pub fn simulate_forward(x0: &State, controls: &[Control], env: &RolloutEnv) -> Trajectory {
    let d0 = env.ctx.descriptor(&x0.position());
    let face0 = env.ctx.mesh.locate_face(x0.x, x0.y);
    simulate_from(x0, face0, d0, controls, env)
}

/// [`simulate_forward`] with the start's face and descriptor already known.
pub fn simulate_from(
    x0: &State,
    face0: Option<usize>,
    d0: Option<TerrainDescriptor>,
    controls: &[Control],
    env: &RolloutEnv,
) -> Trajectory {
    let n = controls.len() + 1;
    let mut traj = Trajectory {
        states: Vec::with_capacity(n),
        controls: controls.to_vec(),
        descriptors: Vec::with_capacity(n),
        deviations: Vec::with_capacity(n),
        off_mesh: Vec::with_capacity(n),
        lethal: Vec::with_capacity(n),
    };
    push_state(&mut traj, env, *x0, face0, d0);
    let mut state = *x0;
    for u in controls {
        let desc = traj.descriptors.last().copied().flatten();
        let step = corrected_step(&state, u, env.ctx, desc.as_ref(), env.model, env.dt);
        state = step.state;
        let d = step.face.and_then(|_| env.ctx.descriptor(&state.position()));
        push_state(&mut traj, env, state, step.face, d);
    }
    traj
}

fn push_state(traj: &mut Trajectory, env: &RolloutEnv, s: State, face: Option<usize>, d: Option<TerrainDescriptor>) {
    let off = face.is_none();
    let lethal = match (face, env.field) {
        (Some(f), Some(field)) => is_lethal_at(env.ctx, field, f, s.x, s.y),
        _ => false,
    };
    let dev = d.as_ref().map_or((0.0, 0.0), |d| orientation_deviation(&s, d));
    traj.states.push(s);
    traj.descriptors.push(d);
    traj.deviations.push(dev);
    traj.off_mesh.push(off || d.is_none());
    traj.lethal.push(lethal);
}
