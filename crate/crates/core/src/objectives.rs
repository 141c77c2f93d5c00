//! Path-alignment cost `f1` and stability cost `f2`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::fmm::{goal_scaling, query_direction, VectorField};
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveParams {
    /// Radians.
    pub alpha_safe: f64,
    /// Radians.
    pub alpha_max: f64,
    /// Penalty per squared radian.
    pub kappa: f64,
    /// Goal-proximity exponent.
    pub scaling_exponent: f64,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self {
            alpha_safe: 30f64.to_radians(),
            alpha_max: 35f64.to_radians(),
            kappa: 10.0,
            scaling_exponent: 2.0,
        }
    }
}

impl ObjectiveParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 < self.alpha_safe && self.alpha_safe < self.alpha_max && self.alpha_max <= std::f64::consts::FRAC_PI_2)
        {
            return Err("need 0 < alpha_safe < alpha_max <= pi/2".into());
        }
        if self.kappa <= 0.0 {
            return Err("kappa must be positive".into());
        }
        if self.scaling_exponent <= 1.0 {
            return Err("scaling exponent must exceed 1".into());
        }
        Ok(())
    }
}

/// `(theta_terrain, phi_terrain)` for a unit surface normal.
pub fn terrain_aligned_orientation(n: &Vector3<f64>) -> (f64, f64) {
    (n.y.atan2(n.z), (-n.x).atan2(n.z))
}

/// Piecewise tilt penalty; `f64::INFINITY` at or beyond `alpha_max`.
pub fn tilt_violation(delta: f64, p: &ObjectiveParams) -> f64 {
    let a = delta.abs();
    if a <= p.alpha_safe {
        0.0
    } else if a < p.alpha_max {
        p.kappa * (a - p.alpha_safe).powi(2)
    } else {
        f64::INFINITY
    }
}

/// A cost with the hard-violation sentinel kept out of the value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cost {
    /// Finite partial sum.
    pub value: f64,
    pub hard_violation: bool,
}

/// `f1`: misalignment with the guidance field, weighted by goal proximity.
/// Steps that do not move count as fully misaligned.
pub fn path_alignment_cost(
    traj: &Trajectory,
    field: &VectorField,
    mesh: &TriangleMesh,
    d_max: f64,
    params: &ObjectiveParams,
) -> Cost {
    let goal = field.goal();
    let mut out = Cost::default();
    for i in 1..traj.states.len() {
        let p = traj.states[i].position();
        let d = p - traj.states[i - 1].position();
        let s = goal_scaling(&p, &goal, d_max, params.scaling_exponent);
        let Ok(dp) = query_direction(field, mesh, &p) else {
            out.hard_violation = true;
            continue;
        };
        let dn = d.norm();
        let misalign = if dn < 1e-9 {
            1.0
        } else {
            1.0 - d.dot(&dp) / (dn * dp.norm())
        };
        out.value += misalign * s;
    }
    out
}

/// `f2`: tilt penalties over every state, including the start.
pub fn stability_cost(traj: &Trajectory, params: &ObjectiveParams) -> Cost {
    let mut out = Cost::default();
    for (i, &(dt, dp)) in traj.deviations.iter().enumerate() {
        if traj.off_mesh.get(i).copied().unwrap_or(false) || traj.lethal.get(i).copied().unwrap_or(false) {
            out.hard_violation = true;
        }
        for v in [tilt_violation(dt, params), tilt_violation(dp, params)] {
            if v.is_finite() {
                out.value += v;
            } else {
                out.hard_violation = true;
            }
        }
    }
    out
}
