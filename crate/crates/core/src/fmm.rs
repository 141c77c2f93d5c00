//! Goal-directed guidance field from Fast Marching on the terrain mesh.
//!
//! The eikonal equation `|grad T| = cost` is solved outward from the goal
//! with a single priority-queue pass. Triangle updates use the planar-wave
//! solution over the two accepted corners; at obtuse corners the opposite
//! triangle is unfolded into the plane to split the angle into two acute
//! updates. Lethal vertices stay at infinity.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{self, DEFAULT_RADIUS};
use crate::mesh::TriangleMesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("goal ({x:.3}, {y:.3}) is off the mesh")]
    GoalOffMesh { x: f64, y: f64 },
    #[error("goal ({x:.3}, {y:.3}) lies in a lethal region")]
    UnreachableGoal { x: f64, y: f64 },
    #[error("no field direction at ({x:.3}, {y:.3})")]
    NoDirection { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VertexCostParams {
    pub w_height: f64,
    pub w_rough: f64,
    pub w_border: f64,
    pub w_inflate: f64,
    /// Radians.
    pub lethal_slope: f64,
    /// Meters of `sigma_z`.
    pub lethal_rough: f64,
    pub inflation_radius: f64,
    /// Neighborhood radius for per-vertex slope and roughness.
    pub radius: f64,
}

impl Default for VertexCostParams {
    fn default() -> Self {
        Self {
            w_height: 2.0,
            w_rough: 5.0,
            w_border: 10.0,
            w_inflate: 10.0,
            lethal_slope: 45f64.to_radians(),
            lethal_rough: 0.5,
            inflation_radius: 0.5,
            radius: DEFAULT_RADIUS,
        }
    }
}

/// Per-vertex eikonal speed multiplier and lethal flag.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexCosts {
    pub cost: Vec<f64>,
    pub lethal: Vec<bool>,
}

impl VertexCosts {
    pub fn uniform(n: usize) -> Self {
        Self {
            cost: vec![1.0; n],
            lethal: vec![false; n],
        }
    }
}

/// Linear inflation weight for a vertex `distance` meters from the nearest
/// lethal vertex.
pub fn inflation(distance: f64, radius: f64) -> f64 {
    if radius <= 0.0 {
        return 0.0;
    }
    (1.0 - distance / radius).clamp(0.0, 1.0)
}

pub fn vertex_costs(mesh: &TriangleMesh, params: &VertexCostParams) -> VertexCosts {
    let n = mesh.num_vertices();
    let verts = mesh.vertices();
    let mut lethal = vec![false; n];
    let mut base = vec![1.0; n];
    for v in 0..n {
        let p = verts[v];
        let (incl, sigma) = match (
            descriptor::weighted_normal(mesh, &p, params.radius),
            descriptor::roughness(mesh, &p, params.radius),
        ) {
            (Ok(nrm), Ok(s)) => (nrm.z.clamp(0.0, 1.0).acos(), s),
            _ => vertex_fallback(mesh, v),
        };
        let dh = mesh.vertex_neighbors()[v]
            .iter()
            .map(|&u| (verts[u].z - p.z).abs())
            .fold(0.0, f64::max);
        let border = if mesh.is_boundary(v) { 1.0 } else { 0.0 };
        base[v] = 1.0 + params.w_height * dh + params.w_rough * sigma + params.w_border * border;
        lethal[v] = incl > params.lethal_slope || sigma > params.lethal_rough;
    }
    let mut nearest = vec![f64::INFINITY; n];
    for v in (0..n).filter(|&v| lethal[v]) {
        mesh.for_each_vertex_near(&verts[v], params.inflation_radius, |u, d| {
            if d < nearest[u] {
                nearest[u] = d;
            }
        });
    }
    let cost = (0..n)
        .map(|v| base[v] + params.w_inflate * inflation(nearest[v], params.inflation_radius))
        .collect();
    VertexCosts { cost, lethal }
}

/// Slope and roughness from the one-ring when the radius query is empty.
fn vertex_fallback(mesh: &TriangleMesh, v: usize) -> (f64, f64) {
    let mut nrm = Vector3::zeros();
    for &f in &mesh.vertex_faces()[v] {
        nrm += mesh.face_normals()[f] * mesh.face_areas()[f];
    }
    let incl = if nrm.norm() > 0.0 {
        (nrm.z.abs() / nrm.norm()).clamp(0.0, 1.0).acos()
    } else {
        0.0
    };
    (incl, 0.0)
}

/// Which vertex-to-goal distance normalizes the goal-proximity scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DMaxMode {
    #[default]
    Euclidean,
    Geodesic,
}

#[derive(Debug, Clone)]
pub struct VectorField {
    distance: Vec<f64>,
    direction: Vec<Vector3<f64>>,
    lethal: Vec<bool>,
    goal: Point3<f64>,
    goal_vertices: Vec<usize>,
    d_max_euclidean: f64,
    d_max_geodesic: f64,
    acceptance: Vec<usize>,
}

impl VectorField {
    /// Geodesic distance `T_v`, infinite where unreachable.
    pub fn distance(&self) -> &[f64] {
        &self.distance
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.direction
    }

    pub fn lethal(&self) -> &[bool] {
        &self.lethal
    }

    pub fn goal(&self) -> Point3<f64> {
        self.goal
    }

    pub fn goal_vertices(&self) -> &[usize] {
        &self.goal_vertices
    }

    pub fn d_max(&self, mode: DMaxMode) -> f64 {
        match mode {
            DMaxMode::Euclidean => self.d_max_euclidean,
            DMaxMode::Geodesic => self.d_max_geodesic,
        }
    }

    /// Vertices in the order the front accepted them.
    pub fn acceptance_order(&self) -> &[usize] {
        &self.acceptance
    }

    pub fn is_reachable(&self, v: usize) -> bool {
        self.distance[v].is_finite()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Far,
    Trial,
    Accepted,
}

pub fn compute_field(mesh: &TriangleMesh, goal: Point3<f64>, costs: &VertexCosts) -> Result<VectorField, FieldError> {
    let n = mesh.num_vertices();
    let face = mesh
        .locate_face(goal.x, goal.y)
        .ok_or(FieldError::GoalOffMesh { x: goal.x, y: goal.y })?;
    let goal = match mesh.height(goal.x, goal.y) {
        Some(z) => Point3::new(goal.x, goal.y, z),
        None => goal,
    };
    let seeds = seed_vertices(mesh, face, &goal, &costs.lethal);
    if seeds.is_empty() {
        return Err(FieldError::UnreachableGoal { x: goal.x, y: goal.y });
    }

    let verts = mesh.vertices();
    let mut t = vec![f64::INFINITY; n];
    let mut status = vec![Status::Far; n];
    let mut fixed = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &s in &seeds {
        t[s] = (verts[s] - goal).norm();
        status[s] = Status::Trial;
        fixed[s] = true;
        heap.push(Entry(t[s], s));
    }
    let mut acceptance = Vec::with_capacity(n);
    while let Some(Entry(tv, v)) = heap.pop() {
        if status[v] == Status::Accepted || tv > t[v] {
            continue;
        }
        status[v] = Status::Accepted;
        acceptance.push(v);
        for &c in &mesh.vertex_neighbors()[v] {
            if status[c] == Status::Accepted || costs.lethal[c] || fixed[c] {
                continue;
            }
            let cand = update_vertex(mesh, costs, &t, &status, c, v);
            if cand < t[c] {
                t[c] = cand;
                status[c] = Status::Trial;
                heap.push(Entry(cand, c));
            }
        }
    }

    let direction = vertex_directions(mesh, &t, &costs.lethal, goal);
    let mut d_max_euclidean: f64 = 0.0;
    let mut d_max_geodesic: f64 = 0.0;
    for v in 0..n {
        if t[v].is_finite() {
            d_max_euclidean = d_max_euclidean.max((verts[v] - goal).norm());
            d_max_geodesic = d_max_geodesic.max(t[v]);
        }
    }
    Ok(VectorField {
        distance: t,
        direction,
        lethal: costs.lethal.clone(),
        goal,
        goal_vertices: seeds,
        d_max_euclidean,
        d_max_geodesic,
        acceptance,
    })
}

/// Non-lethal vertices of the goal face plus every vertex connected to
/// them within `SEED_EDGES` local edge lengths of the goal. These start
/// with their straight-line distance, which keeps the first-order front
/// from flattening the point source into a line source.
fn seed_vertices(mesh: &TriangleMesh, face: usize, goal: &Point3<f64>, lethal: &[bool]) -> Vec<usize> {
    let verts = mesh.vertices();
    let f = mesh.faces()[face];
    let edge = (0..3)
        .map(|k| (verts[f[k]] - verts[f[(k + 1) % 3]]).norm())
        .sum::<f64>()
        / 3.0;
    let radius = SEED_EDGES * edge;
    let mut seeds: Vec<usize> = f.iter().copied().filter(|&v| !lethal[v]).collect();
    let mut seen: std::collections::HashSet<usize> = seeds.iter().copied().collect();
    let mut i = 0;
    while i < seeds.len() {
        let v = seeds[i];
        i += 1;
        for &u in &mesh.vertex_neighbors()[v] {
            if !lethal[u] && (verts[u] - goal).norm() <= radius && seen.insert(u) {
                seeds.push(u);
            }
        }
    }
    seeds.sort_unstable();
    seeds
}

const SEED_EDGES: f64 = 3.0;

/// Best arrival time at `c` given that neighbor `a` was just accepted.
fn update_vertex(mesh: &TriangleMesh, costs: &VertexCosts, t: &[f64], status: &[Status], c: usize, a: usize) -> f64 {
    let verts = mesh.vertices();
    let mut best = t[a] + 0.5 * (costs.cost[a] + costs.cost[c]) * (verts[c] - verts[a]).norm();
    let accepted = |v: usize| status[v] == Status::Accepted && t[v].is_finite();
    for &f in &mesh.vertex_faces()[c] {
        let fv = mesh.faces()[f];
        if !fv.contains(&a) {
            continue;
        }
        let b = fv.iter().copied().find(|&v| v != a && v != c).unwrap();
        let speed = (costs.cost[a] + costs.cost[b] + costs.cost[c]) / 3.0;
        let local = Local::new(verts[c], verts[a], verts[b]);
        if local.angle_c() <= FRAC_PI_2 + 1e-12 {
            if accepted(b) {
                if let Some(v) = solve_triangle(local.a, local.b, t[a], t[b], speed) {
                    best = best.min(v);
                }
            }
            continue;
        }
        // Obtuse at c: look for an unfolded vertex inside the angle.
        if let Some((d, dpos)) = unfold_split(mesh, f, a, b, c, &local) {
            if accepted(d) {
                for (v, pos) in [(a, local.a), (b, local.b)] {
                    if accepted(v) {
                        if let Some(tc) = solve_triangle(pos, dpos, t[v], t[d], speed) {
                            best = best.min(tc);
                        }
                    }
                }
            }
        }
    }
    best
}

/// Triangle `c, a, b` laid flat with `c` at the origin and `a` on +x.
struct Local {
    a: Vector2<f64>,
    b: Vector2<f64>,
}

impl Local {
    fn new(c: Point3<f64>, a: Point3<f64>, b: Point3<f64>) -> Self {
        let ca = a - c;
        let cb = b - c;
        let la = ca.norm();
        let lb = cb.norm();
        let cos = (ca.dot(&cb) / (la * lb)).clamp(-1.0, 1.0);
        let sin = (1.0 - cos * cos).sqrt();
        Self {
            a: Vector2::new(la, 0.0),
            b: Vector2::new(lb * cos, lb * sin),
        }
    }

    fn angle_c(&self) -> f64 {
        self.b.y.atan2(self.b.x)
    }
}

/// Reflect-free unfolding of the vertex across edge `(p, q)` of the flat
/// configuration: the point at distances `dp`, `dq` on the side of the
/// edge away from `away`.
fn unfold_point(p: Vector2<f64>, q: Vector2<f64>, dp: f64, dq: f64, away: Vector2<f64>) -> Option<Vector2<f64>> {
    let e = q - p;
    let l = e.norm();
    if l == 0.0 {
        return None;
    }
    let x = (dp * dp - dq * dq + l * l) / (2.0 * l);
    let h2 = dp * dp - x * x;
    if h2 < 0.0 {
        return None;
    }
    let ex = e / l;
    let ey = Vector2::new(-ex.y, ex.x);
    let side = (away - p).dot(&ey);
    let h = h2.sqrt() * if side > 0.0 { -1.0 } else { 1.0 };
    Some(p + ex * x + ey * h)
}

fn inside_angle(a: Vector2<f64>, b: Vector2<f64>, d: Vector2<f64>) -> bool {
    let cross = |u: Vector2<f64>, v: Vector2<f64>| u.x * v.y - u.y * v.x;
    cross(a, d) > 0.0 && cross(d, b) > 0.0
}

/// Walk across the edge opposite the obtuse corner, unfolding triangles,
/// until a vertex lands strictly inside the angle at `c`.
fn unfold_split(
    mesh: &TriangleMesh,
    face: usize,
    a: usize,
    b: usize,
    c: usize,
    local: &Local,
) -> Option<(usize, Vector2<f64>)> {
    let verts = mesh.vertices();
    let (mut cur_face, mut p, mut q) = (face, a, b);
    let (mut pp, mut qp) = (local.a, local.b);
    let mut prev_opposite = Vector2::zeros();
    for _ in 0..8 {
        let k = edge_slot(mesh, cur_face, p, q)?;
        let next = mesh.face_adjacency()[cur_face][k]?;
        let d = mesh.faces()[next].iter().copied().find(|&v| v != p && v != q)?;
        if d == c {
            return None;
        }
        let dp = (verts[d] - verts[p]).norm();
        let dq = (verts[d] - verts[q]).norm();
        let dpos = unfold_point(pp, qp, dp, dq, prev_opposite)?;
        if inside_angle(local.a, local.b, dpos) {
            return Some((d, dpos));
        }
        // Continue across whichever new edge the bisector ray crosses.
        let cross = |u: Vector2<f64>, v: Vector2<f64>| u.x * v.y - u.y * v.x;
        let bis = local.a.normalize() + local.b.normalize();
        prev_opposite = if cross(bis, dpos) > 0.0 { qp } else { pp };
        if cross(bis, dpos) > 0.0 {
            // d is on the b side of the ray: next edge (p, d).
            q = d;
            qp = dpos;
        } else {
            p = d;
            pp = dpos;
        }
        cur_face = next;
    }
    None
}

fn edge_slot(mesh: &TriangleMesh, face: usize, p: usize, q: usize) -> Option<usize> {
    let f = mesh.faces()[face];
    (0..3).find(|&k| {
        let (u, v) = (f[k], f[(k + 1) % 3]);
        (u == p && v == q) || (u == q && v == p)
    })
}

/// Planar-wave arrival at the origin from corners at `a`, `b` with times
/// `ta`, `tb`. `None` when the characteristic does not enter through the
/// triangle.
fn solve_triangle(a: Vector2<f64>, b: Vector2<f64>, ta: f64, tb: f64, speed: f64) -> Option<f64> {
    let det = a.x * b.y - a.y * b.x;
    if det.abs() < 1e-14 {
        return None;
    }
    // Rows of P are a and b; P^{-1} applied to 1 and to (ta, tb).
    let inv = |r: Vector2<f64>| Vector2::new((b.y * r.x - a.y * r.y) / det, (-b.x * r.x + a.x * r.y) / det);
    let u = inv(Vector2::new(1.0, 1.0));
    let w = inv(Vector2::new(ta, tb));
    let qa = u.dot(&u);
    let qb = u.dot(&w);
    let qc = w.dot(&w) - speed * speed;
    let disc = qb * qb - qa * qc;
    if disc < 0.0 {
        return None;
    }
    let tc = (qb + disc.sqrt()) / qa;
    if tc < ta.max(tb) {
        return None;
    }
    // Gradient g = w - tc u; -g must lie in the cone spanned by a and b.
    let g = w - u * tc;
    let m = -g;
    let alpha = (m.x * b.y - m.y * b.x) / det;
    let beta = (a.x * m.y - a.y * m.x) / det;
    if alpha < -1e-12 || beta < -1e-12 {
        return None;
    }
    Some(tc)
}

fn vertex_directions(mesh: &TriangleMesh, t: &[f64], lethal: &[bool], goal: Point3<f64>) -> Vec<Vector3<f64>> {
    let verts = mesh.vertices();
    let n = verts.len();
    let mut face_grad = vec![None; mesh.num_faces()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        if f.iter().any(|&v| !t[v].is_finite()) {
            continue;
        }
        let p = mesh.face_points(fi);
        let nrm = mesh.face_normals()[fi];
        let two_a = 2.0 * mesh.face_areas()[fi];
        let mut g = Vector3::zeros();
        for k in 0..3 {
            let e = p[(k + 2) % 3] - p[(k + 1) % 3];
            g += nrm.cross(&e) * (t[f[k]] / two_a);
        }
        face_grad[fi] = Some(g);
    }
    let mut dirs = vec![Vector3::zeros(); n];
    for v in 0..n {
        if !t[v].is_finite() {
            continue;
        }
        let mut acc = Vector3::zeros();
        for &f in &mesh.vertex_faces()[v] {
            if let Some(g) = face_grad[f] {
                acc -= g * mesh.face_areas()[f];
            }
        }
        let mut d = if acc.norm() > 1e-12 {
            acc.normalize()
        } else {
            // Steepest descent along edges, or straight at the goal.
            let best = mesh.vertex_neighbors()[v]
                .iter()
                .copied()
                .filter(|&u| t[u] < t[v])
                .min_by(|&x, &y| t[x].total_cmp(&t[y]));
            let to = match best {
                Some(u) => verts[u] - verts[v],
                None => goal - verts[v],
            };
            if to.norm() > 1e-12 {
                to.normalize()
            } else {
                Vector3::x()
            }
        };
        let blocked: Vec<Vector3<f64>> = mesh.vertex_neighbors()[v]
            .iter()
            .filter(|&&u| lethal[u])
            .map(|&u| (verts[u] - verts[v]).normalize())
            .collect();
        if !blocked.is_empty() {
            d = deflect(d, &blocked);
        }
        dirs[v] = d;
    }
    dirs
}

/// Remove components of `d` pointing at lethal neighbors.
fn deflect(mut d: Vector3<f64>, blocked: &[Vector3<f64>]) -> Vector3<f64> {
    let original = d;
    for _ in 0..16 {
        let worst = blocked.iter().map(|e| (d.dot(e), e)).max_by(|x, y| x.0.total_cmp(&y.0));
        match worst {
            Some((s, e)) if s > 1e-9 => {
                d -= e * s;
                if d.norm() < 1e-9 {
                    break;
                }
                d.normalize_mut();
            }
            _ => return d,
        }
    }
    // Boxed in: point away from the lethal neighbors.
    let away: Vector3<f64> = -blocked.iter().sum::<Vector3<f64>>();
    if away.norm() > 1e-9 {
        away.normalize()
    } else {
        original
    }
}

/// Barycentric blend of vertex directions at `p`, renormalized. Vertices
/// with infinite distance are left out of the blend.
pub fn query_direction(field: &VectorField, mesh: &TriangleMesh, p: &Point3<f64>) -> Result<Vector3<f64>, FieldError> {
    let err = FieldError::NoDirection { x: p.x, y: p.y };
    let face = mesh.locate_face(p.x, p.y).ok_or(err.clone())?;
    let lam = mesh.barycentric_2d(face, p.x, p.y).ok_or(err.clone())?;
    let f = mesh.faces()[face];
    let mut acc = Vector3::zeros();
    let mut wsum = 0.0;
    let mut strongest: Option<(f64, usize)> = None;
    for k in 0..3 {
        if field.distance[f[k]].is_finite() {
            let w = lam[k].clamp(0.0, 1.0);
            acc += field.direction[f[k]] * w;
            wsum += w;
            if strongest.is_none_or(|(sw, _)| w > sw) {
                strongest = Some((w, f[k]));
            }
        }
    }
    let Some((_, top)) = strongest else { return Err(err) };
    if wsum > 0.0 && acc.norm() > 1e-9 {
        Ok(acc.normalize())
    } else {
        Ok(field.direction[top])
    }
}

/// `1 - (|p - goal| / d_max)^exponent`, ratio clamped to `[0, 1]`.
pub fn goal_scaling(p: &Point3<f64>, goal: &Point3<f64>, d_max: f64, exponent: f64) -> f64 {
    let ratio = if d_max > 0.0 {
        ((p - goal).norm() / d_max).clamp(0.0, 1.0)
    } else {
        0.0
    };
    1.0 - ratio.powf(exponent)
}
