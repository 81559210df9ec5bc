//! The two-player game of tag.
//!
//! Both players are planar double integrators confined to a convex polygonal
//! arena, with a polyhedral speed limit and a box on the acceleration. The
//! pursuer (player 1) minimizes the time-averaged squared distance to the
//! evader plus a weighted difference in control effort; the evader minimizes
//! the negation, so the game is zero-sum.
//!
//! Trajectories are flat vectors laid out as `[x₁ … x_T, u₁ … u_T]` with
//! states `x = (px, py, vx, vy)` and controls `u = (ax, ay)`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use thiserror::Error;

pub const STATE_DIM: usize = 4;
pub const CONTROL_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("arena polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("arena polygon is not strictly convex at vertex {0}")]
    NonConvex(usize),
    #[error("limit `{name}` must be positive and finite, got {value}")]
    InvalidLimit { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlayerState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

impl PlayerState {
    pub fn new(position: [f64; 2], velocity: [f64; 2]) -> Self {
        Self { position, velocity }
    }

    pub fn at_rest(position: [f64; 2]) -> Self {
        Self::new(position, [0.0, 0.0])
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.position[0], self.position[1], self.velocity[0], self.velocity[1]]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new([x[0], x[1]], [x[2], x[3]])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// `normal · p ≤ offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Halfspace {
    pub normal: [f64; 2],
    pub offset: f64,
}

impl Halfspace {
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1]
    }
}

/// A strictly convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>"))]
pub struct ConvexPolygon {
    vertices: Vec<[f64; 2]>,
}

impl TryFrom<Vec<[f64; 2]>> for ConvexPolygon {
    type Error = EnvError;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, EnvError> {
        Self::new(v)
    }
}

impl From<ConvexPolygon> for Vec<[f64; 2]> {
    fn from(p: ConvexPolygon) -> Self {
        p.vertices
    }
}

impl ConvexPolygon {
    /// Accepts either orientation; clockwise input is reversed.
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Result<Self, EnvError> {
        let n = vertices.len();
        if n < 3 {
            return Err(EnvError::TooFewVertices(n));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(EnvError::NonConvex(0));
        }
        let signed_area: f64 = (0..n)
            .map(|i| {
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum();
        if signed_area < 0.0 {
            vertices.reverse();
        }
        for i in 0..n {
            let (a, b, c) = (vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
            let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            if !(cross > 0.0) {
                return Err(EnvError::NonConvex((i + 1) % n));
            }
        }
        Ok(Self { vertices })
    }

    /// Regular polygon centered at the origin with a vertex on the positive y axis.
    pub fn regular(sides: usize, circumradius: f64) -> Result<Self, EnvError> {
        let vertices = (0..sides)
            .map(|k| {
                let a = PI / 2.0 + 2.0 * PI * k as f64 / sides as f64;
                [circumradius * libm::cos(a), circumradius * libm::sin(a)]
            })
            .collect();
        Self::new(vertices)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// One halfspace per edge, with unit outward normals.
    pub fn halfspaces(&self) -> Vec<Halfspace> {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let len = libm::hypot(dx, dy);
                let normal = [dy / len, -dx / len];
                Halfspace { normal, offset: normal[0] * a[0] + normal[1] * a[1] }
            })
            .collect()
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        self.halfspaces().iter().all(|h| h.eval(p) <= h.offset + tol)
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
    }

    /// Area centroid.
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.vertices.len();
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let cross = a[0] * b[1] - b[0] * a[1];
            cx += (a[0] + b[0]) * cross;
            cy += (a[1] + b[1]) * cross;
        }
        let k = 1.0 / (6.0 * self.area());
        [cx * k, cy * k]
    }

    /// Largest vertex distance from the origin.
    pub fn radius(&self) -> f64 {
        self.vertices.iter().map(|v| libm::hypot(v[0], v[1])).fold(0.0, f64::max)
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    }

    /// Uniform sample by rejection from the bounding box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let (lo, hi) = self.bounding_box();
        loop {
            let p = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
            if self.contains(p, 0.0) {
                return p;
            }
        }
    }
}

/// Environment parameters shared by both players.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TagEnvSpec {
    pub arena: ConvexPolygon,
    /// Radius of the circle the octagonal speed limit is inscribed in (m/s).
    pub v_max: f64,
    /// Per-axis acceleration bound (m/s²).
    pub u_max: f64,
    pub dt: f64,
    pub horizon: usize,
    /// Weight of the control-effort difference in the pursuer's cost.
    pub effort_weight: f64,
    /// Require the terminal state to be able to brake to rest inside the arena.
    /// Makes receding-horizon replanning recursively feasible.
    pub terminal_braking: bool,
}

impl Default for TagEnvSpec {
    fn default() -> Self {
        Self {
            arena: ConvexPolygon::regular(5, 1.0).expect("pentagon is convex"),
            v_max: 0.8,
            u_max: 1.0,
            dt: 0.1,
            horizon: 20,
            effort_weight: 0.1,
            terminal_braking: true,
        }
    }
}

/// Number of two-sided rows describing the octagonal speed limit.
pub const SPEED_ROWS: usize = 4;

impl TagEnvSpec {
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        for (name, value) in [("v_max", self.v_max), ("u_max", self.u_max), ("dt", self.dt)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(EnvError::InvalidLimit { name, value });
            }
        }
        if !(self.effort_weight >= 0.0 && self.effort_weight.is_finite()) {
            return Err(EnvError::InvalidLimit { name: "effort_weight", value: self.effort_weight });
        }
        if self.horizon == 0 {
            return Err(EnvError::InvalidLimit { name: "horizon", value: 0.0 });
        }
        Ok(())
    }

    pub fn trajectory_dim(&self) -> usize {
        self.horizon * (STATE_DIM + CONTROL_DIM)
    }

    pub fn control_reference_dim(&self) -> usize {
        self.horizon * CONTROL_DIM
    }

    pub fn state_offset(&self, t: usize) -> usize {
        STATE_DIM * t
    }

    pub fn control_offset(&self, t: usize) -> usize {
        STATE_DIM * self.horizon + CONTROL_DIM * t
    }

    /// Unit normals of the octagon edges, one per pair of opposite edges.
    pub fn speed_normals(&self) -> [[f64; 2]; SPEED_ROWS] {
        core::array::from_fn(|k| {
            let a = PI / 8.0 + PI / 4.0 * k as f64;
            [libm::cos(a), libm::sin(a)]
        })
    }

    /// `|n·v| ≤ speed_bound()` for every octagon normal `n`.
    pub fn speed_bound(&self) -> f64 {
        self.v_max * libm::cos(PI / 8.0)
    }

    pub fn velocity_feasible(&self, v: [f64; 2], tol: f64) -> bool {
        let b = self.speed_bound();
        self.speed_normals()
            .iter()
            .all(|n| libm::fabs(n[0] * v[0] + n[1] * v[1]) <= b + tol)
    }

    /// Look-ahead used by the terminal braking rows: `n·p + c·n·v ≤ b`.
    pub fn braking_lookahead(&self) -> f64 {
        self.v_max / (2.0 * self.u_max)
    }

    /// Whether the state can brake to rest inside the arena.
    pub fn braking_safe(&self, x: &PlayerState, tol: f64) -> bool {
        let c = self.braking_lookahead();
        self.arena.halfspaces().iter().all(|h| {
            h.eval(x.position) + c * h.eval(x.velocity) <= h.offset + tol
        })
    }

    pub fn state_feasible(&self, x: &PlayerState, tol: f64) -> bool {
        x.is_finite()
            && self.arena.contains(x.position, tol)
            && self.velocity_feasible(x.velocity, tol)
    }

    /// Positions inside the arena, velocities in the speed polytope, and the
    /// state able to brake to rest; the latter guarantees a feasible plan.
    pub fn sample_player_state<R: Rng + ?Sized>(&self, rng: &mut R) -> PlayerState {
        loop {
            let position = self.arena.sample_uniform(rng);
            let v = [
                rng.random_range(-self.v_max..self.v_max),
                rng.random_range(-self.v_max..self.v_max),
            ];
            if !self.velocity_feasible(v, 0.0) {
                continue;
            }
            let x = PlayerState::new(position, v);
            if self.braking_safe(&x, 0.0) {
                return x;
            }
        }
    }
}

/// Minimum distance between the players' sampled initial positions (m).
pub const MIN_INITIAL_SEPARATION: f64 = 0.2;

pub fn sample_initial_state<R: Rng + ?Sized>(env: &TagEnvSpec, rng: &mut R) -> (PlayerState, PlayerState) {
    loop {
        let x1 = env.sample_player_state(rng);
        let x2 = env.sample_player_state(rng);
        let d = libm::hypot(x1.position[0] - x2.position[0], x1.position[1] - x2.position[1]);
        if d >= MIN_INITIAL_SEPARATION {
            return (x1, x2);
        }
    }
}

/// Exact zero-order-hold step of the double integrator.
pub fn step(x: &PlayerState, u: [f64; 2], dt: f64) -> PlayerState {
    let mut next = *x;
    for d in 0..2 {
        next.position[d] = x.position[d] + x.velocity[d] * dt + 0.5 * u[d] * dt * dt;
        next.velocity[d] = x.velocity[d] + u[d] * dt;
    }
    next
}

fn check_dims(tau1: &[f64], tau2: &[f64], spec: &TagEnvSpec) {
    assert_eq!(tau1.len(), spec.trajectory_dim(), "pursuer trajectory has wrong length");
    assert_eq!(tau2.len(), spec.trajectory_dim(), "evader trajectory has wrong length");
}

/// Time-averaged squared distance plus the weighted effort difference.
pub fn pursuer_cost(tau1: &[f64], tau2: &[f64], spec: &TagEnvSpec) -> f64 {
    check_dims(tau1, tau2, spec);
    let t_len = spec.horizon;
    let mut distance = 0.0;
    let mut effort = 0.0;
    for t in 0..t_len {
        let s = spec.state_offset(t);
        let dx = tau1[s] - tau2[s];
        let dy = tau1[s + 1] - tau2[s + 1];
        distance += dx * dx + dy * dy;
        let c = spec.control_offset(t);
        effort += tau1[c] * tau1[c] + tau1[c + 1] * tau1[c + 1]
            - tau2[c] * tau2[c]
            - tau2[c + 1] * tau2[c + 1];
    }
    (distance + spec.effort_weight * effort) / t_len as f64
}

pub fn evader_cost(tau1: &[f64], tau2: &[f64], spec: &TagEnvSpec) -> f64 {
    -pursuer_cost(tau1, tau2, spec)
}

/// Gradients of the pursuer cost with respect to both trajectories.
pub fn cost_gradients(tau1: &[f64], tau2: &[f64], spec: &TagEnvSpec) -> (DVector<f64>, DVector<f64>) {
    check_dims(tau1, tau2, spec);
    let n = spec.trajectory_dim();
    let k = 2.0 / spec.horizon as f64;
    let mut g1 = DVector::zeros(n);
    let mut g2 = DVector::zeros(n);
    for t in 0..spec.horizon {
        let s = spec.state_offset(t);
        for d in 0..2 {
            let diff = k * (tau1[s + d] - tau2[s + d]);
            g1[s + d] = diff;
            g2[s + d] = -diff;
        }
        let c = spec.control_offset(t);
        for d in 0..2 {
            g1[c + d] = k * spec.effort_weight * tau1[c + d];
            g2[c + d] = -k * spec.effort_weight * tau2[c + d];
        }
    }
    (g1, g2)
}

/// Extracts the position sequence of a flat trajectory.
pub fn positions(tau: &[f64], spec: &TagEnvSpec) -> Vec<[f64; 2]> {
    (0..spec.horizon)
        .map(|t| {
            let s = spec.state_offset(t);
            [tau[s], tau[s + 1]]
        })
        .collect()
}

pub fn controls(tau: &[f64], spec: &TagEnvSpec) -> Vec<[f64; 2]> {
    (0..spec.horizon)
        .map(|t| {
            let c = spec.control_offset(t);
            [tau[c], tau[c + 1]]
        })
        .collect()
}

pub fn state_at(tau: &[f64], spec: &TagEnvSpec, t: usize) -> PlayerState {
    PlayerState::from_slice(&tau[spec.state_offset(t)..spec.state_offset(t) + STATE_DIM])
}
