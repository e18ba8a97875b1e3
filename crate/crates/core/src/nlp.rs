//! The joint trajectory/separator NLP: decision-variable packing, the four
//! cost terms, kinematics and separation constraints, and analytic first
//! derivatives.
//!
//! One polynomial is shared per obstacle across the whole horizon, so the
//! decision vector is `q_1..q_N, u_0..u_{N-1}, coef(p_1)..coef(p_K)` — length
//! `6N + 6K`, with `q_0` pinned to the start pose. Input bounds are simple
//! box bounds, never constraint rows; hyperplane mode pins each separator's
//! three quadratic coefficients via equal lower/upper bounds.

use alloc::vec::Vec;

use crate::footprint::Footprint;
use crate::geom_poly::{monomials, Pose, QuadPoly, SeparatorDegree, Twist, NUM_COEFFS};
use crate::math;
use crate::obstacle::ObstacleCluster;

pub type Mat2 = [[f64; 2]; 2];
pub type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlpError {
    /// Horizon must have at least 2 steps.
    HorizonTooShort,
    NonPositiveDt,
    /// Reference must hold exactly N+1 poses.
    ReferenceLengthMismatch,
    /// Some component of u_min exceeds u_max.
    InvertedInputBounds,
    NonPositiveMargin,
    /// Negative diagonal or non-finite entry in a weight matrix.
    BadWeights,
}

impl core::fmt::Display for NlpError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NlpError::HorizonTooShort => write!(f, "horizon must span at least 2 steps"),
            NlpError::NonPositiveDt => write!(f, "dt must be positive"),
            NlpError::ReferenceLengthMismatch => write!(f, "reference must hold N+1 poses"),
            NlpError::InvertedInputBounds => write!(f, "u_min must not exceed u_max"),
            NlpError::NonPositiveMargin => write!(f, "separation margin must be positive"),
            NlpError::BadWeights => write!(f, "weight matrices must be finite PSD"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NlpError {}

/// Cost weights. All matrices are expected PSD; gradients symmetrize, so
/// mildly asymmetric inputs still differentiate exactly.
#[derive(Clone, Copy, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Weights {
    /// Tracking error weight.
    pub q_eq: Mat3,
    /// Terminal (goal) error weight.
    pub q_fq: Mat3,
    /// Linear acceleration weight.
    pub q_a: Mat2,
    /// Angular acceleration weight.
    pub q_alpha: f64,
    /// Input magnitude weight.
    pub r: Mat3,
    /// Diagonal per-coefficient separator penalty; orders of magnitude below
    /// the motion weights, quadratic entries below linear ones, so separators
    /// degenerate to hyperplanes unless non-convexity pays for itself.
    pub q_p: [f64; NUM_COEFFS],
}

fn diag3(a: f64, b: f64, c: f64) -> Mat3 {
    [[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]]
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            q_eq: diag3(1.0, 1.0, 0.3),
            q_fq: diag3(50.0, 50.0, 10.0),
            q_a: [[0.5, 0.0], [0.0, 0.5]],
            q_alpha: 0.3,
            r: diag3(0.1, 0.1, 0.05),
            q_p: [1e-4, 1e-4, 1e-4, 1e-5, 1e-5, 1e-5],
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<(), NlpError> {
        let mat_ok = |m: &[&[f64]]| {
            m.iter().enumerate().all(|(i, row)| {
                row.iter().all(|v| v.is_finite()) && row[i] >= 0.0
            })
        };
        let q3 = |m: &Mat3| mat_ok(&[&m[0], &m[1], &m[2]]);
        let ok = q3(&self.q_eq)
            && q3(&self.q_fq)
            && q3(&self.r)
            && mat_ok(&[&self.q_a[0], &self.q_a[1]])
            && self.q_alpha >= 0.0
            && self.q_p.iter().all(|&v| v.is_finite() && v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(NlpError::BadWeights)
        }
    }
}

/// One receding-horizon NLP instance: fixed start, goal, reference window,
/// obstacle set, and weights.
#[derive(Clone, Debug)]
pub struct PlanProblem {
    /// Horizon steps N (N+1 poses, N inputs).
    pub n: usize,
    pub dt: f64,
    /// q_0, pinned — not a decision variable.
    pub start: Pose,
    pub goal: Pose,
    /// N+1 reference poses.
    pub reference: Vec<Pose>,
    pub obstacles: Vec<ObstacleCluster>,
    pub footprint: Footprint,
    pub u_min: Twist,
    pub u_max: Twist,
    pub weights: Weights,
    /// Strict separation margin; must be positive, otherwise the zero
    /// polynomial satisfies every separation row and the constraints are
    /// vacuous.
    pub sep_margin: f64,
    pub degree: SeparatorDegree,
    /// Radius of the workspace ball the obstacles were gathered from.
    pub workspace_radius: f64,
}

impl PlanProblem {
    pub fn validate(&self) -> Result<(), NlpError> {
        if self.n < 2 {
            return Err(NlpError::HorizonTooShort);
        }
        if !(self.dt > 0.0) {
            return Err(NlpError::NonPositiveDt);
        }
        if self.reference.len() != self.n + 1 {
            return Err(NlpError::ReferenceLengthMismatch);
        }
        let inverted = self.u_min.vx > self.u_max.vx
            || self.u_min.vy > self.u_max.vy
            || self.u_min.omega > self.u_max.omega;
        if inverted {
            return Err(NlpError::InvertedInputBounds);
        }
        if !(self.sep_margin > 0.0) {
            return Err(NlpError::NonPositiveMargin);
        }
        self.weights.validate()
    }

    pub fn num_obstacles(&self) -> usize {
        self.obstacles.len()
    }

    pub fn num_vars(&self) -> usize {
        6 * self.n + NUM_COEFFS * self.obstacles.len()
    }

    /// Box bounds over the decision vector: states free, inputs clamped to
    /// `[u_min, u_max]`, separator coefficients free except in hyperplane
    /// mode, where the quadratic coefficients are pinned at zero.
    pub fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let nv = self.num_vars();
        let mut lb = alloc::vec![f64::NEG_INFINITY; nv];
        let mut ub = alloc::vec![f64::INFINITY; nv];
        for tau in 0..self.n {
            let i = idx_input(self.n, tau);
            lb[i] = self.u_min.vx;
            lb[i + 1] = self.u_min.vy;
            lb[i + 2] = self.u_min.omega;
            ub[i] = self.u_max.vx;
            ub[i + 1] = self.u_max.vy;
            ub[i + 2] = self.u_max.omega;
        }
        if self.degree == SeparatorDegree::Hyperplane {
            for k in 0..self.obstacles.len() {
                let base = idx_coef(self.n, k);
                for i in SeparatorDegree::Hyperplane.active_coeffs()..NUM_COEFFS {
                    lb[base + i] = 0.0;
                    ub[base + i] = 0.0;
                }
            }
        }
        (lb, ub)
    }
}

/// Flat index of state q_tau (tau in 1..=N).
pub fn idx_state(_n: usize, tau: usize) -> usize {
    debug_assert!(tau >= 1);
    3 * (tau - 1)
}

/// Flat index of input u_tau (tau in 0..N).
pub fn idx_input(n: usize, tau: usize) -> usize {
    3 * n + 3 * tau
}

/// Flat index of coef(p_k).
pub fn idx_coef(n: usize, k: usize) -> usize {
    6 * n + NUM_COEFFS * k
}

/// Packed decision variables: `q_1..q_N | u_0..u_{N-1} | coef(p_1)..coef(p_K)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecisionVector {
    data: Vec<f64>,
    n: usize,
    k: usize,
}

impl DecisionVector {
    pub fn zeros(n: usize, k: usize) -> Self {
        DecisionVector { data: alloc::vec![0.0; 6 * n + NUM_COEFFS * k], n, k }
    }

    /// Packs explicit parts: `states` are q_1..q_N (no start pose), `inputs`
    /// u_0..u_{N-1}, `polys` one per obstacle.
    pub fn from_parts(states: &[Pose], inputs: &[Twist], polys: &[QuadPoly]) -> Self {
        assert_eq!(states.len(), inputs.len(), "need as many states q_1..q_N as inputs");
        let n = states.len();
        let mut z = DecisionVector::zeros(n, polys.len());
        for (tau, q) in states.iter().enumerate() {
            z.set_state(tau + 1, *q);
        }
        for (tau, u) in inputs.iter().enumerate() {
            z.set_input(tau, *u);
        }
        for (k, p) in polys.iter().enumerate() {
            z.set_poly(k, *p);
        }
        z
    }

    pub fn horizon(&self) -> usize {
        self.n
    }

    pub fn num_polys(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn from_raw(data: Vec<f64>, n: usize, k: usize) -> Self {
        assert_eq!(data.len(), 6 * n + NUM_COEFFS * k);
        DecisionVector { data, n, k }
    }

    pub fn state(&self, tau: usize) -> Pose {
        debug_assert!((1..=self.n).contains(&tau), "q_0 is pinned, not stored");
        let i = idx_state(self.n, tau);
        Pose { x: self.data[i], y: self.data[i + 1], psi: self.data[i + 2] }
    }

    pub fn set_state(&mut self, tau: usize, q: Pose) {
        let i = idx_state(self.n, tau);
        self.data[i] = q.x;
        self.data[i + 1] = q.y;
        self.data[i + 2] = q.psi;
    }

    pub fn input(&self, tau: usize) -> Twist {
        debug_assert!(tau < self.n);
        let i = idx_input(self.n, tau);
        Twist { vx: self.data[i], vy: self.data[i + 1], omega: self.data[i + 2] }
    }

    pub fn set_input(&mut self, tau: usize, u: Twist) {
        let i = idx_input(self.n, tau);
        self.data[i] = u.vx;
        self.data[i + 1] = u.vy;
        self.data[i + 2] = u.omega;
    }

    pub fn poly(&self, k: usize) -> QuadPoly {
        debug_assert!(k < self.k);
        let i = idx_coef(self.n, k);
        let mut coef = [0.0; NUM_COEFFS];
        coef.copy_from_slice(&self.data[i..i + NUM_COEFFS]);
        QuadPoly::new(coef)
    }

    pub fn set_poly(&mut self, k: usize, p: QuadPoly) {
        let i = idx_coef(self.n, k);
        self.data[i..i + NUM_COEFFS].copy_from_slice(&p.coef);
    }

    /// All N+1 poses including the pinned start.
    pub fn states_with(&self, start: Pose) -> Vec<Pose> {
        let mut out = Vec::with_capacity(self.n + 1);
        out.push(start);
        for tau in 1..=self.n {
            out.push(self.state(tau));
        }
        out
    }

    pub fn inputs(&self) -> Vec<Twist> {
        (0..self.n).map(|tau| self.input(tau)).collect()
    }

    pub fn polys(&self) -> Vec<QuadPoly> {
        (0..self.k).map(|k| self.poly(k)).collect()
    }
}

/// Explicit Euler step of the holonomic kinematics, body-frame velocities
/// rotated into the world.
pub fn kinematics_step(q: Pose, u: Twist, dt: f64) -> Pose {
    let (s, c) = (math::sin(q.psi), math::cos(q.psi));
    Pose {
        x: q.x + dt * (u.vx * c - u.vy * s),
        y: q.y + dt * (u.vx * s + u.vy * c),
        psi: q.psi + dt * u.omega,
    }
}

/// Wrapped angle difference `a - b` in (−π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = a - b;
    math::atan2(math::sin(d), math::cos(d))
}

/// Pose tracking error with wrapped heading component.
pub fn pose_error(q: Pose, r: Pose) -> [f64; 3] {
    [q.x - r.x, q.y - r.y, angle_diff(q.psi, r.psi)]
}

fn quad3(m: &Mat3, v: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for (i, row) in m.iter().enumerate() {
        for (j, &mij) in row.iter().enumerate() {
            s += v[i] * mij * v[j];
        }
    }
    s
}

/// `(M + Mᵀ)·v` — the exact gradient of `vᵀMv`.
fn sym_mul3(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i] += (m[i][j] + m[j][i]) * v[j];
        }
    }
    out
}

fn quad2(m: &Mat2, v: [f64; 2]) -> f64 {
    v[0] * (m[0][0] * v[0] + m[0][1] * v[1]) + v[1] * (m[1][0] * v[0] + m[1][1] * v[1])
}

fn sym_mul2(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [
        (m[0][0] + m[0][0]) * v[0] + (m[0][1] + m[1][0]) * v[1],
        (m[1][0] + m[0][1]) * v[0] + (m[1][1] + m[1][1]) * v[1],
    ]
}

fn cost_impl(problem: &PlanProblem, z: &DecisionVector, mut grad: Option<&mut [f64]>) -> f64 {
    let n = problem.n;
    let w = &problem.weights;
    let mut j = 0.0;

    // tracking (τ = 0 is the pinned start: constant cost, no gradient)
    j += quad3(&w.q_eq, pose_error(problem.start, problem.reference[0]));
    for tau in 1..=n {
        let e = pose_error(z.state(tau), problem.reference[tau]);
        j += quad3(&w.q_eq, e);
        if let Some(grad) = grad.as_deref_mut() {
            let g = sym_mul3(&w.q_eq, e);
            let i = idx_state(n, tau);
            grad[i] += g[0];
            grad[i + 1] += g[1];
            grad[i + 2] += g[2];
        }
    }

    // terminal error is against the goal, not the reference tail
    {
        let e = pose_error(z.state(n), problem.goal);
        j += quad3(&w.q_fq, e);
        if let Some(grad) = grad.as_deref_mut() {
            let g = sym_mul3(&w.q_fq, e);
            let i = idx_state(n, n);
            grad[i] += g[0];
            grad[i + 1] += g[1];
            grad[i + 2] += g[2];
        }
    }

    // smoothness over input differences
    for tau in 0..n.saturating_sub(1) {
        let u0 = z.input(tau);
        let u1 = z.input(tau + 1);
        let a = [u1.vx - u0.vx, u1.vy - u0.vy];
        let alpha = u1.omega - u0.omega;
        j += quad2(&w.q_a, a) + w.q_alpha * alpha * alpha;
        if let Some(grad) = grad.as_deref_mut() {
            let g = sym_mul2(&w.q_a, a);
            let i0 = idx_input(n, tau);
            let i1 = idx_input(n, tau + 1);
            grad[i1] += g[0];
            grad[i1 + 1] += g[1];
            grad[i0] -= g[0];
            grad[i0 + 1] -= g[1];
            let ga = 2.0 * w.q_alpha * alpha;
            grad[i1 + 2] += ga;
            grad[i0 + 2] -= ga;
        }
    }

    // input magnitude
    for tau in 0..n {
        let u = z.input(tau);
        let v = [u.vx, u.vy, u.omega];
        j += quad3(&w.r, v);
        if let Some(grad) = grad.as_deref_mut() {
            let g = sym_mul3(&w.r, v);
            let i = idx_input(n, tau);
            grad[i] += g[0];
            grad[i + 1] += g[1];
            grad[i + 2] += g[2];
        }
    }

    // separator coefficient regularization (diagonal)
    for k in 0..z.num_polys() {
        let base = idx_coef(n, k);
        for i in 0..NUM_COEFFS {
            let c = z.as_slice()[base + i];
            j += w.q_p[i] * c * c;
            if let Some(grad) = grad.as_deref_mut() {
                grad[base + i] += 2.0 * w.q_p[i] * c;
            }
        }
    }

    j
}

/// Total cost `J = J_q + J_s + J_u + J_p` and its exact gradient.
///
/// - tracking/terminal: `Σ_{τ=0..N} e_τᵀ Q_eq e_τ + e_goalᵀ Q_fq e_goal`
///   with wrapped heading errors (τ=0 contributes a constant);
/// - smoothness: `Σ_{τ=0..N-2} a_τᵀ Q_a a_τ + Q_α α_τ²` over input
///   differences;
/// - input: `Σ_{τ=0..N-1} u_τᵀ R u_τ`;
/// - separator regularization: `Σ_k coef(p_k)ᵀ Q_p coef(p_k)`.
pub fn cost_eval(problem: &PlanProblem, z: &DecisionVector) -> (f64, Vec<f64>) {
    let mut grad = alloc::vec![0.0; z.len()];
    let j = cost_impl(problem, z, Some(&mut grad));
    (j, grad)
}

/// Cost without the gradient — the line-search path.
pub fn cost_value(problem: &PlanProblem, z: &DecisionVector) -> f64 {
    cost_impl(problem, z, None)
}

/// Cost with the gradient accumulated into an existing buffer (which must be
/// zeroed or otherwise pre-loaded by the caller).
pub fn cost_grad_into(problem: &PlanProblem, z: &DecisionVector, grad: &mut [f64]) -> f64 {
    cost_impl(problem, z, Some(grad))
}

/// Diagonal of the cost Hessian. Every cost term is quadratic in the
/// variables (the heading wrap has unit slope almost everywhere), so this is
/// independent of the iterate — solvers can compute it once and reuse it as
/// a preconditioner.
pub fn cost_hessian_diag(problem: &PlanProblem) -> Vec<f64> {
    let n = problem.n;
    let w = &problem.weights;
    let mut h = alloc::vec![0.0; problem.num_vars()];

    for tau in 1..=n {
        let i = idx_state(n, tau);
        h[i] += 2.0 * w.q_eq[0][0];
        h[i + 1] += 2.0 * w.q_eq[1][1];
        h[i + 2] += 2.0 * w.q_eq[2][2];
    }
    let i = idx_state(n, n);
    h[i] += 2.0 * w.q_fq[0][0];
    h[i + 1] += 2.0 * w.q_fq[1][1];
    h[i + 2] += 2.0 * w.q_fq[2][2];

    for tau in 0..n {
        let i = idx_input(n, tau);
        // an interior input appears in two consecutive difference terms
        let appearances = match (tau, n - 1 - tau) {
            (0, 0) => 0.0,
            (0, _) | (_, 0) => 1.0,
            _ => 2.0,
        };
        h[i] += 2.0 * w.r[0][0] + appearances * 2.0 * w.q_a[0][0];
        h[i + 1] += 2.0 * w.r[1][1] + appearances * 2.0 * w.q_a[1][1];
        h[i + 2] += 2.0 * w.r[2][2] + appearances * 2.0 * w.q_alpha;
    }

    for k in 0..problem.obstacles.len() {
        let base = idx_coef(n, k);
        for i in 0..NUM_COEFFS {
            h[base + i] += 2.0 * w.q_p[i];
        }
    }
    h
}

/// Row bookkeeping for the constraint vector: dynamics equalities first, then
/// robot-side separation rows (k-major, τ, then collision point), then
/// obstacle-side rows (k-major, feature order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintLayout {
    pub n: usize,
    pub n_b: usize,
    /// 3N dynamics defect equalities.
    pub dyn_rows: usize,
    /// K · N_B · (N+1) inequalities `p_k(x_i) − margin ≥ 0`.
    pub robot_rows: usize,
    /// Σ_k N_{O_k} inequalities `−p_k(s_j) − margin ≥ 0`.
    pub obstacle_rows: usize,
    /// Feature-point count per obstacle, fixing the obstacle-side row order.
    pub features_per_obstacle: Vec<usize>,
}

impl ConstraintLayout {
    pub fn of(problem: &PlanProblem) -> Self {
        let n = problem.n;
        let n_b = problem.footprint.collision_points.len();
        let k = problem.obstacles.len();
        let features_per_obstacle: Vec<usize> =
            problem.obstacles.iter().map(|o| o.feature_points.len()).collect();
        ConstraintLayout {
            n,
            n_b,
            dyn_rows: 3 * n,
            robot_rows: k * n_b * (n + 1),
            obstacle_rows: features_per_obstacle.iter().sum(),
            features_per_obstacle,
        }
    }

    pub fn total(&self) -> usize {
        self.dyn_rows + self.robot_rows + self.obstacle_rows
    }

    /// The leading `dyn_rows` rows are equalities; the rest are `≥ 0`.
    pub fn is_equality(&self, row: usize) -> bool {
        row < self.dyn_rows
    }

    /// Row of the robot-side inequality for obstacle `k`, timestep `tau`,
    /// collision point `b`.
    pub fn robot_row(&self, k: usize, tau: usize, b: usize) -> usize {
        self.dyn_rows + k * self.n_b * (self.n + 1) + tau * self.n_b + b
    }

    /// First obstacle-side row of obstacle `k`.
    pub fn obstacle_row_start(&self, k: usize) -> usize {
        self.dyn_rows
            + self.robot_rows
            + self.features_per_obstacle[..k].iter().sum::<usize>()
    }
}

/// Row-compressed sparse matrix, rows emitted in constraint order.
#[derive(Clone, Debug)]
pub struct SparseJacobian {
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl SparseJacobian {
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        self.col[lo..hi].iter().copied().zip(self.val[lo..hi].iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = alloc::vec![0.0; self.n_rows * self.n_cols];
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                d[r * self.n_cols + c] = v;
            }
        }
        d
    }
}

/// Shared row walker. Emits `(value, derivs)` per row in layout order;
/// `derivs` is empty when `with_derivs` is false, otherwise holds `(col,
/// ∂row/∂col)` pairs with structurally fixed sparsity (entries may be
/// numerically zero but columns never vary with z).
fn for_each_row<F>(problem: &PlanProblem, z: &DecisionVector, with_derivs: bool, mut f: F)
where
    F: FnMut(f64, &[(usize, f64)]),
{
    let n = problem.n;
    let dt = problem.dt;
    let poses = z.states_with(problem.start);
    let mut buf: Vec<(usize, f64)> = Vec::with_capacity(9);

    // (i) dynamics defects q_{τ+1} − f(q_τ, u_τ); heading defect unwrapped
    for tau in 0..n {
        let q = poses[tau];
        let u = z.input(tau);
        let qn = poses[tau + 1];
        let (s, c) = (math::sin(q.psi), math::cos(q.psi));
        let dx = qn.x - (q.x + dt * (u.vx * c - u.vy * s));
        let dy = qn.y - (q.y + dt * (u.vx * s + u.vy * c));
        let dpsi = qn.psi - (q.psi + dt * u.omega);
        if !with_derivs {
            f(dx, &[]);
            f(dy, &[]);
            f(dpsi, &[]);
            continue;
        }
        let iu = idx_input(n, tau);
        let inx = idx_state(n, tau + 1);

        buf.clear();
        if tau >= 1 {
            let iq = idx_state(n, tau);
            buf.push((iq, -1.0));
            buf.push((iq + 2, dt * (u.vx * s + u.vy * c)));
        }
        buf.push((inx, 1.0));
        buf.push((iu, -dt * c));
        buf.push((iu + 1, dt * s));
        f(dx, &buf);

        buf.clear();
        if tau >= 1 {
            let iq = idx_state(n, tau);
            buf.push((iq + 1, -1.0));
            buf.push((iq + 2, -dt * (u.vx * c - u.vy * s)));
        }
        buf.push((inx + 1, 1.0));
        buf.push((iu, -dt * s));
        buf.push((iu + 1, -dt * c));
        f(dy, &buf);

        buf.clear();
        if tau >= 1 {
            buf.push((idx_state(n, tau) + 2, -1.0));
        }
        buf.push((inx + 2, 1.0));
        buf.push((iu + 2, -dt));
        f(dpsi, &buf);
    }

    // world collision points, cached across obstacles
    let n_b = problem.footprint.collision_points.len();
    let mut world = Vec::with_capacity((n + 1) * n_b);
    let mut trig = Vec::with_capacity(n + 1);
    for pose in &poses {
        trig.push((math::sin(pose.psi), math::cos(pose.psi)));
        for &b in &problem.footprint.collision_points {
            world.push(pose.transform_point(b));
        }
    }

    // (ii) robot-side rows p_k(x_i) − margin ≥ 0
    for k in 0..problem.obstacles.len() {
        let poly = z.poly(k);
        let base = idx_coef(n, k);
        for tau in 0..=n {
            let (s, c) = trig[tau];
            for (b, &body) in problem.footprint.collision_points.iter().enumerate() {
                let w = world[tau * n_b + b];
                let value = poly.eval(w) - problem.sep_margin;
                if !with_derivs {
                    f(value, &[]);
                    continue;
                }
                buf.clear();
                if tau >= 1 {
                    let [px, py] = poly.grad(w);
                    // ∂w/∂ψ columns of the rigid-transform Jacobian
                    let j13 = -s * body[0] - c * body[1];
                    let j23 = c * body[0] - s * body[1];
                    let iq = idx_state(n, tau);
                    buf.push((iq, px));
                    buf.push((iq + 1, py));
                    buf.push((iq + 2, px * j13 + py * j23));
                }
                let m = monomials(w);
                for (i, &mi) in m.iter().enumerate() {
                    buf.push((base + i, mi));
                }
                f(value, &buf);
            }
        }
    }

    // (iii) obstacle-side rows −p_k(s_j) − margin ≥ 0
    for (k, obstacle) in problem.obstacles.iter().enumerate() {
        let poly = z.poly(k);
        let base = idx_coef(n, k);
        for &s_j in &obstacle.feature_points {
            let value = -poly.eval(s_j) - problem.sep_margin;
            if !with_derivs {
                f(value, &[]);
                continue;
            }
            buf.clear();
            let m = monomials(s_j);
            for (i, &mi) in m.iter().enumerate() {
                buf.push((base + i, -mi));
            }
            f(value, &buf);
        }
    }
}

/// Constraint values only (no Jacobian), appended into `out`.
pub fn constraint_values_into(problem: &PlanProblem, z: &DecisionVector, out: &mut Vec<f64>) {
    out.clear();
    for_each_row(problem, z, false, |v, _| out.push(v));
}

pub fn constraint_values(problem: &PlanProblem, z: &DecisionVector) -> Vec<f64> {
    let mut out = Vec::new();
    constraint_values_into(problem, z, &mut out);
    out
}

/// Values, sparse Jacobian, and the row layout, in one pass.
pub fn constraint_eval(
    problem: &PlanProblem,
    z: &DecisionVector,
) -> (Vec<f64>, SparseJacobian, ConstraintLayout) {
    let layout = ConstraintLayout::of(problem);
    let total = layout.total();
    let mut values = Vec::with_capacity(total);
    let mut jac = SparseJacobian {
        row_ptr: Vec::with_capacity(total + 1),
        col: Vec::new(),
        val: Vec::new(),
        n_rows: total,
        n_cols: z.len(),
    };
    jac.row_ptr.push(0);
    for_each_row(problem, z, true, |v, derivs| {
        values.push(v);
        for &(c, d) in derivs {
            jac.col.push(c);
            jac.val.push(d);
        }
        jac.row_ptr.push(jac.col.len());
    });
    (values, jac, layout)
}

/// Accumulates `grad += Jᵀ·w` without materializing the Jacobian — the
/// augmented-Lagrangian merit gradient path.
pub fn add_weighted_constraint_gradient(
    problem: &PlanProblem,
    z: &DecisionVector,
    row_weights: &[f64],
    grad: &mut [f64],
) {
    debug_assert_eq!(grad.len(), z.len());
    let mut row = 0;
    for_each_row(problem, z, true, |_, derivs| {
        let w = row_weights[row];
        if w != 0.0 {
            for &(c, d) in derivs {
                grad[c] += w * d;
            }
        }
        row += 1;
    });
    debug_assert_eq!(row, row_weights.len());
}

/// Accumulates `out += ∇²J · v`. The cost is quadratic in the variables (the
/// heading wrap has unit slope almost everywhere), so the product is exact
/// and independent of the iterate.
pub fn cost_hessian_mul(problem: &PlanProblem, v: &[f64], out: &mut [f64]) {
    let n = problem.n;
    let w = &problem.weights;
    debug_assert_eq!(v.len(), problem.num_vars());
    debug_assert_eq!(out.len(), problem.num_vars());

    for tau in 1..=n {
        let i = idx_state(n, tau);
        let g = sym_mul3(&w.q_eq, [v[i], v[i + 1], v[i + 2]]);
        out[i] += g[0];
        out[i + 1] += g[1];
        out[i + 2] += g[2];
    }
    {
        let i = idx_state(n, n);
        let g = sym_mul3(&w.q_fq, [v[i], v[i + 1], v[i + 2]]);
        out[i] += g[0];
        out[i + 1] += g[1];
        out[i + 2] += g[2];
    }
    for tau in 0..n.saturating_sub(1) {
        let i0 = idx_input(n, tau);
        let i1 = idx_input(n, tau + 1);
        let a = [v[i1] - v[i0], v[i1 + 1] - v[i0 + 1]];
        let g = sym_mul2(&w.q_a, a);
        out[i1] += g[0];
        out[i1 + 1] += g[1];
        out[i0] -= g[0];
        out[i0 + 1] -= g[1];
        let ga = 2.0 * w.q_alpha * (v[i1 + 2] - v[i0 + 2]);
        out[i1 + 2] += ga;
        out[i0 + 2] -= ga;
    }
    for tau in 0..n {
        let i = idx_input(n, tau);
        let g = sym_mul3(&w.r, [v[i], v[i + 1], v[i + 2]]);
        out[i] += g[0];
        out[i + 1] += g[1];
        out[i + 2] += g[2];
    }
    for k in 0..problem.obstacles.len() {
        let base = idx_coef(n, k);
        for i in 0..NUM_COEFFS {
            out[base + i] += 2.0 * w.q_p[i] * v[base + i];
        }
    }
}

/// Accumulates `out += Jᵀ·diag(w)·J · v` (the Gauss-Newton curvature of
/// `½ Σ_r w_r c_r²`) in a single row pass: per row, the directional value
/// `t = J_r·v`, then `out += w_r · t · J_r`.
pub fn add_weighted_gauss_newton_mul(
    problem: &PlanProblem,
    z: &DecisionVector,
    row_weights: &[f64],
    v: &[f64],
    out: &mut [f64],
) {
    debug_assert_eq!(v.len(), z.len());
    debug_assert_eq!(out.len(), z.len());
    let mut row = 0;
    for_each_row(problem, z, true, |_, derivs| {
        let w = row_weights[row];
        if w != 0.0 {
            let t: f64 = derivs.iter().map(|&(c, d)| d * v[c]).sum();
            if t != 0.0 {
                let wt = w * t;
                for &(c, d) in derivs {
                    out[c] += wt * d;
                }
            }
        }
        row += 1;
    });
    debug_assert_eq!(row, row_weights.len());
}

/// Accumulates `diag += Σ_r w_r · J_r ⊙ J_r` (the Gauss-Newton diagonal of
/// `½ Σ_r w_r c_r²`), again without materializing the Jacobian.
pub fn add_weighted_squared_jacobian_diag(
    problem: &PlanProblem,
    z: &DecisionVector,
    row_weights: &[f64],
    diag: &mut [f64],
) {
    debug_assert_eq!(diag.len(), z.len());
    let mut row = 0;
    for_each_row(problem, z, true, |_, derivs| {
        let w = row_weights[row];
        if w != 0.0 {
            for &(c, d) in derivs {
                diag[c] += w * d * d;
            }
        }
        row += 1;
    });
    debug_assert_eq!(row, row_weights.len());
}

/// Accumulates `out += Σ_r w_r · ∇²c_r · v` — the constraint-curvature part
/// of the Lagrangian Hessian that the Gauss-Newton product drops. Only the
/// genuinely curved rows contribute: dynamics defects through the rotated
/// body twist, robot-side rows through the rigid transform and the quadratic
/// polynomial. Obstacle-side rows are linear in the coefficients and skipped.
pub fn add_weighted_constraint_curvature_mul(
    problem: &PlanProblem,
    z: &DecisionVector,
    row_weights: &[f64],
    v: &[f64],
    out: &mut [f64],
) {
    let n = problem.n;
    let dt = problem.dt;
    debug_assert_eq!(v.len(), z.len());
    debug_assert_eq!(out.len(), z.len());
    let poses = z.states_with(problem.start);

    // Dynamics rows: second derivatives live in the (ψ_τ, v_x, v_y) block of
    // q_{τ+1} − f(q_τ, u_τ). τ = 0 has ψ pinned, leaving f linear in u.
    for tau in 1..n {
        let u = z.input(tau);
        let (s, c) = (math::sin(poses[tau].psi), math::cos(poses[tau].psi));
        let ipsi = idx_state(n, tau) + 2;
        let iu = idx_input(n, tau);
        let wx = row_weights[3 * tau];
        let wy = row_weights[3 * tau + 1];
        if wx == 0.0 && wy == 0.0 {
            continue;
        }
        // row −f_x: ψψ = dt(v_x c − v_y s), ψv_x = dt·s, ψv_y = dt·c
        // row −f_y: ψψ = dt(v_x s + v_y c), ψv_x = −dt·c, ψv_y = dt·s
        let (axx, bxx, cxx) = (dt * (u.vx * c - u.vy * s), dt * s, dt * c);
        let (ayy, byy, cyy) = (dt * (u.vx * s + u.vy * c), -dt * c, dt * s);
        out[ipsi] += wx * (axx * v[ipsi] + bxx * v[iu] + cxx * v[iu + 1])
            + wy * (ayy * v[ipsi] + byy * v[iu] + cyy * v[iu + 1]);
        out[iu] += (wx * bxx + wy * byy) * v[ipsi];
        out[iu + 1] += (wx * cxx + wy * cyy) * v[ipsi];
    }

    // Robot-side rows: c = p(R(ψ)b + t) − margin couples q_τ with itself
    // (polynomial curvature through the transform, plus R″ = −R) and with the
    // coefficients (∂²c/∂coef∂q = ∇m_j(w)ᵀ·∂w/∂q). τ = 0 rows are linear in
    // the coefficients at a fixed world point.
    let layout = ConstraintLayout::of(problem);
    debug_assert_eq!(row_weights.len(), layout.total());
    for k in 0..problem.obstacles.len() {
        let poly = z.poly(k);
        let base = idx_coef(n, k);
        for tau in 1..=n {
            let pose = poses[tau];
            let (s, c) = (math::sin(pose.psi), math::cos(pose.psi));
            let iq = idx_state(n, tau);
            let vq = [v[iq], v[iq + 1], v[iq + 2]];
            for (b, &body) in problem.footprint.collision_points.iter().enumerate() {
                let wr = row_weights[layout.robot_row(k, tau, b)];
                if wr == 0.0 {
                    continue;
                }
                let w = pose.transform_point(body);
                // ∂w/∂ψ and ∂²w/∂ψ² = −R(ψ)·b of the rigid transform
                let j13 = -s * body[0] - c * body[1];
                let j23 = c * body[0] - s * body[1];
                let r2x = -(c * body[0] - s * body[1]);
                let r2y = -(s * body[0] + c * body[1]);
                // u2 = (∂w/∂q)·v_q, the first-order motion of the world point
                let u2 = [vq[0] + j13 * vq[2], vq[1] + j23 * vq[2]];
                // ∇²p(w)·u2 plus the coefficient-direction gradient ∇p_v(w)
                let gq = [
                    2.0 * poly.coef[3] * u2[0]
                        + poly.coef[4] * u2[1]
                        + v[base + 1]
                        + 2.0 * v[base + 3] * w[0]
                        + v[base + 4] * w[1],
                    poly.coef[4] * u2[0]
                        + 2.0 * poly.coef[5] * u2[1]
                        + v[base + 2]
                        + v[base + 4] * w[0]
                        + 2.0 * v[base + 5] * w[1],
                ];
                let [px, py] = poly.grad(w);
                out[iq] += wr * gq[0];
                out[iq + 1] += wr * gq[1];
                out[iq + 2] +=
                    wr * (gq[0] * j13 + gq[1] * j23 + (px * r2x + py * r2y) * vq[2]);
                out[base + 1] += wr * u2[0];
                out[base + 2] += wr * u2[1];
                out[base + 3] += wr * 2.0 * w[0] * u2[0];
                out[base + 4] += wr * (w[1] * u2[0] + w[0] * u2[1]);
                out[base + 5] += wr * 2.0 * w[1] * u2[1];
            }
        }
    }
}

/// Assembles the dense symmetric matrix
/// `∇²J + Jᵀ·diag(gn_weights)·J + Σ_r curv_weights_r·∇²c_r`
/// — the direct-factorization counterpart of `cost_hessian_mul`,
/// `add_weighted_gauss_newton_mul`, and
/// `add_weighted_constraint_curvature_mul` combined. `h` is row-major
/// `len×len` and fully overwritten, both triangles. At this problem scale
/// (a few hundred variables) assembling and factoring densely is cheaper
/// than iterating with products.
pub fn assemble_weighted_hessian(
    problem: &PlanProblem,
    z: &DecisionVector,
    gn_weights: &[f64],
    curv_weights: &[f64],
    h: &mut [f64],
) {
    let n = problem.n;
    let dt = problem.dt;
    let nv = z.len();
    debug_assert_eq!(h.len(), nv * nv);
    h.fill(0.0);
    let w = &problem.weights;

    // cost blocks; each quadratic form vᵀMv contributes M + Mᵀ
    for tau in 1..=n {
        let i = idx_state(n, tau);
        for a in 0..3 {
            for b in 0..3 {
                h[(i + a) * nv + (i + b)] += w.q_eq[a][b] + w.q_eq[b][a];
            }
        }
    }
    {
        let i = idx_state(n, n);
        for a in 0..3 {
            for b in 0..3 {
                h[(i + a) * nv + (i + b)] += w.q_fq[a][b] + w.q_fq[b][a];
            }
        }
    }
    for tau in 0..n.saturating_sub(1) {
        let i0 = idx_input(n, tau);
        let i1 = idx_input(n, tau + 1);
        for a in 0..2 {
            for b in 0..2 {
                let q = w.q_a[a][b] + w.q_a[b][a];
                h[(i1 + a) * nv + (i1 + b)] += q;
                h[(i0 + a) * nv + (i0 + b)] += q;
                h[(i1 + a) * nv + (i0 + b)] -= q;
                h[(i0 + a) * nv + (i1 + b)] -= q;
            }
        }
        let qa = 2.0 * w.q_alpha;
        h[(i1 + 2) * nv + (i1 + 2)] += qa;
        h[(i0 + 2) * nv + (i0 + 2)] += qa;
        h[(i1 + 2) * nv + (i0 + 2)] -= qa;
        h[(i0 + 2) * nv + (i1 + 2)] -= qa;
    }
    for tau in 0..n {
        let i = idx_input(n, tau);
        for a in 0..3 {
            for b in 0..3 {
                h[(i + a) * nv + (i + b)] += w.r[a][b] + w.r[b][a];
            }
        }
    }
    for k in 0..problem.obstacles.len() {
        let base = idx_coef(n, k);
        for i in 0..NUM_COEFFS {
            h[(base + i) * nv + (base + i)] += 2.0 * w.q_p[i];
        }
    }

    // Gauss-Newton outer products of the constraint rows
    let mut row = 0;
    for_each_row(problem, z, true, |_, derivs| {
        let wr = gn_weights[row];
        if wr != 0.0 {
            for &(ci, di) in derivs {
                let wd = wr * di;
                for &(cj, dj) in derivs {
                    h[ci * nv + cj] += wd * dj;
                }
            }
        }
        row += 1;
    });

    // constraint-curvature blocks, mirroring
    // add_weighted_constraint_curvature_mul entry for entry
    let poses = z.states_with(problem.start);
    for tau in 1..n {
        let u = z.input(tau);
        let (s, c) = (math::sin(poses[tau].psi), math::cos(poses[tau].psi));
        let wx = curv_weights[3 * tau];
        let wy = curv_weights[3 * tau + 1];
        if wx == 0.0 && wy == 0.0 {
            continue;
        }
        let ipsi = idx_state(n, tau) + 2;
        let iu = idx_input(n, tau);
        h[ipsi * nv + ipsi] +=
            wx * dt * (u.vx * c - u.vy * s) + wy * dt * (u.vx * s + u.vy * c);
        let hpvx = wx * dt * s - wy * dt * c;
        let hpvy = wx * dt * c + wy * dt * s;
        h[ipsi * nv + iu] += hpvx;
        h[iu * nv + ipsi] += hpvx;
        h[ipsi * nv + (iu + 1)] += hpvy;
        h[(iu + 1) * nv + ipsi] += hpvy;
    }
    let layout = ConstraintLayout::of(problem);
    debug_assert_eq!(gn_weights.len(), layout.total());
    debug_assert_eq!(curv_weights.len(), layout.total());
    for k in 0..problem.obstacles.len() {
        let poly = z.poly(k);
        let base = idx_coef(n, k);
        let p00 = 2.0 * poly.coef[3];
        let p01 = poly.coef[4];
        let p11 = 2.0 * poly.coef[5];
        for tau in 1..=n {
            let pose = poses[tau];
            let (s, c) = (math::sin(pose.psi), math::cos(pose.psi));
            let iq = idx_state(n, tau);
            for (b, &body) in problem.footprint.collision_points.iter().enumerate() {
                let wr = curv_weights[layout.robot_row(k, tau, b)];
                if wr == 0.0 {
                    continue;
                }
                let wpt = pose.transform_point(body);
                let j13 = -s * body[0] - c * body[1];
                let j23 = c * body[0] - s * body[1];
                let r2x = -(c * body[0] - s * body[1]);
                let r2y = -(s * body[0] + c * body[1]);
                let [px, py] = poly.grad(wpt);
                // q–q block: (∂w/∂q)ᵀ·∇²p·(∂w/∂q) plus ∇p·∂²w/∂ψ² at (ψ,ψ)
                let bqq = [
                    [p00, p01, p00 * j13 + p01 * j23],
                    [p01, p11, p01 * j13 + p11 * j23],
                    [
                        p00 * j13 + p01 * j23,
                        p01 * j13 + p11 * j23,
                        p00 * j13 * j13
                            + 2.0 * p01 * j13 * j23
                            + p11 * j23 * j23
                            + px * r2x
                            + py * r2y,
                    ],
                ];
                for a in 0..3 {
                    for bb in 0..3 {
                        h[(iq + a) * nv + (iq + bb)] += wr * bqq[a][bb];
                    }
                }
                // q–coef cross: ∇m_j(w)ᵀ·(∂w/∂q) per coefficient j ≥ 1
                let gm = [
                    [1.0, 0.0],
                    [0.0, 1.0],
                    [2.0 * wpt[0], 0.0],
                    [wpt[1], wpt[0]],
                    [0.0, 2.0 * wpt[1]],
                ];
                for (j, g) in gm.iter().enumerate() {
                    let cross = [g[0], g[1], g[0] * j13 + g[1] * j23];
                    for a in 0..3 {
                        let e = wr * cross[a];
                        h[(iq + a) * nv + (base + 1 + j)] += e;
                        h[(base + 1 + j) * nv + (iq + a)] += e;
                    }
                }
            }
        }
    }
}

/// Diagonal of the same weighted constraint curvature, for preconditioning.
/// Entries can be negative; callers are expected to floor.
pub fn add_weighted_constraint_curvature_diag(
    problem: &PlanProblem,
    z: &DecisionVector,
    row_weights: &[f64],
    diag: &mut [f64],
) {
    let n = problem.n;
    let dt = problem.dt;
    debug_assert_eq!(diag.len(), z.len());
    let poses = z.states_with(problem.start);

    for tau in 1..n {
        let u = z.input(tau);
        let (s, c) = (math::sin(poses[tau].psi), math::cos(poses[tau].psi));
        let wx = row_weights[3 * tau];
        let wy = row_weights[3 * tau + 1];
        diag[idx_state(n, tau) + 2] +=
            wx * dt * (u.vx * c - u.vy * s) + wy * dt * (u.vx * s + u.vy * c);
    }

    let layout = ConstraintLayout::of(problem);
    debug_assert_eq!(row_weights.len(), layout.total());
    for k in 0..problem.obstacles.len() {
        let poly = z.poly(k);
        for tau in 1..=n {
            let pose = poses[tau];
            let (s, c) = (math::sin(pose.psi), math::cos(pose.psi));
            let iq = idx_state(n, tau);
            for (b, &body) in problem.footprint.collision_points.iter().enumerate() {
                let wr = row_weights[layout.robot_row(k, tau, b)];
                if wr == 0.0 {
                    continue;
                }
                let w = pose.transform_point(body);
                let j13 = -s * body[0] - c * body[1];
                let j23 = c * body[0] - s * body[1];
                let r2x = -(c * body[0] - s * body[1]);
                let r2y = -(s * body[0] + c * body[1]);
                let [px, py] = poly.grad(w);
                diag[iq] += wr * 2.0 * poly.coef[3];
                diag[iq + 1] += wr * 2.0 * poly.coef[5];
                diag[iq + 2] += wr
                    * (2.0 * poly.coef[3] * j13 * j13
                        + 2.0 * poly.coef[4] * j13 * j23
                        + 2.0 * poly.coef[5] * j23 * j23
                        + px * r2x
                        + py * r2y);
            }
        }
    }
}

/// Variable/row counts of the shared-polynomial formulation next to the
/// per-timestep counterfactual (one polynomial per obstacle per timestep).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariableCounts {
    /// 6N + 6K.
    pub vars: usize,
    /// Robot-side nonlinear rows: K · N_B · (N+1).
    pub nonlinear_rows: usize,
    /// Obstacle-side linear rows: Σ_k N_{O_k}.
    pub linear_rows: usize,
    /// Counterfactual 6N + 6K(N+1) — separate coefficients per timestep.
    pub per_step_vars: usize,
}

pub fn variable_counts(n: usize, k: usize, n_b: usize, n_o_total: usize) -> VariableCounts {
    VariableCounts {
        vars: 6 * n + NUM_COEFFS * k,
        nonlinear_rows: k * n_b * (n + 1),
        linear_rows: n_o_total,
        per_step_vars: 6 * n + NUM_COEFFS * k * (n + 1),
    }
}
