//! Augmented-Lagrangian solver over the NLP interfaces — the shipped
//! strategy (an interior-point method would satisfy the same contract).
//!
//! Outer loop: classic multiplier iteration with a LANCELOT-style schedule —
//! solve the box-constrained merit subproblem, then either update multipliers
//! (violation fell enough) or raise the penalty. Inner loop: limited-memory
//! BFGS with bound projection and an Armijo backtracking line search; merit
//! decrease is monotone within an outer iteration, and every multiplier or
//! penalty change is marked as an event in the iteration log.
//!
//! Everything is deterministic: no randomness, no time-dependent branches
//! except the wall-clock budget (inert without `std`).

use alloc::vec::Vec;

use crate::geom_poly::{Pose, QuadPoly, Twist};
use crate::nlp::{
    self, ConstraintLayout, DecisionVector, PlanProblem,
};
use crate::separation::seed_separator;

/// Solution strategy. Augmented Lagrangian is the only shipped backend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Strategy {
    #[default]
    AugmentedLagrangian,
}

#[derive(Clone, Copy, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverConfig {
    /// Total inner-iteration budget across all outer iterations.
    pub max_iterations: usize,
    /// Feasibility target: max constraint violation at convergence.
    pub constraint_tolerance: f64,
    /// Stationarity target: projected merit-gradient infinity norm.
    pub optimality_tolerance: f64,
    /// Wall-clock budget in seconds (infinite to disable). Checked only with
    /// the `std` feature; without it solves are bounded by iterations alone.
    pub max_wall_time: f64,
    pub strategy: Strategy,
    /// Record one `IterationRecord` per inner iteration.
    pub keep_log: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 400,
            constraint_tolerance: 1e-6,
            optimality_tolerance: 1e-4,
            // sized for ~10 Hz replanning; raise for cold starts
            max_wall_time: 0.08,
            strategy: Strategy::AugmentedLagrangian,
            keep_log: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SolveStatus {
    /// Violation ≤ constraint tolerance and projected gradient ≤ optimality
    /// tolerance.
    Converged,
    MaxIter,
    Timeout,
    /// Penalty saturated without reducing violation below tolerance.
    InfeasiblePoint,
    NumericFailure,
}

/// One line of the solver log (serialized as JSON lines by the std tooling).
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub merit: f64,
    pub max_violation: f64,
    pub step_norm: f64,
    /// Multiplier/penalty events breaking merit comparability:
    /// "multiplier_update" or "penalty_increase".
    pub event: Option<&'static str>,
}

#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SolveStats {
    pub status: SolveStatus,
    /// Inner iterations consumed.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub final_cost: f64,
    pub final_merit: f64,
    pub max_violation: f64,
    /// Seconds; 0.0 without `std`.
    pub wall_time: f64,
    pub log: Vec<IterationRecord>,
}

/// Multipliers and penalty of an augmented-Lagrangian solve, in constraint-row
/// order. Receding-horizon callers shift these alongside the primal warm
/// start ([`shift_duals`]); without them every tick re-learns the multipliers
/// from scratch and low-penalty subproblems destroy the primal warm start.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct DualState {
    /// Equality (dynamics-defect) multipliers.
    pub lambda: Vec<f64>,
    /// Inequality (separation-row) multipliers, nonnegative.
    pub nu: Vec<f64>,
    /// Penalty under which the multipliers were last estimated.
    pub mu: f64,
}

impl DualState {
    pub fn cold() -> Self {
        DualState { lambda: Vec::new(), nu: Vec::new(), mu: MU_INIT }
    }
}

/// Best iterate of a solve, unpacked.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PlanSolution {
    /// N+1 poses; `states[0]` is the pinned start.
    pub states: Vec<Pose>,
    pub inputs: Vec<Twist>,
    pub separators: Vec<QuadPoly>,
    pub stats: SolveStats,
    /// Final multipliers, for dual warm starts of the next solve.
    pub duals: DualState,
}

impl PlanSolution {
    pub fn from_vector(problem: &PlanProblem, z: &DecisionVector, stats: SolveStats) -> Self {
        PlanSolution {
            states: z.states_with(problem.start),
            inputs: z.inputs(),
            separators: z.polys(),
            stats,
            duals: DualState::cold(),
        }
    }

    /// Repacks into a decision vector (dropping the pinned start).
    pub fn to_vector(&self) -> DecisionVector {
        DecisionVector::from_parts(&self.states[1..], &self.inputs, &self.separators)
    }
}

// LANCELOT-style schedule constants
const MU_INIT: f64 = 10.0;
const MU_MULT: f64 = 10.0;
const MU_MAX: f64 = 1e9;
/// Warm-started solves never begin above this penalty: stiffer subproblems
/// cost more than they save.
const MU_WARM_CAP: f64 = 1e4;
const MULTIPLIER_CAP: f64 = 1e8;
/// Merit-stagnation window: a subproblem whose merit decrease over this many
/// accepted steps is at rounding level is treated as solved to numerical
/// precision (the outer loop then decides on the violation it reached).
const STALL_WINDOW: usize = 30;
const STALL_EPS: f64 = 1e-10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;

struct Clock {
    #[cfg(feature = "std")]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Clock {
            #[cfg(feature = "std")]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed(&self) -> f64 {
        #[cfg(feature = "std")]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(not(feature = "std"))]
        {
            0.0
        }
    }
}

/// Augmented-Lagrangian merit bookkeeping for fixed (λ, ν, μ).
struct Merit<'a> {
    problem: &'a PlanProblem,
    layout: &'a ConstraintLayout,
    lambda: &'a [f64],
    nu: &'a [f64],
    mu: f64,
}

impl Merit<'_> {
    /// Merit value; fills `vals` with raw constraint values and returns
    /// `(merit, cost, max_violation)`.
    fn value(&self, z: &DecisionVector, vals: &mut Vec<f64>) -> (f64, f64, f64) {
        let cost = nlp::cost_value(self.problem, z);
        nlp::constraint_values_into(self.problem, z, vals);
        let (penalty, vmax) = self.penalty_terms(vals);
        (cost + penalty, cost, vmax)
    }

    /// Merit value and gradient; `grad` is overwritten, `vals`/`weights` are
    /// scratch.
    fn value_grad(
        &self,
        z: &DecisionVector,
        vals: &mut Vec<f64>,
        weights: &mut Vec<f64>,
        grad: &mut [f64],
    ) -> (f64, f64, f64) {
        grad.fill(0.0);
        let cost = nlp::cost_grad_into(self.problem, z, grad);
        nlp::constraint_values_into(self.problem, z, vals);
        let (penalty, vmax) = self.penalty_terms(vals);

        weights.clear();
        let n_eq = self.layout.dyn_rows;
        for (i, &c) in vals[..n_eq].iter().enumerate() {
            weights.push(-self.lambda[i] + self.mu * c);
        }
        for (i, &g) in vals[n_eq..].iter().enumerate() {
            let w = self.nu[i] - self.mu * g;
            weights.push(if w > 0.0 { -w } else { 0.0 });
        }
        nlp::add_weighted_constraint_gradient(self.problem, z, weights, grad);
        (cost + penalty, cost, vmax)
    }

    /// Second-derivative weight ψ″(c_r) of each penalty row at the current
    /// constraint values: μ for equalities and active inequalities, zero past
    /// the kink where the Rockafellar term goes constant.
    fn curvature_weights(&self, vals: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let n_eq = self.layout.dyn_rows;
        for _ in 0..n_eq {
            out.push(self.mu);
        }
        for (i, &g) in vals[n_eq..].iter().enumerate() {
            out.push(if self.mu * g <= self.nu[i] { self.mu } else { 0.0 });
        }
    }

    /// Inverse diagonal of the merit Hessian, floored to stay invertible and
    /// positive — the metric for the fallback gradient step. The quadratic
    /// penalty makes the merit arbitrarily stiff as μ grows, which an
    /// unscaled gradient handles miserably; the constraint-curvature part
    /// can push entries negative, which the floor absorbs.
    fn inverse_hessian_diag(
        &self,
        z: &DecisionVector,
        cost_diag: &[f64],
        psi2: &[f64],
        psi1: &[f64],
        hinv: &mut [f64],
    ) {
        hinv.copy_from_slice(cost_diag);
        nlp::add_weighted_squared_jacobian_diag(self.problem, z, psi2, hinv);
        nlp::add_weighted_constraint_curvature_diag(self.problem, z, psi1, hinv);
        let h_max = hinv.iter().fold(0.0_f64, |m, &v| m.max(v));
        let floor = (1e-8 * h_max).max(1e-12);
        for h in hinv.iter_mut() {
            *h = 1.0 / h.max(floor);
        }
    }

    /// Rockafellar penalty: equalities `−λc + (μ/2)c²`, inequalities
    /// `−νg + (μ/2)g²` while `g ≤ ν/μ`, constant `−ν²/(2μ)` beyond.
    fn penalty_terms(&self, vals: &[f64]) -> (f64, f64) {
        let n_eq = self.layout.dyn_rows;
        let mut penalty = 0.0;
        let mut vmax: f64 = 0.0;
        for (i, &c) in vals[..n_eq].iter().enumerate() {
            penalty += -self.lambda[i] * c + 0.5 * self.mu * c * c;
            vmax = vmax.max(c.abs());
        }
        for (i, &g) in vals[n_eq..].iter().enumerate() {
            let nu = self.nu[i];
            if self.mu * g <= nu {
                penalty += -nu * g + 0.5 * self.mu * g * g;
            } else {
                penalty += -nu * nu / (2.0 * self.mu);
            }
            vmax = vmax.max(-g.min(0.0));
        }
        (penalty, vmax)
    }
}

fn clamp_into(z: &mut DecisionVector, lb: &[f64], ub: &[f64]) {
    for (v, (&l, &u)) in z.as_mut_slice().iter_mut().zip(lb.iter().zip(ub)) {
        *v = v.clamp(l, u);
    }
}

fn projected_gradient_norm(z: &[f64], grad: &[f64], lb: &[f64], ub: &[f64]) -> f64 {
    let mut norm: f64 = 0.0;
    for i in 0..z.len() {
        let step = (z[i] - grad[i]).clamp(lb[i], ub[i]) - z[i];
        norm = norm.max(step.abs());
    }
    norm
}

/// Scratch for the dense Newton solve, reused across iterations.
struct NewtonScratch {
    /// Full merit Hessian, row-major nv×nv.
    h: Vec<f64>,
    /// Free-subspace copy, packed nf×nf.
    hf: Vec<f64>,
    /// Right-hand side / solution vector on the free subspace.
    rhs: Vec<f64>,
    /// Free-variable indices.
    map: Vec<usize>,
}

impl NewtonScratch {
    fn new(nv: usize) -> Self {
        NewtonScratch {
            h: alloc::vec![0.0; nv * nv],
            hf: alloc::vec![0.0; nv * nv],
            rhs: alloc::vec![0.0; nv],
            map: Vec::with_capacity(nv),
        }
    }
}

/// In-place lower Cholesky of a packed row-major n×n matrix; fails (false)
/// when a pivot drops below `floor`.
fn cholesky_in_place(a: &mut [f64], n: usize, floor: f64) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > floor) {
            return false;
        }
        let dj = crate::math::sqrt(d);
        a[j * n + j] = dj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / dj;
        }
    }
    true
}

/// Exact Newton direction `H_ff·d_f = −g_f` on the free subspace by dense
/// Cholesky, escalating a diagonal shift until the factorization succeeds —
/// the constraint-curvature term can make H indefinite away from a
/// minimizer, and the shifted factor still yields a descent direction.
/// Expects the assembled Hessian in `scratch.h`; returns false when no
/// shift in the ladder factors (caller falls back to the scaled gradient).
fn newton_direction(
    scratch: &mut NewtonScratch,
    grad: &[f64],
    free: &[bool],
    dir: &mut Vec<f64>,
) -> bool {
    let nv = grad.len();
    dir.clear();
    dir.resize(nv, 0.0);
    scratch.map.clear();
    scratch.map.extend((0..nv).filter(|&i| free[i]));
    let nf = scratch.map.len();
    if nf == 0 {
        return false;
    }

    let mut dmax = 0.0_f64;
    for &i in &scratch.map {
        dmax = dmax.max(scratch.h[i * nv + i].abs());
    }
    let floor = (1e-12 * dmax).max(1e-300);
    let mut shift = 0.0;
    for _ in 0..8 {
        for (a, &i) in scratch.map.iter().enumerate() {
            for (b, &j) in scratch.map.iter().enumerate() {
                scratch.hf[a * nf + b] = scratch.h[i * nv + j];
            }
            scratch.hf[a * nf + a] += shift;
        }
        if cholesky_in_place(&mut scratch.hf[..nf * nf], nf, floor) {
            for (a, &i) in scratch.map.iter().enumerate() {
                scratch.rhs[a] = -grad[i];
            }
            // L·y = rhs, then Lᵀ·x = y, both in place
            for i in 0..nf {
                let mut s = scratch.rhs[i];
                for k in 0..i {
                    s -= scratch.hf[i * nf + k] * scratch.rhs[k];
                }
                scratch.rhs[i] = s / scratch.hf[i * nf + i];
            }
            for i in (0..nf).rev() {
                let mut s = scratch.rhs[i];
                for k in i + 1..nf {
                    s -= scratch.hf[k * nf + i] * scratch.rhs[k];
                }
                scratch.rhs[i] = s / scratch.hf[i * nf + i];
            }
            for (a, &i) in scratch.map.iter().enumerate() {
                dir[i] = scratch.rhs[a];
            }
            return true;
        }
        shift = if shift == 0.0 { (1e-8 * dmax).max(1e-12) } else { shift * 100.0 };
    }
    false
}

/// Armijo backtracking along the projected step path, starting at `alpha0`
/// and halving at most `tries` times. Returns the accepted point with its
/// step norm and scale; on rejection, `trial_vals` still holds the last
/// trial's constraint values.
#[allow(clippy::too_many_arguments)]
fn line_search(
    merit: &Merit<'_>,
    z: &DecisionVector,
    phi: f64,
    grad: &[f64],
    direction: &[f64],
    lb: &[f64],
    ub: &[f64],
    alpha0: f64,
    tries: usize,
    trial_vals: &mut Vec<f64>,
) -> Option<(DecisionVector, f64, f64)> {
    let mut alpha = alpha0;
    for _ in 0..tries {
        let mut trial = z.clone();
        {
            let t = trial.as_mut_slice();
            for i in 0..t.len() {
                t[i] = (t[i] + alpha * direction[i]).clamp(lb[i], ub[i]);
            }
        }
        // measure the decrease against the realized (projected) step
        let actual: f64 = trial
            .as_slice()
            .iter()
            .zip(z.as_slice())
            .zip(grad)
            .map(|((t, zi), g)| g * (t - zi))
            .sum();
        let (phi_t, _, _) = merit.value(&trial, trial_vals);
        if phi_t.is_finite() && phi_t <= phi + ARMIJO_C1 * actual && actual < 0.0 {
            let step_norm = crate::math::sqrt(
                trial
                    .as_slice()
                    .iter()
                    .zip(z.as_slice())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            );
            return Some((trial, step_norm, alpha));
        }
        alpha *= 0.5;
    }
    None
}

struct BestIterate {
    z: DecisionVector,
    violation: f64,
    cost: f64,
}

impl BestIterate {
    fn offer(&mut self, z: &DecisionVector, violation: f64, cost: f64, tol: f64) {
        // all feasible-enough iterates compare by cost; otherwise by violation
        let key = (violation.max(tol), cost);
        let best_key = (self.violation.max(tol), self.cost);
        if key < best_key {
            self.z = z.clone();
            self.violation = violation;
            self.cost = cost;
        }
    }
}

/// Solves the NLP from `init` (which need not be feasible) and returns the
/// best iterate found, with status and per-iteration log in the stats.
pub fn solve(problem: &PlanProblem, init: &DecisionVector, config: &SolverConfig) -> PlanSolution {
    solve_with_duals(problem, init, None, config)
}

/// [`solve`] with a dual warm start: multipliers and penalty from `warm`
/// (typically a shifted previous solve, see [`shift_duals`]) seed the
/// augmented Lagrangian instead of zeros. A `warm` whose vector lengths do
/// not match this problem's constraint layout is ignored.
pub fn solve_with_duals(
    problem: &PlanProblem,
    init: &DecisionVector,
    warm: Option<&DualState>,
    config: &SolverConfig,
) -> PlanSolution {
    let clock = Clock::start();
    let layout = ConstraintLayout::of(problem);
    let bad_config = !(config.constraint_tolerance > 0.0)
        || !(config.optimality_tolerance > 0.0)
        || init.len() != problem.num_vars();
    if problem.validate().is_err() || bad_config {
        let stats = SolveStats {
            status: SolveStatus::NumericFailure,
            iterations: 0,
            outer_iterations: 0,
            final_cost: f64::NAN,
            final_merit: f64::NAN,
            max_violation: f64::NAN,
            wall_time: clock.elapsed(),
            log: Vec::new(),
        };
        return PlanSolution::from_vector(problem, init, stats);
    }

    let (lb, ub) = problem.variable_bounds();
    let mut z = init.clone();
    clamp_into(&mut z, &lb, &ub);

    let n_eq = layout.dyn_rows;
    let n_ineq = layout.total() - n_eq;
    let mut lambda = alloc::vec![0.0; n_eq];
    let mut nu = alloc::vec![0.0; n_ineq];
    let mut mu = MU_INIT;
    if let Some(w) = warm {
        if w.lambda.len() == n_eq && w.nu.len() == n_ineq && w.mu.is_finite() {
            lambda.copy_from_slice(&w.lambda);
            for (v, &wv) in nu.iter_mut().zip(&w.nu) {
                *v = wv.max(0.0);
            }
            mu = w.mu.clamp(MU_INIT, MU_WARM_CAP);
        }
    }

    let c_tol = config.constraint_tolerance;
    let o_tol = config.optimality_tolerance;
    // inner stationarity target and violation target for a multiplier update
    let mut omega: f64 = (1.0 / mu).max(o_tol);
    let mut eta: f64 = (1.0 / crate::math::pow(mu, 0.1)).max(0.1 * c_tol);
    let mut mu_at_update = mu;

    let mut vals: Vec<f64> = Vec::with_capacity(layout.total());
    let mut weights: Vec<f64> = Vec::with_capacity(layout.total());
    let mut grad = alloc::vec![0.0; z.len()];
    let mut trial_vals: Vec<f64> = Vec::with_capacity(layout.total());
    let mut direction: Vec<f64> = Vec::with_capacity(z.len());
    #[cfg(feature = "std")]
    let mut prev_psi2: Vec<f64> = Vec::new();
    let cost_diag = nlp::cost_hessian_diag(problem);
    let mut hinv = alloc::vec![0.0; z.len()];
    let mut psi2: Vec<f64> = Vec::with_capacity(layout.total());
    let mut free = alloc::vec![true; z.len()];
    let mut ws = NewtonScratch::new(z.len());
    let mut log: Vec<IterationRecord> = Vec::new();

    let mut best = BestIterate { z: z.clone(), violation: f64::INFINITY, cost: f64::INFINITY };
    let mut inner_used = 0usize;
    let mut outer = 0usize;
    let mut status;
    let mut pending_event: Option<&'static str> = None;
    let mut last_outer_violation = f64::INFINITY;
    let mut stalled_outers = 0usize;

    'outer: loop {
        outer += 1;
        let merit = Merit { problem, layout: &layout, lambda: &lambda, nu: &nu, mu };
        let (mut phi, mut cost, mut vmax) =
            merit.value_grad(&z, &mut vals, &mut weights, &mut grad);
        if !phi.is_finite() {
            status = SolveStatus::NumericFailure;
            break 'outer;
        }
        merit.curvature_weights(&vals, &mut psi2);
        merit.inverse_hessian_diag(&z, &cost_diag, &psi2, &weights, &mut hinv);
        best.offer(&z, vmax, cost, c_tol);

        // solve the subproblem to its stationarity target ω: the multiplier
        // and penalty logic below is only sound on solved subproblems, where
        // "solved" includes merit stagnation at numerical precision
        let mut inner_this_outer = 0;
        let inner_tol = omega.max(o_tol);
        let mut pg = projected_gradient_norm(z.as_slice(), &grad, &lb, &ub);
        let mut window_phi = phi;
        let mut window_len = 0usize;
        let mut stagnated = false;

        while pg > inner_tol && inner_used < config.max_iterations && !stagnated {
            if clock.elapsed() > config.max_wall_time {
                status = SolveStatus::Timeout;
                break 'outer;
            }

            // free set: variables pinned at an active bound do not move
            let zs = z.as_slice();
            for i in 0..zs.len() {
                let at_lower = zs[i] <= lb[i] + 1e-12 && grad[i] > 0.0;
                let at_upper = zs[i] >= ub[i] - 1e-12 && grad[i] < 0.0;
                free[i] = !(at_lower || at_upper);
            }

            // candidate step, tried in order: full Newton on the current
            // branch model; a once-refined model when the unit step trips
            // activation kinks; backtracking on the original step; and a
            // scaled-gradient fallback
            let mut candidate: Option<(DecisionVector, f64, f64)> = None;
            let mut path = "newt";
            nlp::assemble_weighted_hessian(problem, &z, &psi2, &weights, &mut ws.h);
            if newton_direction(&mut ws, &grad, &free, &mut direction) {
                let descent: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
                if descent < 0.0 {
                    candidate = line_search(
                        &merit, &z, phi, &grad, &direction, &lb, &ub, 1.0, 1,
                        &mut trial_vals,
                    );
                    if candidate.is_none() {
                        // the unit step crossed activation kinks the model
                        // priced as flat (the failed trial's values are still
                        // in trial_vals); land just past the first kink so
                        // the row joins the branch model on the next pass
                        let mut a_kink = f64::INFINITY;
                        for i in 0..layout.total() - n_eq {
                            let theta = nu[i] / mu;
                            let g_z = vals[n_eq + i];
                            let g_t = trial_vals[n_eq + i];
                            if g_z > theta && g_t <= theta {
                                a_kink = a_kink.min((g_z - theta) / (g_z - g_t));
                            }
                        }
                        if a_kink < 1.0 {
                            let a0 = (a_kink * 1.05 + 1e-4).min(1.0);
                            candidate = line_search(
                                &merit, &z, phi, &grad, &direction, &lb, &ub, a0, 1,
                                &mut trial_vals,
                            );
                            if candidate.is_some() {
                                path = "kink";
                            }
                        }
                        if candidate.is_none() {
                            // no clean kink to step to; back off the step
                            candidate = line_search(
                                &merit, &z, phi, &grad, &direction, &lb, &ub, 0.5,
                                MAX_BACKTRACKS - 1, &mut trial_vals,
                            );
                            path = "back";
                        }
                    }
                }
            }
            if candidate.is_none() {
                // the scaled gradient is a guaranteed descent direction on
                // the free set
                direction.clear();
                direction.extend(
                    grad.iter()
                        .zip(&hinv)
                        .zip(&free)
                        .map(|((g, h), &f)| if f { -g * h } else { 0.0 }),
                );
                let descent: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
                if descent < 0.0 {
                    candidate = line_search(
                        &merit, &z, phi, &grad, &direction, &lb, &ub, 1.0, MAX_BACKTRACKS,
                        &mut trial_vals,
                    );
                    path = "grad";
                }
            }
            let _ = path;

            let accepted = candidate.is_some();
            if let Some((trial, step_norm, _alpha)) = candidate {
                z = trial;
                let out = merit.value_grad(&z, &mut vals, &mut weights, &mut grad);
                phi = out.0;
                cost = out.1;
                vmax = out.2;
                merit.curvature_weights(&vals, &mut psi2);
                merit.inverse_hessian_diag(&z, &cost_diag, &psi2, &weights, &mut hinv);
                best.offer(&z, vmax, cost, c_tol);
                inner_used += 1;
                inner_this_outer += 1;
                if config.keep_log {
                    log.push(IterationRecord {
                        iter: inner_used,
                        cost,
                        merit: phi,
                        max_violation: vmax,
                        step_norm,
                        event: pending_event.take(),
                    });
                }
                #[cfg(feature = "std")]
                if std::env::var_os("SOLVER_TRACE_INNER").is_some() {
                    let active = psi2.iter().filter(|&&w| w != 0.0).count();
                    std::eprintln!(
                        "  in {inner_this_outer}: {path} a={_alpha:.1e} |d|={step_norm:.2e} phi={phi:.9} vmax={vmax:.2e} act={active}"
                    );
                }
                #[cfg(feature = "std")]
                if std::env::var_os("SOLVER_TRACE_FLIPS").is_some() {
                    for i in 0..layout.total() - n_eq {
                        let was = prev_psi2.get(n_eq + i).copied().unwrap_or(0.0) != 0.0;
                        let now = psi2[n_eq + i] != 0.0;
                        if was != now {
                            let r = mu * vals[n_eq + i] - nu[i];
                            std::eprintln!(
                                "    flip {i}: {} r={r:.3e} nu={:.3e} mug={:.3e}",
                                if now { "on " } else { "off" },
                                nu[i],
                                mu * vals[n_eq + i],
                            );
                        }
                    }
                    prev_psi2.clear();
                    prev_psi2.extend_from_slice(&psi2);
                }
            }
            if !phi.is_finite() {
                status = SolveStatus::NumericFailure;
                break 'outer;
            }
            if !accepted {
                break; // genuine stall: hand control back to the outer loop
            }
            // accepted steps that no longer move the merit (active-set
            // zigzag at a curvature kink) count as numerically solved
            window_len += 1;
            if window_len >= STALL_WINDOW {
                stagnated = window_phi - phi <= STALL_EPS * (1.0 + phi.abs());
                window_phi = phi;
                window_len = 0;
            }
            pg = projected_gradient_norm(z.as_slice(), &grad, &lb, &ub);
        }

        #[cfg(feature = "std")]
        if std::env::var_os("SOLVER_TRACE").is_some() {
            std::eprintln!(
                "outer {outer}: mu={mu:.1e} omega={omega:.2e} eta={eta:.2e} vmax={vmax:.3e} pg={pg:.3e} cost={cost:.4} inner={inner_this_outer}"
            );
        }
        // outer-level decisions on the subproblem result
        if vmax <= c_tol && pg <= o_tol {
            status = SolveStatus::Converged;
            break;
        }
        if inner_used >= config.max_iterations {
            status = if mu >= MU_MAX && vmax > 10.0 * c_tol {
                SolveStatus::InfeasiblePoint
            } else {
                SolveStatus::MaxIter
            };
            break;
        }
        if clock.elapsed() > config.max_wall_time {
            status = SolveStatus::Timeout;
            break;
        }
        // repeated zero-progress subproblems: the line search cannot move and
        // multiplier updates alone are not going to change that
        if inner_this_outer == 0 {
            stalled_outers += 1;
            if stalled_outers >= 3 {
                status = if vmax > 10.0 * c_tol {
                    SolveStatus::InfeasiblePoint
                } else {
                    SolveStatus::MaxIter
                };
                break;
            }
        } else {
            stalled_outers = 0;
        }

        if vmax <= eta.max(c_tol) {
            // first-order multiplier update
            for (l, &c) in lambda.iter_mut().zip(&vals[..n_eq]) {
                *l = (*l - mu * c).clamp(-MULTIPLIER_CAP, MULTIPLIER_CAP);
            }
            for (v, &g) in nu.iter_mut().zip(&vals[n_eq..]) {
                *v = (*v - mu * g).max(0.0).min(MULTIPLIER_CAP);
            }
            mu_at_update = mu;
            eta = (eta / crate::math::pow(mu, 0.9)).max(0.1 * c_tol);
            omega = (omega / mu).max(o_tol);
            pending_event = Some("multiplier_update");
        } else {
            if mu >= MU_MAX {
                // penalty saturated; a stagnant violation means infeasible
                if vmax > 0.99 * last_outer_violation {
                    status =
                        if vmax > 10.0 * c_tol { SolveStatus::InfeasiblePoint } else { SolveStatus::MaxIter };
                    break;
                }
            } else {
                mu *= MU_MULT;
            }
            omega = (1.0 / mu).max(o_tol);
            eta = (1.0 / crate::math::pow(mu, 0.1)).max(0.1 * c_tol);
            pending_event = Some("penalty_increase");
        }
        last_outer_violation = vmax;
    }

    // report on the best iterate, re-evaluated in plain (unpenalized) terms
    let final_vals = nlp::constraint_values(problem, &best.z);
    let mut vmax: f64 = 0.0;
    for (i, &v) in final_vals.iter().enumerate() {
        vmax = vmax.max(if layout.is_equality(i) { v.abs() } else { -v.min(0.0) });
    }
    let final_cost = nlp::cost_value(problem, &best.z);
    if status == SolveStatus::Converged && vmax > c_tol {
        // best iterate must honor the converged contract
        status = SolveStatus::MaxIter;
    }
    let final_merit = log.last().map(|r| r.merit).unwrap_or(final_cost);
    let stats = SolveStats {
        status,
        iterations: inner_used,
        outer_iterations: outer,
        final_cost,
        final_merit,
        max_violation: vmax,
        wall_time: clock.elapsed(),
        log,
    };
    let mut solution = PlanSolution::from_vector(problem, &best.z, stats);
    solution.duals = DualState { lambda, nu, mu: mu_at_update };
    solution
}

/// Warm start for the next replanning cycle: shift states and inputs forward
/// by `steps`, pad the tail by holding the last input through the kinematics,
/// and populate separator coefficients — carried over for persisting
/// obstacles (`carried[k] = Some(..)`), freshly LP-seeded for new ones.
///
/// `problem` is the new cycle's problem (shifted start and reference, current
/// obstacle set); `carried` must have one entry per obstacle in it.
pub fn warm_start_shift(
    prev: &PlanSolution,
    problem: &PlanProblem,
    carried: &[Option<QuadPoly>],
    steps: usize,
) -> DecisionVector {
    assert_eq!(carried.len(), problem.obstacles.len());
    let n = problem.n;
    let prev_n = prev.inputs.len();

    let mut inputs = Vec::with_capacity(n);
    for tau in 0..n {
        let src = tau + steps;
        let held = *prev.inputs.last().expect("solutions hold at least one input");
        inputs.push(if src < prev_n { prev.inputs[src] } else { held });
    }

    let mut states = Vec::with_capacity(n);
    let mut q = problem.start;
    for tau in 0..n {
        let src = tau + steps;
        q = if src < prev_n {
            // reuse the previous iterate; defects stay whatever they were
            prev.states[src + 1]
        } else {
            nlp::kinematics_step(q, inputs[tau], problem.dt)
        };
        states.push(q);
    }

    let mut z = DecisionVector::from_parts(&states, &inputs, &alloc::vec![
        QuadPoly::zero();
        carried.len()
    ]);
    let mut swept: Option<Vec<crate::geom_poly::Point2>> = None;
    for (k, c) in carried.iter().enumerate() {
        let poly = match c {
            Some(p) => *p,
            None => {
                let swept = swept.get_or_insert_with(|| {
                    let mut traj = Vec::with_capacity(n + 1);
                    traj.push(problem.start);
                    traj.extend_from_slice(&states);
                    problem.footprint.swept_points(&traj).positions()
                });
                seed_separator(
                    swept,
                    &problem.obstacles[k].feature_points,
                    problem.degree,
                    problem.sep_margin,
                )
            }
        };
        z.set_poly(k, poly);
    }
    z
}

/// Dual companion of [`warm_start_shift`]: remaps the previous solve's
/// multipliers onto the new problem's constraint rows. Dynamics and
/// robot-side multipliers shift forward by `steps` (tail duplicated);
/// `matched[k]` names the previous obstacle the new obstacle `k` corresponds
/// to (unmatched obstacles start at zero, as do matched ones whose feature
/// count changed — the per-feature correspondence is gone). The penalty
/// carries over as-is.
pub fn shift_duals(
    prev: &DualState,
    prev_problem: &PlanProblem,
    problem: &PlanProblem,
    matched: &[Option<usize>],
    steps: usize,
) -> DualState {
    assert_eq!(matched.len(), problem.obstacles.len());
    let from = ConstraintLayout::of(prev_problem);
    let to = ConstraintLayout::of(problem);
    if prev.lambda.len() != from.dyn_rows || prev.nu.len() != from.total() - from.dyn_rows {
        return DualState::cold();
    }

    let mut lambda = alloc::vec![0.0; to.dyn_rows];
    for tau in 0..to.n {
        let src = (tau + steps).min(from.n - 1);
        for i in 0..3 {
            lambda[3 * tau + i] = prev.lambda[3 * src + i];
        }
    }

    let mut nu = alloc::vec![0.0; to.total() - to.dyn_rows];
    for (k, m) in matched.iter().enumerate() {
        let Some(j) = *m else { continue };
        if from.n_b == to.n_b {
            for tau in 0..=to.n {
                let src_tau = (tau + steps).min(from.n);
                for b in 0..to.n_b {
                    nu[to.robot_row(k, tau, b) - to.dyn_rows] =
                        prev.nu[from.robot_row(j, src_tau, b) - from.dyn_rows];
                }
            }
        }
        let count = to.features_per_obstacle[k];
        if from.features_per_obstacle[j] == count {
            let src = from.obstacle_row_start(j) - from.dyn_rows;
            let dst = to.obstacle_row_start(k) - to.dyn_rows;
            nu[dst..dst + count].copy_from_slice(&prev.nu[src..src + count]);
        }
    }

    DualState { lambda, nu, mu: prev.mu }
}
