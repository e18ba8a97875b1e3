//! Polynomial separator search and certification for fixed point sets.
//!
//! [`find_separator`] solves the max-margin linear feasibility problem in the
//! polynomial coefficients: `p ≤ −margin` on side A, `p ≥ +margin` on side B,
//! with every coefficient boxed to exclude the zero polynomial. It seeds the
//! NLP's separator variables and doubles as the empirical separability
//! oracle. Sign convention: A negative / B positive — the opposite of the
//! NLP's robot-positive rows, so callers map sides explicitly.

use alloc::vec::Vec;

use crate::geom_poly::{monomials, Point2, QuadPoly, SeparatorDegree, NUM_COEFFS};
use crate::lp::{self, LpError, LpOutcome};

/// Coefficient box `|coef_i| ≤ C_BOX` standing in for Theorem-style strict
/// inequalities: with a positive margin it excludes the zero polynomial while
/// keeping the search a pure LP.
pub const C_BOX: f64 = 1e3;

/// Default separation margin in workspace units: small against 0.1–1 m
/// obstacle features, large against the solver's 1e-6 constraint tolerance.
pub const DEFAULT_MARGIN: f64 = 0.01;

const T_CAP: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SeparationError {
    /// No separator of this degree exists at the requested margin inside the
    /// coefficient box — a meaningful outcome, not a solver failure. Carries
    /// the best margin attained.
    Infeasible { best_margin: f64 },
    EmptySide,
    NonFinitePoint,
    NonPositiveMargin,
    Lp(LpError),
}

impl core::fmt::Display for SeparationError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SeparationError::Infeasible { best_margin } => {
                write!(f, "no separator at this margin (best attainable {best_margin:.6})")
            }
            SeparationError::EmptySide => write!(f, "both point sets must be non-empty"),
            SeparationError::NonFinitePoint => write!(f, "point sets must be finite"),
            SeparationError::NonPositiveMargin => write!(f, "margin must be positive"),
            SeparationError::Lp(e) => write!(f, "separator LP failed: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SeparationError {}

impl From<LpError> for SeparationError {
    fn from(e: LpError) -> Self {
        SeparationError::Lp(e)
    }
}

/// A verified separator: `p ≤ −margin_a` on A and `p ≥ margin_b` on B.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeparationCertificate {
    pub poly: QuadPoly,
    /// `min over A of −p` — positive when valid.
    pub margin_a: f64,
    /// `min over B of +p` — positive when valid.
    pub margin_b: f64,
    pub degree: SeparatorDegree,
}

/// Worst violators and side margins for a candidate separator.
#[derive(Clone, Copy, Debug)]
pub struct SeparationReport {
    pub ok: bool,
    pub margin_a: f64,
    pub margin_b: f64,
    pub violations_a: usize,
    pub violations_b: usize,
    /// Worst point on side A (largest `p`), if A is non-empty.
    pub worst_a: Option<(Point2, f64)>,
    /// Worst point on side B (smallest `p`), if B is non-empty.
    pub worst_b: Option<(Point2, f64)>,
}

/// Checks `p ≤ −margin` on A and `p ≥ +margin` on B, reporting side margins
/// and the worst violator per side.
pub fn check_separation(
    poly: &QuadPoly,
    a: &[Point2],
    b: &[Point2],
    margin: f64,
) -> SeparationReport {
    let mut report = SeparationReport {
        ok: true,
        margin_a: f64::INFINITY,
        margin_b: f64::INFINITY,
        violations_a: 0,
        violations_b: 0,
        worst_a: None,
        worst_b: None,
    };
    for &p in a {
        let v = poly.eval(p);
        report.margin_a = report.margin_a.min(-v);
        if v > -margin {
            report.violations_a += 1;
        }
        if report.worst_a.is_none_or(|(_, w)| v > w) {
            report.worst_a = Some((p, v));
        }
    }
    for &p in b {
        let v = poly.eval(p);
        report.margin_b = report.margin_b.min(v);
        if v < margin {
            report.violations_b += 1;
        }
        if report.worst_b.is_none_or(|(_, w)| v < w) {
            report.worst_b = Some((p, v));
        }
    }
    report.ok = report.violations_a == 0 && report.violations_b == 0;
    report
}

/// Max-margin LP over an active row subset. Returns the solution in
/// `(coef[..n_active], t)` layout.
fn solve_active(
    a: &[Point2],
    b: &[Point2],
    active_a: &[usize],
    active_b: &[usize],
    n_active: usize,
) -> Result<(QuadPoly, f64), SeparationError> {
    let nv = n_active + 1; // coefficients plus the margin variable t
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(active_a.len() + active_b.len());
    for &i in active_a {
        // coef·m + t <= 0
        let m = monomials(a[i]);
        let mut row = Vec::with_capacity(nv);
        row.extend_from_slice(&m[..n_active]);
        row.push(1.0);
        rows.push((row, 0.0));
    }
    for &j in active_b {
        // -coef·m + t <= 0
        let m = monomials(b[j]);
        let mut row = Vec::with_capacity(nv);
        row.extend(m[..n_active].iter().map(|v| -v));
        row.push(1.0);
        rows.push((row, 0.0));
    }
    let mut c = alloc::vec![0.0; nv];
    c[n_active] = -1.0; // maximize t
    let mut lb = alloc::vec![-C_BOX; nv];
    let mut ub = alloc::vec![C_BOX; nv];
    lb[n_active] = 0.0;
    ub[n_active] = T_CAP;

    match lp::solve_min(&c, &rows, &lb, &ub)? {
        LpOutcome::Optimal(sol) => {
            let mut coef = [0.0; NUM_COEFFS];
            coef[..n_active].copy_from_slice(&sol.x[..n_active]);
            Ok((QuadPoly::new(coef), sol.x[n_active]))
        }
        // (coef = 0, t = 0) is always feasible
        LpOutcome::Infeasible => Err(SeparationError::Lp(LpError::BadProblem)),
    }
}

/// Indices of up to `k` points nearest to `target`.
fn nearest_indices(points: &[Point2], target: Point2, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| {
        crate::math::dist_sq(points[i], target)
            .partial_cmp(&crate::math::dist_sq(points[j], target))
            .unwrap()
    });
    idx.truncate(k);
    idx
}

fn centroid(points: &[Point2]) -> Point2 {
    let n = points.len() as f64;
    let mut c = [0.0, 0.0];
    for p in points {
        c[0] += p[0];
        c[1] += p[1];
    }
    [c[0] / n, c[1] / n]
}

/// Finds a degree-bounded polynomial separator with `p ≤ −margin` on `a` and
/// `p ≥ +margin` on `b`, via constraint generation: solve the max-margin LP
/// on the facing boundary points, then fold in the worst violators until the
/// certificate holds on every point.
///
/// Infeasibility of any active subset already proves infeasibility of the
/// full problem (dropping rows only enlarges the feasible set), so
/// `Infeasible` results are sound without ever building the full LP.
pub fn find_separator(
    a: &[Point2],
    b: &[Point2],
    degree: SeparatorDegree,
    margin: f64,
) -> Result<SeparationCertificate, SeparationError> {
    if a.is_empty() || b.is_empty() {
        return Err(SeparationError::EmptySide);
    }
    if !(margin > 0.0) {
        return Err(SeparationError::NonPositiveMargin);
    }
    let finite = |pts: &[Point2]| pts.iter().all(|p| p[0].is_finite() && p[1].is_finite());
    if !finite(a) || !finite(b) {
        return Err(SeparationError::NonFinitePoint);
    }

    let n_active = degree.active_coeffs();
    let mut active_a = nearest_indices(a, centroid(b), 16);
    let mut active_b = nearest_indices(b, centroid(a), 16);

    // every round adds at least one unseen row, so |a| + |b| rounds suffice
    for _ in 0..=(a.len() + b.len()) {
        let (poly, t) = solve_active(a, b, &active_a, &active_b, n_active)?;
        if t < margin {
            return Err(SeparationError::Infeasible { best_margin: t });
        }

        let mut worst: Vec<(f64, bool, usize)> = Vec::new();
        for (i, &p) in a.iter().enumerate() {
            let excess = poly.eval(p) + margin;
            if excess > 1e-9 && !active_a.contains(&i) {
                worst.push((excess, false, i));
            }
        }
        for (j, &p) in b.iter().enumerate() {
            let excess = margin - poly.eval(p);
            if excess > 1e-9 && !active_b.contains(&j) {
                worst.push((excess, true, j));
            }
        }
        if worst.is_empty() {
            let report = check_separation(&poly, a, b, margin);
            return Ok(SeparationCertificate {
                poly,
                margin_a: report.margin_a,
                margin_b: report.margin_b,
                degree,
            });
        }
        worst.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
        for &(_, is_b, idx) in worst.iter().take(16) {
            if is_b {
                active_b.push(idx);
            } else {
                active_a.push(idx);
            }
        }
    }
    Err(SeparationError::Lp(LpError::IterationLimit))
}

/// Seeds an NLP separator for one obstacle: `p ≥ +margin` on the robot's
/// swept points, `p ≤ −margin` on the obstacle features (the NLP's sign
/// convention, i.e. A = obstacle, B = robot in [`find_separator`] terms).
///
/// Tries a hyperplane LP first — quadratic terms should appear only when the
/// geometry demands them — then the full quadratic LP when allowed, then
/// falls back to the hyperplane through the midpoint of the two centroids
/// (which may be infeasible; the NLP accepts infeasible starts). Successful
/// LP seeds are rescaled so the smaller side margin is `3 × margin`, giving
/// the solver slack before the rows activate.
pub fn seed_separator(
    robot_points: &[Point2],
    obstacle_points: &[Point2],
    degree: SeparatorDegree,
    margin: f64,
) -> QuadPoly {
    let attempt = |d: SeparatorDegree| -> Option<QuadPoly> {
        match find_separator(obstacle_points, robot_points, d, margin) {
            Ok(cert) => {
                let worst = cert.margin_a.min(cert.margin_b);
                Some(cert.poly.scaled(3.0 * margin / worst))
            }
            Err(_) => None,
        }
    };
    if let Some(p) = attempt(SeparatorDegree::Hyperplane) {
        return p;
    }
    if degree == SeparatorDegree::Quadratic {
        if let Some(p) = attempt(SeparatorDegree::Quadratic) {
            return p;
        }
    }

    // overlap or LP breakdown: centroid hyperplane, robot side positive
    let (cr, co) = (centroid(robot_points), centroid(obstacle_points));
    let mut n = [cr[0] - co[0], cr[1] - co[1]];
    let len = crate::math::hypot(n[0], n[1]);
    if len < 1e-9 {
        n = [1.0, 0.0];
    } else {
        n = [n[0] / len, n[1] / len];
    }
    let mid = [(cr[0] + co[0]) / 2.0, (cr[1] + co[1]) / 2.0];
    QuadPoly::new([-(n[0] * mid[0] + n[1] * mid[1]), n[0], n[1], 0.0, 0.0, 0.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn circle(center: Point2, radius: f64, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|k| {
                let th = k as f64 * core::f64::consts::TAU / n as f64;
                [
                    center[0] + radius * crate::math::cos(th),
                    center[1] + radius * crate::math::sin(th),
                ]
            })
            .collect()
    }

    #[test]
    fn two_points_hyperplane() {
        let a = [[-1.0, 0.0]];
        let b = [[1.0, 0.0]];
        let cert = find_separator(&a, &b, SeparatorDegree::Hyperplane, 0.01).unwrap();
        assert!(cert.poly.eval(a[0]) <= -0.01);
        assert!(cert.poly.eval(b[0]) >= 0.01);
        assert!(cert.margin_a > 0.0 && cert.margin_b > 0.0);
        assert!(cert.poly.is_affine());
    }

    #[test]
    fn annulus_defeats_hyperplanes_but_not_quadratics() {
        let a = circle([0.0, 0.0], 1.0, 12);
        let b = circle([0.0, 0.0], 2.0, 12);
        let hyp = find_separator(&a, &b, SeparatorDegree::Hyperplane, 0.01);
        assert!(matches!(hyp, Err(SeparationError::Infeasible { .. })));

        let quad = find_separator(&a, &b, SeparatorDegree::Quadratic, 0.01).unwrap();
        let report = check_separation(&quad.poly, &a, &b, 0.01);
        assert!(report.ok);

        // the reference separator x1^2 + x2^2 - 2.25 certifies with margins
        // 1.25 / 1.75
        let reference = QuadPoly::new([-2.25, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let ref_report = check_separation(&reference, &a, &b, 0.01);
        assert!(ref_report.ok);
        assert!((ref_report.margin_a - 1.25).abs() < 1e-9);
        assert!((ref_report.margin_b - 1.75).abs() < 1e-9);
    }

    #[test]
    fn identical_sets_are_infeasible() {
        let p = [[0.0, 0.0]];
        for margin in [1e-6, 0.01, 1.0] {
            let out = find_separator(&p, &p, SeparatorDegree::Quadratic, margin);
            assert!(matches!(out, Err(SeparationError::Infeasible { .. })));
        }
    }

    #[test]
    fn input_validation() {
        let p = [[0.0, 0.0]];
        assert_eq!(
            find_separator(&[], &p, SeparatorDegree::Quadratic, 0.01),
            Err(SeparationError::EmptySide)
        );
        assert_eq!(
            find_separator(&p, &p, SeparatorDegree::Quadratic, 0.0),
            Err(SeparationError::NonPositiveMargin)
        );
        assert_eq!(
            find_separator(&[[f64::NAN, 0.0]], &p, SeparatorDegree::Quadratic, 0.01),
            Err(SeparationError::NonFinitePoint)
        );
    }

    #[test]
    fn zero_poly_fails_check_with_all_violators() {
        let a = circle([0.0, 0.0], 1.0, 5);
        let b = circle([3.0, 0.0], 1.0, 7);
        let report = check_separation(&QuadPoly::zero(), &a, &b, 0.01);
        assert!(!report.ok);
        assert_eq!(report.violations_a, 5);
        assert_eq!(report.violations_b, 7);
    }

    #[test]
    fn scaling_a_certificate_scales_its_margins() {
        let a = circle([-2.0, 0.5], 0.8, 10);
        let b = circle([2.0, -0.5], 0.8, 10);
        let cert = find_separator(&a, &b, SeparatorDegree::Quadratic, 0.01).unwrap();
        for t in [2.0, 0.5, 10.0] {
            let scaled = cert.poly.scaled(t);
            let report = check_separation(&scaled, &a, &b, 0.0);
            assert!((report.margin_a - t * cert.margin_a).abs() < 1e-9 * (1.0 + t));
            assert!((report.margin_b - t * cert.margin_b).abs() < 1e-9 * (1.0 + t));
            assert!(report.ok);
        }
    }

    #[test]
    fn certificates_survive_subsetting() {
        let a = circle([0.0, 0.0], 1.0, 12);
        let b = circle([0.0, 0.0], 2.0, 12);
        let cert = find_separator(&a, &b, SeparatorDegree::Quadratic, 0.01).unwrap();
        let report = check_separation(&cert.poly, &a[..4], &b[..7], 0.01);
        assert!(report.ok);
        assert!(report.margin_a >= cert.margin_a - 1e-12);
        assert!(report.margin_b >= cert.margin_b - 1e-12);
    }

    #[test]
    fn degree_nesting_on_random_pairs() {
        let mut rng = StdRng::seed_from_u64(4242);
        let mut hyperplane_successes = 0;
        for _ in 0..60 {
            let ca = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let cb = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let a = circle(ca, rng.random_range(0.2..0.8), 9);
            let b = circle(cb, rng.random_range(0.2..0.8), 9);
            if let Ok(cert) = find_separator(&a, &b, SeparatorDegree::Hyperplane, 0.01) {
                hyperplane_successes += 1;
                assert!(check_separation(&cert.poly, &a, &b, 0.01).ok);
                // whenever degree 1 succeeds, degree 2 must too: the LP's
                // feasible set only grows
                let quad = find_separator(&a, &b, SeparatorDegree::Quadratic, 0.01)
                    .expect("degree nesting violated");
                assert!(check_separation(&quad.poly, &a, &b, 0.01).ok);
            }
        }
        assert!(hyperplane_successes > 10, "rng produced too few separable pairs");
    }

    #[test]
    fn seeding_prefers_hyperplanes_and_sits_on_the_robot_side() {
        let robot = circle([2.0, 0.0], 0.5, 12);
        let obstacle = circle([-2.0, 0.0], 0.5, 8);
        let seed = seed_separator(&robot, &obstacle, SeparatorDegree::Quadratic, 0.01);
        // separable by a line: the quadratic coefficients stay zero
        assert!(seed.is_affine());
        let report = check_separation(&seed, &obstacle, &robot, 0.01);
        assert!(report.ok, "{report:?}");
        // rescaled so the tighter side sits at 3x the margin
        assert!((report.margin_a.min(report.margin_b) - 0.03).abs() < 1e-9);
    }

    #[test]
    fn seeding_falls_back_to_quadratics_then_centroid_heuristic() {
        // robot ring around the obstacle: no hyperplane works
        let obstacle = circle([0.0, 0.0], 0.5, 8);
        let robot = circle([0.0, 0.0], 2.0, 16);
        let seed = seed_separator(&robot, &obstacle, SeparatorDegree::Quadratic, 0.01);
        assert!(!seed.is_affine());
        assert!(check_separation(&seed, &obstacle, &robot, 0.01).ok);

        // overlapping sets: any finite affine answer is acceptable
        let seed = seed_separator(&robot, &robot, SeparatorDegree::Quadratic, 0.01);
        assert!(seed.is_affine());
        assert!(seed.coef.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn constraint_generation_matches_full_active_set() {
        // large sets force several generation rounds; the certificate must
        // still hold on every point
        let mut rng = StdRng::seed_from_u64(7);
        let a: Vec<Point2> = (0..300)
            .map(|_| [rng.random_range(-2.0..-0.2), rng.random_range(-2.0..2.0)])
            .collect();
        let b: Vec<Point2> = (0..300)
            .map(|_| [rng.random_range(0.2..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let cert = find_separator(&a, &b, SeparatorDegree::Quadratic, 0.01).unwrap();
        assert!(check_separation(&cert.poly, &a, &b, 0.01).ok);
        assert!(cert.margin_a >= 0.01 - 1e-9 && cert.margin_b >= 0.01 - 1e-9);
    }
}
