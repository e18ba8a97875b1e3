//! Poses, rigid transforms, and quadratic polynomials over the plane.
//!
//! Everything downstream (separation constraints, NLP Jacobians, ground-truth
//! checks) is built out of the three primitives here: the degree-2 monomial
//! basis, polynomial evaluation/differentiation, and the SE(2) action on
//! body-frame points together with its derivative.

use crate::math;

/// 2D point or vector, `[x1, x2]` in meters.
pub type Point2 = [f64; 2];

/// Robot configuration: position in meters, heading in radians.
///
/// `psi` is stored unwrapped; wrapping is applied only inside error terms so
/// kinematic integration stays smooth for the solver.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

/// Velocity input in the robot body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Twist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite() && psi.is_finite());
        Pose { x, y, psi }
    }

    pub fn position(&self) -> Point2 {
        [self.x, self.y]
    }

    /// Maps a body-frame point into the world frame: `R(psi) * b + (x, y)`.
    pub fn transform_point(&self, body_pt: Point2) -> Point2 {
        let (s, c) = (math::sin(self.psi), math::cos(self.psi));
        [
            c * body_pt[0] - s * body_pt[1] + self.x,
            s * body_pt[0] + c * body_pt[1] + self.y,
        ]
    }

    /// Derivative of the world point w.r.t. `(x, y, psi)`, row-major 2x3.
    ///
    /// The position columns are the identity; the `psi` column is
    /// `dR/dpsi * body_pt`.
    pub fn transform_jacobian(&self, body_pt: Point2) -> [[f64; 3]; 2] {
        let (s, c) = (math::sin(self.psi), math::cos(self.psi));
        [
            [1.0, 0.0, -s * body_pt[0] - c * body_pt[1]],
            [0.0, 1.0, c * body_pt[0] - s * body_pt[1]],
        ]
    }
}

impl Twist {
    pub fn new(vx: f64, vy: f64, omega: f64) -> Self {
        debug_assert!(vx.is_finite() && vy.is_finite() && omega.is_finite());
        Twist { vx, vy, omega }
    }

    pub fn zero() -> Self {
        Twist { vx: 0.0, vy: 0.0, omega: 0.0 }
    }
}

/// Number of monomials of total degree <= 2 in two variables.
pub const NUM_COEFFS: usize = 6;

/// Separator degree: full quadratics, or hyperplanes (degree 1) as the
/// comparison baseline realized by pinning the three quadratic coefficients
/// to zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SeparatorDegree {
    Hyperplane,
    Quadratic,
}

impl SeparatorDegree {
    /// Coefficients that may be nonzero: the leading slice of [`monomials`].
    pub fn active_coeffs(self) -> usize {
        match self {
            SeparatorDegree::Hyperplane => 3,
            SeparatorDegree::Quadratic => NUM_COEFFS,
        }
    }
}

/// Monomial basis of total degree <= 2, in the fixed order
/// `(1, x1, x2, x1^2, x1*x2, x2^2)`.
///
/// Every coefficient vector in the crate (including serialized ones) follows
/// this order; permuting it breaks cross-module contracts.
#[inline]
pub fn monomials(pt: Point2) -> [f64; NUM_COEFFS] {
    let [x1, x2] = pt;
    [1.0, x1, x2, x1 * x1, x1 * x2, x2 * x2]
}

/// Quadratic polynomial over the plane, the separating-hypersurface candidate.
///
/// `coef` is ordered to match [`monomials`].
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuadPoly {
    pub coef: [f64; NUM_COEFFS],
}

impl QuadPoly {
    pub fn new(coef: [f64; NUM_COEFFS]) -> Self {
        debug_assert!(coef.iter().all(|c| c.is_finite()));
        QuadPoly { coef }
    }

    pub fn zero() -> Self {
        QuadPoly { coef: [0.0; NUM_COEFFS] }
    }

    /// `coef^T [x]_2`.
    #[inline]
    pub fn eval(&self, pt: Point2) -> f64 {
        let m = monomials(pt);
        let c = &self.coef;
        c[0] * m[0] + c[1] * m[1] + c[2] * m[2] + c[3] * m[3] + c[4] * m[4] + c[5] * m[5]
    }

    /// Spatial gradient `(dp/dx1, dp/dx2)` at `pt`.
    #[inline]
    pub fn grad(&self, pt: Point2) -> Point2 {
        let [x1, x2] = pt;
        let c = &self.coef;
        [
            c[1] + 2.0 * c[3] * x1 + c[4] * x2,
            c[2] + c[4] * x1 + 2.0 * c[5] * x2,
        ]
    }

    /// True if the three degree-2 coefficients are all zero.
    pub fn is_affine(&self) -> bool {
        self.coef[3] == 0.0 && self.coef[4] == 0.0 && self.coef[5] == 0.0
    }

    pub fn scaled(&self, t: f64) -> Self {
        let mut coef = self.coef;
        for c in &mut coef {
            *c *= t;
        }
        QuadPoly { coef }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const FD_STEP: f64 = 1e-6;

    fn rel_err(got: f64, want: f64) -> f64 {
        (got - want).abs() / want.abs().max(1.0)
    }

    #[test]
    fn monomials_fixed_points() {
        assert_eq!(monomials([0.0, 0.0]), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(monomials([1.0, 1.0]), [1.0; 6]);
        assert_eq!(monomials([2.0, 3.0]), [1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn eval_constant_and_projection() {
        let constant = QuadPoly::new([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(constant.eval([17.0, -4.0]), 1.0);
        let proj = QuadPoly::new([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(proj.eval([-3.0, 7.0]), -3.0);
    }

    #[test]
    fn eval_circle_polynomial() {
        // x1^2 + x2^2 - 2.25 at (1,1)
        let circle = QuadPoly::new([-2.25, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((circle.eval([1.0, 1.0]) - (-0.25)).abs() < 1e-15);
        assert_eq!(circle.grad([1.0, 1.0]), [2.0, 2.0]);
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let constant = QuadPoly::new([5.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(constant.grad([3.0, -9.0]), [0.0, 0.0]);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let coef: [f64; 6] = core::array::from_fn(|_| rng.random_range(-10.0..10.0));
            let p = QuadPoly::new(coef);
            let pt = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            let g = p.grad(pt);
            for axis in 0..2 {
                let mut hi = pt;
                let mut lo = pt;
                hi[axis] += FD_STEP;
                lo[axis] -= FD_STEP;
                let fd = (p.eval(hi) - p.eval(lo)) / (2.0 * FD_STEP);
                assert!(rel_err(g[axis], fd) <= 1e-5, "axis {axis}: {} vs {}", g[axis], fd);
            }
        }
    }

    #[test]
    fn transform_fixed_cases() {
        let id = Pose::new(0.0, 0.0, 0.0);
        assert_eq!(id.transform_point([1.0, 2.0]), [1.0, 2.0]);

        let quarter = Pose::new(0.0, 0.0, core::f64::consts::FRAC_PI_2);
        let p = quarter.transform_point([1.0, 0.0]);
        assert!((p[0]).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);

        let half = Pose::new(1.0, 1.0, core::f64::consts::PI);
        let q = half.transform_point([1.0, 0.0]);
        assert!((q[0]).abs() < 1e-12 && (q[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_jacobian_fixed_cases() {
        let pose = Pose::new(3.0, -1.0, 0.7);
        let jac = pose.transform_jacobian([0.0, 0.0]);
        assert_eq!(jac, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

        let origin = Pose::new(0.0, 0.0, 0.0);
        let jac = origin.transform_jacobian([1.0, 0.0]);
        assert_eq!([jac[0][2], jac[1][2]], [0.0, 1.0]);
    }

    #[test]
    fn transform_jacobian_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let pose = Pose::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            let body = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            let jac = pose.transform_jacobian(body);
            for var in 0..3 {
                let perturb = |delta: f64| {
                    let mut p = pose;
                    match var {
                        0 => p.x += delta,
                        1 => p.y += delta,
                        _ => p.psi += delta,
                    }
                    p.transform_point(body)
                };
                let hi = perturb(FD_STEP);
                let lo = perturb(-FD_STEP);
                for row in 0..2 {
                    let fd = (hi[row] - lo[row]) / (2.0 * FD_STEP);
                    assert!(
                        rel_err(jac[row][var], fd) <= 1e-5,
                        "row {row} var {var}: {} vs {}",
                        jac[row][var],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn transform_preserves_distances() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let pose = Pose::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-7.0..7.0),
            );
            let a = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let b = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let d_body = crate::math::dist(a, b);
            let d_world = crate::math::dist(pose.transform_point(a), pose.transform_point(b));
            assert!((d_body - d_world).abs() <= 1e-12 * d_body.max(1.0));
        }
    }

    #[test]
    fn eval_is_linear_in_coefficients() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..200 {
            let p = QuadPoly::new(core::array::from_fn(|_| rng.random_range(-3.0..3.0)));
            let q = QuadPoly::new(core::array::from_fn(|_| rng.random_range(-3.0..3.0)));
            let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let pt = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let mixed = QuadPoly::new(core::array::from_fn(|i| a * p.coef[i] + b * q.coef[i]));
            let lhs = mixed.eval(pt);
            let rhs = a * p.eval(pt) + b * q.eval(pt);
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn pulled_back_polynomial_pose_gradient_matches_fd() {
        // chain rule through transform_jacobian: d/dpose p(T(pose, b))
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..300 {
            let p = QuadPoly::new(core::array::from_fn(|_| rng.random_range(-2.0..2.0)));
            let pose = Pose::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let body = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let world = pose.transform_point(body);
            let gp = p.grad(world);
            let jt = pose.transform_jacobian(body);
            let chain: [f64; 3] =
                core::array::from_fn(|v| gp[0] * jt[0][v] + gp[1] * jt[1][v]);
            for var in 0..3 {
                let perturb = |delta: f64| {
                    let mut q = pose;
                    match var {
                        0 => q.x += delta,
                        1 => q.y += delta,
                        _ => q.psi += delta,
                    }
                    p.eval(q.transform_point(body))
                };
                let fd = (perturb(FD_STEP) - perturb(-FD_STEP)) / (2.0 * FD_STEP);
                assert!(rel_err(chain[var], fd) <= 1e-5);
            }
        }
    }
}
