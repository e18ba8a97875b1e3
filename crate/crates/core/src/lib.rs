//! Whole-body trajectory optimization for non-convex 2D mobile robots.
//!
//! Collision avoidance is enforced by jointly optimizing the robot trajectory
//! and, per obstacle, the coefficients of a quadratic polynomial whose zero
//! level set separates the robot's swept collision points from the obstacle's
//! feature points. The crate contains the full pipeline up to (but excluding)
//! scenario simulation and file IO:
//!
//! - [`geom_poly`]: poses, rigid transforms, the degree-2 monomial basis;
//! - [`footprint`]: body-frame shapes and their sampled collision points;
//! - [`obstacle`]: point-cloud downsampling, clustering, feature selection;
//! - [`lp`]: a small dense bounded-variable simplex used for separator seeding;
//! - [`separation`]: polynomial separator search and certification;
//! - [`nlp`]: the joint NLP (costs, constraints, analytic first derivatives);
//! - [`solver`]: an augmented-Lagrangian solver over the NLP interfaces;
//! - [`planner`]: the receding-horizon loop emitting one input per tick.
//!
//! The crate is `no_std`-compatible (`--no-default-features --features libm`);
//! `alloc` is required throughout. Without `std` the solver's wall-clock
//! budget is inert and solves are bounded by iteration counts only.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod footprint;
pub mod geom_poly;
pub mod lp;
mod math;
pub mod nlp;
pub mod obstacle;
pub mod planner;
pub mod separation;
pub mod solver;

pub use footprint::{Footprint, SweptPointSet};
pub use geom_poly::{monomials, Point2, Pose, QuadPoly, SeparatorDegree, Twist};
pub use nlp::{DecisionVector, PlanProblem, Weights};
pub use obstacle::{ObstacleCluster, RawCloud};
pub use planner::{PlanStatus, Planner, PlannerConfig};
pub use separation::SeparationCertificate;
pub use solver::{DualState, PlanSolution, SolveStatus, SolverConfig};
