//! Body-frame robot shapes and their sampled collision points.
//!
//! The robot is a union of simple polygons. Collision points are boundary
//! samples at a configurable arc-length spacing; the separation constraints
//! are enforced at these points, and the swept point set materializes their
//! world-frame positions over a candidate trajectory.

use alloc::vec::Vec;

use crate::geom_poly::{Point2, Pose};
use crate::math;

/// Default boundary sample spacing in meters. Below half the narrowest gap
/// exercised by the scenario batteries (1.0 m), so obstacle corners cannot
/// thread between adjacent check points.
pub const DEFAULT_SAMPLE_SPACING: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FootprintError {
    NonPositiveSpacing,
    /// A polygon has fewer than 3 vertices.
    DegeneratePolygon,
    SelfIntersecting,
    /// Arm length must strictly exceed arm width, both positive.
    BadLShapeDimensions,
}

impl core::fmt::Display for FootprintError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FootprintError::NonPositiveSpacing => write!(f, "sample spacing must be positive"),
            FootprintError::DegeneratePolygon => {
                write!(f, "polygon needs at least 3 vertices")
            }
            FootprintError::SelfIntersecting => write!(f, "polygon is self-intersecting"),
            FootprintError::BadLShapeDimensions => {
                write!(f, "L-shape needs arm_length > arm_width > 0")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FootprintError {}

/// Non-convex body-frame shape with sampled boundary collision points.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Footprint {
    /// Simple body-frame polygons (meters, counter-clockwise) whose union is
    /// the robot shape.
    pub polygons: Vec<Vec<Point2>>,
    /// Boundary samples at which robot-side separation is enforced.
    pub collision_points: Vec<Point2>,
    pub sample_spacing: f64,
}

/// World-frame collision points of a trajectory, tagged by timestep.
#[derive(Clone, Debug)]
pub struct SweptPointSet {
    /// `(timestep index, world point)`, timestep-major, collision-point order
    /// within a timestep.
    pub points: Vec<(usize, Point2)>,
    /// The trajectory that generated the set.
    pub trajectory: Vec<Pose>,
    /// The footprint that generated the set.
    pub footprint: Footprint,
}

impl SweptPointSet {
    /// World points without their timestep tags.
    pub fn positions(&self) -> Vec<Point2> {
        self.points.iter().map(|&(_, p)| p).collect()
    }
}

fn segments_properly_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = math::cross2([b[0] - a[0], b[1] - a[1]], [c[0] - a[0], c[1] - a[1]]);
    let d2 = math::cross2([b[0] - a[0], b[1] - a[1]], [d[0] - a[0], d[1] - a[1]]);
    let d3 = math::cross2([d[0] - c[0], d[1] - c[1]], [a[0] - c[0], a[1] - c[1]]);
    let d4 = math::cross2([d[0] - c[0], d[1] - c[1]], [b[0] - c[0], b[1] - c[1]]);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

fn validate_polygon(poly: &[Point2]) -> Result<(), FootprintError> {
    if poly.len() < 3 {
        return Err(FootprintError::DegeneratePolygon);
    }
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if math::dist(a, b) == 0.0 {
            return Err(FootprintError::DegeneratePolygon);
        }
        for j in (i + 1)..n {
            // skip edges sharing a vertex
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_properly_intersect(a, b, c, d) {
                return Err(FootprintError::SelfIntersecting);
            }
        }
    }
    Ok(())
}

/// Distance from a point to the boundary of a polygon.
pub fn dist_to_polygon_boundary(pt: Point2, poly: &[Point2]) -> f64 {
    let n = poly.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let d = math::dist_point_segment(pt, poly[i], poly[(i + 1) % n]);
        if d < best {
            best = d;
        }
    }
    best
}

/// Samples polygon boundaries at arc-length intervals no larger than
/// `spacing`. Every polygon vertex is included; edge interiors are subdivided
/// evenly.
pub fn sample_collision_points(
    polygons: &[Vec<Point2>],
    spacing: f64,
) -> Result<Vec<Point2>, FootprintError> {
    if !(spacing > 0.0) {
        return Err(FootprintError::NonPositiveSpacing);
    }
    let mut points = Vec::new();
    for poly in polygons {
        validate_polygon(poly)?;
        let n = poly.len();
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            points.push(a);
            let len = math::dist(a, b);
            let segments = math::ceil(len / spacing) as usize;
            for s in 1..segments {
                let t = s as f64 / segments as f64;
                points.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
    }
    Ok(points)
}

impl Footprint {
    /// Builds a footprint from body-frame polygons, sampling collision points
    /// at `spacing`.
    pub fn new(polygons: Vec<Vec<Point2>>, spacing: f64) -> Result<Self, FootprintError> {
        let collision_points = sample_collision_points(&polygons, spacing)?;
        if collision_points.len() < 3 {
            return Err(FootprintError::DegeneratePolygon);
        }
        Ok(Footprint { polygons, collision_points, sample_spacing: spacing })
    }

    /// Radius of the smallest origin-centered disk containing all collision
    /// points.
    pub fn enclosing_radius(&self) -> f64 {
        let mut r: f64 = 0.0;
        for p in &self.collision_points {
            r = r.max(math::hypot(p[0], p[1]));
        }
        r
    }

    /// World-frame collision points for every pose of `trajectory`, tagged by
    /// timestep index. Cardinality is `N_B * trajectory.len()`.
    pub fn swept_points(&self, trajectory: &[Pose]) -> SweptPointSet {
        let mut points = Vec::with_capacity(self.collision_points.len() * trajectory.len());
        for (tau, pose) in trajectory.iter().enumerate() {
            for &b in &self.collision_points {
                points.push((tau, pose.transform_point(b)));
            }
        }
        SweptPointSet {
            points,
            trajectory: trajectory.to_vec(),
            footprint: self.clone(),
        }
    }
}

/// L-shaped footprint: two `arm_length x arm_width` rectangles sharing an
/// `arm_width`-square corner, outlined as a single hexagon. The body-frame
/// origin sits at the L's inner (reflex) corner, arms extending along the
/// body +x and +y axes.
pub fn l_shape_footprint(arm_length: f64, arm_width: f64) -> Result<Footprint, FootprintError> {
    l_shape_footprint_with_spacing(arm_length, arm_width, DEFAULT_SAMPLE_SPACING)
}

pub fn l_shape_footprint_with_spacing(
    arm_length: f64,
    arm_width: f64,
    spacing: f64,
) -> Result<Footprint, FootprintError> {
    if !(arm_width > 0.0) || !(arm_length > arm_width) {
        return Err(FootprintError::BadLShapeDimensions);
    }
    let (l, w) = (arm_length, arm_width);
    // counter-clockwise, inner corner at the origin
    let hexagon = alloc::vec![
        [-w, -w],
        [l - w, -w],
        [l - w, 0.0],
        [0.0, 0.0],
        [0.0, l - w],
        [-w, l - w],
    ];
    Footprint::new(alloc::vec![hexagon], spacing)
}
