//! Incremental 2D linear programming over half-planes intersected with a
//! speed disc.
//!
//! Constraints are processed in input order. When the region is empty the
//! fallback program minimizes the largest constraint violation.

use super::OrcaHalfPlane;
use crate::vec2::Vec2;

/// Tolerance for treating two boundary lines as parallel.
const PARALLEL_EPS: f64 = 1e-12;
/// A constraint counts as violated only beyond this signed distance.
const VIOLATION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocitySolution {
    pub velocity: Vec2,
    /// Whether every constraint could be satisfied inside the speed disc.
    pub feasible: bool,
}

/// Signed distance by which `v` lies on the forbidden (right) side of the
/// plane; non-positive when the constraint holds.
#[inline]
pub fn violation(plane: &OrcaHalfPlane, v: Vec2) -> f64 {
    plane.direction.det(plane.point - v)
}

/// Velocity closest to `v_pref` inside every half-plane and the disc
/// `|v| <= max_speed`; on infeasibility, the velocity with the smallest
/// maximum violation.
pub fn solve_velocity(planes: &[OrcaHalfPlane], v_pref: Vec2, max_speed: f64) -> VelocitySolution {
    let (failed_at, mut result) = program2(planes, max_speed, v_pref, false);
    if failed_at < planes.len() {
        program3(planes, failed_at, max_speed, &mut result);
        VelocitySolution {
            velocity: result,
            feasible: false,
        }
    } else {
        VelocitySolution {
            velocity: result,
            feasible: true,
        }
    }
}

/// Optimizes along the boundary of `planes[line_no]`, subject to planes
/// `0..line_no` and the disc. Returns `None` when that 1D problem is empty.
fn program1(planes: &[OrcaHalfPlane], line_no: usize, radius: f64, opt: Vec2, direction_opt: bool) -> Option<Vec2> {
    let line = &planes[line_no];
    let dot = line.point.dot(line.direction);
    let discriminant = dot * dot + radius * radius - line.point.norm_sq();
    if discriminant < 0.0 {
        // The boundary misses the disc entirely.
        return None;
    }
    let sqrt_disc = discriminant.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for other in &planes[..line_no] {
        let denominator = line.direction.det(other.direction);
        let numerator = other.direction.det(line.point - other.point);
        if denominator.abs() <= PARALLEL_EPS {
            if numerator < 0.0 {
                return None;
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = if direction_opt {
        if opt.dot(line.direction) > 0.0 {
            t_right
        } else {
            t_left
        }
    } else {
        line.direction.dot(opt - line.point).clamp(t_left, t_right)
    };
    Some(line.point + line.direction * t)
}

/// Returns the index of the first plane that could not be satisfied (or
/// `planes.len()` on success) together with the current best velocity.
fn program2(planes: &[OrcaHalfPlane], radius: f64, opt: Vec2, direction_opt: bool) -> (usize, Vec2) {
    let mut result = if direction_opt {
        opt * radius
    } else if opt.norm_sq() > radius * radius {
        opt.normalized() * radius
    } else {
        opt
    };
    for i in 0..planes.len() {
        if violation(&planes[i], result) > VIOLATION_EPS {
            match program1(planes, i, radius, opt, direction_opt) {
                Some(v) => result = v,
                None => return (i, result),
            }
        }
    }
    (planes.len(), result)
}

/// Min-max-violation fallback: each plane at or after `begin` that is violated
/// by more than the current worst distance triggers a direction-optimizing
/// program over the bisector lines with earlier planes.
fn program3(planes: &[OrcaHalfPlane], begin: usize, radius: f64, result: &mut Vec2) {
    let mut distance = 0.0;
    for i in begin..planes.len() {
        if violation(&planes[i], *result) <= distance {
            continue;
        }
        let pi = &planes[i];
        let mut projected = Vec::with_capacity(i);
        for pj in &planes[..i] {
            let determinant = pi.direction.det(pj.direction);
            let point = if determinant.abs() <= PARALLEL_EPS {
                if pi.direction.dot(pj.direction) > 0.0 {
                    // Same orientation: no bisector.
                    continue;
                }
                (pi.point + pj.point) * 0.5
            } else {
                pi.point + pi.direction * (pj.direction.det(pi.point - pj.point) / determinant)
            };
            projected.push(OrcaHalfPlane {
                point,
                direction: (pj.direction - pi.direction).normalized(),
            });
        }
        let previous = *result;
        let (failed_at, candidate) = program2(&projected, radius, pi.direction.perp(), true);
        // Failure here can only come from rounding; keep the previous answer.
        *result = if failed_at < projected.len() { previous } else { candidate };
        distance = violation(pi, *result);
    }
}
