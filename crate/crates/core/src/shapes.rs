//! Rigid body and domain geometry given by signed-distance descriptors.
//!
//! Signed distances are negative inside and positive outside. Shapes are described in
//! a local frame and placed by a [`Pose`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rotation::{self, Mat3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("{0}")]
    Invalid(String),
}

/// Body or domain shape in its local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Disk in 2D, ball in 3D.
    Disk { radius: f64 },
    Ellipse { semi_axes: Vec<f64> },
    Box { half_extents: Vec<f64> },
    /// Counter-clockwise or clockwise simple polygon, 2D only.
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Shape {
    pub fn validate(&self, dim: usize) -> Result<(), ShapeError> {
        let positive = |name: &str, v: &[f64]| {
            if v.len() != dim {
                return Err(ShapeError::Invalid(format!("{name} must have {dim} entries, got {}", v.len())));
            }
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(ShapeError::Invalid(format!("{name} must be positive and finite")));
            }
            Ok(())
        };
        match self {
            Shape::Disk { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(ShapeError::Invalid(format!("disk radius must be positive, got {radius}")));
                }
            }
            Shape::Ellipse { semi_axes } => positive("ellipse semi_axes", semi_axes)?,
            Shape::Box { half_extents } => positive("box half_extents", half_extents)?,
            Shape::Polygon { vertices } => {
                if dim != 2 {
                    return Err(ShapeError::Invalid("polygons are only supported in 2D".into()));
                }
                if vertices.len() < 3 {
                    return Err(ShapeError::Invalid("polygon needs at least 3 vertices".into()));
                }
                if vertices.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(ShapeError::Invalid("polygon vertices must be finite".into()));
                }
                if polygon_area(vertices).abs() <= 0.0 {
                    return Err(ShapeError::Invalid("polygon has zero area".into()));
                }
            }
        }
        Ok(())
    }

    /// Signed distance of a point given in the local frame.
    pub fn signed_distance(&self, dim: usize, p: &[f64; 3]) -> f64 {
        match self {
            Shape::Disk { radius } => norm(&p[..dim]) - radius,
            Shape::Box { half_extents } => {
                let mut outside = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for a in 0..dim {
                    let q = p[a].abs() - half_extents[a];
                    outside += q.max(0.0).powi(2);
                    inside = inside.max(q);
                }
                outside.sqrt() + inside.min(0.0)
            }
            Shape::Ellipse { semi_axes } => ellipsoid_signed_distance(&semi_axes[..dim], &p[..dim]),
            Shape::Polygon { vertices } => polygon_signed_distance(vertices, p[0], p[1]),
        }
    }

    /// Area (2D) or volume (3D).
    pub fn volume(&self, dim: usize) -> f64 {
        use std::f64::consts::PI;
        match self {
            Shape::Disk { radius } => {
                if dim == 2 {
                    PI * radius * radius
                } else {
                    4.0 / 3.0 * PI * radius.powi(3)
                }
            }
            Shape::Ellipse { semi_axes } => {
                let prod: f64 = semi_axes[..dim].iter().product();
                if dim == 2 {
                    PI * prod
                } else {
                    4.0 / 3.0 * PI * prod
                }
            }
            Shape::Box { half_extents } => half_extents[..dim].iter().map(|e| 2.0 * e).product(),
            Shape::Polygon { vertices } => polygon_area(vertices).abs(),
        }
    }

    /// Radius of a ball about the local origin containing the shape.
    pub fn bounding_radius(&self, dim: usize) -> f64 {
        match self {
            Shape::Disk { radius } => *radius,
            Shape::Ellipse { semi_axes } => semi_axes[..dim].iter().copied().fold(0.0, f64::max),
            Shape::Box { half_extents } => norm(&half_extents[..dim]),
            Shape::Polygon { vertices } => {
                vertices.iter().map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt()).fold(0.0, f64::max)
            }
        }
    }
}

/// Placement of a local frame: `x = R p + center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub center: [f64; 3],
    pub rotation: Mat3,
}

impl Pose {
    pub fn new(dim: usize, center: &[f64], angle: f64, rotation_vector: Option<[f64; 3]>) -> Self {
        let mut c = [0.0; 3];
        c[..dim].copy_from_slice(&center[..dim]);
        let rotation = if dim == 2 {
            rotation::planar(angle)
        } else {
            rotation::rodrigues(&rotation_vector.unwrap_or([0.0; 3]))
        };
        Self { center: c, rotation }
    }

    /// Local coordinates of a world displacement from the center.
    pub fn to_local(&self, disp: &[f64; 3]) -> [f64; 3] {
        rotation::apply_transpose(&self.rotation, disp)
    }
}

/// A shape placed in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedShape {
    pub dim: usize,
    pub shape: Shape,
    pub pose: Pose,
}

impl PlacedShape {
    /// Signed distance given the displacement from the pose center.
    pub fn signed_distance_disp(&self, disp: &[f64; 3]) -> f64 {
        self.shape.signed_distance(self.dim, &self.pose.to_local(disp))
    }

    /// Signed distance at an absolute position, no periodic wrapping.
    pub fn signed_distance(&self, x: &[f64; 3]) -> f64 {
        let mut disp = [0.0; 3];
        for a in 0..self.dim {
            disp[a] = x[a] - self.pose.center[a];
        }
        self.signed_distance_disp(&disp)
    }

    /// Axis-aligned bounding box `(lo, hi)` of the placed shape.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let d = self.dim;
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let extent: Vec<f64> = match &self.shape {
            Shape::Disk { radius } => vec![*radius; d],
            Shape::Box { half_extents } => (0..d)
                .map(|a| (0..d).map(|j| (self.pose.rotation[a][j] * half_extents[j]).abs()).sum())
                .collect(),
            Shape::Ellipse { semi_axes } => (0..d)
                .map(|a| {
                    (0..d).map(|j| (self.pose.rotation[a][j] * semi_axes[j]).powi(2)).sum::<f64>().sqrt()
                })
                .collect(),
            Shape::Polygon { vertices } => {
                let mut e = vec![0.0f64; 2];
                for v in vertices {
                    let w = rotation::apply(&self.pose.rotation, &[v[0], v[1], 0.0]);
                    e[0] = e[0].max(w[0].abs());
                    e[1] = e[1].max(w[1].abs());
                }
                e
            }
        };
        for a in 0..d {
            lo[a] = self.pose.center[a] - extent[a];
            hi[a] = self.pose.center[a] + extent[a];
        }
        (lo, hi)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Shoelace area, positive for counter-clockwise vertex order.
pub fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = vertices[i];
        let q = vertices[(i + 1) % n];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

/// Edge-wise distance with a crossing-number sign.
fn polygon_signed_distance(v: &[[f64; 2]], x: f64, y: f64) -> f64 {
    let n = v.len();
    let mut d2 = f64::INFINITY;
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (ex, ey) = (v[j][0] - v[i][0], v[j][1] - v[i][1]);
        let (wx, wy) = (x - v[i][0], y - v[i][1]);
        let t = ((wx * ex + wy * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
        let (bx, by) = (wx - ex * t, wy - ey * t);
        d2 = d2.min(bx * bx + by * by);
        if (v[i][1] > y) != (v[j][1] > y) {
            let xc = v[i][0] + (y - v[i][1]) * (v[j][0] - v[i][0]) / (v[j][1] - v[i][1]);
            if x < xc {
                inside = !inside;
            }
        }
        j = i;
    }
    if inside {
        -d2.sqrt()
    } else {
        d2.sqrt()
    }
}

/// Signed distance to an axis-aligned ellipse/ellipsoid centered at the origin.
fn ellipsoid_signed_distance(e: &[f64], p: &[f64]) -> f64 {
    let n = e.len();
    // Sort axes descending, work in the positive orthant.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| e[b].partial_cmp(&e[a]).unwrap());
    let es: Vec<f64> = order.iter().map(|&i| e[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| p[i].abs()).collect();
    let x = closest_on_ellipsoid(&es, &ys);
    let dist = ys.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let level: f64 = ys.iter().zip(&es).map(|(y, a)| (y / a).powi(2)).sum();
    if level < 1.0 {
        -dist
    } else {
        dist
    }
}

/// Closest boundary point for `e` sorted descending and `y >= 0` componentwise.
fn closest_on_ellipsoid(e: &[f64], y: &[f64]) -> Vec<f64> {
    let n = e.len();
    if n == 1 {
        return vec![e[0]];
    }
    let last = n - 1;
    let emin = e[last];
    let reaches_min = (0..n).any(|i| e[i] == emin && y[i] > 0.0);
    if reaches_min {
        let t = ellipsoid_root(e, y);
        return (0..n).map(|i| e[i] * e[i] * y[i] / (t + e[i] * e[i])).collect();
    }
    // y vanishes on every minor axis: closest point is either off the minor-axis
    // hyperplane (when y is close to the center) or lies in it.
    let mut d = 0.0;
    let mut x = vec![0.0; n];
    for i in 0..n {
        if e[i] > emin {
            let denom = e[i] * e[i] - emin * emin;
            x[i] = e[i] * e[i] * y[i] / denom;
            d += (e[i] * y[i] / denom).powi(2);
        }
    }
    if d < 1.0 {
        x[last] = emin * (1.0 - d).sqrt();
        return x;
    }
    let mut sub = closest_on_ellipsoid(&e[..last], &y[..last]);
    sub.push(0.0);
    sub
}

/// Root `t > -e_min^2` of `Σ (e_i y_i / (t + e_i^2))^2 = 1` by bisection.
fn ellipsoid_root(e: &[f64], y: &[f64]) -> f64 {
    let f = |t: f64| -> f64 { e.iter().zip(y).map(|(a, b)| (a * b / (t + a * a)).powi(2)).sum::<f64>() - 1.0 };
    let emin2 = e[e.len() - 1].powi(2);
    let mut lo = -emin2;
    // f decreases from +inf at -emin^2; find an upper bracket
    let ynorm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut hi = e[0] * ynorm;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi == 0.0 {
            hi = 1.0;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn disk_and_box_distances() {
        let disk = Shape::Disk { radius: 0.5 };
        assert!((disk.signed_distance(2, &[0.3, 0.4, 0.0]) - 0.0).abs() < 1e-15);
        assert!((disk.signed_distance(2, &[0.0, 0.0, 0.0]) + 0.5).abs() < 1e-15);
        let b = Shape::Box { half_extents: vec![1.0, 0.5] };
        assert!((b.signed_distance(2, &[0.0, 0.0, 0.0]) + 0.5).abs() < 1e-15);
        assert!((b.signed_distance(2, &[2.0, 1.5, 0.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert!((b.signed_distance(2, &[1.5, 0.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ellipse_distance_matches_brute_force() {
        let (a, b) = (0.6, 0.25);
        let shape = Shape::Ellipse { semi_axes: vec![a, b] };
        let brute = |x: f64, y: f64| {
            (0..200_000)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / 200_000.0;
                    ((x - a * t.cos()).powi(2) + (y - b * t.sin()).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        };
        for &(x, y) in &[(0.9, 0.3), (0.1, 0.05), (0.0, 0.0), (0.5, 0.0), (-0.2, -0.7), (0.0, 0.1)] {
            let sd = shape.signed_distance(2, &[x, y, 0.0]);
            let inside = (x / a).powi(2) + (y / b).powi(2) < 1.0;
            let expect = if inside { -brute(x, y) } else { brute(x, y) };
            assert!((sd - expect).abs() < 1e-6, "({x},{y}): {sd} vs {expect}");
        }
    }

    #[test]
    fn ellipsoid_reduces_to_ball() {
        let shape = Shape::Ellipse { semi_axes: vec![0.4, 0.4, 0.4] };
        let sd = shape.signed_distance(3, &[0.1, 0.2, -0.1]);
        let expect = (0.01f64 + 0.04 + 0.01).sqrt() - 0.4;
        assert!((sd - expect).abs() < 1e-9);
    }

    #[test]
    fn polygon_square_matches_box() {
        let poly = Shape::Polygon { vertices: vec![[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]] };
        let b = Shape::Box { half_extents: vec![0.5, 0.5] };
        for &(x, y) in &[(0.1, 0.2), (0.7, 0.0), (0.8, 0.9), (-0.45, 0.3)] {
            let p = [x, y, 0.0];
            assert!((poly.signed_distance(2, &p) - b.signed_distance(2, &p)).abs() < 1e-14);
        }
        assert!((poly.volume(2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        assert!(Shape::Disk { radius: 0.0 }.validate(2).is_err());
        assert!(Shape::Box { half_extents: vec![1.0] }.validate(2).is_err());
        assert!(Shape::Polygon { vertices: vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]] }.validate(2).is_err());
        assert!(Shape::Polygon { vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] }.validate(3).is_err());
    }

    #[test]
    fn rotated_box_pose() {
        let placed = PlacedShape {
            dim: 2,
            shape: Shape::Box { half_extents: vec![0.5, 0.1] },
            pose: Pose::new(2, &[0.2, 0.0], PI / 2.0, None),
        };
        // rotated by 90 degrees: long axis along y
        assert!(placed.signed_distance(&[0.2, 0.45, 0.0]) < 0.0);
        assert!(placed.signed_distance(&[0.65, 0.0, 0.0]) > 0.0);
        let (lo, hi) = placed.bounding_box();
        assert!((hi[1] - 0.5).abs() < 1e-12 && (lo[0] - 0.1).abs() < 1e-12);
    }
}
