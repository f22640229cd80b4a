//! Second-order jets: a value together with its gradient and Hessian at a point.
//!
//! Used to evaluate stream functions and vector potentials analytically, so that the
//! velocity fields derived from them are divergence-free (and rigid where the
//! potential is rigid) exactly, not just up to spectral truncation.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; 3],
    pub h: [[f64; 3]; 3],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Self { v, ..Default::default() }
    }

    /// The coordinate function `x_axis - origin`.
    pub fn coordinate(x: &[f64; 3], axis: usize, origin: f64) -> Self {
        let mut j = Self::constant(x[axis] - origin);
        j.g[axis] = 1.0;
        j
    }

    /// Coordinate with an explicit value, for minimal-image displacements.
    pub fn displacement(value: f64, axis: usize) -> Self {
        let mut j = Self::constant(value);
        j.g[axis] = 1.0;
        j
    }

    /// `f(self)` given `f`, `f'`, `f''` at `self.v`.
    pub fn compose(self, f: f64, df: f64, ddf: f64) -> Self {
        let mut out = Self::constant(f);
        for a in 0..3 {
            out.g[a] = df * self.g[a];
            for b in 0..3 {
                out.h[a][b] = ddf * self.g[a] * self.g[b] + df * self.h[a][b];
            }
        }
        out
    }

    pub fn scale(self, s: f64) -> Self {
        let mut out = self;
        out.v *= s;
        for a in 0..3 {
            out.g[a] *= s;
            for b in 0..3 {
                out.h[a][b] *= s;
            }
        }
        out
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.compose(e, e, e)
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(c, -s, -c)
    }

    pub fn square(self) -> Self {
        self * self
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let mut out = self;
        out.v += o.v;
        for a in 0..3 {
            out.g[a] += o.g[a];
            for b in 0..3 {
                out.h[a][b] += o.h[a][b];
            }
        }
        out
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + o.scale(-1.0)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut out = Jet::constant(self.v * o.v);
        for a in 0..3 {
            out.g[a] = self.g[a] * o.v + self.v * o.g[a];
            for b in 0..3 {
                out.h[a][b] = self.h[a][b] * o.v
                    + self.g[a] * o.g[b]
                    + o.g[a] * self.g[b]
                    + self.v * o.h[a][b];
            }
        }
        out
    }
}

impl Jet {
    /// Reciprocal `1 / self`.
    pub fn recip(self) -> Self {
        let v = self.v;
        self.compose(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    /// Jet in world coordinates of a jet given in the rotated local frame `p = R^T x`.
    pub fn rotate_from_local(self, rot: &[[f64; 3]; 3]) -> Self {
        let mut out = Jet::constant(self.v);
        for a in 0..3 {
            out.g[a] = (0..3).map(|i| rot[a][i] * self.g[i]).sum();
        }
        for a in 0..3 {
            for b in 0..3 {
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += rot[a][i] * self.h[i][j] * rot[b][j];
                    }
                }
                out.h[a][b] = acc;
            }
        }
        out
    }
}

/// `exp(-1/t)` for `t > 0` with its first two derivatives, zero for `t <= 0`.
fn flat_exp(t: f64) -> (f64, f64, f64) {
    if t < 1.0 / 700.0 {
        return (0.0, 0.0, 0.0);
    }
    let f = (-1.0 / t).exp();
    let t2 = t * t;
    (f, f / t2, f * (1.0 - 2.0 * t) / (t2 * t2))
}

/// C-infinity transition from 0 (`t <= 0`) to 1 (`t >= 1`), with two derivatives.
pub fn smooth_step(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let (a, da, dda) = flat_exp(t);
    let (b, db, ddb) = flat_exp(1.0 - t);
    // b is a function of 1 - t
    let (db, ddb) = (-db, ddb);
    let s = a + b;
    let num = da * b - a * db;
    let dnum = dda * b - a * ddb;
    let ds = da + db;
    (a / s, num / (s * s), (dnum * s - 2.0 * num * ds) / (s * s * s))
}

/// Value-only form of [`smooth_step`].
pub fn smooth_step_value(t: f64) -> f64 {
    smooth_step(t).0
}

/// Smooth radial cutoff: 1 for `r <= inner`, 0 for `r >= inner + width`.
///
/// `disp` is the displacement from the center, already reduced to the minimal image.
pub fn radial_cutoff(disp: &[f64; 3], dim: usize, inner: f64, width: f64) -> Jet {
    let r2: f64 = disp[..dim].iter().map(|v| v * v).sum();
    let r = r2.sqrt();
    let t = (r - inner) / width;
    if t <= 0.0 {
        return Jet::constant(1.0);
    }
    if t >= 1.0 {
        return Jet::constant(0.0);
    }
    let (s, ds, dds) = smooth_step(t);
    let mut tj = Jet::constant(t);
    for a in 0..dim {
        tj.g[a] = disp[a] / (r * width);
        for b in 0..dim {
            let delta = if a == b { 1.0 } else { 0.0 };
            tj.h[a][b] = (delta - disp[a] * disp[b] / r2) / (r * width);
        }
    }
    tj.compose(1.0 - s, -ds, -dds)
}

/// Smooth 1D window in coordinate `axis`: 1 on `[lo + width, hi - width]`, 0 outside `(lo, hi)`.
pub fn interval_cutoff(x: f64, axis: usize, lo: f64, hi: f64, width: f64) -> Jet {
    let side = |t: f64, sign: f64| {
        let (s, ds, dds) = smooth_step(t);
        let mut j = Jet::constant(s);
        j.g[axis] = sign * ds / width;
        j.h[axis][axis] = dds / (width * width);
        j
    };
    side((x - lo) / width, 1.0) * side((hi - x) / width, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&[f64; 3]) -> Jet, x: [f64; 3]) {
        let eps = 1e-5;
        let j = f(&x);
        for a in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += eps;
            xm[a] -= eps;
            let (jp, jm) = (f(&xp), f(&xm));
            let g = (jp.v - jm.v) / (2.0 * eps);
            assert!((g - j.g[a]).abs() < 1e-6, "grad {a}: {g} vs {}", j.g[a]);
            for b in 0..2 {
                let hb = (jp.g[b] - jm.g[b]) / (2.0 * eps);
                assert!((hb - j.h[a][b]).abs() < 1e-5, "hess {a}{b}: {hb} vs {}", j.h[a][b]);
            }
        }
    }

    #[test]
    fn product_and_composition_match_finite_differences() {
        let f = |x: &[f64; 3]| {
            let a = Jet::coordinate(x, 0, 0.1);
            let b = Jet::coordinate(x, 1, -0.2);
            (a * b).sin() + (a.square() + b.square()).scale(-0.5).exp()
        };
        fd_check(f, [0.3, 0.7, 0.0]);
    }

    #[test]
    fn cutoffs_match_finite_differences() {
        fd_check(|x| radial_cutoff(x, 2, 0.2, 0.3), [0.25, 0.15, 0.0]);
        fd_check(|x| interval_cutoff(x[0], 0, -0.8, 0.8, 0.3), [0.62, 0.0, 0.0]);
        fd_check(|x| interval_cutoff(x[1], 1, -0.8, 0.8, 0.3), [0.1, -0.71, 0.0]);
        let inside = radial_cutoff(&[0.0, 0.0, 0.0], 2, 0.2, 0.3);
        assert_eq!(inside, Jet::constant(1.0));
    }

    #[test]
    fn smooth_step_matches_finite_differences() {
        let eps = 1e-6;
        for &t in &[0.05, 0.3, 0.5, 0.77, 0.97] {
            let (f, df, ddf) = smooth_step(t);
            let (fp, dfp, _) = smooth_step(t + eps);
            let (fm, dfm, _) = smooth_step(t - eps);
            assert!(((fp - fm) / (2.0 * eps) - df).abs() < 1e-6);
            assert!(((dfp - dfm) / (2.0 * eps) - ddf).abs() < 1e-4);
            assert!((f + smooth_step(1.0 - t).0 - 1.0).abs() < 1e-15);
        }
        assert_eq!(smooth_step(0.0), (0.0, 0.0, 0.0));
        assert_eq!(smooth_step(1e-5), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rotation_and_reciprocal() {
        let x = [0.3, -0.2, 0.0];
        let th: f64 = 0.4;
        let (s, c) = th.sin_cos();
        let rot = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let f = |x: &[f64; 3]| {
            // local coordinates p = R^T x
            let p0 = c * x[0] + s * x[1];
            let p1 = -s * x[0] + c * x[1];
            let mut j0 = Jet::constant(p0);
            j0.g[0] = 1.0;
            let mut j1 = Jet::constant(p1);
            j1.g[1] = 1.0;
            (j0 * j0 * j1 + Jet::constant(2.0)).recip().rotate_from_local(&rot)
        };
        fd_check(f, x);
    }

    #[test]
    fn hessian_stays_symmetric() {
        let x = [0.3, -0.4, 0.0];
        let a = Jet::coordinate(&x, 0, 0.0);
        let b = Jet::coordinate(&x, 1, 0.0);
        let j = (a * b * a).cos() * radial_cutoff(&x, 2, 0.1, 0.6);
        assert_eq!(j.h[0][1], j.h[1][0]);
    }
}
