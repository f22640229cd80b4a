//! Preconditioned conjugate gradients on flat `f64` vectors.
//!
//! Operators and preconditioners are callbacks `(input, output)`. Inner products are
//! plain sequential sums, so iteration histories are reproducible bit for bit.

use thiserror::Error;

use crate::field::dot;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EllipticError {
    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {relative_residual:.3e})")]
    NotConverged { iterations: usize, relative_residual: f64 },
    #[error("right-hand side is incompatible with the constant null space (mean {mean:.3e})")]
    IncompatibleRhs { mean: f64 },
    #[error("operator is not positive on the search direction (curvature {curvature:.3e})")]
    Indefinite { curvature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Stop once `|r| <= rel_tol * |b|` ...
    pub rel_tol: f64,
    /// ... or `|r| <= abs_tol`.
    pub abs_tol: f64,
    pub max_iter: usize,
    /// The operator annihilates constants; the rhs must have zero mean and iterates
    /// are kept mean-free.
    pub constant_null_space: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 0.0, max_iter: 2000, constant_null_space: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub residual_norm: f64,
    pub rhs_norm: f64,
}

impl CgReport {
    pub fn relative_residual(&self) -> f64 {
        if self.rhs_norm > 0.0 {
            self.residual_norm / self.rhs_norm
        } else {
            self.residual_norm
        }
    }
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Solves `A x = b` for symmetric positive (semi)definite `A`, starting from the
/// contents of `x`.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    rhs: &[f64],
    x: &mut [f64],
    opts: &CgOptions,
) -> Result<CgReport, EllipticError> {
    let n = rhs.len();
    assert_eq!(x.len(), n);
    let rhs_norm = dot(rhs, rhs).sqrt();
    if opts.constant_null_space {
        let mean = rhs.iter().sum::<f64>() / n as f64;
        let rms = rhs_norm / (n as f64).sqrt();
        if mean.abs() > 1e-10 * rms.max(f64::MIN_POSITIVE) && mean.abs() > 1e-14 {
            return Err(EllipticError::IncompatibleRhs { mean });
        }
        remove_mean(x);
    }
    let target = (opts.rel_tol * rhs_norm).max(opts.abs_tol);

    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = rhs[i] - r[i];
    }
    if opts.constant_null_space {
        remove_mean(&mut r);
    }
    let mut res = dot(&r, &r).sqrt();
    if res <= target || res == 0.0 {
        return Ok(CgReport { iterations: 0, residual_norm: res, rhs_norm });
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    if opts.constant_null_space {
        remove_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=opts.max_iter {
        apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 {
            return Err(EllipticError::Indefinite { curvature });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if opts.constant_null_space {
            remove_mean(&mut r);
        }
        res = dot(&r, &r).sqrt();
        if res <= target {
            if opts.constant_null_space {
                remove_mean(x);
            }
            return Ok(CgReport { iterations: it, residual_norm: res, rhs_norm });
        }
        precond(&r, &mut z);
        if opts.constant_null_space {
            remove_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(EllipticError::NotConverged {
        iterations: opts.max_iter,
        relative_residual: if rhs_norm > 0.0 { res / rhs_norm } else { res },
    })
}

pub fn identity_precond(r: &[f64], z: &mut [f64]) {
    z.copy_from_slice(r);
}
