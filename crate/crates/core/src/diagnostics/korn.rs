//! Korn–Poincaré constant of a container:
//! `min ∫|Du|² / ∫|u|²` over discrete divergence-free fields vanishing outside it.
//!
//! The constraint is imposed by a stiff penalty: the quotient is
//! `(∫|Du|² + ε_kp⁻¹ ∫χ|u|²) / ∫|u|²`. Without a container the minimum is taken over
//! mean-free fields. The smallest eigenvalue is found by inverse iteration, each
//! iterate Leray-projected, with the inner solves done by preconditioned CG.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use crate::elliptic::{conjugate_gradient, CgOptions};
use crate::field::{dot, ScalarField};
use crate::spectral::Spectral;
use crate::viscous::{Preconditioner, ViscousOperator, ViscousPreconditioner};

use super::DiagError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KornPoincareOptions {
    pub eps_kp: f64,
    /// Stop when consecutive Rayleigh quotients agree to this relative tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub inner_tol: f64,
}

impl Default for KornPoincareOptions {
    fn default() -> Self {
        Self { eps_kp: 1e-6, tol: 1e-10, max_iter: 200, inner_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KornPoincare {
    pub value: f64,
    pub iterations: usize,
    pub inner_iterations: usize,
    /// `|A x - λ x| / (λ |x|)` at the returned iterate.
    pub residual: f64,
}

/// The operator, its constraint projector and its Rayleigh quotient.
struct Problem<'a> {
    spectral: &'a Spectral,
    mass: Vec<f64>,
    mu: Vec<f64>,
    mean_free: bool,
}

impl<'a> Problem<'a> {
    fn new(spectral: &'a Spectral, chi: Option<&ScalarField>, eps_kp: f64) -> Self {
        let n = spectral.grid().len();
        let mass = match chi {
            Some(c) => c.data.iter().map(|v| v / eps_kp).collect(),
            None => vec![0.0; n],
        };
        let mean_free = chi.is_none_or(|c| c.data.iter().all(|&v| v == 0.0));
        Self { spectral, mass, mu: vec![1.0; n], mean_free }
    }

    fn dofs(&self) -> usize {
        self.spectral.grid().dim() * self.spectral.grid().len()
    }

    /// Orthogonal projection onto Nyquist-free, divergence-free (and mean-free) fields.
    fn project(&self, v: &mut [f64]) {
        let n = self.spectral.grid().len();
        let refs: Vec<&[f64]> = v.chunks(n).collect();
        let mut s = self.spectral.forward_many(&refs);
        self.spectral.leray_spectra(&mut s);
        for sa in s.iter_mut() {
            self.spectral.remove_nyquist(sa);
            if self.mean_free {
                sa[0] = Complex64::new(0.0, 0.0);
            }
        }
        for (vc, sc) in v.chunks_mut(n).zip(self.spectral.inverse_many(&s)) {
            vc.copy_from_slice(&sc);
        }
    }

    /// `P (mass - div D) P v` for `v` already in the subspace.
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        ViscousOperator { spectral: self.spectral, mass: &self.mass, mu: &self.mu }.apply(v, out);
        self.project(out);
    }
}

/// Smallest penalized Rayleigh quotient by inverse iteration.
pub fn estimate_korn_poincare(
    spectral: &Spectral,
    chi: Option<&ScalarField>,
    opts: &KornPoincareOptions,
) -> Result<KornPoincare, DiagError> {
    let prob = Problem::new(spectral, chi, opts.eps_kp);
    let len = prob.dofs();
    let grid = *spectral.grid();
    let k_low = std::f64::consts::PI / grid.half_period();
    // The preconditioner needs a positive mass; shift by the lowest free-space mode.
    let pre_mass: Vec<f64> = prob.mass.iter().map(|m| m + 0.5 * k_low * k_low).collect();
    let pre_op = ViscousOperator { spectral, mass: &pre_mass, mu: &prob.mu };
    let pre = Preconditioner::build(ViscousPreconditioner::InverseCoefficient, &pre_op);

    let mut x: Vec<f64> = (0..len)
        .map(|i| {
            let p = grid.position(i % grid.len());
            (1.3 * p[0] + 0.7 * p[1] + 0.4 * p[2] + i as f64 / grid.len() as f64).sin() + 0.3 * (2.1 * p[1] - p[0]).cos()
        })
        .collect();
    prob.project(&mut x);
    let norm = dot(&x, &x).sqrt();
    if norm == 0.0 {
        return Err(DiagError::NotConverged("empty constraint subspace".into()));
    }
    x.iter_mut().for_each(|v| *v /= norm);

    let cg = CgOptions { rel_tol: opts.inner_tol, abs_tol: 0.0, max_iter: 20_000, constant_null_space: false };
    let mut ax = vec![0.0; len];
    prob.apply(&x, &mut ax);
    let mut lambda = dot(&x, &ax);
    let mut inner = 0;
    for it in 1..=opts.max_iter {
        let mut y = vec![0.0; len];
        let rep = conjugate_gradient(
            |v, o| prob.apply(v, o),
            |r, z| {
                pre.apply(r, z);
                prob.project(z);
            },
            &x,
            &mut y,
            &cg,
        )
        .map_err(|e| DiagError::NotConverged(e.to_string()))?;
        inner += rep.iterations;
        let norm = dot(&y, &y).sqrt();
        y.iter_mut().for_each(|v| *v /= norm);
        prob.apply(&y, &mut ax);
        let next = dot(&y, &ax);
        x = y;
        let converged = (next - lambda).abs() <= opts.tol * next.abs();
        lambda = next;
        if converged {
            let residual = ax.iter().zip(&x).map(|(a, v)| (a - lambda * v).powi(2)).sum::<f64>().sqrt() / lambda;
            return Ok(KornPoincare { value: lambda, iterations: it, inner_iterations: inner, residual });
        }
    }
    Err(DiagError::NotConverged(format!("Rayleigh quotient {lambda:.6e} after {} iterations", opts.max_iter)))
}

/// Smallest eigenvalue of the same discrete operator by a dense symmetric eigensolve.
/// The complement of the constraint subspace is mapped to a shift above the spectrum.
/// Intended for small grids (`16²`).
pub fn dense_korn_poincare(spectral: &Spectral, chi: Option<&ScalarField>, eps_kp: f64) -> f64 {
    let prob = Problem::new(spectral, chi, eps_kp);
    let len = prob.dofs();
    let kmax = spectral.kd_sq().iter().copied().fold(0.0, f64::max);
    let shift = prob.mass.iter().copied().fold(0.0, f64::max) + kmax + 1.0;
    let mut m = DMatrix::<f64>::zeros(len, len);
    let mut e = vec![0.0; len];
    let mut out = vec![0.0; len];
    for j in 0..len {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let mut pe = e.clone();
        prob.project(&mut pe);
        prob.apply(&pe, &mut out);
        for i in 0..len {
            // P A P e + shift (e - P e)
            m[(i, j)] = out[i] + shift * (e[i] - pe[i]);
        }
    }
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ChiProfile;
    use crate::grid::TorusGrid;
    use crate::scenario::{build_chi, DomainSpec};
    use crate::shapes::{PlacedShape, Pose, Shape};

    fn box_chi(grid: &TorusGrid, half: f64) -> ScalarField {
        let dom = DomainSpec {
            placed: PlacedShape {
                dim: 2,
                shape: Shape::Box { half_extents: vec![half, half] },
                pose: Pose::new(2, &[0.0, 0.0], 0.0, None),
            },
        };
        build_chi(Some(&dom), grid, 2.0 * grid.spacing(), ChiProfile::SmoothStepSquared).unwrap()
    }

    #[test]
    fn free_torus_gives_lowest_mode() {
        for l in [1.0, 2.5] {
            let g = TorusGrid::new(2, l, 24).unwrap();
            let sp = Spectral::new(&g);
            let kp = estimate_korn_poincare(&sp, None, &KornPoincareOptions::default()).unwrap();
            let k = std::f64::consts::PI / l;
            assert!((kp.value - 0.5 * k * k).abs() < 1e-9 * kp.value, "{kp:?}");
        }
    }

    #[test]
    fn constrained_estimate_matches_dense_eigensolve() {
        let g = TorusGrid::new(2, 1.0, 16).unwrap();
        let sp = Spectral::new(&g);
        let chi = box_chi(&g, 0.6);
        let kp = estimate_korn_poincare(&sp, Some(&chi), &KornPoincareOptions::default()).unwrap();
        let dense = dense_korn_poincare(&sp, Some(&chi), 1e-6);
        assert!((kp.value - dense).abs() < 1e-6 * dense, "{} vs {dense}", kp.value);
    }

    #[test]
    fn dense_free_torus_agrees() {
        let g = TorusGrid::new(2, 1.0, 8).unwrap();
        let sp = Spectral::new(&g);
        let k = std::f64::consts::PI;
        assert!((dense_korn_poincare(&sp, None, 1e-6) - 0.5 * k * k).abs() < 1e-9);
    }

    #[test]
    fn shrinking_container_raises_the_constant() {
        let g = TorusGrid::new(2, 1.0, 24).unwrap();
        let sp = Spectral::new(&g);
        let opts = KornPoincareOptions::default();
        let big = estimate_korn_poincare(&sp, Some(&box_chi(&g, 0.65)), &opts).unwrap().value;
        let small = estimate_korn_poincare(&sp, Some(&box_chi(&g, 0.45)), &opts).unwrap().value;
        let k = std::f64::consts::PI;
        assert!(small > big && big > 0.5 * k * k, "{small} {big}");
    }
}
