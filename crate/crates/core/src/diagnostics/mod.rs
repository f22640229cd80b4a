//! Post-processing of trajectories: energy ledgers and inequalities, decay fits,
//! gravitational-energy asymptotics, weak-form residuals and the Korn–Poincaré constant.
//!
//! Everything here reads states and never mutates them. Trajectories are consumed one
//! sample at a time so that long runs do not need their fields kept in memory.

mod decay;
mod gravity;
mod korn;
mod ledger;
mod weak;

pub use decay::{fit_decay, velocity_envelope, DecayFit, Envelope};
pub use gravity::{gravity_report, GravityReport};
pub use korn::{dense_korn_poincare, estimate_korn_poincare, KornPoincare, KornPoincareOptions};
pub use ledger::{
    check_energy_inequality, energy_ledger, masked_kinetic_energy, step_defects, EnergyLedger, InequalityForm, InequalityReport,
    LedgerContext, LedgerRow, StepDefects, Violation,
};
pub use weak::{
    admissible_test_fields, mass_test_functions, BodyNeighborhood, MassProbe, MomentumProbe, MomentumTestField,
    WeakResidual,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagError {
    #[error("sample {index} does not match the diagnostic grid")]
    GridMismatch { index: usize },
    #[error("not enough samples: {0}")]
    InsufficientData(String),
    #[error("samples are not uniformly spaced in time (step {index}: {dt} vs {expected})")]
    NonUniform { index: usize, dt: f64, expected: f64 },
    #[error("no gravitational potential configured")]
    NoPotential,
    #[error("the momentum residual is implemented for two dimensions only")]
    UnsupportedDimension,
    #[error("body {id}: neighborhood radius {radius} leaves no room for the cutoff (needs at least {needed})")]
    NeighborhoodTooSmall { id: u32, radius: f64, needed: f64 },
    #[error("body {id} left its declared neighborhood at t = {t}")]
    BodyLeftNeighborhood { id: u32, t: f64 },
    #[error("inverse iteration did not converge: {0}")]
    NotConverged(String),
}

/// Time profile `ψ(t) = max(0, 1 - ((t - c)/w)²)²`; `C¹`, nonnegative, supported on
/// `[c - w, c + w]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiBump {
    pub center: f64,
    pub width: f64,
}

impl PsiBump {
    pub fn value(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.width;
        if s.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - s * s).powi(2)
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.width;
        if s.abs() >= 1.0 {
            0.0
        } else {
            -4.0 * s * (1.0 - s * s) / self.width
        }
    }
}

/// Fixed basket of bumps for a horizon `t_end` sampled every `dt`: widths
/// `t_end / 2^k` down to eight samples, centers every half width from 0, each bump
/// ending before `t_end`.
pub fn psi_basket(t_end: f64, dt: f64) -> Vec<PsiBump> {
    let mut out = Vec::new();
    let mut width = 0.5 * t_end;
    while width >= 8.0 * dt && out.len() < 256 {
        let mut j = 0;
        loop {
            let center = 0.5 * width * j as f64;
            if center + width > t_end * (1.0 + 1e-12) {
                break;
            }
            out.push(PsiBump { center, width });
            j += 1;
        }
        width *= 0.5;
    }
    out
}

/// Trapezoidal rule on uniformly spaced samples.
pub(crate) fn trapezoid(dt: f64, values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    let mut acc = 0.0;
    for (i, v) in values.enumerate() {
        acc += if i == 0 || i + 1 == n { 0.5 * v } else { v };
    }
    acc * dt
}

/// Common spacing of `times`, checked to a relative `1e-6`.
pub(crate) fn uniform_spacing(times: &[f64]) -> Result<f64, DiagError> {
    if times.len() < 2 {
        return Err(DiagError::InsufficientData(format!("{} samples", times.len())));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > 1e-6 * dt {
            return Err(DiagError::NonUniform { index: i, dt: step, expected: dt });
        }
    }
    Ok(dt)
}

/// `∫ψ' A dt` over the samples, written as `-ψ(t₀)A(t₀) - Σ ψ̄ (A_{n+1} - A_n)` with
/// `ψ̄` the interval mean of `ψ`. Exact when `A` is constant, and the adjoint of the
/// trapezoidal rule used for the remaining terms.
pub(crate) fn psi_prime_integral(psi: &PsiBump, times: &[f64], a: &[f64]) -> f64 {
    let mut acc = -psi.value(times[0]) * a[0];
    for n in 0..times.len() - 1 {
        let mean = 0.5 * (psi.value(times[n]) + psi.value(times[n + 1]));
        acc -= mean * (a[n + 1] - a[n]);
    }
    acc + psi.value(times[times.len() - 1]) * a[a.len() - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basket_is_compact_in_horizon() {
        let basket = psi_basket(1.0, 1e-3);
        assert!(basket.len() > 20);
        for b in &basket {
            assert!(b.center + b.width <= 1.0 + 1e-12);
            assert_eq!(b.value(1.0), 0.0);
        }
        assert!(basket.iter().any(|b| b.value(0.0) == 1.0));
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let dt = 0.1;
        let v: Vec<f64> = (0..11).map(|i| 2.0 + 3.0 * i as f64 * dt).collect();
        assert!((trapezoid(dt, v.into_iter()) - 3.5).abs() < 1e-13);
    }

    #[test]
    fn psi_prime_of_constant_is_boundary_term() {
        let times: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        let a = vec![2.5; times.len()];
        let psi = PsiBump { center: 0.0, width: 0.5 };
        // ∫ψ' = ψ(T) - ψ(0) = -1
        assert!((psi_prime_integral(&psi, &times, &a) + 2.5).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn bump_derivative_matches_differences(c in -1.0f64..1.0, w in 0.1f64..2.0, t in -3.0f64..3.0) {
            let psi = PsiBump { center: c, width: w };
            let h = 1e-6;
            let fd = (psi.value(t + h) - psi.value(t - h)) / (2.0 * h);
            prop_assert!((fd - psi.derivative(t)).abs() < 1e-5 * (1.0 + 1.0 / w));
            prop_assert!(psi.value(t) >= 0.0);
        }

        #[test]
        fn psi_prime_sum_converges_to_integral(c in 0.0f64..0.5, w in 0.2f64..0.5) {
            let psi = PsiBump { center: c, width: w };
            let times: Vec<f64> = (0..2001).map(|i| i as f64 * 5e-4).collect();
            let a: Vec<f64> = times.iter().map(|t| (3.0 * t).sin()).collect();
            let exact = trapezoid(5e-4, times.iter().map(|&t| psi.derivative(t) * (3.0 * t).sin()));
            prop_assert!((psi_prime_integral(&psi, &times, &a) - exact).abs() < 1e-5);
        }
    }
}
