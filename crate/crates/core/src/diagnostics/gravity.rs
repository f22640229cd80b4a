//! Gravitational energy `∫ρ(½|u|² - G)` and the long-time behaviour under a potential.

use super::{trapezoid, uniform_spacing, DiagError, EnergyLedger};

#[derive(Debug, Clone, PartialEq)]
pub struct GravityReport {
    pub dt: f64,
    /// Largest single-sample increase of EGRAV (0 when non-increasing).
    pub max_egrav_rise: f64,
    /// `max_egrav_rise / dt`.
    pub rise_constant: f64,
    /// Sum of all increases of EGRAV.
    pub total_egrav_rise: f64,
    /// `EGRAV(0) - EGRAV(T)`.
    pub egrav_drop: f64,
    /// Mean of `∫ρG` over the last quarter of the samples.
    pub e_inf: f64,
    /// Means of `∫ρG` over the third and fourth quarters.
    pub quarter_means: (f64, f64),
    /// `|q₃ - q₄| / |q₄|`.
    pub quarter_change: f64,
    pub ke_peak: f64,
    pub ke_final: f64,
    /// `∫₀^T DISS dt`.
    pub dissipation_integral: f64,
    /// `∫ρG(T) - ∫ρG(0) - ∫₀^T ∫ρu·∇G`.
    pub l7_residual: f64,
    /// The same with the transporting velocity `[u]_δ` in place of `u`.
    pub l7_residual_mollified: f64,
    /// Largest `|residual(0, τ)|` over all sample times, raw and with `[u]_δ`.
    pub l7_max: f64,
    pub l7_max_mollified: f64,
    /// `|∫ρG(T) - ∫ρG(0)|`, the scale of the identity.
    pub l7_scale: f64,
}

impl GravityReport {
    pub fn ke_ratio(&self) -> f64 {
        if self.ke_peak > 0.0 {
            self.ke_final / self.ke_peak
        } else {
            0.0
        }
    }
}

/// Requires a ledger measured with a potential `G` (`g = ∇G`).
pub fn gravity_report(ledger: &EnergyLedger) -> Result<GravityReport, DiagError> {
    let dt = uniform_spacing(&ledger.times())?;
    let r = &ledger.rows;
    let rho_g: Vec<f64> = r.iter().map(|row| row.rho_g.ok_or(DiagError::NoPotential)).collect::<Result<_, _>>()?;
    let egrav: Vec<f64> = r.iter().map(|row| row.ke - row.rho_g.unwrap_or(0.0)).collect();
    let rises: Vec<f64> = egrav.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let max_rise = rises.iter().copied().fold(0.0, f64::max);
    let n = r.len();
    let q = (n / 4).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let q4 = mean(&rho_g[n - q..]);
    let q3 = mean(&rho_g[n.saturating_sub(2 * q)..n - q]);
    let quarter_change = if q4 != 0.0 { (q3 - q4).abs() / q4.abs() } else { (q3 - q4).abs() };

    let mut acc = 0.0;
    let mut acc_w = 0.0;
    let (mut l7_max, mut l7_max_w) = (0.0f64, 0.0f64);
    for k in 1..n {
        acc += 0.5 * dt * (r[k - 1].work + r[k].work);
        acc_w += 0.5 * dt * (r[k - 1].work_mollified + r[k].work_mollified);
        let lhs = rho_g[k] - rho_g[0];
        l7_max = l7_max.max((lhs - acc).abs());
        l7_max_w = l7_max_w.max((lhs - acc_w).abs());
    }
    let lhs = rho_g[n - 1] - rho_g[0];
    Ok(GravityReport {
        dt,
        max_egrav_rise: max_rise,
        rise_constant: max_rise / dt,
        total_egrav_rise: rises.iter().sum(),
        egrav_drop: egrav[0] - egrav[n - 1],
        e_inf: q4,
        quarter_means: (q3, q4),
        quarter_change,
        ke_peak: r.iter().map(|row| row.ke).fold(0.0, f64::max),
        ke_final: r[n - 1].ke,
        dissipation_integral: trapezoid(dt, r.iter().map(|row| row.diss)),
        l7_residual: lhs - acc,
        l7_residual_mollified: lhs - acc_w,
        l7_max,
        l7_max_mollified: l7_max_w,
        l7_scale: lhs.abs(),
    })
}
