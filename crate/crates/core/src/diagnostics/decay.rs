//! Exponential decay fits.

use super::DiagError;

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub t1: f64,
    pub t2: f64,
    /// `Λ̂ = -slope` of the log-linear fit.
    pub rate: f64,
    /// `A` in `A e^{-Λ̂ t}`.
    pub amplitude: f64,
    pub points: usize,
    /// Root-mean-square deviation of `log value` from the fitted line.
    pub rms_residual: f64,
    /// `max log value - min log value` over the window.
    pub log_range: f64,
    /// `rms_residual / log_range`.
    pub relative_residual: f64,
    /// The window was cut short at the first nonpositive value.
    pub shrunk: bool,
    /// `2 C_KP / ρ̄` when the constant was supplied.
    pub reference_rate: Option<f64>,
    /// Samples with `value(τ) > value(t₀) e^{-Λ_ref (τ - t₀)}`.
    pub envelope_violations: Option<usize>,
}

impl DecayFit {
    pub fn value_at(&self, t: f64) -> f64 {
        self.amplitude * (-self.rate * t).exp()
    }
}

/// Least-squares line through `log value` on `window`. `reference` is
/// `(C_KP, ρ̄)`; with it, the envelope `value(τ) ≤ value(t₀) e^{-2 C_KP/ρ̄ (τ - t₀)}` is
/// tested at every sample of the series.
pub fn fit_decay(series: &[(f64, f64)], window: (f64, f64), reference: Option<(f64, f64)>) -> Result<DecayFit, DiagError> {
    let (t1, t2) = window;
    if t2 <= t1 {
        return Err(DiagError::InsufficientData(format!("empty window [{t1}, {t2}]")));
    }
    let mut pts = Vec::new();
    let mut shrunk = false;
    for &(t, v) in series.iter().filter(|(t, _)| *t >= t1 && *t <= t2) {
        if v <= 0.0 || !v.is_finite() {
            shrunk = true;
            break;
        }
        pts.push((t, v.ln()));
    }
    if pts.len() < 3 {
        return Err(DiagError::InsufficientData(format!("{} positive samples in [{t1}, {t2}]", pts.len())));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let stl: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let slope = stl / stt;
    let intercept = ml - slope * mt;
    let rms = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let log_range = hi - lo;
    let relative_residual = if log_range > 0.0 { rms / log_range } else { rms };
    let reference_rate = reference.map(|(c_kp, rho_bar)| 2.0 * c_kp / rho_bar);
    let envelope_violations = reference_rate.and_then(|lam| {
        let &(t0, v0) = series.first()?;
        Some(series.iter().filter(|(t, v)| *v > v0 * (-lam * (t - t0)).exp() * (1.0 + 1e-12)).count())
    });
    Ok(DecayFit {
        t1: pts[0].0,
        t2: pts[pts.len() - 1].0,
        rate: -slope,
        amplitude: intercept.exp(),
        points: pts.len(),
        rms_residual: rms,
        log_range,
        relative_residual,
        shrunk,
        reference_rate,
        envelope_violations,
    })
}

/// `sup |Y(t)| e^{Λ (t - t₀)}` over the first and second halves of a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub rate: f64,
    pub head_constant: f64,
    pub tail_constant: f64,
}

impl Envelope {
    /// The head constant bounds the tail: `|Y(t)| ≤ C e^{-Λ (t - t₀)}` with `C` read off
    /// the first half.
    pub fn holds(&self, slack: f64) -> bool {
        self.tail_constant <= self.head_constant * (1.0 + slack)
    }
}

pub fn velocity_envelope(series: &[(f64, f64)], rate: f64) -> Result<Envelope, DiagError> {
    if series.len() < 2 {
        return Err(DiagError::InsufficientData(format!("{} samples", series.len())));
    }
    let t0 = series[0].0;
    let mid = series.len() / 2;
    let sup = |s: &[(f64, f64)]| s.iter().map(|(t, y)| y.abs() * (rate * (t - t0)).exp()).fold(0.0, f64::max);
    Ok(Envelope { rate, head_constant: sup(&series[..mid]), tail_constant: sup(&series[mid..]) })
}
