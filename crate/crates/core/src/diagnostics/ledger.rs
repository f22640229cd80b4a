//! Energy ledger and the energy inequality in differential and integrated form.

use crate::field::VectorField;
use crate::mollifier::MollifierKernel;
use crate::scenario::Forcing;
use crate::solver::{FluidState, Solver};
use crate::spectral::Spectral;

use super::{psi_basket, uniform_spacing, DiagError, PsiBump};

/// What the ledger needs besides the state: operators, penalty and forcing.
pub struct LedgerContext<'a> {
    pub spectral: &'a Spectral,
    pub kernel: &'a MollifierKernel,
    /// `χ/ε` per node.
    pub chi_eps: &'a [f64],
    pub forcing: &'a Forcing,
}

impl<'a> LedgerContext<'a> {
    pub fn new(solver: &'a Solver) -> Self {
        Self { spectral: solver.spectral(), kernel: solver.kernel(), chi_eps: solver.chi_eps(), forcing: solver.forcing() }
    }

    /// Integrals of one sample.
    pub fn measure(&self, state: &FluidState) -> LedgerRow {
        let grid = *self.spectral.grid();
        let cell = grid.cell_volume();
        let n = grid.len();
        let d = grid.dim();
        let rho = &state.rho.data;
        let u = &state.u;
        let du = self.spectral.sym_grad(u);
        let mu_bar = self.spectral.mollify(&state.mu, self.kernel);
        let w = self.spectral.mollify_vector(u, self.kernel);
        let g = &self.forcing.g;
        let potential = self.forcing.potential.as_ref();

        let (mut ke, mut diss, mut pen, mut work, mut work_w, mut leak, mut mass, mut rho_g) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let u2 = u.norm_sq_at(i);
            ke += 0.5 * rho[i] * u2;
            diss += mu_bar.data[i] * du.frobenius_sq_at(i);
            pen += self.chi_eps[i] * u2;
            if self.chi_eps[i] > 0.0 {
                leak += u2;
            }
            let (mut gu, mut gw) = (0.0, 0.0);
            for a in 0..d {
                gu += g.comps[a][i] * u.comps[a][i];
                gw += g.comps[a][i] * w.comps[a][i];
            }
            work += rho[i] * gu;
            work_w += rho[i] * gw;
            mass += rho[i];
            if let Some(p) = potential {
                rho_g += rho[i] * p.data[i];
            }
        }
        let rigidity = state
            .markers
            .iter()
            .map(|m| (m.id, (0..n).map(|i| m.field.data[i] * du.frobenius_sq_at(i)).sum::<f64>() * cell))
            .collect();
        let rho_g = potential.map(|_| rho_g * cell);
        LedgerRow {
            t: state.t,
            step: state.step,
            ke: ke * cell,
            diss: diss * cell,
            pen: pen * cell,
            work: work * cell,
            egrav: rho_g.map(|rg| ke * cell - rg),
            leakage: leak * cell,
            rho_g,
            work_mollified: work_w * cell,
            mass: mass * cell,
            min_mu: state.mu.min(),
            min_mu_bar: mu_bar.min(),
            max_divergence: self.spectral.divergence(u).max_abs(),
            rigidity,
        }
    }
}

/// One ledger sample. Integrals use the grid quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub t: f64,
    pub step: u64,
    /// `∫ ½ρ|u|²`
    pub ke: f64,
    /// `∫ [μ]_δ |Du|²`
    pub diss: f64,
    /// `∫ χ_ε |u|²`
    pub pen: f64,
    /// `∫ ρ g·u`
    pub work: f64,
    /// `∫ ρ(½|u|² - G)` when a potential is configured.
    pub egrav: Option<f64>,
    /// `∫ |u|²` over the nodes outside the container.
    pub leakage: f64,
    /// `∫ ρ G` when a potential is configured.
    pub rho_g: Option<f64>,
    /// `∫ ρ g·[u]_δ`, the work done along the transporting velocity.
    pub work_mollified: f64,
    /// `∫ ρ`
    pub mass: f64,
    pub min_mu: f64,
    pub min_mu_bar: f64,
    pub max_divergence: f64,
    /// `∫ a_i |Du|²` per marker id.
    pub rigidity: Vec<(u32, f64)>,
}

impl LedgerRow {
    pub fn is_finite(&self) -> bool {
        [self.t, self.ke, self.diss, self.pen, self.work, self.leakage, self.mass].iter().all(|v| v.is_finite())
            && self.egrav.is_none_or(f64::is_finite)
            && self.rigidity.iter().all(|(_, v)| v.is_finite())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    pub fn push(&mut self, row: LedgerRow) {
        self.rows.push(row);
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn column(&self, f: impl Fn(&LedgerRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Ledger of a stored trajectory.
pub fn energy_ledger(ctx: &LedgerContext, samples: &[FluidState]) -> Result<EnergyLedger, DiagError> {
    let grid = ctx.spectral.grid();
    let mut ledger = EnergyLedger::default();
    for (index, s) in samples.iter().enumerate() {
        let ok = s.grid() == grid
            && s.u.grid() == grid
            && s.u.comps.len() == grid.dim()
            && s.mu.grid() == grid
            && s.markers.iter().all(|m| m.field.grid() == grid);
        if !ok {
            return Err(DiagError::GridMismatch { index });
        }
        ledger.push(ctx.measure(s));
    }
    Ok(ledger)
}

/// Per-sample defects of the discrete energy estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDefects {
    pub dt: f64,
    /// `e_n = KE_{n+1} - KE_n + dt (DISS + PEN - WORK)_{n+1}`
    pub defects: Vec<f64>,
    /// `max_n e_n / dt²`; negative when every step dissipates more than it gains.
    pub c: f64,
    /// Sample index of the largest defect.
    pub worst: usize,
}

pub fn step_defects(ledger: &EnergyLedger) -> Result<StepDefects, DiagError> {
    let dt = uniform_spacing(&ledger.times())?;
    let r = &ledger.rows;
    let defects: Vec<f64> = r
        .windows(2)
        .map(|w| w[1].ke - w[0].ke + dt * (w[1].diss + w[1].pen - w[1].work))
        .collect();
    let (worst, emax) =
        defects.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    Ok(StepDefects { dt, c: emax / (dt * dt), defects, worst })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InequalityForm {
    /// `-∫ψ' KE + ∫ψ (DISS + PEN) ≤ ψ(0) KE(0) + ∫ψ WORK` for every `ψ` of the basket.
    Differential,
    /// `KE(τ) + ∫₀^τ (DISS + PEN) ≤ KE(0) + ∫₀^τ WORK` at every sample `τ`.
    Integrated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    Psi(PsiBump),
    Time(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub form: InequalityForm,
    pub tol: f64,
    /// `min(rhs - lhs)` over all checks; the inequality holds when `≥ -tol`.
    pub worst_margin: f64,
    /// Where the worst margin occurred.
    pub worst_at: Option<Violation>,
    /// Set when `worst_margin < -tol`.
    pub violation: Option<Violation>,
    pub checks: usize,
}

impl InequalityReport {
    pub fn holds(&self) -> bool {
        self.violation.is_none()
    }
}

/// Checks the energy inequality on a uniformly sampled ledger.
///
/// Time integrals pair each interval with its right-end ledger value and the interval
/// mean of `ψ`, the quadrature of the implicit step itself, so that the
/// differential form reduces to `Σ ψ̄_n e_n` in terms of [`step_defects`]. The penalty
/// integral sits next to the dissipation on the left.
pub fn check_energy_inequality(
    ledger: &EnergyLedger,
    form: InequalityForm,
    tol: f64,
) -> Result<InequalityReport, DiagError> {
    let times = ledger.times();
    let dt = uniform_spacing(&times)?;
    let r = &ledger.rows;
    let t0 = times[0];
    let mut worst = f64::INFINITY;
    let mut worst_at = None;
    let mut checks = 0;
    match form {
        InequalityForm::Differential => {
            for b in psi_basket(times[times.len() - 1] - t0, dt) {
                let psi = PsiBump { center: b.center + t0, width: b.width };
                // -∫ψ'KE = ψ(t₀)KE(t₀) + Σ ψ̄ ΔKE - ψ(T)KE(T)
                let mut lhs = psi.value(t0) * r[0].ke - psi.value(times[times.len() - 1]) * r[r.len() - 1].ke;
                let mut rhs = psi.value(t0) * r[0].ke;
                for n in 0..r.len() - 1 {
                    let pm = 0.5 * (psi.value(times[n]) + psi.value(times[n + 1]));
                    lhs += pm * (r[n + 1].ke - r[n].ke) + pm * dt * (r[n + 1].diss + r[n + 1].pen);
                    rhs += pm * dt * r[n + 1].work;
                }
                checks += 1;
                if rhs - lhs < worst {
                    worst = rhs - lhs;
                    worst_at = Some(Violation::Psi(b));
                }
            }
        }
        InequalityForm::Integrated => {
            let mut acc = 0.0;
            for n in 0..r.len() {
                if n > 0 {
                    acc += dt * (r[n].diss + r[n].pen - r[n].work);
                }
                let margin = r[0].ke - r[n].ke - acc;
                checks += 1;
                if margin < worst {
                    worst = margin;
                    worst_at = Some(Violation::Time(times[n]));
                }
            }
        }
    }
    let violation = if worst < -tol { worst_at } else { None };
    Ok(InequalityReport { form, tol, worst_margin: worst, worst_at, violation, checks })
}

/// `∫ ½ρ|u|²` restricted to nodes with `mask > 0`.
pub fn masked_kinetic_energy(rho: &[f64], u: &VectorField, mask: &[f64]) -> f64 {
    let cell = u.grid().cell_volume();
    (0..rho.len()).filter(|&i| mask[i] > 0.0).map(|i| 0.5 * rho[i] * u.norm_sq_at(i)).sum::<f64>() * cell
}
