//! `diagnose`: post-process a run directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use pfsi_core::diagnostics::{
    admissible_test_fields, check_energy_inequality, estimate_korn_poincare, fit_decay, gravity_report, mass_test_functions,
    psi_basket, step_defects, velocity_envelope, BodyNeighborhood, DiagError, EnergyLedger, InequalityForm,
    KornPoincareOptions, LedgerContext, MassProbe, MomentumProbe, WeakResidual,
};
use pfsi_core::scenario::{bodies_from_config, build_chi, build_scenario_with, domain_from_config, velocity_cutoff_width};
use pfsi_core::solver::{Solver, StepParams};
use pfsi_core::{Config, Spectral, TorusGrid};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::run::load_config_file;
use crate::snapshot::read_snapshot;
use crate::tables::{read_bodies, read_energy, BodySample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Energy,
    Decay,
    Gravity,
    Weak,
    Korn,
}

impl Check {
    pub const ALL: [Check; 5] = [Check::Energy, Check::Decay, Check::Gravity, Check::Weak, Check::Korn];

    pub fn name(self) -> &'static str {
        match self {
            Check::Energy => "energy",
            Check::Decay => "decay",
            Check::Gravity => "gravity",
            Check::Weak => "weak",
            Check::Korn => "korn",
        }
    }
}

impl FromStr for Check {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| format!("unknown check `{s}` (expected one of energy, decay, gravity, weak, korn)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseOptions {
    /// `C` in the tolerance `C dt` used by the energy inequality and the EGRAV rise per step.
    pub energy_constant: f64,
    /// Decay-fit window; the second half of the run by default.
    pub decay_window: Option<(f64, f64)>,
    /// Resolution of the Korn–Poincaré estimate.
    pub korn_cells: usize,
    pub mass_test_functions: usize,
    pub momentum_test_fields: usize,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self { energy_constant: 1.0, decay_window: None, korn_cells: 32, mass_test_functions: 6, momentum_test_fields: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub check: &'static str,
    pub passed: bool,
    pub report: Value,
}

fn diag(check: &'static str) -> impl Fn(DiagError) -> CliError {
    move |source| CliError::Diagnostic { check, source }
}

struct RunData {
    dir: PathBuf,
    cfg: Config,
    ledger: EnergyLedger,
    bodies: Vec<BodySample>,
}

fn energy_check(run: &RunData, opts: &DiagnoseOptions) -> Result<CheckOutcome, CliError> {
    let d = step_defects(&run.ledger).map_err(diag("energy"))?;
    let tol = opts.energy_constant * d.dt;
    let diff = check_energy_inequality(&run.ledger, InequalityForm::Differential, tol).map_err(diag("energy"))?;
    let int = check_energy_inequality(&run.ledger, InequalityForm::Integrated, tol).map_err(diag("energy"))?;
    let report = json!({
        "dt": d.dt,
        "step_defect_constant": d.c,
        "worst_step": d.worst,
        "tolerance": tol,
        "differential": { "worst_margin": diff.worst_margin, "checks": diff.checks, "holds": diff.holds(), "violation": format!("{:?}", diff.violation) },
        "integrated": { "worst_margin": int.worst_margin, "checks": int.checks, "holds": int.holds(), "violation": format!("{:?}", int.violation) },
    });
    Ok(CheckOutcome { check: "energy", passed: diff.holds() && int.holds(), report })
}

fn decay_check(run: &RunData, opts: &DiagnoseOptions, c_kp: Option<f64>) -> Result<CheckOutcome, CliError> {
    let rows = &run.ledger.rows;
    let (t_start, t_end) = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(CliError::Missing("energy.csv has no samples".into())),
    };
    let window = opts.decay_window.unwrap_or((0.5 * (t_start + t_end), t_end));
    let rho_bar = run.cfg.bodies.iter().map(|b| b.density).fold(1.0, f64::max);
    let series: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.ke)).collect();
    let fit = fit_decay(&series, window, c_kp.map(|c| (c, rho_bar))).map_err(diag("decay"))?;
    let mut envelopes = Vec::new();
    let mut ids: Vec<u32> = run.bodies.iter().map(|b| b.id).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut envelopes_hold = true;
    for id in ids {
        let speed: Vec<(f64, f64)> = run
            .bodies
            .iter()
            .filter(|b| b.id == id && b.t >= window.0)
            .map(|b| (b.t, b.velocity.iter().map(|v| v * v).sum::<f64>().sqrt()))
            .collect();
        if let Ok(env) = velocity_envelope(&speed, 0.5 * fit.rate) {
            envelopes_hold &= env.holds(0.25);
            envelopes.push(json!({ "id": id, "rate": env.rate, "head_constant": env.head_constant, "tail_constant": env.tail_constant, "holds": env.holds(0.25) }));
        }
    }
    let report = json!({
        "window": [fit.t1, fit.t2],
        "rate": fit.rate,
        "amplitude": fit.amplitude,
        "points": fit.points,
        "rms_residual": fit.rms_residual,
        "relative_residual": fit.relative_residual,
        "window_shrunk": fit.shrunk,
        "rho_bar": rho_bar,
        "korn_poincare": c_kp,
        "reference_rate": fit.reference_rate,
        "envelope_violations": fit.envelope_violations,
        "body_velocity_envelopes": envelopes,
    });
    let passed = fit.rate > 0.0 && fit.relative_residual < 0.05 && envelopes_hold;
    Ok(CheckOutcome { check: "decay", passed, report })
}

fn gravity_check(run: &RunData, opts: &DiagnoseOptions) -> Result<CheckOutcome, CliError> {
    let g = gravity_report(&run.ledger).map_err(diag("gravity"))?;
    let tol = opts.energy_constant * g.dt;
    let report = json!({
        "dt": g.dt,
        "max_egrav_rise": g.max_egrav_rise,
        "rise_constant": g.rise_constant,
        "rise_tolerance": tol,
        "total_egrav_rise": g.total_egrav_rise,
        "egrav_drop": g.egrav_drop,
        "e_inf": g.e_inf,
        "quarter_means": [g.quarter_means.0, g.quarter_means.1],
        "quarter_change": g.quarter_change,
        "ke_peak": g.ke_peak,
        "ke_final": g.ke_final,
        "ke_ratio": g.ke_ratio(),
        "dissipation_integral": g.dissipation_integral,
        "l7_residual": g.l7_residual,
        "l7_residual_mollified": g.l7_residual_mollified,
        "l7_max": g.l7_max,
        "l7_max_mollified": g.l7_max_mollified,
        "l7_scale": g.l7_scale,
    });
    Ok(CheckOutcome { check: "gravity", passed: g.max_egrav_rise <= tol, report })
}

fn residual_summary(res: &[WeakResidual]) -> Value {
    let max = |f: fn(&WeakResidual) -> f64| res.iter().map(f).fold(0.0, f64::max);
    json!({
        "count": res.len(),
        "max_raw": max(|r| r.raw.abs()),
        "max_substituted": max(|r| r.substituted.abs()),
        "max_relative_raw": max(|r| if r.scale > 0.0 { r.raw.abs() / r.scale } else { 0.0 }),
        "max_relative_substituted": max(|r| if r.scale > 0.0 { r.substituted.abs() / r.scale } else { 0.0 }),
    })
}

fn snapshot_paths(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let snap_dir = dir.join("snapshots");
    let entries = std::fs::read_dir(&snap_dir).map_err(CliError::io(&snap_dir))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("snap_") && n.ends_with(".bin")))
        .collect();
    paths.sort();
    Ok(paths)
}

fn weak_check(run: &RunData, opts: &DiagnoseOptions) -> Result<CheckOutcome, CliError> {
    let cfg = &run.cfg;
    if cfg.output.snapshot_every == 0 {
        return Err(CliError::Missing("weak residuals need periodic field snapshots; set output.snapshot_every".into()));
    }
    let paths = snapshot_paths(&run.dir)?;
    if paths.len() < 3 {
        return Err(CliError::Missing(format!("weak residuals need at least 3 snapshots, found {}", paths.len())));
    }
    let grid = cfg.grid()?;
    let spectral = Spectral::new(&grid);
    let sc = build_scenario_with(cfg, &spectral).map_err(|e| CliError::Config(e.to_string()))?;
    let solver = Solver::with_spectral(spectral, &sc, StepParams::from_config(cfg)).map_err(|e| CliError::Config(e.to_string()))?;
    let ctx = LedgerContext::new(&solver);
    let mut mass = MassProbe::new(solver.spectral(), mass_test_functions(&grid, opts.mass_test_functions));

    let mut momentum = None;
    let mut momentum_error = None;
    if grid.dim() == 2 {
        let h = grid.spacing();
        let specs = bodies_from_config(cfg);
        let neighborhoods: Vec<BodyNeighborhood> = specs
            .iter()
            .map(|b| {
                let c0 = b.center();
                let excursion = run
                    .bodies
                    .iter()
                    .filter(|s| s.id == b.id)
                    .map(|s| ((s.centroid[0] - c0[0]).powi(2) + (s.centroid[1] - c0[1]).powi(2)).sqrt())
                    .fold(0.0, f64::max);
                BodyNeighborhood {
                    id: b.id,
                    center: c0,
                    radius: b.bounding_radius() + cfg.delta() + excursion + 2.0 * h,
                    width: (4.0 * h).max(0.1 * grid.half_period()),
                }
            })
            .collect();
        let domain = domain_from_config(cfg);
        let width = velocity_cutoff_width(cfg.delta(), &grid);
        match admissible_test_fields(solver.spectral(), &neighborhoods, domain.as_ref().map(|d| (d, width)), opts.momentum_test_fields) {
            Ok(fields) => momentum = Some(MomentumProbe::new(fields)),
            Err(e) => momentum_error = Some(e.to_string()),
        }
    }
    for p in &paths {
        let (state, _) = read_snapshot(p)?;
        mass.record(&ctx, &state);
        if let Some(m) = &mut momentum {
            if let Err(e) = m.record(&ctx, &state) {
                momentum_error = Some(e.to_string());
                momentum = None;
            }
        }
    }
    let times = mass.times().to_vec();
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let basket = psi_basket(times[times.len() - 1], dt);
    let mass_res = mass.residuals(&basket).map_err(diag("weak"))?;
    let mom_res = match &momentum {
        Some(m) => Some(m.residuals(&basket).map_err(diag("weak"))?),
        None => None,
    };
    let finite = mass_res.iter().chain(mom_res.iter().flatten()).all(|r| r.raw.is_finite() && r.substituted.is_finite());
    let report = json!({
        "snapshots": paths.len(),
        "psi_count": basket.len(),
        "mass": residual_summary(&mass_res),
        "momentum": mom_res.as_deref().map(residual_summary),
        "momentum_skipped": momentum_error,
    });
    Ok(CheckOutcome { check: "weak", passed: finite, report })
}

fn korn_check(run: &RunData, opts: &DiagnoseOptions) -> Result<(CheckOutcome, f64), CliError> {
    let cfg = &run.cfg;
    let grid = TorusGrid::new(cfg.grid.dim, cfg.grid.half_period, opts.korn_cells).map_err(|e| CliError::Config(e.to_string()))?;
    let spectral = Spectral::new(&grid);
    let domain = domain_from_config(cfg);
    let chi = match &domain {
        Some(d) => Some(build_chi(Some(d), &grid, cfg.chi_width(), cfg.penalty.chi_profile).map_err(|e| CliError::Config(e.to_string()))?),
        None => None,
    };
    let kp = estimate_korn_poincare(&spectral, chi.as_ref(), &KornPoincareOptions::default()).map_err(diag("korn"))?;
    let k = std::f64::consts::PI / grid.half_period();
    let report = json!({
        "cells": opts.korn_cells,
        "value": kp.value,
        "iterations": kp.iterations,
        "inner_iterations": kp.inner_iterations,
        "residual": kp.residual,
        "free_torus_value": 0.5 * k * k,
        "eps_kp": KornPoincareOptions::default().eps_kp,
    });
    Ok((CheckOutcome { check: "korn", passed: kp.value.is_finite() && kp.value > 0.0, report }, kp.value))
}

/// Run the selected checks on the outputs in `dir`, writing one JSON report per check
/// and `summary.json` into `dir/diagnostics`.
pub fn cmd_diagnose(dir: &Path, checks: &[Check], opts: &DiagnoseOptions) -> Result<Vec<CheckOutcome>, CliError> {
    let cfg = load_config_file(&dir.join("config.toml"))?;
    let ledger = read_energy(&dir.join("energy.csv"))?;
    let bodies = read_bodies(&dir.join("bodies.csv"))?;
    let run = RunData { dir: dir.to_owned(), cfg, ledger, bodies };
    let out_dir = dir.join("diagnostics");
    std::fs::create_dir_all(&out_dir).map_err(CliError::io(&out_dir))?;

    let mut outcomes = Vec::new();
    let mut c_kp = None;
    // the constant feeds the decay reference rate, so it is computed first
    if checks.contains(&Check::Korn) {
        let (o, v) = korn_check(&run, opts)?;
        c_kp = Some(v);
        outcomes.push(o);
    }
    for &c in checks {
        let o = match c {
            Check::Energy => energy_check(&run, opts)?,
            Check::Decay => decay_check(&run, opts, c_kp)?,
            Check::Gravity => gravity_check(&run, opts)?,
            Check::Weak => weak_check(&run, opts)?,
            Check::Korn => continue,
        };
        outcomes.push(o);
    }
    for o in &outcomes {
        let path = out_dir.join(format!("{}.json", o.check));
        std::fs::write(&path, serde_json::to_string_pretty(&o.report).expect("report serializes")).map_err(CliError::io(&path))?;
    }
    let summary: Vec<Value> = outcomes.iter().map(|o| json!({ "check": o.check, "passed": o.passed })).collect();
    let path = out_dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes")).map_err(CliError::io(&path))?;
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_names_parse() {
        for c in Check::ALL {
            assert_eq!(c.name().parse::<Check>().unwrap(), c);
        }
        assert!("energies".parse::<Check>().is_err());
    }
}
