//! `sweep`: independent runs over penalty, layer width and resolution.

use std::path::{Path, PathBuf};

use pfsi_core::diagnostics::fit_decay;
use pfsi_core::Config;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::run::{cmd_run, RunManifest, RunOptions};
use crate::tables::{fmt, read_bodies, read_energy, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub epsilon: Option<Vec<f64>>,
    #[serde(default)]
    pub delta: Option<Vec<f64>>,
    #[serde(default)]
    pub cells: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    /// Base configuration file, relative to the plan file.
    pub base: PathBuf,
    pub axes: SweepAxes,
    /// Time at which the rigidity deficit is compared; the last sample by default.
    #[serde(default)]
    pub rigidity_time: Option<f64>,
    /// Window of the kinetic-energy decay fit; the second half of the run by default.
    #[serde(default)]
    pub decay_window: Option<[f64; 2]>,
}

/// One point of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub delta: Option<f64>,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: String,
    pub epsilon: f64,
    pub delta: f64,
    pub cells: usize,
    pub status: String,
    /// `∫₀^T ∫_{outside} |u|² dt`.
    pub leakage_integral: Option<f64>,
    /// `Σ_i ∫ a_i |Du|²` at the comparison time.
    pub rigidity_deficit: Option<f64>,
    pub min_mu: Option<f64>,
    pub min_mu_bar: Option<f64>,
    pub body_mass_error: Option<f64>,
    pub decay_rate: Option<f64>,
    pub decay_relative_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageSlope {
    pub delta: f64,
    pub cells: usize,
    pub points: usize,
    /// Least-squares slope of `log leakage` against `log ε`.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub slopes: Vec<LeakageSlope>,
}

/// Base config and the configs of every combination, in plan order (ε fastest).
pub fn expand_plan(plan: &SweepPlan, base_text: &str) -> Result<Vec<(SweepPoint, Config)>, CliError> {
    let raw: Config = toml::from_str(base_text).map_err(|e| CliError::Config(format!("base config: {e}")))?;
    let axes = &plan.axes;
    for (name, empty) in [
        ("epsilon", axes.epsilon.as_ref().is_some_and(Vec::is_empty)),
        ("delta", axes.delta.as_ref().is_some_and(Vec::is_empty)),
        ("cells", axes.cells.as_ref().is_some_and(Vec::is_empty)),
    ] {
        if empty {
            return Err(CliError::Config(format!("sweep axis `{name}` is empty")));
        }
    }
    if axes.epsilon.is_none() && axes.delta.is_none() && axes.cells.is_none() {
        return Err(CliError::Config("sweep plan has no axes".into()));
    }
    let eps = axes.epsilon.clone().unwrap_or(vec![raw.penalty.epsilon]);
    let deltas: Vec<Option<f64>> = axes.delta.as_ref().map_or(vec![raw.penalty.delta], |v| v.iter().map(|d| Some(*d)).collect());
    let cells = axes.cells.clone().unwrap_or(vec![raw.grid.cells]);
    let mut out = Vec::new();
    for &n in &cells {
        for &delta in &deltas {
            for &e in &eps {
                let mut cfg = raw.clone();
                cfg.grid.cells = n;
                cfg.penalty.epsilon = e;
                cfg.penalty.delta = delta;
                if axes.cells.is_some() {
                    // grid-dependent defaults follow the resolution
                    cfg.penalty.chi_width = raw.penalty.chi_width;
                    cfg.contact.threshold = raw.contact.threshold;
                }
                cfg.fill_defaults()?;
                cfg.validate()?;
                out.push((SweepPoint { epsilon: e, delta, cells: n }, cfg));
            }
        }
    }
    Ok(out)
}

pub fn load_plan(path: &Path) -> Result<(SweepPlan, String), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let plan: SweepPlan = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(".")).join(&plan.base);
    let base_text = std::fs::read_to_string(&base).map_err(|e| CliError::Config(format!("{}: {e}", base.display())))?;
    Ok((plan, base_text))
}

fn summarize(plan: &SweepPlan, dir: &Path, manifest: &RunManifest) -> Result<SweepRow, CliError> {
    let ledger = read_energy(&dir.join("energy.csv"))?;
    let bodies = read_bodies(&dir.join("bodies.csv"))?;
    let rows = &ledger.rows;
    let mut leak = 0.0;
    for w in rows.windows(2) {
        leak += 0.5 * (w[1].t - w[0].t) * (w[0].leakage + w[1].leakage);
    }
    let t_rig = plan.rigidity_time.unwrap_or(manifest.final_time);
    let t_near = bodies.iter().map(|b| b.t).min_by(|a, b| (a - t_rig).abs().total_cmp(&(b - t_rig).abs()));
    let rigidity = t_near.map(|t| bodies.iter().filter(|b| b.t == t).filter_map(|b| b.rigidity_deficit).sum());
    let [t1, t2] = plan.decay_window.unwrap_or([0.5 * (manifest.start_time + manifest.final_time), manifest.final_time]);
    let series: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.ke)).collect();
    let fit = fit_decay(&series, (t1, t2), None).ok();
    Ok(SweepRow {
        run: String::new(),
        epsilon: manifest.epsilon,
        delta: manifest.delta,
        cells: manifest.grid.cells,
        status: "ok".into(),
        leakage_integral: Some(leak),
        rigidity_deficit: rigidity,
        min_mu: rows.iter().map(|r| r.min_mu).reduce(f64::min),
        min_mu_bar: rows.iter().map(|r| r.min_mu_bar).reduce(f64::min),
        body_mass_error: manifest.bodies.iter().map(|b| b.mass_error).reduce(f64::max),
        decay_rate: fit.as_ref().map(|f| f.rate),
        decay_relative_residual: fit.as_ref().map(|f| f.relative_residual),
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Run every combination of the plan under `out/run_NNN`, concurrently on `threads`
/// workers. Failed runs are recorded in `sweep.csv` and do not stop the sweep.
pub fn cmd_sweep(plan: &SweepPlan, base_text: &str, out: &Path, threads: Option<usize>) -> Result<SweepSummary, CliError> {
    let points = expand_plan(plan, base_text)?;
    std::fs::create_dir_all(out).map_err(CliError::io(out))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let results: Vec<SweepRow> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(k, (pt, cfg))| {
                let name = format!("run_{k:03}");
                let dir = out.join(&name);
                log::info!("{name}: epsilon {:e}, cells {}", pt.epsilon, pt.cells);
                let opts = RunOptions { threads: Some(1), ..RunOptions::default() };
                let row = cmd_run(cfg, &dir, &opts).and_then(|m| summarize(plan, &dir, &m));
                match row {
                    Ok(mut r) => {
                        r.run = name;
                        r
                    }
                    Err(e) => {
                        log::error!("{name} failed: {e}");
                        SweepRow {
                            run: name,
                            epsilon: pt.epsilon,
                            delta: cfg.delta(),
                            cells: pt.cells,
                            status: match e {
                                CliError::Config(_) => format!("config_error: {e}"),
                                CliError::Numerical { .. } => format!("numerical_abort: {e}"),
                                _ => format!("failed: {e}"),
                            },
                            leakage_integral: None,
                            rigidity_deficit: None,
                            min_mu: None,
                            min_mu_bar: None,
                            body_mass_error: None,
                            decay_rate: None,
                            decay_relative_residual: None,
                        }
                    }
                }
            })
            .collect()
    });

    let mut groups: Vec<(f64, usize)> = Vec::new();
    for r in &results {
        if !groups.iter().any(|g| g.0 == r.delta && g.1 == r.cells) {
            groups.push((r.delta, r.cells));
        }
    }
    let slopes = groups
        .iter()
        .filter_map(|&(delta, cells)| {
            let pts: Vec<(f64, f64)> = results
                .iter()
                .filter(|r| r.delta == delta && r.cells == cells)
                .filter_map(|r| r.leakage_integral.map(|l| (r.epsilon, l)))
                .collect();
            log_log_slope(&pts).map(|slope| LeakageSlope { delta, cells, points: pts.len(), slope })
        })
        .collect();

    let mut t = Table::create(
        &out.join("sweep.csv"),
        &[
            "run",
            "epsilon",
            "delta",
            "cells",
            "status",
            "leakage_integral",
            "rigidity_deficit",
            "min_mu",
            "min_mu_bar",
            "body_mass_error",
            "decay_rate",
            "decay_relative_residual",
        ],
    )?;
    for r in &results {
        t.write([
            r.run.clone(),
            fmt(r.epsilon),
            fmt(r.delta),
            r.cells.to_string(),
            r.status.clone(),
            opt(r.leakage_integral),
            opt(r.rigidity_deficit),
            opt(r.min_mu),
            opt(r.min_mu_bar),
            opt(r.body_mass_error),
            opt(r.decay_rate),
            opt(r.decay_relative_residual),
        ])?;
    }
    t.flush()?;
    let summary = SweepSummary { rows: results, slopes };
    let path = out.join("sweep_summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes")).map_err(CliError::io(&path))?;
    Ok(summary)
}
