//! `run`: scenario build, time loop, tables, snapshots and manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pfsi_core::config::ContactPolicy;
use pfsi_core::diagnostics::{LedgerContext, LedgerRow};
use pfsi_core::rigidbody::{detect_contacts, fit_rigid_motion, merge_bodies, ContactPair};
use pfsi_core::scenario::{build_scenario_with, Scenario};
use pfsi_core::solver::{FluidState, Solver, StepParams};
use pfsi_core::{Config, Spectral};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::snapshot::{read_snapshot, write_snapshot};
use crate::tables::{body_record, energy_record, fmt, Table, BODY_COLUMNS, ENERGY_COLUMNS, EVENT_COLUMNS};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the configured seed.
    pub seed: Option<u64>,
    /// Continue from this snapshot instead of the initial data.
    pub resume: Option<PathBuf>,
    /// Stop here instead of at the configured horizon.
    pub stop_at: Option<f64>,
    /// Recorded in the manifest.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    Contact,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyMass {
    pub id: u32,
    pub density: f64,
    pub volume: f64,
    /// `∫ a ρ` of the initial marker and density.
    pub initial_mass: f64,
    /// `|∫ a ρ - ρ_S |S|| / (ρ_S |S|)`.
    pub mass_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub dim: usize,
    pub half_period: f64,
    pub cells: usize,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub config: String,
    pub grid: GridInfo,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub threads: Option<usize>,
    pub resumed_from: Option<String>,
    pub start_time: f64,
    pub final_time: f64,
    pub steps: u64,
    pub wall_clock_seconds: f64,
    pub termination: Termination,
    pub message: Option<String>,
    pub bodies: Vec<BodyMass>,
    pub warnings: Vec<String>,
    pub files: Vec<OutputFile>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Table { path, row: e.line(), message: e.to_string() })
    }
}

fn body_masses(sc: &Scenario) -> Vec<BodyMass> {
    let cell = sc.grid.cell_volume();
    sc.bodies
        .iter()
        .zip(&sc.markers)
        .map(|(b, m)| {
            let initial_mass = m.data.iter().zip(&sc.rho0.data).map(|(a, r)| a * r).sum::<f64>() * cell;
            let exact = b.density * b.volume();
            BodyMass { id: b.id, density: b.density, volume: b.volume(), initial_mass, mass_error: ((initial_mass - exact) / exact).abs() }
        })
        .collect()
}

pub fn file_digest(path: &Path) -> Result<(u64, String), CliError> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

struct Outputs {
    dir: PathBuf,
    energy: Table,
    bodies: Table,
    events: Table,
    written: BTreeSet<String>,
}

impl Outputs {
    fn snapshot(&mut self, name: &str, state: &FluidState, config: &str) -> Result<PathBuf, CliError> {
        let rel = format!("snapshots/{name}");
        let path = self.dir.join(&rel);
        write_snapshot(&path, state, Some(config))?;
        self.written.insert(rel);
        Ok(path)
    }

    fn sample(&mut self, row: &LedgerRow, state: &FluidState) -> Result<(), CliError> {
        self.energy.write(energy_record(row))?;
        for m in &state.markers {
            // a vanished or degenerate marker has no rigid fit; skip the row
            let Ok(fit) = fit_rigid_motion(state, m.id) else {
                log::warn!("t = {:.6}: no rigid fit for body {}", state.t, m.id);
                continue;
            };
            let rigidity = row.rigidity.iter().find(|(id, _)| *id == m.id).map(|(_, v)| *v);
            self.bodies.write(body_record(&fit, &m.members, rigidity))?;
        }
        Ok(())
    }

    fn event(&mut self, t: f64, kind: &str, first: u32, second: Option<u32>, gap: f64, result: Option<u32>) -> Result<(), CliError> {
        let opt = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
        self.events.write([fmt(t), kind.to_string(), first.to_string(), opt(second), fmt(gap), opt(result)])
    }

    fn flush(&mut self) -> Result<(), CliError> {
        self.energy.flush()?;
        self.bodies.flush()?;
        self.events.flush()
    }

    fn inventory(&self) -> Result<Vec<OutputFile>, CliError> {
        self.written
            .iter()
            .map(|rel| {
                let (bytes, sha256) = file_digest(&self.dir.join(rel))?;
                Ok(OutputFile { path: rel.clone(), bytes, sha256 })
            })
            .collect()
    }
}

/// Build the scenario for `cfg`, integrate to the horizon and write all outputs into
/// `out`. On a numerical failure the last valid state is saved as
/// `snapshots/last_valid.bin`, the manifest records the error, and
/// [`CliError::Numerical`] is returned.
pub fn cmd_run(cfg: &Config, out: &Path, opts: &RunOptions) -> Result<RunManifest, CliError> {
    let clock = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let grid = cfg.grid()?;
    let spectral = Spectral::new(&grid);
    let sc = build_scenario_with(&cfg, &spectral).map_err(|e| CliError::Config(e.to_string()))?;
    let solver = Solver::with_spectral(spectral, &sc, StepParams::from_config(&cfg)).map_err(|e| CliError::Config(e.to_string()))?;
    let echo = cfg.to_toml_string();

    let mut state = match &opts.resume {
        Some(path) => {
            let (state, meta) = read_snapshot(path)?;
            if meta.dim != grid.dim() || meta.cells != grid.n() || meta.half_period != grid.half_period() {
                return Err(CliError::Config(format!("snapshot {} does not match the configured grid", path.display())));
            }
            state
        }
        None => FluidState::from_scenario(&sc),
    };
    let start_time = state.t;
    let horizon = opts.stop_at.unwrap_or(cfg.time.horizon);

    std::fs::create_dir_all(out.join("snapshots")).map_err(CliError::io(out))?;
    std::fs::write(out.join("config.toml"), &echo).map_err(CliError::io(out.join("config.toml")))?;
    let mut io = Outputs {
        dir: out.to_owned(),
        energy: Table::create(&out.join("energy.csv"), &ENERGY_COLUMNS)?,
        bodies: Table::create(&out.join("bodies.csv"), &BODY_COLUMNS)?,
        events: Table::create(&out.join("events.csv"), &EVENT_COLUMNS)?,
        written: ["config.toml", "energy.csv", "bodies.csv", "events.csv"].iter().map(|s| s.to_string()).collect(),
    };

    let ctx = LedgerContext::new(&solver);
    let sample_every = cfg.output.sample_every as u64;
    let snapshot_every = cfg.output.snapshot_every as u64;
    let threshold = cfg.contact_threshold();
    let chi = sc.penalty.chi.data.iter().any(|&c| c > 0.0).then_some(&sc.penalty.chi);
    let mut in_contact: BTreeSet<(u32, Option<u32>)> = BTreeSet::new();
    let mut termination = Termination::Horizon;
    let mut message = None;
    let mut failure = None;

    let mut first = true;
    loop {
        if first || state.step % sample_every == 0 {
            let row = ctx.measure(&state);
            if !row.is_finite() {
                failure = Some(format!("non-finite ledger entry at t = {:.6}", state.t));
                break;
            }
            io.sample(&row, &state)?;
        }
        if snapshot_every > 0 && state.step % snapshot_every == 0 {
            io.snapshot(&format!("snap_{:08}.bin", state.step), &state, &echo)?;
        }
        first = false;

        if !state.markers.is_empty() {
            let events = detect_contacts(&state, chi, threshold);
            let mut now = BTreeSet::new();
            let mut halt = false;
            for ev in &events {
                let key = match ev.pair {
                    ContactPair::Bodies(i, j) => (i, Some(j)),
                    ContactPair::Wall(i) => (i, None),
                };
                now.insert(key);
                if in_contact.contains(&key) {
                    continue;
                }
                let kind = if key.1.is_some() { "contact" } else { "wall_contact" };
                io.event(state.t, kind, key.0, key.1, ev.gap, None)?;
                match (cfg.contact.policy, key.1) {
                    (ContactPolicy::Halt, _) => halt = true,
                    (ContactPolicy::Merge, Some(j)) if state.marker(key.0).is_some() && state.marker(j).is_some() => {
                        match merge_bodies(&mut state, key.0, j, threshold) {
                            Ok(id) => io.event(state.t, "merge", key.0, Some(j), ev.gap, Some(id))?,
                            Err(e) => log::warn!("merge refused: {e}"),
                        }
                    }
                    _ => {}
                }
            }
            in_contact = now;
            if halt {
                termination = Termination::Contact;
                message = Some(format!("contact at t = {:.6}", state.t));
                io.event(state.t, "halt", 0, None, 0.0, None)?;
                break;
            }
        }

        let remaining = horizon - state.t;
        let dt = solver.stable_dt(&state);
        if remaining <= 1e-6 * dt {
            break;
        }
        // a remainder within round-off of a full step is taken as the full step, so a
        // stop and resume reproduces the uninterrupted sequence of steps
        let step = if remaining < dt * (1.0 - 1e-9) { remaining } else { dt };
        if let Err(e) = solver.step_dt(&mut state, step) {
            failure = Some(e.to_string());
            break;
        }
    }

    let snapshot = if let Some(msg) = &failure {
        termination = Termination::Error;
        message = Some(msg.clone());
        log::error!("numerical abort: {msg}");
        Some(io.snapshot("last_valid.bin", &state, &echo)?)
    } else {
        io.snapshot("final.bin", &state, &echo)?;
        None
    };
    io.flush()?;

    let manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: echo,
        grid: GridInfo { dim: grid.dim(), half_period: grid.half_period(), cells: grid.n(), spacing: grid.spacing() },
        epsilon: cfg.penalty.epsilon,
        delta: cfg.delta(),
        seed: cfg.seed,
        threads: opts.threads,
        resumed_from: opts.resume.as_ref().map(|p| p.display().to_string()),
        start_time,
        final_time: state.t,
        steps: state.step,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        termination,
        message,
        bodies: body_masses(&sc),
        warnings: sc.warnings.clone(),
        files: io.inventory()?,
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(CliError::io(&path))?;

    match failure {
        Some(message) => Err(CliError::Numerical { message, snapshot }),
        None => Ok(manifest),
    }
}

/// Read and validate a configuration file. Every failure is a [`CliError::Config`].
pub fn load_config_file(path: &Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    pfsi_core::load_config(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
