//! CSV tables written by a run: `energy.csv`, `bodies.csv`, `events.csv`.
//!
//! Floats are written in shortest round-trip scientific notation, so a table read back
//! reproduces the values exactly. Optional entries are left empty.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use pfsi_core::diagnostics::{EnergyLedger, LedgerRow};
use pfsi_core::rigidbody::RigidState;

use crate::error::CliError;

pub const ENERGY_COLUMNS: [&str; 14] = [
    "time",
    "KE",
    "DISS",
    "PEN",
    "WORK",
    "EGRAV",
    "leakage",
    "step",
    "work_mollified",
    "rho_G",
    "mass",
    "min_mu",
    "min_mu_bar",
    "max_divergence",
];

pub const BODY_COLUMNS: [&str; 16] = [
    "time",
    "id",
    "members",
    "x",
    "y",
    "z",
    "vx",
    "vy",
    "vz",
    "wx",
    "wy",
    "wz",
    "angle",
    "mass",
    "fit_residual",
    "rigidity_deficit",
];

pub const EVENT_COLUMNS: [&str; 6] = ["time", "kind", "first", "second", "gap", "result"];

pub fn fmt(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Row writer that keeps the path for error messages.
pub struct Table {
    path: PathBuf,
    w: csv::Writer<BufWriter<File>>,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, CliError> {
        let file = File::create(path).map_err(CliError::io(path))?;
        let mut t = Self { path: path.to_owned(), w: csv::Writer::from_writer(BufWriter::new(file)) };
        t.write(header.iter().map(|s| s.to_string()))?;
        Ok(t)
    }

    pub fn write(&mut self, fields: impl IntoIterator<Item = String>) -> Result<(), CliError> {
        let path = &self.path;
        self.w.write_record(fields.into_iter()).map_err(|e| CliError::Io { path: path.clone(), source: e.into() })
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        self.w.flush().map_err(CliError::io(&self.path))
    }
}

pub fn energy_record(r: &LedgerRow) -> Vec<String> {
    vec![
        fmt(r.t),
        fmt(r.ke),
        fmt(r.diss),
        fmt(r.pen),
        fmt(r.work),
        fmt_opt(r.egrav),
        fmt(r.leakage),
        r.step.to_string(),
        fmt(r.work_mollified),
        fmt_opt(r.rho_g),
        fmt(r.mass),
        fmt(r.min_mu),
        fmt(r.min_mu_bar),
        fmt(r.max_divergence),
    ]
}

pub fn body_record(b: &RigidState, members: &[u32], rigidity: Option<f64>) -> Vec<String> {
    let members = members.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("+");
    let mut rec = vec![fmt(b.t), b.id.to_string(), members];
    rec.extend(b.centroid.iter().chain(&b.velocity).chain(&b.omega).map(|v| fmt(*v)));
    rec.extend([fmt(b.angle()), fmt(b.mass), fmt(b.residual), fmt_opt(rigidity)]);
    rec
}

fn reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = rdr.headers().map_err(|e| table_error(path, 1, e.to_string()))?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(table_error(path, 1, format!("header {got:?} does not start with {expected:?}")));
    }
    Ok(rdr)
}

fn table_error(path: &Path, row: usize, message: String) -> CliError {
    CliError::Table { path: path.to_owned(), row, message }
}

fn parse_f64(path: &Path, row: usize, col: &str, s: &str) -> Result<f64, CliError> {
    let v: f64 = s.trim().parse().map_err(|_| table_error(path, row, format!("column `{col}`: cannot parse {s:?}")))?;
    if !v.is_finite() {
        return Err(table_error(path, row, format!("column `{col}`: non-finite value {s:?}")));
    }
    Ok(v)
}

fn parse_opt(path: &Path, row: usize, col: &str, s: &str) -> Result<Option<f64>, CliError> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(path, row, col, s).map(Some)
    }
}

/// Read `energy.csv`. Rows are numbered from 1 at the header; errors name the row.
pub fn read_energy(path: &Path) -> Result<EnergyLedger, CliError> {
    let mut rdr = reader(path, &ENERGY_COLUMNS)?;
    let mut ledger = EnergyLedger::default();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| table_error(path, row, e.to_string()))?;
        if rec.len() < ENERGY_COLUMNS.len() {
            return Err(table_error(path, row, format!("{} fields, expected {}", rec.len(), ENERGY_COLUMNS.len())));
        }
        let f = |i: usize| parse_f64(path, row, ENERGY_COLUMNS[i], &rec[i]);
        let o = |i: usize| parse_opt(path, row, ENERGY_COLUMNS[i], &rec[i]);
        let step = rec[7].trim().parse().map_err(|_| table_error(path, row, format!("column `step`: cannot parse {:?}", &rec[7])))?;
        ledger.push(LedgerRow {
            t: f(0)?,
            ke: f(1)?,
            diss: f(2)?,
            pen: f(3)?,
            work: f(4)?,
            egrav: o(5)?,
            leakage: f(6)?,
            step,
            work_mollified: f(8)?,
            rho_g: o(9)?,
            mass: f(10)?,
            min_mu: f(11)?,
            min_mu_bar: f(12)?,
            max_divergence: f(13)?,
            rigidity: Vec::new(),
        });
    }
    Ok(ledger)
}

/// One row of `bodies.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct BodySample {
    pub t: f64,
    pub id: u32,
    pub members: Vec<u32>,
    pub centroid: [f64; 3],
    pub velocity: [f64; 3],
    pub omega: [f64; 3],
    pub angle: f64,
    pub mass: f64,
    pub fit_residual: f64,
    pub rigidity_deficit: Option<f64>,
}

pub fn read_bodies(path: &Path) -> Result<Vec<BodySample>, CliError> {
    let mut rdr = reader(path, &BODY_COLUMNS)?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| table_error(path, row, e.to_string()))?;
        if rec.len() < BODY_COLUMNS.len() {
            return Err(table_error(path, row, format!("{} fields, expected {}", rec.len(), BODY_COLUMNS.len())));
        }
        let f = |i: usize| parse_f64(path, row, BODY_COLUMNS[i], &rec[i]);
        let id_err = |c: &str| table_error(path, row, format!("column `{c}`: cannot parse an id"));
        let id = rec[1].trim().parse().map_err(|_| id_err("id"))?;
        let members = rec[2].split('+').map(|m| m.trim().parse().map_err(|_| id_err("members"))).collect::<Result<_, _>>()?;
        out.push(BodySample {
            t: f(0)?,
            id,
            members,
            centroid: [f(3)?, f(4)?, f(5)?],
            velocity: [f(6)?, f(7)?, f(8)?],
            omega: [f(9)?, f(10)?, f(11)?],
            angle: f(12)?,
            mass: f(13)?,
            fit_residual: f(14)?,
            rigidity_deficit: parse_opt(path, row, BODY_COLUMNS[15], &rec[15])?,
        });
    }
    Ok(out)
}
