use std::path::Path;
use std::process::{Command, Output};

use pfsi_cli::tables::{read_bodies, read_energy};
use pfsi_cli::{read_snapshot, RunManifest, Termination};

fn pfsi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfsi")).args(args).env_remove("PFSI_OUT").env_remove("PFSI_THREADS").output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const DISK: &str = r#"
[grid]
half_period = 1.0
cells = 32

[[bodies]]
id = 1
density = 2.0
center = [0.0, 0.0]
shape = { kind = "disk", radius = 0.3 }

[time]
horizon = 0.01
dt = 2e-3

[output]
snapshot_every = 2
"#;

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = pfsi(&["run", "--config", "does/not/exist.toml", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("exist.toml"));
}

#[test]
fn unknown_key_exits_with_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &DISK.replace("[time]", "[time]\nsteps = 4"));
    let out = dir.path().join("out");
    let o = pfsi(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("steps"), "{}", stderr(&o));
}

#[test]
fn cfl_violation_exits_with_3_and_keeps_the_last_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "fast.toml",
        "[grid]\nhalf_period = 1.0\ncells = 16\n\n[fluid]\nvelocity = { kind = \"taylor_green\", amplitude = 50.0 }\n\n\
         [time]\nhorizon = 1.0\ndt = 0.05\n",
    );
    let out = dir.path().join("out");
    let o = pfsi(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(out.join("snapshots/last_valid.bin").exists());
    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.termination, Termination::Error);
    assert!(m.message.unwrap().contains("CFL"));
}

#[test]
fn run_writes_every_output_and_diagnose_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "disk.toml", DISK);
    let out = dir.path().join("out");
    let o = pfsi(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let ledger = read_energy(&out.join("energy.csv")).unwrap();
    assert_eq!(ledger.len(), 6);
    // a body at rest in a fluid at rest stays at rest
    assert!(ledger.rows.iter().all(|r| r.ke < 1e-20 && r.min_mu >= 1.0 - 1e-12));
    let bodies = read_bodies(&out.join("bodies.csv")).unwrap();
    assert_eq!(bodies.len(), 6);
    assert!(bodies.iter().all(|b| b.id == 1 && b.members == [1]));

    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.steps, 5);
    assert_eq!(m.termination, Termination::Horizon);
    for f in &m.files {
        assert!(out.join(&f.path).exists(), "{}", f.path);
    }
    let (state, meta) = read_snapshot(&out.join("snapshots/final.bin")).unwrap();
    assert_eq!((meta.cells, state.step), (32, 5));

    let o = pfsi(&["diagnose", "--out", out.to_str().unwrap(), "--checks", "energy,weak"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("diagnostics/summary.json").exists());

    let o = pfsi(&["snapshot-info", out.join("snapshots/final.bin").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("checksum ok"));
}

#[test]
fn corrupted_table_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "disk.toml", DISK);
    let out = dir.path().join("out");
    assert!(pfsi(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let path = out.join("energy.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    lines[3] = lines[3].replacen(',', ",x", 1);
    std::fs::write(&path, lines.join("\n")).unwrap();
    let o = pfsi(&["diagnose", "--out", out.to_str().unwrap(), "--checks", "energy"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 4"), "{}", stderr(&o));
}

#[test]
fn corrupted_snapshot_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "disk.toml", DISK);
    let out = dir.path().join("out");
    assert!(pfsi(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let snap = out.join("snapshots/final.bin");
    let mut bytes = std::fs::read(&snap).unwrap();
    let k = bytes.len() / 2;
    bytes[k] ^= 0x10;
    std::fs::write(&snap, bytes).unwrap();
    let o = pfsi(&["snapshot-info", snap.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));

    let resumed = dir.path().join("resumed");
    let o = pfsi(&["run", "--config", &cfg, "--out", resumed.to_str().unwrap(), "--resume", snap.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn single_point_sweep() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "base.toml", DISK);
    let plan = write(dir.path(), "plan.toml", "base = \"base.toml\"\n\n[axes]\nepsilon = [1e-2]\n");
    let out = dir.path().join("sweep");
    let o = pfsi(&["--threads", "1", "sweep", "--config", &plan, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().contains("ok"));
    assert!(out.join("run_000/manifest.json").exists());
}

#[test]
fn empty_sweep_axes_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "base.toml", DISK);
    let plan = write(dir.path(), "plan.toml", "base = \"base.toml\"\n\n[axes]\nepsilon = []\n");
    let out = dir.path().join("sweep");
    let o = pfsi(&["sweep", "--config", &plan, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
