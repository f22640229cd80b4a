use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pfsi_cli::snapshot::decode_meta;
use pfsi_cli::{cmd_diagnose, cmd_run, cmd_sweep, load_config_file, load_plan, Check, CliError, DiagnoseOptions, RunOptions};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "pfsi", version, about = "Rigid bodies in a viscous fluid by high-viscosity penalization")]
struct Cli {
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true, env = "PFSI_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write its tables, snapshots and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, env = "PFSI_OUT")]
        out: PathBuf,
        /// Seed for randomized initial data; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a snapshot.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop at this time instead of the configured horizon.
        #[arg(long)]
        stop_at: Option<f64>,
    },
    /// Run every combination of a sweep plan.
    Sweep {
        #[arg(long, alias = "plan")]
        config: PathBuf,
        #[arg(long, env = "PFSI_OUT")]
        out: PathBuf,
    },
    /// Post-process a run directory.
    Diagnose {
        /// Run directory.
        #[arg(long, env = "PFSI_OUT")]
        out: PathBuf,
        /// Comma-separated subset of energy, decay, gravity, weak, korn.
        #[arg(long, value_delimiter = ',', default_value = "energy,decay")]
        checks: Vec<Check>,
        #[arg(long, default_value_t = 1.0)]
        energy_constant: f64,
        #[arg(long, default_value_t = 32)]
        korn_cells: usize,
    },
    /// Print the header and metadata of a snapshot after verifying its checksum.
    SnapshotInfo { path: PathBuf },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed, resume, stop_at } => {
            let cfg = load_config_file(&config)?;
            let m = cmd_run(&cfg, &out, &RunOptions { seed, resume, stop_at, threads: cli.threads })?;
            println!("t = {} after {} steps ({:.1} s), outputs in {}", m.final_time, m.steps, m.wall_clock_seconds, out.display());
        }
        Command::Sweep { config, out } => {
            let (plan, base) = load_plan(&config)?;
            let s = cmd_sweep(&plan, &base, &out, cli.threads)?;
            for r in &s.rows {
                println!("{} epsilon={:e} cells={} {}", r.run, r.epsilon, r.cells, r.status);
            }
            for g in &s.slopes {
                println!("leakage slope (delta={:e}, cells={}): {:.3}", g.delta, g.cells, g.slope);
            }
        }
        Command::Diagnose { out, checks, energy_constant, korn_cells } => {
            let opts = DiagnoseOptions { energy_constant, korn_cells, ..DiagnoseOptions::default() };
            for o in cmd_diagnose(&out, &checks, &opts)? {
                println!("{:8} {}", o.check, if o.passed { "pass" } else { "FAIL" });
            }
        }
        Command::SnapshotInfo { path } => {
            let bytes = std::fs::read(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            let (meta, _) = decode_meta(&bytes).map_err(|source| CliError::Snapshot { path: path.clone(), source })?;
            println!("format version {}", pfsi_cli::snapshot::VERSION);
            println!("grid {}D, {} cells per axis, half period {}", meta.dim, meta.cells, meta.half_period);
            println!("t = {} (step {})", meta.t, meta.step);
            for f in &meta.fields {
                println!("  {:12} {} values", f.name, f.len);
            }
            for m in &meta.markers {
                println!("  body {} (members {:?})", m.id, m.members);
            }
            println!("checksum ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Numerical { snapshot: Some(p), .. } = &e {
                eprintln!("last valid state saved to {}", p.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
