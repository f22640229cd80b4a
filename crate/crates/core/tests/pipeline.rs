use pfsi_core::diagnostics::{step_defects, EnergyLedger, LedgerContext};
use pfsi_core::rigidbody::fit_rigid_motion;
use pfsi_core::scenario::build_scenario;
use pfsi_core::solver::{FluidState, Solver, StepParams};
use pfsi_core::load_config;
use proptest::prelude::*;

fn cavity(cells: usize, speed: f64) -> String {
    format!(
        r#"
[grid]
half_period = 1.0
cells = {cells}

[penalty]
epsilon = 1e-3

[domain]
shape = {{ kind = "box", half_extents = [0.7, 0.7] }}

[[bodies]]
id = 1
density = 3.0
center = [0.05, -0.1]
velocity = [{speed}, 0.0]
spin = 1.0
shape = {{ kind = "ellipse", semi_axes = [0.3, 0.2] }}

[time]
horizon = 0.02
dt = 2e-3
"#
    )
}

fn run(text: &str, steps: usize) -> (Vec<FluidState>, EnergyLedger) {
    let cfg = load_config(text).unwrap();
    let sc = build_scenario(&cfg).unwrap();
    let solver = Solver::new(&sc, StepParams::from_config(&cfg)).unwrap();
    let ctx = LedgerContext::new(&solver);
    let mut st = FluidState::from_scenario(&sc);
    let mut states = vec![st.clone()];
    let mut ledger = EnergyLedger::default();
    ledger.push(ctx.measure(&st));
    for _ in 0..steps {
        solver.step(&mut st).unwrap();
        ledger.push(ctx.measure(&st));
        states.push(st.clone());
    }
    (states, ledger)
}

#[test]
fn cavity_run_keeps_the_transport_invariants() {
    let (states, ledger) = run(&cavity(64, 0.4), 10);
    let (rho_lo, rho_hi) = (states[0].rho.min(), states[0].rho.max());
    let m0 = ledger.rows[0].mass;
    for (st, row) in states.iter().zip(&ledger.rows) {
        assert!(((row.mass - m0) / m0).abs() < 1e-10, "mass drift at t = {}", row.t);
        assert!(st.rho.min() >= rho_lo - 1e-12 && st.rho.max() <= rho_hi + 1e-12);
        assert!(row.min_mu >= 1.0 - 1e-10 && row.min_mu_bar >= 1.0 - 1e-10);
        assert!(row.max_divergence < 1e-8, "{}", row.max_divergence);
    }
    // kinetic energy only decreases without forcing
    let d = step_defects(&ledger).unwrap();
    assert!(d.defects.iter().all(|&e| e <= 1e-12), "{:?}", d.defects);
}

#[test]
fn body_stays_nearly_rigid() {
    let (states, _) = run(&cavity(64, 0.4), 5);
    let st = states.last().unwrap();
    let fit = fit_rigid_motion(st, 1).unwrap();
    let scale = fit.mass * fit.velocity.iter().map(|v| v * v).sum::<f64>();
    assert!(fit.residual < 1e-3 * scale, "rigid-fit residual {} against {scale}", fit.residual);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Unforced periodic flow of unit density loses energy at every step.
    #[test]
    fn periodic_flow_dissipates(amplitude in 0.1f64..2.0, seed in 0u64..100) {
        let text = format!(
            "seed = {seed}\n[grid]\nhalf_period = 1.0\ncells = 16\n\n[fluid]\nvelocity = {{ kind = \"random_modes\", amplitude = {amplitude} }}\n\n[time]\nhorizon = 0.01\ndt = 2e-3\n"
        );
        let (_, ledger) = run(&text, 5);
        for w in ledger.rows.windows(2) {
            prop_assert!(w[1].ke <= w[0].ke * (1.0 + 1e-12));
        }
    }
}
