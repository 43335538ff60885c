//! Properties of the modulated evolution on short runs.

use cgl_lab::sim::reconstruct::w_field;
use cgl_lab::sim::stepper::FrozenCache;
use cgl_lab::sim::*;
use cgl_lab::C64;

fn short(s_end: f64) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.s_end = s_end;
    cfg
}

#[test]
fn trace_is_monotone_and_theta_continuous() {
    let sim = Simulation::new(short(58.0)).unwrap();
    let out = sim.run().unwrap();
    assert_eq!(out.exit, ExitReason::Completed);
    assert!(out.trace.is_monotone());
    let th = out.trace.column(|r| r.theta);
    assert!(th.windows(2).all(|w| (w[1] - w[0]).abs() < 0.1), "theta jumps");
    assert!(out.trace.rows.iter().all(|r| r.phat0.abs() <= 1e-8));
}

#[test]
fn rotation_frequency_does_not_change_w() {
    let mut a = short(54.0);
    a.control.mode = ControlMode::Free;
    let mut b = a.clone();
    b.stepper.rotate_every = 1;
    let ra = Simulation::new(a.clone()).unwrap().run().unwrap();
    let sim = Simulation::new(b).unwrap();
    let rb = sim.run().unwrap();
    let wa = w_field(&sim.prof, &sim.grid, &ra.final_state.q, ra.final_state.theta, ra.s_final);
    let wb = w_field(&sim.prof, &sim.grid, &rb.final_state.q, rb.final_state.theta, rb.s_final);
    let err = sim
        .grid
        .nodes
        .iter()
        .zip(wa.iter().zip(&wb))
        .filter(|(y, _)| y.abs() <= 30.0)
        .map(|(_, (x, y))| (x - y).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-9, "{err:e}");
}

#[test]
fn constant_solution_keeps_its_modulus() {
    let mut cfg = short(55.0);
    cfg.control.mode = ControlMode::Free;
    cfg.stop_on_exit = false;
    let sim = Simulation::new(cfg.clone()).unwrap();
    let kappa = sim.prof.c.kappa;
    let rot = C64::new(0.0, -sim.prof.c.mu * cfg.s0.ln()).exp();
    let q: Vec<C64> = sim.grid.nodes.iter().map(|&y| rot * kappa - sim.prof.phi(y, cfg.s0)).collect();
    let mut st = SimState { q, theta: 0.0, n: 0 };
    sim.enforce_constraint(&mut st, &mut FrozenCache::new()).unwrap();
    let out = sim.run_with(st, &mut |_, _, _| Ok(())).unwrap();
    let w = w_field(&sim.prof, &sim.grid, &out.final_state.q, out.final_state.theta, out.s_final);
    let drift = sim
        .grid
        .nodes
        .iter()
        .zip(&w)
        .filter(|(y, _)| y.abs() <= 30.0)
        .map(|(_, v)| (v.norm() - kappa).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-6 * (out.s_final - cfg.s0), "{drift:e}");
}

#[test]
fn free_run_leaves_through_an_unstable_face() {
    for (d0, sign) in [(3.0, 1.0), (-3.0, -1.0)] {
        let mut cfg = short(80.0);
        cfg.control.mode = ControlMode::Free;
        cfg.d0 = d0;
        let out = Simulation::new(cfg).unwrap().run().unwrap();
        assert_eq!(out.exit, ExitReason::ShrinkingExit, "d0={d0}");
        assert!(out.exit_detail.contains("tilde_0"), "{}", out.exit_detail);
        let last = out.trace.rows.last().unwrap();
        assert!(sign * last.tilde[0] > 0.0 && sign * last.dtilde[0] > 0.0, "d0={d0}");
    }
}

#[test]
fn escape_is_reported_not_raised() {
    let mut cfg = short(120.0);
    cfg.control.mode = ControlMode::Free;
    cfg.stop_on_exit = false;
    cfg.d0 = 3.0;
    let out = Simulation::new(cfg).unwrap().run().unwrap();
    assert_eq!(out.exit, ExitReason::Escape);
    assert!(out.s_final < 120.0);
}
