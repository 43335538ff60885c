//! Evolution of the modulated self-similar equation, shrinking-set monitoring
//! and reconstruction of the physical blow-up.

pub mod config;
pub mod control;
pub mod reconstruct;
pub mod stepper;
pub mod trace;

pub use config::{ControlMode, Scheme, SimConfig};
pub use trace::{SimTrace, TraceRow};

use crate::decomp::{decompose, initial_data, mode_bound, shrinking_check};
use crate::fit::{envelope_slope, SlopeFit};
use crate::hermite::{ComplexField, Grid};
use crate::io::Check;
use crate::params::Profile;
use crate::{LabError, Result, C64};
use control::{add_correction, direction, newton_step, ControlStats, ModeRows};
use nalgebra::Matrix2;
use rayon::prelude::*;
use reconstruct::{reconstruct_u, w_field, FinalProfilePoint, PointHistory};
use serde::Serialize;
use std::sync::Arc;
use stepper::{phat0, FrozenCache, Stepper};

#[derive(Debug, Clone)]
pub struct SimState {
    pub q: Vec<C64>,
    pub theta: f64,
    pub n: usize,
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    Completed,
    ShrinkingExit,
    Escape,
    ModulationDegenerate,
    ControlFailed,
}

/// Early stop inside an integration.
#[derive(Debug)]
enum Halt {
    Exit(Vec<String>),
    Escape(f64),
    Degenerate(String),
    Control(String),
    Lab(LabError),
}

impl From<LabError> for Halt {
    fn from(e: LabError) -> Self {
        match e {
            LabError::Degenerate(m) => Halt::Degenerate(m),
            other => Halt::Lab(other),
        }
    }
}

type Flow<T> = std::result::Result<T, Halt>;

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: SimTrace,
    pub exit: ExitReason,
    pub exit_detail: String,
    pub s_final: f64,
    pub control: ControlStats,
    pub final_state: SimState,
}

pub struct Simulation {
    pub cfg: SimConfig,
    pub prof: Profile,
    pub grid: Arc<Grid>,
    pub stepper: Stepper,
    pub k: f64,
    pub m: usize,
    pub n_end: usize,
    modes: ModeRows,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let prof = cfg.profile()?;
        let grid = Arc::new(Grid::uniform(cfg.grid.y_max, cfg.grid.dy)?);
        let stepper = Stepper::new(prof, grid.clone(), cfg.s0, cfg.stepper.ds, cfg.stepper.scheme)?;
        let k = cfg.k_value(&prof);
        let m = cfg.m_value(&prof);
        let n_end = ((cfg.s_end - cfg.s0) / cfg.stepper.ds).round() as usize;
        let modes = ModeRows::new(&grid);
        Ok(Self { cfg, prof, grid, stepper, k, m, n_end, modes })
    }

    pub fn s_at(&self, n: usize) -> f64 {
        self.stepper.s_at(n)
    }

    /// Constructed initial data with θ(s₀) = 0 and P̂₀(q) = 0.
    pub fn initial_state(&self) -> Result<SimState> {
        let c = &self.cfg;
        let (psi, _) = initial_data(&self.grid, &self.prof, c.a, c.s0, c.d0, c.d1, self.k)?;
        let mut st = SimState { q: psi.values, theta: 0.0, n: 0 };
        self.enforce_constraint(&mut st, &mut FrozenCache::new())?;
        Ok(st)
    }

    /// Applies the gauge rotation that restores P̂₀(q) = 0.
    pub fn enforce_constraint(&self, st: &mut SimState, cache: &mut FrozenCache) -> Result<f64> {
        let fr = self.stepper.frozen(cache, 2 * st.n);
        self.stepper.rotate_to_constraint(&fr, &mut st.q, &mut st.theta)
    }

    pub fn phat0(&self, q: &[C64]) -> f64 {
        phat0(&self.grid.weights, q, self.prof.par.delta)
    }

    /// sup |q| over |y| ≤ r.
    pub fn sup_within(&self, q: &[C64], r: f64) -> f64 {
        self.grid.nodes.iter().zip(q).filter(|(y, _)| y.abs() <= r).map(|(_, v)| v.norm()).fold(0.0, f64::max)
    }

    fn advance(
        &self,
        st: &mut SimState,
        steps: usize,
        cache: &mut FrozenCache,
        on_step: &mut dyn FnMut(&SimState, &mut FrozenCache) -> Flow<()>,
    ) -> Flow<()> {
        let every = self.cfg.stepper.rotate_every;
        for _ in 0..steps {
            self.stepper.step(cache, st.n, &mut st.q, &mut st.theta)?;
            st.n += 1;
            if st.n % every == 0 {
                self.enforce_constraint(st, cache)?;
            }
            let sup = st.q.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if !(sup <= 1.0) {
                return Err(Halt::Escape(sup));
            }
            on_step(st, cache)?;
        }
        Ok(())
    }

    /// Full diagnostic record of a state.
    pub fn record(&self, st: &SimState, cache: &mut FrozenCache, control: [f64; 2]) -> Result<TraceRow> {
        let s = self.s_at(st.n);
        let fr = self.stepper.frozen(cache, 2 * st.n);
        let mut nl = vec![C64::new(0.0, 0.0); st.q.len()];
        let theta_prime = self.stepper.rhs(&fr, &st.q, &mut nl)?;
        let d = self.prof.par.delta;
        let field = ComplexField { grid: self.grid.clone(), values: st.q.clone() };
        let dec = decompose(&field, self.m, s, self.k, self.prof.par.p, d)?;
        let rep = shrinking_check(&dec, self.cfg.a);
        let mut dtilde = [0.0; 3];
        for (k, dt) in dtilde.iter_mut().enumerate() {
            *dt = (1.0 - k as f64 / 2.0) * self.modes.tilde(k, &st.q) + self.modes.tilde(k, &nl);
        }
        let q_minus = rep.components.iter().find(|c| c.name == "q_minus").map_or(0.0, |c| c.measured);
        let q_e = rep.components.iter().find(|c| c.name == "q_e").map_or(0.0, |c| c.measured);
        let ratios = rep.components.iter().map(|c| c.ratio).collect();
        let i0 = self.grid.len() / 2;
        let w0 = (fr.phi[i0] + st.q[i0]).norm();
        Ok(TraceRow {
            s,
            theta: st.theta,
            theta_prime,
            phat0: self.phat0(&st.q),
            sup_q: self.sup_within(&st.q, self.k * s.powf(0.25)),
            sup_q_grid: st.q.iter().map(|v| v.norm()).fold(0.0, f64::max),
            w0_abs: w0,
            q_minus,
            q_e,
            ratio_max: rep.worst().map_or(0.0, |c| c.ratio),
            dtilde,
            tilde: dec.tilde,
            hat: dec.hat,
            ratios,
            control,
        })
    }

    /// Evolves from the constructed initial data.
    pub fn run(&self) -> Result<SimOutcome> {
        self.run_with(self.initial_state()?, &mut |_, _, _| Ok(()))
    }

    /// Evolves from `init`; `hook` sees every kept step with its s.
    pub fn run_with(
        &self,
        init: SimState,
        hook: &mut dyn FnMut(&Simulation, &SimState, f64) -> Result<()>,
    ) -> Result<SimOutcome> {
        let mut st = init;
        let mut cache = FrozenCache::new();
        let mut rows = Vec::new();
        let mut stats = ControlStats::default();
        let mut last_c = [0.0; 2];
        rows.push(self.record(&st, &mut cache, last_c)?);
        hook(self, &st, self.s_at(st.n))?;
        let result = match self.cfg.control.mode {
            ControlMode::Free => {
                let mut on = |s: &SimState, c: &mut FrozenCache| self.keep_step(s, c, &mut rows, last_c, hook);
                let left = self.n_end - st.n;
                self.advance(&mut st, left, &mut cache, &mut on)
            }
            ControlMode::Shadow => self.shadow(&mut st, &mut cache, &mut rows, &mut stats, &mut last_c, hook),
        };
        let (exit, detail) = match result {
            Ok(()) => (ExitReason::Completed, String::new()),
            Err(Halt::Exit(c)) => (ExitReason::ShrinkingExit, c.join(",")),
            Err(Halt::Escape(sup)) => (ExitReason::Escape, format!("sup|q| = {sup:e}")),
            Err(Halt::Degenerate(m)) => (ExitReason::ModulationDegenerate, m),
            Err(Halt::Control(m)) => (ExitReason::ControlFailed, m),
            Err(Halt::Lab(e)) => return Err(e),
        };
        let s_final = rows.last().map_or(self.cfg.s0, |r| r.s);
        Ok(SimOutcome {
            trace: SimTrace { m: self.m, rows },
            exit,
            exit_detail: detail,
            s_final,
            control: stats,
            final_state: st,
        })
    }

    fn keep_step(
        &self,
        st: &SimState,
        cache: &mut FrozenCache,
        rows: &mut Vec<TraceRow>,
        control: [f64; 2],
        hook: &mut dyn FnMut(&Simulation, &SimState, f64) -> Result<()>,
    ) -> Flow<()> {
        hook(self, st, self.s_at(st.n))?;
        if st.n % self.cfg.record_every == 0 || st.n == self.n_end {
            let row = self.record(st, cache, control)?;
            let outside: Vec<String> = if self.cfg.stop_on_exit && row.ratio_max > 1.0 {
                let field = ComplexField { grid: self.grid.clone(), values: st.q.clone() };
                let dec = decompose(&field, self.m, row.s, self.k, self.prof.par.p, self.prof.par.delta)?;
                shrinking_check(&dec, self.cfg.a).violations().iter().map(|s| s.to_string()).collect()
            } else {
                Vec::new()
            };
            rows.push(row);
            if !outside.is_empty() {
                return Err(Halt::Exit(outside));
            }
        }
        Ok(())
    }

    fn shadow(
        &self,
        st: &mut SimState,
        cache: &mut FrozenCache,
        rows: &mut Vec<TraceRow>,
        stats: &mut ControlStats,
        last_c: &mut [f64; 2],
        hook: &mut dyn FnMut(&Simulation, &SimState, f64) -> Result<()>,
    ) -> Flow<()> {
        let ctl = &self.cfg.control;
        let a = self.cfg.a;
        let w = ((ctl.window / self.cfg.stepper.ds).round() as usize).max(1);
        let horizon = 2 * w;
        let mut jac: Option<Matrix2<f64>> = None;
        while st.n < self.n_end {
            cache.retain_from(2 * st.n);
            let s_start = self.s_at(st.n);
            let s_h = self.s_at(st.n + horizon);
            let dirs = [
                direction(&self.prof, &self.grid, 0, s_start, self.k),
                direction(&self.prof, &self.grid, 1, s_start, self.k),
            ];
            let bound = [mode_bound(a, s_h, 0, true), mode_bound(a, s_h, 1, true)];
            let mut end = |c: [f64; 2], cache: &mut FrozenCache, stats: &mut ControlStats| -> Flow<[f64; 2]> {
                let mut t = st.clone();
                add_correction(&mut t.q, c, &dirs);
                stats.integrations += 1;
                self.advance(&mut t, horizon, cache, &mut |_, _| Ok(()))?;
                Ok(self.modes.unstable(&t.q))
            };
            let build = |c: [f64; 2], e: [f64; 2], cache: &mut FrozenCache, stats: &mut ControlStats,
                         end: &mut dyn FnMut([f64; 2], &mut FrozenCache, &mut ControlStats) -> Flow<[f64; 2]>|
             -> Flow<Matrix2<f64>> {
                stats.jacobian_builds += 1;
                let mut j = Matrix2::zeros();
                for k in 0..2 {
                    let eps = 1e-3 * mode_bound(a, s_start, k, true);
                    let mut cp = c;
                    cp[k] += eps;
                    let ep = end(cp, cache, stats)?;
                    j[(0, k)] = (ep[0] - e[0]) / eps;
                    j[(1, k)] = (ep[1] - e[1]) / eps;
                }
                Ok(j)
            };
            let mut c = [0.0; 2];
            let mut e = end(c, cache, stats)?;
            if jac.is_none() {
                jac = Some(build(c, e, cache, stats, &mut end)?);
            }
            let mut it = 0;
            loop {
                let rel = (e[0] / bound[0]).abs().max((e[1] / bound[1]).abs());
                if rel <= ctl.tol {
                    stats.max_rel_residual = stats.max_rel_residual.max(rel);
                    break;
                }
                if it == ctl.max_iter {
                    return Err(Halt::Control(format!(
                        "window at s = {s_start}: residual {rel:e} of the bounds after {it} iterations"
                    )));
                }
                if it == 2 {
                    jac = Some(build(c, e, cache, stats, &mut end)?);
                }
                let dc = newton_step(jac.as_ref().unwrap(), e)
                    .ok_or_else(|| Halt::Control(format!("singular control Jacobian at s = {s_start}")))?;
                c = [c[0] + dc[0], c[1] + dc[1]];
                e = end(c, cache, stats)?;
                it += 1;
            }
            add_correction(&mut st.q, c, &dirs);
            if stats.windows == 0 {
                stats.initial_correction = c;
            } else {
                let r = (c[0] / mode_bound(a, s_start, 0, true)).abs().max((c[1] / mode_bound(a, s_start, 1, true)).abs());
                stats.max_rel_correction = stats.max_rel_correction.max(r);
            }
            stats.windows += 1;
            *last_c = c;
            let keep = w.min(self.n_end - st.n);
            let lc = *last_c;
            let mut on = |s: &SimState, cc: &mut FrozenCache| self.keep_step(s, cc, rows, lc, hook);
            self.advance(st, keep, cache, &mut on)?;
        }
        Ok(())
    }
}

impl From<Halt> for LabError {
    fn from(h: Halt) -> Self {
        match h {
            Halt::Lab(e) => e,
            other => LabError::InvalidParam(format!("{other:?}")),
        }
    }
}

/// Fits and cross-checks reported for a run.
#[derive(Debug, Clone, Serialize)]
pub struct SimSummary {
    pub exit_reason: ExitReason,
    pub exit_detail: String,
    pub s0: f64,
    pub s_end: f64,
    pub s_final: f64,
    pub fit_from: f64,
    pub records: usize,
    pub max_abs_phat0: f64,
    /// envelope of |θ′|
    pub theta_prime_slope: Option<SlopeFit>,
    /// envelope of |q̃₂′ + 2q̃₂/s|
    pub q2_residual_slope: Option<SlopeFit>,
    /// envelope of sup_{|y|≤Ks^{1/4}} |q|
    pub sup_q_slope: Option<SlopeFit>,
    /// envelope of |θ(s) − θ(s_final)| over the first 90% of the fit range
    pub theta_tail_slope: Option<SlopeFit>,
    pub q2_times_s_final: f64,
    pub theta_final: f64,
    /// θ′ s^{3/2} at the last record
    pub theta_prime_s32_final: f64,
    /// max over the fit range of ||w(0,s)| − κ| / (a√2/√s)
    pub w0_band_ratio: f64,
    pub w0_final: f64,
    pub kappa: f64,
    pub mu: f64,
    pub control: ControlStats,
}

pub fn summarize(cfg: &SimConfig, prof: &Profile, out: &SimOutcome) -> SimSummary {
    let from = cfg.fit_start();
    let tail = out.trace.tail(from);
    let s: Vec<f64> = tail.iter().map(|r| r.s).collect();
    let col = |f: &dyn Fn(&TraceRow) -> f64| -> Vec<f64> { tail.iter().map(|r| f(r)).collect() };
    let fit = |ys: Vec<f64>| if s.len() >= 3 { envelope_slope(&s, &ys) } else { None };
    let theta_final = out.trace.rows.last().map_or(0.0, |r| r.theta);
    let cut = from + 0.9 * (out.s_final - from);
    let (ts, tv): (Vec<f64>, Vec<f64>) =
        tail.iter().filter(|r| r.s <= cut).map(|r| (r.s, (r.theta - theta_final).abs())).unzip();
    let kappa = prof.c.kappa;
    let band = prof.c.a * 2f64.sqrt();
    let last = out.trace.rows.last();
    SimSummary {
        exit_reason: out.exit.clone(),
        exit_detail: out.exit_detail.clone(),
        s0: cfg.s0,
        s_end: cfg.s_end,
        s_final: out.s_final,
        fit_from: from,
        records: out.trace.rows.len(),
        max_abs_phat0: out.trace.rows.iter().map(|r| r.phat0.abs()).fold(0.0, f64::max),
        theta_prime_slope: fit(col(&|r| r.theta_prime)),
        q2_residual_slope: fit(col(&|r| r.dtilde[2] + 2.0 * r.tilde[2] / r.s)),
        sup_q_slope: fit(col(&|r| r.sup_q)),
        theta_tail_slope: if ts.len() >= 3 { envelope_slope(&ts, &tv) } else { None },
        q2_times_s_final: last.map_or(0.0, |r| r.tilde[2] * r.s),
        theta_final,
        theta_prime_s32_final: last.map_or(0.0, |r| r.theta_prime * r.s.powf(1.5)),
        w0_band_ratio: tail.iter().map(|r| (r.w0_abs - kappa).abs() * r.s.sqrt() / band).fold(0.0, f64::max),
        w0_final: last.map_or(0.0, |r| r.w0_abs),
        kappa,
        mu: prof.c.mu,
        control: out.control.clone(),
    }
}

/// Rate, constraint and band checks of one run; the step-halving check is
/// added when a report is given.
pub fn criteria(sum: &SimSummary, halving: Option<&HalvingReport>) -> Vec<Check> {
    let slope = |f: &Option<SlopeFit>| f.map_or(f64::NAN, |f| f.slope);
    let mut out = vec![
        Check::at_most("max |P^0(q)|", sum.max_abs_phat0, 1e-8),
        Check::at_most("theta' envelope slope", slope(&sum.theta_prime_slope), -1.4),
        Check::at_most("q~2' + 2 q~2/s envelope slope", slope(&sum.q2_residual_slope), -1.8),
        Check::at_most("sup|q| envelope slope", slope(&sum.sup_q_slope), -0.2),
    ];
    if let Some(h) = halving {
        out.push(Check::at_most("step halving rel. diff of sup|q|", h.rel_diff, 1e-6));
    }
    out
}

/// Runs at ds and ds/2 in parallel and compares sup|q(s_end)|.
#[derive(Debug, Clone, Serialize)]
pub struct HalvingReport {
    pub ds: f64,
    pub sup_coarse: f64,
    pub sup_fine: f64,
    pub rel_diff: f64,
    pub theta_diff: f64,
    pub exit_coarse: ExitReason,
    pub exit_fine: ExitReason,
}

pub fn step_halving(cfg: &SimConfig) -> Result<(SimOutcome, HalvingReport)> {
    let mut fine = cfg.clone();
    fine.stepper.ds = cfg.stepper.ds / 2.0;
    fine.record_every = cfg.record_every * 2;
    let (a, b) = rayon::join(|| Simulation::new(cfg.clone())?.run(), || Simulation::new(fine)?.run());
    let (a, b) = (a?, b?);
    let sup = |o: &SimOutcome| o.final_state.q.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let (sc, sf) = (sup(&a), sup(&b));
    let rep = HalvingReport {
        ds: cfg.stepper.ds,
        sup_coarse: sc,
        sup_fine: sf,
        rel_diff: (sc - sf).abs() / sf.abs().max(f64::MIN_POSITIVE),
        theta_diff: (a.final_state.theta - b.final_state.theta).abs(),
        exit_coarse: a.exit.clone(),
        exit_fine: b.exit.clone(),
    };
    Ok((a, rep))
}

/// Companion run that follows |u(x,t)| at fixed x until x e^{s/2} leaves
/// 90% of the grid, and compares the limits with |u*(x)|.
#[derive(Debug, Clone, Serialize)]
pub struct FinalProfileReport {
    pub s0: f64,
    pub s_end: f64,
    pub exit_reason: ExitReason,
    pub points: Vec<FinalProfilePoint>,
    pub histories: Vec<PointHistory>,
}

pub fn final_profile_study(base: &SimConfig, xs: &[f64], s0: f64) -> Result<FinalProfileReport> {
    let mut cfg = base.clone();
    cfg.s0 = s0;
    let reach = 0.9 * cfg.grid.y_max;
    let xmin = xs.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    cfg.s_end = (2.0 * (reach / xmin).ln()).max(s0 + 1.0);
    cfg.stop_on_exit = false;
    cfg.fit_from = None;
    let sim = Simulation::new(cfg.clone())?;
    let mut hist: Vec<PointHistory> = xs.iter().map(|&x| PointHistory::new(x)).collect();
    let out = sim.run_with(sim.initial_state()?, &mut |sim, st, s| {
        let w = w_field(&sim.prof, &sim.grid, &st.q, st.theta, s);
        for h in hist.iter_mut() {
            if h.x.abs() * (0.5 * s).exp() <= reach {
                if let Some(u) = reconstruct_u(&sim.prof, &sim.grid, &w, s, h.x) {
                    h.s.push(s);
                    h.modulus.push(u.norm());
                }
            }
        }
        Ok(())
    })?;
    let points = hist.iter().filter_map(|h| h.summarize(&sim.prof)).collect();
    Ok(FinalProfileReport { s0, s_end: cfg.s_end, exit_reason: out.exit, points, histories: hist })
}

/// One cell of a (d₀, d₁) sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub d0: f64,
    pub d1: f64,
    pub survival: f64,
    pub exit_reason: ExitReason,
    pub exit_detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub best: SweepCell,
    pub rounds: usize,
}

/// Free-running survival times on an n×n grid of (d₀, d₁) ∈ [−r, r]², then
/// `refine` rounds of 3×3 grids at half the spacing around the best cell.
pub fn sweep(base: &SimConfig, n: usize, r: f64, refine: usize) -> Result<SweepReport> {
    if n < 2 {
        return Err(LabError::InvalidParam("sweep needs n >= 2".into()));
    }
    let mut cfg = base.clone();
    cfg.control.mode = ControlMode::Free;
    cfg.stop_on_exit = true;
    let run_cells = |pts: Vec<(f64, f64)>| -> Result<Vec<SweepCell>> {
        pts.into_par_iter()
            .map(|(d0, d1)| {
                let mut c = cfg.clone();
                c.d0 = d0;
                c.d1 = d1;
                let out = Simulation::new(c)?.run()?;
                Ok(SweepCell { d0, d1, survival: out.s_final, exit_reason: out.exit, exit_detail: out.exit_detail })
            })
            .collect()
    };
    let h = 2.0 * r / (n - 1) as f64;
    let pts: Vec<(f64, f64)> =
        (0..n).flat_map(|i| (0..n).map(move |j| (-r + h * i as f64, -r + h * j as f64))).collect();
    let mut cells = run_cells(pts)?;
    let pick = |cs: &[SweepCell]| {
        cs.iter()
            .max_by(|a, b| a.survival.partial_cmp(&b.survival).unwrap().then(b.d0.abs().partial_cmp(&a.d0.abs()).unwrap()))
            .cloned()
            .unwrap()
    };
    let mut best = pick(&cells);
    let mut step = h;
    for _ in 0..refine {
        step /= 2.0;
        let pts: Vec<(f64, f64)> = (-1..=1)
            .flat_map(|i| (-1..=1).map(move |j| (i, j)))
            .filter(|&(i, j)| (i, j) != (0, 0))
            .map(|(i, j)| (best.d0 + step * i as f64, best.d1 + step * j as f64))
            .collect();
        let new = run_cells(pts)?;
        cells.extend(new);
        best = pick(&cells);
    }
    Ok(SweepReport { cells, best, rounds: refine })
}
