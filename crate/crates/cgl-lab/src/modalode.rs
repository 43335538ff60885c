//! Three-mode reduction v = (1+iδ)(v̄₀h₀ + v̄₂h₂) + i v̂₀h₀ and its
//! integration along the branch v̄₂ ~ α/√s, v̂₀ ~ β/√s, v̄₀ = O(1/s).

use crate::fit::{linear_fit, loglog_slope, SlopeFit};
use crate::io::CsvTable;
use crate::params::{mu_from_alpha, Profile};
use crate::{LabError, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModalState {
    pub vbar0: f64,
    pub vbar2: f64,
    pub vhat0: f64,
    pub s: f64,
}

/// Components above this size leave the regime where the quartic remainder
/// is negligible.
pub const STATE_MAX: f64 = 0.5;

impl ModalState {
    pub fn new(vbar0: f64, vbar2: f64, vhat0: f64, s: f64) -> Result<Self> {
        let st = Self { vbar0, vbar2, vhat0, s };
        st.validate()?;
        Ok(st)
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.vbar0, self.vbar2, self.vhat0, self.s];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(LabError::InvalidParam("modal state not finite".into()));
        }
        if self.vbar0.abs().max(self.vbar2.abs()).max(self.vhat0.abs()) > STATE_MAX {
            return Err(LabError::InvalidParam(format!("modal state exceeds {STATE_MAX}")));
        }
        Ok(())
    }

    fn vec(&self) -> [f64; 3] {
        [self.vbar0, self.vbar2, self.vhat0]
    }
}

/// Right-hand side of the modal system with the quartic remainder dropped.
/// Returns (v̄₀′, v̄₂′, v̂₀′).
pub fn rhs(prof: &Profile, s: f64, v: [f64; 3]) -> [f64; 3] {
    let p = prof.par.p;
    let d = prof.par.delta;
    let k = prof.c.kappa;
    let mu = prof.c.mu;
    let k2 = k * k;
    let [v0, v2, w] = v;
    let p1 = p + 1.0;

    let f0 = v0 + mu * d / s * v0 + mu / s * w + w * w / (2.0 * k)
        - p1 * p / (3.0 * k2) * v0.powi(3)
        - p1 * d / k2 * v0 * v0 * w
        - p1 / k2 * v0 * w * w
        - 8.0 * p1 / k2 * v0 * v2 * v2
        - d / (2.0 * k2) * w.powi(3)
        - 8.0 * p1 * d / k2 * w * v2 * v2
        - 64.0 / 3.0 * p1 * p / k2 * v2.powi(3);

    let f2 = mu * d / s * v2
        - 40.0 * p1 * p / k2 * v2.powi(3)
        - 8.0 * p1 * p / k2 * v2 * v2 * v0
        - 8.0 * p1 * d / k2 * v2 * v2 * w
        - p1 * p / k2 * v2 * v0 * v0
        - p1 / k2 * v2 * w * w
        - 2.0 * p1 * d / k2 * v2 * v0 * w;

    let fw = -mu * k / s - mu * p1 / s * v0 - mu * d / s * w
        + p1 / k * w * v0
        + p1 * d / k * v0 * v0
        + 8.0 * p1 * d / k * v2 * v2
        - d * p1 * p1 / k2 * v0.powi(3)
        + (2.0 * p - 1.0) * p1 / k2 * v0 * v0 * w
        + 3.0 * d * p1 / (2.0 * k2) * v0 * w * w
        + p1 / (2.0 * k2) * w.powi(3)
        - 24.0 * d * p1 * p1 / k2 * v0 * v2 * v2
        + 8.0 * (2.0 * p - 1.0) * p1 / k2 * w * v2 * v2
        - 64.0 * d * p1 * p1 / k2 * v2.powi(3);

    [f0, f2, fw]
}

/// Step-size control for the embedded 5(4) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Controller {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
}

impl Default for Controller {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-16, h_init: 1e-3, h_max: 1.0 }
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Result of integrating one leg.
#[derive(Debug, Clone, Copy)]
enum Leg {
    Reached([f64; 3]),
    /// |v̄₀|·s exceeded the escape threshold at the given s, with that sign.
    Escaped { s: f64, sign: f64 },
}

pub const ESCAPE: f64 = 1.0;

/// Adaptive Dormand–Prince from s0 to s1, stopping early when |v̄₀|s > ESCAPE.
/// Returns the final state and the step size to reuse.
fn integrate_leg(prof: &Profile, s0: f64, s1: f64, y0: [f64; 3], ctl: &Controller, h0: f64) -> Leg {
    let mut s = s0;
    let mut y = y0;
    let mut h = h0.min(ctl.h_max).min(s1 - s0);
    let mut k = [[0.0; 3]; 7];
    k[0] = rhs(prof, s, y);
    let mut guard = 0usize;
    while s < s1 {
        guard += 1;
        if guard > 50_000_000 {
            break;
        }
        let last = s + h >= s1;
        if last {
            h = s1 - s;
        }
        for st in 1..7 {
            let mut yt = y;
            for (i, yi) in yt.iter_mut().enumerate() {
                for (j, kj) in k.iter().enumerate().take(st) {
                    *yi += h * A[st][j] * kj[i];
                }
            }
            k[st] = rhs(prof, s + C[st] * h, yt);
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for i in 0..3 {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for st in 0..7 {
                d5 += B5[st] * k[st][i];
                d4 += B4[st] * k[st][i];
            }
            y5[i] += h * d5;
            let sc = ctl.atol + ctl.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((h * (d5 - d4) / sc).abs());
        }
        if err <= 1.0 {
            s = if last { s1 } else { s + h };
            y = y5;
            k[0] = k[6];
            if y[0].abs() * s > ESCAPE {
                return Leg::Escaped { s, sign: y[0].signum() };
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(ctl.h_max);
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
    }
    Leg::Reached(y)
}

/// Shooting and output settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShootSettings {
    /// Each window integrates 2·keep and keeps the first half.
    pub keep: f64,
    /// Initial bracket is ±bracket/s on v̄₀.
    pub bracket: f64,
    pub max_iter: usize,
}

impl Default for ShootSettings {
    fn default() -> Self {
        Self { keep: 8.0, bracket: 0.9, max_iter: 200 }
    }
}

/// Signed miss of the window target: v̄₀ at the window end, or an
/// extrapolated value with the escape sign.
fn window_miss(prof: &Profile, s0: f64, s_end: f64, y0: [f64; 3], ctl: &Controller) -> f64 {
    match integrate_leg(prof, s0, s_end, y0, ctl, ctl.h_init) {
        Leg::Reached(y) => y[0],
        Leg::Escaped { s, sign } => sign * ESCAPE / s * (s_end - s).min(600.0).exp(),
    }
}

/// Picks v̄₀(s0) so that v̄₀ stays O(1/s) over [s0, s_end]: bracket, then
/// Illinois regula falsi on the window-end value.
fn shoot_window(prof: &Profile, s0: f64, s_end: f64, v2: f64, w: f64, ctl: &Controller, sh: &ShootSettings) -> Result<f64> {
    let mut lo = -sh.bracket / s0;
    let mut hi = sh.bracket / s0;
    let (mut flo, mut fhi) = rayon::join(
        || window_miss(prof, s0, s_end, [lo, v2, w], ctl),
        || window_miss(prof, s0, s_end, [hi, v2, w], ctl),
    );
    if flo.signum() == fhi.signum() {
        return Err(LabError::Shooting(format!(
            "no bracket at s={s0}: escape signs {} and {} (v̄₂√s = {:.6}, v̂₀√s = {:.6})",
            flo.signum(),
            fhi.signum(),
            v2 * s0.sqrt(),
            w * s0.sqrt()
        )));
    }
    let mut side = 0i32;
    for _ in 0..sh.max_iter {
        let m = (lo * fhi - hi * flo) / (fhi - flo);
        let m = if m > lo.min(hi) && m < lo.max(hi) { m } else { 0.5 * (lo + hi) };
        if m == lo || m == hi || (hi - lo).abs() <= 4.0 * f64::EPSILON * m.abs().max(1e-300) {
            return Ok(m);
        }
        let fm = window_miss(prof, s0, s_end, [m, v2, w], ctl);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == flo.signum() {
            lo = m;
            flo = fm;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = m;
            fhi = fm;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
        if fm.abs() <= 1e-3 / s_end && (hi - lo).abs() <= 1e-15 / s0 {
            return Ok(m);
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub states: Vec<ModalState>,
}

impl Trajectory {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["s", "vbar0", "vbar2", "vhat0", "vbar2*sqrt_s", "vhat0*sqrt_s"]);
        for st in &self.states {
            let r = st.s.sqrt();
            t.push(vec![st.s, st.vbar0, st.vbar2, st.vhat0, st.vbar2 * r, st.vhat0 * r]);
        }
        t
    }
}

/// Integrates from `initial` (its v̄₀ is replaced by shooting) to s_end.
pub fn integrate(
    prof: &Profile,
    initial: ModalState,
    s_end: f64,
    ctl: &Controller,
    sh: &ShootSettings,
) -> Result<Trajectory> {
    initial.validate()?;
    if initial.s < 10.0 {
        return Err(LabError::InvalidParam(format!("initial s = {} < 10", initial.s)));
    }
    if s_end <= initial.s {
        return Err(LabError::InvalidParam("s_end must exceed the initial s".into()));
    }
    let mut s = initial.s;
    let [_, mut v2, mut w] = initial.vec();
    let mut states = Vec::new();
    while s < s_end {
        let keep = (s + sh.keep).min(s_end);
        let v0 = shoot_window(prof, s, s + 2.0 * sh.keep, v2, w, ctl, sh)?;
        states.push(ModalState { vbar0: v0, vbar2: v2, vhat0: w, s });
        match integrate_leg(prof, s, keep, [v0, v2, w], ctl, ctl.h_init) {
            Leg::Reached(y) => {
                v2 = y[1];
                w = y[2];
            }
            Leg::Escaped { s: se, sign } => {
                return Err(LabError::Shooting(format!("escaped at s={se} with sign {sign}")));
            }
        }
        s = keep;
    }
    let v0 = shoot_window(prof, s, s + 2.0 * sh.keep, v2, w, ctl, sh)?;
    states.push(ModalState { vbar0: v0, vbar2: v2, vhat0: w, s });
    Ok(Trajectory { states })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModalFit {
    pub p: f64,
    pub s_end: f64,
    pub alpha_num: f64,
    pub beta_num: f64,
    /// Closed form −κ/(8√(p(p+1))).
    pub alpha_formula: f64,
    /// Alternative value at p = 3, −√2/(16√3).
    pub alpha_alt_p3: f64,
    pub mu_back: f64,
    pub mu_target: f64,
    pub mu_rel_err: f64,
    /// Relative gap of α_num to each candidate.
    pub rel_to_formula: f64,
    pub rel_to_alt: f64,
    /// Ratio β_num/(−8δα_num): the nonzero equilibrium of the reduced system.
    pub beta_ratio: f64,
    pub max_abs_vbar0_s: f64,
    pub self_consistency: Option<SlopeFit>,
    pub vbar2_negative_tail: bool,
}

/// Weighted least squares of y against 1/√s on [s_end/100, s_end], with
/// weights equalizing log-s spacing. Returns the intercept.
fn ansatz_limit(states: &[ModalState], s_end: f64, f: impl Fn(&ModalState) -> f64) -> f64 {
    let lo = s_end / 100.0;
    let pts: Vec<&ModalState> = states.iter().filter(|st| st.s >= lo && st.s <= s_end).collect();
    let mut sw = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, st) in pts.iter().enumerate() {
        let ds = if i + 1 < pts.len() { pts[i + 1].s - st.s } else { st.s - pts[i.max(1) - 1].s };
        let wgt = ds / st.s;
        let x = 1.0 / st.s.sqrt();
        let y = f(st);
        sw += wgt;
        sx += wgt * x;
        sy += wgt * y;
        sxx += wgt * x * x;
        sxy += wgt * x * y;
    }
    let det = sw * sxx - sx * sx;
    (sy * sxx - sx * sxy) / det
}

/// Fits α_num and β_num and back-computes μ.
pub fn fit_trajectory(prof: &Profile, tr: &Trajectory) -> ModalFit {
    let s_end = tr.states.last().map(|s| s.s).unwrap_or(0.0);
    let alpha_num = ansatz_limit(&tr.states, s_end, |st| st.vbar2 * st.s.sqrt());
    let beta_num = ansatz_limit(&tr.states, s_end, |st| st.vhat0 * st.s.sqrt());
    let mu_back = mu_from_alpha(&prof.par, prof.c.kappa, alpha_num);
    let mu = prof.c.mu;
    let af = prof.c.alpha;
    let at = crate::params::alpha_alt_p3();

    // Residual of the v̂₀ equation with v̄₂ replaced by α_num/√s, from the
    // difference of right-hand sides (the trajectory satisfies its own ODE).
    let lo = s_end / 100.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for st in tr.states.iter().filter(|st| st.s >= lo) {
        let v = st.vec();
        let a = rhs(prof, st.s, v)[2];
        let b = rhs(prof, st.s, [v[0], alpha_num / st.s.sqrt(), v[2]])[2];
        xs.push(st.s);
        ys.push((a - b).abs());
    }
    let self_consistency = crate::fit::envelope_slope(&xs, &ys).or_else(|| loglog_slope(&xs, &ys));
    let tail: Vec<&ModalState> = tr.states.iter().filter(|st| st.s >= lo).collect();
    ModalFit {
        p: prof.par.p,
        s_end,
        alpha_num,
        beta_num,
        alpha_formula: af,
        alpha_alt_p3: at,
        mu_back,
        mu_target: mu,
        mu_rel_err: (mu_back - mu).abs() / mu,
        rel_to_formula: (alpha_num - af).abs() / af.abs(),
        rel_to_alt: (alpha_num - at).abs() / at.abs(),
        beta_ratio: beta_num / (-8.0 * prof.par.delta * alpha_num),
        max_abs_vbar0_s: tr.states.iter().map(|st| st.vbar0.abs() * st.s).fold(0.0, f64::max),
        self_consistency,
        vbar2_negative_tail: !tail.is_empty() && tail.iter().all(|st| st.vbar2 < 0.0),
    }
}

/// Leading-order point of the decaying branch: v̄₂ = α/√s, v̂₀ = −8δα/√s.
pub fn branch_guess(prof: &Profile, s: f64) -> [f64; 3] {
    let a = prof.c.alpha;
    let b = -8.0 * prof.par.delta * a;
    [-b * b / (2.0 * prof.c.kappa * s), a / s.sqrt(), b / s.sqrt()]
}

/// Solves rhs(s, v) = target by damped Newton in the scaled unknowns
/// (s v̄₀, √s v̄₂, √s v̂₀) with residuals scaled by (s, s^{3/2}, s).
fn solve_rhs(prof: &Profile, s: f64, guess: [f64; 3], target: [f64; 3]) -> Result<[f64; 3]> {
    let r = s.sqrt();
    let us = [s, r, r];
    let rs = [s, s * r, s];
    let resid = |u: [f64; 3]| {
        let v = [u[0] / us[0], u[1] / us[1], u[2] / us[2]];
        let f = rhs(prof, s, v);
        [0, 1, 2].map(|i| (f[i] - target[i]) * rs[i])
    };
    let norm = |x: [f64; 3]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut u = [0, 1, 2].map(|i| guess[i] * us[i]);
    let mut f = resid(u);
    for _ in 0..100 {
        let mut jac = nalgebra::Matrix3::<f64>::zeros();
        for j in 0..3 {
            let h = 1e-6 * u[j].abs().max(1e-3);
            let mut up = u;
            let mut um = u;
            up[j] += h;
            um[j] -= h;
            let (fp, fm) = (resid(up), resid(um));
            for i in 0..3 {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let du = jac
            .lu()
            .solve(&nalgebra::Vector3::new(f[0], f[1], f[2]))
            .ok_or_else(|| LabError::Degenerate("singular modal Jacobian".into()))?;
        let mut t = 1.0;
        loop {
            let un = [0, 1, 2].map(|i| u[i] - t * du[i]);
            let fnew = resid(un);
            if norm(fnew) < norm(f) || t < 1e-6 {
                u = un;
                f = fnew;
                break;
            }
            t *= 0.5;
        }
        if t * du.norm() <= 1e-14 * (1.0 + u.iter().map(|x| x.abs()).sum::<f64>()) {
            break;
        }
    }
    Ok([0, 1, 2].map(|i| u[i] / us[i]))
}

/// Point of the slow manifold of the decaying branch at s. Iterate n solves
/// rhs(s, v) = v′(s), with v′ from central differences of the previous
/// iterate; each pass gains one power of s^{−1/2}.
pub fn slow_manifold(prof: &Profile, s: f64, n: usize) -> Result<[f64; 3]> {
    if n == 0 {
        // v′ from the ansatz exponents, solved self-consistently.
        let mut v = branch_guess(prof, s);
        for _ in 0..20 {
            let der = [-v[0] / s, -v[1] / (2.0 * s), -v[2] / (2.0 * s)];
            let next = solve_rhs(prof, s, v, der)?;
            let done = (0..3).all(|i| (next[i] - v[i]).abs() <= 1e-14 * v[i].abs().max(1e-300));
            v = next;
            if done {
                break;
            }
        }
        return Ok(v);
    }
    let h = 1e-3 * s;
    let vp = slow_manifold(prof, s + h, n - 1)?;
    let vm = slow_manifold(prof, s - h, n - 1)?;
    let prev = slow_manifold(prof, s, n - 1)?;
    let der = [0, 1, 2].map(|i| (vp[i] - vm[i]) / (2.0 * h));
    solve_rhs(prof, s, prev, der)
}

/// Slow-manifold iterate used for starting points.
pub const SLOW_MANIFOLD_ORDER: usize = 2;

/// Default initial time; below ~10³ the slow manifold sits close to the
/// fold of the v̂₀ balance and trajectories may leave the basin.
pub const DEFAULT_S0: f64 = 1e3;

/// Start on the decaying branch (v̄₂ < 0, v̂₀ → −8δα/√s), placed on the
/// slow manifold so that the slowly damped oscillation is not excited.
pub fn branch_start(prof: &Profile, s0: f64) -> Result<ModalState> {
    let v = slow_manifold(prof, s0, SLOW_MANIFOLD_ORDER)?;
    ModalState::new(v[0], v[1], v[2], s0)
}

/// Convenience: integrate from the branch start and fit.
pub fn run(prof: &Profile, s0: f64, s_end: f64, ctl: &Controller) -> Result<(Trajectory, ModalFit)> {
    let tr = integrate(prof, branch_start(prof, s0)?, s_end, ctl, &ShootSettings::default())?;
    let f = fit_trajectory(prof, &tr);
    Ok((tr, f))
}

/// Slope of a linear fit, re-exported for reporting intercept quality.
pub fn limit_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    linear_fit(xs, ys)
}
