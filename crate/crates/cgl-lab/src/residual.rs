//! Profile residual R, its modulated form R*, the potentials V₁ and V₂, the
//! nonlinear remainder B, and decay-rate scans of their Hermite projections.

use crate::fit::{loglog_slope, SlopeFit};
use crate::hermite::{hermite_unchecked, Grid};
use crate::io::{Check, CsvTable};
use crate::params::Profile;
use crate::{LabError, Result, C64};
use rayon::prelude::*;
use serde::Serialize;

/// R(y,s) = −∂_sφ + φ_yy − ½yφ_y − (1+iδ)/(p−1)φ + (1+iδ)|φ|^{p−1}φ.
pub fn residual_r(prof: &Profile, y: f64, s: f64) -> C64 {
    let j = prof.phi_jet(y, s);
    let p = prof.par.p;
    -j.phi_s + j.phi_yy - 0.5 * y * j.phi_y - prof.one / (p - 1.0) * j.phi + prof.nonlin(j.phi)
}

/// R*(θ′,y,s) = R − i(μ/s + θ′)φ.
pub fn residual_rstar(prof: &Profile, theta_p: f64, y: f64, s: f64) -> C64 {
    residual_r(prof, y, s) - C64::i() * (prof.c.mu / s + theta_p) * prof.phi(y, s)
}

/// (V₁, V₂) at (y, s).
pub fn potentials_v(prof: &Profile, y: f64, s: f64) -> (C64, C64) {
    potentials_at(prof, prof.phi(y, s))
}

/// V₁ and V₂ for a given value of φ.
pub fn potentials_at(prof: &Profile, phi: C64) -> (C64, C64) {
    let p = prof.par.p;
    let r = phi.norm();
    let rp = r.powf(p - 1.0);
    let v1 = prof.one * ((p + 1.0) / 2.0 * (rp - 1.0 / (p - 1.0)));
    let w = if r == 0.0 { C64::new(0.0, 0.0) } else { phi * phi * r.powf(p - 3.0) };
    let v2 = prof.one * ((p - 1.0) / 2.0) * (w - 1.0 / (p - 1.0));
    (v1, v2)
}

/// The expansion coefficients W_{i,j}(y) of V_i in powers of s^{−1/2}.
/// W_{2,2} carries (p−1)⁴ in its denominator.
#[derive(Debug, Clone, Copy)]
pub struct WCoeffs<'a> {
    prof: &'a Profile,
}

impl<'a> WCoeffs<'a> {
    pub fn new(prof: &'a Profile) -> Self {
        Self { prof }
    }

    fn consts(&self) -> (f64, f64, f64, C64) {
        (self.prof.par.p, self.prof.par.delta, self.prof.c.b, self.prof.one)
    }

    pub fn w11(&self, y: f64) -> C64 {
        let (p, _, b, one) = self.consts();
        -one * (b * (p + 1.0) / (2.0 * (p - 1.0).powi(2))) * (y * y - 2.0)
    }

    pub fn w12(&self, y: f64) -> C64 {
        let (p, _, b, one) = self.consts();
        let h2 = y * y - 2.0;
        one * (b * b * (p + 1.0) / (2.0 * (p - 1.0).powi(3))) * h2 * h2
    }

    pub fn w21(&self, y: f64) -> C64 {
        let (p, d, b, one) = self.consts();
        -one * ((p - 1.0) / 2.0 * b / (p - 1.0).powi(3)) * C64::new(p - 1.0, 2.0 * d) * (y * y - 2.0)
    }

    pub fn w22(&self, y: f64) -> C64 {
        let (p, d, b, one) = self.consts();
        let h2 = y * y - 2.0;
        let bracket = C64::new((p * p - 4.0 * p + 1.0) * h2 * h2, 0.0)
            + C64::i() * d * (8.0 * (p - 2.0) * (1.0 - y * y) + 3.0 * (p - 1.0) * y.powi(4));
        one * (b * b / (2.0 * (p - 1.0).powi(4))) * bracket
    }
}

/// B(q) for samples of φ and q.
pub fn nonlinear_b_values(prof: &Profile, phi: &[C64], q: &[C64]) -> Vec<C64> {
    let p = prof.par.p;
    phi.iter()
        .zip(q)
        .map(|(&f, &u)| {
            let r = f.norm();
            let rp = r.powf(p - 1.0);
            let w = f + u;
            let lin = rp * u
                + if r == 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    (p - 1.0) / 2.0 * r.powf(p - 3.0) * f * (f * u.conj() + f.conj() * u)
                };
            prof.one * (w.norm().powf(p - 1.0) * w - rp * f - lin)
        })
        .collect()
}

/// B(q,y,s) on the nodes `ys`. Rejects sup|q| > 1.
pub fn nonlinear_b(prof: &Profile, ys: &[f64], q: &[C64], s: f64) -> Result<Vec<C64>> {
    let sup = q.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if sup > 1.0 {
        return Err(LabError::InvalidParam(format!("sup|q| = {sup} exceeds 1")));
    }
    let phi: Vec<C64> = ys.iter().map(|&y| prof.phi(y, s)).collect();
    Ok(nonlinear_b_values(prof, &phi, q))
}

/// P̃_n and P̂_n of functions of y, by Gauss quadrature.
#[derive(Debug, Clone)]
pub struct Projector {
    pub grid: Grid,
    pub mmax: usize,
    /// h_n(yᵢ)·wᵢ/(2ⁿ n!)
    table: Vec<Vec<f64>>,
    pub delta: f64,
}

impl Projector {
    pub fn new(nodes: usize, mmax: usize, delta: f64) -> Result<Self> {
        let grid = Grid::gauss_hermite(nodes)?;
        if grid.capacity().unwrap_or(0) < 2 * mmax + 8 {
            return Err(LabError::InvalidParam(format!("{nodes} nodes too few for degree {mmax}")));
        }
        let table = (0..=mmax)
            .map(|n| {
                let nrm = crate::hermite::hermite_norm2(n);
                grid.nodes
                    .iter()
                    .zip(&grid.weights)
                    .map(|(&y, &w)| hermite_unchecked(n, y) * w / nrm)
                    .collect()
            })
            .collect();
        Ok(Self { grid, mmax, table, delta })
    }

    pub fn default_for(delta: f64) -> Self {
        Self::new(160, 12, delta).expect("static size")
    }

    /// Q_n = ∫ f h_n ρ / 2ⁿ n!, from samples on the projector's nodes.
    pub fn q_n(&self, values: &[C64], n: usize) -> C64 {
        self.table[n].iter().zip(values).map(|(t, v)| v * *t).sum()
    }

    /// (P̃_n f, P̂_n f) from samples.
    pub fn tilde_hat(&self, values: &[C64], n: usize) -> (f64, f64) {
        let q = self.q_n(values, n);
        (q.re, q.im - self.delta * q.re)
    }

    pub fn sample(&self, f: impl Fn(f64) -> C64) -> Vec<C64> {
        self.grid.nodes.iter().map(|&y| f(y)).collect()
    }
}

/// Smallest even M with M ≥ 4(√(1+δ²) + 1 + 2 max|V_i|), together with the
/// measured max|V_i|. The sup is approached where |φ| → 0 and is included as
/// a limit value.
pub fn required_m(prof: &Profile) -> (f64, usize) {
    let p = prof.par.p;
    let one = prof.one.norm();
    let mut vmax = one * ((p + 1.0) / (2.0 * (p - 1.0))).max(0.5);
    for s in crate::fit::logspace(1.0, 1e8, 41) {
        for k in 0..=400 {
            let z = k as f64 * 0.25;
            let (v1, v2) = potentials_v(prof, z * s.powf(0.25), s);
            vmax = vmax.max(v1.norm()).max(v2.norm());
        }
    }
    let bound = 4.0 * (one + 1.0 + 2.0 * vmax);
    let mut m = bound.ceil() as usize;
    if m % 2 == 1 {
        m += 1;
    }
    (vmax, m)
}

/// sup over |y| ≤ s^{1/4} of |V_i|·√s/(1+y²), for i = 1, 2.
pub fn v_bound_ratio(prof: &Profile, s: f64) -> (f64, f64) {
    let ymax = s.powf(0.25);
    let mut r = (0.0f64, 0.0f64);
    for k in 0..=400 {
        let y = ymax * k as f64 / 400.0;
        let (v1, v2) = potentials_v(prof, y, s);
        let w = s.sqrt() / (1.0 + y * y);
        r.0 = r.0.max(v1.norm() * w);
        r.1 = r.1.max(v2.norm() * w);
    }
    r
}

/// sup over |y| ≤ 5s^{1/4} of |R(y,s)|.
pub fn sup_r(prof: &Profile, s: f64) -> f64 {
    let q = s.powf(0.25);
    (0..=2000)
        .map(|k| residual_r(prof, 5.0 * q * k as f64 / 2000.0, s).norm())
        .fold(0.0, f64::max)
}

/// θ′ from the P̂₀-projection of the q-equation, with q given on the
/// projector's nodes as a function of y (P̂₀(q) = 0 assumed).
pub fn theta_prime_modulation(prof: &Profile, pr: &Projector, q: &[C64], s: f64) -> f64 {
    let ys = &pr.grid.nodes;
    let mu = prof.c.mu;
    let phi: Vec<C64> = ys.iter().map(|&y| prof.phi(y, s)).collect();
    // L̃q for polynomial q is exact in coefficient space
    let lq = ltilde_poly(pr, q, prof.par.delta);
    let b = nonlinear_b_values(prof, &phi, q);
    let rest: Vec<C64> = (0..ys.len())
        .map(|i| {
            let (v1, v2) = potentials_at(prof, phi[i]);
            lq[i] - C64::i() * (mu / s) * q[i] + v1 * q[i] + v2 * q[i].conj() + b[i]
                + residual_rstar(prof, 0.0, ys[i], s)
        })
        .collect();
    let w: Vec<C64> = (0..ys.len()).map(|i| C64::i() * (phi[i] + q[i])).collect();
    pr.tilde_hat(&rest, 0).1 / pr.tilde_hat(&w, 0).1
}

fn ltilde_poly(pr: &Projector, q: &[C64], delta: f64) -> Vec<C64> {
    let coeffs: Vec<C64> = (0..=pr.mmax).map(|n| pr.q_n(q, n)).collect();
    pr.grid
        .nodes
        .iter()
        .zip(q)
        .map(|(&y, v)| {
            let l0: C64 = coeffs
                .iter()
                .enumerate()
                .map(|(n, c)| c * (-(n as f64) / 2.0 * hermite_unchecked(n, y)))
                .sum();
            l0 + C64::new(1.0, delta) * v.re
        })
        .collect()
}

/// Terms whose projections are scanned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Term {
    Rstar,
    V1q,
    V2qbar,
    /// V₁q + V₂q̄
    Vsum,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Proj {
    Tilde(usize),
    Hat(usize),
}

/// q = Σ s^{−power}(c̃ h̃_n + ĉ ĥ_n).
#[derive(Debug, Clone, Serialize)]
pub struct ModeGen {
    pub modes: Vec<(usize, f64, f64, f64)>,
}

impl ModeGen {
    pub fn eval(&self, delta: f64, y: f64, s: f64) -> C64 {
        self.modes
            .iter()
            .map(|&(n, ct, ch, pw)| {
                let h = hermite_unchecked(n, y);
                s.powf(-pw) * (C64::new(ct, ct * delta) + C64::new(0.0, ch)) * h
            })
            .sum()
    }

    fn tilde2(&self, s: f64) -> f64 {
        self.modes.iter().filter(|m| m.0 == 2).map(|&(_, ct, _, pw)| ct * s.powf(-pw)).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionScan {
    pub term: Term,
    pub projection: Proj,
    pub s_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub predicted_leading: Vec<f64>,
    pub remainder: Vec<f64>,
    pub fit: Option<SlopeFit>,
    pub target_slope: f64,
    /// set when the remainder data were not monotone; no slope is asserted then
    pub degenerate: bool,
}

impl ProjectionScan {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["s", "value", "predicted_leading", "remainder"]);
        for i in 0..self.s_grid.len() {
            t.push(vec![self.s_grid[i], self.values[i], self.predicted_leading[i], self.remainder[i]]);
        }
        t
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// Projects `term` at each s, subtracts the predicted leading part when one
/// is known, and fits the decay exponent of the remainder.
pub fn project_and_fit(
    prof: &Profile,
    term: Term,
    proj: Proj,
    s_grid: &[f64],
    gen: Option<&ModeGen>,
    target_slope: f64,
) -> Result<ProjectionScan> {
    if s_grid.len() < 8 || s_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::InvalidParam("s-grid must be increasing with ≥ 8 points".into()));
    }
    if term != Term::Rstar && gen.is_none() {
        return Err(LabError::InvalidParam("term needs a q generator".into()));
    }
    let n = match proj {
        Proj::Tilde(n) | Proj::Hat(n) => n,
    };
    let pr = Projector::new(160, n.max(8), prof.par.delta)?;
    let (p, d, b) = (prof.par.p, prof.par.delta, prof.c.b);
    let rows: Vec<(f64, f64)> = s_grid
        .par_iter()
        .map(|&s| {
            let ys = &pr.grid.nodes;
            let q: Vec<C64> = match gen {
                Some(g) => ys.iter().map(|&y| g.eval(d, y, s)).collect(),
                None => vec![C64::new(0.0, 0.0); ys.len()],
            };
            let vals: Vec<C64> = match term {
                Term::Rstar => ys.iter().map(|&y| residual_rstar(prof, 0.0, y, s)).collect(),
                Term::V1q | Term::V2qbar | Term::Vsum => ys
                    .iter()
                    .zip(&q)
                    .map(|(&y, &u)| {
                        let (v1, v2) = potentials_v(prof, y, s);
                        match term {
                            Term::V1q => v1 * u,
                            Term::V2qbar => v2 * u.conj(),
                            _ => v1 * u + v2 * u.conj(),
                        }
                    })
                    .collect(),
                Term::B => {
                    let phi: Vec<C64> = ys.iter().map(|&y| prof.phi(y, s)).collect();
                    nonlinear_b_values(prof, &phi, &q)
                }
            };
            let (t, h) = pr.tilde_hat(&vals, n);
            let v = if matches!(proj, Proj::Tilde(_)) { t } else { h };
            let lead = match (term, proj, gen) {
                (Term::V1q, Proj::Hat(0), Some(g)) => {
                    -g.tilde2(s) / s.sqrt() * 4.0 * d * b * (p + 1.0).powi(2) / (p - 1.0).powi(2)
                }
                _ => 0.0,
            };
            (v, lead)
        })
        .collect();
    let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let predicted_leading: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let remainder: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
    let fit = loglog_slope(s_grid, &remainder);
    let degenerate = fit.map(|f| !f.monotone).unwrap_or(true);
    Ok(ProjectionScan {
        term,
        projection: proj,
        s_grid: s_grid.to_vec(),
        values,
        predicted_leading,
        remainder,
        fit,
        target_slope,
        degenerate,
    })
}

/// One row of the residual-rate report.
#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub name: String,
    pub slope: Option<f64>,
    pub target: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Rates checked by the residual scan: sup|R|, |P̃₀(R*)|, |P̃₂(R*)| and the
/// vanishing of the odd projections.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualScanReport {
    pub p: f64,
    pub s_grid: Vec<f64>,
    pub sup_r: Vec<f64>,
    pub p0_tilde: Vec<f64>,
    pub p2_tilde: Vec<f64>,
    pub max_odd: f64,
    pub rows: Vec<RateRow>,
}

impl ResidualScanReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

pub fn residual_scan(prof: &Profile, s_min: f64, s_max: f64, n: usize) -> Result<ResidualScanReport> {
    let s_grid = crate::fit::logspace(s_min, s_max, n);
    let sup: Vec<f64> = s_grid.par_iter().map(|&s| sup_r(prof, s)).collect();
    let p0 = project_and_fit(prof, Term::Rstar, Proj::Tilde(0), &s_grid, None, -1.5)?;
    let p2 = project_and_fit(prof, Term::Rstar, Proj::Tilde(2), &s_grid, None, -2.0)?;
    let pr = Projector::new(160, 8, prof.par.delta)?;
    let max_odd = s_grid
        .par_iter()
        .map(|&s| {
            let v = pr.sample(|y| residual_rstar(prof, 0.0, y, s));
            [1, 3, 5]
                .iter()
                .map(|&j| {
                    let (t, h) = pr.tilde_hat(&v, j);
                    t.abs().max(h.abs())
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let row = |name: &str, fit: Option<SlopeFit>, target: f64, tol: f64| {
        let slope = fit.map(|f| f.slope);
        RateRow {
            name: name.into(),
            slope,
            target,
            tol,
            pass: slope.map(|v| (v - target).abs() <= tol).unwrap_or(false),
        }
    };
    let rows = vec![
        row("sup|R|", loglog_slope(&s_grid, &sup), -0.5, 0.05),
        row("|P~0(R*)|", p0.fit, -1.5, 0.1),
        row("|P~2(R*)|", p2.fit, -2.0, 0.1),
        RateRow { name: "odd projections".into(), slope: None, target: 0.0, tol: 1e-12, pass: max_odd <= 1e-12 },
    ];
    Ok(ResidualScanReport {
        p: prof.par.p,
        s_grid,
        sup_r: sup,
        p0_tilde: p0.values,
        p2_tilde: p2.values,
        max_odd,
        rows,
    })
}

/// Projection rates for model perturbations: P̂₀(V₁q) after its leading
/// term for q = (1+iδ)h₂/s, and P̃ₖ(V₁q + V₂q̄) for k ≤ 2 with a mixed q.
/// Each check passes when the fitted slope is ≤ −1.5.
pub fn projection_suite(prof: &Profile, s_grid: &[f64]) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let g = ModeGen { modes: vec![(2, 1.0, 0.0, 1.0)] };
    let scan = project_and_fit(prof, Term::V1q, Proj::Hat(0), s_grid, Some(&g), -1.5)?;
    out.push(Check::at_most("P^0(V1 q) remainder slope", scan.slope().unwrap_or(f64::NAN), -1.5));
    let g = ModeGen { modes: vec![(2, 1.0, 0.5, 1.0), (0, 1.0, 0.0, 1.5), (1, 1.0, 0.3, 1.5)] };
    for k in 0..=2 {
        let scan = project_and_fit(prof, Term::Vsum, Proj::Tilde(k), s_grid, Some(&g), -1.5)?;
        out.push(Check::at_most(format!("P~{k}(V1 q + V2 qbar) slope"), scan.slope().unwrap_or(f64::NAN), -1.5));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::logspace;

    fn prof() -> Profile {
        Profile::critical(3.0).unwrap()
    }

    #[test]
    fn r_is_even() {
        let pf = prof();
        for s in [10.0, 1e3] {
            for y in [0.3, 2.0, 7.5] {
                assert_eq!(residual_r(&pf, y, s), residual_r(&pf, -y, s));
            }
        }
    }

    #[test]
    fn rstar_definition_and_triangle() {
        let pf = prof();
        let s = 200.0;
        let d = residual_rstar(&pf, 0.0, 1.2, s) - (residual_r(&pf, 1.2, s) - C64::i() * pf.c.mu / s * pf.phi(1.2, s));
        assert!(d.norm() < 1e-15);
        let tp = 3e-4;
        let lhs = residual_rstar(&pf, tp, 0.0, s).norm();
        let rhs = residual_r(&pf, 0.0, s).norm() + (pf.c.mu / s + tp) * pf.phi(0.0, s).norm();
        assert!(lhs <= rhs + 1e-15);
    }

    #[test]
    fn r_matches_difference_quotients() {
        let pf = prof();
        let (y, s, h) = (1.7, 50.0, 1e-4);
        let p = pf.par.p;
        let phi = |y: f64, s: f64| pf.phi(y, s);
        let ps = (phi(y, s + h) - phi(y, s - h)) / (2.0 * h);
        let py = (phi(y + h, s) - phi(y - h, s)) / (2.0 * h);
        let pyy = (phi(y + h, s) - 2.0 * phi(y, s) + phi(y - h, s)) / (h * h);
        let f = phi(y, s);
        let r = -ps + pyy - 0.5 * y * py - pf.one / (p - 1.0) * f + pf.nonlin(f);
        assert!((r - residual_r(&pf, y, s)).norm() < 1e-6);
    }

    #[test]
    fn v1_limit_at_origin() {
        let pf = prof();
        let a = potentials_v(&pf, 0.0, 1e4).0.norm();
        let b = potentials_v(&pf, 0.0, 1e6).0.norm();
        assert!(b < a);
        assert!(((a / b).log10() - 1.0).abs() < 0.02);
    }

    #[test]
    fn v_bounded_by_quadratic_envelope() {
        let pf = prof();
        let r: Vec<(f64, f64)> = [1e2, 1e3, 1e4, 1e5].iter().map(|&s| v_bound_ratio(&pf, s)).collect();
        let m = r.iter().map(|x| x.0.max(x.1)).fold(0.0, f64::max);
        assert!(m < 1.0, "{r:?}");
    }

    #[test]
    fn v_minus_w_is_third_order() {
        for p in [2.0, 3.0, 5.0] {
            let pf = Profile::critical(p).unwrap();
            let w = WCoeffs::new(&pf);
            let ss = logspace(1e3, 1e6, 8);
            let e1: Vec<f64> = ss
                .iter()
                .map(|&s| {
                    let q = s.powf(0.25);
                    (0..=200)
                        .map(|k| {
                            let y = q * k as f64 / 200.0;
                            let (v1, v2) = potentials_v(&pf, y, s);
                            let a = v1 - w.w11(y) / s.sqrt() - w.w12(y) / s;
                            let b = v2 - w.w21(y) / s.sqrt() - w.w22(y) / s;
                            a.norm().max(b.norm()) / (1.0 + y.powi(6))
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            let f = loglog_slope(&ss, &e1).unwrap();
            assert!((f.slope + 1.5).abs() < 0.1, "p={p} slope {}", f.slope);
        }
    }

    #[test]
    fn b_zero_and_quadratic() {
        let pf = prof();
        let ys: Vec<f64> = (0..200).map(|k| -20.0 + 0.2 * k as f64).collect();
        let s = 100.0;
        let zero = vec![C64::new(0.0, 0.0); ys.len()];
        assert!(nonlinear_b(&pf, &ys, &zero, s).unwrap().iter().all(|v| v.norm() == 0.0));
        let k = crate::decomp::default_k(&pf, 4.0);
        let inner: Vec<f64> = ys.iter().copied().filter(|y| y.abs() <= 2.0 * k * s.powf(0.25)).collect();
        let ratio = |eps: f64| {
            let q = vec![C64::new(eps, 0.0); inner.len()];
            nonlinear_b(&pf, &inner, &q, s).unwrap().iter().map(|v| v.norm()).fold(0.0, f64::max) / (eps * eps)
        };
        let (r2, r3, r4) = (ratio(1e-2), ratio(1e-3), ratio(1e-4));
        assert!((r3 - r4).abs() / r4 < 0.01 && (r2 - r3).abs() / r3 < 0.1, "{r2} {r3} {r4}");
        let big = vec![C64::new(2.0, 0.0); ys.len()];
        assert!(nonlinear_b(&pf, &ys, &big, s).is_err());
    }

    #[test]
    fn b_q2_squared_has_no_p2_component_at_kappa() {
        for p in [1.5, 2.0, 3.0, 5.0] {
            let pf = Profile::critical(p).unwrap();
            let pr = Projector::default_for(pf.par.delta);
            let phi = vec![C64::new(pf.c.kappa, 0.0); pr.grid.len()];
            let f = |eps: f64| {
                let q = pr.sample(|y| pf.one * eps * (y * y - 2.0));
                pr.tilde_hat(&nonlinear_b_values(&pf, &phi, &q), 2).0
            };
            // even part kills odd orders; Richardson removes ε⁴
            let g = |e: f64| 0.5 * (f(e) + f(-e));
            let e = 2e-4;
            let c2 = (16.0 * g(e) - g(2.0 * e)) / (12.0 * e * e);
            assert!(c2.abs() <= 1e-6, "p={p} c2={c2}");
        }
    }

    #[test]
    fn required_m_at_p3() {
        let (vmax, m) = required_m(&prof());
        assert!((vmax - 2.0).abs() < 1e-12);
        assert_eq!(m, 28);
    }

    #[test]
    fn odd_projections_vanish() {
        let pf = prof();
        let pr = Projector::default_for(pf.par.delta);
        for s in [1e2, 1e4] {
            let v = pr.sample(|y| residual_rstar(&pf, 0.0, y, s));
            for j in [1, 3, 5] {
                let (t, h) = pr.tilde_hat(&v, j);
                assert!(t.abs() <= 1e-12 && h.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn v1q_hat0_leading_term() {
        let pf = prof();
        let g = ModeGen { modes: vec![(2, 1.0, 0.0, 1.0)] };
        let ss = logspace(1e2, 1e5, 10);
        let scan = project_and_fit(&pf, Term::V1q, Proj::Hat(0), &ss, Some(&g), -1.5).unwrap();
        assert!(scan.slope().unwrap() <= -1.5, "{:?}", scan.fit);
    }

    #[test]
    fn potential_sum_improves() {
        let pf = prof();
        let ss = logspace(1e2, 1e5, 10);
        let g = ModeGen { modes: vec![(2, 1.0, 0.5, 1.0), (0, 1.0, 0.0, 1.5), (1, 1.0, 0.3, 1.5)] };
        for k in 0..=2 {
            let scan = project_and_fit(&pf, Term::Vsum, Proj::Tilde(k), &ss, Some(&g), -1.5).unwrap();
            assert!(scan.slope().unwrap() <= -1.5, "k={k} {:?}", scan.fit);
        }
    }

    #[test]
    fn modulation_relation_leading_term() {
        let pf = prof();
        let pr = Projector::default_for(pf.par.delta);
        let (p, d, b, k) = (3.0, pf.par.delta, pf.c.b, pf.c.kappa);
        let ss = logspace(1e2, 1e5, 8);
        let rel: Vec<f64> = ss
            .iter()
            .map(|&s| {
                let q2 = 1.0 / s;
                let q = pr.sample(|y| pf.one * q2 * (y * y - 2.0));
                let zero = vec![C64::new(0.0, 0.0); pr.grid.len()];
                let dt = theta_prime_modulation(&pf, &pr, &q, s) - theta_prime_modulation(&pf, &pr, &zero, s);
                // θ′κ ≈ −16δb(p+1)/(p−1)²·q̃₂/√s
                let pred = -16.0 * d * b * (p + 1.0) / (p - 1.0).powi(2) * q2 / s.sqrt() / k;
                (dt - pred) / pred
            })
            .collect();
        let f = loglog_slope(&ss, &rel).unwrap();
        assert!(f.slope < -0.4, "{rel:?}");
    }

    #[test]
    fn scan_rejects_short_grid() {
        let pf = prof();
        assert!(project_and_fit(&pf, Term::Rstar, Proj::Tilde(0), &[1e2, 1e3], None, -1.5).is_err());
    }
}
