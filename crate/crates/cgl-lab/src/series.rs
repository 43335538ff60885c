//! Formal expansions in e = s^{−1/2} with polynomial coefficients in y, and
//! the coefficient identities checked against them.
//!
//! A series holds c[j][k], the coefficient of e^j y^k, truncated at j ≤ J and
//! k ≤ D. Since z² = y²e, the profile φ₀(y s^{−1/4}) is a series of this
//! kind with y-degree 2j at order j, so D ≥ 2J keeps it exact.

use crate::params::Profile;
use crate::residual::WCoeffs;
use crate::{LabError, Result, C64};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct TruncSeries {
    j_cap: usize,
    d_cap: usize,
    c: Vec<Vec<C64>>,
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

impl TruncSeries {
    pub fn zeros(j_cap: usize, d_cap: usize) -> Self {
        Self { j_cap, d_cap, c: vec![vec![zero(); d_cap + 1]; j_cap + 1] }
    }

    pub fn constant(j_cap: usize, d_cap: usize, v: C64) -> Self {
        Self::monomial(j_cap, d_cap, 0, 0, v)
    }

    /// v e^j y^k, or zero if outside the caps.
    pub fn monomial(j_cap: usize, d_cap: usize, j: usize, k: usize, v: C64) -> Self {
        let mut s = Self::zeros(j_cap, d_cap);
        if j <= j_cap && k <= d_cap {
            s.c[j][k] = v;
        }
        s
    }

    /// Σ_j e^j · poly_j(y) from explicit per-order polynomials.
    pub fn from_orders(j_cap: usize, d_cap: usize, orders: &[Vec<C64>]) -> Self {
        let mut s = Self::zeros(j_cap, d_cap);
        for (j, poly) in orders.iter().enumerate().take(j_cap + 1) {
            for (k, v) in poly.iter().enumerate().take(d_cap + 1) {
                s.c[j][k] = *v;
            }
        }
        s
    }

    pub fn caps(&self) -> (usize, usize) {
        (self.j_cap, self.d_cap)
    }

    pub fn coeff(&self, j: usize, k: usize) -> C64 {
        if j <= self.j_cap && k <= self.d_cap {
            self.c[j][k]
        } else {
            zero()
        }
    }

    /// Polynomial in y multiplying e^j.
    pub fn order(&self, j: usize) -> &[C64] {
        &self.c[j]
    }

    fn check(&self, o: &Self) -> Result<()> {
        if self.caps() != o.caps() {
            return Err(LabError::GridMismatch(format!(
                "series caps {:?} vs {:?}",
                self.caps(),
                o.caps()
            )));
        }
        Ok(())
    }

    fn zip(&self, o: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        self.check(o)?;
        let mut r = self.clone();
        for (rj, oj) in r.c.iter_mut().zip(&o.c) {
            for (x, y) in rj.iter_mut().zip(oj) {
                *x = f(*x, *y);
            }
        }
        Ok(r)
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.zip(o, |a, b| a + b)
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.zip(o, |a, b| a - b)
    }

    pub fn mul(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        let mut r = Self::zeros(self.j_cap, self.d_cap);
        for j1 in 0..=self.j_cap {
            for j2 in 0..=self.j_cap - j1 {
                for k1 in 0..=self.d_cap {
                    let a = self.c[j1][k1];
                    if a == zero() {
                        continue;
                    }
                    for k2 in 0..=self.d_cap - k1 {
                        r.c[j1 + j2][k1 + k2] += a * o.c[j2][k2];
                    }
                }
            }
        }
        Ok(r)
    }

    pub fn scale(&self, v: C64) -> Self {
        let mut r = self.clone();
        r.c.iter_mut().flatten().for_each(|x| *x *= v);
        r
    }

    pub fn conj(&self) -> Self {
        let mut r = self.clone();
        r.c.iter_mut().flatten().for_each(|x| *x = x.conj());
        r
    }

    /// u^γ for complex γ. The e⁰ part of u must be a nonzero constant; the
    /// remainder is then nilpotent under truncation and the binomial series
    /// is finite. The principal branch is used for the constant.
    pub fn cpow(&self, gamma: C64) -> Result<Self> {
        let c0 = self.c[0][0];
        if c0 == zero() || self.c[0][1..].iter().any(|v| *v != zero()) {
            return Err(LabError::Degenerate("cpow needs a constant, nonzero e^0 part".into()));
        }
        let mut w = self.scale(1.0 / c0);
        w.c[0][0] = zero();
        let mut acc = Self::constant(self.j_cap, self.d_cap, C64::new(1.0, 0.0));
        let mut wk = acc.clone();
        let mut binom = C64::new(1.0, 0.0);
        for k in 1..=self.j_cap {
            wk = wk.mul(&w)?;
            binom = binom * (gamma - (k - 1) as f64) / k as f64;
            acc = acc.add(&wk.scale(binom))?;
        }
        Ok(acc.scale(c0.powc(gamma)))
    }

    /// |u|^m = (u ū)^{m/2}.
    pub fn abs_pow(&self, m: f64) -> Result<Self> {
        self.mul(&self.conj())?.cpow(C64::new(m / 2.0, 0.0))
    }

    /// ∂_y.
    pub fn dy(&self) -> Self {
        let mut r = Self::zeros(self.j_cap, self.d_cap);
        for j in 0..=self.j_cap {
            for k in 1..=self.d_cap {
                r.c[j][k - 1] = self.c[j][k] * k as f64;
            }
        }
        r
    }

    /// y·u; the top y-degree drops out.
    pub fn mul_y(&self) -> Self {
        let mut r = Self::zeros(self.j_cap, self.d_cap);
        for j in 0..=self.j_cap {
            for k in 0..self.d_cap {
                r.c[j][k + 1] = self.c[j][k];
            }
        }
        r
    }

    /// e^n·u.
    pub fn shift(&self, n: usize) -> Self {
        let mut r = Self::zeros(self.j_cap, self.d_cap);
        for j in 0..=self.j_cap.saturating_sub(n) {
            r.c[j + n] = self.c[j].clone();
        }
        r
    }

    /// ∂_s at fixed y, using ∂_s e^j = −(j/2) e^{j+2}.
    pub fn ds(&self) -> Self {
        let mut r = Self::zeros(self.j_cap, self.d_cap);
        for j in 1..=self.j_cap.saturating_sub(2) {
            for k in 0..=self.d_cap {
                r.c[j + 2][k] = self.c[j][k] * (-(j as f64) / 2.0);
            }
        }
        r
    }

    pub fn eval(&self, y: f64, s: f64) -> C64 {
        let e = s.powf(-0.5);
        let mut acc = zero();
        for j in (0..=self.j_cap).rev() {
            acc = acc * e + eval_poly(&self.c[j], y);
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

pub fn eval_poly(poly: &[C64], y: f64) -> C64 {
    poly.iter().rev().fold(zero(), |acc, v| acc * y + v)
}

/// φ₀(y s^{−1/4}) = κ(1 + b y² e/(p−1))^{−(1+iδ)/(p−1)}.
pub fn phi0_series(prof: &Profile, j_cap: usize, d_cap: usize) -> Result<TruncSeries> {
    check_caps(j_cap, d_cap, 1)?;
    let p = prof.par.p;
    let mut u = TruncSeries::constant(j_cap, d_cap, C64::new(1.0, 0.0));
    u.c[1][2] = C64::new(prof.c.b / (p - 1.0), 0.0);
    Ok(u.cpow(prof.g)?.scale(C64::new(prof.c.kappa, 0.0)))
}

/// φ = φ₀ + a(1+iδ)e.
pub fn phi_series(prof: &Profile, j_cap: usize, d_cap: usize) -> Result<TruncSeries> {
    let f0 = phi0_series(prof, j_cap, d_cap)?;
    f0.add(&TruncSeries::monomial(j_cap, d_cap, 1, 0, prof.one * prof.c.a))
}

/// F(u) = (1+iδ)|u|^{p−1}u.
pub fn nonlin_series(prof: &Profile, u: &TruncSeries) -> Result<TruncSeries> {
    Ok(u.abs_pow(prof.par.p - 1.0)?.mul(u)?.scale(prof.one))
}

fn check_caps(j_cap: usize, d_cap: usize, j_min: usize) -> Result<()> {
    if j_cap < j_min || d_cap < 2 * j_cap {
        return Err(LabError::InvalidParam(format!(
            "series caps J={j_cap}, D={d_cap}: need J >= {j_min} and D >= 2J"
        )));
    }
    Ok(())
}

/// R* with θ′ = 0 and the given μ, from the definition
/// −∂_sφ + ∂²_yφ − ½y∂_yφ − (1+iδ)/(p−1)φ + F(φ) − iμe²φ.
pub fn rstar_series(prof: &Profile, mu: f64, j_cap: usize, d_cap: usize) -> Result<TruncSeries> {
    check_caps(j_cap, d_cap, 3)?;
    let phi = phi_series(prof, j_cap, d_cap)?;
    let p = prof.par.p;
    let lin = phi
        .ds()
        .scale(C64::new(-1.0, 0.0))
        .add(&phi.dy().dy())?
        .sub(&phi.dy().mul_y().scale(C64::new(0.5, 0.0)))?
        .sub(&phi.scale(prof.one / (p - 1.0)))?;
    lin.add(&nonlin_series(prof, &phi)?)?
        .sub(&phi.shift(2).scale(C64::new(0.0, mu)))
}

/// The θ′ channel: R*(θ′) = R*(0) + θ′·(−iφ).
pub fn theta_channel(prof: &Profile, j_cap: usize, d_cap: usize) -> Result<TruncSeries> {
    Ok(phi_series(prof, j_cap, d_cap)?.scale(C64::new(0.0, -1.0)))
}

/// The summands of R* written in the profile variable z, with θ′ = 0:
/// ¼(z/s)∇φ₀, ½a(1+iδ)e³, Δφ₀/√s, −a(1+iδ)²e/(p−1), F(φ) − F(φ₀), −iμe²φ.
pub fn rstar_summands(
    prof: &Profile,
    mu: f64,
    j_cap: usize,
    d_cap: usize,
) -> Result<Vec<(&'static str, TruncSeries)>> {
    check_caps(j_cap, d_cap, 3)?;
    let f0 = phi0_series(prof, j_cap, d_cap)?;
    let phi = phi_series(prof, j_cap, d_cap)?;
    let (a, p, one) = (prof.c.a, prof.par.p, prof.one);
    let mono = |j, v| TruncSeries::monomial(j_cap, d_cap, j, 0, v);
    Ok(vec![
        ("z_grad", f0.dy().mul_y().shift(2).scale(C64::new(0.25, 0.0))),
        ("a_shift", mono(3, one * (0.5 * a))),
        ("laplacian", f0.dy().dy()),
        ("a_linear", mono(1, -one * one * (a / (p - 1.0)))),
        ("nonlinear", nonlin_series(prof, &phi)?.sub(&nonlin_series(prof, &f0)?)?),
        ("mu", phi.shift(2).scale(C64::new(0.0, -mu))),
    ])
}

/// V₁ = (1+iδ)(p+1)/2·(|φ|^{p−1} − 1/(p−1)) (which = 1) or
/// V₂ = (1+iδ)(p−1)/2·(|φ|^{p−3}φ² − 1/(p−1)) (which = 2).
pub fn potential_series(prof: &Profile, which: u8, j_cap: usize, d_cap: usize) -> Result<TruncSeries> {
    check_caps(j_cap, d_cap, 1)?;
    let p = prof.par.p;
    let phi = phi_series(prof, j_cap, d_cap)?;
    let base = TruncSeries::constant(j_cap, d_cap, C64::new(1.0 / (p - 1.0), 0.0));
    match which {
        1 => Ok(phi.abs_pow(p - 1.0)?.sub(&base)?.scale(prof.one * ((p + 1.0) / 2.0))),
        2 => Ok(phi
            .abs_pow(p - 3.0)?
            .mul(&phi.mul(&phi)?)?
            .sub(&base)?
            .scale(prof.one * ((p - 1.0) / 2.0))),
        _ => Err(LabError::InvalidParam(format!("no potential V{which}"))),
    }
}

// Polynomial Hermite projections, exact up to round-off.

/// Monomial coefficients of h_n (h_{n+1} = y h_n − 2n h_{n−1}).
pub fn hermite_coeffs(n: usize) -> Vec<f64> {
    let mut prev = vec![1.0];
    if n == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for m in 1..n {
        let mut next = vec![0.0; m + 2];
        for (k, v) in cur.iter().enumerate() {
            next[k + 1] += v;
        }
        for (k, v) in prev.iter().enumerate() {
            next[k] -= 2.0 * m as f64 * v;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// ∫ y^k ρ dy: k!/(k/2)! for even k.
fn moment(k: usize) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    ((k / 2 + 1)..=k).map(|i| i as f64).product()
}

/// Q_n = ∫ f h_n ρ / ∫ h_n² ρ for a polynomial f.
pub fn poly_q(poly: &[C64], n: usize) -> C64 {
    let h = hermite_coeffs(n);
    let mut acc = zero();
    for (k, v) in poly.iter().enumerate() {
        for (l, hl) in h.iter().enumerate() {
            acc += v * (hl * moment(k + l));
        }
    }
    acc / crate::hermite::hermite_norm2(n)
}

pub fn poly_tilde(poly: &[C64], n: usize) -> f64 {
    poly_q(poly, n).re
}

pub fn poly_hat(poly: &[C64], n: usize, delta: f64) -> f64 {
    let q = poly_q(poly, n);
    q.im - delta * q.re
}

pub fn poly_mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut r = vec![zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            r[i + j] += x * y;
        }
    }
    r
}

fn h_poly(n: usize, scale: C64) -> Vec<C64> {
    hermite_coeffs(n).into_iter().map(|v| scale * v).collect()
}

// Identity report.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityStatus {
    /// The written value matches the computed one.
    Holds,
    /// The written value fails and the corrected value matches.
    Corrected,
    /// Neither matches.
    Mismatch,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub group: &'static str,
    pub name: String,
    pub p: f64,
    pub written_re: f64,
    pub written_im: f64,
    pub computed_re: f64,
    pub computed_im: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub corrected_err: Option<f64>,
    pub status: IdentityStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub p: f64,
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn mismatches(&self) -> Vec<&IdentityCheck> {
        self.checks.iter().filter(|c| c.status == IdentityStatus::Mismatch).collect()
    }

    pub fn corrected(&self) -> Vec<&IdentityCheck> {
        self.checks.iter().filter(|c| c.status == IdentityStatus::Corrected).collect()
    }

    pub fn pass(&self) -> bool {
        self.mismatches().is_empty()
    }

    pub fn find(&self, name: &str) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const IDENTITY_TOL: f64 = 1e-12;

fn close(a: C64, b: C64) -> bool {
    (a - b).norm() <= IDENTITY_TOL * (1e-3 + a.norm().max(b.norm()))
}

struct Collector {
    p: f64,
    out: Vec<IdentityCheck>,
}

impl Collector {
    fn push(&mut self, group: &'static str, name: &str, written: C64, computed: C64, corrected: Option<C64>) {
        self.push_with(group, name, written, computed, corrected, &close)
    }

    fn push_with(
        &mut self,
        group: &'static str,
        name: &str,
        written: C64,
        computed: C64,
        corrected: Option<C64>,
        close: &dyn Fn(C64, C64) -> bool,
    ) {
        let err = (written - computed).norm();
        let corrected_err = corrected.map(|c| (c - computed).norm());
        let status = if close(written, computed) {
            IdentityStatus::Holds
        } else if corrected.is_some_and(|c| close(c, computed)) {
            IdentityStatus::Corrected
        } else {
            IdentityStatus::Mismatch
        };
        self.out.push(IdentityCheck {
            group,
            name: name.to_string(),
            p: self.p,
            written_re: written.re,
            written_im: written.im,
            computed_re: computed.re,
            computed_im: computed.im,
            abs_err: err,
            rel_err: err / computed.norm().max(1e-300),
            corrected_err,
            status,
        });
    }
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Checks every written expansion coefficient and projection value against
/// the series and polynomial computations at the given p.
pub fn identity_report(prof: &Profile) -> Result<IdentityReport> {
    let (jc, dc) = (3, 8);
    let p = prof.par.p;
    let d = prof.par.delta;
    let (k, a, b, mu) = (prof.c.kappa, prof.c.a, prof.c.b, prof.c.mu);
    let i = C64::i();
    let one = prof.one;
    let pm = p - 1.0;
    let mut col = Collector { p, out: Vec::new() };

    // φ₀/κ.
    let f0 = phi0_series(prof, jc, dc)?.scale(re(1.0 / k));
    let y6 = d * (p + 1.0) * b.powi(3) / (6.0 * pm.powi(6)) * C64::new(d, -(2.0 * p - 1.0));
    col.push("phi0", "phi0 e1y2", -one * b / pm.powi(2), f0.coeff(1, 2), None);
    col.push("phi0", "phi0 e2y4", i * d * (p + 1.0) * b * b / (2.0 * pm.powi(4)), f0.coeff(2, 4), None);
    col.push("phi0", "phi0 e3y6", y6, f0.coeff(3, 6), None);
    let y6_alt = -d * (1.0 + p) * b.powi(3) / (6.0 * pm.powi(6)) * C64::new(d, 1.0 - 2.0 * p);
    col.push("phi0", "phi0 e3y6 (second form)", y6_alt, f0.coeff(3, 6), Some(y6));

    // |φ|^{p−1}/κ^{p−1}.
    let phi = phi_series(prof, jc, dc)?;
    let m1 = phi.abs_pow(p - 1.0)?.scale(re(k.powf(1.0 - p)));
    let g = "abs_phi_pm1";
    col.push(g, "|phi|^(p-1) e1", re(pm * a / k), m1.coeff(1, 0), None);
    col.push(g, "|phi|^(p-1) e2", re(a * a * pm * pm / (k * k)), m1.coeff(2, 0), None);
    col.push(g, "|phi|^(p-1) e1y2", re(-b / pm), m1.coeff(1, 2), None);
    col.push(
        g,
        "|phi|^(p-1) e3",
        re(a.powi(3) * pm * (p - 3.0) * (2.0 * p - 1.0) / (3.0 * k.powi(3))),
        m1.coeff(3, 0),
        None,
    );
    col.push(g, "|phi|^(p-1) e2y2", re(-2.0 * a * b / k), m1.coeff(2, 2), None);
    col.push(
        g,
        "|phi|^(p-1) e3y2",
        re(a * a * b * (p - 3.0) * (1.0 - 2.0 * p) / (k * k * pm)),
        m1.coeff(3, 2),
        None,
    );
    col.push(g, "|phi|^(p-1) e2y4", re(b * b / pm.powi(2)), m1.coeff(2, 4), None);
    let ab2 = a * b * b / (2.0 * k * pm.powi(3));
    col.push(
        g,
        "|phi|^(p-1) e3y4 (bracket form)",
        re(ab2 * ((p + 1.0) * (p - 2.0) + 2.0 * pm * (p - 3.0) + 2.0 * pm * pm)),
        m1.coeff(3, 4),
        None,
    );
    col.push(g, "|phi|^(p-1) e3y4 (factored form)", re(ab2 * (p - 2.0) * (5.0 * p - 3.0)), m1.coeff(3, 4), None);
    let t6 = re(-b.powi(3) / pm.powi(3));
    col.push(g, "|phi|^(p-1) e3y6", t6, m1.coeff(3, 6), None);
    col.push(g, "|phi|^(p-1) e3y6 (second form)", t6 / 6.0, m1.coeff(3, 6), Some(t6));

    // |φ|^{p−3}/κ^{p−3}.
    let m3 = phi.abs_pow(p - 3.0)?.scale(re(k.powf(3.0 - p)));
    let g = "abs_phi_pm3";
    col.push(g, "|phi|^(p-3) e1", re(a * (p - 3.0) / k), m3.coeff(1, 0), None);
    col.push(g, "|phi|^(p-3) e2", re(a * a * (p - 3.0) * (p - 2.0) / (k * k)), m3.coeff(2, 0), None);
    col.push(
        g,
        "|phi|^(p-3) e3",
        re(2.0 / 3.0 * a.powi(3) * pm * (p - 3.0) * (p - 5.0) / k.powi(3)),
        m3.coeff(3, 0),
        None,
    );
    col.push(g, "|phi|^(p-3) e1y2", re(-b * (p - 3.0) / pm.powi(2)), m3.coeff(1, 2), None);
    col.push(
        g,
        "|phi|^(p-3) e2y2",
        re(-2.0 * a * b * (p - 3.0) * (p - 2.0) / (k * pm.powi(2))),
        m3.coeff(2, 2),
        None,
    );
    col.push(g, "|phi|^(p-3) e2y4", re(b * b * (p - 3.0) * (p - 2.0) / pm.powi(4)), m3.coeff(2, 4), None);
    let c34 = a * b * b * (p - 3.0) / (2.0 * k * pm.powi(4));
    col.push(
        g,
        "|phi|^(p-3) e3y4",
        re(c34 * (p - 3.0) * (4.0 * p - 5.0)),
        m3.coeff(3, 4),
        Some(re(c34 * (5.0 * p * p - 23.0 * p + 20.0))),
    );
    col.push(
        g,
        "|phi|^(p-3) e3y6",
        re(-b.powi(3) * (p - 2.0) * (p - 3.0) * (3.0 * p - 5.0) / (3.0 * pm.powi(6))),
        m3.coeff(3, 6),
        None,
    );

    // φ²/κ².
    let sq = phi.mul(&phi)?.scale(re(1.0 / (k * k)));
    let g = "phi_squared";
    col.push(g, "phi^2 e1", 2.0 * a * one / k, sq.coeff(1, 0), None);
    col.push(g, "phi^2 e2", C64::new(1.0 - p, 2.0 * d) * a * a / (k * k), sq.coeff(2, 0), None);
    col.push(g, "phi^2 e1y2", -2.0 * b * one / pm.powi(2), sq.coeff(1, 2), None);
    col.push(
        g,
        "phi^2 e2y2",
        -2.0 * a * b * C64::new(1.0 - p, 2.0 * d) / (k * pm.powi(2)),
        sq.coeff(2, 2),
        None,
    );
    col.push(g, "phi^2 e2y4", C64::new(1.0 - p, d * (p + 3.0)) * b * b / pm.powi(4), sq.coeff(2, 4), None);
    col.push(
        g,
        "phi^2 e3y4",
        a * b * b * (p + 1.0) * C64::new(-p, d) / (k * pm.powi(4)),
        sq.coeff(3, 4),
        None,
    );
    let c36 = 2.0 / 3.0 * b.powi(3) * (p + 1.0) / pm.powi(6);
    col.push(
        g,
        "phi^2 e3y6",
        c36 * C64::new(p, d * (p - 2.0)),
        sq.coeff(3, 6),
        Some(c36 * C64::new(2.0 * p, -d * (p + 1.0))),
    );

    // F(φ₀)/((1+iδ)κ^p) = (1 + b y² e/(p−1))^{γ−1}.
    let ff = nonlin_series(prof, &phi0_series(prof, jc, dc)?)?.scale(1.0 / (one * k.powf(p)));
    let g = "f_phi0";
    let pd = C64::new(p, d);
    col.push(g, "F(phi0) e1y2", -b * pd / pm.powi(2), ff.coeff(1, 2), None);
    col.push(
        g,
        "F(phi0) e2y4",
        b * b * (i * d * (p + 1.0) / (2.0 * pm.powi(4)) + 1.0 / pm.powi(2) + one / pm.powi(3)),
        ff.coeff(2, 4),
        None,
    );
    let written = -b.powi(3)
        * (1.0 / pm.powi(3) + d * (1.0 + p) * C64::new(d, 1.0 - 2.0 * p) / (6.0 * pm.powi(6))
            + i * d * (p + 1.0) / (2.0 * pm.powi(5))
            + one / pm.powi(4));
    let exact = -b.powi(3) * pd * C64::new(2.0 * p - 1.0, d) * C64::new(3.0 * p - 2.0, d) / (6.0 * pm.powi(6));
    col.push(g, "F(phi0) e3y6", written, ff.coeff(3, 6), Some(exact));

    // Summands of R*.
    let parts = rstar_summands(prof, mu, jc, dc)?;
    let part = |name: &str| parts.iter().find(|(n, _)| *n == name).map(|(_, s)| s.clone()).unwrap();
    let zg = part("z_grad");
    let lap = part("laplacian");
    let g = "rstar_parts";
    col.push(g, "z_grad e3y2", -0.5 * k * one * b / pm.powi(2), zg.coeff(3, 2), None);
    col.push(g, "laplacian e1", -2.0 * k * one * b / pm.powi(2), lap.coeff(1, 0), None);
    let l22 = i * 6.0 * k * b * b * d * (p + 1.0);
    col.push(g, "laplacian e2y2", l22 / pm.powi(2), lap.coeff(2, 2), Some(l22 / pm.powi(4)));
    col.push(
        g,
        "laplacian e3y4",
        5.0 * k * b.powi(3) * d * (p + 1.0) / pm.powi(6) * C64::new(d, -(2.0 * p - 1.0)),
        lap.coeff(3, 4),
        None,
    );

    // Order table of R*.
    let rs = rstar_series(prof, mu, jc, dc)?;
    let g = "rstar_orders";
    let mut sum = TruncSeries::zeros(jc, dc);
    for (_, s) in &parts {
        sum = sum.add(s)?;
    }
    let gap = sum.sub(&rs)?.max_abs();
    col.push(g, "summands minus definition", zero(), re(gap), None);
    col.push(g, "R* e1", one * (a - 2.0 * k * b / pm.powi(2)), rs.coeff(1, 0), None);
    col.push(g, "R* e1y2", zero(), rs.coeff(1, 2), None);
    col.push(g, "R* e2", i * (a * a * d * (1.0 + p) / k - mu * k), rs.coeff(2, 0), None);
    col.push(
        g,
        "R* e2y2",
        i * (6.0 * k * d * b * b * (p + 1.0) / pm.powi(4) - 2.0 * a * b * d * (p + 1.0) / pm.powi(2)),
        rs.coeff(2, 2),
        None,
    );
    col.push(g, "R* e2y4", zero(), rs.coeff(2, 4), None);
    let t = a.powi(3) * (p - 3.0) * (2.0 * p - 1.0) / (3.0 * k * k);
    let written = C64::new(a * (0.5 + mu * d) + t, d * t - mu * a);
    let fixed = written + i * (0.5 * a * d) + one * one * (pm * a.powi(3) / (k * k));
    col.push(g, "R* e3", written, rs.coeff(3, 0), Some(fixed));
    let kb = k * b / pm.powi(2);
    let a2b = a * a * b / (k * pm.powi(2));
    col.push(
        g,
        "R* e3y2",
        C64::new(
            kb * (-0.5 - mu * d) + a2b * p * (p + 1.0),
            kb * (-d / 2.0 + mu) + a2b * d * (-2.0 * p * p + p + 3.0),
        ),
        rs.coeff(3, 2),
        None,
    );
    let kb3 = k * b.powi(3) / pm.powi(6);
    let ab2 = a * b * b / pm.powi(4);
    col.push(
        g,
        "R* e3y4",
        C64::new(
            kb3 * 5.0 * p * (p + 1.0) - ab2 * p * (p + 1.0),
            d * (kb3 * 5.0 * (1.0 - 2.0 * p) + ab2 * (5.0 * p * p - 5.0)),
        ),
        rs.coeff(3, 4),
        Some(kb3 * p * (p + 1.0) * C64::new(3.0, -5.0 * d)),
    );
    col.push(g, "R* e3y6", zero(), rs.coeff(3, 6), None);

    // Q₀ of the 1/s coefficient with μ replaced by μ′ ≠ μ.
    let mu_p = 1.37 * mu + 0.01;
    let rs_p = rstar_series(prof, mu_p, jc, dc)?;
    let bracket = a * a * (1.0 + p) / (k * k) - mu_p / d + 12.0 * b * b * (p + 1.0) / pm.powi(4)
        - 4.0 * a * b * (p + 1.0) / (k * pm.powi(2));
    col.push(g, "Q0 of R* e2 (perturbed mu)", i * k * d * bracket, poly_q(rs_p.order(2), 0), None);
    col.push(g, "Q0 of R* e2", zero(), poly_q(rs.order(2), 0), None);

    // Potentials against their W expansions.
    let w = WCoeffs::new(prof);
    let v1 = potential_series(prof, 1, jc, dc)?;
    let v2 = potential_series(prof, 2, jc, dc)?;
    let g = "potentials";
    for y in [0.0, 0.7, 1.9, 3.1] {
        col.push(g, &format!("V1 e1 = W11 at y={y}"), w.w11(y), eval_poly(v1.order(1), y), None);
        col.push(g, &format!("V1 e2 = W12 at y={y}"), w.w12(y), eval_poly(v1.order(2), y), None);
        col.push(g, &format!("V2 e1 = W21 at y={y}"), w.w21(y), eval_poly(v2.order(1), y), None);
        let printed = w.w22(y) * pm;
        col.push(g, &format!("V2 e2 = W22 at y={y}"), printed, eval_poly(v2.order(2), y), Some(w.w22(y)));
    }
    col.push(g, "V1 e0", zero(), re(v1.order(0).iter().map(|v| v.norm()).sum()), None);
    col.push(g, "V2 e0", zero(), re(v2.order(0).iter().map(|v| v.norm()).sum()), None);

    // Projections of W_{i,j} against Hermite modes, normalized by ∫h_n²ρ.
    let w11 = v1.order(1).to_vec();
    let w12 = v1.order(2).to_vec();
    let w21 = v2.order(1).to_vec();
    let w22 = v2.order(2).to_vec();
    let ht2 = h_poly(2, one);
    let ht2c = h_poly(2, one.conj());
    let g = "projections";
    let bp = b * (p + 1.0);
    let x = poly_mul(&w11, &ht2);
    col.push(g, "Q2(W11 h~2)", -4.0 * one * one * bp / pm.powi(2), poly_q(&x, 2), None);
    col.push(g, "P~2(W11 h~2)", re(4.0 * bp / pm), re(poly_tilde(&x, 2)), None);
    col.push(g, "Q0(W11 h~2)", -4.0 * C64::new(1.0 - p, 2.0 * d) * bp / pm.powi(2), poly_q(&x, 0), None);
    let ph0_11 = -4.0 * d * bp * (p + 1.0) / pm.powi(2);
    col.push(g, "P^0(W11 h~2)", re(ph0_11), re(poly_hat(&x, 0, d)), None);
    let x = poly_mul(&w12, &ht2);
    col.push(g, "Q2(W12 h~2)", 60.0 * one * one * b * bp / pm.powi(3), poly_q(&x, 2), None);
    col.push(g, "P~2(W12 h~2)", re(-60.0 * b * bp / pm.powi(2)), re(poly_tilde(&x, 2)), None);
    let x = poly_mul(&w21, &ht2c);
    col.push(g, "Q2(W21 conj h~2)", -4.0 * C64::new(pm, 2.0 * d) * bp / pm.powi(2), poly_q(&x, 2), None);
    col.push(g, "P~2(W21 conj h~2)", re(-4.0 * bp / pm), re(poly_tilde(&x, 2)), None);
    col.push(g, "Q0(W21 conj h~2)", -4.0 * C64::new(pm, 2.0 * d) * bp / pm.powi(2), poly_q(&x, 0), None);
    let ph0_21 = 4.0 * d * bp * (p - 3.0) / pm.powi(2);
    // Vanishes at p = 3; measure against the p-independent prefactor.
    let scale = (4.0 * d * bp / pm.powi(2)).abs().max(ph0_21.abs());
    col.push_with(
        g,
        "P^0(W21 conj h~2)",
        re(ph0_21),
        re(poly_hat(&x, 0, d)),
        None,
        &|a, b| (a - b).norm() <= IDENTITY_TOL * scale,
    );
    col.push(
        g,
        "P^0 sum for the phase equation",
        re(-16.0 * d * bp / pm.powi(2)),
        re(ph0_11 + ph0_21),
        None,
    );
    let x = poly_mul(&w22, &ht2c);
    let q = 60.0 * bp * b * (p * p - 4.0 * p + 1.0);
    col.push(
        g,
        "P~2(W22 conj h~2)",
        re(q / (2.0 * pm.powi(3))),
        re(poly_tilde(&x, 2)),
        Some(re(q / pm.powi(4))),
    );

    // Products of h₂.
    let h2 = h_poly(2, re(1.0));
    let h23 = poly_mul(&poly_mul(&h2, &h2), &h2);
    let g = "hermite_products";
    col.push(g, "P~2(h2^3)", re(120.0), re(poly_tilde(&h23, 2)), None);
    let x = poly_mul(&poly_mul(&ht2, &ht2), &h2);
    col.push(g, "P~2(h~2^2 h2)", re(120.0 * (1.0 - p)), re(poly_tilde(&x, 2)), None);
    let x = poly_mul(&poly_mul(&ht2, &ht2), &ht2);
    col.push(g, "P~2(h~2^3)", re(120.0), re(poly_tilde(&x, 2)), Some(re(120.0 * (1.0 - 3.0 * p))));
    let sq2 = poly_mul(&h2, &h2);
    let x: Vec<C64> = sq2.iter().map(|v| v * one * one).collect();
    col.push(g, "P~2((1+id)^2 h2^2)", re(8.0 * (1.0 - p)), re(poly_tilde(&x, 2)), None);
    let x: Vec<C64> = sq2.iter().map(|v| v * one).collect();
    col.push(g, "P~2((1+id) h2^2)", re(8.0), re(poly_tilde(&x, 2)), None);

    // Quadratic part of B at φ ≡ κ: the ε² coefficient of F(κ + ε h~2).
    let mut u = TruncSeries::constant(2, 4, re(k));
    u.c[1][..3].copy_from_slice(&ht2);
    let fb = nonlin_series(prof, &u)?;
    let written: Vec<C64> = sq2
        .iter()
        .map(|v| v * pm * k.powf(p - 2.0) * (one * one + one * pm))
        .collect();
    let g = "b_quadratic";
    for y in [0.0, 1.3, 2.9] {
        col.push(
            g,
            &format!("B eps^2 coefficient at y={y}"),
            eval_poly(&written, y),
            eval_poly(fb.order(2), y),
            None,
        );
    }
    // Zero target: compare against the size of the coefficients involved.
    let scale = fb.order(2).iter().map(|c| c.norm()).fold(1.0, f64::max);
    col.push_with(
        g,
        "P~2 of B eps^2 coefficient",
        zero(),
        re(poly_tilde(fb.order(2), 2)),
        None,
        &|a, b| (a - b).norm() <= IDENTITY_TOL * scale,
    );

    // P~_k(W11 g_j) = −P~_k(W21 conj g_j) for g_j = h~_j and h^_j = i h_j.
    let g = "sign_pairing";
    for j in 0..=6 {
        for (label, sc) in [("h~", one), ("h^", i)] {
            let gj = h_poly(j, sc);
            let gjc = h_poly(j, sc.conj());
            for kk in 0..=6 {
                let l = poly_tilde(&poly_mul(&w11, &gj), kk);
                let r = poly_tilde(&poly_mul(&w21, &gjc), kk);
                // Orthogonality makes many of these zero; compare at round-off
                // of the Gaussian moments involved.
                col.push_with(
                    g,
                    &format!("P~{kk}(W11 {label}{j}) = -P~{kk}(W21 conj {label}{j})"),
                    re(-r),
                    re(l),
                    None,
                    &|x, y| (x - y).norm() <= 1e-10,
                );
            }
        }
    }

    Ok(IdentityReport { p, checks: col.out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residual::{residual_r, residual_rstar};

    const PS: [f64; 4] = [1.5, 2.0, 3.0, 5.0];

    fn prof(p: f64) -> Profile {
        Profile::critical(p).unwrap()
    }

    #[test]
    fn hermite_coefficients_match_evaluation() {
        for n in 0..10 {
            let c: Vec<C64> = hermite_coeffs(n).into_iter().map(re).collect();
            for y in [-1.7, 0.0, 0.4, 2.2] {
                let v = crate::hermite::hermite_poly(n, y).unwrap();
                assert!((eval_poly(&c, y).re - v).abs() < 1e-9 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn poly_projection_orthogonality() {
        for n in 0..8 {
            for m in 0..8 {
                let h = h_poly(n, re(1.0));
                let q = poly_q(&h, m);
                let want = if n == m { 1.0 } else { 0.0 };
                assert!((q - re(want)).norm() < 1e-12, "{n} {m}");
            }
        }
    }

    #[test]
    fn cpow_inverts_and_composes() {
        let mut u = TruncSeries::constant(4, 8, C64::new(2.0, 0.5));
        u.c[1][2] = C64::new(0.3, -0.1);
        u.c[2][1] = C64::new(-0.2, 0.4);
        let g = C64::new(-0.7, 0.4);
        let back = u.cpow(g).unwrap().cpow(1.0 / g).unwrap();
        assert!(back.sub(&u).unwrap().max_abs() < 1e-13);
        let sq = u.cpow(re(0.5)).unwrap();
        assert!(sq.mul(&sq).unwrap().sub(&u).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn cpow_rejects_nonconstant_leading_part() {
        let mut u = TruncSeries::constant(2, 4, re(1.0));
        u.c[0][2] = re(1.0);
        assert!(u.cpow(re(0.5)).is_err());
    }

    #[test]
    fn cap_mismatch_is_an_error() {
        let a = TruncSeries::zeros(2, 4);
        let b = TruncSeries::zeros(3, 6);
        assert!(a.add(&b).is_err());
        assert!(a.mul(&b).is_err());
    }

    #[test]
    fn low_caps_rejected() {
        let pr = prof(3.0);
        assert!(rstar_series(&pr, pr.c.mu, 2, 8).is_err());
        assert!(rstar_series(&pr, pr.c.mu, 4, 6).is_err());
    }

    #[test]
    fn phi0_series_matches_closed_form() {
        for p in PS {
            let pr = prof(p);
            let s = phi0_series(&pr, 8, 16).unwrap();
            let sv: f64 = 1e4;
            for y in [-2.0, 0.0, 0.5, 1.5] {
                let exact = pr.phi0(y * sv.powf(-0.25));
                assert!((s.eval(y, sv) - exact).norm() < 1e-14, "p={p} y={y}");
            }
        }
    }

    #[test]
    fn rstar_series_matches_pointwise() {
        for p in PS {
            let pr = prof(p);
            let (j, d) = (4, 10);
            let rs = rstar_series(&pr, pr.c.mu, j, d).unwrap();
            let s = 1e4;
            for i in 0..=20 {
                let y = -2.0 + 0.2 * i as f64;
                let diff = (rs.eval(y, s) - residual_rstar(&pr, 0.0, y, s)).norm();
                let bound = 10.0 * s.powf(-(j as f64 + 1.0) / 2.0) * (1.0 + y.abs().powi(d as i32));
                assert!(diff <= bound, "p={p} y={y}: {diff} > {bound}");
            }
        }
    }

    #[test]
    fn r_at_origin_matches_order_one_over_s() {
        for p in PS {
            let pr = prof(p);
            let rs = rstar_series(&pr, pr.c.mu, 3, 6).unwrap();
            let s = 1e4;
            let c2 = rs.coeff(2, 0) + C64::i() * pr.c.mu * pr.c.kappa;
            let r = residual_r(&pr, 0.0, s);
            assert!((r - c2 / s).norm() <= 0.05 * (c2 / s).norm(), "p={p}");
        }
    }

    #[test]
    fn leading_orders_of_rstar_vanish() {
        for p in PS {
            let pr = prof(p);
            let rs = rstar_series(&pr, pr.c.mu, 3, 6).unwrap();
            let scale = rs.max_abs();
            for k in 0..=6 {
                assert!(rs.coeff(0, k).norm() < 1e-13 * scale.max(1.0), "p={p} e0 y{k}");
                assert!(rs.coeff(1, k).norm() < 1e-13 * scale.max(1.0), "p={p} e1 y{k}");
            }
            assert!(poly_q(rs.order(2), 0).norm() < 1e-13);
        }
    }

    #[test]
    fn theta_channel_projects_to_minus_i_kappa() {
        let pr = prof(3.0);
        let t = theta_channel(&pr, 3, 6).unwrap();
        assert!((poly_q(t.order(0), 0) - C64::new(0.0, -pr.c.kappa)).norm() < 1e-14);
    }

    #[test]
    fn identity_report_has_no_mismatch() {
        for p in PS {
            let r = identity_report(&prof(p)).unwrap();
            let bad: Vec<_> = r.mismatches().iter().map(|c| c.name.clone()).collect();
            assert!(bad.is_empty(), "p={p}: {bad:?}");
        }
    }

    #[test]
    fn documented_corrections_are_needed_off_p3() {
        let r = identity_report(&prof(2.0)).unwrap();
        for name in [
            "phi^2 e3y6",
            "|phi|^(p-3) e3y4",
            "P~2(W22 conj h~2)",
            "P~2(h~2^3)",
            "R* e3",
            "R* e3y4",
        ] {
            assert_eq!(r.find(name).unwrap().status, IdentityStatus::Corrected, "{name}");
        }
        let r3 = identity_report(&prof(3.0)).unwrap();
        assert_eq!(r3.find("laplacian e2y2").unwrap().status, IdentityStatus::Corrected);
        assert_eq!(r.find("laplacian e2y2").unwrap().status, IdentityStatus::Holds);
    }

    #[test]
    fn same_caps_give_same_coefficients() {
        let pr = prof(3.0);
        let lo = rstar_series(&pr, pr.c.mu, 3, 6).unwrap();
        let hi = rstar_series(&pr, pr.c.mu, 5, 10).unwrap();
        for j in 0..=3 {
            for k in 0..=6 {
                assert!((lo.coeff(j, k) - hi.coeff(j, k)).norm() < 1e-14);
            }
        }
    }
}
