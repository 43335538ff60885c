//! Splitting q into Hermite modes, the infinite-dimensional remainder q₋ and
//! the outer part q_e, and the shrinking-set monitor.

use crate::hermite::{hermite_coefficients, hermite_synthesis, ComplexField, GridKind};
use crate::params::Profile;
use crate::{LabError, Result, C64};
use serde::Serialize;
use std::sync::Arc;

/// χ₀(ξ): 1 on [0,1], 0 on [2,∞), quintic smoothstep in between.
pub fn chi0(xi: f64) -> f64 {
    if xi <= 1.0 {
        1.0
    } else if xi >= 2.0 {
        0.0
    } else {
        let t = xi - 1.0;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// χ(y,s) = χ₀(|y|/(K s^{1/4})).
pub fn cutoff_chi(y: f64, s: f64, k: f64) -> f64 {
    chi0(y.abs() / (k * s.powf(0.25)))
}

/// Smallest K with sup_{|z|>K} |φ₀(z)|^{p−1} ≤ 1/(C(p−1)); since
/// |φ₀|^{p−1} = 1/(p−1+bz²) this is K² = (C−1)(p−1)/b, floored at 1.
pub fn default_k(prof: &Profile, c: f64) -> f64 {
    let p = prof.par.p;
    ((c - 1.0) * (p - 1.0) / prof.c.b).sqrt().max(1.0)
}

#[derive(Debug, Clone)]
pub struct ModalDecomposition {
    pub m: usize,
    pub tilde: Vec<f64>,
    pub hat: Vec<f64>,
    pub q_minus: ComplexField,
    pub q_e: ComplexField,
    pub s: f64,
    pub k: f64,
    pub delta: f64,
    pub p: f64,
}

fn check_resolution(q: &ComplexField, m: usize) -> Result<()> {
    match q.grid.kind {
        GridKind::Gauss { capacity } if capacity < 2 * m => Err(LabError::GridMismatch(format!(
            "Gauss grid of capacity {capacity} cannot resolve degree {m}"
        ))),
        GridKind::Uniform { dy } => {
            let ymax = q.grid.nodes.last().copied().unwrap_or(0.0);
            let need = 4.0 * ((m + 1) as f64).sqrt() + 8.0;
            if ymax < need || dy > 0.25 {
                Err(LabError::GridMismatch(format!(
                    "uniform grid (y_max {ymax}, dy {dy}) too coarse for degree {m}"
                )))
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}

/// Qₙ = ⟨q,hₙ⟩/⟨hₙ,hₙ⟩, q̃ₙ = Re Qₙ, q̂ₙ = Im Qₙ − δ Re Qₙ, q₋ = q − ΣQₙhₙ and
/// q_e = e^{iδs/(p−1)} q (1−χ).
pub fn decompose(q: &ComplexField, m: usize, s: f64, k: f64, p: f64, delta: f64) -> Result<ModalDecomposition> {
    if m % 2 == 1 {
        return Err(LabError::InvalidParam(format!("M must be even, got {m}")));
    }
    check_resolution(q, m)?;
    let qn = hermite_coefficients(q, m);
    let plus = hermite_synthesis(&q.grid, &qn);
    let q_minus = ComplexField {
        grid: q.grid.clone(),
        values: q.values.iter().zip(&plus.values).map(|(a, b)| a - b).collect(),
    };
    let rot = C64::new(0.0, delta * s / (p - 1.0)).exp();
    let q_e = ComplexField {
        grid: q.grid.clone(),
        values: q
            .grid
            .nodes
            .iter()
            .zip(&q.values)
            .map(|(&y, v)| rot * v * (1.0 - cutoff_chi(y, s, k)))
            .collect(),
    };
    Ok(ModalDecomposition {
        m,
        tilde: qn.iter().map(|c| c.re).collect(),
        hat: qn.iter().map(|c| c.im - delta * c.re).collect(),
        q_minus,
        q_e,
        s,
        k,
        delta,
        p,
    })
}

impl ModalDecomposition {
    /// Σ(q̃ₙ(1+iδ) + i q̂ₙ)hₙ + q₋.
    pub fn reconstruct(&self) -> ComplexField {
        let qn: Vec<C64> = self
            .tilde
            .iter()
            .zip(&self.hat)
            .map(|(&t, &h)| C64::new(t, self.delta * t + h))
            .collect();
        let mut out = hermite_synthesis(&self.q_minus.grid, &qn);
        for (o, m) in out.values.iter_mut().zip(&self.q_minus.values) {
            *o += m;
        }
        out
    }

    pub fn grid(&self) -> &Arc<crate::hermite::Grid> {
        &self.q_minus.grid
    }
}

/// Bound and measured value for one component of the shrinking set.
#[derive(Debug, Clone, Serialize)]
pub struct Slack {
    pub name: String,
    pub measured: f64,
    pub allowed: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShrinkingSetReport {
    pub s: f64,
    pub a: f64,
    pub components: Vec<Slack>,
    pub inside: bool,
}

impl ShrinkingSetReport {
    /// Component with the largest ratio.
    pub fn worst(&self) -> Option<&Slack> {
        self.components.iter().max_by(|a, b| a.ratio.partial_cmp(&b.ratio).unwrap())
    }

    pub fn ratio(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|c| c.name == name).map(|c| c.ratio)
    }

    /// Components whose ratio exceeds 1.
    pub fn violations(&self) -> Vec<&str> {
        self.components.iter().filter(|c| c.ratio > 1.0).map(|c| c.name.as_str()).collect()
    }
}

/// Bound of the shrinking set for the tilde (true) or hat (false) mode j.
pub fn mode_bound(a: f64, s: f64, j: usize, tilde: bool) -> f64 {
    match (j, tilde) {
        (0 | 1, true) => a / s.powf(1.5),
        (0, false) => 1.0 / s.powf(1.5),
        (1, false) => a.powi(4) / s.powf(1.5),
        (2, true) => a.powi(5) / s,
        (2, false) => a.powi(3) / s,
        _ => a.powi(j as i32) / s.powf((j as f64 + 1.0) / 4.0),
    }
}

/// Evaluates every inequality of the shrinking set for `d` at level A.
pub fn shrinking_check(d: &ModalDecomposition, a: f64) -> ShrinkingSetReport {
    let s = d.s;
    let m = d.m;
    let mut comps = Vec::with_capacity(2 * m + 4);
    let mut push = |name: String, measured: f64, allowed: f64| {
        comps.push(Slack { name, measured, allowed, ratio: measured / allowed });
    };
    let qe = d.q_e.sup_norm();
    push("q_e".into(), qe, a.powi(m as i32 + 2) / s.powf(0.25));
    let qm = d
        .q_minus
        .grid
        .nodes
        .iter()
        .zip(&d.q_minus.values)
        .map(|(&y, v)| v.norm() / (1.0 + y.abs().powi(m as i32 + 1)))
        .fold(0.0, f64::max);
    push("q_minus".into(), qm, a.powi(m as i32 + 1) / s.powf((m as f64 + 2.0) / 4.0));
    for j in 0..=m {
        push(format!("tilde_{j}"), d.tilde[j].abs(), mode_bound(a, s, j, true));
        push(format!("hat_{j}"), d.hat[j].abs(), mode_bound(a, s, j, false));
    }
    let inside = comps.iter().all(|c| c.ratio <= 1.0);
    ShrinkingSetReport { s, a, components: comps, inside }
}

/// P̂₀ of a field: Im Q₀ − δ Re Q₀.
pub fn hat0(f: &ComplexField, delta: f64) -> f64 {
    let q0: C64 = f.values.iter().zip(&f.grid.weights).map(|(v, w)| v * *w).sum();
    q0.im - delta * q0.re
}

/// ψ = [A/s₀^{3/2}(1+iδ)(d₀h₀ + d₁h₁) + i d₂] χ(2y,s₀), with d₂ chosen so that
/// P̂₀(ψ) = 0. Returns (ψ, d₂).
pub fn initial_data(
    grid: &Arc<crate::hermite::Grid>,
    prof: &Profile,
    a: f64,
    s0: f64,
    d0: f64,
    d1: f64,
    k: f64,
) -> Result<(ComplexField, f64)> {
    let delta = prof.par.delta;
    let one = prof.one;
    let chi2 = |y: f64| cutoff_chi(2.0 * y, s0, k);
    let den = hat0(&ComplexField::from_fn(grid, |y| C64::i() * chi2(y)), delta);
    if den.abs() < 1e-8 {
        return Err(LabError::Degenerate(format!("P^0(i chi) = {den} at s0 = {s0}")));
    }
    let n0 = hat0(&ComplexField::from_fn(grid, |y| one * chi2(y)), delta);
    let n1 = hat0(&ComplexField::from_fn(grid, |y| one * y * chi2(y)), delta);
    let amp = a / s0.powf(1.5);
    let d2 = -amp * (d0 * n0 + d1 * n1) / den;
    let psi = ComplexField::from_fn(grid, |y| (one * (amp * (d0 + d1 * y)) + C64::new(0.0, d2)) * chi2(y));
    Ok((psi, d2))
}
