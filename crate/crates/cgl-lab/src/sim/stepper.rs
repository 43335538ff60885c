//! Time stepping of the modulated q-equation
//! ∂_s q = 𝓛̃q − i(μ/s + θ′)q + V₁q + V₂q̄ + B(q) + R*(θ′).
//!
//! Writing q = (1+iδ)u + iv with u, v real, the flow of 𝓛̃ is
//! u ↦ eʰ e^{hL₀}u, v ↦ e^{hL₀}v, applied through the Mehler operator. The
//! remaining terms are integrated explicitly, with θ′ chosen at every stage so
//! that the stage derivative has P̂₀ = 0.

use super::config::Scheme;
use crate::hermite::{Grid, MehlerOperator};
use crate::params::Profile;
use crate::residual::residual_r;
use crate::{LabError, Result, C64};
use std::collections::HashMap;
use std::sync::Arc;

/// s-dependent coefficients sampled on the grid.
#[derive(Debug, Clone)]
pub struct Frozen {
    pub s: f64,
    pub phi: Vec<C64>,
    /// F(φ) = (1+iδ)|φ|^{p−1}φ
    pub f_phi: Vec<C64>,
    /// R − iμφ/s
    pub forcing: Vec<C64>,
}

impl Frozen {
    pub fn new(prof: &Profile, grid: &Grid, s: f64) -> Self {
        let n = grid.len();
        let mut phi = Vec::with_capacity(n);
        let mut f_phi = Vec::with_capacity(n);
        let mut forcing = Vec::with_capacity(n);
        let mu_s = prof.c.mu / s;
        for &y in &grid.nodes {
            let f = prof.phi(y, s);
            phi.push(f);
            f_phi.push(prof.nonlin(f));
            forcing.push(residual_r(prof, y, s) - C64::i() * mu_s * f);
        }
        Self { s, phi, f_phi, forcing }
    }
}

/// Frozen coefficients keyed by half-step index, shared across the repeated
/// integrations of a control window.
#[derive(Debug, Default)]
pub struct FrozenCache {
    map: HashMap<usize, Arc<Frozen>>,
}

impl FrozenCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops entries below the given half-step index.
    pub fn retain_from(&mut self, key: usize) {
        self.map.retain(|k, _| *k >= key);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// e^{h𝓛̃} on the grid.
#[derive(Debug, Clone)]
pub struct LinearFlow {
    op: MehlerOperator,
    growth: f64,
    one: C64,
}

impl LinearFlow {
    pub fn new(grid: &Grid, h: f64, delta: f64) -> Result<Self> {
        Ok(Self { op: MehlerOperator::new(grid, h)?, growth: h.exp_m1(), one: C64::new(1.0, delta) })
    }

    pub fn apply(&self, f: &[C64], out: &mut [C64]) {
        self.op.apply_complex(f, out);
        for o in out.iter_mut() {
            *o += self.one * (self.growth * o.re);
        }
    }

    pub fn apply_vec(&self, f: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); f.len()];
        self.apply(f, &mut out);
        out
    }
}

/// P̂₀ of samples with weights ρ(yᵢ)Δy.
pub fn phat0(weights: &[f64], f: &[C64], delta: f64) -> f64 {
    let q0: C64 = f.iter().zip(weights).map(|(v, w)| v * *w).sum();
    q0.im - delta * q0.re
}

/// Denominators |P̂₀(i(φ+q))| below this reject the step.
pub const MODULATION_FLOOR: f64 = 1e-3;

pub struct Stepper {
    pub prof: Profile,
    pub grid: Arc<Grid>,
    pub s0: f64,
    pub ds: f64,
    pub scheme: Scheme,
    full: LinearFlow,
    half: LinearFlow,
    c_q: C64,
    c_qbar: C64,
}

impl Stepper {
    pub fn new(prof: Profile, grid: Arc<Grid>, s0: f64, ds: f64, scheme: Scheme) -> Result<Self> {
        let d = prof.par.delta;
        let p = prof.par.p;
        let full = LinearFlow::new(&grid, ds, d)?;
        let half = LinearFlow::new(&grid, 0.5 * ds, d)?;
        // V₁q + V₂q̄ + B = F(φ+q) − F(φ) − c_q q − c_qbar q̄
        let c_q = prof.one * ((p + 1.0) / (2.0 * (p - 1.0)));
        let c_qbar = prof.one * 0.5;
        Ok(Self { prof, grid, s0, ds, scheme, full, half, c_q, c_qbar })
    }

    /// s at half-step index k.
    pub fn s_half(&self, k: usize) -> f64 {
        self.s0 + 0.5 * self.ds * k as f64
    }

    pub fn s_at(&self, n: usize) -> f64 {
        self.s_half(2 * n)
    }

    pub fn frozen(&self, cache: &mut FrozenCache, key: usize) -> Arc<Frozen> {
        let s = self.s_half(key);
        cache
            .map
            .entry(key)
            .or_insert_with(|| Arc::new(Frozen::new(&self.prof, &self.grid, s)))
            .clone()
    }

    /// Everything except 𝓛̃q, with θ′ from P̂₀ = 0. Writes the derivative
    /// into `out` and returns θ′.
    pub fn rhs(&self, fr: &Frozen, q: &[C64], out: &mut [C64]) -> Result<f64> {
        let mu_s = self.prof.c.mu / fr.s;
        let i = C64::i();
        for k in 0..q.len() {
            let u = q[k];
            let w = fr.phi[k] + u;
            out[k] = -i * mu_s * u + self.prof.nonlin(w) - fr.f_phi[k] - self.c_q * u - self.c_qbar * u.conj()
                + fr.forcing[k];
        }
        let d = self.prof.par.delta;
        let wts = &self.grid.weights;
        let num = phat0(wts, out, d);
        // P̂₀(i(φ+q)) = Re Q₀(φ+q) + δ Im Q₀(φ+q)
        let q0: C64 = fr.phi.iter().zip(q).zip(wts).map(|((f, u), w)| (f + u) * *w).sum();
        let den = q0.re + d * q0.im;
        if den.abs() < MODULATION_FLOOR {
            return Err(LabError::Degenerate(format!("P^0(i(phi+q)) = {den:e} at s = {}", fr.s)));
        }
        let tp = num / den;
        for k in 0..q.len() {
            out[k] -= i * tp * (fr.phi[k] + q[k]);
        }
        Ok(tp)
    }

    /// Advances (q, θ) from step n to n+1. Returns θ′ at the start of the step.
    pub fn step(&self, cache: &mut FrozenCache, n: usize, q: &mut Vec<C64>, theta: &mut f64) -> Result<f64> {
        match self.scheme {
            Scheme::LawsonRk4 => self.lawson(cache, n, q, theta),
            Scheme::Strang => self.strang(cache, n, q, theta),
        }
    }

    fn lawson(&self, cache: &mut FrozenCache, n: usize, q: &mut Vec<C64>, theta: &mut f64) -> Result<f64> {
        let h = self.ds;
        let len = q.len();
        let f0 = self.frozen(cache, 2 * n);
        let fh = self.frozen(cache, 2 * n + 1);
        let f1 = self.frozen(cache, 2 * n + 2);
        let zero = C64::new(0.0, 0.0);
        let mut k1 = vec![zero; len];
        let mut k2 = vec![zero; len];
        let mut k3 = vec![zero; len];
        let mut k4 = vec![zero; len];
        let mut tmp = vec![zero; len];
        let mut stage = vec![zero; len];

        let t1 = self.rhs(&f0, q, &mut k1)?;
        for k in 0..len {
            tmp[k] = q[k] + 0.5 * h * k1[k];
        }
        self.half.apply(&tmp, &mut stage);
        let t2 = self.rhs(&fh, &stage, &mut k2)?;
        let eq_half = self.half.apply_vec(q);
        for k in 0..len {
            stage[k] = eq_half[k] + 0.5 * h * k2[k];
        }
        let t3 = self.rhs(&fh, &stage, &mut k3)?;
        let eq_full = self.full.apply_vec(q);
        let e_k3 = self.half.apply_vec(&k3);
        for k in 0..len {
            stage[k] = eq_full[k] + h * e_k3[k];
        }
        let t4 = self.rhs(&f1, &stage, &mut k4)?;
        let e_k1 = self.full.apply_vec(&k1);
        for k in 0..len {
            tmp[k] = k2[k] + k3[k];
        }
        let e_k23 = self.half.apply_vec(&tmp);
        for k in 0..len {
            q[k] = eq_full[k] + h / 6.0 * (e_k1[k] + 2.0 * e_k23[k] + k4[k]);
        }
        *theta += h / 6.0 * (t1 + 2.0 * t2 + 2.0 * t3 + t4);
        Ok(t1)
    }

    fn strang(&self, cache: &mut FrozenCache, n: usize, q: &mut Vec<C64>, theta: &mut f64) -> Result<f64> {
        let h = self.ds;
        let len = q.len();
        let fh = self.frozen(cache, 2 * n + 1);
        let zero = C64::new(0.0, 0.0);
        let mut a = self.half.apply_vec(q);
        let mut k = vec![zero; len];
        let t1 = self.rhs(&fh, &a, &mut k)?;
        let mid: Vec<C64> = a.iter().zip(&k).map(|(x, d)| x + 0.5 * h * d).collect();
        let t2 = self.rhs(&fh, &mid, &mut k)?;
        for (x, d) in a.iter_mut().zip(&k) {
            *x += h * d;
        }
        self.half.apply(&a, q);
        *theta += h * t2;
        Ok(t1)
    }

    /// Rotates the gauge so that P̂₀(q) = 0: q ↦ e^{−iΔ}(φ+q) − φ, θ ↦ θ + Δ.
    /// Returns Δ.
    pub fn rotate_to_constraint(&self, fr: &Frozen, q: &mut [C64], theta: &mut f64) -> Result<f64> {
        let d = self.prof.par.delta;
        let wts = &self.grid.weights;
        let w: Vec<C64> = fr.phi.iter().zip(q.iter()).map(|(f, u)| f + u).collect();
        let mut delta_tot = 0.0;
        for _ in 0..20 {
            let rot = C64::new(0.0, -delta_tot).exp();
            let g: Vec<C64> = w.iter().zip(&fr.phi).map(|(x, f)| rot * x - f).collect();
            let val = phat0(wts, &g, d);
            if val.abs() <= 1e-15 {
                break;
            }
            let ig: Vec<C64> = w.iter().map(|x| C64::i() * rot * x).collect();
            let den = phat0(wts, &ig, d);
            if den.abs() < MODULATION_FLOOR {
                return Err(LabError::Degenerate(format!("rotation denominator {den:e}")));
            }
            let step = val / den;
            delta_tot += step;
            if step.abs() <= 1e-15 {
                break;
            }
        }
        let rot = C64::new(0.0, -delta_tot).exp();
        for (u, (x, f)) in q.iter_mut().zip(w.iter().zip(&fr.phi)) {
            *u = rot * x - f;
        }
        *theta += delta_tot;
        Ok(delta_tot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::hermite_poly;

    fn setup(scheme: Scheme, ds: f64) -> Stepper {
        let prof = Profile::critical(3.0).unwrap();
        let grid = Arc::new(Grid::uniform(40.0, 0.125).unwrap());
        Stepper::new(prof, grid, 100.0, ds, scheme).unwrap()
    }

    #[test]
    fn linear_flow_eigenmodes() {
        let st = setup(Scheme::LawsonRk4, 0.05);
        let d = st.prof.par.delta;
        let h = 0.3;
        let flow = LinearFlow::new(&st.grid, h, d).unwrap();
        for m in 0..5 {
            let f: Vec<C64> = st.grid.nodes.iter().map(|&y| C64::new(1.0, d) * hermite_poly(m, y).unwrap()).collect();
            let g: Vec<C64> = st.grid.nodes.iter().map(|&y| C64::i() * hermite_poly(m, y).unwrap()).collect();
            let (ef, eg) = (flow.apply_vec(&f), flow.apply_vec(&g));
            let lt = (h * (1.0 - m as f64 / 2.0)).exp();
            let lh = (-h * m as f64 / 2.0).exp();
            for (i, &y) in st.grid.nodes.iter().enumerate() {
                if y.abs() < 8.0 {
                    assert!((ef[i] - f[i] * lt).norm() < 1e-10 * (1.0 + f[i].norm()), "m={m} y={y}");
                    assert!((eg[i] - g[i] * lh).norm() < 1e-10 * (1.0 + g[i].norm()), "m={m} y={y}");
                }
            }
        }
    }

    #[test]
    fn linear_flow_keeps_phat0() {
        let st = setup(Scheme::LawsonRk4, 0.05);
        let d = st.prof.par.delta;
        let f: Vec<C64> = st.grid.nodes.iter().map(|&y| C64::new((0.3 * y).sin() + 0.2, (y * y * 0.01).cos())).collect();
        let g = st.full.apply_vec(&f);
        let w = &st.grid.weights;
        assert!((phat0(w, &g, d) - phat0(w, &f, d)).abs() < 1e-13);
    }

    #[test]
    fn step_keeps_constraint() {
        for scheme in [Scheme::LawsonRk4, Scheme::Strang] {
            let st = setup(scheme, 0.05);
            let mut cache = FrozenCache::new();
            let mut q: Vec<C64> = st.grid.nodes.iter().map(|&y| C64::new(1e-3 * (-y * y / 8.0).exp(), 0.0)).collect();
            let mut th = 0.0;
            let fr = st.frozen(&mut cache, 0);
            st.rotate_to_constraint(&fr, &mut q, &mut th).unwrap();
            for n in 0..20 {
                st.step(&mut cache, n, &mut q, &mut th).unwrap();
            }
            let v = phat0(&st.grid.weights, &q, st.prof.par.delta);
            assert!(v.abs() < 1e-13, "{scheme:?} {v}");
        }
    }

    #[test]
    fn rotation_recovers_gauge() {
        let st = setup(Scheme::LawsonRk4, 0.05);
        let mut cache = FrozenCache::new();
        let fr = st.frozen(&mut cache, 0);
        let rot = C64::new(0.0, 0.3).exp();
        let mut q: Vec<C64> = fr.phi.iter().map(|f| rot * f - f).collect();
        let mut th = 0.0;
        st.rotate_to_constraint(&fr, &mut q, &mut th).unwrap();
        assert!((th - 0.3).abs() < 1e-12, "{th}");
        assert!(q.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn lawson_is_fourth_order() {
        // Reference at ds/8; errors at ds and ds/2 should shrink by ~16.
        let prof = Profile::critical(3.0).unwrap();
        let grid = Arc::new(Grid::uniform(40.0, 0.125).unwrap());
        let q0: Vec<C64> = grid.nodes.iter().map(|&y| C64::new(0.02 * (-y * y / 10.0).exp(), 0.0)).collect();
        let run = |ds: f64| {
            let st = Stepper::new(prof, grid.clone(), 60.0, ds, Scheme::LawsonRk4).unwrap();
            let mut cache = FrozenCache::new();
            let mut q = q0.clone();
            let mut th = 0.0;
            let fr = st.frozen(&mut cache, 0);
            st.rotate_to_constraint(&fr, &mut q, &mut th).unwrap();
            let n = (1.6 / ds).round() as usize;
            for k in 0..n {
                st.step(&mut cache, k, &mut q, &mut th).unwrap();
            }
            (q, th)
        };
        let (r, _) = run(0.025);
        let err = |ds| {
            let (q, _) = run(ds);
            q.iter().zip(&r).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.4), err(0.2));
        assert!(e1 / e2 > 10.0, "{e1} {e2}");
    }
}
