//! Back to physical variables: w(y,s) = (T−t)^{(1+iδ)/(p−1)}u(x,t),
//! y = x/√(T−t), s = −log(T−t), and the final-profile prediction.

use crate::hermite::Grid;
use crate::params::Profile;
use crate::C64;
use serde::Serialize;

/// w = e^{i(μ log s + θ)}(φ + q) on the grid.
pub fn w_field(prof: &Profile, grid: &Grid, q: &[C64], theta: f64, s: f64) -> Vec<C64> {
    let rot = C64::new(0.0, prof.c.mu * s.ln() + theta).exp();
    grid.nodes.iter().zip(q).map(|(&y, u)| rot * (prof.phi(y, s) + u)).collect()
}

/// Linear interpolation of grid samples at y; None outside the grid.
pub fn interp(grid: &Grid, f: &[C64], y: f64) -> Option<C64> {
    let n = grid.len();
    let (lo, hi) = (grid.nodes[0], grid.nodes[n - 1]);
    if !(y >= lo && y <= hi) {
        return None;
    }
    let h = (hi - lo) / (n - 1) as f64;
    let t = (y - lo) / h;
    let i = (t.floor() as usize).min(n - 2);
    let f0 = t - i as f64;
    Some(f[i] * (1.0 - f0) + f[i + 1] * f0)
}

/// u(x,t) at t = T − e^{−s}, up to the constant phase e^{−iθ₀}κ^{iδ}:
/// u = e^{s(1+iδ)/(p−1)} w(x e^{s/2}, s). None when x e^{s/2} is off the grid.
pub fn reconstruct_u(prof: &Profile, grid: &Grid, w: &[C64], s: f64, x: f64) -> Option<C64> {
    let y = x * (0.5 * s).exp();
    let wv = interp(grid, w, y)?;
    Some((prof.one * (s / (prof.par.p - 1.0))).exp() * wv)
}

/// |u*(x)| = [b x²/√(2|log|x||)]^{−1/(p−1)}.
pub fn final_profile_modulus(prof: &Profile, x: f64) -> f64 {
    let l = (2.0 * x.abs().ln().abs()).sqrt();
    (prof.c.b * x * x / l).powf(-1.0 / (prof.par.p - 1.0))
}

/// History of |u(x,t)| at one point while x e^{s/2} stays resolved.
#[derive(Debug, Clone, Serialize)]
pub struct PointHistory {
    pub x: f64,
    pub s: Vec<f64>,
    pub modulus: Vec<f64>,
}

/// Comparison of the converged |u(x,t)| with |u*(x)|.
#[derive(Debug, Clone, Serialize)]
pub struct FinalProfilePoint {
    pub x: f64,
    pub s_last: f64,
    pub limit: f64,
    /// relative change of |u| over the last unit of s
    pub drift: f64,
    pub predicted: f64,
    pub rel_err: f64,
}

impl PointHistory {
    pub fn new(x: f64) -> Self {
        Self { x, s: Vec::new(), modulus: Vec::new() }
    }

    pub fn summarize(&self, prof: &Profile) -> Option<FinalProfilePoint> {
        let (&s_last, &limit) = (self.s.last()?, self.modulus.last()?);
        let back = self
            .s
            .iter()
            .zip(&self.modulus)
            .rev()
            .find(|(s, _)| **s <= s_last - 1.0)
            .map(|(_, m)| *m)
            .unwrap_or(self.modulus[0]);
        let predicted = final_profile_modulus(prof, self.x);
        Some(FinalProfilePoint {
            x: self.x,
            s_last,
            limit,
            drift: (limit - back).abs() / limit,
            predicted,
            rel_err: (limit - predicted).abs() / predicted,
        })
    }
}
