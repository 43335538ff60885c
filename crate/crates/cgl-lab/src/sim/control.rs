//! Shadowing control of the two expanding modes q̃₀ (rate 1) and q̃₁ (rate ½).
//!
//! At the start of each window the state is corrected along (1+iδ)χh₀ and
//! (1+iδ)χh₁ so that q̃₀ and q̃₁ vanish at the end of a look-ahead of twice the
//! window; only the first half is kept. This is a numerical stand-in for the
//! choice of (d₀, d₁), not a construction of the stable set.

use crate::decomp::cutoff_chi;
use crate::hermite::{hermite_unchecked, Grid};
use crate::params::Profile;
use crate::C64;
use nalgebra::{Matrix2, Vector2};
use serde::Serialize;

/// Quadrature rows for Re Q₀ and Re Q₁, and for P̃₂.
#[derive(Debug, Clone)]
pub struct ModeRows {
    rows: [Vec<f64>; 3],
}

impl ModeRows {
    pub fn new(grid: &Grid) -> Self {
        let row = |k: usize| {
            let nrm = crate::hermite::hermite_norm2(k);
            grid.nodes.iter().zip(&grid.weights).map(|(&y, &w)| hermite_unchecked(k, y) * w / nrm).collect()
        };
        Self { rows: [row(0), row(1), row(2)] }
    }

    /// Re Qₖ for k ≤ 2.
    pub fn tilde(&self, k: usize, f: &[C64]) -> f64 {
        self.rows[k].iter().zip(f).map(|(r, v)| r * v.re).sum()
    }

    pub fn unstable(&self, f: &[C64]) -> [f64; 2] {
        [self.tilde(0, f), self.tilde(1, f)]
    }
}

/// (1+iδ) hₖ(y) χ(y, s, K) on the grid.
pub fn direction(prof: &Profile, grid: &Grid, k: usize, s: f64, kcut: f64) -> Vec<C64> {
    grid.nodes.iter().map(|&y| prof.one * (hermite_unchecked(k, y) * cutoff_chi(y, s, kcut))).collect()
}

pub fn add_correction(q: &mut [C64], c: [f64; 2], dirs: &[Vec<C64>; 2]) {
    for (i, v) in q.iter_mut().enumerate() {
        *v += dirs[0][i] * c[0] + dirs[1][i] * c[1];
    }
}

/// Solves J c = −e.
pub fn newton_step(jac: &Matrix2<f64>, e: [f64; 2]) -> Option<[f64; 2]> {
    let x = jac.lu().solve(&Vector2::new(-e[0], -e[1]))?;
    Some([x[0], x[1]])
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ControlStats {
    pub windows: usize,
    pub integrations: usize,
    pub jacobian_builds: usize,
    /// First correction, which absorbs the choice of (d₀, d₁).
    pub initial_correction: [f64; 2],
    /// Largest later correction relative to the mode bounds A/s^{3/2}.
    pub max_rel_correction: f64,
    /// Largest |q̃₀|, |q̃₁| left at a look-ahead end, relative to the bounds.
    pub max_rel_residual: f64,
}
