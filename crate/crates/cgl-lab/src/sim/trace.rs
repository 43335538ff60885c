//! Per-record output of a simulation run.

use crate::io::CsvTable;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub s: f64,
    pub theta: f64,
    pub theta_prime: f64,
    pub phat0: f64,
    /// sup |q| over |y| ≤ K s^{1/4}
    pub sup_q: f64,
    /// sup |q| over the whole grid
    pub sup_q_grid: f64,
    /// |w(0,s)|
    pub w0_abs: f64,
    pub q_minus: f64,
    pub q_e: f64,
    pub ratio_max: f64,
    /// dq̃ₘ/ds for m = 0, 1, 2
    pub dtilde: [f64; 3],
    pub tilde: Vec<f64>,
    pub hat: Vec<f64>,
    /// Ratios in the order q_e, q_minus, tilde_0, hat_0, tilde_1, hat_1, ...
    pub ratios: Vec<f64>,
    /// Last correction applied along (1+iδ)χh₀ and (1+iδ)χh₁.
    pub control: [f64; 2],
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SimTrace {
    pub m: usize,
    pub rows: Vec<TraceRow>,
}

impl SimTrace {
    pub fn header(m: usize) -> Vec<String> {
        let mut h: Vec<String> = [
            "s", "theta", "theta_prime", "phat0", "sup_q", "sup_q_grid", "w0_abs", "q_minus", "q_e", "ratio_max",
            "dtilde_0", "dtilde_1", "dtilde_2", "control_0", "control_1",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for j in 0..=m {
            h.push(format!("tilde_{j}"));
        }
        for j in 0..=m {
            h.push(format!("hat_{j}"));
        }
        h.push("ratio_q_e".into());
        h.push("ratio_q_minus".into());
        for j in 0..=m {
            h.push(format!("ratio_tilde_{j}"));
            h.push(format!("ratio_hat_{j}"));
        }
        h
    }

    pub fn to_csv(&self) -> CsvTable {
        let header = Self::header(self.m);
        let mut t = CsvTable { header, rows: Vec::with_capacity(self.rows.len()) };
        for r in &self.rows {
            let mut v = vec![
                r.s,
                r.theta,
                r.theta_prime,
                r.phat0,
                r.sup_q,
                r.sup_q_grid,
                r.w0_abs,
                r.q_minus,
                r.q_e,
                r.ratio_max,
                r.dtilde[0],
                r.dtilde[1],
                r.dtilde[2],
                r.control[0],
                r.control[1],
            ];
            v.extend(&r.tilde);
            v.extend(&r.hat);
            v.extend(&r.ratios);
            t.push(v);
        }
        t
    }

    pub fn column(&self, f: impl Fn(&TraceRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    /// Rows with s ≥ from.
    pub fn tail(&self, from: f64) -> Vec<&TraceRow> {
        self.rows.iter().filter(|r| r.s >= from).collect()
    }

    /// true when s is strictly increasing.
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].s > w[0].s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_row_width() {
        let m = 4;
        let row = TraceRow {
            s: 1.0,
            theta: 0.0,
            theta_prime: 0.0,
            phat0: 0.0,
            sup_q: 0.0,
            sup_q_grid: 0.0,
            w0_abs: 0.0,
            q_minus: 0.0,
            q_e: 0.0,
            ratio_max: 0.0,
            dtilde: [0.0; 3],
            tilde: vec![0.0; m + 1],
            hat: vec![0.0; m + 1],
            ratios: vec![0.0; 2 * (m + 1) + 2],
            control: [0.0; 2],
        };
        let t = SimTrace { m, rows: vec![row] };
        let c = t.to_csv();
        assert_eq!(c.header.len(), c.rows[0].len());
        assert!(c.render().starts_with("s,theta,theta_prime,phat0,"));
    }
}
