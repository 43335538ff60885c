//! Least-squares fits used by the decay-rate checks.

use serde::Serialize;

/// Outcome of a log-log fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// false when the data were not strictly monotone in magnitude
    pub monotone: bool,
}

/// Ordinary least squares y = c0 + c1 x.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let c1 = sxy / sxx;
    Some((my - c1 * mx, c1))
}

/// Slope of log|y| against log x. Returns None if any value is zero or
/// non-finite.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<SlopeFit> {
    if xs.iter().chain(ys).any(|v| !v.is_finite()) || ys.contains(&0.0) {
        return None;
    }
    if xs.iter().any(|x| *x <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.abs().ln()).collect();
    let (c0, c1) = linear_fit(&lx, &ly)?;
    let inc = ly.windows(2).all(|w| w[1] > w[0]);
    let dec = ly.windows(2).all(|w| w[1] < w[0]);
    Some(SlopeFit { slope: c1, intercept: c0, monotone: inc || dec })
}

/// Envelope slope: running maxima of |y| taken from the right, so that
/// oscillating decaying data are fitted by their upper envelope.
pub fn envelope_slope(xs: &[f64], ys: &[f64]) -> Option<SlopeFit> {
    let mut env = vec![0.0; ys.len()];
    let mut m = 0.0f64;
    for i in (0..ys.len()).rev() {
        m = m.max(ys[i].abs());
        env[i] = m;
    }
    loglog_slope(xs, &env)
}

/// n points log-spaced on [a, b].
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_power_law() {
        let xs = logspace(1e2, 1e5, 13);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-1.5)).collect();
        let f = loglog_slope(&xs, &ys).unwrap();
        assert!((f.slope + 1.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
        assert!(f.monotone);
    }

    #[test]
    fn zero_rejected() {
        assert!(loglog_slope(&[1.0, 2.0], &[1.0, 0.0]).is_none());
    }

    #[test]
    fn envelope_of_oscillation() {
        let xs = logspace(10.0, 1e3, 200);
        let ys: Vec<f64> = xs.iter().map(|x| x.powf(-2.0) * (x.ln() * 7.0).cos()).collect();
        let f = envelope_slope(&xs, &ys).unwrap();
        assert!((f.slope + 2.0).abs() < 0.1, "{}", f.slope);
    }
}
