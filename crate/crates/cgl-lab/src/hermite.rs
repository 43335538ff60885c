//! Hermite basis for the weight ρ(y) = e^{−y²/4}/√(4π), quadrature grids,
//! the operators L₀ = ∂² − ½y∂ and 𝓛̃ = L₀ + (1+iδ)Re, and the Mehler kernel
//! of e^{sL₀}.

use crate::io::Check;
use crate::{LabError, Result, C64};
use std::sync::Arc;

/// Largest degree accepted by [`hermite_poly`] unless a cap is given.
pub const DEFAULT_DEGREE_CAP: usize = 20;

/// Gaussian weight ρ(y) = e^{−y²/4}/√(4π).
pub fn rho(y: f64) -> f64 {
    (-0.25 * y * y).exp() / (4.0 * std::f64::consts::PI).sqrt()
}

/// h_m(y) = Σ m!/(n!(m−2n)!)(−1)ⁿ y^{m−2n}, evaluated by the three-term
/// recurrence h_{m+1} = y h_m − 2m h_{m−1}. Rejects m above the default cap.
pub fn hermite_poly(m: usize, y: f64) -> Result<f64> {
    hermite_poly_capped(m, y, DEFAULT_DEGREE_CAP)
}

pub fn hermite_poly_capped(m: usize, y: f64, cap: usize) -> Result<f64> {
    if m > cap {
        return Err(LabError::InvalidParam(format!("degree {m} exceeds cap {cap}")));
    }
    Ok(hermite_unchecked(m, y))
}

pub(crate) fn hermite_unchecked(m: usize, y: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, y);
    if m == 0 {
        return h0;
    }
    for k in 1..m {
        let h2 = y * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Explicit sum form of h_m, used as an independent check of the recurrence.
pub fn hermite_poly_sum(m: usize, y: f64) -> f64 {
    let fact = |k: usize| (1..=k).fold(1.0f64, |a, i| a * i as f64);
    (0..=m / 2)
        .map(|n| {
            let c = fact(m) / (fact(n) * fact(m - 2 * n));
            let sgn = if n % 2 == 0 { 1.0 } else { -1.0 };
            sgn * c * y.powi((m - 2 * n) as i32)
        })
        .sum()
}

/// ‖h_m‖²_{L²_ρ} = 2^m m!.
pub fn hermite_norm2(m: usize) -> f64 {
    (1..=m).fold(1.0, |a, k| a * 2.0 * k as f64)
}

/// Orthonormal values e_k(y) = h_k(y)/√(2^k k!) for k = 0..=mmax.
pub fn orthonormal_values(y: f64, mmax: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if mmax == 0 {
        return;
    }
    out.push(y / 2f64.sqrt());
    for k in 1..mmax {
        let kf = k as f64;
        let next = (y * out[k] - (2.0 * kf).sqrt() * out[k - 1]) / (2.0 * (kf + 1.0)).sqrt();
        out.push(next);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridKind {
    /// Gauss–Hermite rule for ρ; exact for polynomials of degree ≤ capacity.
    Gauss { capacity: usize },
    /// Uniform nodes on [−y_max, y_max]; weights ρ(y)·dy.
    Uniform { dy: f64 },
}

/// Nodes with ρ-weighted quadrature weights: ∫ f ρ dy ≈ Σ wᵢ f(yᵢ).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: GridKind,
}

impl Grid {
    /// n-point Gauss rule for ρ. Nodes are 2× the physicists' nodes; they come
    /// from the Jacobi matrix and are polished by Newton steps on the
    /// orthonormal recurrence, with Christoffel weights 1/Σ e_k(yᵢ)².
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(LabError::InvalidParam("grid needs at least one node".into()));
        }
        let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let v = (k as f64 / 2.0).sqrt();
            jac[(k, k - 1)] = v;
            jac[(k - 1, k)] = v;
        }
        let eig = nalgebra::SymmetricEigen::new(jac);
        let mut x: Vec<f64> = eig.eigenvalues.iter().map(|t| 2.0 * t).collect();
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut buf = Vec::with_capacity(n + 1);
        for xi in x.iter_mut() {
            for _ in 0..3 {
                orthonormal_values(*xi, n, &mut buf);
                let d = (n as f64 / 2.0).sqrt() * buf[n - 1];
                if d != 0.0 {
                    *xi -= buf[n] / d;
                }
            }
        }
        // enforce exact symmetry
        for i in 0..n / 2 {
            let m = 0.5 * (x[n - 1 - i] - x[i]);
            x[i] = -m;
            x[n - 1 - i] = m;
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        let weights = x
            .iter()
            .map(|&xi| {
                orthonormal_values(xi, n - 1, &mut buf);
                1.0 / buf.iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        Ok(Self { nodes: x, weights, kind: GridKind::Gauss { capacity: 2 * n - 1 } })
    }

    /// Uniform grid on [−y_max, y_max] with spacing close to dy (odd count, 0 included).
    pub fn uniform(y_max: f64, dy: f64) -> Result<Self> {
        if !(y_max > 0.0 && dy > 0.0) {
            return Err(LabError::InvalidParam("uniform grid needs y_max > 0, dy > 0".into()));
        }
        let half = (y_max / dy).ceil() as usize;
        let h = y_max / half as f64;
        let nodes: Vec<f64> = (0..=2 * half).map(|i| (i as f64 - half as f64) * h).collect();
        let weights = nodes.iter().map(|&y| rho(y) * h).collect();
        Ok(Self { nodes, weights, kind: GridKind::Uniform { dy: h } })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest polynomial degree integrated exactly (Gauss), or None.
    pub fn capacity(&self) -> Option<usize> {
        match self.kind {
            GridKind::Gauss { capacity } => Some(capacity),
            GridKind::Uniform { .. } => None,
        }
    }

    /// Table e_k(yᵢ) for k ≤ mmax, row-major by k.
    pub fn orthonormal_table(&self, mmax: usize) -> Vec<Vec<f64>> {
        let mut t = vec![vec![0.0; self.len()]; mmax + 1];
        let mut buf = Vec::with_capacity(mmax + 1);
        for (i, &y) in self.nodes.iter().enumerate() {
            orthonormal_values(y, mmax, &mut buf);
            for k in 0..=mmax {
                t[k][i] = buf[k];
            }
        }
        t
    }
}

/// Complex samples on a shared grid.
#[derive(Debug, Clone)]
pub struct ComplexField {
    pub grid: Arc<Grid>,
    pub values: Vec<C64>,
}

impl ComplexField {
    pub fn new(grid: Arc<Grid>, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::GridMismatch(format!(
                "{} samples for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(LabError::InvalidParam("field samples must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> C64) -> Self {
        let values = grid.nodes.iter().map(|&y| f(y)).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self { grid: grid.clone(), values: vec![C64::new(0.0, 0.0); grid.len()] }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(LabError::GridMismatch("fields live on different grids".into()))
        }
    }
}

/// ∫ f ḡ ρ dy by the grid's quadrature.
pub fn inner(f: &ComplexField, g: &ComplexField) -> Result<C64> {
    f.check_same(g)?;
    Ok(f.values
        .iter()
        .zip(&g.values)
        .zip(&f.grid.weights)
        .map(|((a, b), w)| a * b.conj() * *w)
        .sum())
}

/// Coefficients Q_m = ∫ f h_m ρ / 2^m m! for m ≤ mmax.
pub fn hermite_coefficients(f: &ComplexField, mmax: usize) -> Vec<C64> {
    let t = f.grid.orthonormal_table(mmax);
    (0..=mmax)
        .map(|k| {
            let c: C64 = f
                .values
                .iter()
                .zip(&t[k])
                .zip(&f.grid.weights)
                .map(|((v, e), w)| v * (e * w))
                .sum();
            c / hermite_norm2(k).sqrt()
        })
        .collect()
}

/// Σ Q_m h_m evaluated on the grid of `like`.
pub fn hermite_synthesis(grid: &Arc<Grid>, coeffs: &[C64]) -> ComplexField {
    if coeffs.is_empty() {
        return ComplexField::zeros(grid);
    }
    let mmax = coeffs.len() - 1;
    let t = grid.orthonormal_table(mmax);
    let values = (0..grid.len())
        .map(|i| (0..=mmax).map(|k| coeffs[k] * (t[k][i] * hermite_norm2(k).sqrt())).sum())
        .collect();
    ComplexField { grid: grid.clone(), values }
}

/// Degree used for spectral operators: resynthesis amplifies round-off by
/// roughly e^{y²/8} at the outer nodes, so it is kept modest.
pub const SPECTRAL_DEGREE: usize = 2 * DEFAULT_DEGREE_CAP;

/// L₀f = f″ − ½y f′ applied in coefficient space (L₀h_m = −(m/2)h_m).
pub fn apply_l0(f: &ComplexField) -> ComplexField {
    let mmax = SPECTRAL_DEGREE.min(f.grid.len() - 1);
    let mut c = hermite_coefficients(f, mmax);
    for (m, cm) in c.iter_mut().enumerate() {
        *cm *= -(m as f64) / 2.0;
    }
    hermite_synthesis(&f.grid, &c)
}

/// 𝓛̃f = L₀f + (1+iδ)Re f.
pub fn apply_ltilde(f: &ComplexField, delta: f64) -> ComplexField {
    let mut out = apply_l0(f);
    let one = C64::new(1.0, delta);
    for (o, v) in out.values.iter_mut().zip(&f.values) {
        *o += one * v.re;
    }
    out
}

/// Derivative f′ in coefficient space (h_m′ = m h_{m−1}).
pub fn derivative(f: &ComplexField) -> ComplexField {
    let mmax = SPECTRAL_DEGREE.min(f.grid.len() - 1);
    let c = hermite_coefficients(f, mmax);
    let mut d = vec![C64::new(0.0, 0.0); mmax + 1];
    for m in 1..=mmax {
        d[m - 1] = c[m] * m as f64;
    }
    hermite_synthesis(&f.grid, &d)
}

/// Mehler kernel K_s(y,x) = [4π(1−e^{−s})]^{−1/2} exp(−(x − y e^{−s/2})²/(4(1−e^{−s}))).
pub fn mehler_kernel(s: f64, y: f64, x: f64) -> f64 {
    let v = 1.0 - (-s).exp();
    let d = x - y * (-0.5 * s).exp();
    (-(d * d) / (4.0 * v)).exp() / (4.0 * std::f64::consts::PI * v).sqrt()
}

/// e^{sL₀} discretized on a uniform grid by trapezoid quadrature of the
/// Mehler kernel. Rows are banded and normalized to unit sum, so constants are
/// preserved and the discrete operator is a positive averaging.
#[derive(Debug, Clone)]
pub struct MehlerOperator {
    pub s: f64,
    n: usize,
    start: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl MehlerOperator {
    pub fn new(grid: &Grid, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(LabError::InvalidParam(format!("Mehler time must be > 0, got {s}")));
        }
        let dy = match grid.kind {
            GridKind::Uniform { dy } => dy,
            GridKind::Gauss { .. } => {
                return Err(LabError::GridMismatch("Mehler operator needs a uniform grid".into()))
            }
        };
        let n = grid.len();
        let y0 = grid.nodes[0];
        let v = 1.0 - (-s).exp();
        let e = (-0.5 * s).exp();
        // exponent below −60 is dropped
        let reach = (240.0 * v).sqrt();
        let mut start = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for &y in &grid.nodes {
            let c = e * y;
            let lo = (((c - reach - y0) / dy).floor().max(0.0)) as usize;
            let hi = ((((c + reach - y0) / dy).ceil()) as usize).min(n - 1);
            let lo = lo.min(hi);
            let mut row: Vec<f64> =
                (lo..=hi).map(|j| mehler_kernel(s, y, grid.nodes[j]) * dy).collect();
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|r| *r /= sum);
            } else {
                // kernel entirely off-grid: nearest node
                let j = if c < y0 { 0 } else { n - 1 };
                start.push(j);
                rows.push(vec![1.0]);
                continue;
            }
            start.push(lo);
            rows.push(row);
        }
        Ok(Self { s, n, start, rows })
    }

    pub fn apply_real(&self, f: &[f64], out: &mut [f64]) {
        debug_assert_eq!(f.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            let st = self.start[i];
            *o = self.rows[i].iter().zip(&f[st..]).map(|(k, v)| k * v).sum();
        }
    }

    pub fn apply_complex(&self, f: &[C64], out: &mut [C64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let st = self.start[i];
            *o = self.rows[i].iter().zip(&f[st..]).map(|(k, v)| v * *k).sum();
        }
    }
}

/// e^{sL₀}f on a uniform grid.
pub fn mehler_apply(s: f64, f: &ComplexField) -> Result<ComplexField> {
    let op = MehlerOperator::new(&f.grid, s)?;
    let mut out = ComplexField::zeros(&f.grid);
    op.apply_complex(&f.values, &mut out.values);
    Ok(out)
}

/// ‖e^{sL₀}∂f‖_∞·√(1−e^{−s})/‖f‖_∞, with ∂ moved onto the kernel by parts
/// and norms taken over nodes with |y| ≤ y_eval.
pub fn mehler_div_ratio(s: f64, f: &ComplexField, y_eval: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(LabError::InvalidParam("s must be > 0".into()));
    }
    let dy = match f.grid.kind {
        GridKind::Uniform { dy } => dy,
        _ => return Err(LabError::GridMismatch("needs a uniform grid".into())),
    };
    let v = 1.0 - (-s).exp();
    let e = (-0.5 * s).exp();
    let fnorm = f.sup_norm();
    if fnorm == 0.0 {
        return Ok(0.0);
    }
    let mut sup = 0.0f64;
    for &y in f.grid.nodes.iter().filter(|y| y.abs() <= y_eval) {
        let val: C64 = f
            .grid
            .nodes
            .iter()
            .zip(&f.values)
            .map(|(&x, fx)| {
                let dk = (x - y * e) / (2.0 * v) * mehler_kernel(s, y, x);
                fx * (dk * dy)
            })
            .sum();
        sup = sup.max(val.norm());
    }
    Ok(sup * v.sqrt() / fnorm)
}

/// Orthogonality, 𝓛̃ eigen-relations, Mehler decay and semigroup, and the
/// maximum principle on `fields` random fields.
pub fn spectral_suite(seed: u64, fields: usize) -> Result<Vec<Check>> {
    use rand::{Rng, SeedableRng};
    let mut out = Vec::new();

    let g = Arc::new(Grid::gauss_hermite(64)?);
    let hs: Vec<ComplexField> =
        (0..=8).map(|m| ComplexField::from_fn(&g, |y| C64::new(hermite_unchecked(m, y), 0.0))).collect();
    let mut orth = 0.0f64;
    for m in 0..=8 {
        for n in 0..=8 {
            let v = inner(&hs[m], &hs[n])?;
            let want = if m == n { hermite_norm2(m) } else { 0.0 };
            orth = orth.max((v - want).norm() / hermite_norm2(m.max(n)));
        }
    }
    out.push(Check::at_most("orthogonality (m,n <= 8)", orth, 1e-10));

    let delta = 3f64.sqrt();
    let one = C64::new(1.0, delta);
    let g = Arc::new(Grid::gauss_hermite(48)?);
    let mut eig = 0.0f64;
    for m in 0..=4 {
        for (dir, k) in [(one, 1.0 - m as f64 / 2.0), (C64::i(), -(m as f64) / 2.0)] {
            let f = ComplexField::from_fn(&g, |y| dir * hermite_unchecked(m, y));
            let lf = apply_ltilde(&f, delta);
            for (i, &y) in g.nodes.iter().enumerate() {
                if y.abs() <= 6.0 {
                    eig = eig.max((lf.values[i] - f.values[i] * k).norm());
                }
            }
        }
    }
    out.push(Check::at_most("Ltilde eigen-relations (m <= 4)", eig, 1e-10));

    let g = Arc::new(Grid::uniform(30.0, 0.05)?);
    let mut decay = 0.0f64;
    for s in [0.1, 1.0] {
        for m in 0..=3 {
            let f = ComplexField::from_fn(&g, |y| C64::new(hermite_unchecked(m, y), 0.0));
            let e = mehler_apply(s, &f)?;
            let k = (-(m as f64) * s / 2.0).exp();
            for (i, &y) in g.nodes.iter().enumerate() {
                if y.abs() <= 5.0 {
                    let ex = k * f.values[i].re;
                    decay = decay.max((e.values[i].re - ex).abs() / ex.abs().max(1.0));
                }
            }
        }
    }
    out.push(Check::at_most("Mehler eigen decay", decay, 1e-8));

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cf: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = ComplexField::from_fn(&g, |y| {
        C64::new(cf[0] * (cf[1] * y).sin() + cf[2] * (-0.1 * y * y).exp(), cf[3] * (cf[4] * y).cos() + cf[5])
    });
    let a = mehler_apply(0.9, &f)?;
    let b = mehler_apply(0.2, &mehler_apply(0.7, &f)?)?;
    let semi = g
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, y)| y.abs() <= 10.0)
        .map(|(i, _)| (a.values[i] - b.values[i]).norm())
        .fold(0.0, f64::max);
    out.push(Check::at_most("Mehler semigroup", semi, 1e-8));

    let g = Arc::new(Grid::uniform(20.0, 0.1)?);
    let op = MehlerOperator::new(&g, 0.5)?;
    let mut excess = 0.0f64;
    let mut o = vec![C64::new(0.0, 0.0); g.len()];
    for _ in 0..fields {
        let v: Vec<C64> = (0..g.len()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let f = ComplexField::new(g.clone(), v)?;
        op.apply_complex(&f.values, &mut o);
        let so = o.iter().map(|v| v.norm()).fold(0.0, f64::max);
        excess = excess.max(so / f.sup_norm() - 1.0);
    }
    out.push(Check::at_most(format!("maximum principle excess ({fields} fields)"), excess.max(0.0), 1e-14));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn interior_err(g: &Grid, a: &ComplexField, b: &ComplexField, k: f64) -> f64 {
        (0..g.len())
            .filter(|&i| g.nodes[i].abs() <= 6.0)
            .map(|i| (a.values[i] - b.values[i] * k).norm())
            .fold(0.0, f64::max)
    }

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn hermite_examples() {
        assert_eq!(hermite_poly(2, 0.0).unwrap(), -2.0);
        assert_eq!(hermite_poly(0, 3.7).unwrap(), 1.0);
        assert_eq!(hermite_poly(4, 1.0).unwrap(), 1.0);
        assert!(hermite_poly(21, 1.0).is_err());
        for m in 0..=20 {
            for y in [-2.3, 0.0, 0.7, 3.1] {
                let a = hermite_poly(m, y).unwrap();
                let b = hermite_poly_sum(m, y);
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "m={m} y={y}");
            }
        }
    }

    #[test]
    fn gauss_moments_and_symmetry() {
        let g = Grid::gauss_hermite(128).unwrap();
        for i in 0..64 {
            assert_eq!(g.nodes[i], -g.nodes[127 - i]);
        }
        // E[y^{2k}] = (2k)!/k! for variance 2
        let mut exact = 1.0;
        for k in 0..40usize {
            if k > 0 {
                exact *= (2 * k) as f64 * (2 * k - 1) as f64 / k as f64;
            }
            let q: f64 = g.nodes.iter().zip(&g.weights).map(|(y, w)| w * y.powi(2 * k as i32)).sum();
            assert!((q / exact - 1.0).abs() < 1e-12, "k={k} {q} {exact}");
        }
        let odd: f64 = g.nodes.iter().zip(&g.weights).map(|(y, w)| w * y.powi(5)).sum();
        assert!(odd.abs() < 1e-12);
    }

    #[test]
    fn orthogonality_matrix() {
        let g = Arc::new(Grid::gauss_hermite(64).unwrap());
        for m in 0..=8 {
            let hm = ComplexField::from_fn(&g, |y| c(hermite_poly(m, y).unwrap()));
            for n in 0..=8 {
                let hn = ComplexField::from_fn(&g, |y| c(hermite_poly(n, y).unwrap()));
                let v = inner(&hm, &hn).unwrap();
                if m == n {
                    assert!((v.re / hermite_norm2(m) - 1.0).abs() < 1e-12);
                } else {
                    assert!(v.norm() < 1e-12 * hermite_norm2(m.max(n)));
                }
            }
        }
        let one = ComplexField::from_fn(&g, |_| c(1.0));
        assert!((inner(&one, &one).unwrap().re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn uniform_grid_quadrature_is_accurate() {
        let g = Grid::uniform(40.0, 0.1).unwrap();
        let m4: f64 = g.nodes.iter().zip(&g.weights).map(|(y, w)| w * y.powi(4)).sum();
        assert!((m4 - 12.0).abs() < 1e-12);
    }

    #[test]
    fn ltilde_eigenrelations() {
        let delta = 3f64.sqrt();
        let g = Arc::new(Grid::gauss_hermite(48).unwrap());
        let one = C64::new(1.0, delta);
        for m in 0..=4 {
            let f = ComplexField::from_fn(&g, |y| one * hermite_poly(m, y).unwrap());
            let lf = apply_ltilde(&f, delta);
            let k = 1.0 - m as f64 / 2.0;
            let err = interior_err(&g, &lf, &f, k);
            assert!(err < 1e-10, "m={m} err={err}");
            let f = ComplexField::from_fn(&g, |y| C64::i() * hermite_poly(m, y).unwrap());
            let lf = apply_ltilde(&f, delta);
            let k = -(m as f64) / 2.0;
            let err = interior_err(&g, &lf, &f, k);
            assert!(err < 1e-10, "m={m} err={err}");
        }
        let z = ComplexField::zeros(&g);
        assert_eq!(apply_ltilde(&z, delta).sup_norm(), 0.0);
    }

    #[test]
    fn ltilde_not_complex_linear() {
        let delta = 3f64.sqrt();
        let g = Arc::new(Grid::gauss_hermite(32).unwrap());
        let f = ComplexField::from_fn(&g, |y| C64::new(1.0 + 0.1 * y * y, 0.3));
        let if_ = ComplexField::from_fn(&g, |y| C64::i() * C64::new(1.0 + 0.1 * y * y, 0.3));
        let a = apply_ltilde(&if_, delta);
        let b = apply_ltilde(&f, delta);
        let diff = a.values.iter().zip(&b.values).map(|(x, y)| (x - C64::i() * y).norm()).fold(0.0, f64::max);
        assert!(diff > 1e-3);
    }

    #[test]
    fn derivative_shifts() {
        let g = Arc::new(Grid::gauss_hermite(32).unwrap());
        let f = ComplexField::from_fn(&g, |y| c(hermite_poly(5, y).unwrap()));
        let d = derivative(&f);
        for (i, &y) in g.nodes.iter().enumerate().filter(|(_, y)| y.abs() <= 6.0) {
            let ex = 5.0 * hermite_poly(4, y).unwrap();
            assert!((d.values[i].re - ex).abs() < 1e-8 * ex.abs().max(1.0));
        }
    }

    #[test]
    fn mehler_eigen_decay_and_constants() {
        let g = Arc::new(Grid::uniform(30.0, 0.05).unwrap());
        for s in [0.1, 1.0] {
            for m in 0..=3 {
                let f = ComplexField::from_fn(&g, |y| c(hermite_poly(m, y).unwrap()));
                let out = mehler_apply(s, &f).unwrap();
                let k = (-(m as f64) * s / 2.0).exp();
                for (i, &y) in g.nodes.iter().enumerate() {
                    if y.abs() <= 5.0 {
                        let ex = k * f.values[i].re;
                        assert!((out.values[i].re - ex).abs() <= 1e-8 * ex.abs().max(1.0), "s={s} m={m} y={y}");
                    }
                }
            }
        }
        let one = ComplexField::from_fn(&g, |_| c(1.0));
        let out = mehler_apply(0.3, &one).unwrap();
        assert!(out.values.iter().all(|v| (v.re - 1.0).abs() < 1e-14));
        assert!(mehler_apply(0.0, &one).is_err());
    }

    #[test]
    fn unsquared_kernel_fails_eigen_decay() {
        let s: f64 = 1.0;
        let v = 1.0 - (-s).exp();
        let e = (-0.5 * s).exp();
        let y = 1.5;
        let (lo, hi, n) = (-40.0, 40.0, 160001);
        let h = (hi - lo) / (n - 1) as f64;
        // e^{sL0} h_2 = e^{-s} h_2 needs the Gaussian second moment
        let (mut m2, mut d2) = (0.0, 0.0);
        for i in 0..n {
            let x = lo + i as f64 * h;
            let k = (-(x - y * e).abs() / (4.0 * v)).exp();
            m2 += k * (x * x - 2.0);
            d2 += k;
        }
        let got = m2 / d2;
        let ex = (-s).exp() * (y * y - 2.0);
        assert!((got - ex).abs() > 1e-2);
    }

    #[test]
    fn mehler_semigroup() {
        let g = Arc::new(Grid::uniform(30.0, 0.05).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let coef: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = ComplexField::from_fn(&g, |y| {
            C64::new(coef[0] * (coef[1] * y).sin() + coef[2] * (-0.1 * y * y).exp(), coef[3] * (coef[4] * y).cos() + coef[5])
        });
        let a = mehler_apply(0.9, &f).unwrap();
        let b = mehler_apply(0.2, &mehler_apply(0.7, &f).unwrap()).unwrap();
        for (i, &y) in g.nodes.iter().enumerate() {
            if y.abs() <= 10.0 {
                assert!((a.values[i] - b.values[i]).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn mehler_maximum_principle() {
        let g = Arc::new(Grid::uniform(20.0, 0.1).unwrap());
        let op = MehlerOperator::new(&g, 0.5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let vals: Vec<C64> = (0..g.len()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let f = ComplexField::new(g.clone(), vals).unwrap();
            let mut out = vec![C64::new(0.0, 0.0); g.len()];
            op.apply_complex(&f.values, &mut out);
            let so = out.iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(so <= f.sup_norm() * (1.0 + 1e-14));
        }
    }

    #[test]
    fn div_ratio_bounded() {
        let g = Arc::new(Grid::uniform(30.0, 0.05).unwrap());
        let f = ComplexField::from_fn(&g, |y| c((1.3 * y).sin()));
        let mut worst = 0.0f64;
        for s in [0.01, 0.05, 0.2, 1.0, 5.0] {
            worst = worst.max(mehler_div_ratio(s, &f, 8.0).unwrap());
        }
        assert!(worst > 0.0 && worst <= 2.0, "{worst}");
        let k = ComplexField::from_fn(&g, |_| c(2.0));
        assert!(mehler_div_ratio(0.5, &k, 8.0).unwrap() < 1e-12);
        let h1 = ComplexField::from_fn(&g, |y| c(y.clamp(-20.0, 20.0)));
        let r = mehler_div_ratio(1.0, &h1, 5.0).unwrap();
        // e^{L0} h_1' = 1, so the ratio is sqrt(1-e^{-1})/max|h1|
        assert!((r - (1.0 - (-1f64).exp()).sqrt() / 20.0).abs() < 1e-6);
    }
}
