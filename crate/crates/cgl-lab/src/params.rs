//! Physical parameters, criticality, derived constants and the closed-form
//! profiles φ₀(z) and φ(y, s).

use crate::io::Check;
use crate::{LabError, Result, C64};
use serde::{Deserialize, Serialize};

/// Absolute tolerance on p − δ² − βδ(p+1) used to call parameters critical.
pub const CRIT_TOL: f64 = 1e-12;

/// Exponents of the Ginzburg–Landau equation. β and ν are carried for
/// classification only; every computation uses β = ν = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub p: f64,
    pub delta: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub nu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criticality {
    Subcritical,
    Critical,
    Supercritical,
}

impl std::fmt::Display for Criticality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Criticality::Subcritical => "subcritical",
            Criticality::Critical => "critical",
            Criticality::Supercritical => "supercritical",
        };
        f.write_str(s)
    }
}

impl Parameters {
    pub fn new(p: f64, delta: f64, beta: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(LabError::InvalidParam(format!("p must be > 1, got {p}")));
        }
        if !delta.is_finite() || !beta.is_finite() {
            return Err(LabError::InvalidParam("delta and beta must be finite".into()));
        }
        Ok(Self { p, delta, beta, nu: 0.0 })
    }

    /// Critical parameters (β = 0, δ = √p).
    pub fn critical(p: f64) -> Result<Self> {
        Self::new(p, p.max(0.0).sqrt(), 0.0)
    }

    pub fn classify(&self) -> Criticality {
        classify(self)
    }
}

/// Sign of p − δ² − βδ(p+1), with a 1e−12 dead zone around zero.
pub fn classify(par: &Parameters) -> Criticality {
    let g = par.p - par.delta * par.delta - par.beta * par.delta * (par.p + 1.0);
    if g.abs() <= CRIT_TOL {
        Criticality::Critical
    } else if g > 0.0 {
        Criticality::Subcritical
    } else {
        Criticality::Supercritical
    }
}

/// Constants of the critical profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
    pub mu: f64,
    pub alpha: f64,
    /// Subcritical comparison constant; absent at criticality.
    pub b_sub: Option<f64>,
    /// Comparison constant b_p, defined only for δ² < 15.
    pub b_p: Option<f64>,
}

/// κ, a, b, μ, α for critical parameters.
pub fn derive_constants(par: &Parameters) -> Result<DerivedConstants> {
    let class = classify(par);
    if class != Criticality::Critical || par.beta != 0.0 {
        return Err(LabError::NotCritical(class.to_string()));
    }
    let p = par.p;
    let d = par.delta;
    let kappa = (p - 1.0).powf(-1.0 / (p - 1.0));
    let r = (p * (p + 1.0)).sqrt();
    let b = (p - 1.0).powi(2) / (8.0 * r);
    let a = kappa / (4.0 * r);
    let mu = d / (8.0 * p);
    let alpha = -kappa / (8.0 * r);
    let den = p - d * d - par.beta * d * (p + 1.0);
    let b_sub = if den.abs() <= CRIT_TOL {
        None
    } else {
        Some((p - 1.0).powi(2) / (4.0 * den))
    };
    Ok(DerivedConstants { kappa, a, b, mu, alpha, b_sub, b_p: bp_constant(d) })
}

/// b_p = 2 (√((3/(2δ²))(δ²+5)(δ²+1)(15−δ²)))⁻¹, for 0 < δ² < 15.
pub fn bp_constant(delta: f64) -> Option<f64> {
    let d2 = delta * delta;
    if d2 <= 0.0 || d2 >= 15.0 {
        return None;
    }
    let inner = 3.0 / (2.0 * d2) * (d2 + 5.0) * (d2 + 1.0) * (15.0 - d2);
    Some(2.0 / inner.sqrt())
}

/// Alternative α at p = 3, −√2/(16√3).
pub fn alpha_alt_p3() -> f64 {
    -(2f64.sqrt()) / (16.0 * 3f64.sqrt())
}

/// Residuals of the three matching conditions
/// a = 2κb/(p−1)², μ = 8δ(p+1)b²/(p−1)⁴ and
/// ½ + μδ = p(p+1)(a²/κ² + 60b²/(p−1)⁴ − 12ab/(κ(p−1)²)).
pub fn cond_residuals(par: &Parameters, c: &DerivedConstants) -> [f64; 3] {
    let p = par.p;
    let d = par.delta;
    let q2 = (p - 1.0).powi(2);
    let q4 = q2 * q2;
    let r1 = c.a - 2.0 * c.kappa * c.b / q2;
    let r2 = c.mu - 8.0 * d * (p + 1.0) * c.b * c.b / q4;
    let rhs = p
        * (p + 1.0)
        * (c.a * c.a / (c.kappa * c.kappa) + 60.0 * c.b * c.b / q4
            - 12.0 * c.a * c.b / (c.kappa * q2));
    let r3 = 0.5 + c.mu * d - rhs;
    [r1, r2, r3]
}

/// Third matching condition with the last term written as 12ab²/(p−1)⁴.
/// Kept for reporting; it does not vanish in general.
pub fn cond3_variant_residual(par: &Parameters, c: &DerivedConstants) -> f64 {
    let p = par.p;
    let q4 = (p - 1.0).powi(4);
    let rhs = p
        * (p + 1.0)
        * (c.a * c.a / (c.kappa * c.kappa) + 60.0 * c.b * c.b / q4 - 12.0 * c.a * c.b * c.b / q4);
    0.5 + c.mu * par.delta - rhs
}

/// μ from α through μ = 8δ(p+1)α²/κ².
pub fn mu_from_alpha(par: &Parameters, kappa: f64, alpha: f64) -> f64 {
    8.0 * par.delta * (par.p + 1.0) * alpha * alpha / (kappa * kappa)
}

/// Closed-form profile with its derivatives. All quantities are for critical
/// parameters and β = 0.
#[derive(Debug, Clone, Copy)]
pub struct Profile {
    pub par: Parameters,
    pub c: DerivedConstants,
    /// (1+iδ)
    pub one: C64,
    /// −(1+iδ)/(p−1)
    pub g: C64,
    /// κ^{−iδ}, the constant phase making φ₀(0) = κ real.
    pub phase: C64,
}

/// Values of φ and its derivatives at one point.
#[derive(Debug, Clone, Copy)]
pub struct PhiJet {
    pub phi: C64,
    pub phi_y: C64,
    pub phi_yy: C64,
    pub phi_s: C64,
}

impl Profile {
    pub fn new(par: Parameters) -> Result<Self> {
        let c = derive_constants(&par)?;
        let one = C64::new(1.0, par.delta);
        let g = -one / (par.p - 1.0);
        let phase = C64::new(0.0, -par.delta * c.kappa.ln()).exp();
        Ok(Self { par, c, one, g, phase })
    }

    pub fn critical(p: f64) -> Result<Self> {
        Self::new(Parameters::critical(p)?)
    }

    /// (p−1+bz²)^{−(1+iδ)/(p−1)} via exp(g·ln u), without the constant phase.
    pub fn phi0_raw(&self, z: f64) -> C64 {
        let u = self.par.p - 1.0 + self.c.b * z * z;
        (self.g * u.ln()).exp()
    }

    /// φ₀(z) = κ^{−iδ}(p−1+bz²)^{−(1+iδ)/(p−1)}; φ₀(0) = κ.
    pub fn phi0(&self, z: f64) -> C64 {
        self.phase * self.phi0_raw(z)
    }

    /// (φ₀, φ₀′, φ₀″) at z.
    pub fn phi0_jet(&self, z: f64) -> (C64, C64, C64) {
        let b = self.c.b;
        let u = self.par.p - 1.0 + b * z * z;
        let f = self.phi0(z);
        let l = 2.0 * b * z / u;
        let f1 = f * self.g * l;
        let f2 = f * (self.g * (self.g - 1.0) * l * l + self.g * (2.0 * b / u));
        (f, f1, f2)
    }

    /// −½zφ₀′ − (1+iδ)/(p−1)φ₀ + (1+iδ)|φ₀|^{p−1}φ₀.
    pub fn stationary_residual(&self, z: f64) -> C64 {
        let (f, f1, _) = self.phi0_jet(z);
        let p = self.par.p;
        -0.5 * z * f1 - self.one / (p - 1.0) * f + self.one * f.norm().powf(p - 1.0) * f
    }

    /// φ(y,s) = φ₀(y/s^{1/4}) + (1+iδ)a/√s.
    pub fn phi(&self, y: f64, s: f64) -> C64 {
        self.phi0(y * s.powf(-0.25)) + self.one * (self.c.a / s.sqrt())
    }

    /// φ and its y- and s-derivatives in closed form.
    pub fn phi_jet(&self, y: f64, s: f64) -> PhiJet {
        let q = s.powf(-0.25);
        let z = y * q;
        let (f, f1, f2) = self.phi0_jet(z);
        let a = self.c.a;
        PhiJet {
            phi: f + self.one * (a / s.sqrt()),
            phi_y: f1 * q,
            phi_yy: f2 * (q * q),
            phi_s: -0.25 * z / s * f1 - self.one * (0.5 * a * s.powf(-1.5)),
        }
    }

    /// Nonlinearity F(u) = (1+iδ)|u|^{p−1}u.
    pub fn nonlin(&self, u: C64) -> C64 {
        self.one * u.norm().powf(self.par.p - 1.0) * u
    }
}

/// p values swept by the constants check.
pub const CHECK_PS: [f64; 5] = [1.5, 2.0, 3.0, 5.0, 7.0];

/// Closed-form consistency: b against b_p at p = 3, the three matching
/// conditions on `ps`, and μ against δ/(8p) and its α form.
pub fn constants_checks(ps: &[f64]) -> Result<Vec<Check>> {
    let tol = 1e-12;
    let mut out = Vec::new();
    let c3 = derive_constants(&Parameters::critical(3.0)?)?;
    let bp = c3.b_p.ok_or_else(|| LabError::InvalidParam("b_p undefined at p = 3".into()))?;
    out.push(Check::at_most("|b - b_p| at p=3", (c3.b - bp).abs(), tol));
    for &p in ps {
        let par = Parameters::critical(p)?;
        let c = derive_constants(&par)?;
        for (i, r) in cond_residuals(&par, &c).iter().enumerate() {
            out.push(Check::at_most(format!("cond{} residual at p={p}", i + 1), r.abs(), tol));
        }
        let mu = par.delta / (8.0 * p);
        out.push(Check::at_most(format!("|mu - delta/(8p)| at p={p}"), (c.mu - mu).abs(), tol));
        let via_alpha = mu_from_alpha(&par, c.kappa, c.alpha);
        out.push(Check::at_most(format!("|8d(p+1)alpha^2/kappa^2 - mu| at p={p}"), (via_alpha - mu).abs(), tol));
    }
    Ok(out)
}

/// sup of |stationary residual| over n+1 equispaced z in [0, z_max].
pub fn profile_residual_sup(prof: &Profile, z_max: f64, n: usize) -> f64 {
    (0..=n).map(|i| prof.stationary_residual(z_max * i as f64 / n as f64).norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn classification_examples() {
        let sub = Parameters::new(3.0, 1.0, 0.0).unwrap();
        assert_eq!(classify(&sub), Criticality::Subcritical);
        let crit = Parameters::critical(3.0).unwrap();
        assert_eq!(classify(&crit), Criticality::Critical);
        let sup = Parameters::new(2.0, 2.0, 0.0).unwrap();
        assert_eq!(classify(&sup), Criticality::Supercritical);
        assert!(Parameters::new(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn constants_p3() {
        let par = Parameters::critical(3.0).unwrap();
        let c = derive_constants(&par).unwrap();
        // independent forms: κ = 1/√2, b = 4/(8√12), a = κ/(4√12), μ = √3/24
        let r12 = 12f64.sqrt();
        assert_relative_eq!(c.kappa, 1.0 / 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(c.b, 0.5 / r12, max_relative = 1e-15);
        assert_relative_eq!(c.a, c.kappa / (4.0 * r12), max_relative = 1e-15);
        assert_relative_eq!(c.mu, 3f64.sqrt() / 24.0, max_relative = 1e-15);
        assert!((c.kappa - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((c.b - 0.1443376).abs() < 1e-7);
        assert!((c.a - 0.0510310).abs() < 1e-7);
        assert!((c.mu - 0.0721688).abs() < 1e-7);
        assert!((c.alpha + 0.0255155).abs() < 1e-7);
        assert!(c.b_sub.is_none());
        assert!((c.b_p.unwrap() - c.b).abs() <= 1e-12);
        // the alternative value is twice the closed form
        assert_relative_eq!(alpha_alt_p3(), 2.0 * c.alpha, max_relative = 1e-14);
    }

    #[test]
    fn non_critical_rejected() {
        let par = Parameters::new(3.0, 1.0, 0.0).unwrap();
        let e = derive_constants(&par).unwrap_err();
        assert!(e.to_string().contains("subcritical"));
    }

    #[test]
    fn cond_and_hypsys_on_grid() {
        for p in [1.5, 2.0, 3.0, 5.0, 7.0] {
            let par = Parameters::critical(p).unwrap();
            let c = derive_constants(&par).unwrap();
            for r in cond_residuals(&par, &c) {
                assert!(r.abs() <= 1e-12, "p={p} r={r}");
            }
            assert!((c.mu - mu_from_alpha(&par, c.kappa, c.alpha)).abs() <= 1e-12);
        }
        let par = Parameters::critical(3.0).unwrap();
        let c = derive_constants(&par).unwrap();
        assert!(cond3_variant_residual(&par, &c).abs() > 1e-3);
    }

    #[test]
    fn b_p_range() {
        assert!(bp_constant(15f64.sqrt()).is_none());
        assert!(bp_constant(4.0).is_none());
        assert!(bp_constant(1.0).is_some());
    }

    #[test]
    fn phi0_examples() {
        let pr = Profile::critical(3.0).unwrap();
        let f0 = pr.phi0(0.0);
        assert!((f0.re - pr.c.kappa).abs() < 1e-15 && f0.im.abs() < 1e-15);
        for z in [0.5, 1.0, 2.0] {
            assert!(pr.stationary_residual(z).norm() <= 1e-10);
        }
        let z = 100.0;
        let asym = (pr.c.b * z * z).powf(-1.0 / (pr.par.p - 1.0));
        assert!((pr.phi0(z).norm() / asym - 1.0).abs() < 0.01);
    }

    #[test]
    fn phi0_derivatives_match_differences() {
        let pr = Profile::critical(2.0).unwrap();
        let h = 1e-5;
        for z in [0.3, 1.7, 4.0] {
            let (_, f1, f2) = pr.phi0_jet(z);
            let d1 = (pr.phi0(z + h) - pr.phi0(z - h)) / (2.0 * h);
            let d2 = (pr.phi0(z + h) - 2.0 * pr.phi0(z) + pr.phi0(z - h)) / (h * h);
            assert!((f1 - d1).norm() < 1e-8);
            assert!((f2 - d2).norm() < 1e-4);
        }
    }

    #[test]
    fn phi_examples() {
        let pr = Profile::critical(3.0).unwrap();
        let s = 1e4;
        let d = (pr.phi(0.0, s) - pr.phi0(0.0)).norm();
        assert_relative_eq!(d, 2.0 * pr.c.a / s.sqrt(), max_relative = 1e-12);
        let off = pr.phi(0.3, s) - pr.phi0(0.3 * s.powf(-0.25));
        let off2 = pr.phi(2.0, s) - pr.phi0(2.0 * s.powf(-0.25));
        assert!((off - off2).norm() < 1e-15);
        let mut prev = f64::INFINITY;
        for k in 2..=6 {
            let s = 10f64.powi(k);
            let e = (pr.phi(s.powf(0.25), s).norm() - pr.phi0(1.0).norm()).abs();
            assert!(e * s.sqrt() < 0.2);
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn phi_s_derivative_matches_difference() {
        let pr = Profile::critical(3.0).unwrap();
        let (y, s, h) = (2.5, 40.0, 1e-4);
        let j = pr.phi_jet(y, s);
        let ds = (pr.phi(y, s + h) - pr.phi(y, s - h)) / (2.0 * h);
        assert!((j.phi_s - ds).norm() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn classify_even_in_delta(p in 1.01f64..10.0, d in -5.0f64..5.0) {
            let a = Parameters::new(p, d, 0.0).unwrap();
            let b = Parameters::new(p, -d, 0.0).unwrap();
            proptest::prop_assert_eq!(classify(&a), classify(&b));
        }

        #[test]
        fn phi0_solves_stationary_equation(z in 0.0f64..10.0, p in 1.2f64..8.0) {
            let pr = Profile::critical(p).unwrap();
            proptest::prop_assert!(pr.stationary_residual(z).norm() <= 1e-10);
        }
    }
}
