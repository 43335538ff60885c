//! Simulation configuration, read from TOML or JSON.

use crate::decomp::default_k;
use crate::params::Profile;
use crate::residual::required_m;
use crate::{LabError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Integrating-factor RK4 around the exact linear flow.
    LawsonRk4,
    /// Half linear step, midpoint RK2 on the rest, half linear step.
    Strang,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Windowed correction of q̃₀, q̃₁ so that the run shadows the stable set.
    Shadow,
    /// No correction; the run ends when it leaves the shrinking set.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "d_ymax")]
    pub y_max: f64,
    #[serde(default = "d_dy")]
    pub dy: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { y_max: d_ymax(), dy: d_dy() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperConfig {
    #[serde(default = "d_ds")]
    pub ds: f64,
    #[serde(default = "d_scheme")]
    pub scheme: Scheme,
    /// Steps between P̂₀ drift corrections by rotation.
    #[serde(default = "d_rotate")]
    pub rotate_every: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self { ds: d_ds(), scheme: d_scheme(), rotate_every: d_rotate() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "d_mode")]
    pub mode: ControlMode,
    /// Length in s of the kept part of each window; the look-ahead is twice that.
    #[serde(default = "d_window")]
    pub window: f64,
    #[serde(default = "d_iter")]
    pub max_iter: usize,
    /// Accepted |q̃₀|, |q̃₁| at the look-ahead end, relative to their bounds.
    #[serde(default = "d_ctol")]
    pub tol: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { mode: d_mode(), window: d_window(), max_iter: d_iter(), tol: d_ctol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "d_p")]
    pub p: f64,
    #[serde(rename = "A", default = "d_a")]
    pub a: f64,
    /// Cutoff constant; defaults to the value with |φ₀|^{p−1} ≤ 1/(4(p−1)) outside.
    #[serde(rename = "K", default)]
    pub k: Option<f64>,
    /// Number of tracked modes; defaults to the smallest admissible even value.
    #[serde(rename = "M", default)]
    pub m: Option<usize>,
    #[serde(default = "d_s0")]
    pub s0: f64,
    #[serde(default = "d_send")]
    pub s_end: f64,
    #[serde(default)]
    pub d0: f64,
    #[serde(default)]
    pub d1: f64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub stepper: StepperConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default = "d_record")]
    pub record_every: usize,
    #[serde(default = "d_true")]
    pub stop_on_exit: bool,
    /// Start of the s-range used for the decay fits; defaults to
    /// min(2 s0, midpoint of the run).
    #[serde(default)]
    pub fit_from: Option<f64>,
}

fn d_p() -> f64 {
    3.0
}
fn d_a() -> f64 {
    5.0
}
fn d_s0() -> f64 {
    50.0
}
fn d_send() -> f64 {
    500.0
}
fn d_ymax() -> f64 {
    64.0
}
fn d_dy() -> f64 {
    0.125
}
fn d_ds() -> f64 {
    0.05
}
fn d_scheme() -> Scheme {
    Scheme::LawsonRk4
}
fn d_rotate() -> usize {
    10
}
fn d_mode() -> ControlMode {
    ControlMode::Shadow
}
fn d_window() -> f64 {
    2.0
}
fn d_iter() -> usize {
    6
}
fn d_ctol() -> f64 {
    1e-3
}
fn d_record() -> usize {
    10
}
fn d_true() -> bool {
    true
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            p: d_p(),
            a: d_a(),
            k: None,
            m: None,
            s0: d_s0(),
            s_end: d_send(),
            d0: 0.0,
            d1: 0.0,
            grid: GridConfig::default(),
            stepper: StepperConfig::default(),
            control: ControlConfig::default(),
            record_every: d_record(),
            stop_on_exit: true,
            fit_from: None,
        }
    }
}

fn bad(path: &str, msg: impl Into<String>) -> LabError {
    LabError::Config { path: path.into(), msg: msg.into() }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let de = toml::Deserializer::new(s);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            bad(&path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(s);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            bad(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn profile(&self) -> Result<Profile> {
        Profile::critical(self.p).map_err(|e| bad("p", e.to_string()))
    }

    pub fn k_value(&self, prof: &Profile) -> f64 {
        self.k.unwrap_or_else(|| default_k(prof, 4.0))
    }

    pub fn m_value(&self, prof: &Profile) -> usize {
        self.m.unwrap_or_else(|| required_m(prof).1)
    }

    pub fn fit_start(&self) -> f64 {
        self.fit_from.unwrap_or_else(|| (2.0 * self.s0).min(0.5 * (self.s0 + self.s_end)))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 1.0) {
            return Err(bad("p", "must be > 1"));
        }
        let prof = self.profile()?;
        if !(self.a >= 1.0) {
            return Err(bad("A", "must be >= 1"));
        }
        if let Some(k) = self.k {
            if !(k >= 1.0) {
                return Err(bad("K", "must be >= 1"));
            }
        }
        if let Some(m) = self.m {
            let need = required_m(&prof).1;
            if m % 2 == 1 {
                return Err(bad("M", "must be even"));
            }
            if m < need {
                return Err(bad("M", format!("must be >= {need} for p = {}", self.p)));
            }
        }
        if !(self.s0 >= 20.0) {
            return Err(bad("s0", "must be >= 20"));
        }
        if !(self.s_end > self.s0) || !self.s_end.is_finite() {
            return Err(bad("s_end", "must be finite and > s0"));
        }
        if !(self.d0.is_finite() && self.d1.is_finite()) {
            return Err(bad("d0", "d0 and d1 must be finite"));
        }
        let g = &self.grid;
        if !(g.dy > 0.0 && g.dy <= 0.25) {
            return Err(bad("grid.dy", "must be in (0, 0.25]"));
        }
        let m = self.m_value(&prof) as f64;
        let need = (4.0 * (m + 1.0).sqrt() + 8.0).max(2.0 * self.k_value(&prof) * self.s0.powf(0.25));
        if !(g.y_max >= need) || !g.y_max.is_finite() {
            return Err(bad("grid.y_max", format!("must be >= {need:.3}")));
        }
        if g.y_max / g.dy > 2e5 {
            return Err(bad("grid", "more than 4e5 nodes"));
        }
        let st = &self.stepper;
        if !(st.ds > 0.0 && st.ds <= 0.5) {
            return Err(bad("stepper.ds", "must be in (0, 0.5]"));
        }
        if (self.s_end - self.s0) / st.ds > 1e7 {
            return Err(bad("stepper.ds", "more than 1e7 steps"));
        }
        if st.rotate_every == 0 {
            return Err(bad("stepper.rotate_every", "must be >= 1"));
        }
        let c = &self.control;
        if !(c.window >= st.ds && c.window <= 20.0) {
            return Err(bad("control.window", "must be in [ds, 20]"));
        }
        if c.max_iter == 0 {
            return Err(bad("control.max_iter", "must be >= 1"));
        }
        if !(c.tol > 0.0 && c.tol < 1.0) {
            return Err(bad("control.tol", "must be in (0, 1)"));
        }
        if self.record_every == 0 {
            return Err(bad("record_every", "must be >= 1"));
        }
        if let Some(f) = self.fit_from {
            if !(f >= self.s0 && f < self.s_end) {
                return Err(bad("fit_from", "must lie in [s0, s_end)"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn parser_never_panics(text in "\\PC{0,200}") {
            for r in [SimConfig::from_toml_str(&text), SimConfig::from_json_str(&text)] {
                let ok = matches!(r, Ok(_) | Err(LabError::Config { .. }));
                prop_assert!(ok);
            }
        }

        #[test]
        fn toml_round_trip(a in 1.0f64..20.0, s0 in 20.0f64..200.0, span in 1.0f64..500.0, d0 in -5.0f64..5.0, strang in any::<bool>()) {
            let mut c = SimConfig { a, s0, s_end: s0 + span, d0, ..SimConfig::default() };
            if strang {
                c.stepper.scheme = Scheme::Strang;
            }
            c.grid.y_max = c.grid.y_max.max(2.0 * c.k_value(&c.profile().unwrap()) * s0.powf(0.25) + 1.0);
            c.validate().unwrap();
            let back = SimConfig::from_toml_str(&toml::to_string(&c).unwrap()).unwrap();
            prop_assert_eq!(back, c);
        }
    }

    #[test]
    fn defaults_are_valid() {
        let c = SimConfig::default();
        c.validate().unwrap();
        let prof = c.profile().unwrap();
        assert_eq!(c.m_value(&prof) % 2, 0);
    }

    #[test]
    fn toml_and_json_agree() {
        let t = SimConfig::from_toml_str("p = 3.0\nA = 6.0\ns0 = 60.0\n[stepper]\nds = 0.025\n").unwrap();
        let j = SimConfig::from_json_str(r#"{"p": 3.0, "A": 6.0, "s0": 60.0, "stepper": {"ds": 0.025}}"#).unwrap();
        assert_eq!(t, j);
        assert_eq!(t.a, 6.0);
        assert_eq!(t.stepper.scheme, Scheme::LawsonRk4);
    }

    #[test]
    fn errors_carry_field_path() {
        let e = SimConfig::from_toml_str("[stepper]\nds = \"x\"\n").unwrap_err();
        match e {
            LabError::Config { path, .. } => assert_eq!(path, "stepper.ds"),
            other => panic!("{other}"),
        }
        let e = SimConfig::from_json_str(r#"{"grid": {"dy": 0.5}}"#).unwrap_err();
        match e {
            LabError::Config { path, .. } => assert_eq!(path, "grid.dy"),
            other => panic!("{other}"),
        }
        let e = SimConfig::from_toml_str("bogus = 1\n").unwrap_err();
        assert!(matches!(e, LabError::Config { .. }));
    }

    #[test]
    fn invariants_enforced() {
        for src in ["s0 = 10.0", "s_end = 40.0", "M = 7", "M = 2", "A = 0.5", "K = 0.2", "p = 1.0"] {
            assert!(SimConfig::from_toml_str(src).is_err(), "{src}");
        }
    }
}
