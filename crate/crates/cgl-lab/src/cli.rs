//! Command-line front end. `run` parses arguments, dispatches, writes
//! artifacts and returns the process exit code.

use crate::fit::logspace;
use crate::io::{all_pass, fmt_f64, write_json, Check, CsvTable, RunManifest};
use crate::modalode::{self, Controller};
use crate::params::{self, Parameters, Profile};
use crate::sim::{self, SimConfig};
use crate::{residual, series, LabError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cgl-lab", version, about = "Critical complex Ginzburg-Landau blow-up laboratory")]
pub struct Cli {
    /// Worker threads for parallel sections
    #[arg(long, global = true, env = "CGL_LAB_THREADS")]
    pub threads: Option<usize>,
    /// Directory for CSV, JSON and manifest artifacts
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Also write the command's report as JSON to this path
    #[arg(long, global = true)]
    pub json: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form constants and matching-condition residuals
    Constants {
        #[arg(long, default_value_t = 3.0)]
        p: f64,
    },
    /// Sample the stationary profile and its ODE residual
    Profile {
        #[arg(long, default_value_t = 3.0)]
        p: f64,
        #[arg(long, default_value_t = 10.0)]
        z_max: f64,
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
    /// Run a verification suite; exit 1 when a check fails
    Verify(VerifyArgs),
    /// Integrate the reduced modal system on its decaying branch
    ModalOde {
        #[arg(long, default_value_t = 3.0)]
        p: f64,
        #[arg(long, default_value_t = modalode::DEFAULT_S0)]
        s0: f64,
        #[arg(long, default_value_t = 1e5)]
        s_end: f64,
        #[arg(long, default_value_t = 1e-10)]
        rtol: f64,
    },
    /// Evolve the modulated equation from a config file and/or flags
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Hermite,
    Series,
    Projections,
    ResidualScan,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub suite: Suite,
    /// Single p; the series suite defaults to p in {1.5, 2, 3, 5}
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = 1e2)]
    pub s_min: f64,
    #[arg(long, default_value_t = 1e5)]
    pub s_max: f64,
    /// Points of the logarithmic s-grid
    #[arg(long, default_value_t = 16)]
    pub points: usize,
    /// Seed of the randomized spectral checks
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML or JSON config; defaults apply when omitted
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long = "A")]
    pub a: Option<f64>,
    #[arg(long = "K")]
    pub k: Option<f64>,
    #[arg(long = "M")]
    pub m: Option<usize>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub s_end: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub d0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub d1: Option<f64>,
    /// Free-running survival sweep over the named parameters (only "d0,d1")
    #[arg(long, value_name = "d0,d1")]
    pub sweep: Option<String>,
    #[arg(long, default_value_t = 9)]
    pub sweep_n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sweep_r: f64,
    #[arg(long, default_value_t = 2)]
    pub sweep_refine: usize,
    /// Also rerun at ds/2 and report the difference
    #[arg(long)]
    pub halving: bool,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

fn usage(e: LabError) -> CliError {
    CliError { code: EXIT_USAGE, msg: e.to_string() }
}

fn runtime(e: LabError) -> CliError {
    match e {
        LabError::Config { .. } | LabError::InvalidParam(_) | LabError::NotCritical(_) => usage(e),
        _ => CliError { code: EXIT_ASSERT, msg: e.to_string() },
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            e.code
        }
    }
}

fn execute(cli: &Cli) -> CliResult<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError { code: EXIT_USAGE, msg: "--threads must be >= 1".into() });
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut out = Output::new(cli)?;
    let code = match &cli.cmd {
        Command::Constants { p } => constants(&mut out, *p)?,
        Command::Profile { p, z_max, points } => profile(&mut out, *p, *z_max, *points)?,
        Command::Verify(v) => verify(&mut out, v)?,
        Command::ModalOde { p, s0, s_end, rtol } => modal_ode(&mut out, *p, *s0, *s_end, *rtol)?,
        Command::Simulate(a) => simulate(&mut out, a)?,
    };
    out.finish()?;
    Ok(code)
}

/// Collects artifacts and writes the report and manifest.
struct Output {
    out_dir: Option<PathBuf>,
    json: Option<PathBuf>,
    manifest: RunManifest,
    report: Option<serde_json::Value>,
    start: Instant,
}

impl Output {
    fn new(cli: &Cli) -> CliResult<Self> {
        if let Some(d) = &cli.out_dir {
            std::fs::create_dir_all(d)
                .map_err(|e| CliError { code: EXIT_USAGE, msg: format!("cannot create {}: {e}", d.display()) })?;
        }
        let name = match &cli.cmd {
            Command::Constants { .. } => "constants",
            Command::Profile { .. } => "profile",
            Command::Verify(_) => "verify",
            Command::ModalOde { .. } => "modal-ode",
            Command::Simulate(_) => "simulate",
        };
        Ok(Self {
            out_dir: cli.out_dir.clone(),
            json: cli.json.clone(),
            manifest: RunManifest::new(name, serde_json::Value::Null),
            report: None,
            start: Instant::now(),
        })
    }

    fn config<T: Serialize>(&mut self, cfg: &T) {
        self.manifest.config = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
    }

    fn report<T: Serialize>(&mut self, r: &T) {
        self.report = serde_json::to_value(r).ok();
    }

    fn dir(&self, default: &str) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn csv(&mut self, dir: &Path, name: &str, t: &CsvTable) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| runtime(e.into()))?;
        let path = dir.join(name);
        t.write(&path).map_err(runtime)?;
        self.manifest.artifacts.push(path);
        Ok(())
    }

    fn json_file<T: Serialize>(&mut self, dir: &Path, name: &str, v: &T) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| runtime(e.into()))?;
        let path = dir.join(name);
        write_json(&path, v).map_err(runtime)?;
        self.manifest.artifacts.push(path);
        Ok(())
    }

    fn finish(mut self) -> CliResult<()> {
        if let (Some(path), Some(r)) = (self.json.clone(), self.report.take()) {
            write_json(&path, &r).map_err(runtime)?;
            self.manifest.artifacts.push(path);
        }
        let dir = match (&self.out_dir, self.manifest.artifacts.is_empty()) {
            (Some(d), _) => d.clone(),
            (None, false) => match self.manifest.artifacts[0].parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            },
            (None, true) => return Ok(()),
        };
        self.manifest.wall_seconds = self.start.elapsed().as_secs_f64();
        write_json(&dir.join("manifest.json"), &self.manifest).map_err(runtime)
    }
}

fn critical_profile(p: f64) -> CliResult<Profile> {
    if !(p.is_finite() && p > 1.0) {
        return Err(CliError { code: EXIT_USAGE, msg: format!("--p must be > 1, got {p}") });
    }
    Profile::critical(p).map_err(usage)
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        println!("{:<4} {:<56} {:>24} <= {:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, fmt_f64(c.value), c.tol);
    }
}

fn constants(out: &mut Output, p: f64) -> CliResult<i32> {
    let prof = critical_profile(p)?;
    let par: Parameters = prof.par;
    let c = prof.c;
    let cond = params::cond_residuals(&par, &c);
    let printed = params::cond3_variant_residual(&par, &c);
    println!("p        {}", fmt_f64(p));
    println!("delta    {}", fmt_f64(par.delta));
    println!("kappa    {}", fmt_f64(c.kappa));
    println!("a        {}", fmt_f64(c.a));
    println!("b        {}", fmt_f64(c.b));
    println!("mu       {}", fmt_f64(c.mu));
    println!("alpha    {}", fmt_f64(c.alpha));
    match c.b_p {
        Some(v) => println!("b_p      {}", fmt_f64(v)),
        None => println!("b_p      undefined (delta^2 >= 15)"),
    }
    match c.b_sub {
        Some(v) => println!("b_sub    {}", fmt_f64(v)),
        None => println!("b_sub    undefined at criticality"),
    }
    for (i, r) in cond.iter().enumerate() {
        println!("cond{}    {}", i + 1, fmt_f64(*r));
    }
    println!("cond3 with 12ab^2 term  {}", fmt_f64(printed));
    let cfg = json!({ "p": p });
    out.config(&cfg);
    out.report(&json!({
        "p": p,
        "delta": par.delta,
        "kappa": c.kappa,
        "a": c.a,
        "b": c.b,
        "mu": c.mu,
        "alpha": c.alpha,
        "b_p": c.b_p,
        "b_sub": c.b_sub,
        "cond_residuals": cond,
        "cond3_variant_residual": printed,
    }));
    Ok(EXIT_OK)
}

fn profile(out: &mut Output, p: f64, z_max: f64, points: usize) -> CliResult<i32> {
    let prof = critical_profile(p)?;
    if !(z_max > 0.0 && z_max.is_finite()) || points < 2 {
        return Err(CliError { code: EXIT_USAGE, msg: "--z-max must be > 0 and --points >= 2".into() });
    }
    let mut t = CsvTable::new(&["z", "re", "im", "abs", "residual"]);
    for i in 0..=points {
        let z = z_max * i as f64 / points as f64;
        let f = prof.phi0(z);
        t.push(vec![z, f.re, f.im, f.norm(), prof.stationary_residual(z).norm()]);
    }
    let sup = params::profile_residual_sup(&prof, z_max, points);
    println!("phi0(0)          {}", fmt_f64(prof.phi0(0.0).re));
    println!("sup |residual|   {}", fmt_f64(sup));
    out.config(&json!({ "p": p, "z_max": z_max, "points": points }));
    out.report(&json!({ "p": p, "z_max": z_max, "sup_residual": sup }));
    if let Some(d) = out.out_dir.clone() {
        out.csv(&d, "profile.csv", &t)?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct VerifyReport {
    suite: String,
    pass: bool,
    checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<serde_json::Value>,
}

fn verify(out: &mut Output, v: &VerifyArgs) -> CliResult<i32> {
    let p = v.p.unwrap_or(3.0);
    let prof = critical_profile(p)?;
    if !(v.s_min > 0.0 && v.s_max > v.s_min) || v.points < 8 {
        return Err(CliError { code: EXIT_USAGE, msg: "need 0 < --s-min < --s-max and --points >= 8".into() });
    }
    let (name, checks, detail) = match v.suite {
        Suite::Hermite => ("hermite", crate::hermite::spectral_suite(v.seed, 100).map_err(runtime)?, None),
        Suite::Series => {
            let ps: Vec<f64> = match v.p {
                Some(p) => vec![p],
                None => vec![1.5, 2.0, 3.0, 5.0],
            };
            let mut checks = Vec::new();
            let mut reports = Vec::new();
            for p in ps {
                let r = series::identity_report(&critical_profile(p)?).map_err(runtime)?;
                for c in &r.checks {
                    let err = c.corrected_err.unwrap_or(c.abs_err).min(c.abs_err);
                    checks.push(Check {
                        name: format!("[{}] {} at p={}", c.group, c.name, c.p),
                        value: err,
                        tol: series::IDENTITY_TOL,
                        pass: c.status != series::IdentityStatus::Mismatch,
                    });
                }
                reports.push(r);
            }
            ("series", checks, serde_json::to_value(&reports).ok())
        }
        Suite::Projections => {
            let ss = logspace(v.s_min, v.s_max, v.points);
            ("projections", residual::projection_suite(&prof, &ss).map_err(runtime)?, None)
        }
        Suite::ResidualScan => {
            let r = residual::residual_scan(&prof, v.s_min, v.s_max, v.points).map_err(runtime)?;
            let checks = r
                .rows
                .iter()
                .map(|row| match row.slope {
                    Some(s) => Check {
                        name: format!("{} slope {:.4}, distance to {}", row.name, s, row.target),
                        value: (s - row.target).abs(),
                        tol: row.tol,
                        pass: row.pass,
                    },
                    None => Check::at_most(row.name.clone(), r.max_odd, row.tol),
                })
                .collect();
            if let Some(d) = out.out_dir.clone() {
                let mut t = CsvTable::new(&["s", "sup_r", "p0_tilde_rstar", "p2_tilde_rstar"]);
                for i in 0..r.s_grid.len() {
                    t.push(vec![r.s_grid[i], r.sup_r[i], r.p0_tilde[i], r.p2_tilde[i]]);
                }
                out.csv(&d, "residual_scan.csv", &t)?;
            }
            ("residual-scan", checks, serde_json::to_value(&r).ok())
        }
    };
    print_checks(&checks);
    let pass = all_pass(&checks);
    println!("{}: {}", name, if pass { "all checks pass" } else { "FAILED" });
    out.config(&json!({ "suite": name, "p": v.p, "s_min": v.s_min, "s_max": v.s_max, "points": v.points, "seed": v.seed }));
    let rep = VerifyReport { suite: name.into(), pass, checks, detail };
    if let Some(d) = out.out_dir.clone() {
        out.json_file(&d, &format!("verify_{name}.json"), &rep)?;
    }
    out.report(&rep);
    Ok(if pass { EXIT_OK } else { EXIT_ASSERT })
}

fn modal_ode(out: &mut Output, p: f64, s0: f64, s_end: f64, rtol: f64) -> CliResult<i32> {
    let prof = critical_profile(p)?;
    if !(s0 >= 10.0 && s_end > s0 && s_end.is_finite()) {
        return Err(CliError { code: EXIT_USAGE, msg: "need 10 <= --s0 < --s-end".into() });
    }
    if !(rtol > 0.0 && rtol < 1e-3) {
        return Err(CliError { code: EXIT_USAGE, msg: "--rtol must be in (0, 1e-3)".into() });
    }
    let ctl = Controller { rtol, ..Controller::default() };
    let (tr, fit) = modalode::run(&prof, s0, s_end, &ctl).map_err(runtime)?;
    println!("alpha_num        {}", fmt_f64(fit.alpha_num));
    println!("alpha formula    {}  (rel {})", fmt_f64(fit.alpha_formula), fmt_f64(fit.rel_to_formula));
    println!("alpha alt p=3    {}  (rel {})", fmt_f64(fit.alpha_alt_p3), fmt_f64(fit.rel_to_alt));
    println!("beta_num         {}  (ratio {})", fmt_f64(fit.beta_num), fmt_f64(fit.beta_ratio));
    println!("mu back          {}  target {}  rel {}", fmt_f64(fit.mu_back), fmt_f64(fit.mu_target), fmt_f64(fit.mu_rel_err));
    out.config(&json!({ "p": p, "s0": s0, "s_end": s_end, "controller": ctl }));
    let dir = out.dir("modal-ode-out");
    out.csv(&dir, "modal_ode.csv", &tr.to_csv())?;
    out.json_file(&dir, "modal_fit.json", &fit)?;
    out.report(&fit);
    Ok(EXIT_OK)
}

fn sim_config(a: &SimulateArgs) -> CliResult<SimConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError { code: EXIT_USAGE, msg: format!("config file not found: {}", path.display()) });
            }
            SimConfig::load(path).map_err(usage)?
        }
        None => SimConfig::default(),
    };
    if let Some(v) = a.p {
        cfg.p = v;
    }
    if let Some(v) = a.a {
        cfg.a = v;
    }
    if a.k.is_some() {
        cfg.k = a.k;
    }
    if a.m.is_some() {
        cfg.m = a.m;
    }
    if let Some(v) = a.s0 {
        cfg.s0 = v;
    }
    if let Some(v) = a.s_end {
        cfg.s_end = v;
    }
    if let Some(v) = a.d0 {
        cfg.d0 = v;
    }
    if let Some(v) = a.d1 {
        cfg.d1 = v;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn simulate(out: &mut Output, a: &SimulateArgs) -> CliResult<i32> {
    let cfg = sim_config(a)?;
    out.config(&cfg);
    let dir = out.dir("simulate-out");
    if let Some(axes) = &a.sweep {
        let norm: String = axes.chars().filter(|c| !c.is_whitespace()).collect();
        if norm != "d0,d1" {
            return Err(CliError { code: EXIT_USAGE, msg: format!("--sweep supports only d0,d1, got {axes}") });
        }
        if a.sweep_n < 2 || !(a.sweep_r > 0.0) {
            return Err(CliError { code: EXIT_USAGE, msg: "need --sweep-n >= 2 and --sweep-r > 0".into() });
        }
        let rep = sim::sweep(&cfg, a.sweep_n, a.sweep_r, a.sweep_refine).map_err(runtime)?;
        let mut t = CsvTable::new(&["d0", "d1", "survival"]);
        for c in &rep.cells {
            t.push(vec![c.d0, c.d1, c.survival]);
        }
        println!("cells {}  best d0 {} d1 {} survives to s = {}", rep.cells.len(), fmt_f64(rep.best.d0), fmt_f64(rep.best.d1), fmt_f64(rep.best.survival));
        out.csv(&dir, "sweep.csv", &t)?;
        out.json_file(&dir, "sweep.json", &rep)?;
        out.report(&rep);
        return Ok(EXIT_OK);
    }
    let (outcome, halving) = if a.halving {
        let (o, h) = sim::step_halving(&cfg).map_err(runtime)?;
        (o, Some(h))
    } else {
        (sim::Simulation::new(cfg.clone()).map_err(usage)?.run().map_err(runtime)?, None)
    };
    let prof = cfg.profile().map_err(usage)?;
    let summary = sim::summarize(&cfg, &prof, &outcome);
    let checks = sim::criteria(&summary, halving.as_ref());
    println!("exit_reason      {}", serde_json::to_value(&summary.exit_reason).unwrap_or_default());
    println!("s_final          {}", fmt_f64(summary.s_final));
    print_checks(&checks);
    out.csv(&dir, "trace.csv", &outcome.trace.to_csv())?;
    let report = json!({ "summary": summary, "halving": halving, "checks": checks });
    out.json_file(&dir, "summary.json", &report)?;
    out.report(&report);
    Ok(EXIT_OK)
}
