//! Batch front end: `cloaksynth <mode> [--config path] [--key value ...] [--jobs N]`.
//!
//! Every run writes `summary.json` and `config_echo.txt` to `output_dir`,
//! plus mode-specific CSV tables. Far-field coefficients are always dumped
//! (in the cap frame, header `l,m,re,im`) so that each scalar in the summary
//! can be recomputed; pattern tables are sampled in world angles.

mod config;

pub use config::{LMax, Mode, RunConfig, Setup, KEYS};

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::control::{
    assemble_control_operator, best_approximation, random_band_limited_target, select_lambda,
    ControlBasis, SynthesisResult,
};
use crate::error::{Error, Result};
use crate::farfield::{eval_pattern, extinction, far_field, optical_theorem_residual, reciprocity_residual, sigma, FarFieldPattern};
use crate::incident::BcVariant;
use crate::mie_oracle::{mie_coefficients, mie_sigma, MieKind, MieSolution};
use crate::solver::{Incidence, RadiatingField, ScatterProblem, SolveReport};
use crate::sphere_grid::HarmonicCoeffs;

pub const ORACLE_TOL: f64 = 1e-8;
pub const RESOLVE_TOL: f64 = 1e-8;
pub const DENSITY_SLACK: f64 = 1e-10;

/// `(optical, reciprocity)` tolerances with and without a cap interface.
fn physics_tolerances(interface: bool) -> (f64, f64) {
    if interface {
        (1e-4, 1e-4)
    } else {
        (1e-6, 1e-8)
    }
}

/// Fixed observation direction for the reciprocity check.
fn reciprocity_direction() -> Vector3<f64> {
    Vector3::new(0.3, -0.5, 0.8)
}

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct Checks {
    pub optical_residual: Option<f64>,
    pub reciprocity_residual: Option<f64>,
    pub oracle_rel_err: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub mode: String,
    pub config_echo: BTreeMap<String, String>,
    pub sigma_before: Option<f64>,
    pub sigma_after: Option<f64>,
    pub reduction_db: Option<f64>,
    pub control_norm: Option<f64>,
    pub lambda_used: Option<f64>,
    pub solve_reports: Vec<SolveReport>,
    pub checks: Checks,
    pub timing_seconds: Option<f64>,
    /// `ok`, or the failure class.
    pub status: String,
    pub error: Option<String>,
    /// Mode-specific metadata.
    pub details: serde_json::Value,
}

impl Summary {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            mode: cfg.mode.to_string(),
            config_echo: cfg.echo().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            sigma_before: None,
            sigma_after: None,
            reduction_db: None,
            control_norm: None,
            lambda_used: None,
            solve_reports: Vec::new(),
            checks: Checks::default(),
            timing_seconds: None,
            status: "ok".into(),
            error: None,
            details: serde_json::Value::Null,
        }
    }

    fn record(&mut self, r: &SynthesisResult) {
        self.sigma_before = Some(r.sigma_before);
        self.sigma_after = Some(r.sigma_after);
        self.reduction_db = Some(r.reduction_db);
        self.control_norm = Some(r.control_norm);
        self.lambda_used = Some(r.lambda_used);
    }
}

/// Collects failed consistency checks.
#[derive(Default)]
struct Failures(Vec<String>);

impl Failures {
    fn check(&mut self, name: &str, value: f64, tol: f64) {
        if !(value <= tol) {
            self.0.push(format!("{name} = {value:.3e} exceeds {tol:.1e}"));
        }
    }

    fn into_result(self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Consistency(self.0.join("; ")))
        }
    }
}

/// Runs one configuration, writing all artifacts. The summary is written even
/// when the run fails; the error is returned after it.
pub fn run(cfg: &RunConfig, jobs: Option<usize>) -> Result<Summary> {
    let start = Instant::now();
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config_echo.txt"), cfg.to_canonical_string())?;
    let mut summary = Summary::new(cfg);

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let outcome = pool.install(|| match cfg.mode {
        Mode::Validate => validate(cfg, &out, &mut summary),
        Mode::Scatter => scatter(cfg, &out, &mut summary),
        Mode::Cloak => cloak(cfg, &out, &mut summary),
        Mode::Sweep => sweep(cfg, &out, &mut summary),
        Mode::Density => density(cfg, &out, &mut summary),
    });

    if let Err(e) = &outcome {
        summary.status = match e.exit_code() {
            2 => "config_error",
            3 => "solver_failure",
            4 => "consistency_failure",
            _ => "io_error",
        }
        .into();
        summary.error = Some(e.to_string());
        if let Error::NonConvergence { report, .. } = e {
            summary.solve_reports.push(*report);
        }
    }
    if cfg.record_timing {
        summary.timing_seconds = Some(start.elapsed().as_secs_f64());
    }
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(out.join("summary.json"), text)?;
    outcome.map(|()| summary)
}

/// `A(β)` on a midpoint grid in world angles: `θ_i = (i + ½)π/n_θ`,
/// `φ_j = 2πj/n_φ`.
pub fn emit_pattern(p: &FarFieldPattern, n_theta: usize, n_phi: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["theta_rad", "phi_rad", "re_A", "im_A", "abs2_A"])?;
    for i in 0..n_theta {
        let theta = (i as f64 + 0.5) * PI / n_theta as f64;
        for j in 0..n_phi {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            let beta = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let a = eval_pattern(p, &beta);
            w.write_record([theta, phi, a.re, a.im, a.norm_sqr()].map(|x| x.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_coefficients(c: &HarmonicCoeffs, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["l", "m", "re", "im"])?;
    for (idx, v) in c.iter() {
        w.write_record([idx.l.to_string(), idx.m.to_string(), v.re.to_string(), v.im.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_control(r: &SynthesisResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["p", "m", "re", "im"])?;
    let basis = r.w.basis();
    for (j, g) in r.w.coefficients().iter().enumerate() {
        let (p, m) = basis.label(j);
        w.write_record([p.to_string(), m.to_string(), g.re.to_string(), g.im.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// The uniform-sphere problem equivalent to a degenerate cap, if any.
fn oracle_for(setup: &Setup) -> Option<MieSolution> {
    let ap = setup.cap.aperture();
    let kind = if ap == PI || setup.ctx.variant() == BcVariant::MixedDirichlet {
        (ap == PI || ap == 0.0).then_some(MieKind::Soft)
    } else if ap == 0.0 {
        Some(MieKind::Impedance(setup.ctx.impedance().at(0)))
    } else {
        None
    };
    kind.map(|kind| MieSolution::new(kind, setup.ctx.k(), setup.ctx.a()).expect("validated context"))
}

/// Max coefficient error relative to the largest oracle coefficient.
fn coefficient_error(v: &RadiatingField, oracle: &RadiatingField) -> f64 {
    let scale = oracle.coeffs().as_slice().iter().map(|c| c.norm()).fold(0.0, f64::max);
    let err = v.coeffs().as_slice().iter().zip(oracle.coeffs().as_slice()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    err / scale.max(f64::MIN_POSITIVE)
}

struct Uncontrolled {
    field: RadiatingField,
    pattern: FarFieldPattern,
    report: SolveReport,
    checks: Checks,
}

/// Plane-wave solve with `w = 0` and its physics checks.
fn uncontrolled(setup: &Setup, problem: &ScatterProblem, failures: &mut Failures) -> Result<Uncontrolled> {
    let (field, report) = problem.solve(Incidence::PlaneWave, &problem.zero_control())?;
    let pattern = far_field(&field);
    let (optical_tol, recip_tol) = physics_tolerances(problem.has_interface());
    let mut checks = Checks::default();
    let h = setup.ctx.impedance().at(0);
    if h.im == 0.0 || setup.ctx.variant() == BcVariant::MixedDirichlet || setup.cap.aperture() == PI {
        let r = optical_theorem_residual(&pattern, &setup.ctx);
        failures.check("optical_residual", r, optical_tol);
        checks.optical_residual = Some(r);
    }
    let r = reciprocity_residual(&setup.ctx, &setup.cap, &setup.grid, setup.l_max, &reciprocity_direction())?;
    failures.check("reciprocity_residual", r, recip_tol);
    checks.reciprocity_residual = Some(r);
    if let Some(sol) = oracle_for(setup) {
        let oracle = mie_coefficients(&sol, &setup.ctx.alpha(), setup.l_max);
        let s = sigma(&pattern);
        let e = coefficient_error(&field, &oracle).max((s - mie_sigma(&sol)).abs() / mie_sigma(&sol));
        failures.check("oracle_rel_err", e, ORACLE_TOL);
        checks.oracle_rel_err = Some(e);
    }
    Ok(Uncontrolled { field, pattern, report, checks })
}

fn problem_of(setup: &Setup) -> Result<ScatterProblem> {
    ScatterProblem::new(&setup.ctx, &setup.cap, &setup.grid, setup.l_max, setup.opts)
}

fn validate(cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    struct Row {
        check: &'static str,
        case: String,
        value: f64,
        tol: f64,
    }
    let mut rows = Vec::new();
    let mut worst = Checks::default();
    let bump = |slot: &mut Option<f64>, v: f64| *slot = Some(slot.map_or(v, |w: f64| w.max(v)));
    let one = Complex64::new(1.0, 0.0);

    let mut cases = Vec::new();
    for ka in [0.5, 1.0, 2.0, PI] {
        let k = ka / cfg.a;
        let mut full = cfg.clone();
        full.cap_aperture_deg = 180.0;
        full.bc_variant = BcVariant::MixedDirichlet;
        let mut empty = cfg.clone();
        empty.cap_aperture_deg = 0.0;
        empty.bc_variant = BcVariant::MixedImpedance;
        cases.push((format!("soft ka={ka:.4}"), full.setup_at(k, one)?));
        cases.push((format!("impedance ka={ka:.4}"), empty.setup_at(k, one)?));
    }
    let mixed = cfg.setup()?;
    cases.push((format!("mixed cap {}deg ka={:.4}", cfg.cap_aperture_deg, mixed.ctx.ka()), mixed));

    let results: Vec<Result<(String, Uncontrolled, bool)>> = cases
        .into_par_iter()
        .map(|(name, setup)| {
            let problem = problem_of(&setup)?;
            let mut ignored = Failures::default();
            let u = uncontrolled(&setup, &problem, &mut ignored)?;
            Ok((name, u, problem.has_interface()))
        })
        .collect();
    for r in results {
        let (name, u, interface) = r?;
        let (optical_tol, recip_tol) = physics_tolerances(interface);
        s.solve_reports.push(u.report);
        if let Some(v) = u.checks.oracle_rel_err {
            rows.push(Row { check: "oracle_rel_err", case: name.clone(), value: v, tol: ORACLE_TOL });
            bump(&mut worst.oracle_rel_err, v);
        }
        if let Some(v) = u.checks.optical_residual {
            rows.push(Row { check: "optical_residual", case: name.clone(), value: v, tol: optical_tol });
            bump(&mut worst.optical_residual, v);
        }
        if let Some(v) = u.checks.reciprocity_residual {
            rows.push(Row { check: "reciprocity_residual", case: name.clone(), value: v, tol: recip_tol });
            bump(&mut worst.reciprocity_residual, v);
        }
    }

    // Absorption: σ ≤ (4π/k) Im A(α) once Im h > 0.
    let lossy = cfg.setup_at(cfg.k, Complex64::new(cfg.h_real, cfg.h_imag + 1.0))?;
    let problem = problem_of(&lossy)?;
    let (v, report) = problem.solve(Incidence::PlaneWave, &problem.zero_control())?;
    s.solve_reports.push(report);
    let p = far_field(&v);
    let ext = extinction(&p, &lossy.ctx);
    rows.push(Row {
        check: "absorption_excess",
        case: format!("h={}", lossy.ctx.impedance().at(0)),
        value: (sigma(&p) - ext) / ext.abs().max(f64::MIN_POSITIVE),
        tol: 1e-10,
    });

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let pass = r.value <= r.tol;
            vec![r.check.into(), r.case.clone(), format!("{:e}", r.value), format!("{:e}", r.tol), pass.to_string()]
        })
        .collect();
    write_table(&out.join("validate.csv"), &["check", "case", "value", "tolerance", "pass"], &table)?;
    for r in &rows {
        let status = if r.value <= r.tol { "PASS" } else { "FAIL" };
        println!("{status} {:<22} {:<28} {:.3e} (tol {:.0e})", r.check, r.case, r.value, r.tol);
    }
    s.checks = worst;
    s.details = json!({ "cases": rows.len(), "failed": rows.iter().filter(|r| !(r.value <= r.tol)).count() });
    let mut failures = Failures::default();
    for r in &rows {
        failures.check(&format!("{} [{}]", r.check, r.case), r.value, r.tol);
    }
    failures.into_result()
}

fn scatter(cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    let setup = cfg.setup()?;
    let problem = problem_of(&setup)?;
    let mut failures = Failures::default();
    let u = uncontrolled(&setup, &problem, &mut failures)?;
    s.solve_reports.push(u.report);
    s.sigma_before = Some(sigma(&u.pattern));
    s.checks = u.checks;
    write_coefficients(u.field.coeffs(), &out.join("scattered_coeffs.csv"))?;
    write_coefficients(u.pattern.coeffs(), &out.join("far_field_coeffs.csv"))?;
    emit_pattern(&u.pattern, cfg.n_theta, cfg.n_phi, &out.join("pattern.csv"))?;
    s.details = json!({
        "l_max": setup.l_max,
        "formulation": problem.formulation(),
        "extinction": extinction(&u.pattern, &setup.ctx),
    });
    failures.into_result()
}

struct CloakRun {
    a0: FarFieldPattern,
    chosen: SynthesisResult,
    scan: Vec<SynthesisResult>,
    after: FarFieldPattern,
    resolve_rel_err: f64,
    reports: Vec<SolveReport>,
    checks: Checks,
    l_max: usize,
}

fn cloak_at(cfg: &RunConfig, k: f64, failures: &mut Failures) -> Result<CloakRun> {
    let setup = cfg.setup_at(k, cfg.impedance())?;
    let problem = problem_of(&setup)?;
    let u = uncontrolled(&setup, &problem, failures)?;
    let basis = ControlBasis::new(setup.cap, cfg.basis_p, cfg.basis_m);
    let op = assemble_control_operator(&problem, &basis)?;
    let (chosen, scan) = select_lambda(&u.pattern, &op, &cfg.lambda_list)?;
    for r in &scan {
        failures.check(&format!("sigma_after/sigma_before at lambda={}", r.lambda_used), r.ratio(), 1.0);
    }
    let (v, resolve_report) = problem.solve(Incidence::PlaneWave, &chosen.w.on_grid(&setup.grid))?;
    let after = far_field(&v);
    let resolve_rel_err = (sigma(&after) - chosen.sigma_after).abs() / chosen.sigma_after.max(f64::MIN_POSITIVE);
    failures.check("resolve_rel_err", resolve_rel_err, RESOLVE_TOL);
    let mut reports = vec![u.report];
    reports.extend_from_slice(op.reports());
    reports.push(resolve_report);
    Ok(CloakRun { a0: u.pattern, chosen, scan, after, resolve_rel_err, reports, checks: u.checks, l_max: setup.l_max })
}

fn cloak(cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    let mut failures = Failures::default();
    let run = cloak_at(cfg, cfg.k, &mut failures)?;
    s.record(&run.chosen);
    s.solve_reports = run.reports.clone();
    s.checks = run.checks.clone();
    write_coefficients(run.a0.coeffs(), &out.join("far_field_before.csv"))?;
    write_coefficients(run.after.coeffs(), &out.join("far_field_after.csv"))?;
    write_control(&run.chosen, &out.join("control_coeffs.csv"))?;
    emit_pattern(&run.a0, cfg.n_theta, cfg.n_phi, &out.join("pattern_before.csv"))?;
    emit_pattern(&run.after, cfg.n_theta, cfg.n_phi, &out.join("pattern_after.csv"))?;
    let scan: Vec<Vec<String>> = run
        .scan
        .iter()
        .map(|r| {
            vec![
                r.lambda_used.to_string(),
                r.sigma_after.to_string(),
                r.control_norm.to_string(),
                r.objective_value.to_string(),
                r.ill_conditioned.to_string(),
            ]
        })
        .collect();
    write_table(
        &out.join("lambda_scan.csv"),
        &["lambda", "sigma_after", "control_norm", "objective", "ill_conditioned"],
        &scan,
    )?;
    s.details = json!({
        "l_max": run.l_max,
        "basis_len": run.chosen.w.basis().len(),
        "ratio": run.chosen.ratio(),
        "objective_value": run.chosen.objective_value,
        "ill_conditioned": run.chosen.ill_conditioned,
        "resolve_rel_err": run.resolve_rel_err,
        "resolved_sigma_after": sigma(&run.after),
    });
    failures.into_result()
}

fn sweep(cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    if cfg.sweep_k.is_empty() {
        return Err(Error::Config { location: "sweep_k".into(), message: "sweep mode needs at least one k".into() });
    }
    let runs: Vec<(Result<CloakRun>, Failures)> = cfg
        .sweep_k
        .par_iter()
        .map(|&k| {
            let mut failures = Failures::default();
            let run = cloak_at(cfg, k, &mut failures);
            (run, failures)
        })
        .collect();
    let mut rows = Vec::new();
    let mut per_run = Vec::new();
    let mut failures = Failures::default();
    for (i, (run, f)) in runs.into_iter().enumerate() {
        let k = cfg.sweep_k[i];
        let run = run?;
        failures.0.extend(f.0.into_iter().map(|m| format!("k={k}: {m}")));
        let dir = out.join(format!("run_{i:03}"));
        std::fs::create_dir_all(&dir)?;
        write_coefficients(run.a0.coeffs(), &dir.join("far_field_before.csv"))?;
        write_coefficients(run.after.coeffs(), &dir.join("far_field_after.csv"))?;
        write_control(&run.chosen, &dir.join("control_coeffs.csv"))?;
        let c = &run.chosen;
        rows.push(vec![
            k.to_string(),
            (k * cfg.a).to_string(),
            run.l_max.to_string(),
            c.sigma_before.to_string(),
            c.sigma_after.to_string(),
            c.reduction_db.to_string(),
            c.control_norm.to_string(),
            c.lambda_used.to_string(),
        ]);
        per_run.push(json!({
            "k": k,
            "l_max": run.l_max,
            "sigma_before": c.sigma_before,
            "sigma_after": c.sigma_after,
            "reduction_db": c.reduction_db,
            "control_norm": c.control_norm,
            "lambda_used": c.lambda_used,
            "resolve_rel_err": run.resolve_rel_err,
            "checks": run.checks,
        }));
        s.solve_reports.extend(run.reports);
    }
    write_table(
        &out.join("sweep.csv"),
        &["k", "ka", "l_max", "sigma_before", "sigma_after", "reduction_db", "control_norm", "lambda_used"],
        &rows,
    )?;
    s.details = json!({ "runs": per_run });
    failures.into_result()
}

fn density(cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    if cfg.density_sizes.is_empty() {
        return Err(Error::Config { location: "density_sizes".into(), message: "density mode needs at least one basis".into() });
    }
    let setup = cfg.setup()?;
    if cfg.target_band > setup.l_max {
        return Err(Error::Config {
            location: "target_band".into(),
            message: format!("target_band = {} exceeds L_max = {}", cfg.target_band, setup.l_max),
        });
    }
    let problem = problem_of(&setup)?;
    let target = random_band_limited_target(cfg.target_seed, cfg.target_band, setup.l_max, setup.ctx.k(), *problem.frame());
    write_coefficients(target.coeffs(), &out.join("target_coeffs.csv"))?;
    let results: Vec<Result<(f64, usize, Vec<SolveReport>)>> = cfg
        .density_sizes
        .par_iter()
        .map(|&(p, m)| {
            let op = assemble_control_operator(&problem, &ControlBasis::new(setup.cap, p, m))?;
            Ok((best_approximation(&target, &op)?, op.basis().len(), op.reports().to_vec()))
        })
        .collect();
    let mut residuals = Vec::new();
    let mut rows = Vec::new();
    for (&(p, m), r) in cfg.density_sizes.iter().zip(results) {
        let (res, len, reports) = r?;
        rows.push(vec![p.to_string(), m.to_string(), len.to_string(), res.to_string()]);
        residuals.push(res);
        s.solve_reports.extend(reports);
    }
    write_table(&out.join("density.csv"), &["P", "M", "basis_len", "residual"], &rows)?;
    let mut failures = Failures::default();
    for (i, pair) in residuals.windows(2).enumerate() {
        let (a, b) = (cfg.density_sizes[i], cfg.density_sizes[i + 1]);
        if b.0 >= a.0 && b.1 >= a.1 {
            failures.check(&format!("density increase {a:?} -> {b:?}"), pair[1] - pair[0], DENSITY_SLACK);
        }
    }
    s.details = json!({ "residuals": residuals, "target_norm": target.norm(), "l_max": setup.l_max });
    failures.into_result()
}

/// Parsed command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub mode: Mode,
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub jobs: Option<usize>,
}

pub const USAGE: &str = "usage: cloaksynth <validate|scatter|cloak|sweep|density> [--config path] [--key value ...] [--jobs N]";

pub fn parse_args<I: IntoIterator<Item = String>>(args: I) -> Result<Invocation> {
    let err = |location: &str, message: String| Error::Config { location: location.into(), message };
    let mut args = args.into_iter();
    let mode = args.next().ok_or_else(|| err("command line", "missing mode".into()))?;
    let mode: Mode = mode.parse().map_err(|m| err("command line", m))?;
    let mut inv = Invocation { mode, config: None, overrides: Vec::new(), jobs: None };
    while let Some(arg) = args.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(err("command line", format!("unexpected argument '{arg}'")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = args.next().ok_or_else(|| err(&format!("--{flag}"), "missing value".into()))?;
                (flag.to_string(), v)
            }
        };
        match key.as_str() {
            "config" => inv.config = Some(PathBuf::from(value)),
            "jobs" => {
                let n: usize = value.parse().map_err(|_| err("--jobs", format!("'{value}' is not a count")))?;
                if n == 0 {
                    return Err(err("--jobs", "need at least one worker".into()));
                }
                inv.jobs = Some(n);
            }
            _ => inv.overrides.push((key, value)),
        }
    }
    Ok(inv)
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let args: Vec<String> = args.into_iter().collect();
    if args.is_empty() || args.iter().any(|a| a == "-h" || a == "--help") {
        println!("{USAGE}");
        return if args.is_empty() { 2 } else { 0 };
    }
    let result = parse_args(args).and_then(|mut inv| {
        inv.overrides.push(("mode".into(), inv.mode.to_string()));
        let cfg = RunConfig::load(inv.config.as_deref(), &inv.overrides)?;
        run(&cfg, inv.jobs)
    });
    match result {
        Ok(summary) => {
            if let (Some(before), Some(after)) = (summary.sigma_before, summary.sigma_after) {
                println!("sigma_before {before:.6e}  sigma_after {after:.6e}  reduction {:.2} dB", summary.reduction_db.unwrap_or(0.0));
            } else if let Some(before) = summary.sigma_before {
                println!("sigma {before:.10e}");
            }
            0
        }
        Err(e) => {
            eprintln!("cloaksynth: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::farfield::sigma_by_quadrature;
    use crate::sphere_grid::build_grid;

    fn read_rows(path: &Path) -> Vec<Vec<f64>> {
        let mut r = csv::Reader::from_path(path).unwrap();
        r.records().map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap()).collect()).collect()
    }

    fn pattern_quadrature(rows: &[Vec<f64>], n_theta: usize, n_phi: usize) -> f64 {
        let cell = (PI / n_theta as f64) * (2.0 * PI / n_phi as f64);
        rows.iter().map(|r| r[4] * r[0].sin() * cell).sum()
    }

    fn single(l: usize, m: isize) -> FarFieldPattern {
        let mut c = HarmonicCoeffs::zeros(4);
        c[crate::specfun::HarmonicIndex { l, m }] = Complex64::new(0.6, -0.8);
        FarFieldPattern::new(2.0, c)
    }

    #[test]
    fn zero_pattern_rows_vanish() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        emit_pattern(&FarFieldPattern::new(1.0, HarmonicCoeffs::zeros(3)), 4, 8, &path).unwrap();
        let rows = read_rows(&path);
        assert_eq!(rows.len(), 32);
        assert!(rows.iter().all(|r| r[4] == 0.0));
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("theta_rad,phi_rad,re_A,im_A,abs2_A\n"));
    }

    #[test]
    fn monopole_pattern_is_constant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        emit_pattern(&single(0, 0), 5, 6, &path).unwrap();
        let rows = read_rows(&path);
        let first = rows[0][4];
        assert!(first > 0.0);
        assert!(rows.iter().all(|r| (r[4] - first).abs() <= 1e-15));
    }

    #[test]
    fn pattern_quadrature_reproduces_sigma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let mut c = HarmonicCoeffs::zeros(6);
        for (i, v) in c.as_mut_slice().iter_mut().enumerate() {
            *v = Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()) / (1.0 + i as f64);
        }
        let p = FarFieldPattern::new(2.0, c);
        emit_pattern(&p, 48, 96, &path).unwrap();
        let q = pattern_quadrature(&read_rows(&path), 48, 96);
        assert!((q - sigma(&p)).abs() < 1e-3 * sigma(&p), "{q} vs {}", sigma(&p));
        assert!((sigma_by_quadrature(&p, &build_grid(8)) - sigma(&p)).abs() < 1e-12 * sigma(&p));
    }

    #[test]
    fn coefficient_dump_round_trips_sigma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let p = single(3, -2);
        write_coefficients(p.coeffs(), &path).unwrap();
        let rows = read_rows(&path);
        assert_eq!(rows.len(), 25);
        let s: f64 = rows.iter().map(|r| r[2] * r[2] + r[3] * r[3]).sum();
        assert_eq!(s, sigma(&p));
        assert!(rows.iter().any(|r| r[0] == 3.0 && r[1] == -2.0 && r[2] == 0.6));
    }

    #[test]
    fn parses_command_lines() {
        let args = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        let inv = parse_args(args("cloak --config run.cfg --k 3 --jobs 2 --basis_P=4")).unwrap();
        assert_eq!(inv.mode, Mode::Cloak);
        assert_eq!(inv.config, Some(PathBuf::from("run.cfg")));
        assert_eq!(inv.jobs, Some(2));
        assert_eq!(inv.overrides, vec![("k".into(), "3".into()), ("basis_P".into(), "4".into())]);
        for bad in ["fly", "scatter --k", "scatter stray", "scatter --jobs 0"] {
            assert_eq!(parse_args(args(bad)).unwrap_err().exit_code(), 2, "{bad}");
        }
        assert_eq!(main_with_args(args("scatter --bogus 1")), 2);
    }

    #[test]
    fn oracle_selection() {
        let mut cfg = RunConfig::default();
        cfg.cap_aperture_deg = 0.0;
        assert_eq!(oracle_for(&cfg.setup().unwrap()).unwrap().kind(), MieKind::Impedance(Complex64::new(1.0, 0.0)));
        cfg.bc_variant = BcVariant::MixedDirichlet;
        assert_eq!(oracle_for(&cfg.setup().unwrap()).unwrap().kind(), MieKind::Soft);
        cfg.cap_aperture_deg = 180.0;
        cfg.bc_variant = BcVariant::MixedImpedance;
        assert_eq!(oracle_for(&cfg.setup().unwrap()).unwrap().kind(), MieKind::Soft);
        cfg.cap_aperture_deg = 30.0;
        assert!(oracle_for(&cfg.setup().unwrap()).is_none());
    }
}
