//! Python bindings: problem setup, scattering solves, far-field patterns and
//! control synthesis.

use cloaksynth_core::cli;
use cloaksynth_core::control::{self, ControlBasis, ControlFunction, ControlOperator, SynthesisResult};
use cloaksynth_core::error::Error;
use cloaksynth_core::farfield::{self, FarFieldPattern};
use cloaksynth_core::incident::{BcVariant, Impedance, WaveContext};
use cloaksynth_core::mie_oracle::{self, MieKind, MieSolution};
use cloaksynth_core::solver::{Formulation, Incidence, ScatterProblem, SolveOptions, SolveReport};
use cloaksynth_core::specfun::{self, HarmonicIndex};
use cloaksynth_core::sphere_grid::{build_grid_for_cap, CapRegion, HarmonicCoeffs};
use nalgebra::{DVector, Vector3};
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(cloaksynth, SolverError, PyRuntimeError);
create_exception!(cloaksynth, ConsistencyError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        2 => PyValueError::new_err(msg),
        3 => SolverError::new_err(msg),
        4 => ConsistencyError::new_err(msg),
        _ => PyIOError::new_err(msg),
    }
}

trait OrRaise<T> {
    fn or_raise(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for cloaksynth_core::error::Result<T> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

type Triple = (f64, f64, f64);

fn vector(v: Triple) -> Vector3<f64> {
    Vector3::new(v.0, v.1, v.2)
}

fn triple(v: Vector3<f64>) -> Triple {
    (v.x, v.y, v.z)
}

#[pyclass(name = "WaveContext", frozen)]
struct PyWaveContext(WaveContext);

#[pymethods]
impl PyWaveContext {
    /// `variant` is "A" (impedance on the complement of the cap) or "B"
    /// (Dirichlet there).
    #[new]
    #[pyo3(signature = (k, a = 1.0, alpha = (0.0, 0.0, 1.0), h = Complex64::new(1.0, 0.0), variant = "A"))]
    fn new(k: f64, a: f64, alpha: Triple, h: Complex64, variant: &str) -> PyResult<Self> {
        let variant = match variant {
            "A" | "a" => BcVariant::MixedImpedance,
            "B" | "b" => BcVariant::MixedDirichlet,
            _ => return Err(PyValueError::new_err(format!("variant '{variant}' is not A or B"))),
        };
        WaveContext::new(k, a, vector(alpha), Impedance::Uniform(h), variant).or_raise().map(Self)
    }

    #[getter]
    fn k(&self) -> f64 {
        self.0.k()
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a()
    }

    #[getter]
    fn ka(&self) -> f64 {
        self.0.ka()
    }

    #[getter]
    fn alpha(&self) -> Triple {
        triple(self.0.alpha())
    }

    #[getter]
    fn h(&self) -> Complex64 {
        self.0.impedance().at(0)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        match self.0.variant() {
            BcVariant::MixedImpedance => "A",
            BcVariant::MixedDirichlet => "B",
        }
    }

    fn default_l_max(&self) -> usize {
        self.0.default_l_max()
    }

    fn __repr__(&self) -> String {
        format!("WaveContext(k={}, a={}, alpha={:?}, h={}, variant='{}')", self.k(), self.a(), self.alpha(), self.h(), self.variant())
    }
}

#[pyclass(name = "CapRegion", frozen)]
struct PyCapRegion(CapRegion);

#[pymethods]
impl PyCapRegion {
    /// Aperture in degrees; 0 is the empty cap, 180 the whole sphere.
    #[new]
    #[pyo3(signature = (aperture_deg, axis = (0.0, 0.0, 1.0)))]
    fn new(aperture_deg: f64, axis: Triple) -> PyResult<Self> {
        let aperture = if aperture_deg == 180.0 { std::f64::consts::PI } else { aperture_deg.to_radians() };
        CapRegion::new(vector(axis), aperture).or_raise().map(Self)
    }

    #[getter]
    fn aperture(&self) -> f64 {
        self.0.aperture()
    }

    #[getter]
    fn axis(&self) -> Triple {
        triple(self.0.axis())
    }

    fn area(&self) -> f64 {
        self.0.area()
    }

    fn contains(&self, direction: Triple) -> bool {
        self.0.in_cap(&vector(direction).normalize())
    }

    fn __repr__(&self) -> String {
        format!("CapRegion(aperture_deg={}, axis={:?})", self.0.aperture().to_degrees(), self.axis())
    }
}

#[pyclass(name = "SolveReport", frozen, get_all)]
struct PySolveReport {
    relative_residual: f64,
    condition_estimate: f64,
    truncation_tail: f64,
    rank_deficiency: usize,
    formulation: &'static str,
}

fn formulation_name(f: Formulation) -> &'static str {
    match f {
        Formulation::Collocation => "collocation",
        Formulation::EdgeGalerkin => "edge_galerkin",
    }
}

impl From<SolveReport> for PySolveReport {
    fn from(r: SolveReport) -> Self {
        Self {
            relative_residual: r.relative_residual,
            condition_estimate: r.condition_estimate,
            truncation_tail: r.truncation_tail,
            rank_deficiency: r.rank_deficiency,
            formulation: formulation_name(r.formulation),
        }
    }
}

#[pymethods]
impl PySolveReport {
    fn __repr__(&self) -> String {
        format!(
            "SolveReport(relative_residual={:e}, condition_estimate={:e}, truncation_tail={:e}, rank_deficiency={}, formulation='{}')",
            self.relative_residual, self.condition_estimate, self.truncation_tail, self.rank_deficiency, self.formulation
        )
    }
}

/// Far-field amplitude `A(β)` as spherical-harmonic coefficients (flat index
/// `l² + l + m`), expressed in the cap frame of the problem that produced it.
#[pyclass(name = "FarFieldPattern", frozen)]
struct PyFarFieldPattern(FarFieldPattern);

#[pymethods]
impl PyFarFieldPattern {
    /// Pattern in the world frame from flat coefficients.
    #[staticmethod]
    fn from_coefficients(k: f64, coefficients: Vec<Complex64>) -> PyResult<Self> {
        if coefficients.is_empty() {
            return Err(PyValueError::new_err("no coefficients"));
        }
        let l_max = (coefficients.len() as f64).sqrt().round() as usize - 1;
        let coeffs = HarmonicCoeffs::from_vec(l_max, coefficients).or_raise()?;
        Ok(Self(FarFieldPattern::new(k, coeffs)))
    }

    #[getter]
    fn k(&self) -> f64 {
        self.0.k()
    }

    #[getter]
    fn l_max(&self) -> usize {
        self.0.l_max()
    }

    fn coefficients(&self) -> Vec<Complex64> {
        self.0.as_slice().to_vec()
    }

    fn coefficient(&self, l: usize, m: isize) -> PyResult<Complex64> {
        let idx = HarmonicIndex::new(l, m).or_raise()?;
        if l > self.0.l_max() {
            return Err(PyValueError::new_err(format!("degree {l} above l_max {}", self.0.l_max())));
        }
        Ok(self.0.coeffs()[idx])
    }

    /// Cross section `Σ |a_lm|²`.
    fn sigma(&self) -> f64 {
        farfield::sigma(&self.0)
    }

    fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// `A(β)` for a world-frame direction.
    fn evaluate(&self, beta: Triple) -> PyResult<Complex64> {
        let b = vector(beta);
        if b.norm() == 0.0 {
            return Err(PyValueError::new_err("direction must be nonzero"));
        }
        Ok(farfield::eval_pattern(&self.0, &b.normalize()))
    }

    fn extinction(&self, ctx: &PyWaveContext) -> f64 {
        farfield::extinction(&self.0, &ctx.0)
    }

    fn optical_theorem_residual(&self, ctx: &PyWaveContext) -> f64 {
        farfield::optical_theorem_residual(&self.0, &ctx.0)
    }

    /// Writes `theta_rad,phi_rad,re_A,im_A,abs2_A` rows on a midpoint grid.
    #[pyo3(signature = (path, n_theta = 36, n_phi = 72))]
    fn write_csv(&self, path: std::path::PathBuf, n_theta: usize, n_phi: usize) -> PyResult<()> {
        cli::emit_pattern(&self.0, n_theta, n_phi, &path).or_raise()
    }

    fn __sub__(&self, other: &Self) -> PyResult<Self> {
        if self.0.l_max() != other.0.l_max() {
            return Err(PyValueError::new_err("patterns differ in l_max"));
        }
        Ok(Self(&self.0 - &other.0))
    }

    fn __repr__(&self) -> String {
        format!("FarFieldPattern(k={}, l_max={}, sigma={:.6e})", self.k(), self.l_max(), self.sigma())
    }
}

/// A factorized boundary system for one context, cap and truncation.
#[pyclass(name = "ScatterProblem", frozen)]
struct PyScatterProblem {
    inner: ScatterProblem,
    cap: CapRegion,
}

#[pymethods]
impl PyScatterProblem {
    #[new]
    #[pyo3(signature = (ctx, cap, l_max = None, resid_tol = None, edge_adapted = true))]
    fn new(
        py: Python<'_>,
        ctx: &PyWaveContext,
        cap: &PyCapRegion,
        l_max: Option<usize>,
        resid_tol: Option<f64>,
        edge_adapted: bool,
    ) -> PyResult<Self> {
        let l_max = l_max.unwrap_or_else(|| ctx.0.default_l_max());
        let opts = SolveOptions { resid_tol, edge_adapted, ..SolveOptions::default() };
        let (ctx, cap) = (ctx.0.clone(), cap.0);
        let inner = py
            .detach(|| {
                let grid = build_grid_for_cap(l_max, &cap);
                ScatterProblem::new(&ctx, &cap, &grid, l_max, opts)
            })
            .or_raise()?;
        Ok(Self { inner, cap })
    }

    #[getter]
    fn l_max(&self) -> usize {
        self.inner.l_max()
    }

    #[getter]
    fn formulation(&self) -> &'static str {
        formulation_name(self.inner.formulation())
    }

    #[getter]
    fn has_interface(&self) -> bool {
        self.inner.has_interface()
    }

    /// Grid nodes as `(theta, phi, weight)` in the cap frame.
    fn nodes(&self) -> Vec<(f64, f64, f64)> {
        self.inner.grid().nodes().iter().map(|n| (n.theta, n.phi, n.weight)).collect()
    }

    /// Plane-wave solve with an optional control; returns the scattered far
    /// field and the solve report.
    #[pyo3(signature = (control = None))]
    fn solve(&self, py: Python<'_>, control: Option<&PyControlFunction>) -> PyResult<(PyFarFieldPattern, PySolveReport)> {
        let w = match control {
            Some(c) => c.0.on_grid(self.inner.grid()),
            None => self.inner.zero_control(),
        };
        self.solve_values(py, w, true)
    }

    /// Solve with control values given at the grid nodes (zero off the cap).
    #[pyo3(signature = (values, incident = true))]
    fn solve_nodal(&self, py: Python<'_>, values: Vec<Complex64>, incident: bool) -> PyResult<(PyFarFieldPattern, PySolveReport)> {
        self.solve_values(py, values, incident)
    }
}

impl PyScatterProblem {
    fn solve_values(&self, py: Python<'_>, w: Vec<Complex64>, incident: bool) -> PyResult<(PyFarFieldPattern, PySolveReport)> {
        let incidence = if incident { Incidence::PlaneWave } else { Incidence::Absent };
        let (v, report) = py.detach(|| self.inner.solve(incidence, &w)).or_raise()?;
        Ok((PyFarFieldPattern(farfield::far_field(&v)), report.into()))
    }
}

#[pyclass(name = "ControlBasis", frozen)]
struct PyControlBasis(ControlBasis);

#[pymethods]
impl PyControlBasis {
    /// `profiles` radial Chebyshev profiles times azimuthal orders `|m| <= max_order`.
    #[new]
    fn new(cap: &PyCapRegion, profiles: usize, max_order: usize) -> Self {
        Self(ControlBasis::new(cap.0, profiles, max_order))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// `(p, m)` for each basis function, in coefficient order.
    fn labels(&self) -> Vec<(usize, isize)> {
        (0..self.0.len()).map(|j| self.0.label(j)).collect()
    }

    /// All basis functions at a cap-frame point.
    fn values_at(&self, theta: f64, phi: f64) -> Vec<Complex64> {
        self.0.values_at(theta, phi)
    }
}

#[pyclass(name = "ControlFunction", frozen)]
struct PyControlFunction(ControlFunction);

#[pymethods]
impl PyControlFunction {
    #[new]
    fn new(basis: &PyControlBasis, coefficients: Vec<Complex64>) -> PyResult<Self> {
        ControlFunction::new(basis.0.clone(), DVector::from_vec(coefficients)).or_raise().map(Self)
    }

    fn coefficients(&self) -> Vec<Complex64> {
        self.0.coefficients().as_slice().to_vec()
    }

    fn value_at(&self, theta: f64, phi: f64) -> Complex64 {
        self.0.value_at(theta, phi)
    }
}

/// Linear map from control coefficients to far-field coefficients.
#[pyclass(name = "ControlOperator", frozen)]
struct PyControlOperator(ControlOperator);

#[pymethods]
impl PyControlOperator {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.matrix().shape()
    }

    /// Row-major matrix entries.
    fn matrix(&self) -> Vec<Vec<Complex64>> {
        let m = self.0.matrix();
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn apply(&self, coefficients: Vec<Complex64>) -> PyResult<PyFarFieldPattern> {
        self.0.apply(&DVector::from_vec(coefficients)).or_raise().map(PyFarFieldPattern)
    }

    /// `A₀ + L g`.
    fn controlled(&self, a0: &PyFarFieldPattern, coefficients: Vec<Complex64>) -> PyResult<PyFarFieldPattern> {
        self.0.controlled(&a0.0, &DVector::from_vec(coefficients)).or_raise().map(PyFarFieldPattern)
    }
}

#[pyclass(name = "SynthesisResult", frozen, get_all)]
struct PySynthesisResult {
    sigma_before: f64,
    sigma_after: f64,
    reduction_db: f64,
    control_norm: f64,
    lambda_used: f64,
    objective_value: f64,
    ill_conditioned: bool,
    coefficients: Vec<Complex64>,
}

impl From<&SynthesisResult> for PySynthesisResult {
    fn from(r: &SynthesisResult) -> Self {
        Self {
            sigma_before: r.sigma_before,
            sigma_after: r.sigma_after,
            reduction_db: r.reduction_db,
            control_norm: r.control_norm,
            lambda_used: r.lambda_used,
            objective_value: r.objective_value,
            ill_conditioned: r.ill_conditioned,
            coefficients: r.w.coefficients().as_slice().to_vec(),
        }
    }
}

#[pymethods]
impl PySynthesisResult {
    fn ratio(&self) -> f64 {
        self.sigma_after / self.sigma_before
    }

    fn __repr__(&self) -> String {
        format!(
            "SynthesisResult(sigma_before={:.6e}, sigma_after={:.6e}, reduction_db={:.3}, lambda_used={:e})",
            self.sigma_before, self.sigma_after, self.reduction_db, self.lambda_used
        )
    }
}

#[pyfunction]
fn compute_a0(py: Python<'_>, problem: &PyScatterProblem) -> PyResult<(PyFarFieldPattern, PySolveReport)> {
    let (p, r) = py.detach(|| control::compute_a0(&problem.inner)).or_raise()?;
    Ok((PyFarFieldPattern(p), r.into()))
}

#[pyfunction]
fn assemble_control_operator(py: Python<'_>, problem: &PyScatterProblem, basis: &PyControlBasis) -> PyResult<PyControlOperator> {
    py.detach(|| control::assemble_control_operator(&problem.inner, &basis.0)).or_raise().map(PyControlOperator)
}

/// Minimizes `σ(A₀ + L g) + λ² ‖w‖²`.
#[pyfunction]
#[pyo3(name = "synthesize")]
fn synthesize_control(a0: &PyFarFieldPattern, op: &PyControlOperator, lam: f64) -> PyResult<PySynthesisResult> {
    control::synthesize(&a0.0, &op.0, lam).or_raise().map(|r| (&r).into())
}

#[pyfunction]
fn select_lambda(a0: &PyFarFieldPattern, op: &PyControlOperator, lambdas: Vec<f64>) -> PyResult<(PySynthesisResult, Vec<PySynthesisResult>)> {
    let (chosen, all) = control::select_lambda(&a0.0, &op.0, &lambdas).or_raise()?;
    Ok(((&chosen).into(), all.iter().map(Into::into).collect()))
}

#[pyfunction]
fn best_approximation(target: &PyFarFieldPattern, op: &PyControlOperator) -> PyResult<f64> {
    control::best_approximation(&target.0, &op.0).or_raise()
}

/// Best-approximation residuals of `target` over nested `(P, M)` bases.
#[pyfunction]
fn density_experiment(
    py: Python<'_>,
    problem: &PyScatterProblem,
    target: &PyFarFieldPattern,
    sizes: Vec<(usize, usize)>,
) -> PyResult<Vec<f64>> {
    py.detach(|| control::density_experiment(&problem.inner, &problem.cap, &target.0, &sizes)).or_raise()
}

/// Seeded complex Gaussian target with degrees `<= band`, in the problem's frame.
#[pyfunction]
fn random_band_limited_target(seed: u64, band: usize, problem: &PyScatterProblem) -> PyFarFieldPattern {
    let p = &problem.inner;
    PyFarFieldPattern(control::random_band_limited_target(seed, band, p.l_max(), p.context().k(), *p.frame()))
}

#[pyfunction]
#[pyo3(signature = (ctx, cap, beta, l_max = None))]
fn reciprocity_residual(py: Python<'_>, ctx: &PyWaveContext, cap: &PyCapRegion, beta: Triple, l_max: Option<usize>) -> PyResult<f64> {
    let l_max = l_max.unwrap_or_else(|| ctx.0.default_l_max());
    let (ctx, cap) = (ctx.0.clone(), cap.0);
    py.detach(|| {
        let grid = build_grid_for_cap(l_max, &cap);
        farfield::reciprocity_residual(&ctx, &cap, &grid, l_max, &vector(beta))
    })
    .or_raise()
}

/// Exact cross section of the uniform sphere: sound-soft when `h` is None,
/// impedance `h` otherwise.
#[pyfunction]
#[pyo3(signature = (k, a = 1.0, h = None))]
fn mie_sigma(k: f64, a: f64, h: Option<Complex64>) -> PyResult<f64> {
    let kind = h.map_or(MieKind::Soft, MieKind::Impedance);
    MieSolution::new(kind, k, a).or_raise().map(|s| mie_oracle::mie_sigma(&s))
}

#[pyfunction]
fn spherical_bessel_j(l: usize, x: f64) -> PyResult<f64> {
    specfun::spherical_bessel_j(l, x).or_raise()
}

#[pyfunction]
fn spherical_hankel_h1(l: usize, x: f64) -> PyResult<Complex64> {
    specfun::spherical_hankel_h1(l, x).or_raise()
}

#[pyfunction]
fn spherical_harmonic(l: usize, m: isize, theta: f64, phi: f64) -> PyResult<Complex64> {
    specfun::spherical_harmonic(HarmonicIndex::new(l, m).or_raise()?, theta, phi).or_raise()
}

/// Runs the command-line front end in-process; returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| cli::main_with_args(args))
}

#[pymodule]
fn cloaksynth(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWaveContext>()?;
    m.add_class::<PyCapRegion>()?;
    m.add_class::<PySolveReport>()?;
    m.add_class::<PyFarFieldPattern>()?;
    m.add_class::<PyScatterProblem>()?;
    m.add_class::<PyControlBasis>()?;
    m.add_class::<PyControlFunction>()?;
    m.add_class::<PyControlOperator>()?;
    m.add_class::<PySynthesisResult>()?;
    m.add_function(wrap_pyfunction!(compute_a0, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_control_operator, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_control, m)?)?;
    m.add_function(wrap_pyfunction!(select_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(best_approximation, m)?)?;
    m.add_function(wrap_pyfunction!(density_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(random_band_limited_target, m)?)?;
    m.add_function(wrap_pyfunction!(reciprocity_residual, m)?)?;
    m.add_function(wrap_pyfunction!(mie_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(spherical_bessel_j, m)?)?;
    m.add_function(wrap_pyfunction!(spherical_hankel_h1, m)?)?;
    m.add_function(wrap_pyfunction!(spherical_harmonic, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add("ConsistencyError", m.py().get_type::<ConsistencyError>())?;
    Ok(())
}
