//! Far-field amplitude `A(β)`, the cross section `σ = ∫ |A|² dΩ`, and
//! energy/reciprocity diagnostics.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use nalgebra::{Rotation3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::incident::WaveContext;
use crate::solver::{Incidence, RadiatingField, ScatterProblem, SolveOptions};
use crate::specfun;
use crate::sphere_grid::{CapRegion, HarmonicCoeffs, SurfaceGrid};

const TINY: f64 = 1e-300;

/// `A(β) = Σ a_lm Y_lm(frame · β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldPattern {
    k: f64,
    coeffs: HarmonicCoeffs,
    frame: Rotation3<f64>,
}

impl FarFieldPattern {
    pub fn new(k: f64, coeffs: HarmonicCoeffs) -> Self {
        Self { k, coeffs, frame: Rotation3::identity() }
    }

    pub fn with_frame(k: f64, coeffs: HarmonicCoeffs, frame: Rotation3<f64>) -> Self {
        Self { k, coeffs, frame }
    }

    pub fn zeros(k: f64, l_max: usize, frame: Rotation3<f64>) -> Self {
        Self { k, coeffs: HarmonicCoeffs::zeros(l_max), frame }
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn l_max(&self) -> usize {
        self.coeffs.l_max()
    }

    pub fn coeffs(&self) -> &HarmonicCoeffs {
        &self.coeffs
    }

    pub fn frame(&self) -> &Rotation3<f64> {
        &self.frame
    }

    pub fn as_slice(&self) -> &[Complex64] {
        self.coeffs.as_slice()
    }

    /// L² norm on the sphere, `sqrt(σ)`.
    pub fn norm(&self) -> f64 {
        self.coeffs.norm_sqr().sqrt()
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        assert_eq!(self.l_max(), other.l_max(), "patterns of different degree");
        let values = self.as_slice().iter().zip(other.as_slice()).map(|(&a, &b)| f(a, b)).collect();
        Self { coeffs: HarmonicCoeffs::from_vec(self.l_max(), values).expect("same degree"), ..self.clone() }
    }
}

impl Add for &FarFieldPattern {
    type Output = FarFieldPattern;
    fn add(self, rhs: Self) -> FarFieldPattern {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &FarFieldPattern {
    type Output = FarFieldPattern;
    fn sub(self, rhs: Self) -> FarFieldPattern {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul<Complex64> for &FarFieldPattern {
    type Output = FarFieldPattern;
    fn mul(self, s: Complex64) -> FarFieldPattern {
        self.zip_with(self, |a, _| a * s)
    }
}

/// `a_lm = c_lm (−i)^{l+1} / k`, from `h_l(kr) ~ (−i)^{l+1} e^{ikr} / (kr)`.
pub fn far_field(v: &RadiatingField) -> FarFieldPattern {
    let values = v
        .coeffs()
        .iter()
        .map(|(idx, c)| c * specfun::i_pow(3 * (idx.l + 1)) / v.k())
        .collect();
    FarFieldPattern {
        k: v.k(),
        coeffs: HarmonicCoeffs::from_vec(v.l_max(), values).expect("same degree"),
        frame: *v.frame(),
    }
}

/// Cross section by Parseval, `Σ |a_lm|²`.
pub fn sigma(p: &FarFieldPattern) -> f64 {
    p.coeffs.norm_sqr()
}

/// Cross section by quadrature of `|A|²` on a grid; a cross-check of [`sigma`].
pub fn sigma_by_quadrature(p: &FarFieldPattern, grid: &SurfaceGrid) -> f64 {
    let samples = crate::sphere_grid::synthesize(grid, &p.coeffs);
    grid.nodes().iter().zip(&samples).map(|(n, a)| n.weight * a.norm_sqr()).sum()
}

/// `A(β)` for a world-frame unit vector.
pub fn eval_pattern(p: &FarFieldPattern, beta: &Vector3<f64>) -> Complex64 {
    let local = p.frame * beta;
    let (theta, phi) = specfun::angles_of(&local);
    p.coeffs.evaluate(theta, phi)
}

/// `(4π/k) Im A(α)`: total power removed from the incident wave.
pub fn extinction(p: &FarFieldPattern, ctx: &WaveContext) -> f64 {
    4.0 * PI / p.k * eval_pattern(p, &ctx.alpha()).im
}

/// `|σ − (4π/k) Im A(α)| / max(σ, tiny)`; zero for a zero field.
pub fn optical_theorem_residual(p: &FarFieldPattern, ctx: &WaveContext) -> f64 {
    let s = sigma(p);
    let e = extinction(p, ctx);
    if s == 0.0 && e == 0.0 {
        return 0.0;
    }
    (s - e).abs() / s.max(TINY)
}

/// Compares `A(β; α)` with `A(−α; −β)` for the uncontrolled scatterer.
pub fn reciprocity_residual(
    ctx: &WaveContext,
    cap: &CapRegion,
    grid: &SurfaceGrid,
    l_max: usize,
    beta: &Vector3<f64>,
) -> Result<f64> {
    if beta.norm() == 0.0 {
        return Err(Error::invalid("observation direction must be nonzero"));
    }
    let beta = beta.normalize();
    let reverse = ctx.with_alpha(-beta)?;
    let forward_problem = ScatterProblem::new(ctx, cap, grid, l_max, SolveOptions::default())?;
    let reverse_problem = ScatterProblem::new(&reverse, cap, grid, l_max, SolveOptions::default())?;
    let w = forward_problem.zero_control();
    let (a, b) = rayon::join(
        || forward_problem.solve(Incidence::PlaneWave, &w),
        || reverse_problem.solve(Incidence::PlaneWave, &w),
    );
    let a = eval_pattern(&far_field(&a?.0), &beta);
    let b = eval_pattern(&far_field(&b?.0), &-ctx.alpha());
    Ok((a - b).norm() / a.norm().max(b.norm()).max(TINY))
}
