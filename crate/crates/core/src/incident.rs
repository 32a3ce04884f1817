//! The incident plane wave `u₀ = e^{ikα·x}` and the physical parameters of
//! a scattering run.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::specfun::{self, HarmonicIndex};
use crate::sphere_grid::{HarmonicCoeffs, SurfaceGrid};

/// Boundary condition imposed on `F′`; `F` always carries `u = w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BcVariant {
    /// `u_N + h u = 0` on `F′`.
    #[default]
    MixedImpedance,
    /// `u = 0` on `F′`.
    MixedDirichlet,
}

/// Impedance `h` on the sphere, piecewise constant over grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Impedance {
    Uniform(Complex64),
    /// One value per node of the grid the problem is solved on, in node order.
    Nodal(Vec<Complex64>),
}

impl Impedance {
    pub fn at(&self, node: usize) -> Complex64 {
        match self {
            Impedance::Uniform(h) => *h,
            Impedance::Nodal(v) => v[node],
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = match self {
            Impedance::Uniform(h) => (!h.is_finite() || h.im < 0.0).then_some(*h),
            Impedance::Nodal(v) => v.iter().copied().find(|h| !h.is_finite() || h.im < 0.0),
        };
        match bad {
            Some(h) => Err(Error::invalid(format!("impedance {h} must be finite with Im h >= 0"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveContext {
    k: f64,
    a: f64,
    alpha: Unit<Vector3<f64>>,
    impedance: Impedance,
    variant: BcVariant,
}

impl WaveContext {
    pub fn new(k: f64, a: f64, alpha: Vector3<f64>, impedance: Impedance, variant: BcVariant) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::invalid(format!("wavenumber {k} must be positive")));
        }
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::invalid(format!("radius {a} must be positive")));
        }
        let n = alpha.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::invalid("incident direction must be a nonzero vector"));
        }
        impedance.validate()?;
        Ok(Self { k, a, alpha: Unit::new_normalize(alpha), impedance, variant })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn ka(&self) -> f64 {
        self.k * self.a
    }

    pub fn alpha(&self) -> Vector3<f64> {
        self.alpha.into_inner()
    }

    pub fn impedance(&self) -> &Impedance {
        &self.impedance
    }

    pub fn variant(&self) -> BcVariant {
        self.variant
    }

    pub fn with_alpha(&self, alpha: Vector3<f64>) -> Result<Self> {
        Self::new(self.k, self.a, alpha, self.impedance.clone(), self.variant)
    }

    pub fn with_impedance(&self, impedance: Impedance) -> Result<Self> {
        Self::new(self.k, self.a, self.alpha(), impedance, self.variant)
    }

    pub fn with_variant(&self, variant: BcVariant) -> Self {
        Self { variant, ..self.clone() }
    }

    /// The same physical setup seen in rotated coordinates.
    pub fn rotated(&self, frame: &Rotation3<f64>) -> Self {
        Self { alpha: Unit::new_normalize(frame * self.alpha.into_inner()), ..self.clone() }
    }

    /// Default truncation degree `ceil(ka) + 20`.
    pub fn default_l_max(&self) -> usize {
        self.ka().ceil() as usize + 20
    }
}

/// `u₀` at a point `x`.
pub fn plane_wave_at(ctx: &WaveContext, x: &Vector3<f64>) -> Complex64 {
    Complex64::from_polar(1.0, ctx.k * ctx.alpha.dot(x))
}

/// Boundary traces of `u₀` on the sphere `r = a`: values and outward normal
/// derivatives at every grid node.
pub fn plane_wave_trace(ctx: &WaveContext, grid: &SurfaceGrid) -> (Vec<Complex64>, Vec<Complex64>) {
    grid.nodes()
        .iter()
        .map(|n| {
            let cos = ctx.alpha.dot(&n.direction);
            let value = Complex64::from_polar(1.0, ctx.ka() * cos);
            (value, Complex64::new(0.0, ctx.k * cos) * value)
        })
        .unzip()
}

/// Jacobi–Anger coefficients of `u₀` on `r = a`:
/// `4π i^l j_l(ka) conj(Y_lm(α))`.
pub fn plane_wave_coefficients(ctx: &WaveContext, l_max: usize) -> HarmonicCoeffs {
    let j = specfun::spherical_bessel_j_array(l_max, ctx.ka()).expect("ka > 0");
    let (theta, phi) = specfun::angles_of(&ctx.alpha);
    let ys = specfun::spherical_harmonics_all(l_max, theta, phi);
    let values = HarmonicIndex::iter(l_max)
        .map(|i| specfun::i_pow(i.l) * (4.0 * PI * j[i.l]) * ys[i.flat()].conj())
        .collect();
    HarmonicCoeffs::from_vec(l_max, values).expect("sized by l_max")
}
