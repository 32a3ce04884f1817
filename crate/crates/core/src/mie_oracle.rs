//! Closed-form partial-wave solutions for a sphere with one boundary
//! condition everywhere. Shares only `specfun` with the solver.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::specfun::{self, HarmonicIndex};
use crate::solver::RadiatingField;
use crate::sphere_grid::HarmonicCoeffs;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MieKind {
    /// `u = 0` on the whole sphere.
    Soft,
    /// `u_N + h u = 0` on the whole sphere.
    Impedance(Complex64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MieSolution {
    kind: MieKind,
    k: f64,
    a: f64,
}

impl MieSolution {
    pub fn new(kind: MieKind, k: f64, a: f64) -> Result<Self> {
        if !(k > 0.0 && a > 0.0 && k.is_finite() && a.is_finite()) {
            return Err(Error::invalid(format!("need k > 0 and a > 0, got k = {k}, a = {a}")));
        }
        if let MieKind::Impedance(h) = kind {
            if !h.is_finite() || h.im < 0.0 {
                return Err(Error::invalid(format!("impedance {h} must be finite with Im h >= 0")));
            }
        }
        Ok(Self { kind, k, a })
    }

    pub fn kind(&self) -> MieKind {
        self.kind
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn ka(&self) -> f64 {
        self.k * self.a
    }

    /// Reflection ratios `R_0 ..= R_{l_max}`.
    pub fn ratios(&self, l_max: usize) -> Vec<Complex64> {
        let x = self.ka();
        let h = specfun::spherical_hankel_h1_array(l_max + 1, x).expect("ka > 0");
        match self.kind {
            MieKind::Soft => h[..=l_max].iter().map(|h| -h.re / h).collect(),
            MieKind::Impedance(z) => {
                let dh = specfun::derivatives_from_values(&h, x);
                (0..=l_max)
                    .map(|l| {
                        let num = self.k * dh[l].re + z * h[l].re;
                        let den = dh[l] * self.k + z * h[l];
                        -num / den
                    })
                    .collect()
            }
        }
    }
}

/// `c_lm = R_l 4π i^l conj(Y_lm(α))`.
pub fn mie_coefficients(sol: &MieSolution, alpha: &Vector3<f64>, l_max: usize) -> RadiatingField {
    let ratios = sol.ratios(l_max);
    let (theta, phi) = specfun::angles_of(alpha);
    let ys = specfun::spherical_harmonics_all(l_max, theta, phi);
    let values = HarmonicIndex::iter(l_max)
        .map(|i| ratios[i.l] * specfun::i_pow(i.l) * ys[i.flat()].conj() * (4.0 * PI))
        .collect();
    let coeffs = HarmonicCoeffs::from_vec(l_max, values).expect("sized by l_max");
    RadiatingField::new(sol.k, sol.a, coeffs, Rotation3::identity())
}

/// `σ = (4π/k²) Σ (2l+1) |R_l|²`, summed until the terms drop below 1e-16.
pub fn mie_sigma(sol: &MieSolution) -> f64 {
    let l_cap = sol.ka().ceil() as usize + 60;
    let ratios = sol.ratios(l_cap);
    let mut sum = 0.0;
    for (l, r) in ratios.iter().enumerate() {
        sum += (2 * l + 1) as f64 * r.norm_sqr();
        if l > sol.ka() as usize && r.norm() < 1e-16 {
            break;
        }
    }
    4.0 * PI / (sol.k * sol.k) * sum
}

/// Forward amplitude `A(α) = -(i/k) Σ (2l+1) R_l`.
pub fn mie_forward_amplitude(sol: &MieSolution) -> Complex64 {
    let l_cap = sol.ka().ceil() as usize + 60;
    let s: Complex64 = sol
        .ratios(l_cap)
        .iter()
        .enumerate()
        .take_while(|(l, r)| *l <= sol.ka() as usize || r.norm() >= 1e-18)
        .map(|(l, r)| r * (2 * l + 1) as f64)
        .sum();
    Complex64::new(0.0, -1.0 / sol.k) * s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soft(ka: f64) -> MieSolution {
        MieSolution::new(MieKind::Soft, ka, 1.0).unwrap()
    }

    #[test]
    fn soft_ratio_closed_form() {
        let r0 = soft(1.0).ratios(0)[0];
        let expected = -Complex64::new(0.8414709848078965, 0.0) / Complex64::new(0.8414709848078965, -0.5403023058681398);
        assert!((r0 - expected).norm() < 1e-14);
    }

    #[test]
    fn large_impedance_approaches_soft() {
        let hard = MieSolution::new(MieKind::Impedance(Complex64::new(1e8, 0.0)), 1.3, 1.0).unwrap();
        for (a, b) in hard.ratios(15).iter().zip(soft(1.3).ratios(15)) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn zero_impedance_is_sound_hard() {
        let sol = MieSolution::new(MieKind::Impedance(Complex64::new(0.0, 0.0)), 2.0, 1.0).unwrap();
        let h = specfun::spherical_hankel_h1_array(11, 2.0).unwrap();
        let dh = specfun::derivatives_from_values(&h, 2.0);
        for (l, r) in sol.ratios(10).iter().enumerate() {
            assert!((r + dh[l].re / dh[l]).norm() < 1e-14);
        }
    }

    #[test]
    fn axisymmetric_incidence() {
        let field = mie_coefficients(&soft(2.0), &Vector3::z(), 12);
        for (idx, c) in field.coeffs().iter() {
            if idx.m != 0 {
                assert!(c.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn long_wavelength_limit() {
        let ka = 0.01;
        let s = mie_sigma(&soft(ka)) * ka * ka / (4.0 * PI);
        assert!((s - ka * ka).abs() < 0.01 * ka * ka);
    }

    #[test]
    fn lossless_ratios_are_bounded() {
        for ka in [0.3, 1.0, 4.0] {
            let sol = MieSolution::new(MieKind::Impedance(Complex64::new(-2.5, 0.0)), ka, 1.0).unwrap();
            assert!(sol.ratios(30).iter().all(|r| r.norm() <= 1.0 + 1e-14));
        }
    }

    #[test]
    fn optical_theorem_holds_for_series() {
        for sol in [
            soft(1.0),
            soft(std::f64::consts::PI),
            MieSolution::new(MieKind::Impedance(Complex64::new(1.0, 0.0)), 2.0, 1.0).unwrap(),
        ] {
            let sigma = mie_sigma(&sol);
            let extinction = 4.0 * PI / sol.k() * mie_forward_amplitude(&sol).im;
            assert!((sigma - extinction).abs() < 1e-10 * sigma);
        }
    }

    #[test]
    fn soft_ka1_baseline() {
        // Independent evaluation of the same series from closed-form h_l at 40 digits.
        let sigma = mie_sigma(&soft(1.0));
        assert!((sigma - SOFT_KA1_SIGMA).abs() < 1e-12 * SOFT_KA1_SIGMA, "{sigma}");
    }

    const SOFT_KA1_SIGMA: f64 = 10.626241899593979;
}
