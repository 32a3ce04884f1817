//! Product quadrature grids on the unit sphere, the control cap `F`, and
//! discrete spherical-harmonic analysis/synthesis.

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

use nalgebra::{Rotation3, Unit, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::specfun::{self, HarmonicIndex};

/// Gauss–Legendre nodes and weights on `[lo, hi]`, nodes in descending order.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 1..n {
                let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            x = 0.0;
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = mid + half * x;
        nodes[n - 1 - i] = mid - half * x;
        weights[i] = half * w;
        weights[n - 1 - i] = half * w;
    }
    (nodes, weights)
}

#[derive(Debug, Clone, Copy)]
pub struct GridNode {
    pub theta: f64,
    pub phi: f64,
    /// Quadrature weight in steradians.
    pub weight: f64,
    pub ring: usize,
    pub direction: Vector3<f64>,
}

/// Product grid: Gauss–Legendre rings in colatitude times a uniform azimuth.
#[derive(Debug, Clone)]
pub struct SurfaceGrid {
    thetas: Vec<f64>,
    theta_weights: Vec<f64>,
    n_phi: usize,
    nodes: Vec<GridNode>,
}

impl SurfaceGrid {
    /// Builds a grid from colatitudes and their weights in `cos θ`.
    pub fn from_rings(thetas: Vec<f64>, theta_weights: Vec<f64>, n_phi: usize) -> Result<Self> {
        if thetas.len() != theta_weights.len() {
            return Err(Error::DimensionMismatch { expected: thetas.len(), got: theta_weights.len() });
        }
        if n_phi == 0 || thetas.is_empty() {
            return Err(Error::invalid("grid needs at least one ring and one azimuth"));
        }
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(thetas.len() * n_phi);
        for (ring, (&theta, &w)) in thetas.iter().zip(&theta_weights).enumerate() {
            for j in 0..n_phi {
                let phi = j as f64 * dphi;
                nodes.push(GridNode {
                    theta,
                    phi,
                    weight: w * dphi,
                    ring,
                    direction: specfun::direction(theta, phi),
                });
            }
        }
        Ok(Self { thetas, theta_weights, n_phi, nodes })
    }

    pub fn n_theta(&self) -> usize {
        self.thetas.len()
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    /// Ring weights in `cos θ` (they sum to 2).
    pub fn theta_weights(&self) -> &[f64] {
        &self.theta_weights
    }

    pub fn nodes(&self) -> &[GridNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn phi(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_phi as f64
    }

    /// Largest degree whose harmonic products this grid integrates exactly.
    pub fn exact_degree(&self) -> usize {
        let by_theta = self.thetas.len().saturating_sub(1);
        let by_phi = (self.n_phi.saturating_sub(1)) / 2;
        by_theta.min(by_phi)
    }

    pub fn integrate(&self, samples: &[Complex64]) -> Complex64 {
        self.nodes.iter().zip(samples).map(|(n, s)| s * n.weight).sum()
    }

    /// Normalized Legendre tables, one per ring.
    pub fn legendre_tables(&self, l_max: usize) -> Vec<Vec<f64>> {
        self.thetas.iter().map(|&t| specfun::normalized_legendre(l_max, t)).collect()
    }
}

/// Grid with `2(L_max + 1)` Gauss–Legendre rings and `4(L_max + 1)`
/// azimuths: twice the minimal exact rule in each direction.
pub fn build_grid(l_max: usize) -> SurfaceGrid {
    let n_theta = 2 * (l_max + 1);
    let (x, w) = gauss_legendre(n_theta, -1.0, 1.0);
    let thetas = x.iter().map(|x| x.clamp(-1.0, 1.0).acos()).collect();
    SurfaceGrid::from_rings(thetas, w, 2 * n_theta).expect("non-empty grid")
}

/// Composite grid whose ring rule is split at colatitude `aperture`:
/// `L_max + 1` Gauss–Legendre rings inside the cap and as many outside.
///
/// Each half is exact to degree `2 L_max + 1` in `cos θ`, so the grid keeps
/// the exactness of [`build_grid`] while the cap edge falls between rings.
pub fn build_cap_grid(l_max: usize, aperture: f64) -> Result<SurfaceGrid> {
    if !(aperture > 0.0 && aperture < PI) {
        return Err(Error::invalid(format!("cap aperture {aperture} outside (0, π)")));
    }
    let n = l_max + 1;
    let edge = aperture.cos();
    let (x_in, w_in) = gauss_legendre(n, edge, 1.0);
    let (x_out, w_out) = gauss_legendre(n, -1.0, edge);
    let thetas = x_in.iter().chain(&x_out).map(|x| x.clamp(-1.0, 1.0).acos()).collect();
    let weights = w_in.into_iter().chain(w_out).collect();
    SurfaceGrid::from_rings(thetas, weights, 4 * n)
}

/// [`build_cap_grid`] when the cap has an edge, [`build_grid`] for the empty
/// cap and the whole sphere.
pub fn build_grid_for_cap(l_max: usize, cap: &CapRegion) -> SurfaceGrid {
    let aperture = cap.aperture();
    if aperture > 0.0 && aperture < PI {
        build_cap_grid(l_max, aperture).expect("aperture checked")
    } else {
        build_grid(l_max)
    }
}

/// Which side of the boundary circle is the control set `F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CapSense {
    /// `F` is the set of points within `aperture` of the axis.
    #[default]
    Interior,
    /// `F` is the set of points farther than `aperture` from the axis.
    Exterior,
}

/// The control set `F` on the sphere; its complement is `F′`. Apertures `0`
/// and `π` give the empty set and the whole sphere.
///
/// Stored in interior form: an `Exterior` cap is converted to the interior cap
/// about the antipodal axis with the complementary aperture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapRegion {
    axis: Unit<Vector3<f64>>,
    aperture: f64,
}

impl CapRegion {
    pub fn new(axis: Vector3<f64>, aperture: f64) -> Result<Self> {
        Self::with_sense(axis, aperture, CapSense::Interior)
    }

    pub fn with_sense(axis: Vector3<f64>, aperture: f64, sense: CapSense) -> Result<Self> {
        let norm = axis.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::invalid("cap axis must be a nonzero finite vector"));
        }
        if !(0.0..=PI).contains(&aperture) {
            return Err(Error::invalid(format!("cap aperture {aperture} outside [0, π]")));
        }
        let axis = Unit::new_normalize(axis);
        Ok(match sense {
            CapSense::Interior => Self { axis, aperture },
            CapSense::Exterior => Self { axis: -axis, aperture: PI - aperture },
        })
    }

    pub fn north(aperture: f64) -> Result<Self> {
        Self::new(Vector3::z(), aperture)
    }

    pub fn axis(&self) -> Vector3<f64> {
        self.axis.into_inner()
    }

    pub fn aperture(&self) -> f64 {
        self.aperture
    }

    /// Strict membership; the boundary circle belongs to `F′`.
    pub fn in_cap(&self, point: &Vector3<f64>) -> bool {
        self.axis.dot(point) > self.aperture.cos()
    }

    /// Membership for a colatitude measured from the cap axis.
    pub fn contains_colatitude(&self, theta: f64) -> bool {
        theta.cos() > self.aperture.cos()
    }

    /// Rotation taking world directions into the cap frame, where the cap
    /// axis is `+z`.
    pub fn frame(&self) -> Rotation3<f64> {
        let z = Vector3::z();
        Rotation3::rotation_between(&self.axis, &z)
            .unwrap_or_else(|| Rotation3::from_axis_angle(&Vector3::x_axis(), PI))
    }

    /// Area of `F` on the unit sphere.
    pub fn area(&self) -> f64 {
        2.0 * PI * (1.0 - self.aperture.cos())
    }
}

/// Coefficients over `Y_lm`, `l <= l_max`, in flat order.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicCoeffs {
    l_max: usize,
    values: Vec<Complex64>,
}

impl HarmonicCoeffs {
    pub fn zeros(l_max: usize) -> Self {
        Self { l_max, values: vec![Complex64::new(0.0, 0.0); HarmonicIndex::count(l_max)] }
    }

    pub fn from_vec(l_max: usize, values: Vec<Complex64>) -> Result<Self> {
        let expected = HarmonicIndex::count(l_max);
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: values.len() });
        }
        Ok(Self { l_max, values })
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.values
    }

    pub fn get(&self, l: usize, m: isize) -> Complex64 {
        self[HarmonicIndex { l, m }]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (HarmonicIndex, Complex64)> + '_ {
        self.values.iter().enumerate().map(|(i, &c)| (HarmonicIndex::from_flat(i), c))
    }

    /// Same coefficients padded with zeros or truncated to a new degree.
    pub fn resized(&self, l_max: usize) -> Self {
        let mut out = Self::zeros(l_max);
        let n = out.values.len().min(self.values.len());
        out.values[..n].copy_from_slice(&self.values[..n]);
        out
    }

    /// Value of `Σ c_lm Y_lm` at spherical angles `(θ, φ)`.
    pub fn evaluate(&self, theta: f64, phi: f64) -> Complex64 {
        let ys = specfun::spherical_harmonics_all(self.l_max, theta, phi);
        self.values.iter().zip(&ys).map(|(c, y)| c * y).sum()
    }
}

impl Index<HarmonicIndex> for HarmonicCoeffs {
    type Output = Complex64;

    fn index(&self, idx: HarmonicIndex) -> &Complex64 {
        &self.values[idx.flat()]
    }
}

impl IndexMut<HarmonicIndex> for HarmonicCoeffs {
    fn index_mut(&mut self, idx: HarmonicIndex) -> &mut Complex64 {
        &mut self.values[idx.flat()]
    }
}

/// Azimuthal transform of each ring: `out[ring][m + l_max] = Δφ Σ_j s_ij e^{-imφ_j}`.
pub(crate) fn ring_transform(grid: &SurfaceGrid, samples: &[Complex64], l_max: usize) -> Vec<Vec<Complex64>> {
    let n_phi = grid.n_phi();
    let dphi = 2.0 * PI / n_phi as f64;
    let twiddle: Vec<Complex64> =
        (0..n_phi).map(|j| Complex64::from_polar(1.0, -grid.phi(j))).collect();
    (0..grid.n_theta())
        .map(|ring| {
            let row = &samples[ring * n_phi..(ring + 1) * n_phi];
            (-(l_max as isize)..=l_max as isize)
                .map(|m| {
                    let s: Complex64 = row
                        .iter()
                        .enumerate()
                        .map(|(j, v)| v * twiddle[(m.rem_euclid(n_phi as isize) as usize * j) % n_phi])
                        .sum();
                    s * dphi
                })
                .collect()
        })
        .collect()
}

/// Forward transform `f_lm = Σ w s conj(Y_lm)` over the grid nodes.
pub fn analyze(grid: &SurfaceGrid, samples: &[Complex64], l_max: usize) -> Result<HarmonicCoeffs> {
    if samples.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: samples.len() });
    }
    let rings = ring_transform(grid, samples, l_max);
    let tables = grid.legendre_tables(l_max);
    let mut out = HarmonicCoeffs::zeros(l_max);
    for (ring, w) in grid.theta_weights().iter().enumerate() {
        for idx in HarmonicIndex::iter(l_max) {
            let p = specfun::polar_factor(&tables[ring], idx.l, idx.m);
            out.values[idx.flat()] += rings[ring][(idx.m + l_max as isize) as usize] * (w * p);
        }
    }
    Ok(out)
}

/// Inverse transform: `Σ f_lm Y_lm` at every grid node.
pub fn synthesize(grid: &SurfaceGrid, coeffs: &HarmonicCoeffs) -> Vec<Complex64> {
    let l_max = coeffs.l_max();
    let tables = grid.legendre_tables(l_max);
    let n_phi = grid.n_phi();
    let mut out = Vec::with_capacity(grid.len());
    for table in &tables {
        let per_m: Vec<Complex64> = (-(l_max as isize)..=l_max as isize)
            .map(|m| {
                (m.unsigned_abs()..=l_max)
                    .map(|l| coeffs.get(l, m) * specfun::polar_factor(table, l, m))
                    .sum()
            })
            .collect();
        for j in 0..n_phi {
            let phi = grid.phi(j);
            let v: Complex64 = per_m
                .iter()
                .enumerate()
                .map(|(k, c)| c * Complex64::from_polar(1.0, (k as isize - l_max as isize) as f64 * phi))
                .sum();
            out.push(v);
        }
    }
    out
}
