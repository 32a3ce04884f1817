//! Solver for the exterior problem on a sphere of radius `a`: least-squares
//! collocation, plus an edge-adapted Galerkin path for the mixed cap.
//!
//! The scattered field is expanded in outgoing waves,
//! `v(r n̂) = Σ c_lm h_l(kr) Y_lm(n̂)`, which satisfy the radiation condition
//! term by term. The coefficients minimize the quadrature-weighted boundary
//! residual over all grid nodes:
//!
//! ```text
//! F rows:            Σ c_lm h_l(ka) Y_lm                   = w − u₀
//! F′ rows (impedance): Σ c_lm [k h_l'(ka) + h h_l(ka)] Y_lm = −(∂_N u₀ + h u₀)
//! F′ rows (Dirichlet): Σ c_lm h_l(ka) Y_lm                 = −u₀
//! ```
//!
//! Everything is computed in the cap frame, where the cap axis is `+z`. When
//! `h` is constant on each ring, the problem separates by azimuthal order and
//! is solved as `2 L + 1` small blocks; otherwise one dense system is used.
//!
//! Collocation converges slowly once `F` and `F′` carry different kinds of
//! condition: the Robin trace is singular at the cap edge and a global
//! harmonic fit spreads that error over every coefficient. For the impedance
//! variant with uniform `h` the solver therefore switches to the
//! edge-adapted Galerkin formulation in [`edge`](self::edge), unless
//! [`SolveOptions::edge_adapted`] is off.

use nalgebra::{DMatrix, DVector, Rotation3, Vector3, SVD};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::incident::{plane_wave_trace, BcVariant, Impedance, WaveContext};
use crate::specfun::{self, HarmonicIndex};
use crate::sphere_grid::{ring_transform, synthesize, CapRegion, HarmonicCoeffs, SurfaceGrid};

mod edge;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Residual tolerance when the whole sphere carries one condition.
pub const SMOOTH_RESID_TOL: f64 = 1e-6;
/// Residual tolerance when the boundary has an `F`/`F′` interface.
pub const INTERFACE_RESID_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Overrides the default residual tolerance.
    pub resid_tol: Option<f64>,
    /// Singular values below `rank_rtol · σ_max` are discarded.
    pub rank_rtol: f64,
    /// Always assemble the full dense collocation system.
    pub force_dense: bool,
    /// Use the edge-adapted Galerkin formulation where it applies.
    pub edge_adapted: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { resid_tol: None, rank_rtol: 1e-12, force_dense: false, edge_adapted: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Weighted least squares over the grid nodes.
    Collocation,
    /// Galerkin on `F` with edge-singular trial functions; the residual is
    /// the projected (weak) boundary residual.
    EdgeGalerkin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveReport {
    pub relative_residual: f64,
    /// Ratio of extreme singular values of the column-equilibrated system.
    pub condition_estimate: f64,
    /// `max |c_{L,m}| / max |c_lm|`; large values flag under-resolution.
    pub truncation_tail: f64,
    /// Number of discarded singular directions.
    pub rank_deficiency: usize,
    pub formulation: Formulation,
}

impl SolveReport {
    pub fn under_resolved(&self) -> bool {
        self.truncation_tail > 1e-6
    }
}

/// Outgoing field `Σ c_lm h_l(kr) Y_lm` expressed in the cap frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiatingField {
    k: f64,
    a: f64,
    coeffs: HarmonicCoeffs,
    frame: Rotation3<f64>,
}

impl RadiatingField {
    pub fn new(k: f64, a: f64, coeffs: HarmonicCoeffs, frame: Rotation3<f64>) -> Self {
        Self { k, a, coeffs, frame }
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn l_max(&self) -> usize {
        self.coeffs.l_max()
    }

    pub fn coeffs(&self) -> &HarmonicCoeffs {
        &self.coeffs
    }

    /// Rotation from world coordinates into the frame of the coefficients.
    pub fn frame(&self) -> &Rotation3<f64> {
        &self.frame
    }

    fn radial_sums(&self, x: &Vector3<f64>) -> Result<(Complex64, Complex64)> {
        let local = self.frame * x;
        let r = local.norm();
        let (theta, phi) = specfun::angles_of(&local);
        let l_max = self.l_max();
        let h = specfun::spherical_hankel_h1_array(l_max + 1, self.k * r)?;
        let dh = specfun::derivatives_from_values(&h, self.k * r);
        let ys = specfun::spherical_harmonics_all(l_max, theta, phi);
        let mut value = ZERO;
        let mut radial = ZERO;
        for (idx, c) in self.coeffs.iter() {
            let cy = c * ys[idx.flat()];
            value += cy * h[idx.l];
            radial += cy * dh[idx.l] * self.k;
        }
        Ok((value, radial))
    }

    /// `v(x)` at a world-frame point outside the origin.
    pub fn value_at(&self, x: &Vector3<f64>) -> Result<Complex64> {
        Ok(self.radial_sums(x)?.0)
    }

    /// `∂_r v(x)`.
    pub fn radial_derivative_at(&self, x: &Vector3<f64>) -> Result<Complex64> {
        Ok(self.radial_sums(x)?.1)
    }

    pub fn truncation_tail(&self) -> f64 {
        let max = self.coeffs.as_slice().iter().map(|c| c.norm()).fold(0.0, f64::max);
        if max == 0.0 {
            return 0.0;
        }
        let l = self.l_max();
        let top = (-(l as isize)..=l as isize).map(|m| self.coeffs.get(l, m).norm()).fold(0.0, f64::max);
        top / max
    }
}

impl std::ops::Add for &RadiatingField {
    type Output = RadiatingField;

    fn add(self, rhs: &RadiatingField) -> RadiatingField {
        let values = self.coeffs.as_slice().iter().zip(rhs.coeffs.as_slice()).map(|(a, b)| a + b).collect();
        RadiatingField {
            coeffs: HarmonicCoeffs::from_vec(self.l_max(), values).expect("same degree"),
            ..self.clone()
        }
    }
}

/// Whether the plane wave drives the problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Incidence {
    PlaneWave,
    Absent,
}

struct Block {
    m: isize,
    scales: Vec<f64>,
    svd: SVD<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    cutoff: f64,
}

enum System {
    Blocks(Vec<Block>),
    Dense { scales: Vec<f64>, svd: SVD<Complex64, nalgebra::Dyn, nalgebra::Dyn>, cutoff: f64 },
    Edge { system: edge::EdgeSystem, h: Complex64 },
}

/// A factorized boundary system for one geometry, wave context and
/// truncation; reused for any number of right-hand sides.
pub struct ScatterProblem {
    ctx: WaveContext,
    local_ctx: WaveContext,
    frame: Rotation3<f64>,
    grid: SurfaceGrid,
    l_max: usize,
    in_f: Vec<bool>,
    has_interface: bool,
    /// `h_l(ka)` for `l <= l_max`.
    hankel: Vec<Complex64>,
    /// `k h_l'(ka)` for `l <= l_max`.
    hankel_prime: Vec<Complex64>,
    system: System,
    condition: f64,
    rank_deficiency: usize,
    opts: SolveOptions,
}

impl std::fmt::Debug for ScatterProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScatterProblem")
            .field("l_max", &self.l_max)
            .field("nodes", &self.grid.len())
            .field("has_interface", &self.has_interface)
            .field("condition", &self.condition)
            .finish_non_exhaustive()
    }
}

fn equilibrate(a: &mut DMatrix<Complex64>) -> Result<Vec<f64>> {
    let mut scales = Vec::with_capacity(a.ncols());
    for mut col in a.column_iter_mut() {
        let n = col.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::IllPosed("boundary matrix has a degenerate column".into()));
        }
        col /= Complex64::new(n, 0.0);
        scales.push(n);
    }
    Ok(scales)
}

fn factor(a: DMatrix<Complex64>, rtol: f64) -> (SVD<Complex64, nalgebra::Dyn, nalgebra::Dyn>, f64, f64, usize) {
    let svd = a.svd(true, true);
    let s = &svd.singular_values;
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let cutoff = rtol * max;
    let deficiency = s.iter().filter(|&&v| v <= cutoff).count();
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    (svd, cutoff, cond, deficiency)
}

impl ScatterProblem {
    /// Assembles and factors the system. `grid` lives in the cap frame: its
    /// north pole is the cap axis.
    pub fn new(ctx: &WaveContext, cap: &CapRegion, grid: &SurfaceGrid, l_max: usize, opts: SolveOptions) -> Result<Self> {
        if grid.n_theta() < l_max + 1 || grid.n_phi() < 2 * l_max + 1 {
            return Err(Error::IllPosed(format!(
                "grid with {} rings and {} azimuths cannot resolve degree {l_max}",
                grid.n_theta(),
                grid.n_phi()
            )));
        }
        if let Impedance::Nodal(v) = ctx.impedance() {
            if v.len() != grid.len() {
                return Err(Error::DimensionMismatch { expected: grid.len(), got: v.len() });
            }
        }
        let frame = cap.frame();
        let local_ctx = ctx.rotated(&frame);
        let in_f: Vec<bool> = grid.nodes().iter().map(|n| cap.contains_colatitude(n.theta)).collect();
        let has_interface = in_f.iter().any(|&b| b) && in_f.iter().any(|&b| !b);

        let ka = ctx.ka();
        let h = specfun::spherical_hankel_h1_array(l_max + 1, ka)?;
        let hankel_prime: Vec<Complex64> =
            specfun::derivatives_from_values(&h, ka).into_iter().map(|d| d * ctx.k()).collect();
        let hankel = h[..=l_max].to_vec();

        let mut problem = Self {
            ctx: ctx.clone(),
            local_ctx,
            frame,
            grid: grid.clone(),
            l_max,
            in_f,
            has_interface,
            hankel,
            hankel_prime,
            system: System::Blocks(Vec::new()),
            condition: 1.0,
            rank_deficiency: 0,
            opts,
        };
        let edge_h = match ctx.impedance() {
            Impedance::Uniform(h) if has_interface && ctx.variant() == BcVariant::MixedImpedance => Some(*h),
            _ => None,
        };
        match edge_h {
            Some(h) if opts.edge_adapted && !opts.force_dense => {
                let system = edge::EdgeSystem::new(ctx.k(), ctx.a(), h, cap.aperture(), l_max, opts.rank_rtol)?;
                problem.condition = system.condition();
                problem.rank_deficiency = system.rank_deficiency();
                problem.system = System::Edge { system, h };
            }
            _ if problem.ring_impedance().is_some() && !opts.force_dense => problem.factor_blocks()?,
            _ => problem.factor_dense()?,
        }
        Ok(problem)
    }

    /// Row multiplier `g(l)` at a node: the radial factor of the boundary operator.
    fn row_factor(&self, node: usize, l: usize, h: Complex64) -> Complex64 {
        if self.in_f[node] || self.ctx.variant() == BcVariant::MixedDirichlet {
            self.hankel[l]
        } else {
            self.hankel_prime[l] + h * self.hankel[l]
        }
    }

    /// Per-ring impedance when `h` is constant along every ring.
    fn ring_impedance(&self) -> Option<Vec<Complex64>> {
        let n_phi = self.grid.n_phi();
        (0..self.grid.n_theta())
            .map(|ring| {
                let first = self.ctx.impedance().at(ring * n_phi);
                (1..n_phi).all(|j| self.ctx.impedance().at(ring * n_phi + j) == first).then_some(first)
            })
            .collect()
    }

    fn factor_blocks(&mut self) -> Result<()> {
        let l_max = self.l_max;
        let n_phi = self.grid.n_phi();
        let h_ring = self.ring_impedance().expect("zonal impedance");
        let tables = self.grid.legendre_tables(l_max);
        let row_scale: Vec<f64> = self.grid.theta_weights().iter().map(|w| (2.0 * PI * w).sqrt()).collect();
        let rtol = self.opts.rank_rtol;
        let this = &*self;
        let results: Vec<Result<(Block, f64, usize)>> = (-(l_max as isize)..=l_max as isize)
            .into_par_iter()
            .map(|m| {
                let l0 = m.unsigned_abs();
                let mut a = DMatrix::from_fn(this.grid.n_theta(), l_max + 1 - l0, |ring, col| {
                    let l = l0 + col;
                    let g = this.row_factor(ring * n_phi, l, h_ring[ring]);
                    g * (row_scale[ring] * specfun::polar_factor(&tables[ring], l, m))
                });
                let scales = equilibrate(&mut a)?;
                let (svd, cutoff, cond, deficiency) = factor(a, rtol);
                Ok((Block { m, scales, svd, cutoff }, cond, deficiency))
            })
            .collect();
        let mut blocks = Vec::with_capacity(results.len());
        self.condition = 1.0;
        self.rank_deficiency = 0;
        for r in results {
            let (block, cond, deficiency) = r?;
            self.condition = self.condition.max(cond);
            self.rank_deficiency += deficiency;
            blocks.push(block);
        }
        self.system = System::Blocks(blocks);
        Ok(())
    }

    fn factor_dense(&mut self) -> Result<()> {
        let l_max = self.l_max;
        let nodes = self.grid.nodes();
        let tables = self.grid.legendre_tables(l_max);
        let mut a = DMatrix::from_fn(nodes.len(), HarmonicIndex::count(l_max), |row, col| {
            let node = &nodes[row];
            let idx = HarmonicIndex::from_flat(col);
            let y = Complex64::from_polar(
                specfun::polar_factor(&tables[node.ring], idx.l, idx.m),
                idx.m as f64 * node.phi,
            );
            self.row_factor(row, idx.l, self.ctx.impedance().at(row)) * y * node.weight.sqrt()
        });
        let scales = equilibrate(&mut a)?;
        let (svd, cutoff, cond, deficiency) = factor(a, self.opts.rank_rtol);
        self.condition = cond;
        self.rank_deficiency = deficiency;
        self.system = System::Dense { scales, svd, cutoff };
        Ok(())
    }

    pub fn context(&self) -> &WaveContext {
        &self.ctx
    }

    pub fn grid(&self) -> &SurfaceGrid {
        &self.grid
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn frame(&self) -> &Rotation3<f64> {
        &self.frame
    }

    /// `true` at grid nodes that belong to `F`.
    pub fn control_mask(&self) -> &[bool] {
        &self.in_f
    }

    pub fn has_interface(&self) -> bool {
        self.has_interface
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.system, System::Dense { .. })
    }

    pub fn formulation(&self) -> Formulation {
        match self.system {
            System::Edge { .. } => Formulation::EdgeGalerkin,
            _ => Formulation::Collocation,
        }
    }

    /// Radial trial functions per azimuthal order and the degree of the Gram
    /// sums, for the edge-adapted formulation.
    pub fn edge_resolution(&self) -> Option<(usize, usize)> {
        match &self.system {
            System::Edge { system, .. } => Some((system.basis_size(), system.sum_degree())),
            _ => None,
        }
    }

    pub fn resid_tol(&self) -> f64 {
        self.opts.resid_tol.unwrap_or(if self.has_interface { INTERFACE_RESID_TOL } else { SMOOTH_RESID_TOL })
    }

    /// Boundary data at every node: `w − u₀` on `F`, the homogeneous
    /// condition applied to `−u₀` on `F′`.
    fn rhs(&self, incidence: Incidence, w: &[Complex64]) -> Vec<Complex64> {
        let n = self.grid.len();
        let (u0, du0) = match incidence {
            Incidence::PlaneWave => plane_wave_trace(&self.local_ctx, &self.grid),
            Incidence::Absent => (vec![ZERO; n], vec![ZERO; n]),
        };
        (0..n)
            .map(|i| {
                if self.in_f[i] {
                    w[i] - u0[i]
                } else {
                    match self.ctx.variant() {
                        BcVariant::MixedImpedance => -(du0[i] + self.ctx.impedance().at(i) * u0[i]),
                        BcVariant::MixedDirichlet => -u0[i],
                    }
                }
            })
            .collect()
    }

    /// Boundary operator applied to coefficients, at every node.
    fn apply(&self, c: &HarmonicCoeffs) -> Vec<Complex64> {
        let scaled = |f: &[Complex64]| {
            let v = c.iter().map(|(idx, v)| v * f[idx.l]).collect();
            HarmonicCoeffs::from_vec(self.l_max, v).expect("same degree")
        };
        let trace = synthesize(&self.grid, &scaled(&self.hankel));
        let needs_derivative =
            self.ctx.variant() == BcVariant::MixedImpedance && self.in_f.iter().any(|&f| !f);
        if !needs_derivative {
            return trace;
        }
        let normal = synthesize(&self.grid, &scaled(&self.hankel_prime));
        (0..self.grid.len())
            .map(|i| if self.in_f[i] { trace[i] } else { normal[i] + self.ctx.impedance().at(i) * trace[i] })
            .collect()
    }

    fn solve_coefficients(&self, b: &[Complex64]) -> Result<HarmonicCoeffs> {
        let mut c = HarmonicCoeffs::zeros(self.l_max);
        match &self.system {
            System::Blocks(blocks) => {
                let rings = ring_transform(&self.grid, b, self.l_max);
                let weights = self.grid.theta_weights();
                for block in blocks {
                    let col = (block.m + self.l_max as isize) as usize;
                    let rhs = DVector::from_fn(self.grid.n_theta(), |ring, _| {
                        rings[ring][col] * ((2.0 * PI * weights[ring]).sqrt() / (2.0 * PI))
                    });
                    let x = block.svd.solve(&rhs, block.cutoff).map_err(|e| Error::IllPosed(e.into()))?;
                    let l0 = block.m.unsigned_abs();
                    for (i, (v, s)) in x.iter().zip(&block.scales).enumerate() {
                        c[HarmonicIndex { l: l0 + i, m: block.m }] = v / s;
                    }
                }
            }
            System::Edge { .. } => unreachable!("the edge system solves in coefficient space"),
            System::Dense { scales, svd, cutoff } => {
                let rhs = DVector::from_iterator(
                    b.len(),
                    b.iter().zip(self.grid.nodes()).map(|(v, n)| v * n.weight.sqrt()),
                );
                let x = svd.solve(&rhs, *cutoff).map_err(|e| Error::IllPosed(e.into()))?;
                for (i, (v, s)) in x.iter().zip(scales).enumerate() {
                    c.as_mut_slice()[i] = v / s;
                }
            }
        }
        Ok(c)
    }

    /// Solves with control data `w` given at every grid node; entries at
    /// nodes outside `F` are ignored.
    pub fn solve(&self, incidence: Incidence, w: &[Complex64]) -> Result<(RadiatingField, SolveReport)> {
        if w.len() != self.grid.len() {
            return Err(Error::DimensionMismatch { expected: self.grid.len(), got: w.len() });
        }
        let (c, res, norm) = match &self.system {
            System::Edge { system, h } => self.solve_edge(system, *h, incidence, w)?,
            _ => {
                let b = self.rhs(incidence, w);
                let c = self.solve_coefficients(&b)?;
                let fitted = self.apply(&c);
                let (mut res, mut norm) = (0.0, 0.0);
                for ((f, b), n) in fitted.iter().zip(&b).zip(self.grid.nodes()) {
                    res += n.weight * (f - b).norm_sqr();
                    norm += n.weight * b.norm_sqr();
                }
                (c, res, norm)
            }
        };
        let relative_residual = if norm > 0.0 { (res / norm).sqrt() } else { 0.0 };
        let field = RadiatingField::new(self.ctx.k(), self.ctx.a(), c, self.frame);
        let report = SolveReport {
            relative_residual,
            condition_estimate: self.condition,
            truncation_tail: field.truncation_tail(),
            rank_deficiency: self.rank_deficiency,
            formulation: self.formulation(),
        };
        let tolerance = self.resid_tol();
        if !(relative_residual <= tolerance) {
            return Err(Error::NonConvergence { report, tolerance });
        }
        Ok((field, report))
    }

    /// Edge-adapted solve: the impedance-sphere response plus the field of
    /// the Robin trace on `F`.
    fn solve_edge(
        &self,
        system: &edge::EdgeSystem,
        h: Complex64,
        incidence: Incidence,
        w: &[Complex64],
    ) -> Result<(HarmonicCoeffs, f64, f64)> {
        let l_max = self.l_max;
        let masked: Vec<Complex64> = w.iter().zip(&self.in_f).map(|(&v, &f)| if f { v } else { ZERO }).collect();
        let control =
            system.control_moments(self.grid.thetas(), self.grid.theta_weights(), &ring_transform(&self.grid, &masked, l_max));
        let mut data = HarmonicCoeffs::zeros(l_max);
        let robin: Vec<Complex64> = (0..=l_max).map(|l| self.hankel_prime[l] + h * self.hankel[l]).collect();
        let mut c = HarmonicCoeffs::zeros(l_max);
        if incidence == Incidence::PlaneWave {
            let (theta, phi) = specfun::angles_of(&self.local_ctx.alpha());
            let ys = specfun::spherical_harmonics_all(l_max, theta, phi);
            for idx in HarmonicIndex::iter(l_max) {
                let l = idx.l;
                let incoming = specfun::i_pow(l) * ys[idx.flat()].conj() * (4.0 * PI);
                let j = self.hankel[l].re;
                let ratio = -(self.hankel_prime[l].re + h * j) / robin[l];
                c[idx] = ratio * incoming;
                data[idx] -= incoming * (ratio * self.hankel[l] + j);
            }
        }
        let (g, res, norm) = system.solve(&data, &control)?;
        for (idx, v) in g.iter() {
            c[idx] += v / robin[idx.l];
        }
        Ok((c, res, norm))
    }

    /// Zero control data sized for this grid.
    pub fn zero_control(&self) -> Vec<Complex64> {
        vec![ZERO; self.grid.len()]
    }
}

/// One-shot solve for the plane-wave problem with control `w_on_f`.
pub fn solve_scatter(
    ctx: &WaveContext,
    cap: &CapRegion,
    w_on_f: &[Complex64],
    grid: &SurfaceGrid,
    l_max: usize,
) -> Result<(RadiatingField, SolveReport)> {
    ScatterProblem::new(ctx, cap, grid, l_max, SolveOptions::default())?.solve(Incidence::PlaneWave, w_on_f)
}
