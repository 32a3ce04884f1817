//! Boundary controls on the cap `F` and their synthesis.
//!
//! A control is `w = Σ g_j b_j` over a smooth bump basis supported in `F`.
//! The controlled far field is affine in `g`: `A(w) = A₀ + L g`, where `A₀`
//! is the uncontrolled pattern and column `j` of `L` is the far field of the
//! problem driven by `b_j` alone (no incident wave). Both come from the same
//! factored [`ScatterProblem`], so the split is exact up to roundoff.

use nalgebra::{DMatrix, DVector, Rotation3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::farfield::{far_field, sigma, FarFieldPattern};
use crate::solver::{Incidence, ScatterProblem, SolveReport};
use crate::sphere_grid::{CapRegion, HarmonicCoeffs, SurfaceGrid};

const TINY: f64 = 1e-300;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Relative singular value cutoff for unregularized solves.
pub const RANK_RTOL: f64 = 1e-12;

/// `exp(1 − 1/(1 − t²))` on `[0, 1)`, zero from `t = 1` on.
pub fn bump(t: f64) -> f64 {
    let q = 1.0 - t * t;
    if q <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / q).exp()
    }
}

/// `sup |η'|` on `[0, 1)`, by a fine scan.
fn bump_slope_bound() -> f64 {
    (1..100_000)
        .map(|i| {
            let t = i as f64 / 100_000.0;
            let q = 1.0 - t * t;
            bump(t) * 2.0 * t / (q * q)
        })
        .fold(0.0, f64::max)
}

/// `T_0(x) ..= T_{n-1}(x)`.
fn chebyshev(n: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    for p in 0..n {
        out.push(match p {
            0 => 1.0,
            1 => x,
            _ => 2.0 * x * out[p - 1] - out[p - 2],
        });
    }
}

/// `b_{p,m}(θ, φ) = η(t) t^{|m|} T_p(2t² − 1) e^{imφ}`, `t = θ/aperture`,
/// in the cap frame. Functions are ordered by `m` from `−M` to `M`, then by
/// `p`, so `(P, M)` bases are nested.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBasis {
    cap: CapRegion,
    profiles: usize,
    max_order: usize,
}

impl ControlBasis {
    pub fn new(cap: CapRegion, profiles: usize, max_order: usize) -> Self {
        Self { cap, profiles, max_order }
    }

    pub fn cap(&self) -> &CapRegion {
        &self.cap
    }

    pub fn profiles(&self) -> usize {
        self.profiles
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn len(&self) -> usize {
        self.profiles * (2 * self.max_order + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(p, m)` of function `j`.
    pub fn label(&self, j: usize) -> (usize, isize) {
        (j % self.profiles, (j / self.profiles) as isize - self.max_order as isize)
    }

    /// Radial profile `η(t) t^{|m|} T_p(2t² − 1)` of every `(p, |m|)` at `t`.
    fn profiles_at(&self, t: f64, cheb: &mut Vec<f64>) -> Vec<f64> {
        let eta = bump(t);
        chebyshev(self.profiles, 2.0 * t * t - 1.0, cheb);
        (0..=self.max_order)
            .flat_map(|m| {
                let env = eta * t.powi(m as i32);
                cheb.iter().map(move |c| env * c)
            })
            .collect()
    }

    /// All basis functions at a cap-frame point.
    pub fn values_at(&self, theta: f64, phi: f64) -> Vec<Complex64> {
        let t = theta / self.cap.aperture();
        let mut cheb = Vec::new();
        let radial = self.profiles_at(t, &mut cheb);
        (0..self.len())
            .map(|j| {
                let (p, m) = self.label(j);
                Complex64::from_polar(radial[m.unsigned_abs() * self.profiles + p], m as f64 * phi)
            })
            .collect()
    }

    /// Node values, `samples[j][node]`; zero outside `F`.
    pub fn sample(&self, grid: &SurfaceGrid) -> Vec<Vec<Complex64>> {
        let mut out = vec![vec![ZERO; grid.len()]; self.len()];
        let aperture = self.cap.aperture();
        let mut cheb = Vec::new();
        for (i, node) in grid.nodes().iter().enumerate() {
            if !self.cap.contains_colatitude(node.theta) {
                continue;
            }
            let radial = self.profiles_at(node.theta / aperture, &mut cheb);
            for (j, col) in out.iter_mut().enumerate() {
                let (p, m) = self.label(j);
                col[i] = Complex64::from_polar(radial[m.unsigned_abs() * self.profiles + p], m as f64 * node.phi);
            }
        }
        out
    }

    /// `⟨b_i, b_j⟩_{L²(F)}` by grid quadrature.
    pub fn gram(&self, grid: &SurfaceGrid) -> DMatrix<Complex64> {
        let samples = self.sample(grid);
        let n = self.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: Complex64 = grid
                    .nodes()
                    .iter()
                    .zip(samples[i].iter().zip(&samples[j]))
                    .map(|(node, (a, b))| a.conj() * b * node.weight)
                    .sum();
                g[(i, j)] = v;
                g[(j, i)] = v.conj();
            }
        }
        g
    }

    /// Bound on `|∂_θ b_j|`.
    pub fn slope_bound(&self, j: usize) -> f64 {
        let (p, m) = self.label(j);
        let (p, m) = (p as f64, m.unsigned_abs() as f64);
        (bump_slope_bound() + m + 4.0 * p * p) / self.cap.aperture()
    }
}

/// `w = Σ g_j b_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlFunction {
    basis: ControlBasis,
    g: DVector<Complex64>,
}

impl ControlFunction {
    pub fn new(basis: ControlBasis, g: DVector<Complex64>) -> Result<Self> {
        if g.len() != basis.len() {
            return Err(Error::DimensionMismatch { expected: basis.len(), got: g.len() });
        }
        Ok(Self { basis, g })
    }

    pub fn zero(basis: ControlBasis) -> Self {
        let n = basis.len();
        Self { basis, g: DVector::zeros(n) }
    }

    pub fn basis(&self) -> &ControlBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &DVector<Complex64> {
        &self.g
    }

    /// `w` at a cap-frame point.
    pub fn value_at(&self, theta: f64, phi: f64) -> Complex64 {
        self.basis.values_at(theta, phi).iter().zip(self.g.iter()).map(|(b, g)| b * g).sum()
    }

    /// `w` at every grid node.
    pub fn on_grid(&self, grid: &SurfaceGrid) -> Vec<Complex64> {
        let mut out = vec![ZERO; grid.len()];
        for (col, g) in self.basis.sample(grid).iter().zip(self.g.iter()) {
            for (o, b) in out.iter_mut().zip(col) {
                *o += b * g;
            }
        }
        out
    }

    /// `‖w‖_{L²(F)}` through the Gram matrix.
    pub fn l2_norm(&self, gram: &DMatrix<Complex64>) -> f64 {
        (self.g.adjoint() * gram * &self.g)[(0, 0)].re.max(0.0).sqrt()
    }

    pub fn l1_coefficients(&self) -> f64 {
        self.g.iter().map(|v| v.norm()).sum()
    }
}

/// The map `g ↦ L g` from control coefficients to far-field coefficients.
#[derive(Debug, Clone)]
pub struct ControlOperator {
    basis: ControlBasis,
    matrix: DMatrix<Complex64>,
    gram: DMatrix<Complex64>,
    reports: Vec<SolveReport>,
    k: f64,
    l_max: usize,
    frame: Rotation3<f64>,
}

impl ControlOperator {
    pub fn basis(&self) -> &ControlBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn gram(&self) -> &DMatrix<Complex64> {
        &self.gram
    }

    /// One report per column.
    pub fn reports(&self) -> &[SolveReport] {
        &self.reports
    }

    /// `L g` as a pattern.
    pub fn apply(&self, g: &DVector<Complex64>) -> Result<FarFieldPattern> {
        if g.len() != self.matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: self.matrix.ncols(), got: g.len() });
        }
        let v = if g.is_empty() { DVector::zeros(self.matrix.nrows()) } else { &self.matrix * g };
        let coeffs = HarmonicCoeffs::from_vec(self.l_max, v.iter().copied().collect())?;
        Ok(FarFieldPattern::with_frame(self.k, coeffs, self.frame))
    }

    /// `A₀ + L g`.
    pub fn controlled(&self, a0: &FarFieldPattern, g: &DVector<Complex64>) -> Result<FarFieldPattern> {
        Ok(a0 + &self.apply(g)?)
    }
}

fn check_basis(problem: &ScatterProblem, basis: &ControlBasis) -> Result<()> {
    let mismatch = (basis.cap().frame().matrix() - problem.frame().matrix()).norm();
    if mismatch > 1e-12 {
        return Err(Error::invalid("control basis is defined on a different cap than the problem"));
    }
    let outside = problem
        .grid()
        .nodes()
        .iter()
        .zip(problem.control_mask())
        .any(|(n, &f)| basis.cap().contains_colatitude(n.theta) != f);
    if outside {
        return Err(Error::invalid("control basis cap does not match the problem's control set"));
    }
    Ok(())
}

/// Uncontrolled far field `A₀` (plane wave, `w = 0`).
pub fn compute_a0(problem: &ScatterProblem) -> Result<(FarFieldPattern, SolveReport)> {
    let (v, report) = problem.solve(Incidence::PlaneWave, &problem.zero_control())?;
    Ok((far_field(&v), report))
}

/// Column `j` is the far field of the problem driven by `b_j` on `F` alone.
pub fn assemble_control_operator(problem: &ScatterProblem, basis: &ControlBasis) -> Result<ControlOperator> {
    check_basis(problem, basis)?;
    let l_max = problem.l_max();
    let samples = basis.sample(problem.grid());
    let columns: Vec<Result<(FarFieldPattern, SolveReport)>> = samples
        .par_iter()
        .enumerate()
        .map(|(index, w)| {
            problem
                .solve(Incidence::Absent, w)
                .map(|(v, r)| (far_field(&v), r))
                .map_err(|e| Error::ControlColumn { index, source: Box::new(e) })
        })
        .collect();
    let rows = crate::specfun::HarmonicIndex::count(l_max);
    let mut matrix = DMatrix::zeros(rows, basis.len());
    let mut reports = Vec::with_capacity(basis.len());
    for (j, col) in columns.into_iter().enumerate() {
        let (p, r) = col?;
        matrix.column_mut(j).copy_from_slice(p.as_slice());
        reports.push(r);
    }
    Ok(ControlOperator {
        basis: basis.clone(),
        matrix,
        gram: basis.gram(problem.grid()),
        reports,
        k: problem.context().k(),
        l_max,
        frame: *problem.frame(),
    })
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub w: ControlFunction,
    pub sigma_before: f64,
    pub sigma_after: f64,
    pub reduction_db: f64,
    /// `‖w‖_{L²(F)}`.
    pub control_norm: f64,
    pub lambda_used: f64,
    /// `σ_after + λ² ‖w‖²`.
    pub objective_value: f64,
    /// Singular values were discarded (λ = 0 with a rank-deficient system) or
    /// the Gram matrix could not be factored and plain `‖g‖` was used.
    pub ill_conditioned: bool,
}

impl SynthesisResult {
    pub fn ratio(&self) -> f64 {
        self.sigma_after / self.sigma_before.max(TINY)
    }
}

pub fn reduction_db(before: f64, after: f64) -> f64 {
    10.0 * (before / after.max(TINY)).log10()
}

/// Minimizes `‖A₀ + L g‖² + λ² ‖Σ g_j b_j‖²_{L²(F)}`.
pub fn synthesize(a0: &FarFieldPattern, op: &ControlOperator, lambda: f64) -> Result<SynthesisResult> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("regularization {lambda} must be finite and >= 0")));
    }
    if a0.as_slice().len() != op.matrix.nrows() {
        return Err(Error::DimensionMismatch { expected: op.matrix.nrows(), got: a0.as_slice().len() });
    }
    let n = op.basis.len();
    let sigma_before = sigma(a0);
    let mut ill_conditioned = false;

    // With W = R Rᴴ, y = Rᴴ g turns the weighted penalty into ‖y‖².
    let (m, back) = match op.gram.clone().cholesky() {
        Some(chol) if n > 0 => {
            let r_adj = chol.l().adjoint();
            let inv = r_adj.clone().try_inverse().ok_or_else(|| Error::IllPosed("singular control Gram".into()))?;
            (&op.matrix * &inv, inv)
        }
        _ => {
            ill_conditioned = n > 0;
            (op.matrix.clone(), DMatrix::identity(n, n))
        }
    };

    let mut g = DVector::zeros(n);
    if n > 0 && sigma_before > 0.0 {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.as_ref().expect("u"), svd.v_t.as_ref().expect("v_t"));
        let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let a = DVector::from_column_slice(a0.as_slice());
        let proj = u.adjoint() * &a;
        let mut y = DVector::zeros(n);
        for (i, &s) in svd.singular_values.iter().enumerate() {
            let keep = if lambda == 0.0 { s > RANK_RTOL * s_max } else { s > 0.0 };
            if !keep {
                ill_conditioned |= lambda == 0.0;
                continue;
            }
            let filter = s / (s * s + lambda * lambda);
            y -= v_t.row(i).adjoint() * (proj[i] * filter);
        }
        g = back * y;
    }

    let mut w = ControlFunction::new(op.basis.clone(), g)?;
    let mut after = sigma(&op.controlled(a0, w.coefficients())?);
    let mut norm = w.l2_norm(&op.gram);
    let mut objective = after + lambda * lambda * norm * norm;
    // The zero control is always admissible; keep it if roundoff made the
    // minimizer worse.
    if objective > sigma_before {
        w = ControlFunction::zero(op.basis.clone());
        after = sigma_before;
        norm = 0.0;
        objective = sigma_before;
    }
    Ok(SynthesisResult {
        w,
        sigma_before,
        sigma_after: after,
        reduction_db: reduction_db(sigma_before, after),
        control_norm: norm,
        lambda_used: lambda,
        objective_value: objective,
        ill_conditioned,
    })
}

/// Synthesizes for every `λ` and picks the largest whose `σ_after` stays
/// within 10% of the best unregularized value (λ = 0 is always tried).
pub fn select_lambda(
    a0: &FarFieldPattern,
    op: &ControlOperator,
    lambdas: &[f64],
) -> Result<(SynthesisResult, Vec<SynthesisResult>)> {
    let mut all: Vec<SynthesisResult> = lambdas.iter().map(|&l| synthesize(a0, op, l)).collect::<Result<_>>()?;
    let reference = match all.iter().find(|r| r.lambda_used == 0.0) {
        Some(r) => r.sigma_after,
        None => synthesize(a0, op, 0.0)?.sigma_after,
    };
    let threshold = 1.1 * reference;
    let chosen = all
        .iter()
        .filter(|r| r.sigma_after <= threshold)
        .max_by(|a, b| a.lambda_used.total_cmp(&b.lambda_used))
        .or_else(|| all.iter().min_by(|a, b| a.sigma_after.total_cmp(&b.sigma_after)))
        .cloned();
    match chosen {
        Some(c) => Ok((c, std::mem::take(&mut all))),
        None => Ok((synthesize(a0, op, 0.0)?, all)),
    }
}

/// `min_g ‖f − L g‖ / ‖f‖` (zero for `f = 0`).
pub fn best_approximation(target: &FarFieldPattern, op: &ControlOperator) -> Result<f64> {
    if target.as_slice().len() != op.matrix.nrows() {
        return Err(Error::DimensionMismatch { expected: op.matrix.nrows(), got: target.as_slice().len() });
    }
    let f = DVector::from_column_slice(target.as_slice());
    let norm = f.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    if op.basis.is_empty() {
        return Ok(1.0);
    }
    let svd = op.matrix.clone().svd(true, false);
    let u = svd.u.as_ref().expect("u");
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut captured = DVector::zeros(f.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > RANK_RTOL * s_max {
            let ui = u.column(i);
            captured += ui * ui.dotc(&f);
        }
    }
    Ok((f - captured).norm() / norm)
}

/// Best-approximation residual of `target` for each nested basis `(P, M)`.
pub fn density_experiment(
    problem: &ScatterProblem,
    cap: &CapRegion,
    target: &FarFieldPattern,
    basis_sizes: &[(usize, usize)],
) -> Result<Vec<f64>> {
    basis_sizes
        .iter()
        .map(|&(p, m)| {
            let op = assemble_control_operator(problem, &ControlBasis::new(*cap, p, m))?;
            best_approximation(target, &op)
        })
        .collect()
}

/// Seeded pattern with independent standard complex Gaussian coefficients for
/// `l <= band`, zero above.
pub fn random_band_limited_target(
    seed: u64,
    band: usize,
    l_max: usize,
    k: f64,
    frame: Rotation3<f64>,
) -> FarFieldPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = HarmonicCoeffs::zeros(l_max);
    for (i, c) in coeffs.as_mut_slice().iter_mut().enumerate() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        if crate::specfun::HarmonicIndex::from_flat(i).l <= band {
            *c = Complex64::new(re, im) / 2f64.sqrt();
        }
    }
    FarFieldPattern::with_frame(k, coeffs, frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::incident::{BcVariant, Impedance, WaveContext};
    use crate::solver::SolveOptions;
    use crate::sphere_grid::build_cap_grid;
    use nalgebra::Vector3;

    fn setup(l_max: usize) -> (ScatterProblem, CapRegion) {
        let ctx = WaveContext::new(
            2.0,
            1.0,
            Vector3::new(0.2, 0.1, 1.0),
            Impedance::Uniform(Complex64::new(1.0, 0.0)),
            BcVariant::MixedImpedance,
        )
        .unwrap();
        let aperture = 30f64.to_radians();
        let cap = CapRegion::north(aperture).unwrap();
        let grid = build_cap_grid(l_max, aperture).unwrap();
        (ScatterProblem::new(&ctx, &cap, &grid, l_max, SolveOptions::default()).unwrap(), cap)
    }

    #[test]
    fn basis_is_supported_in_cap_and_flat_at_edge() {
        let cap = CapRegion::north(0.6).unwrap();
        let basis = ControlBasis::new(cap, 4, 3);
        let grid = build_cap_grid(20, 0.6).unwrap();
        let samples = basis.sample(&grid);
        for (i, node) in grid.nodes().iter().enumerate() {
            let t = node.theta / 0.6;
            for col in &samples {
                if !cap.contains_colatitude(node.theta) {
                    assert_eq!(col[i], ZERO);
                } else if t > 0.999 {
                    assert!(col[i].norm() <= 1e-12);
                }
            }
        }
        for v in basis.values_at(0.6 * 0.9995, 1.0) {
            assert!(v.norm() <= 1e-12);
        }
    }

    #[test]
    fn gram_is_positive_definite() {
        let cap = CapRegion::north(0.5).unwrap();
        let basis = ControlBasis::new(cap, 6, 4);
        let gram = basis.gram(&build_cap_grid(20, 0.5).unwrap());
        let s = gram.svd(false, false).singular_values;
        let cond = s.max() / s.min();
        assert!(cond.is_finite() && cond < 1e10, "{cond}");
    }

    #[test]
    fn labels_are_nested() {
        let cap = CapRegion::north(0.5).unwrap();
        let small = ControlBasis::new(cap, 2, 1);
        let big = ControlBasis::new(cap, 4, 2);
        let labels: Vec<_> = (0..big.len()).map(|j| big.label(j)).collect();
        assert!((0..small.len()).all(|j| labels.contains(&small.label(j))));
        assert_eq!(big.len(), 20);
    }

    #[test]
    fn empty_basis_gives_empty_operator() {
        let (problem, cap) = setup(10);
        let op = assemble_control_operator(&problem, &ControlBasis::new(cap, 0, 3)).unwrap();
        assert_eq!(op.matrix().ncols(), 0);
        let (a0, _) = compute_a0(&problem).unwrap();
        let r = synthesize(&a0, &op, 0.0).unwrap();
        assert_eq!(r.sigma_after, r.sigma_before);
    }

    #[test]
    fn columns_match_direct_solves() {
        let (problem, cap) = setup(12);
        let basis = ControlBasis::new(cap, 2, 1);
        let op = assemble_control_operator(&problem, &basis).unwrap();
        let samples = basis.sample(problem.grid());
        for (j, w) in samples.iter().enumerate() {
            let doubled: Vec<Complex64> = w.iter().map(|v| v * 2.0).collect();
            let (v, _) = problem.solve(Incidence::Absent, &doubled).unwrap();
            let p = far_field(&v);
            let col = op.matrix().column(j);
            let err: f64 = p.as_slice().iter().zip(col.iter()).map(|(a, b)| (a - b * 2.0).norm_sqr()).sum();
            assert!(err.sqrt() <= 1e-12 * p.norm());
        }
    }

    #[test]
    fn mismatched_cap_is_rejected() {
        let (problem, _) = setup(10);
        let other = ControlBasis::new(CapRegion::north(0.7).unwrap(), 2, 1);
        assert!(assemble_control_operator(&problem, &other).is_err());
    }

    #[test]
    fn synthesis_trivial_cases() {
        let (problem, cap) = setup(10);
        let op = assemble_control_operator(&problem, &ControlBasis::new(cap, 2, 1)).unwrap();
        let zero = FarFieldPattern::zeros(2.0, 10, *problem.frame());
        let r = synthesize(&zero, &op, 1e-3).unwrap();
        assert_eq!(r.sigma_after, 0.0);
        assert!(r.w.coefficients().iter().all(|g| *g == ZERO));

        let (a0, _) = compute_a0(&problem).unwrap();
        let dead = ControlOperator { matrix: DMatrix::zeros(op.matrix.nrows(), op.matrix.ncols()), ..op.clone() };
        let r = synthesize(&a0, &dead, 0.0).unwrap();
        assert!(r.w.coefficients().iter().all(|g| *g == ZERO));
        assert_eq!(r.sigma_after, r.sigma_before);
        assert!(synthesize(&a0, &op, -1.0).is_err());
    }

    #[test]
    fn synthesis_never_increases_sigma() {
        let (problem, cap) = setup(12);
        let op = assemble_control_operator(&problem, &ControlBasis::new(cap, 3, 2)).unwrap();
        let (a0, _) = compute_a0(&problem).unwrap();
        let mut last_norm = f64::INFINITY;
        for lambda in [0.0, 1e-8, 1e-4, 1e-2, 1.0] {
            let r = synthesize(&a0, &op, lambda).unwrap();
            assert!(r.sigma_after <= r.sigma_before);
            assert!((r.objective_value - r.sigma_after - lambda * lambda * r.control_norm.powi(2)).abs() <= 1e-12 * r.sigma_before);
            assert!((r.reduction_db - reduction_db(r.sigma_before, r.sigma_after)).abs() < 1e-12);
            assert!(r.control_norm <= last_norm * (1.0 + 1e-9));
            last_norm = r.control_norm;
        }
    }

    #[test]
    fn lambda_selection_respects_discrepancy_bound() {
        let (problem, cap) = setup(12);
        let op = assemble_control_operator(&problem, &ControlBasis::new(cap, 3, 2)).unwrap();
        let (a0, _) = compute_a0(&problem).unwrap();
        let (chosen, all) = select_lambda(&a0, &op, &[1e-8, 1e-4, 1e-2, 1.0]).unwrap();
        assert_eq!(all.len(), 4);
        let reference = synthesize(&a0, &op, 0.0).unwrap().sigma_after;
        assert!(chosen.sigma_after <= 1.1 * reference);
        for r in &all {
            if r.lambda_used > chosen.lambda_used {
                assert!(r.sigma_after > 1.1 * reference);
            }
        }
    }

    #[test]
    fn density_trivial_targets() {
        let (problem, cap) = setup(10);
        let sizes = [(1, 0), (2, 1), (3, 1)];
        let zero = FarFieldPattern::zeros(2.0, 10, *problem.frame());
        assert_eq!(density_experiment(&problem, &cap, &zero, &sizes).unwrap(), vec![0.0; 3]);

        let op = assemble_control_operator(&problem, &ControlBasis::new(cap, 1, 0)).unwrap();
        let in_range = op.apply(&DVector::from_element(1, Complex64::new(1.0, 0.0))).unwrap();
        for r in density_experiment(&problem, &cap, &in_range, &sizes).unwrap() {
            assert!(r < 1e-10, "{r}");
        }
    }

    #[test]
    fn random_target_is_band_limited_and_seeded() {
        let a = random_band_limited_target(3, 4, 8, 1.0, Rotation3::identity());
        let b = random_band_limited_target(3, 4, 8, 1.0, Rotation3::identity());
        assert_eq!(a, b);
        for (idx, c) in a.coeffs().iter() {
            assert_eq!(idx.l > 4, c == ZERO);
        }
        assert_ne!(a, random_band_limited_target(4, 4, 8, 1.0, Rotation3::identity()));
    }

    #[test]
    fn synthesized_control_is_smooth() {
        let (problem, cap) = setup(12);
        let basis = ControlBasis::new(cap, 4, 2);
        let op = assemble_control_operator(&problem, &basis).unwrap();
        let (a0, _) = compute_a0(&problem).unwrap();
        let w = synthesize(&a0, &op, 1e-4).unwrap().w;
        let bound = (0..basis.len()).map(|j| basis.slope_bound(j)).fold(0.0, f64::max) * w.l1_coefficients();
        let n = 10 * 2 * (problem.l_max() + 1);
        let h = cap.aperture() / n as f64;
        let values: Vec<Complex64> = (0..=n).map(|i| w.value_at(i as f64 * h, 0.7)).collect();
        for pair in values.windows(2) {
            assert!((pair[1] - pair[0]).norm() / h <= bound);
        }
    }
}
