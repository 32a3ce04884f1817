//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Lists are separated by
//! commas or whitespace. Angles are in degrees here and converted to radians
//! when the problem is built. Unknown keys are errors.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::incident::{BcVariant, Impedance, WaveContext};
use crate::solver::SolveOptions;
use crate::sphere_grid::{build_grid_for_cap, CapRegion, SurfaceGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Validate,
    Scatter,
    Cloak,
    Sweep,
    Density,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Validate => "validate",
            Mode::Scatter => "scatter",
            Mode::Cloak => "cloak",
            Mode::Sweep => "sweep",
            Mode::Density => "density",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "validate" => Ok(Mode::Validate),
            "scatter" => Ok(Mode::Scatter),
            "cloak" => Ok(Mode::Cloak),
            "sweep" => Ok(Mode::Sweep),
            "density" => Ok(Mode::Density),
            _ => Err(format!("unknown mode '{s}' (validate|scatter|cloak|sweep|density)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LMax {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub k: f64,
    pub a: f64,
    /// Unit incidence direction.
    pub alpha: [f64; 3],
    pub h_real: f64,
    pub h_imag: f64,
    pub bc_variant: BcVariant,
    /// Unit cap axis.
    pub cap_axis: [f64; 3],
    pub cap_aperture_deg: f64,
    pub l_max: LMax,
    pub basis_p: usize,
    pub basis_m: usize,
    pub lambda_list: Vec<f64>,
    pub target_seed: u64,
    pub target_band: usize,
    /// Nested `(P, M)` bases for density mode.
    pub density_sizes: Vec<(usize, usize)>,
    /// Wavenumbers for sweep mode.
    pub sweep_k: Vec<f64>,
    pub n_theta: usize,
    pub n_phi: usize,
    /// `None` uses the solver default.
    pub resid_tol: Option<f64>,
    /// When off, `timing_seconds` is written as null so that summaries are
    /// byte-identical across runs.
    pub record_timing: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Validate,
            k: 2.0,
            a: 1.0,
            alpha: [0.0, 0.0, 1.0],
            h_real: 1.0,
            h_imag: 0.0,
            bc_variant: BcVariant::MixedImpedance,
            cap_axis: [0.0, 0.0, 1.0],
            cap_aperture_deg: 30.0,
            l_max: LMax::Auto,
            basis_p: 6,
            basis_m: 4,
            lambda_list: vec![1e-6],
            target_seed: 7,
            target_band: 6,
            density_sizes: vec![(2, 1), (4, 2), (6, 4), (8, 6)],
            sweep_k: vec![0.5, 1.0, 2.0, 3.0],
            n_theta: 36,
            n_phi: 72,
            resid_tol: None,
            record_timing: true,
            output_dir: PathBuf::from("out"),
        }
    }
}

pub const KEYS: [&str; 22] = [
    "mode",
    "k",
    "a",
    "alpha",
    "h_real",
    "h_imag",
    "bc_variant",
    "cap_axis",
    "cap_aperture_deg",
    "L_max",
    "basis_P",
    "basis_M",
    "lambda_list",
    "target_seed",
    "target_band",
    "density_sizes",
    "sweep_k",
    "n_theta",
    "n_phi",
    "resid_tol",
    "record_timing",
    "output_dir",
];

/// A built problem: context, cap, grid and truncation for one wavenumber.
#[derive(Debug, Clone)]
pub struct Setup {
    pub ctx: WaveContext,
    pub cap: CapRegion,
    pub grid: SurfaceGrid,
    pub l_max: usize,
    pub opts: SolveOptions,
}

impl RunConfig {
    /// Defaults, then the file (if any), then `--key value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for (key, value) in overrides {
            cfg.set(key, value).map_err(|message| Error::Config { location: format!("--{key}"), message })?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, "<input>")?;
        cfg.check()?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let location = format!("{source}:{}", i + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config { location, message: format!("expected 'key = value', got '{line}'") });
            };
            let key = key.trim();
            if let Some(first) = seen.insert(key.to_string(), i + 1) {
                return Err(Error::Config { location, message: format!("duplicate key '{key}' (first on line {first})") });
            }
            self.set(key, value.trim()).map_err(|message| Error::Config { location, message })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "mode" => self.mode = v.parse()?,
            "k" => self.k = positive(v)?,
            "a" => self.a = positive(v)?,
            "alpha" => self.alpha = direction(v)?,
            "h_real" => self.h_real = finite(v)?,
            "h_imag" => {
                let h = finite(v)?;
                if h < 0.0 {
                    return Err(format!("h_imag = {h} must be >= 0"));
                }
                self.h_imag = h;
            }
            "bc_variant" => {
                self.bc_variant = match v.to_ascii_lowercase().as_str() {
                    "a" | "impedance" => BcVariant::MixedImpedance,
                    "b" | "dirichlet" => BcVariant::MixedDirichlet,
                    _ => return Err(format!("bc_variant '{v}' is not A or B")),
                }
            }
            "cap_axis" => self.cap_axis = direction(v)?,
            "cap_aperture_deg" => {
                let d = finite(v)?;
                if !(0.0..=180.0).contains(&d) {
                    return Err(format!("cap_aperture_deg = {d} outside [0, 180]"));
                }
                self.cap_aperture_deg = d;
            }
            "L_max" => {
                self.l_max = if v.eq_ignore_ascii_case("auto") { LMax::Auto } else { LMax::Fixed(count(v)?) }
            }
            "basis_P" => self.basis_p = count(v)?,
            "basis_M" => self.basis_m = count(v)?,
            "lambda_list" => {
                let list = items(v).map(finite).collect::<std::result::Result<Vec<_>, _>>()?;
                if let Some(l) = list.iter().find(|l| **l < 0.0) {
                    return Err(format!("lambda {l} must be >= 0"));
                }
                self.lambda_list = list;
            }
            "target_seed" => self.target_seed = v.parse().map_err(|_| format!("'{v}' is not an unsigned integer"))?,
            "target_band" => self.target_band = count(v)?,
            "density_sizes" => {
                self.density_sizes = items(v)
                    .map(|pair| {
                        let (p, m) = pair.split_once(':').ok_or_else(|| format!("'{pair}' is not P:M"))?;
                        Ok((count(p)?, count(m)?))
                    })
                    .collect::<std::result::Result<_, String>>()?
            }
            "sweep_k" => self.sweep_k = items(v).map(positive).collect::<std::result::Result<_, _>>()?,
            "n_theta" => self.n_theta = count(v)?,
            "n_phi" => self.n_phi = count(v)?,
            "resid_tol" => {
                self.resid_tol = if v.eq_ignore_ascii_case("auto") { None } else { Some(positive(v)?) }
            }
            "record_timing" => {
                self.record_timing = v.parse().map_err(|_| format!("'{v}' is not true or false"))?
            }
            "output_dir" => {
                if v.is_empty() {
                    return Err("output_dir is empty".into());
                }
                self.output_dir = PathBuf::from(v);
            }
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Cross-field constraints.
    fn check(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Config { location: key.into(), message });
        if self.n_theta == 0 || self.n_phi == 0 {
            return bad("n_theta", "pattern grid must be nonempty".into());
        }
        if self.lambda_list.is_empty() {
            return bad("lambda_list", "at least one lambda is required".into());
        }
        Ok(())
    }

    /// Canonical `(key, value)` pairs; parsing them back gives the same config.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[f64]| v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", ");
        let vec3 = |v: &[f64; 3]| list(v);
        vec![
            ("mode", self.mode.to_string()),
            ("k", num(self.k)),
            ("a", num(self.a)),
            ("alpha", vec3(&self.alpha)),
            ("h_real", num(self.h_real)),
            ("h_imag", num(self.h_imag)),
            ("bc_variant", match self.bc_variant {
                BcVariant::MixedImpedance => "A".into(),
                BcVariant::MixedDirichlet => "B".into(),
            }),
            ("cap_axis", vec3(&self.cap_axis)),
            ("cap_aperture_deg", num(self.cap_aperture_deg)),
            ("L_max", match self.l_max {
                LMax::Auto => "auto".into(),
                LMax::Fixed(l) => l.to_string(),
            }),
            ("basis_P", self.basis_p.to_string()),
            ("basis_M", self.basis_m.to_string()),
            ("lambda_list", list(&self.lambda_list)),
            ("target_seed", self.target_seed.to_string()),
            ("target_band", self.target_band.to_string()),
            ("density_sizes", self.density_sizes.iter().map(|(p, m)| format!("{p}:{m}")).collect::<Vec<_>>().join(", ")),
            ("sweep_k", list(&self.sweep_k)),
            ("n_theta", self.n_theta.to_string()),
            ("n_phi", self.n_phi.to_string()),
            ("resid_tol", self.resid_tol.map_or("auto".into(), num)),
            ("record_timing", self.record_timing.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ]
    }

    pub fn to_canonical_string(&self) -> String {
        self.echo().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn impedance(&self) -> Complex64 {
        Complex64::new(self.h_real, self.h_imag)
    }

    /// Aperture in radians; 0° and 180° map exactly to the empty cap and the
    /// whole sphere.
    pub fn aperture(&self) -> f64 {
        match self.cap_aperture_deg {
            d if d == 180.0 => PI,
            d => d.to_radians(),
        }
    }

    pub fn cap(&self) -> Result<CapRegion> {
        CapRegion::new(Vector3::from(self.cap_axis), self.aperture())
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { resid_tol: self.resid_tol, ..SolveOptions::default() }
    }

    /// Problem at wavenumber `k` with everything else from the config.
    pub fn setup_at(&self, k: f64, impedance: Complex64) -> Result<Setup> {
        let ctx = WaveContext::new(k, self.a, Vector3::from(self.alpha), Impedance::Uniform(impedance), self.bc_variant)?;
        let cap = self.cap()?;
        let l_max = match self.l_max {
            LMax::Auto => ctx.default_l_max(),
            LMax::Fixed(l) => l,
        };
        let grid = build_grid_for_cap(l_max, &cap);
        Ok(Setup { ctx, cap, grid, l_max, opts: self.solve_options() })
    }

    pub fn setup(&self) -> Result<Setup> {
        self.setup_at(self.k, self.impedance())
    }
}

/// Shortest round-trip decimal; exponent form for very small or large values.
fn num(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e6) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn items(v: &str) -> impl Iterator<Item = &str> {
    v.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty())
}

fn finite(v: &str) -> std::result::Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("'{v}' is not a finite number")),
    }
}

fn positive(v: &str) -> std::result::Result<f64, String> {
    let x = finite(v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(format!("{x} must be positive"))
    }
}

fn count(v: &str) -> std::result::Result<usize, String> {
    v.parse().map_err(|_| format!("'{v}' is not a nonnegative integer"))
}

/// Three reals, normalized unless already unit length to within roundoff
/// (so that echoed values parse back unchanged).
fn direction(v: &str) -> std::result::Result<[f64; 3], String> {
    let parts = items(v).map(finite).collect::<std::result::Result<Vec<_>, _>>()?;
    let [x, y, z] = parts[..] else {
        return Err(format!("expected 3 components, got {}", parts.len()));
    };
    let n = Vector3::new(x, y, z).norm();
    if n == 0.0 || !n.is_finite() {
        return Err("direction must be a nonzero finite vector".into());
    }
    if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
        Ok([x, y, z])
    } else {
        Ok([x / n, y / n, z / n])
    }
}
