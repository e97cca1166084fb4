//! TOML run configuration.
//!
//! ```toml
//! seed = 7                  # optional, default 0
//! output_dir = "out"        # optional, default "out"
//!
//! [model]
//! epsilon = 0.01
//! horizon = 5.0
//! x0 = -1.0
//! x_t = 1.0
//! kappa = 2.0               # default 2
//! sigma = 1.0               # default 1
//!
//! [drift]
//! name = "bistable"         # zero | affine | bistable | polynomial
//! # a0, a1 for affine; coeffs (ascending) for polynomial
//!
//! [grid]                    # optional; padded around the endpoints and NOP
//! xl = -2.0
//! xr = 2.0
//! n_bins = 400
//! ```
//!
//! Experiment sections (`[nop]`, `[scan]`, `[simulate]`, `[bridges]`, `[lln]`,
//! `[peaks]`) are optional and fall back to the defaults in their structs.

use std::path::{Path, PathBuf};

use prehistory::model::{DriftFunction, JumpMeasure, ModelSpec, Polynomial};
use prehistory::nppd::Grid;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DRIFT_CATALOG: [&str; 4] = ["zero", "affine", "bistable", "polynomial"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    SimulateForward,
    SolveNop,
    ScanAlpha0,
    ComputeNppd,
    SampleBridges,
    LlnSweep,
    VerifyOracles,
}

impl Experiment {
    pub fn label(self) -> &'static str {
        match self {
            Experiment::SimulateForward => "simulate",
            Experiment::SolveNop => "nop",
            Experiment::ScanAlpha0 => "scan",
            Experiment::ComputeNppd => "nppd",
            Experiment::SampleBridges => "bridges",
            Experiment::LlnSweep => "lln",
            Experiment::VerifyOracles => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub epsilon: f64,
    pub horizon: f64,
    pub x0: f64,
    pub x_t: f64,
    #[serde(default = "two")]
    pub kappa: f64,
    #[serde(default = "one")]
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub name: String,
    pub a0: Option<f64>,
    pub a1: Option<f64>,
    pub coeffs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub xl: Option<f64>,
    pub xr: Option<f64>,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    /// Fraction of the endpoint/NOP span added on each side when `xl`/`xr` are absent.
    #[serde(default = "default_padding")]
    pub padding: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            xl: None,
            xr: None,
            n_bins: default_bins(),
            padding: default_padding(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NopSection {
    /// Bisection bracket for `α(0)`; without it the momentum range is scanned.
    pub bracket: Option<[f64; 2]>,
    #[serde(default = "default_alpha_range")]
    pub alpha_range: [f64; 2],
    #[serde(default = "default_scan_points")]
    pub points: usize,
}

impl Default for NopSection {
    fn default() -> Self {
        Self {
            bracket: None,
            alpha_range: default_alpha_range(),
            points: default_scan_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default = "default_paths")]
    pub paths: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            paths: default_paths(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BridgesSection {
    #[serde(default = "default_paths")]
    pub paths: usize,
}

impl Default for BridgesSection {
    fn default() -> Self {
        Self {
            paths: default_paths(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LlnSection {
    #[serde(default = "default_lln_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_lln_samples")]
    pub samples: usize,
    #[serde(default = "default_t_star")]
    pub t_star_fraction: f64,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
}

impl Default for LlnSection {
    fn default() -> Self {
        Self {
            epsilons: default_lln_epsilons(),
            samples: default_lln_samples(),
            t_star_fraction: default_t_star(),
            bootstrap_resamples: default_resamples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PeaksSection {
    #[serde(default = "default_peak_height")]
    pub min_relative_height: f64,
}

impl Default for PeaksSection {
    fn default() -> Self {
        Self {
            min_relative_height: default_peak_height(),
        }
    }
}

/// The document as written; every section except `model` and `drift` is optional.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelSection,
    pub drift: DriftSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub nop: NopSection,
    #[serde(default)]
    pub scan: NopSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub bridges: BridgesSection,
    #[serde(default)]
    pub lln: LlnSection,
    #[serde(default)]
    pub peaks: PeaksSection,
}

/// A validated configuration bound to one experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(flatten)]
    pub file: ConfigFile,
    #[serde(skip)]
    pub spec: ModelSpec<f64>,
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.file.seed
    }

    pub fn output_dir(&self) -> &Path {
        &self.file.output_dir
    }

    /// The explicit grid, if both edges were given.
    pub fn fixed_grid(&self) -> CliResult<Option<Grid<f64>>> {
        match (self.file.grid.xl, self.file.grid.xr) {
            (Some(xl), Some(xr)) => Grid::new(xl, xr, self.file.grid.n_bins)
                .map(Some)
                .map_err(|e| CliError::from_core("grid", e)),
            _ => Ok(None),
        }
    }
}

pub fn parse_config(text: &str) -> CliResult<ConfigFile> {
    toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
}

pub fn load_config(path: &Path) -> CliResult<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text).map_err(|e| match e {
        CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
        e => e,
    })
}

pub fn build_drift(d: &DriftSection) -> CliResult<DriftFunction<f64>> {
    let unused = |field: &str, present: bool| {
        if present {
            Err(CliError::validation(
                format!("drift.{field}"),
                format!("not used by the `{}` drift", d.name),
            ))
        } else {
            Ok(())
        }
    };
    match d.name.as_str() {
        "zero" => {
            unused("a0", d.a0.is_some())?;
            unused("a1", d.a1.is_some())?;
            unused("coeffs", d.coeffs.is_some())?;
            Ok(DriftFunction::Zero)
        }
        "affine" => {
            unused("coeffs", d.coeffs.is_some())?;
            Ok(DriftFunction::Affine {
                a0: d.a0.unwrap_or(0.0),
                a1: d.a1.unwrap_or(0.0),
            })
        }
        "bistable" => {
            unused("a0", d.a0.is_some())?;
            unused("a1", d.a1.is_some())?;
            unused("coeffs", d.coeffs.is_some())?;
            Ok(DriftFunction::Bistable)
        }
        "polynomial" => {
            unused("a0", d.a0.is_some())?;
            unused("a1", d.a1.is_some())?;
            match &d.coeffs {
                Some(c) if !c.is_empty() => Ok(DriftFunction::Custom(Polynomial::new(c.clone()))),
                _ => Err(CliError::validation(
                    "drift.coeffs",
                    "a polynomial drift needs at least one coefficient",
                )),
            }
        }
        other => Err(CliError::validation(
            "drift.name",
            format!(
                "unknown drift `{other}`; available drifts: {}",
                DRIFT_CATALOG.join(", ")
            ),
        )),
    }
}

pub fn validate(file: ConfigFile, experiment: Experiment) -> CliResult<RunConfig> {
    let m = &file.model;
    let drift = build_drift(&file.drift)?;
    let measure =
        JumpMeasure::new(drift, m.kappa, m.sigma).map_err(|e| CliError::from_core("model", e))?;
    let spec = ModelSpec::new(measure, m.epsilon, m.horizon, m.x0, m.x_t)
        .map_err(|e| CliError::from_core("model", e))?;

    let g = &file.grid;
    if g.n_bins < 2 {
        return Err(CliError::validation(
            "grid.n_bins",
            "at least two bins are required",
        ));
    }
    if g.xl.is_some() != g.xr.is_some() {
        return Err(CliError::validation(
            "grid",
            "give both xl and xr, or neither",
        ));
    }
    if !(g.padding.is_finite() && g.padding >= 0.0) {
        return Err(CliError::validation("grid.padding", "must be non-negative"));
    }
    for (name, s) in [("nop", &file.nop), ("scan", &file.scan)] {
        let [lo, hi] = s.alpha_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CliError::validation(
                format!("{name}.alpha_range"),
                "needs finite lo < hi",
            ));
        }
        if s.points < 2 {
            return Err(CliError::validation(
                format!("{name}.points"),
                "at least two momenta are required",
            ));
        }
        if let Some([a, b]) = s.bracket {
            if !(a.is_finite() && b.is_finite() && a != b) {
                return Err(CliError::validation(
                    format!("{name}.bracket"),
                    "needs two distinct finite momenta",
                ));
            }
        }
    }
    let l = &file.lln;
    if l.epsilons.is_empty() || l.epsilons.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
        return Err(CliError::validation(
            "lln.epsilons",
            "needs at least one positive epsilon",
        ));
    }
    if l.samples == 0 {
        return Err(CliError::validation(
            "lln.samples",
            "at least one sample is required",
        ));
    }
    if !(l.t_star_fraction > 0.0 && l.t_star_fraction <= 1.0) {
        return Err(CliError::validation(
            "lln.t_star_fraction",
            "must lie in (0, 1]",
        ));
    }
    let h = file.peaks.min_relative_height;
    if !(h.is_finite() && (0.0..=1.0).contains(&h)) {
        return Err(CliError::validation(
            "peaks.min_relative_height",
            "must lie in [0, 1]",
        ));
    }
    Ok(RunConfig {
        experiment,
        file,
        spec,
    })
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn default_bins() -> usize {
    400
}
fn default_padding() -> f64 {
    0.3
}
fn default_alpha_range() -> [f64; 2] {
    [-3.0, 3.0]
}
fn default_scan_points() -> usize {
    601
}
fn default_paths() -> usize {
    100
}
fn default_lln_epsilons() -> Vec<f64> {
    vec![0.04, 0.01, 0.0025]
}
fn default_lln_samples() -> usize {
    200
}
fn default_t_star() -> f64 {
    0.9
}
fn default_resamples() -> usize {
    500
}
fn default_peak_height() -> f64 {
    0.5
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
