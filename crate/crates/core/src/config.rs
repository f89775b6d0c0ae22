//! JSON run configuration.
//!
//! The schema is strict: unknown fields are rejected, and every error
//! carries the dotted path of the offending field. Parsing fills the
//! defaults (time step from the stability bound, horizon of ten periods,
//! `tol_period = 1e-7`, 64 snapshots) so that the normalized config
//! serializes back to itself.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::{CoefficientError, CoefficientSet};
use crate::dynamics::{Dynamics, DynamicsError, ProblemSpec, TOL_POS};
use crate::grid::{Grid, GridError, MIN_POINTS};
use crate::harness::{ExperimentContext, EXPERIMENTS};
use crate::kernel::{Kernel, KernelError};
use crate::nonlocal_ops::{Backend, DispersalVariant, NonlocalError};
use crate::periodic::{PeriodicOptions, DEFAULT_MAX_ITERS, DEFAULT_SNAPSHOTS, DEFAULT_TOL_PERIOD};
use crate::persistence::EnvelopeOptions;

/// Skew used when a kernel is declared asymmetric without one.
pub const DEFAULT_SKEW: f64 = 0.5;
/// Horizon in periods when none is given.
pub const DEFAULT_HORIZON_PERIODS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("value out of range at {path}: {message}")]
    ValueOutOfRange { path: String, message: String },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

impl ConfigError {
    pub fn path(&self) -> Option<&str> {
        match self {
            Self::Schema { path, .. } | Self::ValueOutOfRange { path, .. } => Some(path),
            Self::Io(_) => None,
        }
    }
}

fn out_of_range(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::ValueOutOfRange {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Periodic,
    Dirichlet,
    Neumann,
}

impl Domain {
    pub fn variant(self) -> DispersalVariant {
        match self {
            Self::Periodic => DispersalVariant::Periodic,
            Self::Dirichlet => DispersalVariant::DirichletType,
            Self::Neumann => DispersalVariant::NeumannType,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub domain: Domain,
    pub length: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    J,
    G,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    pub family: Family,
    pub radius: f64,
    pub exponent: u32,
    pub symmetric: bool,
    /// Tilt of an asymmetric profile, in `(-1, 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skew: Option<f64>,
}

impl KernelConfig {
    fn skew(&self) -> f64 {
        if self.symmetric {
            0.0
        } else {
            self.skew.unwrap_or(DEFAULT_SKEW)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kernels {
    #[serde(rename = "J")]
    pub j: KernelConfig,
    #[serde(rename = "G")]
    pub g: KernelConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicConfig {
    #[serde(default = "default_tol_period")]
    pub tol_period: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_tol_period() -> f64 {
    DEFAULT_TOL_PERIOD
}
fn default_snapshots() -> usize {
    DEFAULT_SNAPSHOTS
}
fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

impl Default for PeriodicConfig {
    fn default() -> Self {
        Self {
            tol_period: DEFAULT_TOL_PERIOD,
            snapshots: DEFAULT_SNAPSHOTS,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    /// Outer stopping tolerance; `tol_period` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
}

fn default_max_outer() -> usize {
    200
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            tol: None,
            max_outer: default_max_outer(),
        }
    }
}

/// Initial data for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialData {
    Constant { value: f64 },
    /// Smoothed uniform noise in `[low, high]`, drawn from `rng_seed`.
    Random { low: f64, high: f64 },
}

impl Default for InitialData {
    fn default() -> Self {
        Self::Random { low: 0.1, high: 2.0 }
    }
}

impl InitialData {
    fn sup(&self) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Random { high, .. } => high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub initial: InitialData,
    /// Steps between dumped states.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_record_every() -> usize {
    16
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            initial: InitialData::default(),
            record_every: default_record_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "all_experiments")]
    pub experiments: Vec<String>,
    /// Overrides every experiment's default trial count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

fn all_experiments() -> Vec<String> {
    EXPERIMENTS.iter().map(|s| s.to_string()).collect()
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            experiments: all_experiments(),
            trials: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub kernels: Kernels,
    pub coefficients: CoefficientSet,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub periodic: PeriodicConfig,
    #[serde(default)]
    pub envelope: EnvelopeConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub rng_seed: u64,
}

/// Parse, validate and fill defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Schema {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    cfg.validate()?;
    let spec = cfg.build()?;
    let span = cfg.coefficients.period * DEFAULT_HORIZON_PERIODS;
    cfg.horizon.get_or_insert(span);
    let level = cfg.simulate.initial.sup().max(spec.cap()) + TOL_POS;
    let dt = *cfg.dt.get_or_insert(spec.dt_max(level));
    if dt > spec.dt_max(level) {
        return Err(out_of_range(
            "dt",
            format!("{dt} exceeds the stability bound {}", spec.dt_max(level)),
        ));
    }
    Ok(cfg)
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(out_of_range(path, format!("must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn variant(&self) -> DispersalVariant {
        self.grid.domain.variant()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        positive("grid.length", self.grid.length)?;
        if self.grid.n_points < MIN_POINTS {
            return Err(out_of_range(
                "grid.n_points",
                format!("need at least {MIN_POINTS}, got {}", self.grid.n_points),
            ));
        }
        for (name, role, k) in [("J", Role::J, &self.kernels.j), ("G", Role::G, &self.kernels.g)] {
            if k.role.is_some_and(|r| r != role) {
                return Err(ConfigError::Schema {
                    path: format!("kernels.{name}.role"),
                    message: format!("role does not match key {name}"),
                });
            }
            positive(&format!("kernels.{name}.radius"), k.radius)?;
            if k.exponent < 2 {
                return Err(out_of_range(&format!("kernels.{name}.exponent"), "must be at least 2"));
            }
            if k.symmetric && k.skew.is_some_and(|s| s != 0.0) {
                return Err(out_of_range(&format!("kernels.{name}.skew"), "symmetric kernels take no skew"));
            }
            let s = k.skew();
            if !(s.is_finite() && s.abs() < 1.0) {
                return Err(out_of_range(&format!("kernels.{name}.skew"), format!("must lie in (-1, 1), got {s}")));
            }
        }
        positive("coefficients.period", self.coefficients.period)?;
        if let Some(dt) = self.dt {
            positive("dt", dt)?;
        }
        if let Some(h) = self.horizon {
            positive("horizon", h)?;
        }
        positive("periodic.tol_period", self.periodic.tol_period)?;
        if self.periodic.snapshots == 0 {
            return Err(out_of_range("periodic.snapshots", "must be at least 1"));
        }
        if self.periodic.max_iters == 0 {
            return Err(out_of_range("periodic.max_iters", "must be at least 1"));
        }
        if let Some(tol) = self.envelope.tol {
            positive("envelope.tol", tol)?;
        }
        if self.envelope.max_outer == 0 {
            return Err(out_of_range("envelope.max_outer", "must be at least 1"));
        }
        if self.simulate.record_every == 0 {
            return Err(out_of_range("simulate.record_every", "must be at least 1"));
        }
        match self.simulate.initial {
            InitialData::Constant { value } if !(value.is_finite() && value >= 0.0) => {
                return Err(out_of_range("simulate.initial.value", "must be nonnegative"))
            }
            InitialData::Random { low, high } if !(low.is_finite() && low >= 0.0 && high >= low && high.is_finite()) => {
                return Err(out_of_range("simulate.initial", "need 0 <= low <= high"))
            }
            _ => {}
        }
        for (i, name) in self.verify.experiments.iter().enumerate() {
            if !EXPERIMENTS.contains(&name.as_str()) {
                return Err(out_of_range(
                    &format!("verify.experiments[{i}]"),
                    format!("unknown experiment {name:?}"),
                ));
            }
        }
        if self.verify.trials == Some(0) {
            return Err(out_of_range("verify.trials", "must be at least 1"));
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid, ConfigError> {
        let g = &self.grid;
        let grid = match g.domain {
            Domain::Periodic => Grid::periodic(g.length, g.n_points),
            _ => Grid::interval(0.0, g.length, g.n_points),
        };
        grid.map_err(|e| match e {
            GridError::TooFewPoints(_) => out_of_range("grid.n_points", e.to_string()),
            other => out_of_range("grid", other.to_string()),
        })
    }

    /// Build the problem; construction failures are reported against the
    /// config field responsible.
    pub fn build(&self) -> Result<Arc<ProblemSpec>, ConfigError> {
        let grid = Arc::new(self.build_grid()?);
        let kernel = |name: &str, k: &KernelConfig| {
            Kernel::bump(k.radius, k.exponent, k.skew(), grid.spacing()).map_err(|e| {
                let field = match e {
                    KernelError::NonPositiveRadius(_) | KernelError::InvalidSpacing { .. } => "radius",
                    KernelError::InvalidExponent(_) => "exponent",
                    KernelError::SkewOutOfRange(_) => "skew",
                    _ => "",
                };
                let path = if field.is_empty() {
                    format!("kernels.{name}")
                } else {
                    format!("kernels.{name}.{field}")
                };
                out_of_range(&path, e.to_string())
            })
        };
        let j = kernel("J", &self.kernels.j)?;
        let g = kernel("G", &self.kernels.g)?;
        let spec = ProblemSpec::new(self.variant(), grid, j, g, self.coefficients.clone(), self.backend)
            .map_err(|e| match e {
                DynamicsError::Coefficient(CoefficientError::NegativeCoefficientSample { name, .. }) => {
                    out_of_range(&format!("coefficients.{name}"), e.to_string())
                }
                DynamicsError::Nonlocal(NonlocalError::FftRequiresPeriodic) => out_of_range("backend", e.to_string()),
                DynamicsError::Nonlocal(NonlocalError::Kernel(ref k)) => {
                    out_of_range("kernels", k.to_string())
                }
                other => out_of_range("coefficients", other.to_string()),
            })?;
        Ok(Arc::new(spec))
    }

    pub fn periodic_options(&self) -> PeriodicOptions {
        PeriodicOptions {
            tol: self.periodic.tol_period,
            max_iters: self.periodic.max_iters,
            snapshots: self.periodic.snapshots,
            substeps: None,
        }
    }

    pub fn envelope_options(&self) -> EnvelopeOptions {
        let periodic = self.periodic_options();
        EnvelopeOptions {
            tol: self.envelope.tol.unwrap_or(periodic.tol),
            max_outer: self.envelope.max_outer,
            periodic,
        }
    }

    pub fn experiment_context(&self, fingerprint: &str) -> ExperimentContext {
        let mut ctx = ExperimentContext::new(self.rng_seed);
        ctx.fingerprint = fingerprint.to_string();
        ctx.envelope = self.envelope_options();
        ctx.trials = self.verify.trials;
        ctx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "grid": {"domain": "periodic", "length": 1.0, "n_points": 64},
        "kernels": {
            "J": {"family": "bump", "radius": 0.4, "exponent": 2, "symmetric": true},
            "G": {"family": "bump", "radius": 0.18, "exponent": 2, "symmetric": true}
        },
        "coefficients": {"period": 1.0, "a": {"const": 1.0}, "b": {"const": 1.0}, "c": {"const": 0.2}}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.periodic.tol_period, 1e-7);
        assert_eq!(cfg.periodic.snapshots, 64);
        assert_eq!(cfg.horizon, Some(10.0));
        let spec = cfg.build().unwrap();
        let level = 2.0_f64.max(spec.cap()) + TOL_POS;
        assert_eq!(cfg.dt, Some(spec.dt_max(level)));
        assert_eq!(cfg.verify.experiments.len(), EXPERIMENTS.len());
    }

    #[test]
    fn normalized_config_round_trips() {
        let cfg = parse_config(MINIMAL).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let again = parse_config(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn negative_radius_names_the_field() {
        let text = MINIMAL.replace("\"radius\": 0.4", "\"radius\": -0.4");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::ValueOutOfRange { .. }));
        assert_eq!(err.path(), Some("kernels.J.radius"));
    }

    #[test]
    fn unknown_field_is_a_schema_error() {
        let text = MINIMAL.replace("\"n_points\": 64", "\"n_points\": 64, \"tol_periodd\": 1");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Schema { .. }), "{err}");
        assert_eq!(err.path(), Some("grid.tol_periodd"));
        let text = MINIMAL.replace("\"exponent\": 2, \"symmetric\": true}", "\"exponent\": \"two\", \"symmetric\": true}");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.path(), Some("kernels.J.exponent"));
    }

    #[test]
    fn kernel_too_narrow_for_grid() {
        let text = MINIMAL.replace("\"radius\": 0.18", "\"radius\": 0.02");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.path(), Some("kernels.G.radius"));
    }

    #[test]
    fn negative_coefficient_sample() {
        let text = MINIMAL.replace("\"b\": {\"const\": 1.0}", "\"b\": {\"const\": -1.0}");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.path(), Some("coefficients.b"));
    }

    #[test]
    fn unstable_dt_rejected() {
        let text = MINIMAL.replace("\"coefficients\"", "\"dt\": 10.0, \"coefficients\"");
        assert_eq!(parse_config(&text).unwrap_err().path(), Some("dt"));
    }

    #[test]
    fn asymmetric_default_skew() {
        let text = MINIMAL.replace("\"exponent\": 2, \"symmetric\": true}", "\"exponent\": 2, \"symmetric\": false}");
        let cfg = parse_config(&text).unwrap();
        let spec = cfg.build().unwrap();
        assert_eq!(spec.j().skew(), DEFAULT_SKEW);
        assert!(!spec.j().is_symmetric());
    }
}
