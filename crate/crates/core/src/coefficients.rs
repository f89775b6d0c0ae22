//! Time-periodic, space-heterogeneous coefficients `a`, `b`, `c`.
//!
//! Each coefficient is a finite trigonometric expansion
//!
//! ```text
//! f(x, t) = f0 + sum_k α_k cos(2π k (x - x0)/L + φ_k) (1 + β_k sin(2π m_k t/T + ψ_k))
//!              + sum_j γ_j sin(2π m_j t/T + ψ_j)
//! ```
//!
//! so periodicity in `t` (period `T`) and in `x` (cell length `L`) holds by
//! construction.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{DomainKind, Grid};
use crate::kernel::Kernel;
use crate::nonlocal_ops::local_masses;

/// Smallest number of time samples accepted by [`sample_extrema`].
pub const MIN_TIME_SAMPLES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoefficientError {
    #[error("coefficient {name} is negative ({value}) at x = {x}, t = {t}")]
    NegativeCoefficientSample {
        name: &'static str,
        value: f64,
        x: f64,
        t: f64,
    },
    #[error("need at least {MIN_TIME_SAMPLES} time samples, got {0}")]
    TooFewTimeSamples(usize),
    #[error("time period must be positive and finite, got {0}")]
    NonPositivePeriod(f64),
    #[error("coefficient {0} has a non-finite parameter")]
    NonFinite(&'static str),
}

fn one() -> u32 {
    1
}

/// Multiplicative time modulation `(1 + β sin(2π m t/T + ψ))` of a space mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeModulation {
    #[serde(default = "one")]
    pub harmonic: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceMode {
    pub wavenumber: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_modulation: Option<TimeModulation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeMode {
    #[serde(default = "one")]
    pub harmonic: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientField {
    #[serde(rename = "const")]
    pub constant: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub space_modes: Vec<SpaceMode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub time_modes: Vec<TimeMode>,
}

impl CoefficientField {
    pub fn constant(value: f64) -> Self {
        Self {
            constant: value,
            space_modes: Vec::new(),
            time_modes: Vec::new(),
        }
    }

    pub fn with_space_mode(mut self, wavenumber: u32, amplitude: f64, phase: f64) -> Self {
        self.space_modes.push(SpaceMode {
            wavenumber,
            amplitude,
            phase,
            time_modulation: None,
        });
        self
    }

    pub fn with_time_mode(mut self, harmonic: u32, amplitude: f64, phase: f64) -> Self {
        self.time_modes.push(TimeMode {
            harmonic,
            amplitude,
            phase,
        });
        self
    }

    /// True when no mode varies in space.
    pub fn is_space_independent(&self) -> bool {
        self.space_modes
            .iter()
            .all(|m| m.amplitude == 0.0 || m.wavenumber == 0)
    }

    /// Value at `(x, t)`; `origin` and `length` fix the spatial cell and
    /// `period` the time period.
    pub fn eval(&self, x: f64, t: f64, origin: f64, length: f64, period: f64) -> f64 {
        let mut v = self.constant;
        for m in &self.space_modes {
            let s = m.amplitude * (TAU * m.wavenumber as f64 * (x - origin) / length + m.phase).cos();
            v += s * modulation(m.time_modulation.as_ref(), t, period);
        }
        for m in &self.time_modes {
            v += m.amplitude * (TAU * m.harmonic as f64 * t / period + m.phase).sin();
        }
        v
    }

    fn is_finite(&self) -> bool {
        self.constant.is_finite()
            && self.space_modes.iter().all(|m| {
                m.amplitude.is_finite()
                    && m.phase.is_finite()
                    && m
                        .time_modulation
                        .as_ref()
                        .is_none_or(|tm| tm.amplitude.is_finite() && tm.phase.is_finite())
            })
            && self
                .time_modes
                .iter()
                .all(|m| m.amplitude.is_finite() && m.phase.is_finite())
    }
}

fn modulation(tm: Option<&TimeModulation>, t: f64, period: f64) -> f64 {
    match tm {
        None => 1.0,
        Some(tm) => 1.0 + tm.amplitude * (TAU * tm.harmonic as f64 * t / period + tm.phase).sin(),
    }
}

/// The three coefficient fields of one problem together with their period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSet {
    pub period: f64,
    pub a: CoefficientField,
    pub b: CoefficientField,
    pub c: CoefficientField,
}

impl CoefficientSet {
    pub fn new(
        period: f64,
        a: CoefficientField,
        b: CoefficientField,
        c: CoefficientField,
    ) -> Result<Self, CoefficientError> {
        if !(period.is_finite() && period > 0.0) {
            return Err(CoefficientError::NonPositivePeriod(period));
        }
        for (name, f) in [("a", &a), ("b", &b), ("c", &c)] {
            if !f.is_finite() {
                return Err(CoefficientError::NonFinite(name));
            }
        }
        Ok(Self { period, a, b, c })
    }

    pub fn constants(a: f64, b: f64, c: f64, period: f64) -> Result<Self, CoefficientError> {
        Self::new(
            period,
            CoefficientField::constant(a),
            CoefficientField::constant(b),
            CoefficientField::constant(c),
        )
    }

    pub fn is_space_independent(&self) -> bool {
        self.a.is_space_independent() && self.b.is_space_independent() && self.c.is_space_independent()
    }

    /// `c` vanishes identically.
    pub fn competition_free(&self) -> bool {
        self.c.constant == 0.0
            && self.c.space_modes.iter().all(|m| m.amplitude == 0.0)
            && self.c.time_modes.iter().all(|m| m.amplitude == 0.0)
    }
}

/// Nodal tabulation of one coefficient field on a fixed grid.
#[derive(Debug, Clone)]
struct FieldTable {
    constant: f64,
    space: Vec<(Vec<f64>, Option<TimeModulation>)>,
    time: Vec<TimeMode>,
}

impl FieldTable {
    fn new(f: &CoefficientField, grid: &Grid) -> Self {
        let (origin, length) = cell(grid);
        let space = f
            .space_modes
            .iter()
            .map(|m| {
                let values = grid.sample(|x| {
                    m.amplitude * (TAU * m.wavenumber as f64 * (x - origin) / length + m.phase).cos()
                });
                (values, m.time_modulation.clone())
            })
            .collect();
        Self {
            constant: f.constant,
            space,
            time: f.time_modes.clone(),
        }
    }

    fn fill(&self, t: f64, period: f64, out: &mut [f64]) {
        let mut base = self.constant;
        for m in &self.time {
            base += m.amplitude * (TAU * m.harmonic as f64 * t / period + m.phase).sin();
        }
        out.fill(base);
        for (values, tm) in &self.space {
            let f = modulation(tm.as_ref(), t, period);
            for (o, v) in out.iter_mut().zip(values) {
                *o += v * f;
            }
        }
    }
}

fn cell(grid: &Grid) -> (f64, f64) {
    match grid.kind() {
        DomainKind::PeriodicCell { period } => (0.0, period),
        DomainKind::BoundedInterval { left, right } => (left, right - left),
    }
}

/// Nodal values of `a`, `b`, `c` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientValues {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl CoefficientValues {
    pub fn zeros(n: usize) -> Self {
        Self {
            a: vec![0.0; n],
            b: vec![0.0; n],
            c: vec![0.0; n],
        }
    }
}

/// A coefficient set tabulated on a grid, for fast evaluation at arbitrary
/// times.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    period: f64,
    a: FieldTable,
    b: FieldTable,
    c: FieldTable,
    n: usize,
}

impl CoefficientTable {
    pub fn new(cs: &CoefficientSet, grid: &Grid) -> Self {
        Self {
            period: cs.period,
            a: FieldTable::new(&cs.a, grid),
            b: FieldTable::new(&cs.b, grid),
            c: FieldTable::new(&cs.c, grid),
            n: grid.len(),
        }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn fill(&self, t: f64, out: &mut CoefficientValues) {
        self.a.fill(t, self.period, &mut out.a);
        self.b.fill(t, self.period, &mut out.b);
        self.c.fill(t, self.period, &mut out.c);
    }

    pub fn at(&self, t: f64) -> CoefficientValues {
        let mut v = CoefficientValues::zeros(self.n);
        self.fill(t, &mut v);
        v
    }
}

/// Sampled extrema over the space grid times a uniform time lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientExtrema {
    pub a_max: f64,
    pub a_min: f64,
    pub b_max: f64,
    pub b_min: f64,
    pub c_max: f64,
    pub c_min: f64,
    pub time_samples: usize,
}

impl CoefficientExtrema {
    /// `a_M / b_L`, the constant super-solution level.
    pub fn growth_cap(&self) -> f64 {
        self.a_max / self.b_min
    }
}

pub fn sample_extrema(
    cs: &CoefficientSet,
    grid: &Grid,
    nt_samples: usize,
) -> Result<CoefficientExtrema, CoefficientError> {
    if nt_samples < MIN_TIME_SAMPLES {
        return Err(CoefficientError::TooFewTimeSamples(nt_samples));
    }
    let table = CoefficientTable::new(cs, grid);
    let mut vals = CoefficientValues::zeros(grid.len());
    let mut ex = CoefficientExtrema {
        a_max: f64::NEG_INFINITY,
        a_min: f64::INFINITY,
        b_max: f64::NEG_INFINITY,
        b_min: f64::INFINITY,
        c_max: f64::NEG_INFINITY,
        c_min: f64::INFINITY,
        time_samples: nt_samples,
    };
    for j in 0..nt_samples {
        let t = j as f64 * cs.period / nt_samples as f64;
        table.fill(t, &mut vals);
        for (name, v, max, min) in [
            ("a", &vals.a, &mut ex.a_max, &mut ex.a_min),
            ("b", &vals.b, &mut ex.b_max, &mut ex.b_min),
            ("c", &vals.c, &mut ex.c_max, &mut ex.c_min),
        ] {
            for (i, &value) in v.iter().enumerate() {
                if value < 0.0 {
                    return Err(CoefficientError::NegativeCoefficientSample {
                        name,
                        value,
                        x: grid.nodes()[i],
                        t,
                    });
                }
                *max = max.max(value);
                *min = min.min(value);
            }
        }
    }
    Ok(ex)
}

/// Largest spatial spread `max_x f - min_x f` of `a`, `b`, `c` over the
/// lattice of nodes times `nt_samples` instants.
pub fn spatial_variation(cs: &CoefficientSet, grid: &Grid, nt_samples: usize) -> f64 {
    let table = CoefficientTable::new(cs, grid);
    let mut vals = CoefficientValues::zeros(grid.len());
    let mut worst = 0.0_f64;
    for j in 0..nt_samples {
        table.fill(j as f64 * cs.period / nt_samples as f64, &mut vals);
        for v in [&vals.a, &vals.b, &vals.c] {
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            worst = worst.max(hi - lo);
        }
    }
    worst
}

/// Extremal local kernel masses `∫_Ω K(y - x) dy` over grid points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConstants {
    pub g_min: f64,
    pub g_max: f64,
    pub j_min: f64,
}

pub fn geometry_constants(g: &Kernel, j: &Kernel, grid: &Grid) -> GeometryConstants {
    let gm = local_masses(g, grid);
    let jm = local_masses(j, grid);
    GeometryConstants {
        g_min: gm.iter().copied().fold(f64::INFINITY, f64::min),
        g_max: gm.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        j_min: jm.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::make_bump_kernel;

    fn reference_a() -> CoefficientSet {
        CoefficientSet::new(
            1.0,
            CoefficientField::constant(1.0)
                .with_space_mode(1, 0.2, 0.0)
                .with_time_mode(1, 0.1, 0.0),
            CoefficientField::constant(1.0),
            CoefficientField::constant(0.2),
        )
        .unwrap()
    }

    #[test]
    fn constant_extrema() {
        let grid = Grid::periodic(1.0, 32).unwrap();
        let cs = CoefficientSet::constants(1.0, 1.0, 0.2, 1.0).unwrap();
        let e = sample_extrema(&cs, &grid, 64).unwrap();
        assert_eq!((e.a_max, e.a_min, e.b_max, e.b_min), (1.0, 1.0, 1.0, 1.0));
        assert_eq!((e.c_max, e.c_min), (0.2, 0.2));
    }

    #[test]
    fn sine_in_time_extrema() {
        let grid = Grid::periodic(1.0, 32).unwrap();
        let mut cs = CoefficientSet::constants(1.0, 1.0, 0.0, 2.0).unwrap();
        cs.a = CoefficientField::constant(1.0).with_time_mode(1, 0.25, 0.0);
        let e = sample_extrema(&cs, &grid, 64).unwrap();
        assert!((e.a_max - 1.25).abs() < 1e-9);
        assert!((e.a_min - 0.75).abs() < 1e-9);
    }

    #[test]
    fn extrema_converge_under_refinement() {
        let grid = Grid::periodic(1.0, 128).unwrap();
        let cs = reference_a();
        let coarse = sample_extrema(&cs, &grid, 64).unwrap();
        let fine_grid = Grid::periodic(1.0, 1280).unwrap();
        let fine = sample_extrema(&cs, &fine_grid, 640).unwrap();
        // Continuum extrema are 1.3 and 0.7; both samplings hit them because
        // the lattices contain x = 0, 1/2 and t = 1/4, 3/4.
        assert!((fine.a_max - 1.3).abs() < 1e-12);
        assert!((fine.a_min - 0.7).abs() < 1e-12);
        assert!((coarse.a_max - fine.a_max).abs() < 1e-12);
        assert!((coarse.a_min - fine.a_min).abs() < 1e-12);

        // Off-lattice phases: the coarse error bounds the fine error.
        let mut shifted = cs.clone();
        shifted.a.space_modes[0].phase = 0.3;
        shifted.a.time_modes[0].phase = 0.7;
        let c1 = sample_extrema(&shifted, &Grid::periodic(1.0, 16).unwrap(), 32).unwrap();
        let c2 = sample_extrema(&shifted, &Grid::periodic(1.0, 32).unwrap(), 64).unwrap();
        let f = sample_extrema(&shifted, &fine_grid, 640).unwrap();
        assert!(c1.a_max <= f.a_max && c2.a_max <= f.a_max);
        assert!(f.a_max - c2.a_max < 0.02 && f.a_max - c1.a_max < 0.05);
        assert!(c1.a_min >= f.a_min && c2.a_min >= f.a_min);
        assert!(f.a_max <= 1.3 + 1e-12 && f.a_max > 1.299);
    }

    #[test]
    fn negative_sample_rejected() {
        let grid = Grid::periodic(1.0, 32).unwrap();
        let mut cs = CoefficientSet::constants(1.0, 1.0, 0.1, 1.0).unwrap();
        cs.c = CoefficientField::constant(0.1).with_space_mode(1, 0.2, 0.0);
        assert!(matches!(
            sample_extrema(&cs, &grid, 32),
            Err(CoefficientError::NegativeCoefficientSample { name: "c", .. })
        ));
        assert_eq!(
            sample_extrema(&cs, &grid, 8).unwrap_err(),
            CoefficientError::TooFewTimeSamples(8)
        );
    }

    #[test]
    fn periodic_in_time_and_space() {
        let cs = reference_a();
        for &(x, t) in &[(0.13, 0.41), (0.77, 0.05), (0.5, 0.9)] {
            let v = cs.a.eval(x, t, 0.0, 1.0, 1.0);
            assert!((v - cs.a.eval(x, t + 1.0, 0.0, 1.0, 1.0)).abs() < 1e-14);
            assert!((v - cs.a.eval(x + 1.0, t, 0.0, 1.0, 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let grid = Grid::interval(-1.0, 2.0, 61).unwrap();
        let mut cs = reference_a();
        cs.b.space_modes.push(SpaceMode {
            wavenumber: 2,
            amplitude: 0.3,
            phase: 0.4,
            time_modulation: Some(TimeModulation {
                harmonic: 2,
                amplitude: 0.5,
                phase: 1.0,
            }),
        });
        let table = CoefficientTable::new(&cs, &grid);
        let v = table.at(0.37);
        for (i, &x) in grid.nodes().iter().enumerate() {
            assert!((v.b[i] - cs.b.eval(x, 0.37, -1.0, 3.0, 1.0)).abs() < 1e-14);
            assert!((v.a[i] - cs.a.eval(x, 0.37, -1.0, 3.0, 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn geometry_periodic_is_full_mass() {
        let grid = Grid::periodic(1.0, 100).unwrap();
        let j = make_bump_kernel(0.4, 2, grid.spacing()).unwrap();
        let g = make_bump_kernel(0.2, 2, grid.spacing()).unwrap();
        let gc = geometry_constants(&g, &j, &grid);
        for v in [gc.g_min, gc.g_max, gc.j_min] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn geometry_bounded_edges() {
        let grid = Grid::interval(0.0, 2.0, 201).unwrap();
        let j = make_bump_kernel(0.3, 2, grid.spacing()).unwrap();
        let g = make_bump_kernel(0.2, 2, grid.spacing()).unwrap();
        let gc = geometry_constants(&g, &j, &grid);
        assert!((gc.j_min - 0.5).abs() < 1e-12);
        assert!((local_masses(&g, &grid)[100] - 1.0).abs() < 1e-12);
        assert!((gc.g_max - 1.0).abs() < 1e-12);
        assert!((gc.g_min - 0.5).abs() < 1e-12);
    }

    #[test]
    fn space_independence_and_variation() {
        let grid = Grid::periodic(1.0, 32).unwrap();
        let mut cs = CoefficientSet::constants(1.0, 1.0, 0.3, 1.0).unwrap();
        cs.a = CoefficientField::constant(1.0).with_time_mode(1, 0.5, 0.0);
        assert!(cs.is_space_independent());
        assert!(spatial_variation(&cs, &grid, 64) <= 1e-12);
        let cs = reference_a();
        assert!(!cs.is_space_independent());
        assert!(spatial_variation(&cs, &grid, 64) > 0.3);
    }
}
