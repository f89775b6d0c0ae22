//! One-dimensional spatial grids and quadrature.
//!
//! Two domain shapes are supported: a periodic cell `[0, p)` discretized with
//! the uniform (midpoint) rule, and a bounded interval `[left, right]`
//! discretized with the trapezoid rule. Both rules have positive weights, which
//! the discrete comparison principles rely on.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reduce::ordered_sum;

/// Smallest grid the laboratory accepts.
pub const MIN_POINTS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least {MIN_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("domain length must be positive and finite, got {0}")]
    NonPositiveLength(f64),
    #[error("field has {got} values but the grid has {expected} points")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("fields live on different grids")]
    GridMismatch,
}

/// Shape of the spatial domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DomainKind {
    /// Periodic cell of length `period`; nodes at `j * period / n`.
    PeriodicCell { period: f64 },
    /// Closed interval with nodes on both end points.
    BoundedInterval { left: f64, right: f64 },
}

impl DomainKind {
    pub fn length(&self) -> f64 {
        match *self {
            DomainKind::PeriodicCell { period } => period,
            DomainKind::BoundedInterval { left, right } => right - left,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, DomainKind::PeriodicCell { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    kind: DomainKind,
    spacing: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    pub fn new(kind: DomainKind, n_points: usize) -> Result<Self, GridError> {
        if n_points < MIN_POINTS {
            return Err(GridError::TooFewPoints(n_points));
        }
        let length = kind.length();
        if !(length.is_finite() && length > 0.0) {
            return Err(GridError::NonPositiveLength(length));
        }
        let (origin, spacing) = match kind {
            DomainKind::PeriodicCell { period } => (0.0, period / n_points as f64),
            DomainKind::BoundedInterval { left, right } => {
                (left, (right - left) / (n_points - 1) as f64)
            }
        };
        let nodes = (0..n_points).map(|j| origin + j as f64 * spacing).collect();
        let mut weights = vec![spacing; n_points];
        if !kind.is_periodic() {
            weights[0] *= 0.5;
            weights[n_points - 1] *= 0.5;
        }
        Ok(Self {
            kind,
            spacing,
            nodes,
            weights,
        })
    }

    pub fn periodic(period: f64, n_points: usize) -> Result<Self, GridError> {
        Self::new(DomainKind::PeriodicCell { period }, n_points)
    }

    pub fn interval(left: f64, right: f64, n_points: usize) -> Result<Self, GridError> {
        Self::new(DomainKind::BoundedInterval { left, right }, n_points)
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn is_periodic(&self) -> bool {
        self.kind.is_periodic()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn length(&self) -> f64 {
        self.kind.length()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Quadrature of raw nodal values, summed in a fixed order.
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let products: Vec<f64> = values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .collect();
        ordered_sum(&products)
    }

    /// Evaluate `f` at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }
}

/// Nodal values of a function of space at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
    time: f64,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, time: f64) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { grid, values, time })
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let values = vec![value; grid.len()];
        Self {
            grid,
            values,
            time: 0.0,
        }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        let values = grid.sample(f);
        Self::new(grid, values, 0.0)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn max_norm(&self) -> f64 {
        max_norm(&self.values)
    }

    pub fn ensure_same_grid(&self, other: &Grid) -> Result<(), GridError> {
        if *self.grid == *other {
            Ok(())
        } else {
            Err(GridError::GridMismatch)
        }
    }
}

/// Quadrature of a field over its grid.
pub fn integrate(f: &Field) -> f64 {
    f.grid.integrate_values(&f.values)
}

pub fn max_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn min_value(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_value(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn periodic_spacing_and_weights() {
        let g = Grid::periodic(1.0, 100).unwrap();
        assert!((g.spacing() - 0.01).abs() < 1e-15);
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);

        let g = Grid::periodic(2.0, 64).unwrap();
        assert_eq!(g.spacing(), 0.03125);
    }

    #[test]
    fn bounded_trapezoid_weights() {
        let g = Grid::interval(0.0, 2.0, 201).unwrap();
        assert!((g.spacing() - 0.01).abs() < 1e-15);
        let total: f64 = g.weights().iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
        assert_eq!(g.nodes()[200], 2.0);
    }

    #[test]
    fn too_few_points() {
        assert_eq!(
            Grid::periodic(1.0, 15).unwrap_err(),
            GridError::TooFewPoints(15)
        );
        assert!(matches!(
            Grid::interval(1.0, 1.0, 32),
            Err(GridError::NonPositiveLength(_))
        ));
    }

    #[test]
    fn integrate_examples() {
        let g = Arc::new(Grid::periodic(1.0, 64).unwrap());
        assert!((integrate(&Field::constant(g, 1.0)) - 1.0).abs() < 1e-14);

        let g = Arc::new(Grid::interval(0.0, 1.0, 101).unwrap());
        let f = Field::from_fn(g, |x| x).unwrap();
        assert!((integrate(&f) - 0.5).abs() < 1e-10);

        // Periodic rectangle rule is exact for trigonometric polynomials of
        // low degree: the integral of sin^2(2 pi x) over one period is 1/2.
        let g = Arc::new(Grid::periodic(1.0, 128).unwrap());
        let f = Field::from_fn(g, |x| (2.0 * PI * x).sin().powi(2)).unwrap();
        assert!((integrate(&f) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_refinement_is_second_order() {
        let exact = 1.0 - (1.0_f64).cos();
        let err = |n| {
            let g = Arc::new(Grid::interval(0.0, 1.0, n).unwrap());
            (integrate(&Field::from_fn(g, f64::sin).unwrap()) - exact).abs()
        };
        let ratio = err(33) / err(65);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn field_rejects_bad_values() {
        let g = Arc::new(Grid::periodic(1.0, 16).unwrap());
        assert!(matches!(
            Field::new(g.clone(), vec![0.0; 3], 0.0),
            Err(GridError::LengthMismatch { .. })
        ));
        let mut v = vec![0.0; 16];
        v[4] = f64::NAN;
        assert_eq!(Field::new(g, v, 0.0).unwrap_err(), GridError::NonFinite(4));
    }

    proptest::proptest! {
        #[test]
        fn integrate_is_linear(
            alpha in -3.0..3.0f64,
            beta in -3.0..3.0f64,
            f in proptest::collection::vec(-5.0..5.0f64, 40),
            g in proptest::collection::vec(-5.0..5.0f64, 40),
        ) {
            let grid = Grid::interval(-1.0, 2.0, 40).unwrap();
            let combo: Vec<f64> = f.iter().zip(&g).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = grid.integrate_values(&combo);
            let rhs = alpha * grid.integrate_values(&f) + beta * grid.integrate_values(&g);
            proptest::prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
