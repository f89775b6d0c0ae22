//! Dispersal and competition kernels.
//!
//! Kernels are polynomial bumps `(1 - (x/r)^2)^p`, optionally tilted by
//! `(1 + s x / r)` to produce an asymmetric profile. With `p >= 2` the
//! profile is C¹ and vanishes together with its derivative at `|x| = r`.
//! Normalization is discrete: the samples at integer multiples of the grid
//! spacing carry unit mass under the uniform rule, so the induced convolution
//! operators are exactly row-stochastic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

/// Mass tolerance every constructed kernel satisfies.
pub const MASS_TOL: f64 = 1e-12;

/// Oversampling factor for extrema searches.
pub const EXTREMA_REFINEMENT: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel radius must be positive and finite, got {0}")]
    NonPositiveRadius(f64),
    #[error("bump exponent must be at least 2 for a C1 profile, got {0}")]
    InvalidExponent(u32),
    #[error("grid spacing {spacing} does not resolve radius {radius} (need radius/spacing >= 2)")]
    InvalidSpacing { radius: f64, spacing: f64 },
    #[error("skew must lie in (-1, 1) to keep the profile nonnegative, got {0}")]
    SkewOutOfRange(f64),
    #[error("discrete normalization failed: mass {0} after rescale")]
    NormalizationFailure(f64),
    #[error("competition radius {r1} exceeds dispersal radius {r0}")]
    SupportMismatch { r0: f64, r1: f64 },
    #[error("period {period} is smaller than the grid spacing {spacing}")]
    PeriodTooSmall { period: f64, spacing: f64 },
    #[error("kernel sampled at spacing {kernel} but grid spacing is {grid}")]
    SpacingMismatch { kernel: f64, grid: f64 },
    #[error("wrapping requires a periodic grid whose cell length equals the period")]
    NotPeriodicCell,
}

/// Which role a kernel plays in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelRole {
    J,
    G,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    radius: f64,
    exponent: u32,
    skew: f64,
    spacing: f64,
    norm_constant: f64,
    /// Normalized samples at offsets `-half_width..=half_width` times spacing.
    weights: Vec<f64>,
}

/// Symmetric polynomial bump of the given radius, normalized on a grid of the
/// given spacing.
pub fn make_bump_kernel(radius: f64, exponent: u32, grid_spacing: f64) -> Result<Kernel, KernelError> {
    Kernel::bump(radius, exponent, 0.0, grid_spacing)
}

impl Kernel {
    pub fn bump(radius: f64, exponent: u32, skew: f64, spacing: f64) -> Result<Self, KernelError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(KernelError::NonPositiveRadius(radius));
        }
        if exponent < 2 {
            return Err(KernelError::InvalidExponent(exponent));
        }
        if !(skew.is_finite() && skew.abs() < 1.0) {
            return Err(KernelError::SkewOutOfRange(skew));
        }
        if !(spacing.is_finite() && spacing > 0.0) || radius / spacing < 2.0 {
            return Err(KernelError::InvalidSpacing { radius, spacing });
        }
        let half_width = (radius / spacing + 1e-9).floor() as isize;
        let raw: Vec<f64> = (-half_width..=half_width)
            .map(|k| raw_profile(k as f64 * spacing, radius, exponent, skew))
            .collect();
        let raw_mass: f64 = raw.iter().map(|v| v * spacing).sum();
        if !(raw_mass.is_finite() && raw_mass > 0.0) {
            return Err(KernelError::NormalizationFailure(raw_mass));
        }
        let norm_constant = 1.0 / raw_mass;
        let weights: Vec<f64> = raw.iter().map(|v| v * norm_constant).collect();
        let mass: f64 = weights.iter().map(|v| v * spacing).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(KernelError::NormalizationFailure(mass));
        }
        Ok(Self {
            radius,
            exponent,
            skew,
            spacing,
            norm_constant,
            weights,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    pub fn skew(&self) -> f64 {
        self.skew
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn norm_constant(&self) -> f64 {
        self.norm_constant
    }

    pub fn is_symmetric(&self) -> bool {
        self.skew == 0.0
    }

    /// Number of nonzero offsets on each side of the origin.
    pub fn half_width(&self) -> usize {
        self.weights.len() / 2
    }

    /// Samples at offsets `-half_width..=half_width`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sample at integer offset `k` (in grid steps); zero outside the support.
    pub fn weight(&self, k: isize) -> f64 {
        let hw = self.half_width() as isize;
        if k.abs() > hw {
            0.0
        } else {
            self.weights[(k + hw) as usize]
        }
    }

    /// Normalized continuous profile.
    pub fn profile(&self, x: f64) -> f64 {
        self.norm_constant * raw_profile(x, self.radius, self.exponent, self.skew)
    }

    /// Discrete mass `sum_k h K(k h)`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().map(|v| v * self.spacing).sum()
    }

    /// Largest normalized sample value.
    pub fn sup(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// Dense sample points in `[-r, r]` at `EXTREMA_REFINEMENT` times the
    /// working resolution, end points included.
    pub(crate) fn dense_points(&self, r: f64) -> Vec<f64> {
        let step = self.spacing / EXTREMA_REFINEMENT as f64;
        let n = (r / step + 1e-9).floor() as isize;
        let mut pts: Vec<f64> = (-n..=n).map(|k| k as f64 * step).collect();
        if (n as f64 * step - r).abs() > 1e-14 {
            pts.insert(0, -r);
            pts.push(r);
        }
        pts
    }
}

fn raw_profile(x: f64, radius: f64, exponent: u32, skew: f64) -> f64 {
    let s = x / radius;
    if s.abs() >= 1.0 {
        return 0.0;
    }
    (1.0 - s * s).powi(exponent as i32) * (1.0 + skew * s)
}

/// `J_m = inf_{B_{r1}} J` and `G_M = sup_{B_{r1}} G`, by dense sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelExtrema {
    pub j_min: f64,
    pub j_min_at: f64,
    pub g_max: f64,
    pub g_max_at: f64,
}

/// Extrema of `J` and `G` over the competition ball `B_{r1}`.
///
/// With `require_support_order`, a competition radius larger than the
/// dispersal radius is rejected instead of silently reporting `J_m = 0`.
pub fn kernel_extrema(
    j: &Kernel,
    g: &Kernel,
    require_support_order: bool,
) -> Result<KernelExtrema, KernelError> {
    let r1 = g.radius();
    if require_support_order && r1 > j.radius() {
        return Err(KernelError::SupportMismatch {
            r0: j.radius(),
            r1,
        });
    }
    let mut out = KernelExtrema {
        j_min: f64::INFINITY,
        j_min_at: 0.0,
        g_max: f64::NEG_INFINITY,
        g_max_at: 0.0,
    };
    for x in j.dense_points(r1) {
        let v = j.profile(x);
        if v < out.j_min {
            out.j_min = v;
            out.j_min_at = x;
        }
    }
    for x in g.dense_points(r1) {
        let v = g.profile(x);
        if v > out.g_max {
            out.g_max = v;
            out.g_max_at = x;
        }
    }
    Ok(out)
}

/// Periodization of a kernel onto one cell: `Ĵ(z) = sum_k J(z + k p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WrappedKernel {
    base: Kernel,
    period: f64,
    samples: Vec<f64>,
}

pub fn wrap_kernel(base: &Kernel, period: f64, grid: &Grid) -> Result<WrappedKernel, KernelError> {
    if period < grid.spacing() {
        return Err(KernelError::PeriodTooSmall {
            period,
            spacing: grid.spacing(),
        });
    }
    match grid.kind() {
        crate::grid::DomainKind::PeriodicCell { period: p } if (p - period).abs() <= 1e-12 * p => {}
        _ => return Err(KernelError::NotPeriodicCell),
    }
    check_spacing(base, grid)?;
    let n = grid.len() as isize;
    let hw = base.half_width() as isize;
    let mut samples = vec![0.0; n as usize];
    for k in -hw..=hw {
        samples[k.rem_euclid(n) as usize] += base.weight(k);
    }
    Ok(WrappedKernel {
        base: base.clone(),
        period,
        samples,
    })
}

pub(crate) fn check_spacing(kernel: &Kernel, grid: &Grid) -> Result<(), KernelError> {
    let (hk, hg) = (kernel.spacing(), grid.spacing());
    if (hk - hg).abs() > 1e-12 * hg {
        return Err(KernelError::SpacingMismatch { kernel: hk, grid: hg });
    }
    Ok(())
}

impl WrappedKernel {
    pub fn base(&self) -> &Kernel {
        &self.base
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// `Ĵ` at offsets `0, h, 2h, ...` of the cell.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Entry `(i, j)` of the induced operator, quadrature weight included.
    pub fn matrix_entry(&self, i: usize, j: usize) -> f64 {
        let n = self.samples.len();
        self.base.spacing() * self.samples[(j + n - i) % n]
    }

    /// Dense `n x n` matrix of the induced convolution.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let n = self.samples.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.matrix_entry(i, j)).collect())
            .collect()
    }

    pub fn mass(&self) -> f64 {
        self.samples.iter().map(|v| v * self.base.spacing()).sum()
    }
}
