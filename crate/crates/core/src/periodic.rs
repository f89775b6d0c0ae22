//! Time-periodic solutions by iteration of the period map.
//!
//! Starting from a super-solution (or sub-solution) seed, the iterates
//! `u(nT)` decrease (or increase) monotonically to a fixed point of the
//! time-`T` map. The monotonicity is asserted at every iterate; a breach
//! beyond [`MONOTONE_SLACK`] means the discretization is too coarse.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::{sample_extrema, spatial_variation, CoefficientSet, CoefficientTable};
use crate::dynamics::{evolve, Dynamics, DynamicsError, EvolveOptions, Record, TimeField, Trajectory};
use crate::grid::{max_abs_diff, max_norm, min_value, Grid};

pub const DEFAULT_SNAPSHOTS: usize = 64;
pub const DEFAULT_TOL_PERIOD: f64 = 1e-7;
pub const DEFAULT_MAX_ITERS: usize = 2000;
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PeriodicError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("period map did not converge in {iters} iterations (last change {last_change})")]
    NonConvergence { iters: usize, last_change: f64 },
    #[error("iterate {iter} breaks monotonicity by {amount}")]
    MonotonicityBreach { iter: usize, amount: f64 },
    #[error("seed is not ordered against its first image (off by {amount})")]
    SeedNotOrdered { amount: f64 },
    #[error("orbit is not strictly positive (minimum {min})")]
    NotPositive { min: f64 },
    #[error("coefficients vary in space (spread {variation})")]
    NotHomogeneous { variation: f64 },
    #[error("homogeneous contraction needs b_L > c_M, got b_L = {b_min}, c_M = {c_max}")]
    A5Violated { b_min: f64, c_max: f64 },
    #[error("orbits have different shapes")]
    ShapeMismatch,
    #[error("invalid orbit options: {0}")]
    InvalidOptions(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    FromAbove,
    FromBelow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub snapshots: usize,
    /// Integration steps per snapshot interval; derived from the stability
    /// bound when absent.
    pub substeps: Option<usize>,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL_PERIOD,
            max_iters: DEFAULT_MAX_ITERS,
            snapshots: DEFAULT_SNAPSHOTS,
            substeps: None,
        }
    }
}

/// One period of a periodic solution.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbit {
    period: f64,
    snapshot_times: Vec<f64>,
    snapshots: Vec<Vec<f64>>,
    residual: f64,
    iterations: usize,
    direction: Direction,
    /// Every integration step of the defining run over `[0, T]`.
    dense: Trajectory,
}

impl PeriodicOrbit {
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn snapshot_times(&self) -> &[f64] {
        &self.snapshot_times
    }

    pub fn snapshots(&self) -> &[Vec<f64>] {
        &self.snapshots
    }

    /// State at `t = 0` (the start of the defining run).
    pub fn initial(&self) -> &[f64] {
        &self.snapshots[0]
    }

    /// State at the end of the defining run, `u(T)`.
    pub fn terminal(&self) -> &[f64] {
        self.dense.values().last().expect("empty orbit")
    }

    /// `|u(T) - u(0)|_∞` of the defining run.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn dense(&self) -> &Trajectory {
        &self.dense
    }

    /// The orbit as a periodic function of time.
    pub fn as_time_field(&self) -> TimeField {
        TimeField::Periodic {
            trajectory: self.dense.clone(),
            period: self.period,
        }
    }

    pub fn min_value(&self) -> f64 {
        self.snapshots
            .iter()
            .map(|s| min_value(s))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.snapshots
            .iter()
            .map(|s| s.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Replicate a one-point orbit across `n` nodes.
    fn broadcast(&self, n: usize) -> Self {
        let spread = |v: &Vec<f64>| vec![v[0]; n];
        let mut dense = Trajectory::new();
        for ((&t, v), d) in self
            .dense
            .times()
            .iter()
            .zip(self.dense.values())
            .zip(self.dense.derivs())
        {
            dense.push(t, spread(v), spread(d));
        }
        Self {
            period: self.period,
            snapshot_times: self.snapshot_times.clone(),
            snapshots: self.snapshots.iter().map(spread).collect(),
            residual: self.residual,
            iterations: self.iterations,
            direction: self.direction,
            dense,
        }
    }
}

/// Default sub-solution seed `0.01 a_L / b_M`.
pub fn sub_solution_seed(a_min: f64, b_max: f64) -> f64 {
    0.01 * a_min / b_max
}

/// Steps per snapshot interval so that the step respects the stability bound.
pub fn substeps<D: Dynamics + ?Sized>(d: &D, seed: &[f64], snapshots: usize) -> usize {
    let bound = max_norm(seed).max(d.cap()) + crate::dynamics::TOL_POS;
    let dt_max = d.dt_max(bound);
    let per = d.period() / snapshots as f64;
    ((per / dt_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Iterate the period map from `seed` until two consecutive changes fall
/// below `opts.tol`; the last period becomes the orbit.
pub fn poincare_orbit<D: Dynamics + ?Sized>(
    d: &D,
    seed: &[f64],
    direction: Direction,
    opts: PeriodicOptions,
) -> Result<PeriodicOrbit, PeriodicError> {
    if !(opts.tol > 0.0) || opts.snapshots == 0 || opts.max_iters == 0 {
        return Err(PeriodicError::InvalidOptions(
            "tol, snapshots and max_iters must be positive",
        ));
    }
    let period = d.period();
    let k = opts
        .substeps
        .unwrap_or_else(|| substeps(d, seed, opts.snapshots))
        .max(1);
    let steps = k * opts.snapshots;
    let run_opts = EvolveOptions::bounded()
        .with_steps(steps)
        .with_record(Record::Dense);
    let mut u = seed.to_vec();
    let mut previous_small = false;
    let mut last_change = f64::INFINITY;
    for iter in 1..=opts.max_iters {
        let run = evolve(d, &u, 0.0, period, run_opts)?;
        let next = run.state;
        let breach = match direction {
            Direction::FromAbove => next
                .iter()
                .zip(&u)
                .map(|(n, o)| n - o)
                .fold(f64::NEG_INFINITY, f64::max),
            Direction::FromBelow => u
                .iter()
                .zip(&next)
                .map(|(o, n)| o - n)
                .fold(f64::NEG_INFINITY, f64::max),
        };
        if breach > MONOTONE_SLACK {
            return Err(if iter == 1 {
                PeriodicError::SeedNotOrdered { amount: breach }
            } else {
                PeriodicError::MonotonicityBreach {
                    iter,
                    amount: breach,
                }
            });
        }
        last_change = max_abs_diff(&next, &u);
        if last_change <= opts.tol {
            if previous_small {
                let dense = run.trajectory.expect("dense run");
                let snapshot_times: Vec<f64> =
                    (0..opts.snapshots).map(|j| dense.times()[j * k]).collect();
                let snapshots: Vec<Vec<f64>> = (0..opts.snapshots)
                    .map(|j| dense.values()[j * k].clone())
                    .collect();
                let orbit = PeriodicOrbit {
                    period,
                    snapshot_times,
                    snapshots,
                    residual: last_change,
                    iterations: iter,
                    direction,
                    dense,
                };
                let min = orbit.min_value();
                if !(min > 0.0) {
                    return Err(PeriodicError::NotPositive { min });
                }
                return Ok(orbit);
            }
            previous_small = true;
        } else {
            previous_small = false;
        }
        u = next;
    }
    Err(PeriodicError::NonConvergence {
        iters: opts.max_iters,
        last_change,
    })
}

/// `u' = u (a(t) - (b(t) + c(t)) u)` for space-independent coefficients.
struct HomogeneousDynamics {
    table: CoefficientTable,
    period: f64,
    a_max: f64,
    bc_min: f64,
    bc_max: f64,
}

impl Dynamics for HomogeneousDynamics {
    fn state_len(&self) -> usize {
        1
    }

    fn period(&self) -> f64 {
        self.period
    }

    fn rhs_into(&self, u: &[f64], t: f64, out: &mut [f64]) -> Result<(), DynamicsError> {
        let c = self.table.at(t);
        out[0] = u[0] * (c.a[0] - (c.b[0] + c.c[0]) * u[0]);
        Ok(())
    }

    fn dt_max(&self, u_cap: f64) -> f64 {
        0.1 / (1.0 + self.a_max + 2.0 * self.bc_max * u_cap.max(self.cap()))
    }

    fn cap(&self) -> f64 {
        self.a_max / self.bc_min
    }
}

/// The spatially homogeneous periodic solution `φ*` under space-independent
/// coefficients with `b_L > c_M`, broadcast onto `grid`.
pub fn homogeneous_orbit(
    cs: &CoefficientSet,
    grid: &Grid,
    opts: PeriodicOptions,
) -> Result<PeriodicOrbit, PeriodicError> {
    let variation = spatial_variation(cs, grid, opts.snapshots.max(32));
    if variation > 1e-12 {
        return Err(PeriodicError::NotHomogeneous { variation });
    }
    let ex = sample_extrema(cs, grid, opts.snapshots.max(32)).map_err(DynamicsError::from)?;
    if ex.b_min <= ex.c_max {
        return Err(PeriodicError::A5Violated {
            b_min: ex.b_min,
            c_max: ex.c_max,
        });
    }
    let point = Grid::periodic(1.0, crate::grid::MIN_POINTS).expect("fixed grid");
    let table = CoefficientTable::new(cs, &point);
    // b + c extrema over the same time lattice.
    let mut bc_min = f64::INFINITY;
    let mut bc_max = 0.0_f64;
    let nt = opts.snapshots.max(32) * 4;
    for j in 0..nt {
        let v = table.at(j as f64 * cs.period / nt as f64);
        bc_min = bc_min.min(v.b[0] + v.c[0]);
        bc_max = bc_max.max(v.b[0] + v.c[0]);
    }
    let d = HomogeneousDynamics {
        table,
        period: cs.period,
        a_max: ex.a_max,
        bc_min,
        bc_max,
    };
    // Room above the sampled maximum so the seed is a strict super-solution.
    let seed = [1.05 * d.cap()];
    let orbit = poincare_orbit(&d, &seed, Direction::FromAbove, opts)?;
    Ok(orbit.broadcast(grid.len()))
}

/// Periodic solution of the scalar logistic equation `u' = u (a(t) - β(t) u)`
/// at time `t`, in closed form through `v = 1/u`:
/// `v(t) = ∫_{t-T}^t β(s) e^{-∫_s^t a} ds / (1 - e^{-∫_0^T a})`.
/// Both integrals use the trapezoid rule on `nodes` intervals.
pub fn bernoulli_value(
    a: impl Fn(f64) -> f64,
    beta: impl Fn(f64) -> f64,
    period: f64,
    t: f64,
    nodes: usize,
) -> f64 {
    let n = nodes.max(2);
    let h = period / n as f64;
    let s = |i: usize| t - period + i as f64 * h;
    // Tail integrals ∫_{s_i}^t a, accumulated from the right.
    let mut tail = vec![0.0; n + 1];
    for i in (0..n).rev() {
        tail[i] = tail[i + 1] + 0.5 * h * (a(s(i)) + a(s(i + 1)));
    }
    let f: Vec<f64> = (0..=n).map(|i| beta(s(i)) * (-tail[i]).exp()).collect();
    let integral = h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[n]));
    let v = integral / (1.0 - (-tail[0]).exp());
    1.0 / v
}

/// [`bernoulli_value`] for space-independent coefficients with `β = b + c`,
/// the spatially homogeneous periodic solution `φ*`.
pub fn homogeneous_closed_form(cs: &CoefficientSet, t: f64) -> f64 {
    let at = |f: &crate::coefficients::CoefficientField, s: f64| f.eval(0.0, s, 0.0, 1.0, cs.period);
    bernoulli_value(
        |s| at(&cs.a, s),
        |s| at(&cs.b, s) + at(&cs.c, s),
        cs.period,
        t,
        20_000,
    )
}

/// Largest max-norm difference over corresponding snapshots.
pub fn orbit_distance(o1: &PeriodicOrbit, o2: &PeriodicOrbit) -> Result<f64, PeriodicError> {
    if o1.snapshots.len() != o2.snapshots.len()
        || (o1.period - o2.period).abs() > 1e-12 * o1.period
        || o1
            .snapshots
            .iter()
            .zip(&o2.snapshots)
            .any(|(a, b)| a.len() != b.len())
    {
        return Err(PeriodicError::ShapeMismatch);
    }
    Ok(o1
        .snapshots
        .iter()
        .zip(&o2.snapshots)
        .map(|(a, b)| max_abs_diff(a, b))
        .fold(0.0, f64::max))
}

/// Run `d` for one extra period from the orbit's initial state and report
/// the largest deviation from the stored snapshots.
pub fn resimulate_defect<D: Dynamics + ?Sized>(
    d: &D,
    orbit: &PeriodicOrbit,
) -> Result<f64, PeriodicError> {
    let m = orbit.snapshots.len();
    let k = (orbit.dense.len() - 1) / m;
    let run = evolve(
        d,
        orbit.initial(),
        0.0,
        orbit.period,
        EvolveOptions::bounded()
            .with_steps(k * m)
            .with_record(Record::Every(k)),
    )?;
    let mut worst = max_abs_diff(&run.state, orbit.initial());
    for ((_, s), o) in run.samples.iter().zip(&orbit.snapshots) {
        worst = worst.max(max_abs_diff(s, o));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientField;
    use crate::dynamics::{FrozenLogisticSpec, ProblemSpec};
    use crate::kernel::make_bump_kernel;
    use crate::nonlocal_ops::{Backend, DispersalVariant};
    use std::f64::consts::TAU;
    use std::sync::Arc;

    fn spec_with(cs: CoefficientSet, n: usize) -> Arc<ProblemSpec> {
        let grid = Arc::new(Grid::periodic(1.0, n).unwrap());
        let j = make_bump_kernel(0.4, 2, grid.spacing()).unwrap();
        let g = make_bump_kernel(0.18, 2, grid.spacing()).unwrap();
        Arc::new(ProblemSpec::new(DispersalVariant::Periodic, grid, j, g, cs, Backend::Direct).unwrap())
    }

    fn sinusoidal_a() -> CoefficientSet {
        CoefficientSet::new(
            1.0,
            CoefficientField::constant(1.0).with_time_mode(1, 0.5, 0.0),
            CoefficientField::constant(1.0),
            CoefficientField::constant(0.0),
        )
        .unwrap()
    }

    /// Periodic solution of `u' = u (a - β u)` with `a(t) = 1 + 0.5 sin(2πt)`
    /// through `v = 1/u`: `v(t) = e^{-A(0,t)} v(0) + ∫_0^t β e^{-A(s,t)} ds`
    /// and `v(0) = ∫_0^1 β e^{-A(s,1)} ds / (1 - e^{-A(0,1)})`.
    pub(crate) fn bernoulli_oracle(beta: f64, t: f64) -> f64 {
        let big_a = |s: f64, e: f64| (e - s) + 0.5 / TAU * ((TAU * s).cos() - (TAU * e).cos());
        let quad = |e: f64| {
            // Composite Simpson on [0, e].
            let n = 20_000;
            let h = e / n as f64;
            (0..=n)
                .map(|i| {
                    let s = i as f64 * h;
                    let w = if i == 0 || i == n {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    w * beta * (-big_a(s, e)).exp()
                })
                .sum::<f64>()
                * h
                / 3.0
        };
        let v0 = quad(1.0) / (1.0 - (-big_a(0.0, 1.0)).exp());
        let v = if t == 0.0 {
            v0
        } else {
            (-big_a(0.0, t)).exp() * v0 + quad(t)
        };
        1.0 / v
    }

    #[test]
    fn logistic_constant_from_above() {
        let spec = spec_with(CoefficientSet::constants(1.0, 1.0, 0.0, 1.0).unwrap(), 64);
        let d = FrozenLogisticSpec::without_competitor(spec);
        let orbit = poincare_orbit(&d, &vec![2.0; 64], Direction::FromAbove, PeriodicOptions::default()).unwrap();
        assert!(orbit.snapshots().iter().flatten().all(|v| (v - 1.0).abs() < 1e-7));
        assert!(orbit.residual() <= 1e-7);
        assert_eq!(orbit.snapshots().len(), 64);
    }

    #[test]
    fn logistic_sinusoidal_matches_bernoulli() {
        let spec = spec_with(sinusoidal_a(), 32);
        let d = FrozenLogisticSpec::without_competitor(spec);
        let opts = PeriodicOptions::default();
        let above = poincare_orbit(&d, &vec![2.0; 32], Direction::FromAbove, opts).unwrap();
        let below = poincare_orbit(&d, &vec![sub_solution_seed(0.5, 1.0); 32], Direction::FromBelow, opts).unwrap();
        for (j, &t) in above.snapshot_times().iter().enumerate().step_by(8) {
            let oracle = bernoulli_oracle(1.0, t);
            assert!((above.snapshots()[j][0] - oracle).abs() < 1e-6, "t = {t}");
        }
        assert!(orbit_distance(&above, &below).unwrap() <= 2e-7);
    }

    #[test]
    fn closed_form_matches_hand_written_oracle() {
        let cs = sinusoidal_a();
        for t in [0.0, 0.1, 0.25, 0.6, 0.99] {
            let v = homogeneous_closed_form(&cs, t);
            assert!((v - bernoulli_oracle(1.0, t)).abs() < 1e-8, "t = {t}");
        }
        let cs = CoefficientSet::constants(1.0, 1.0, 0.2, 1.0).unwrap();
        assert!((homogeneous_closed_form(&cs, 0.3) - 1.0 / 1.2).abs() < 1e-9);
    }

    #[test]
    fn homogeneous_orbit_examples() {
        let grid = Grid::periodic(1.0, 16).unwrap();
        let cs = CoefficientSet::constants(1.0, 1.0, 0.2, 1.0).unwrap();
        let o = homogeneous_orbit(&cs, &grid, PeriodicOptions::default()).unwrap();
        assert!(o.snapshots().iter().flatten().all(|v| (v - 1.0 / 1.2).abs() < 1e-7));

        let mut cs = sinusoidal_a();
        cs.b = CoefficientField::constant(0.7);
        cs.c = CoefficientField::constant(0.3);
        let o = homogeneous_orbit(&cs, &grid, PeriodicOptions::default()).unwrap();
        assert!((o.snapshots()[0][5] - bernoulli_oracle(1.0, 0.0)).abs() < 1e-6);
        assert!((o.snapshots()[16][0] - bernoulli_oracle(1.0, 0.25)).abs() < 1e-6);

        let bad = CoefficientSet::constants(1.0, 0.5, 0.6, 1.0).unwrap();
        assert!(matches!(
            homogeneous_orbit(&bad, &grid, PeriodicOptions::default()),
            Err(PeriodicError::A5Violated { .. })
        ));
        let mut het = CoefficientSet::constants(1.0, 1.0, 0.2, 1.0).unwrap();
        het.a = CoefficientField::constant(1.0).with_space_mode(1, 0.2, 0.0);
        assert!(matches!(
            homogeneous_orbit(&het, &grid, PeriodicOptions::default()),
            Err(PeriodicError::NotHomogeneous { .. })
        ));
    }

    #[test]
    fn full_model_constants_from_both_sides() {
        let spec = spec_with(CoefficientSet::constants(1.0, 1.0, 0.2, 1.0).unwrap(), 32);
        let opts = PeriodicOptions::default();
        let above = poincare_orbit(spec.as_ref(), &vec![1.2; 32], Direction::FromAbove, opts).unwrap();
        let below = poincare_orbit(spec.as_ref(), &vec![0.01; 32], Direction::FromBelow, opts).unwrap();
        for o in [&above, &below] {
            assert!(o.snapshots().iter().flatten().all(|v| (v - 1.0 / 1.2).abs() < 1e-6));
        }
        assert!(orbit_distance(&above, &below).unwrap() <= 2e-7);
    }

    #[test]
    fn zero_competition_paths_coincide() {
        let mut cs = sinusoidal_a();
        cs.a.space_modes.push(crate::coefficients::SpaceMode {
            wavenumber: 1,
            amplitude: 0.2,
            phase: 0.0,
            time_modulation: None,
        });
        let spec = spec_with(cs, 32);
        let frozen = FrozenLogisticSpec::without_competitor(spec.clone());
        let opts = PeriodicOptions::default();
        let a = poincare_orbit(spec.as_ref(), &vec![2.0; 32], Direction::FromAbove, opts).unwrap();
        let b = poincare_orbit(&frozen, &vec![2.0; 32], Direction::FromAbove, opts).unwrap();
        assert!(orbit_distance(&a, &b).unwrap() <= 1e-10);
        assert!(resimulate_defect(spec.as_ref(), &a).unwrap() <= 2e-7);
    }

    #[test]
    fn seed_on_wrong_side_is_rejected() {
        let spec = spec_with(CoefficientSet::constants(1.0, 1.0, 0.0, 1.0).unwrap(), 16);
        let d = FrozenLogisticSpec::without_competitor(spec);
        assert!(matches!(
            poincare_orbit(&d, &[0.1; 16], Direction::FromAbove, PeriodicOptions::default()),
            Err(PeriodicError::SeedNotOrdered { .. })
        ));
    }

    #[test]
    fn distance_examples() {
        let spec = spec_with(CoefficientSet::constants(1.0, 1.0, 0.0, 1.0).unwrap(), 16);
        let d = FrozenLogisticSpec::without_competitor(spec);
        let o = poincare_orbit(&d, &[2.0; 16], Direction::FromAbove, PeriodicOptions::default()).unwrap();
        assert_eq!(orbit_distance(&o, &o).unwrap(), 0.0);
        let mut shifted = o.clone();
        for s in &mut shifted.snapshots {
            for v in s.iter_mut() {
                *v = 0.9;
            }
        }
        let mut one = o.clone();
        for s in &mut one.snapshots {
            for v in s.iter_mut() {
                *v = 1.0;
            }
        }
        assert!((orbit_distance(&one, &shifted).unwrap() - 0.1).abs() < 1e-15);
        let mut short = o.clone();
        short.snapshots.pop();
        assert_eq!(orbit_distance(&o, &short).unwrap_err(), PeriodicError::ShapeMismatch);
    }
}
