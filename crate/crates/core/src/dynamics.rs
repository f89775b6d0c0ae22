//! Right-hand sides and explicit time integration.
//!
//! Every evolution in the crate goes through [`evolve`], which runs classical
//! RK4 with a fixed step, rejects negative undershoot beyond [`TOL_POS`] and,
//! when asked, enforces the a priori bound `max(|u0|, a_M/b_L) + TOL_POS`.

use std::sync::Arc;

use thiserror::Error;

use crate::coefficients::{
    geometry_constants, sample_extrema, CoefficientError, CoefficientExtrema, CoefficientSet,
    CoefficientTable, CoefficientValues, GeometryConstants,
};
use crate::grid::{max_norm, min_value, Field, Grid, GridError};
use crate::kernel::{Kernel, KernelError};
use crate::nonlocal_ops::{
    Backend, ConvolutionOperator, DispersalOperator, DispersalVariant, NonlocalError,
};

/// Discrete positivity and boundedness slack.
pub const TOL_POS: f64 = 1e-8;

/// Time samples per period used for coefficient extrema.
pub const EXTREMA_TIME_SAMPLES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Nonlocal(#[from] NonlocalError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("step {dt} exceeds the stability bound {dt_max}")]
    StepTooLarge { dt: f64, dt_max: f64 },
    #[error("state reached {value} at t = {t}, above the a priori bound {bound}")]
    BoundednessViolation { t: f64, value: f64, bound: f64 },
    #[error("initial data is negative ({value}) at index {index}")]
    NegativeInitialData { index: usize, value: f64 },
    #[error("state undershoots to {value} at index {index}, t = {t}")]
    NegativeUndershoot { t: f64, index: usize, value: f64 },
    #[error("state has length {got}, dynamics expects {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("time {t} lies outside the recorded window [{start}, {end}]")]
    OutsideTrajectory { t: f64, start: f64, end: f64 },
    #[error("empty time interval [{t0}, {t1}]")]
    EmptyInterval { t0: f64, t1: f64 },
}

/// A semi-discrete system `u' = F(u, t)` with `T`-periodic forcing.
pub trait Dynamics: Sync {
    fn state_len(&self) -> usize;

    /// Time period of the forcing.
    fn period(&self) -> f64;

    fn rhs_into(&self, u: &[f64], t: f64, out: &mut [f64]) -> Result<(), DynamicsError>;

    /// Stable step for states bounded by `u_cap`.
    fn dt_max(&self, u_cap: f64) -> f64;

    /// Constant level above which every constant is a strict super-solution.
    fn cap(&self) -> f64;
}

/// One of the three full problems.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    variant: DispersalVariant,
    grid: Arc<Grid>,
    j: Kernel,
    g: Kernel,
    dispersal: DispersalOperator,
    competition: ConvolutionOperator,
    coefficients: CoefficientSet,
    table: CoefficientTable,
    extrema: CoefficientExtrema,
    geometry: GeometryConstants,
}

impl ProblemSpec {
    pub fn new(
        variant: DispersalVariant,
        grid: Arc<Grid>,
        j: Kernel,
        g: Kernel,
        coefficients: CoefficientSet,
        backend: Backend,
    ) -> Result<Self, DynamicsError> {
        let dispersal = DispersalOperator::new(variant, &j, grid.clone(), backend)?;
        let competition = ConvolutionOperator::new(&g, grid.clone(), backend)?;
        let extrema = sample_extrema(&coefficients, &grid, EXTREMA_TIME_SAMPLES)?;
        let geometry = geometry_constants(&g, &j, &grid);
        let table = CoefficientTable::new(&coefficients, &grid);
        Ok(Self {
            variant,
            grid,
            j,
            g,
            dispersal,
            competition,
            coefficients,
            table,
            extrema,
            geometry,
        })
    }

    /// Same problem with the competition coefficient replaced by zero.
    pub fn without_competition(&self) -> Self {
        let mut cs = self.coefficients.clone();
        cs.c = crate::coefficients::CoefficientField::constant(0.0);
        let mut out = self.clone();
        out.table = CoefficientTable::new(&cs, &self.grid);
        out.extrema.c_max = 0.0;
        out.extrema.c_min = 0.0;
        out.coefficients = cs;
        out
    }

    pub fn variant(&self) -> DispersalVariant {
        self.variant
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn j(&self) -> &Kernel {
        &self.j
    }

    pub fn g(&self) -> &Kernel {
        &self.g
    }

    pub fn dispersal(&self) -> &DispersalOperator {
        &self.dispersal
    }

    pub fn competition(&self) -> &ConvolutionOperator {
        &self.competition
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coefficients
    }

    pub fn table(&self) -> &CoefficientTable {
        &self.table
    }

    pub fn extrema(&self) -> &CoefficientExtrema {
        &self.extrema
    }

    pub fn geometry(&self) -> &GeometryConstants {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    fn stability_dt(&self, u_cap: f64, competitor: f64) -> f64 {
        let e = &self.extrema;
        0.1 / (1.0 + e.a_max + 2.0 * e.b_max * u_cap + e.c_max * competitor)
    }

    fn check_len(&self, u: &[f64]) -> Result<(), DynamicsError> {
        if u.len() != self.len() {
            return Err(DynamicsError::StateLength {
                expected: self.len(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// `L[u] + u (a - b u - c κ)` where `κ` is the supplied competition field.
    fn logistic_into(
        &self,
        u: &[f64],
        kappa: &[f64],
        coef: &CoefficientValues,
        out: &mut [f64],
    ) -> Result<(), DynamicsError> {
        self.dispersal.apply_into(u, out)?;
        for i in 0..u.len() {
            out[i] += u[i] * (coef.a[i] - coef.b[i] * u[i] - coef.c[i] * kappa[i]);
        }
        Ok(())
    }
}

impl Dynamics for ProblemSpec {
    fn state_len(&self) -> usize {
        self.len()
    }

    fn period(&self) -> f64 {
        self.coefficients.period
    }

    fn rhs_into(&self, u: &[f64], t: f64, out: &mut [f64]) -> Result<(), DynamicsError> {
        self.check_len(u)?;
        let coef = self.table.at(t);
        let gu = self.competition.apply(u)?;
        self.logistic_into(u, &gu, &coef, out)
    }

    fn dt_max(&self, u_cap: f64) -> f64 {
        let u_cap = u_cap.max(self.cap());
        self.stability_dt(u_cap, u_cap)
    }

    fn cap(&self) -> f64 {
        self.extrema.growth_cap()
    }
}

/// `L[u] + u (a - b u - c G*u)` at time `t`.
pub fn rhs(spec: &ProblemSpec, u: &Field, t: f64) -> Result<Field, DynamicsError> {
    u.ensure_same_grid(spec.grid())?;
    let mut out = vec![0.0; u.values().len()];
    spec.rhs_into(u.values(), t, &mut out)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFiniteState { t });
    }
    Ok(Field::new(u.grid().clone(), out, t)?)
}

/// Nodal values (and time derivatives) of a field recorded along a time
/// window, interpolated by cubic Hermite polynomials.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, value: Vec<f64>, deriv: Vec<f64>) {
        debug_assert!(self.times.last().is_none_or(|&last| t > last));
        self.times.push(t);
        self.values.push(value);
        self.derivs.push(deriv);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn derivs(&self) -> &[Vec<f64>] {
        &self.derivs
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("empty trajectory")
    }

    /// Apply a linear map to every knot value and derivative.
    pub fn map_linear(
        &self,
        f: impl Fn(&[f64]) -> Result<Vec<f64>, DynamicsError>,
    ) -> Result<Self, DynamicsError> {
        Ok(Self {
            times: self.times.clone(),
            values: self.values.iter().map(|v| f(v)).collect::<Result<_, _>>()?,
            derivs: self.derivs.iter().map(|v| f(v)).collect::<Result<_, _>>()?,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |vs: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            vs.iter()
                .map(|v| v.iter().map(|x| x * factor).collect())
                .collect()
        };
        Self {
            times: self.times.clone(),
            values: scale(&self.values),
            derivs: scale(&self.derivs),
        }
    }

    /// Hermite interpolant at `t`; exact at knots.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<(), DynamicsError> {
        let (start, end) = (self.start(), self.end());
        let slack = 1e-12 * (1.0 + end.abs());
        if t < start - slack || t > end + slack {
            return Err(DynamicsError::OutsideTrajectory { t, start, end });
        }
        let t = t.clamp(start, end);
        let idx = self.times.partition_point(|&s| s <= t);
        if idx > 0 && self.times[idx - 1] == t {
            out.copy_from_slice(&self.values[idx - 1]);
            return Ok(());
        }
        let i = idx.saturating_sub(1).min(self.times.len() - 2);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let dt = t1 - t0;
        let s = (t - t0) / dt;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (y0, y1) = (&self.values[i], &self.values[i + 1]);
        let (f0, f1) = (&self.derivs[i], &self.derivs[i + 1]);
        for k in 0..out.len() {
            out[k] = h00 * y0[k] + h10 * dt * f0[k] + h01 * y1[k] + h11 * dt * f1[k];
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>, DynamicsError> {
        let mut out = vec![0.0; self.values[0].len()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }
}

/// A field prescribed as a function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeField {
    Constant(Vec<f64>),
    /// Defined on the recorded window only.
    Dense(Trajectory),
    /// One recorded period, extended periodically.
    Periodic { trajectory: Trajectory, period: f64 },
}

impl TimeField {
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<(), DynamicsError> {
        match self {
            TimeField::Constant(v) => {
                out.copy_from_slice(v);
                Ok(())
            }
            TimeField::Dense(tr) => tr.eval_into(t, out),
            TimeField::Periodic { trajectory, period } => {
                trajectory.eval_into(wrap_time(t, trajectory.start(), *period), out)
            }
        }
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>, DynamicsError> {
        let n = match self {
            TimeField::Constant(v) => v.len(),
            TimeField::Dense(tr) | TimeField::Periodic { trajectory: tr, .. } => tr.values()[0].len(),
        };
        let mut out = vec![0.0; n];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn map_linear(
        &self,
        f: impl Fn(&[f64]) -> Result<Vec<f64>, DynamicsError>,
    ) -> Result<Self, DynamicsError> {
        Ok(match self {
            TimeField::Constant(v) => TimeField::Constant(f(v)?),
            TimeField::Dense(tr) => TimeField::Dense(tr.map_linear(f)?),
            TimeField::Periodic { trajectory, period } => TimeField::Periodic {
                trajectory: trajectory.map_linear(f)?,
                period: *period,
            },
        })
    }

    /// Upper bound of the max norm over all knots.
    pub fn sup_norm(&self) -> f64 {
        match self {
            TimeField::Constant(v) => max_norm(v),
            TimeField::Dense(tr) | TimeField::Periodic { trajectory: tr, .. } => tr
                .values()
                .iter()
                .map(|v| max_norm(v))
                .fold(0.0, f64::max),
        }
    }
}

/// Reduce `t` into `[start, start + period]`.
pub fn wrap_time(t: f64, start: f64, period: f64) -> f64 {
    let shifted = t - start;
    let k = (shifted / period).floor();
    let r = shifted - k * period;
    // Landing a hair below the window end after rounding is fine; landing
    // above it is not.
    start + r.clamp(0.0, period)
}

/// The frozen-competitor logistic problem
/// `u_t = L[u] + u (a - c G*v̄ - c ε̄ - b u)`.
#[derive(Debug, Clone)]
pub struct FrozenLogisticSpec {
    base: Arc<ProblemSpec>,
    /// `G * v̄` as a function of time; `None` means `v̄ = 0`.
    competitor: Option<TimeField>,
    competitor_sup: f64,
    shift: f64,
}

impl FrozenLogisticSpec {
    /// `v̄ = 0, ε̄ = 0`: the pure nonlocal logistic equation.
    pub fn without_competitor(base: Arc<ProblemSpec>) -> Self {
        Self {
            base,
            competitor: None,
            competitor_sup: 0.0,
            shift: 0.0,
        }
    }

    /// Frozen competitor `v̄` given as a function of time.
    pub fn new(base: Arc<ProblemSpec>, competitor: &TimeField, shift: f64) -> Result<Self, DynamicsError> {
        let n = base.len();
        let probe = competitor.eval(0.0)?;
        if probe.len() != n {
            return Err(DynamicsError::StateLength {
                expected: n,
                got: probe.len(),
            });
        }
        let conv = base.competition().clone();
        let g_v = competitor.map_linear(|v| Ok(conv.apply(v)?))?;
        let competitor_sup = g_v.sup_norm();
        Ok(Self {
            base,
            competitor: Some(g_v),
            competitor_sup,
            shift,
        })
    }

    pub fn base(&self) -> &Arc<ProblemSpec> {
        &self.base
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }
}

impl Dynamics for FrozenLogisticSpec {
    fn state_len(&self) -> usize {
        self.base.len()
    }

    fn period(&self) -> f64 {
        self.base.period()
    }

    fn rhs_into(&self, u: &[f64], t: f64, out: &mut [f64]) -> Result<(), DynamicsError> {
        self.base.check_len(u)?;
        let coef = self.base.table.at(t);
        let mut kappa = vec![self.shift; u.len()];
        if let Some(c) = &self.competitor {
            c.eval_into(t, &mut kappa)?;
            for k in &mut kappa {
                *k += self.shift;
            }
        }
        self.base.logistic_into(u, &kappa, &coef, out)
    }

    fn dt_max(&self, u_cap: f64) -> f64 {
        let u_cap = u_cap.max(self.cap());
        self.base
            .stability_dt(u_cap, self.competitor_sup + self.shift.abs())
    }

    fn cap(&self) -> f64 {
        let e = self.base.extrema();
        (e.a_max + e.c_max * (-self.shift).max(0.0)) / e.b_min
    }
}

/// `L[u] + u (a - c G*v̄ - c ε̄ - b u)` at time `t`.
pub fn rhs_frozen(spec: &FrozenLogisticSpec, u: &Field, t: f64) -> Result<Field, DynamicsError> {
    u.ensure_same_grid(spec.base().grid())?;
    let mut out = vec![0.0; u.values().len()];
    spec.rhs_into(u.values(), t, &mut out)?;
    Ok(Field::new(u.grid().clone(), out, t)?)
}

/// The two-species system satisfied by a persistence envelope:
/// `Ū_t = L[Ū] + Ū (a - b Ū - c G*U̲)`, `U̲_t = L[U̲] + U̲ (a - b U̲ - c G*Ū)`.
/// State layout is `[Ū, U̲]`.
#[derive(Debug, Clone)]
pub struct CoupledSpec {
    base: Arc<ProblemSpec>,
}

impl CoupledSpec {
    pub fn new(base: Arc<ProblemSpec>) -> Self {
        Self { base }
    }

    pub fn base(&self) -> &Arc<ProblemSpec> {
        &self.base
    }
}

impl Dynamics for CoupledSpec {
    fn state_len(&self) -> usize {
        2 * self.base.len()
    }

    fn period(&self) -> f64 {
        self.base.period()
    }

    fn rhs_into(&self, u: &[f64], t: f64, out: &mut [f64]) -> Result<(), DynamicsError> {
        let n = self.base.len();
        if u.len() != 2 * n {
            return Err(DynamicsError::StateLength {
                expected: 2 * n,
                got: u.len(),
            });
        }
        let coef = self.base.table.at(t);
        let (upper, lower) = u.split_at(n);
        let g_upper = self.base.competition.apply(upper)?;
        let g_lower = self.base.competition.apply(lower)?;
        let (out_upper, out_lower) = out.split_at_mut(n);
        self.base.logistic_into(upper, &g_lower, &coef, out_upper)?;
        self.base.logistic_into(lower, &g_upper, &coef, out_lower)
    }

    fn dt_max(&self, u_cap: f64) -> f64 {
        self.base.dt_max(u_cap)
    }

    fn cap(&self) -> f64 {
        self.base.cap()
    }
}

/// How much of the run to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Record {
    #[default]
    None,
    /// Keep the state every `k` steps, including both end points.
    Every(usize),
    /// Keep states and derivatives at every step as a [`Trajectory`].
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvolveOptions {
    /// Requested step; the stability bound is used when absent.
    pub dt: Option<f64>,
    /// Exact number of steps; overrides `dt`.
    pub steps: Option<usize>,
    pub record: Record,
    /// Enforce `max(|u0|, cap) + TOL_POS` along the run.
    pub check_bound: bool,
}

impl EvolveOptions {
    pub fn bounded() -> Self {
        Self {
            check_bound: true,
            ..Self::default()
        }
    }

    pub fn with_record(mut self, record: Record) -> Self {
        self.record = record;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = Some(steps);
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveResult {
    pub state: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    pub steps: usize,
    /// Recorded `(t, state)` pairs for [`Record::Every`].
    pub samples: Vec<(f64, Vec<f64>)>,
    pub trajectory: Option<Trajectory>,
    /// Largest max norm seen at step boundaries.
    pub max_norm: f64,
    /// Smallest nodal value seen at step boundaries.
    pub min_value: f64,
}

/// One classical RK4 step with stage times `t`, `t + dt/2`, `t + dt`.
pub fn step_rk4<D: Dynamics + ?Sized>(
    d: &D,
    u: &[f64],
    t: f64,
    dt: f64,
) -> Result<Vec<f64>, DynamicsError> {
    let dt_max = d.dt_max(max_norm(u));
    if dt > dt_max {
        return Err(DynamicsError::StepTooLarge { dt, dt_max });
    }
    let mut k1 = vec![0.0; u.len()];
    d.rhs_into(u, t, &mut k1)?;
    let next = rk4_from(d, u, &k1, t, dt)?;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFiniteState { t: t + dt });
    }
    Ok(next)
}

fn rk4_from<D: Dynamics + ?Sized>(
    d: &D,
    u: &[f64],
    k1: &[f64],
    t: f64,
    dt: f64,
) -> Result<Vec<f64>, DynamicsError> {
    let n = u.len();
    let mut stage = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    for i in 0..n {
        stage[i] = u[i] + 0.5 * dt * k1[i];
    }
    d.rhs_into(&stage, t + 0.5 * dt, &mut k2)?;
    for i in 0..n {
        stage[i] = u[i] + 0.5 * dt * k2[i];
    }
    d.rhs_into(&stage, t + 0.5 * dt, &mut k3)?;
    for i in 0..n {
        stage[i] = u[i] + dt * k3[i];
    }
    d.rhs_into(&stage, t + dt, &mut k4)?;
    Ok((0..n)
        .map(|i| u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrate from `t0` to `t1`.
pub fn evolve<D: Dynamics + ?Sized>(
    d: &D,
    u0: &[f64],
    t0: f64,
    t1: f64,
    opts: EvolveOptions,
) -> Result<EvolveResult, DynamicsError> {
    evolve_observed(d, u0, t0, t1, opts, |_, _, _| {})
}

/// [`evolve`] with a callback invoked at every step boundary (including
/// the initial state) with `(step index, time, state)`.
pub fn evolve_observed<D: Dynamics + ?Sized>(
    d: &D,
    u0: &[f64],
    t0: f64,
    t1: f64,
    opts: EvolveOptions,
    mut observe: impl FnMut(usize, f64, &[f64]),
) -> Result<EvolveResult, DynamicsError> {
    if u0.len() != d.state_len() {
        return Err(DynamicsError::StateLength {
            expected: d.state_len(),
            got: u0.len(),
        });
    }
    if !(t1 > t0) {
        return Err(DynamicsError::EmptyInterval { t0, t1 });
    }
    if let Some(index) = u0.iter().position(|v| !v.is_finite()) {
        let _ = index;
        return Err(DynamicsError::NonFiniteState { t: t0 });
    }
    if let Some((index, &value)) = u0.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(DynamicsError::NegativeInitialData { index, value });
    }
    let bound = max_norm(u0).max(d.cap()) + TOL_POS;
    let dt_max = d.dt_max(bound);
    let span = t1 - t0;
    let steps = match (opts.steps, opts.dt) {
        (Some(s), _) => s.max(1),
        (None, Some(dt)) => {
            if dt > dt_max {
                return Err(DynamicsError::StepTooLarge { dt, dt_max });
            }
            ((span / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
        }
        (None, None) => (span / dt_max).ceil().max(1.0) as usize,
    };
    let dt = span / steps as f64;
    if dt > dt_max {
        return Err(DynamicsError::StepTooLarge { dt, dt_max });
    }

    let n = u0.len();
    let mut u = u0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut samples = Vec::new();
    let mut traj = matches!(opts.record, Record::Dense).then(Trajectory::new);
    let mut max_seen = max_norm(&u);
    let mut min_seen = min_value(&u);
    for step in 0..=steps {
        let t = if step == steps { t1 } else { t0 + step as f64 * dt };
        observe(step, t, &u);
        if let Record::Every(k) = opts.record {
            if step % k.max(1) == 0 || step == steps {
                samples.push((t, u.clone()));
            }
        }
        let need_k1 = step < steps || traj.is_some();
        if need_k1 {
            d.rhs_into(&u, t, &mut k1)?;
        }
        if let Some(tr) = traj.as_mut() {
            tr.push(t, u.clone(), k1.clone());
        }
        if step == steps {
            break;
        }
        let next = rk4_from(d, &u, &k1, t, dt)?;
        let t_next = t0 + (step + 1) as f64 * dt;
        for (index, &value) in next.iter().enumerate() {
            if !value.is_finite() {
                return Err(DynamicsError::NonFiniteState { t: t_next });
            }
            if value < -TOL_POS {
                return Err(DynamicsError::NegativeUndershoot {
                    t: t_next,
                    index,
                    value,
                });
            }
            if opts.check_bound && value > bound {
                return Err(DynamicsError::BoundednessViolation {
                    t: t_next,
                    value,
                    bound,
                });
            }
        }
        max_seen = max_seen.max(max_norm(&next));
        min_seen = min_seen.min(min_value(&next));
        u = next;
    }
    Ok(EvolveResult {
        state: u,
        t: t1,
        dt,
        steps,
        samples,
        trajectory: traj,
        max_norm: max_seen,
        min_value: min_seen,
    })
}

/// Worst violations of the sup/sub pair inequalities
///
/// `Ū_t - L[Ū] ≥ Ū (a - b Ū - c G*U̲)` and `U̲_t - L[U̲] ≤ U̲ (a - b U̲ - c G*Ū)`
///
/// evaluated at the knots of each trajectory. Returned values are the largest
/// amounts by which each inequality fails (zero or negative when it holds).
pub fn sup_sub_defect(
    spec: &ProblemSpec,
    upper: &TimeField,
    upper_knots: &Trajectory,
    lower: &TimeField,
    lower_knots: &Trajectory,
) -> Result<(f64, f64), DynamicsError> {
    let n = spec.len();
    let mut other = vec![0.0; n];
    let mut defect = |knots: &Trajectory, partner: &TimeField, sign: f64| -> Result<f64, DynamicsError> {
        let mut worst = f64::NEG_INFINITY;
        let mut rhs_v = vec![0.0; n];
        for ((&t, v), dv) in knots.times().iter().zip(knots.values()).zip(knots.derivs()) {
            partner.eval_into(t, &mut other)?;
            let g_other = spec.competition.apply(&other)?;
            let coef = spec.table.at(t);
            spec.logistic_into(v, &g_other, &coef, &mut rhs_v)?;
            for i in 0..n {
                // upper: rhs - dv must be <= 0; lower: dv - rhs must be <= 0.
                worst = worst.max(sign * (rhs_v[i] - dv[i]));
            }
        }
        Ok(worst)
    };
    let up = defect(upper_knots, lower, 1.0)?;
    let lo = defect(lower_knots, upper, -1.0)?;
    Ok((up, lo))
}
