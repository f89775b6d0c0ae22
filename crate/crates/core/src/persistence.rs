//! Persistence envelopes.
//!
//! The envelope `(U̲, Ū)` is the limit of two monotone sequences of frozen
//! logistic periodic problems: `u̲_k` solves the problem with competitor
//! `ū^{k-1}`, `ū^k` the problem with competitor `u̲_k`, starting from
//! `u̲_0 = 0` and `ū^0 = u*`. Every outer step checks the chain
//! `u̲_{k-1} ≤ u̲_k ≤ ū^k ≤ ū^{k-1}` at all snapshots.
//!
//! [`refine_pair`] is the other monotone scheme, one step of the shifted
//! linear iteration that improves a sup/sub pair over a finite horizon.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::certify::a2_lattice;
use crate::dynamics::{
    evolve, evolve_observed, Dynamics, DynamicsError, EvolveOptions, FrozenLogisticSpec,
    ProblemSpec, Record, TimeField, Trajectory, CoupledSpec,
};
use crate::grid::{max_abs_diff, max_norm, min_value};
use crate::nonlocal_ops::DispersalVariant;
use crate::periodic::{
    orbit_distance, poincare_orbit, sub_solution_seed, substeps, Direction, PeriodicError,
    PeriodicOptions, PeriodicOrbit,
};

/// Slack on the ordering chain of the outer iteration.
pub const ORDER_SLACK: f64 = 1e-9;
/// Slack on the ordering of a refined pair.
pub const REFINE_SLACK: f64 = 1e-8;
/// Seed of `u*` from above, relative to `a_M / b_L`.
const CAP_MARGIN: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PersistenceError {
    #[error(transparent)]
    Periodic(#[from] PeriodicError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("(A2) is not certified: margin {margin}")]
    A2NotCertified { margin: f64 },
    #[error("outer step {step}: {relation} breached by {amount}")]
    OrderingBreach {
        step: usize,
        relation: &'static str,
        amount: f64,
    },
    #[error("envelope iteration did not converge in {iters} steps (changes {lower_change}, {upper_change})")]
    NonConvergence {
        iters: usize,
        lower_change: f64,
        upper_change: f64,
    },
    #[error("envelope residual {residual} exceeds {limit}")]
    ResidualTooLarge { residual: f64, limit: f64 },
    #[error("initial data not admissible: {0}")]
    InadmissibleInitialData(String),
    #[error("trajectory still outside the envelope at the horizon (excess {excess})")]
    NotAbsorbed { excess: f64 },
    #[error("shift {shift} is below the required {required}")]
    ShiftTooSmall { shift: f64, required: f64 },
    #[error("initial data not between the pair (off by {amount})")]
    InitialNotBracketed { amount: f64 },
    #[error("invalid options: {0}")]
    InvalidOptions(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeOptions {
    /// Outer stopping tolerance on both sequences.
    pub tol: f64,
    pub max_outer: usize,
    pub periodic: PeriodicOptions,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        let periodic = PeriodicOptions::default();
        Self {
            tol: periodic.tol,
            max_outer: 200,
            periodic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub lower: PeriodicOrbit,
    pub upper: PeriodicOrbit,
    pub iterations: usize,
    /// `max (Ū - U̲)` over the snapshot lattice.
    pub gap: f64,
    /// One coupled period from `(Ū(0), U̲(0))` against both orbits.
    pub residual: f64,
    /// `u̲_1` and `ū^1`, the first outer iterates.
    pub first_lower: PeriodicOrbit,
    pub first_upper: PeriodicOrbit,
    /// `ū^0 = u*`.
    pub u_star: PeriodicOrbit,
    /// Integration steps per snapshot interval shared by every orbit.
    pub substeps: usize,
    /// Largest change of each sequence at every outer step.
    pub history: Vec<(f64, f64)>,
}

/// Worst breach of `lo ≤ hi` over the shared snapshot lattice.
fn order_breach(lo: &PeriodicOrbit, hi: &PeriodicOrbit) -> f64 {
    lo.snapshots()
        .iter()
        .zip(hi.snapshots())
        .flat_map(|(l, h)| l.iter().zip(h).map(|(a, b)| a - b))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check_order(
    step: usize,
    relation: &'static str,
    lo: &PeriodicOrbit,
    hi: &PeriodicOrbit,
) -> Result<(), PersistenceError> {
    let amount = order_breach(lo, hi);
    if amount > ORDER_SLACK {
        return Err(PersistenceError::OrderingBreach {
            step,
            relation,
            amount,
        });
    }
    Ok(())
}

/// Steps per snapshot interval valid for every problem of the iteration.
fn common_substeps(spec: &Arc<ProblemSpec>, level: f64, snapshots: usize) -> Result<usize, DynamicsError> {
    let n = spec.len();
    let worst = FrozenLogisticSpec::new(spec.clone(), &TimeField::Constant(vec![level; n]), 0.0)?;
    Ok(substeps(&worst, &vec![level; n], snapshots))
}

/// `u*` from above, integrated on a prescribed step lattice.
pub fn u_star_orbit(
    spec: &Arc<ProblemSpec>,
    opts: PeriodicOptions,
) -> Result<PeriodicOrbit, PersistenceError> {
    let level = spec.cap() * (1.0 + CAP_MARGIN);
    let d = FrozenLogisticSpec::without_competitor(spec.clone());
    Ok(poincare_orbit(&d, &vec![level; spec.len()], Direction::FromAbove, opts)?)
}

/// The persistence envelope by the alternating frozen-logistic iteration.
pub fn persistence_envelope(
    spec: &Arc<ProblemSpec>,
    opts: EnvelopeOptions,
) -> Result<Envelope, PersistenceError> {
    if !(opts.tol > 0.0) || opts.max_outer == 0 {
        return Err(PersistenceError::InvalidOptions("tol and max_outer must be positive"));
    }
    let n = spec.len();
    let level = spec.cap() * (1.0 + CAP_MARGIN);
    let mut popts = opts.periodic;
    let k = match popts.substeps {
        Some(k) => k,
        None => common_substeps(spec, level, popts.snapshots)?,
    };
    popts.substeps = Some(k);

    let u_star = u_star_orbit(spec, popts)?;
    let a2 = a2_lattice(spec, &u_star)?;
    if !(a2.margin > 0.0) {
        return Err(PersistenceError::A2NotCertified { margin: a2.margin });
    }

    let ex = spec.extrema();
    let mut eps0 = sub_solution_seed(ex.a_min, ex.b_max);
    let mut lower_prev: Option<PeriodicOrbit> = None;
    let mut upper_prev = u_star.clone();
    let mut first: Option<(PeriodicOrbit, PeriodicOrbit)> = None;
    let mut history = Vec::new();
    for step in 1..=opts.max_outer {
        let frozen = FrozenLogisticSpec::new(spec.clone(), &upper_prev.as_time_field(), 0.0)?;
        let lower = match &lower_prev {
            Some(prev) => poincare_orbit(&frozen, prev.initial(), Direction::FromBelow, popts)?,
            None => loop {
                // The seed must sit below the first image; shrink it if not.
                match poincare_orbit(&frozen, &vec![eps0; n], Direction::FromBelow, popts) {
                    Err(PeriodicError::SeedNotOrdered { .. }) if eps0 > 1e-8 => eps0 *= 0.1,
                    other => break other?,
                }
            },
        };
        let frozen = FrozenLogisticSpec::new(spec.clone(), &lower.as_time_field(), 0.0)?;
        let upper = poincare_orbit(&frozen, upper_prev.initial(), Direction::FromAbove, popts)?;

        if let Some(prev) = &lower_prev {
            check_order(step, "lower_{k-1} <= lower_k", prev, &lower)?;
        }
        check_order(step, "lower_k <= upper_k", &lower, &upper)?;
        check_order(step, "upper_k <= upper_{k-1}", &upper, &upper_prev)?;

        let lower_change = match &lower_prev {
            Some(prev) => orbit_distance(&lower, prev)?,
            None => lower.max_value(),
        };
        let upper_change = orbit_distance(&upper, &upper_prev)?;
        history.push((lower_change, upper_change));
        if first.is_none() {
            first = Some((lower.clone(), upper.clone()));
        }
        let done = lower_change <= opts.tol && upper_change <= opts.tol;
        lower_prev = Some(lower);
        upper_prev = upper;
        if done {
            let lower = lower_prev.expect("set above");
            let upper = upper_prev;
            let gap = order_breach(&lower, &upper).max(0.0);
            let residual = coupled_residual(spec, &upper, &lower, k)?;
            let limit = 10.0 * popts.tol;
            if residual > limit {
                return Err(PersistenceError::ResidualTooLarge { residual, limit });
            }
            let (first_lower, first_upper) = first.expect("at least one step");
            return Ok(Envelope {
                lower,
                upper,
                iterations: step,
                gap,
                residual,
                first_lower,
                first_upper,
                u_star,
                substeps: k,
                history,
            });
        }
    }
    let (lower_change, upper_change) = history.last().copied().unwrap_or((f64::NAN, f64::NAN));
    Err(PersistenceError::NonConvergence {
        iters: opts.max_outer,
        lower_change,
        upper_change,
    })
}

/// Integrate the coupled system for one period from `(Ū(0), U̲(0))` and
/// return the worst snapshot deviation from the two orbits.
pub fn coupled_residual(
    spec: &Arc<ProblemSpec>,
    upper: &PeriodicOrbit,
    lower: &PeriodicOrbit,
    substeps: usize,
) -> Result<f64, DynamicsError> {
    let n = spec.len();
    let m = upper.snapshots().len();
    let coupled = CoupledSpec::new(spec.clone());
    let mut state = upper.initial().to_vec();
    state.extend_from_slice(lower.initial());
    let mut worst = 0.0_f64;
    let opts = EvolveOptions::default().with_steps(substeps * m);
    evolve_observed(&coupled, &state, 0.0, spec.period(), opts, |step, _, u| {
        if step % substeps != 0 {
            return;
        }
        let j = (step / substeps) % m;
        let target_hi = if step / substeps == m { upper.terminal() } else { &upper.snapshots()[j] };
        let target_lo = if step / substeps == m { lower.terminal() } else { &lower.snapshots()[j] };
        worst = worst
            .max(max_abs_diff(&u[..n], target_hi))
            .max(max_abs_diff(&u[n..], target_lo));
    })?;
    // Closing the loop: the coupled state after one period against t = 0.
    Ok(worst)
}

fn check_admissible(spec: &ProblemSpec, u0: &[f64]) -> Result<(), PersistenceError> {
    if u0.len() != spec.len() {
        return Err(PersistenceError::InadmissibleInitialData(format!(
            "expected {} values, got {}",
            spec.len(),
            u0.len()
        )));
    }
    if u0.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(PersistenceError::InadmissibleInitialData(
            "values must be finite and nonnegative".into(),
        ));
    }
    match spec.variant() {
        DispersalVariant::Periodic if !(min_value(u0) > 0.0) => Err(
            PersistenceError::InadmissibleInitialData("infimum must be positive".into()),
        ),
        _ if !(max_norm(u0) > 0.0) => Err(PersistenceError::InadmissibleInitialData(
            "data must not vanish identically".into(),
        )),
        _ => Ok(()),
    }
}

/// Steps per snapshot interval for the full equation started at `u0`.
fn run_substeps(spec: &ProblemSpec, u0: &[f64], snapshots: usize) -> usize {
    substeps(spec, u0, snapshots)
}

/// Largest distance outside `[U̲ - ε, Ū + ε]` at every snapshot of a run.
fn excursions(
    spec: &Arc<ProblemSpec>,
    env: &Envelope,
    u0: &[f64],
    t_max: f64,
    eps: f64,
) -> Result<Vec<(f64, f64)>, PersistenceError> {
    let period = spec.period();
    let m = env.lower.snapshots().len();
    let k = run_substeps(spec, u0, m);
    let cadence = period / m as f64;
    let intervals = ((t_max / cadence) - 1e-9).ceil().max(1.0) as usize;
    let t_end = intervals as f64 * cadence;
    let mut out = Vec::with_capacity(intervals + 1);
    let opts = EvolveOptions::bounded().with_steps(intervals * k);
    evolve_observed(spec.as_ref(), u0, 0.0, t_end, opts, |step, _, u| {
        if step % k != 0 {
            return;
        }
        let s = step / k;
        let j = s % m;
        let lo = &env.lower.snapshots()[j];
        let hi = &env.upper.snapshots()[j];
        let excess = u
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(v, (l, h))| (l - eps - v).max(v - h - eps))
            .fold(f64::NEG_INFINITY, f64::max);
        out.push((s as f64 * cadence, excess));
    })?;
    Ok(out)
}

/// First snapshot time after which the run stays within `[U̲ - ε, Ū + ε]`.
pub fn check_absorption(
    spec: &Arc<ProblemSpec>,
    env: &Envelope,
    u0: &[f64],
    eps: f64,
    t_max: f64,
) -> Result<f64, PersistenceError> {
    check_admissible(spec, u0)?;
    let trace = excursions(spec, env, u0, t_max, eps)?;
    let last = trace.last().copied().expect("nonempty run");
    if last.1 > 0.0 {
        return Err(PersistenceError::NotAbsorbed { excess: last.1 });
    }
    let entry = trace
        .iter()
        .rposition(|(_, e)| *e > 0.0)
        .map(|i| trace[i + 1].0)
        .unwrap_or(0.0);
    Ok(entry)
}

/// Worst excursion outside the envelope over `periods` periods from `u0`
/// (negative when strictly inside).
pub fn invariance_excess(
    spec: &Arc<ProblemSpec>,
    env: &Envelope,
    u0: &[f64],
    periods: usize,
) -> Result<f64, PersistenceError> {
    check_admissible(spec, u0)?;
    let trace = excursions(spec, env, u0, periods as f64 * spec.period(), 0.0)?;
    Ok(trace.iter().map(|(_, e)| *e).fold(f64::NEG_INFINITY, f64::max))
}

/// One step of the shifted linear scheme for a sup/sub pair.
struct RefineSystem {
    base: Arc<ProblemSpec>,
    upper0: TimeField,
    lower0: TimeField,
    /// `G * Ū⁰` and `G * U̲⁰`.
    g_upper0: TimeField,
    g_lower0: TimeField,
    shift: f64,
    level: f64,
}

impl Dynamics for RefineSystem {
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
        let coef = self.base.table().at(t);
        let up0 = self.upper0.eval(t)?;
        let lo0 = self.lower0.eval(t)?;
        let g_up0 = self.g_upper0.eval(t)?;
        let g_lo0 = self.g_lower0.eval(t)?;
        let (upper, lower) = u.split_at(n);
        let (out_upper, out_lower) = out.split_at_mut(n);
        self.base.dispersal().apply_into(upper, out_upper)?;
        self.base.dispersal().apply_into(lower, out_lower)?;
        for i in 0..n {
            let (a, b, c) = (coef.a[i], coef.b[i], coef.c[i]);
            out_upper[i] += up0[i] * (a - b * up0[i]) - c * upper[i] * g_lo0[i]
                - self.shift * (upper[i] - up0[i]);
            out_lower[i] += lo0[i] * (a - b * lo0[i]) - c * lower[i] * g_up0[i]
                - self.shift * (lower[i] - lo0[i]);
        }
        Ok(())
    }

    fn dt_max(&self, u_cap: f64) -> f64 {
        let e = self.base.extrema();
        let s = u_cap.max(self.level);
        0.1 / (1.0 + self.shift + e.a_max + 2.0 * e.b_max * s + e.c_max * s)
    }

    fn cap(&self) -> f64 {
        self.level
    }
}

#[derive(Debug, Clone)]
pub struct RefinedPair {
    pub upper: Trajectory,
    pub lower: Trajectory,
}

impl RefinedPair {
    /// `max (Ū¹ - U̲¹)` at time index `i` of the shared step lattice.
    pub fn gap_at(&self, i: usize) -> f64 {
        self.upper.values()[i]
            .iter()
            .zip(&self.lower.values()[i])
            .map(|(u, l)| u - l)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Split a dense trajectory of a stacked `[first, second]` state.
fn split_trajectory(tr: &Trajectory, n: usize) -> (Trajectory, Trajectory) {
    let mut a = Trajectory::new();
    let mut b = Trajectory::new();
    for ((&t, v), d) in tr.times().iter().zip(tr.values()).zip(tr.derivs()) {
        a.push(t, v[..n].to_vec(), d[..n].to_vec());
        b.push(t, v[n..].to_vec(), d[n..].to_vec());
    }
    (a, b)
}

/// One refinement step of a sup/sub pair over `[0, horizon]`, both
/// components started from `u0`.
pub fn refine_pair(
    spec: &Arc<ProblemSpec>,
    upper0: &TimeField,
    lower0: &TimeField,
    u0: &[f64],
    shift: f64,
    horizon: f64,
) -> Result<RefinedPair, PersistenceError> {
    let n = spec.len();
    let ex = spec.extrema();
    let level = upper0.sup_norm();
    let required = (2.0 * ex.b_max * level - ex.a_min).max(0.0);
    if !(shift >= required) {
        return Err(PersistenceError::ShiftTooSmall { shift, required });
    }
    if u0.len() != n {
        return Err(DynamicsError::StateLength {
            expected: n,
            got: u0.len(),
        }
        .into());
    }
    let up_start = upper0.eval(0.0)?;
    let lo_start = lower0.eval(0.0)?;
    let off = u0
        .iter()
        .zip(lo_start.iter().zip(&up_start))
        .map(|(v, (l, h))| (l - v).max(v - h))
        .fold(f64::NEG_INFINITY, f64::max);
    if off > REFINE_SLACK {
        return Err(PersistenceError::InitialNotBracketed { amount: off });
    }
    let conv = spec.competition().clone();
    let system = RefineSystem {
        base: spec.clone(),
        g_upper0: upper0.map_linear(|v| Ok(conv.apply(v)?))?,
        g_lower0: lower0.map_linear(|v| Ok(conv.apply(v)?))?,
        upper0: upper0.clone(),
        lower0: lower0.clone(),
        shift,
        level,
    };
    let mut state = u0.to_vec();
    state.extend_from_slice(u0);
    let run = evolve(
        &system,
        &state,
        0.0,
        horizon,
        EvolveOptions::default().with_record(Record::Dense),
    )?;
    let (upper, lower) = split_trajectory(&run.trajectory.expect("dense run"), n);
    let mut up0 = vec![0.0; n];
    let mut lo0 = vec![0.0; n];
    for ((&t, hi), lo) in upper.times().iter().zip(upper.values()).zip(lower.values()) {
        upper0.eval_into(t, &mut up0)?;
        lower0.eval_into(t, &mut lo0)?;
        for i in 0..n {
            let checks = [
                ("lower0 <= lower1", lo0[i] - lo[i]),
                ("lower1 <= upper1", lo[i] - hi[i]),
                ("upper1 <= upper0", hi[i] - up0[i]),
            ];
            for (relation, amount) in checks {
                if amount > REFINE_SLACK {
                    return Err(PersistenceError::OrderingBreach {
                        step: 1,
                        relation,
                        amount,
                    });
                }
            }
        }
    }
    Ok(RefinedPair { upper, lower })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::hat_bounds;
    use crate::dynamics::tests::{heterogeneous_spec, periodic_spec};

    fn constant_orbit_value(o: &PeriodicOrbit) -> (f64, f64) {
        (o.min_value(), o.max_value())
    }

    #[test]
    fn constants_collapse_to_coexistence_root() {
        let spec = periodic_spec(1.0, 1.0, 0.2);
        let env = persistence_envelope(&spec, EnvelopeOptions::default()).unwrap();
        let root = 1.0 / 1.2;
        for o in [&env.lower, &env.upper] {
            let (lo, hi) = constant_orbit_value(o);
            assert!((lo - root).abs() < 1e-6 && (hi - root).abs() < 1e-6, "{lo} {hi}");
        }
        assert!(env.gap <= 2.0 * EnvelopeOptions::default().tol, "gap {}", env.gap);
        assert!(env.residual <= 1e-6);
        let hb = hat_bounds(spec.extrema(), spec.geometry(), spec.variant()).unwrap();
        assert!((hb.upper - 5.0 / 6.0).abs() < 1e-15 && (hb.lower - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn no_competition_gives_u_star_twice() {
        let spec = periodic_spec(1.0, 1.0, 0.0);
        let opts = EnvelopeOptions::default();
        let env = persistence_envelope(&spec, opts).unwrap();
        assert!(env.gap <= 2.0 * opts.tol, "gap {}", env.gap);
        assert!(orbit_distance(&env.upper, &env.u_star).unwrap() <= 2.0 * opts.tol);
    }

    #[test]
    fn heterogeneous_envelope_is_ordered_and_invariant() {
        let spec = heterogeneous_spec();
        let env = persistence_envelope(&spec, EnvelopeOptions::default()).unwrap();
        assert!(env.lower.min_value() > 0.0);
        assert!(order_breach(&env.lower, &env.upper) <= ORDER_SLACK);
        // History of both sequences is nonincreasing after the first step.
        assert!(env.history.len() == env.iterations);
        let n = spec.len();
        let inside: Vec<f64> = (0..n)
            .map(|i| {
                let (l, h) = (env.lower.initial()[i], env.upper.initial()[i]);
                l + (h - l) * (i as f64 / n as f64)
            })
            .collect();
        let excess = invariance_excess(&spec, &env, &inside, 3).unwrap();
        assert!(excess <= 1e-6, "{excess}");
    }

    #[test]
    fn absorption_from_far_above_and_inadmissible_data() {
        let spec = periodic_spec(1.0, 1.0, 0.2);
        let env = persistence_envelope(&spec, EnvelopeOptions::default()).unwrap();
        let n = spec.len();
        let t = check_absorption(&spec, &env, &vec![10.0; n], 0.05, 30.0).unwrap();
        assert!(t > 0.0 && t < 30.0, "{t}");
        let inside = env.lower.initial().to_vec();
        assert_eq!(check_absorption(&spec, &env, &inside, 0.05, 5.0).unwrap(), 0.0);
        let mut holed = vec![0.5; n];
        holed[3] = 0.0;
        assert!(matches!(
            check_absorption(&spec, &env, &holed, 0.05, 5.0),
            Err(PersistenceError::InadmissibleInitialData(_))
        ));
    }

    #[test]
    fn refinement_fixes_exact_solutions() {
        let spec = periodic_spec(1.0, 1.0, 0.2);
        let n = spec.len();
        let root = vec![1.0 / 1.2; n];
        let field = TimeField::Constant(root.clone());
        let pair = refine_pair(&spec, &field, &field, &root, 2.0, 2.0).unwrap();
        for v in pair.upper.values().iter().chain(pair.lower.values()) {
            assert!(max_abs_diff(v, &root) < 1e-12);
        }

        // A genuine solution trajectory, used as both members.
        let u0: Vec<f64> = (0..n).map(|i| 0.5 + 0.3 * (i as f64 / n as f64)).collect();
        let run = evolve(
            spec.as_ref(),
            &u0,
            0.0,
            2.0,
            EvolveOptions::default().with_steps(400).with_record(Record::Dense),
        )
        .unwrap();
        let tr = TimeField::Dense(run.trajectory.unwrap());
        let pair = refine_pair(&spec, &tr, &tr, &u0, 2.0, 2.0).unwrap();
        for (&t, v) in pair.upper.times().iter().zip(pair.upper.values()) {
            assert!(max_abs_diff(v, &tr.eval(t).unwrap()) < 1e-8);
        }
    }

    #[test]
    fn refinement_shrinks_constant_gap() {
        let spec = periodic_spec(1.0, 1.0, 0.2);
        let n = spec.len();
        let eps = 0.05;
        let upper0 = TimeField::Constant(vec![1.0; n]);
        let lower0 = TimeField::Constant(vec![eps; n]);
        let pair = refine_pair(&spec, &upper0, &lower0, &vec![0.5; n], 2.0, 1.0).unwrap();
        for i in 1..pair.upper.len() {
            assert!(pair.gap_at(i) < 1.0 - eps);
        }
        assert!(pair.gap_at(pair.upper.len() - 1) < 0.9 * (1.0 - eps));
    }

    #[test]
    fn small_shift_rejected() {
        let spec = periodic_spec(1.0, 1.0, 0.2);
        let n = spec.len();
        let big = TimeField::Constant(vec![5.0; n]);
        let small = TimeField::Constant(vec![0.1; n]);
        assert!(matches!(
            refine_pair(&spec, &big, &small, &vec![1.0; n], 0.0, 1.0),
            Err(PersistenceError::ShiftTooSmall { .. })
        ));
    }
}
