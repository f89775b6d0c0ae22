//! Evaluation of the standing assumptions and their sufficient conditions.
//!
//! Every record carries a margin, the signed distance to violation; a record
//! holds exactly when its margin is strictly positive. Lattice conditions are
//! evaluated over the space grid times the orbit snapshot times.

use std::fmt::Write as _;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::coefficients::{spatial_variation, CoefficientExtrema, CoefficientSet, GeometryConstants};
use crate::dynamics::{DynamicsError, ProblemSpec, EXTREMA_TIME_SAMPLES};
use crate::grid::Grid;
use crate::kernel::{kernel_extrema, Kernel, KernelError, MASS_TOL};
use crate::nonlocal_ops::DispersalVariant;
use crate::periodic::PeriodicOrbit;
use crate::persistence::Envelope;

/// Spatial spread below which coefficients count as homogeneous.
pub const HOMOGENEITY_TOL: f64 = 1e-12;
/// A lattice margin within this multiple of the orbit residual is not decided.
pub const INDETERMINATE_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("support order violated: r0 = {r0} must exceed r1 = {r1}")]
    SupportOrderViolated { r0: f64, r1: f64 },
    #[error("(A2) needs the periodic solution u*")]
    MissingUStar,
    #[error("(A4) needs a persistence envelope")]
    MissingEnvelope,
    #[error("bracket condition violated (margin {margin})")]
    Eq74Violated { margin: f64 },
    #[error("degenerate denominator {value}")]
    DegenerateDenominator { value: f64 },
    #[error("closed-form bounds are not available for this variant")]
    UnsupportedVariant,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Holds,
    Fails,
    /// Sign decided by less than the numerical error of its inputs.
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

impl Witness {
    fn at(x: f64, t: f64) -> Self {
        Self {
            x: Some(x),
            t: Some(t),
        }
    }

    fn point(x: f64) -> Self {
        Self { x: Some(x), t: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRecord {
    pub name: String,
    pub holds: bool,
    pub margin: f64,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    /// Closed-form sufficient margin reported next to a direct check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proxy_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ConditionRecord {
    pub fn new(name: &str, margin: f64) -> Self {
        let holds = margin > 0.0;
        Self {
            name: name.to_string(),
            holds,
            margin,
            status: if holds { Status::Holds } else { Status::Fails },
            witness: None,
            proxy_margin: None,
            note: None,
        }
    }

    fn with_witness(mut self, w: Witness) -> Self {
        self.witness = Some(w);
        self
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// `C₀`, the largest `C` with `J ≥ c_M C G`; unbounded when `c_M = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum C0 {
    Finite(f64),
    Unbounded,
}

impl C0 {
    pub fn value(self) -> f64 {
        match self {
            C0::Finite(v) => v,
            C0::Unbounded => f64::INFINITY,
        }
    }
}

impl Serialize for C0 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            C0::Finite(v) => s.serialize_f64(*v),
            C0::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HatBounds {
    /// `û*`
    pub upper: f64,
    /// `û₋`
    pub lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Derived {
    pub u_hat_upper: Option<f64>,
    pub u_hat_lower: Option<f64>,
    pub c0: Option<C0>,
    pub j_m: f64,
    pub g_big_m: f64,
    pub g_m: f64,
    pub g_max: f64,
    pub j_mass_min: f64,
    pub u_star_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub records: Vec<ConditionRecord>,
    pub derived: Derived,
}

impl Certificate {
    pub fn record(&self, name: &str) -> Option<&ConditionRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Plain text table: condition, holds, margin, witness.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:<14} {:>14}  witness", "condition", "holds", "margin");
        for r in &self.records {
            let holds = match r.status {
                Status::Holds => "yes",
                Status::Fails => "no",
                Status::Indeterminate if r.holds => "yes (marginal)",
                Status::Indeterminate => "no (marginal)",
            };
            let witness = match r.witness {
                Some(Witness { x: Some(x), t: Some(t) }) => format!("x={x:.6} t={t:.6}"),
                Some(Witness { x: Some(x), t: None }) => format!("x={x:.6}"),
                _ => "-".to_string(),
            };
            let _ = writeln!(out, "{:<12} {:<14} {:>14.6e}  {}", r.name, holds, r.margin, witness);
        }
        out
    }
}

/// `g` factors entering the closed forms: exactly one on periodic cells.
fn g_factors(variant: DispersalVariant, geo: &GeometryConstants) -> (f64, f64) {
    match variant {
        DispersalVariant::Periodic => (1.0, 1.0),
        _ => (geo.g_min, geo.g_max),
    }
}

/// Kernels are nonnegative, normalized and compactly supported.
pub fn check_a0(j: &Kernel, g: &Kernel) -> ConditionRecord {
    let mut bad = Vec::new();
    for (name, k) in [("J", j), ("G", g)] {
        if (k.mass() - 1.0).abs() > MASS_TOL {
            bad.push(format!("{name} mass {}", k.mass()));
        }
        if k.weights().iter().any(|w| *w < 0.0) {
            bad.push(format!("{name} has negative weights"));
        }
        if k.profile(k.radius()) != 0.0 || k.profile(-k.radius()) != 0.0 {
            bad.push(format!("{name} does not vanish at its radius"));
        }
    }
    if bad.is_empty() {
        ConditionRecord::new("A0", 1.0)
    } else {
        ConditionRecord::new("A0", -1.0).with_note(bad.join("; "))
    }
}

/// Margin of (A1): `a_L`, and `j_m - 1 + a_L` for the truncated variant.
pub fn a1_margin(variant: DispersalVariant, a_min: f64, j_mass_min: f64) -> f64 {
    match variant {
        DispersalVariant::DirichletType => a_min.min(j_mass_min - 1.0 + a_min),
        _ => a_min,
    }
}

pub fn check_a1(variant: DispersalVariant, ex: &CoefficientExtrema, geo: &GeometryConstants) -> ConditionRecord {
    ConditionRecord::new("A1", a1_margin(variant, ex.a_min, geo.j_min))
}

/// Minimum of the (A2) expression over the snapshot lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeExtremum {
    pub margin: f64,
    pub x: f64,
    pub t: f64,
}

pub fn a2_lattice(spec: &ProblemSpec, u_star: &PeriodicOrbit) -> Result<LatticeExtremum, DynamicsError> {
    let nodes = spec.grid().nodes();
    let mass = spec.dispersal().local_mass();
    let mut best = LatticeExtremum {
        margin: f64::INFINITY,
        x: 0.0,
        t: 0.0,
    };
    for (&t, u) in u_star.snapshot_times().iter().zip(u_star.snapshots()) {
        let coef = spec.table().at(t);
        let gu = spec.competition().apply(u)?;
        for i in 0..u.len() {
            let mut v = coef.a[i] - coef.c[i] * gu[i];
            if spec.variant() == DispersalVariant::DirichletType {
                v += mass[i] - 1.0;
            }
            if v < best.margin {
                best = LatticeExtremum {
                    margin: v,
                    x: nodes[i],
                    t,
                };
            }
        }
    }
    Ok(best)
}

/// Closed-form sufficient margin for (A2).
pub fn a2_proxy_margin(variant: DispersalVariant, ex: &CoefficientExtrema, geo: &GeometryConstants) -> f64 {
    let base = ex.c_max * ex.a_max / ex.b_min;
    match variant {
        DispersalVariant::Periodic => ex.a_min - base,
        DispersalVariant::DirichletType => geo.j_min - 1.0 + ex.a_min - base * geo.g_max,
        DispersalVariant::NeumannType => ex.a_min - base * geo.g_max,
    }
}

pub fn check_a2(spec: &ProblemSpec, u_star: Option<&PeriodicOrbit>) -> Result<ConditionRecord, CertifyError> {
    let u_star = u_star.ok_or(CertifyError::MissingUStar)?;
    let low = a2_lattice(spec, u_star)?;
    let mut rec = ConditionRecord::new("A2", low.margin).with_witness(Witness::at(low.x, low.t));
    rec.proxy_margin = Some(a2_proxy_margin(spec.variant(), spec.extrema(), spec.geometry()));
    let noise = INDETERMINATE_FACTOR * u_star.residual();
    if low.margin.abs() < noise {
        rec.status = Status::Indeterminate;
        rec.note = Some(format!("|margin| below {noise:e}"));
    }
    Ok(rec)
}

/// `min J / (c_M G)` over points of `B_{r1}` where `G > 0`, sampled
/// `refinement` times finer than the grid.
pub fn c0_sampled(j: &Kernel, g: &Kernel, c_max: f64, refinement: usize) -> (C0, f64) {
    if !(c_max > 0.0) {
        return (C0::Unbounded, 0.0);
    }
    let r1 = g.radius();
    let step = g.spacing() / refinement.max(1) as f64;
    let n = (r1 / step).floor() as i64;
    let mut best = (f64::INFINITY, 0.0);
    for k in -n..=n {
        let x = k as f64 * step;
        let gv = g.profile(x);
        if gv > 0.0 {
            let v = j.profile(x) / (c_max * gv);
            if v < best.0 {
                best = (v, x);
            }
        }
    }
    (C0::Finite(best.0), best.1)
}

/// (A3): `r0 > r1` and `J_m > c_M (a_M / b_L) G_M`; also returns `C₀`.
pub fn check_a3(j: &Kernel, g: &Kernel, ex: &CoefficientExtrema) -> Result<(ConditionRecord, C0), CertifyError> {
    if !(j.radius() > g.radius()) {
        return Err(CertifyError::SupportOrderViolated {
            r0: j.radius(),
            r1: g.radius(),
        });
    }
    let ke = kernel_extrema(j, g, true)?;
    let margin = ke.j_min - ex.c_max * ex.growth_cap() * ke.g_max;
    let (c0, at) = c0_sampled(j, g, ex.c_max, crate::kernel::EXTREMA_REFINEMENT);
    let mut rec = ConditionRecord::new("A3", margin).with_witness(Witness::point(ke.j_min_at));
    if rec.holds {
        if let C0::Finite(v) = c0 {
            if !(v > ex.growth_cap()) {
                rec = rec.with_note(format!(
                    "C0 = {v} at x = {at} does not exceed a_M/b_L = {}",
                    ex.growth_cap()
                ));
            }
        }
    }
    Ok((rec, c0))
}

/// `r0 > r1`, the support half of (A3).
pub fn check_a3_kernel(j: &Kernel, g: &Kernel) -> ConditionRecord {
    ConditionRecord::new("A3_kernel", j.radius() - g.radius())
}

/// `max (h1 + h2)` over the lattice with `h1 = a - 2b U̲ - c G*U̲`, `h2 = c Ū`.
pub fn a4_lattice(spec: &ProblemSpec, env: &Envelope) -> Result<LatticeExtremum, DynamicsError> {
    let nodes = spec.grid().nodes();
    let mut worst = LatticeExtremum {
        margin: f64::NEG_INFINITY,
        x: 0.0,
        t: 0.0,
    };
    for ((&t, lo), hi) in env
        .lower
        .snapshot_times()
        .iter()
        .zip(env.lower.snapshots())
        .zip(env.upper.snapshots())
    {
        let coef = spec.table().at(t);
        let g_lo = spec.competition().apply(lo)?;
        for i in 0..lo.len() {
            let h1 = coef.a[i] - 2.0 * coef.b[i] * lo[i] - coef.c[i] * g_lo[i];
            let h2 = coef.c[i] * hi[i];
            if h1 + h2 > worst.margin {
                worst = LatticeExtremum {
                    margin: h1 + h2,
                    x: nodes[i],
                    t,
                };
            }
        }
    }
    Ok(worst)
}

pub fn check_a4(spec: &ProblemSpec, env: Option<&Envelope>) -> Result<ConditionRecord, CertifyError> {
    let env = env.ok_or(CertifyError::MissingEnvelope)?;
    let worst = a4_lattice(spec, env)?;
    let mut rec = ConditionRecord::new("A4", -worst.margin).with_witness(Witness::at(worst.x, worst.t));
    if let Ok(m) = eq108_margin(spec.extrema(), spec.geometry(), spec.variant()) {
        rec.proxy_margin = Some(m);
    }
    let noise = INDETERMINATE_FACTOR * env.residual.max(env.lower.residual()).max(env.upper.residual());
    if rec.margin.abs() < noise {
        rec.status = Status::Indeterminate;
        rec.note = Some(format!("|margin| below {noise:e}"));
    }
    Ok(rec)
}

pub fn check_a5(cs: &CoefficientSet, ex: &CoefficientExtrema, grid: &Grid) -> ConditionRecord {
    let variation = spatial_variation(cs, grid, EXTREMA_TIME_SAMPLES);
    let margin = ex.b_min - ex.c_max;
    if variation > HOMOGENEITY_TOL {
        ConditionRecord::new("A5", -variation).with_note(format!(
            "coefficients vary in space by {variation:e}"
        ))
    } else if !grid.is_periodic() {
        // The homogeneous orbit needs constants to be preserved by both
        // convolutions, which only the periodic problem guarantees.
        let mut rec = ConditionRecord::new("A5", margin).with_note("stated for the periodic problem only");
        rec.holds = false;
        rec.status = Status::Fails;
        rec
    } else {
        ConditionRecord::new("A5", margin)
    }
}

/// Condition (aa): `J_m + G_M h2_min > 0`.
pub fn lemma116_margin(j_m: f64, g_big_m: f64, h2_min: f64) -> f64 {
    j_m + g_big_m * h2_min
}

pub fn check_lemma116_condition(j: &Kernel, g: &Kernel, h2_min: f64) -> Result<ConditionRecord, CertifyError> {
    if !(j.radius() > g.radius()) {
        return Err(CertifyError::SupportOrderViolated {
            r0: j.radius(),
            r1: g.radius(),
        });
    }
    let ke = kernel_extrema(j, g, true)?;
    Ok(ConditionRecord::new("Lemma116_aa", lemma116_margin(ke.j_min, ke.g_max, h2_min)))
}

/// Margin of the bracket validity condition.
pub fn eq74_margin(variant: DispersalVariant, ex: &CoefficientExtrema, geo: &GeometryConstants) -> Result<f64, CertifyError> {
    let (_, g_max) = g_factors(variant, geo);
    match variant {
        DispersalVariant::DirichletType => Err(CertifyError::UnsupportedVariant),
        _ => Ok(ex.a_min * ex.b_min - ex.a_max * ex.c_max * g_max),
    }
}

/// `û*` and `û₋` from the coefficient extrema.
pub fn hat_bounds(
    ex: &CoefficientExtrema,
    geo: &GeometryConstants,
    variant: DispersalVariant,
) -> Result<HatBounds, CertifyError> {
    let margin = eq74_margin(variant, ex, geo)?;
    if !(margin > 0.0) {
        return Err(CertifyError::Eq74Violated { margin });
    }
    let (gm, g_max) = g_factors(variant, geo);
    let den = ex.b_min * ex.b_max - ex.c_min * ex.c_max * gm * g_max;
    if !(den > 0.0) {
        return Err(CertifyError::DegenerateDenominator { value: den });
    }
    Ok(HatBounds {
        upper: (ex.a_max * ex.b_max - ex.a_min * ex.c_min * gm) / den,
        lower: (ex.a_min * ex.b_min - ex.a_max * ex.c_max * g_max) / den,
    })
}

/// Negated left side of the closed-form (A4) sufficient condition.
pub fn eq108_margin(
    ex: &CoefficientExtrema,
    geo: &GeometryConstants,
    variant: DispersalVariant,
) -> Result<f64, CertifyError> {
    let hb = hat_bounds(ex, geo, variant)?;
    let (gm, _) = g_factors(variant, geo);
    let value = ex.a_max - 2.0 * ex.b_min * hb.lower - ex.c_min * gm * hb.lower + ex.c_max * hb.upper;
    Ok(-value)
}

/// Every condition that can be evaluated with the supplied inputs.
pub fn certify(
    spec: &ProblemSpec,
    u_star: Option<&PeriodicOrbit>,
    env: Option<&Envelope>,
) -> Result<Certificate, CertifyError> {
    let ex = spec.extrema();
    let geo = spec.geometry();
    let variant = spec.variant();
    let mut records = vec![
        check_a0(spec.j(), spec.g()),
        check_a1(variant, ex, geo),
    ];
    if u_star.is_some() {
        records.push(check_a2(spec, u_star)?);
    }
    records.push(check_a3_kernel(spec.j(), spec.g()));
    let mut c0 = None;
    match check_a3(spec.j(), spec.g(), ex) {
        Ok((rec, c)) => {
            records.push(rec);
            c0 = Some(c);
        }
        Err(CertifyError::SupportOrderViolated { .. }) => {
            records.push(ConditionRecord::new("A3", spec.g().radius() - spec.j().radius()).with_note("r0 <= r1"));
        }
        Err(e) => return Err(e),
    }
    if env.is_some() {
        records.push(check_a4(spec, env)?);
    }
    records.push(check_a5(spec.coefficients(), ex, spec.grid()));
    let mut hats = None;
    if let Ok(m) = eq74_margin(variant, ex, geo) {
        records.push(ConditionRecord::new("Eq74", m));
        match hat_bounds(ex, geo, variant) {
            Ok(hb) => {
                hats = Some(hb);
                let mut rec = ConditionRecord::new("Eq108", eq108_margin(ex, geo, variant)?);
                if hb.upper > ex.growth_cap() {
                    rec = rec.with_note(format!(
                        "u_hat_upper {} exceeds a_M/b_L {}",
                        hb.upper,
                        ex.growth_cap()
                    ));
                }
                records.push(rec);
            }
            Err(CertifyError::Eq74Violated { .. } | CertifyError::DegenerateDenominator { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if let Some(env) = env {
        // h2 = c Ū is nonnegative, so its minimum sits on the lattice.
        let h2_min = env
            .upper
            .snapshot_times()
            .iter()
            .zip(env.upper.snapshots())
            .flat_map(|(&t, u)| {
                let c = spec.table().at(t).c;
                u.iter().zip(c).map(|(v, c)| c * v).collect::<Vec<_>>()
            })
            .fold(f64::INFINITY, f64::min);
        if let Ok(rec) = check_lemma116_condition(spec.j(), spec.g(), h2_min) {
            records.push(rec);
        }
    }
    let ke = kernel_extrema(spec.j(), spec.g(), false)?;
    Ok(Certificate {
        records,
        derived: Derived {
            u_hat_upper: hats.map(|h| h.upper),
            u_hat_lower: hats.map(|h| h.lower),
            c0,
            j_m: ke.j_min,
            g_big_m: ke.g_max,
            g_m: geo.g_min,
            g_max: geo.g_max,
            j_mass_min: geo.j_min,
            u_star_residual: u_star.map(|u| u.residual()),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientField;
    use crate::dynamics::tests::periodic_spec;
    use crate::kernel::make_bump_kernel;
    use crate::persistence::{persistence_envelope, u_star_orbit, EnvelopeOptions};
    use proptest::prelude::*;

    fn extrema(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> CoefficientExtrema {
        CoefficientExtrema {
            a_min: a.0,
            a_max: a.1,
            b_min: b.0,
            b_max: b.1,
            c_min: c.0,
            c_max: c.1,
            time_samples: 64,
        }
    }

    const UNIT_GEO: GeometryConstants = GeometryConstants {
        g_min: 1.0,
        g_max: 1.0,
        j_min: 1.0,
    };

    #[test]
    fn a1_arithmetic() {
        let v = DispersalVariant::DirichletType;
        assert!((a1_margin(v, 0.4, 0.5) + 0.1).abs() < 1e-15);
        assert!((a1_margin(v, 0.6, 0.5) - 0.1).abs() < 1e-15);
        let rec = check_a1(DispersalVariant::Periodic, &extrema((1.0, 1.0), (1.0, 1.0), (0.2, 0.2)), &UNIT_GEO);
        assert!(rec.holds && rec.margin == 1.0);
    }

    #[test]
    fn hat_bounds_arithmetic() {
        let ex = extrema((1.0, 1.0), (1.0, 1.0), (0.2, 0.2));
        let hb = hat_bounds(&ex, &UNIT_GEO, DispersalVariant::Periodic).unwrap();
        assert!((hb.upper - 5.0 / 6.0).abs() < 1e-15);
        assert!((hb.lower - 5.0 / 6.0).abs() < 1e-15);
        // Value of the closed-form (A4) condition is -2/3.
        let m = eq108_margin(&ex, &UNIT_GEO, DispersalVariant::Periodic).unwrap();
        assert!((m - 2.0 / 3.0).abs() < 1e-15);

        let ex = extrema((0.8, 1.3), (0.9, 1.4), (0.0, 0.0));
        let hb = hat_bounds(&ex, &UNIT_GEO, DispersalVariant::Periodic).unwrap();
        assert!((hb.upper - 1.3 / 0.9).abs() < 1e-15);
        assert!((hb.lower - 0.8 / 1.4).abs() < 1e-15);

        let bad = extrema((0.5, 1.0), (1.0, 1.0), (0.6, 0.6));
        assert!(matches!(
            hat_bounds(&bad, &UNIT_GEO, DispersalVariant::Periodic),
            Err(CertifyError::Eq74Violated { .. })
        ));
        assert!(matches!(
            hat_bounds(&ex, &UNIT_GEO, DispersalVariant::DirichletType),
            Err(CertifyError::UnsupportedVariant)
        ));
    }

    #[test]
    fn hat_bounds_with_partial_masses() {
        let ex = extrema((0.9, 1.2), (1.0, 1.1), (0.1, 0.3));
        let geo = GeometryConstants {
            g_min: 0.55,
            g_max: 1.0,
            j_min: 0.6,
        };
        let hb = hat_bounds(&ex, &geo, DispersalVariant::NeumannType).unwrap();
        // Written out independently.
        let den = 1.0 * 1.1 - 0.1 * 0.3 * 0.55 * 1.0;
        let up = (1.2 * 1.1 - 0.9 * 0.1 * 0.55) / den;
        let lo = (0.9 * 1.0 - 1.2 * 0.3 * 1.0) / den;
        assert!((hb.upper - up).abs() < 1e-15 && (hb.lower - lo).abs() < 1e-15);
        assert!(0.0 < hb.lower && hb.lower <= hb.upper && hb.upper <= 1.2 / 1.0);
    }

    #[test]
    fn a5_examples() {
        let grid = Grid::periodic(1.0, 32).unwrap();
        let cs = CoefficientSet::constants(1.0, 1.0, 0.2, 1.0).unwrap();
        let ex = extrema((1.0, 1.0), (1.0, 1.0), (0.2, 0.2));
        let rec = check_a5(&cs, &ex, &grid);
        assert!(rec.holds && (rec.margin - 0.8).abs() < 1e-15);

        let cs = CoefficientSet::constants(1.0, 0.5, 0.6, 1.0).unwrap();
        let rec = check_a5(&cs, &extrema((1.0, 1.0), (0.5, 0.5), (0.6, 0.6)), &grid);
        assert!(!rec.holds && (rec.margin + 0.1).abs() < 1e-15);

        let cs = CoefficientSet::new(
            1.0,
            CoefficientField::constant(1.0).with_space_mode(1, 0.2, 0.0),
            CoefficientField::constant(1.0),
            CoefficientField::constant(0.2),
        )
        .unwrap();
        assert!(!check_a5(&cs, &ex, &grid).holds);

        let interval = Grid::interval(0.0, 1.0, 32).unwrap();
        let cs = CoefficientSet::constants(1.0, 1.0, 0.2, 1.0).unwrap();
        let rec = check_a5(&cs, &ex, &interval);
        assert!(!rec.holds && rec.note.is_some());
    }

    #[test]
    fn lemma116_arithmetic() {
        assert!((lemma116_margin(0.3, 1.5, -0.1) - 0.15).abs() < 1e-15);
        assert!(lemma116_margin(0.3, 1.5, -0.3 / 1.5) <= 0.0);
        assert_eq!(lemma116_margin(0.3, 1.5, 0.0), 0.3);
        let h = 0.01;
        let j = make_bump_kernel(0.2, 2, h).unwrap();
        let g = make_bump_kernel(0.2, 2, h).unwrap();
        assert!(matches!(
            check_lemma116_condition(&j, &g, 0.0),
            Err(CertifyError::SupportOrderViolated { .. })
        ));
    }

    #[test]
    fn a3_and_c0() {
        let h = 0.01;
        let j = make_bump_kernel(1.0, 2, h).unwrap();
        let g = make_bump_kernel(0.4, 2, h).unwrap();
        let ex = extrema((1.0, 1.0), (1.0, 1.0), (0.2, 0.2));
        let (rec, c0) = check_a3(&j, &g, &ex).unwrap();
        let C0::Finite(v) = c0 else { panic!("finite expected") };
        let (C0::Finite(fine), _) = c0_sampled(&j, &g, 0.2, 100) else { panic!() };
        assert!(fine <= v + 1e-12 && (v - fine) / fine < 1e-3, "{v} {fine}");
        if rec.holds {
            assert!(v > ex.growth_cap());
        }
        let free = extrema((1.0, 1.0), (1.0, 1.0), (0.0, 0.0));
        let (rec, c0) = check_a3(&j, &g, &free).unwrap();
        assert!(rec.holds && c0 == C0::Unbounded);
        assert!(matches!(
            check_a3(&g, &g, &ex),
            Err(CertifyError::SupportOrderViolated { .. })
        ));
    }

    #[test]
    fn constants_certificate() {
        let spec = periodic_spec(1.0, 1.0, 0.2);
        let u_star = u_star_orbit(&spec, Default::default()).unwrap();
        let a2 = check_a2(&spec, Some(&u_star)).unwrap();
        assert!(a2.holds && (a2.margin - 0.8).abs() < 1e-6, "{}", a2.margin);
        // u* is known to its residual; it approaches from above.
        assert!(a2.proxy_margin.unwrap() <= a2.margin + INDETERMINATE_FACTOR * u_star.residual());
        assert!(matches!(check_a2(&spec, None), Err(CertifyError::MissingUStar)));

        let env = persistence_envelope(&spec, EnvelopeOptions::default()).unwrap();
        let cert = certify(&spec, Some(&u_star), Some(&env)).unwrap();
        for name in ["A0", "A1", "A2", "A4", "A5", "Eq74", "Eq108"] {
            assert!(cert.record(name).unwrap().holds, "{name}");
        }
        let a4 = cert.record("A4").unwrap();
        assert!((a4.margin - 2.0 / 3.0).abs() < 1e-5, "{}", a4.margin);
        for r in &cert.records {
            assert_eq!(r.holds, r.margin > 0.0);
        }
        let json = serde_json::to_string(&cert).unwrap();
        assert!(json.contains("\"status\":\"holds\""));
        assert!(cert.table().contains("A5"));
    }

    #[test]
    fn no_competition_reductions() {
        let spec = periodic_spec(1.0, 1.0, 0.0);
        let u_star = u_star_orbit(&spec, Default::default()).unwrap();
        let a2 = check_a2(&spec, Some(&u_star)).unwrap();
        assert!((a2.margin - 1.0).abs() < 1e-15);
        let env = persistence_envelope(&spec, EnvelopeOptions::default()).unwrap();
        // a - 2 b u* = 1 - 2 = -1.
        let a4 = check_a4(&spec, Some(&env)).unwrap();
        assert!((a4.margin - 1.0).abs() < 1e-6);
        assert!(matches!(check_a4(&spec, None), Err(CertifyError::MissingEnvelope)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn margins_move_continuously(a in 0.5..2.0f64, b in 0.5..2.0f64, c in 0.0..0.5f64) {
            let d = 1e-6;
            let e0 = extrema((a, a), (b, b), (c, c));
            let e1 = extrema((a + d, a + d), (b, b), (c + d, c + d));
            let v = DispersalVariant::Periodic;
            let p0 = a2_proxy_margin(v, &e0, &UNIT_GEO);
            let p1 = a2_proxy_margin(v, &e1, &UNIT_GEO);
            prop_assert!((p0 - p1).abs() < 100.0 * d);
            if let (Ok(m0), Ok(m1)) = (eq108_margin(&e0, &UNIT_GEO, v), eq108_margin(&e1, &UNIT_GEO, v)) {
                prop_assert!((m0 - m1).abs() < 1e3 * d);
            }
        }

        #[test]
        fn hat_bounds_chain(a in 0.5..2.0f64, da in 0.0..0.5f64, b in 0.5..2.0f64, db in 0.0..0.5f64, c in 0.0..0.3f64, dc in 0.0..0.1f64) {
            let ex = extrema((a, a + da), (b, b + db), (c, c + dc));
            if let Ok(hb) = hat_bounds(&ex, &UNIT_GEO, DispersalVariant::Periodic) {
                prop_assert!(hb.lower > 0.0);
                prop_assert!(hb.lower <= hb.upper * (1.0 + 1e-12));
                prop_assert!(hb.upper <= ex.growth_cap() * (1.0 + 1e-12));
            }
        }
    }
}
