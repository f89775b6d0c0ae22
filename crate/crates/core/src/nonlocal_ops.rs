//! Discrete nonlocal operators: the three dispersal variants and the
//! competition convolution.
//!
//! Convolutions use the convention `(K * u)_i = sum_k K(k h) w_{i+k} u_{i+k}`
//! where `k` is the offset `y - x` in grid steps and `w` are the quadrature
//! weights. Periodic grids wrap indices; bounded grids truncate the sum to
//! the domain.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridError};
use crate::kernel::{check_spacing, wrap_kernel, Kernel, KernelError};
use crate::reduce::{weighted_dot, POINT_CHUNK};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlocalError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("field has {got} values, operator expects {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("the quadratic form identity needs a symmetric kernel")]
    AsymmetricKernel,
    #[error("operation requires a periodic grid")]
    NotPeriodic,
    #[error("the transform backend is only available on periodic grids")]
    FftRequiresPeriodic,
    #[error("dispersal variant {variant:?} does not match the grid's domain kind")]
    VariantMismatch { variant: DispersalVariant },
}

/// How convolutions are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Direct,
    Fft,
}

/// Which of the three dispersal operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DispersalVariant {
    /// `∫_R J(y-x) u(y) dy - u(x)` on a periodic cell.
    Periodic,
    /// `∫_Ω J(y-x) u(y) dy - u(x)`.
    DirichletType,
    /// `∫_Ω J(y-x) (u(y) - u(x)) dy`.
    NeumannType,
}

impl DispersalVariant {
    /// Problem index `i` of the variant.
    pub fn index(self) -> u8 {
        match self {
            DispersalVariant::Periodic => 1,
            DispersalVariant::DirichletType => 2,
            DispersalVariant::NeumannType => 3,
        }
    }
}

struct FftPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Transform of the reflected wrapped kernel, scaled by `h / n`.
    symbol: Vec<Complex64>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("len", &self.symbol.len()).finish()
    }
}

/// `u ↦ K * u` on a fixed grid.
#[derive(Debug, Clone)]
pub struct ConvolutionOperator {
    kernel: Kernel,
    grid: Arc<Grid>,
    backend: Backend,
    fft: Option<Arc<FftPlan>>,
}

impl ConvolutionOperator {
    pub fn new(kernel: &Kernel, grid: Arc<Grid>, backend: Backend) -> Result<Self, NonlocalError> {
        check_spacing(kernel, &grid)?;
        let fft = match backend {
            Backend::Direct => None,
            Backend::Fft => {
                if !grid.is_periodic() {
                    return Err(NonlocalError::FftRequiresPeriodic);
                }
                Some(Arc::new(plan_fft(kernel, &grid)?))
            }
        };
        Ok(Self {
            kernel: kernel.clone(),
            grid,
            backend,
            fft,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>, NonlocalError> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) -> Result<(), NonlocalError> {
        let n = self.grid.len();
        if u.len() != n || out.len() != n {
            return Err(NonlocalError::GridMismatch {
                expected: n,
                got: u.len(),
            });
        }
        match &self.fft {
            Some(plan) => apply_fft(plan, u, out),
            None => self.apply_direct(u, out),
        }
        Ok(())
    }

    fn apply_direct(&self, u: &[f64], out: &mut [f64]) {
        let n = self.grid.len() as isize;
        let hw = self.kernel.half_width() as isize;
        let weights = self.kernel.weights();
        let h = self.grid.spacing();
        let w = self.grid.weights();
        let periodic = self.grid.is_periodic();
        out.par_chunks_mut(POINT_CHUNK)
            .enumerate()
            .for_each(|(chunk, slot)| {
                for (off, o) in slot.iter_mut().enumerate() {
                    let i = (chunk * POINT_CHUNK + off) as isize;
                    let mut acc = 0.0;
                    if periodic {
                        for k in -hw..=hw {
                            let j = (i + k).rem_euclid(n) as usize;
                            acc += weights[(k + hw) as usize] * h * u[j];
                        }
                    } else {
                        let lo = (-hw).max(-i);
                        let hi = hw.min(n - 1 - i);
                        for k in lo..=hi {
                            let j = (i + k) as usize;
                            acc += weights[(k + hw) as usize] * w[j] * u[j];
                        }
                    }
                    *o = acc;
                }
            });
    }
}

fn plan_fft(kernel: &Kernel, grid: &Arc<Grid>) -> Result<FftPlan, NonlocalError> {
    let n = grid.len();
    let wrapped = wrap_kernel(kernel, grid.length(), grid)?;
    let h = grid.spacing();
    // out_i = sum_d c_d u_{i+d} is a circular convolution with c'_e = c_{-e}.
    let mut symbol: Vec<Complex64> = (0..n)
        .map(|e| Complex64::new(h * wrapped.samples()[(n - e) % n], 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    forward.process(&mut symbol);
    let scale = 1.0 / n as f64;
    for s in &mut symbol {
        *s *= scale;
    }
    Ok(FftPlan {
        forward,
        inverse,
        symbol,
    })
}

fn apply_fft(plan: &FftPlan, u: &[f64], out: &mut [f64]) {
    let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.forward.process(&mut buf);
    for (b, s) in buf.iter_mut().zip(&plan.symbol) {
        *b *= s;
    }
    plan.inverse.process(&mut buf);
    for (o, b) in out.iter_mut().zip(&buf) {
        *o = b.re;
    }
}

/// Local masses `∫_Ω K(y - x) dy` at every node.
pub fn local_masses(kernel: &Kernel, grid: &Grid) -> Vec<f64> {
    let op = ConvolutionOperator {
        kernel: kernel.clone(),
        grid: Arc::new(grid.clone()),
        backend: Backend::Direct,
        fft: None,
    };
    let mut out = vec![0.0; grid.len()];
    op.apply_direct(&vec![1.0; grid.len()], &mut out);
    out
}

/// One of `L_1`, `L_2`, `L_3`.
#[derive(Debug, Clone)]
pub struct DispersalOperator {
    variant: DispersalVariant,
    conv: ConvolutionOperator,
    mass: Vec<f64>,
}

impl DispersalOperator {
    pub fn new(
        variant: DispersalVariant,
        j: &Kernel,
        grid: Arc<Grid>,
        backend: Backend,
    ) -> Result<Self, NonlocalError> {
        let periodic = grid.is_periodic();
        if periodic != (variant == DispersalVariant::Periodic) {
            return Err(NonlocalError::VariantMismatch { variant });
        }
        let mass = local_masses(j, &grid);
        let conv = ConvolutionOperator::new(j, grid, backend)?;
        Ok(Self {
            variant,
            conv,
            mass,
        })
    }

    pub fn variant(&self) -> DispersalVariant {
        self.variant
    }

    pub fn convolution(&self) -> &ConvolutionOperator {
        &self.conv
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.conv.grid()
    }

    /// Per-node `∫_Ω J(y - x) dy`.
    pub fn local_mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) -> Result<(), NonlocalError> {
        self.conv.apply_into(u, out)?;
        match self.variant {
            DispersalVariant::Periodic | DispersalVariant::DirichletType => {
                for (o, v) in out.iter_mut().zip(u) {
                    *o -= v;
                }
            }
            DispersalVariant::NeumannType => {
                for ((o, v), m) in out.iter_mut().zip(u).zip(&self.mass) {
                    *o -= m * v;
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>, NonlocalError> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out)?;
        Ok(out)
    }
}

pub fn apply_dispersal(
    op: &DispersalOperator,
    u: &crate::grid::Field,
) -> Result<crate::grid::Field, NonlocalError> {
    u.ensure_same_grid(op.grid())?;
    let values = op.apply(u.values())?;
    Ok(crate::grid::Field::new(u.grid().clone(), values, u.time())?)
}

/// `G * u` with the wrap (periodic grid) or truncation (bounded grid)
/// implied by the field's grid.
pub fn apply_competition(
    g: &Kernel,
    u: &crate::grid::Field,
) -> Result<crate::grid::Field, NonlocalError> {
    let op = ConvolutionOperator::new(g, u.grid().clone(), Backend::Direct)?;
    let values = op.apply(u.values())?;
    Ok(crate::grid::Field::new(u.grid().clone(), values, u.time())?)
}

/// `∫ φ (J * φ) - ∫ φ²` for a symmetric kernel on a periodic cell. The
/// continuum value is nonpositive; the discrete one is too, because the
/// wrapped matrix is symmetric and row-stochastic.
pub fn quadratic_form_check(op: &DispersalOperator, phi: &[f64]) -> Result<f64, NonlocalError> {
    if op.variant != DispersalVariant::Periodic {
        return Err(NonlocalError::NotPeriodic);
    }
    if !op.conv.kernel().is_symmetric() {
        return Err(NonlocalError::AsymmetricKernel);
    }
    let conv = op.conv.apply(phi)?;
    let w = op.grid().weights();
    let diff: Vec<f64> = conv.iter().zip(phi).map(|(c, p)| c - p).collect();
    Ok(weighted_dot(phi, &diff, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Field;
    use crate::kernel::make_bump_kernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn periodic_setup(n: usize, r: f64) -> (Arc<Grid>, Kernel) {
        let grid = Arc::new(Grid::periodic(1.0, n).unwrap());
        let k = make_bump_kernel(r, 2, grid.spacing()).unwrap();
        (grid, k)
    }

    fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Dense matrix-vector product over the wrapped kernel.
    fn dense_oracle(k: &Kernel, grid: &Grid, u: &[f64]) -> Vec<f64> {
        let m = wrap_kernel(k, grid.length(), grid).unwrap().matrix();
        m.iter()
            .map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    }

    #[test]
    fn constants_in_kernel_of_l1_and_l3() {
        let (grid, j) = periodic_setup(128, 0.4);
        let l1 = DispersalOperator::new(DispersalVariant::Periodic, &j, grid, Backend::Direct).unwrap();
        let out = l1.apply(&vec![3.7; 128]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));

        let grid = Arc::new(Grid::interval(0.0, 2.0, 201).unwrap());
        let j = make_bump_kernel(0.3, 2, grid.spacing()).unwrap();
        let l3 = DispersalOperator::new(DispersalVariant::NeumannType, &j, grid, Backend::Direct).unwrap();
        let out = l3.apply(&vec![3.7; 201]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn l2_edge_value() {
        let grid = Arc::new(Grid::interval(0.0, 2.0, 201).unwrap());
        let j = make_bump_kernel(0.3, 2, grid.spacing()).unwrap();
        let l2 = DispersalOperator::new(DispersalVariant::DirichletType, &j, grid, Backend::Direct).unwrap();
        let out = l2.apply(&vec![1.0; 201]).unwrap();
        assert!((out[0] + 0.5).abs() < 1e-3);
        assert!(out[100].abs() < 1e-12);
        for (o, m) in out.iter().zip(l2.local_mass()) {
            assert!((o - (m - 1.0)).abs() < 1e-12 && *o <= 1e-12);
        }
    }

    #[test]
    fn variant_must_match_grid() {
        let (grid, j) = periodic_setup(64, 0.3);
        assert!(matches!(
            DispersalOperator::new(DispersalVariant::NeumannType, &j, grid, Backend::Direct),
            Err(NonlocalError::VariantMismatch { .. })
        ));
        let grid = Arc::new(Grid::interval(0.0, 1.0, 65).unwrap());
        let j = make_bump_kernel(0.3, 2, grid.spacing()).unwrap();
        assert_eq!(
            ConvolutionOperator::new(&j, grid, Backend::Fft).unwrap_err(),
            NonlocalError::FftRequiresPeriodic
        );
    }

    #[test]
    fn competition_on_constants() {
        let (grid, g) = periodic_setup(100, 0.2);
        let u = Field::constant(grid, 2.5);
        let out = apply_competition(&g, &u).unwrap();
        assert!(out.values().iter().all(|v| (v - 2.5).abs() < 1e-12));

        let grid = Arc::new(Grid::interval(0.0, 2.0, 201).unwrap());
        let g = make_bump_kernel(0.2, 2, grid.spacing()).unwrap();
        let out = apply_competition(&g, &Field::constant(grid, 2.5)).unwrap();
        assert!(out.values().iter().all(|&v| v <= 2.5 + 1e-12));
        assert!((out.values()[100] - 2.5).abs() < 1e-12);
        assert!((out.values()[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_an_eigenfunction() {
        let (grid, g) = periodic_setup(128, 0.3);
        let u = Field::from_fn(grid.clone(), |x| (TAU * x).cos()).unwrap();
        let out = apply_competition(&g, &u).unwrap();
        let oracle = dense_oracle(&g, &grid, u.values());
        // Discrete multiplier: sum_k h G(kh) cos(2π k h).
        let mu: f64 = (-(g.half_width() as isize)..=g.half_width() as isize)
            .map(|k| g.spacing() * g.weight(k) * (TAU * k as f64 * g.spacing()).cos())
            .sum();
        assert!(mu < 1.0 && mu > 0.0);
        for i in 0..128 {
            assert!((out.values()[i] - oracle[i]).abs() < 1e-13);
            assert!((out.values()[i] - mu * u.values()[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn direct_matches_dense_matrix_for_wide_kernel() {
        let (grid, j) = periodic_setup(64, 0.8);
        let op = ConvolutionOperator::new(&j, grid.clone(), Backend::Direct).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_field(&mut rng, 64);
        let got = op.apply(&u).unwrap();
        let oracle = dense_oracle(&j, &grid, &u);
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn quadratic_form_examples() {
        let (grid, j) = periodic_setup(128, 0.4);
        let op = DispersalOperator::new(DispersalVariant::Periodic, &j, grid.clone(), Backend::Direct).unwrap();
        assert!(quadratic_form_check(&op, &vec![1.0; 128]).unwrap().abs() < 1e-12);

        let phi: Vec<f64> = grid.sample(|x| (TAU * x).cos());
        let mu: f64 = op.convolution().apply(&phi).unwrap()[0] / phi[0];
        let norm2 = grid.integrate_values(&phi.iter().map(|v| v * v).collect::<Vec<_>>());
        let q = quadratic_form_check(&op, &phi).unwrap();
        assert!((q - (mu - 1.0) * norm2).abs() < 1e-12);
        assert!(q < 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let phi = random_field(&mut rng, 128);
            assert!(quadratic_form_check(&op, &phi).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn quadratic_form_guards() {
        let grid = Arc::new(Grid::periodic(1.0, 64).unwrap());
        let skew = Kernel::bump(0.3, 2, 0.5, grid.spacing()).unwrap();
        let op = DispersalOperator::new(DispersalVariant::Periodic, &skew, grid, Backend::Direct).unwrap();
        assert_eq!(
            quadratic_form_check(&op, &vec![1.0; 64]).unwrap_err(),
            NonlocalError::AsymmetricKernel
        );
    }

    #[test]
    fn fft_agrees_with_direct() {
        for &(n, r) in &[(128, 0.4), (100, 0.8), (64, 0.1)] {
            let (grid, j) = periodic_setup(n, r);
            let d = ConvolutionOperator::new(&j, grid.clone(), Backend::Direct).unwrap();
            let f = ConvolutionOperator::new(&j, grid, Backend::Fft).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            for _ in 0..20 {
                let u = random_field(&mut rng, n);
                let a = d.apply(&u).unwrap();
                let b = f.apply(&u).unwrap();
                let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() <= 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn skewed_kernel_uses_offset_convention() {
        let grid = Arc::new(Grid::periodic(1.0, 64).unwrap());
        let k = Kernel::bump(0.2, 2, 0.6, grid.spacing()).unwrap();
        let op = ConvolutionOperator::new(&k, grid.clone(), Backend::Direct).unwrap();
        let mut e = vec![0.0; 64];
        e[10] = 1.0;
        let out = op.apply(&e).unwrap();
        // Node 7 sees node 10 at offset +3.
        assert!((out[7] - grid.spacing() * k.weight(3)).abs() < 1e-15);
        assert!((out[13] - grid.spacing() * k.weight(-3)).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn dispersal_is_linear_and_positive(
            seed in 0u64..1000,
            alpha in -2.0..2.0f64,
            beta in -2.0..2.0f64,
        ) {
            let grid = Arc::new(Grid::interval(0.0, 1.0, 65).unwrap());
            let j = make_bump_kernel(0.2, 2, grid.spacing()).unwrap();
            for variant in [DispersalVariant::DirichletType, DispersalVariant::NeumannType] {
                let op = DispersalOperator::new(variant, &j, grid.clone(), Backend::Direct).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let u = random_field(&mut rng, 65);
                let v = random_field(&mut rng, 65);
                let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
                let lhs = op.apply(&combo).unwrap();
                let lu = op.apply(&u).unwrap();
                let lv = op.apply(&v).unwrap();
                for i in 0..65 {
                    proptest::prop_assert!((lhs[i] - alpha * lu[i] - beta * lv[i]).abs() < 1e-12);
                }
                let pos: Vec<f64> = u.iter().map(|x| x.abs()).collect();
                let conv = op.convolution().apply(&pos).unwrap();
                proptest::prop_assert!(conv.iter().all(|&c| c >= 0.0));
            }
        }
    }
}
