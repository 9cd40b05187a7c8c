//! Bilinear system representation and pointwise transfer evaluation.
//!
//! The model class is the single-input single-output bilinear system
//!
//! ```text
//! x'(t) = A x(t) + N x(t) u(t) + b u(t)
//! y(t)  = c x(t)
//! ```
//!
//! whose input-output map expands into a series of multivariate transfer
//! functions; the k-th one is
//!
//! ```text
//! H_k(s_1, ..., s_k) = c (s_k I - A)^-1 N (s_{k-1} I - A)^-1 ... N (s_1 I - A)^-1 b
//! ```
//!
//! This module provides:
//!
//! * [`BilinearSystem`]: validated immutable container for (A, N, b, c),
//! * [`TruncatedSeries`]: a system together with the truncation order M of
//!   its transfer-function series,
//! * [`PerturbedSystem`]: the same system with the state matrix replaced by
//!   A + F, the object the stability experiments revolve around,
//! * transfer evaluation by shifted solves, time-domain simulation, and
//!   seeded construction of perturbations and test systems.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// A single-input single-output bilinear dynamical system.
///
/// Immutable after construction; all evaluation methods are pure, so a
/// system can be shared freely across threads.
#[derive(Debug, Clone)]
pub struct BilinearSystem {
    a: DMatrix<f64>,
    n: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
}

impl BilinearSystem {
    /// Validates dimensions and finiteness of (A, N, b, c).
    ///
    /// `c` is the output functional; it is stored as a plain vector and
    /// applied as a row.
    pub fn new(
        a: DMatrix<f64>,
        n: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
    ) -> Result<Self> {
        let dim = a.nrows();
        if dim == 0 {
            return Err(Error::InvalidArgument("empty state space".into()));
        }
        if a.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "state matrix is {}x{}, expected square",
                a.nrows(),
                a.ncols()
            )));
        }
        if n.nrows() != dim || n.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "coupling matrix is {}x{}, state dimension is {dim}",
                n.nrows(),
                n.ncols()
            )));
        }
        if b.len() != dim || c.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "input/output vectors have lengths {}/{}, state dimension is {dim}",
                b.len(),
                c.len()
            )));
        }
        let finite = a.iter().chain(n.iter()).chain(b.iter()).chain(c.iter());
        if !finite.copied().all(f64::is_finite) {
            return Err(Error::InvalidArgument(
                "system data contains non-finite entries".into(),
            ));
        }
        Ok(Self { a, n, b, c })
    }

    /// State matrix A.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Bilinear coupling matrix N.
    pub fn n(&self) -> &DMatrix<f64> {
        &self.n
    }

    /// Input vector b.
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Output vector c, applied as a row.
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Largest real part over the spectrum of A.
    pub fn spectral_abscissa(&self) -> f64 {
        linalg::spectral_abscissa(&self.a)
    }

    /// True when every eigenvalue of A sits strictly left of -1e-12.
    ///
    /// This is the working sufficient condition for all the H2-type norms
    /// in this crate to exist; norm routines refuse unstable systems.
    pub fn is_stable(&self) -> bool {
        linalg::is_stable(&self.a)
    }

    /// Evaluates the k-th transfer function at one frequency tuple,
    /// where k is the number of points supplied.
    ///
    /// Works right to left: one shifted solve per point and one coupling
    /// multiplication between consecutive solves, never an explicit
    /// inverse. The first point shifts the factor next to b, the last one
    /// the factor next to c.
    pub fn transfer(&self, points: &[Complex64]) -> Result<Complex64> {
        transfer_core(&self.a, &self.n, &self.b, &self.c, points)
    }

    /// Classical fixed-step 4th-order Runge-Kutta integration of the state
    /// equation, returning the output trace y at the grid points.
    ///
    /// `u` holds input samples at the grid points; stage values halfway
    /// between samples use linear interpolation. The grid must be uniform.
    /// A non-finite state aborts with the first offending time.
    pub fn simulate(&self, u: &[f64], t_grid: &[f64], x0: &DVector<f64>) -> Result<Vec<f64>> {
        let dim = self.dim();
        if x0.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "initial state has length {}, state dimension is {dim}",
                x0.len()
            )));
        }
        if t_grid.len() < 2 {
            return Err(Error::InvalidArgument(
                "time grid needs at least two points".into(),
            ));
        }
        if u.len() != t_grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} samples for {} grid points",
                u.len(),
                t_grid.len()
            )));
        }
        let h = t_grid[1] - t_grid[0];
        if !(h > 0.0) {
            return Err(Error::InvalidArgument("time step must be positive".into()));
        }
        for w in t_grid.windows(2) {
            if ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0) {
                return Err(Error::InvalidArgument("time grid is not uniform".into()));
            }
        }

        let rhs = |x: &DVector<f64>, uv: f64| -> DVector<f64> {
            &self.a * x + (&self.n * x) * uv + &self.b * uv
        };

        let mut x = x0.clone();
        let mut y = Vec::with_capacity(t_grid.len());
        y.push(self.c.dot(&x));
        for i in 0..t_grid.len() - 1 {
            let um = 0.5 * (u[i] + u[i + 1]);
            let k1 = rhs(&x, u[i]);
            let k2 = rhs(&(&x + &k1 * (h / 2.0)), um);
            let k3 = rhs(&(&x + &k2 * (h / 2.0)), um);
            let k4 = rhs(&(&x + &k3 * h), u[i + 1]);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if !x.iter().copied().all(f64::is_finite) {
                return Err(Error::Numerical(format!(
                    "state became non-finite at t = {}",
                    t_grid[i + 1]
                )));
            }
            y.push(self.c.dot(&x));
        }
        Ok(y)
    }

    /// Seeded random stable test system with a normal state matrix.
    ///
    /// The eigenvalues of A are placed with real parts in [-2, -0.5], so
    /// the peak resolvent gain over the imaginary axis is exactly
    /// 1 / min |Re lambda|; N is rescaled so that peak gain times ||N||_2
    /// equals `coupling`. Values below 1 make the transfer-function series
    /// contract, which the norm and reduction experiments rely on.
    pub fn seeded(dim: usize, seed: u64, coupling: f64) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        assert!(coupling >= 0.0, "coupling scale must be nonnegative");
        let mut rng = linalg::seeded_rng(seed);

        // Block-diagonal spine: conjugate pairs [[p, q], [-q, p]] and a
        // lone real eigenvalue when the dimension is odd.
        let mut d = DMatrix::zeros(dim, dim);
        let mut min_re = f64::INFINITY;
        let mut i = 0;
        while i + 1 < dim {
            let p = -rng.random_range(0.5..2.0);
            let q = rng.random_range(0.1..2.0);
            d[(i, i)] = p;
            d[(i + 1, i + 1)] = p;
            d[(i, i + 1)] = q;
            d[(i + 1, i)] = -q;
            min_re = min_re.min(-p);
            i += 2;
        }
        if i < dim {
            let p = -rng.random_range(0.5..2.0);
            d[(i, i)] = p;
            min_re = min_re.min(-p);
        }

        // Random orthogonal change of basis keeps A normal.
        let cols: Vec<DVector<f64>> = (0..dim)
            .map(|_| linalg::unit_vector(dim, &mut rng))
            .collect();
        let mut q = linalg::mgs_real(dim, &cols, 1e-10);
        while q.ncols() < dim {
            // Rank-deficient draw; extend with fresh directions.
            let mut extended: Vec<DVector<f64>> =
                (0..q.ncols()).map(|j| q.column(j).into_owned()).collect();
            extended.push(linalg::unit_vector(dim, &mut rng));
            q = linalg::mgs_real(dim, &extended, 1e-10);
        }
        let a = &q * d * q.transpose();

        let peak_resolvent_gain = 1.0 / min_re;
        let n0 = linalg::uniform_matrix(dim, dim, &mut rng);
        let n_norm = linalg::spectral_norm(&n0);
        let n = if coupling == 0.0 || n_norm == 0.0 {
            DMatrix::zeros(dim, dim)
        } else {
            n0 * (coupling / (peak_resolvent_gain * n_norm))
        };

        let b = linalg::unit_vector(dim, &mut rng);
        let c = linalg::unit_vector(dim, &mut rng);
        Self::new(a, n, b, c).expect("construction from validated parts")
    }
}

/// A bilinear system together with the truncation order of its
/// transfer-function series: the finite family {H_1, ..., H_M}.
#[derive(Debug, Clone)]
pub struct TruncatedSeries {
    system: BilinearSystem,
    order: usize,
}

impl TruncatedSeries {
    /// Truncation order must be at least 1.
    pub fn new(system: BilinearSystem, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument(
                "truncation order must be at least 1".into(),
            ));
        }
        Ok(Self { system, order })
    }

    pub fn system(&self) -> &BilinearSystem {
        &self.system
    }

    /// Number of retained transfer functions M.
    pub fn order(&self) -> usize {
        self.order
    }
}

/// A bilinear system whose state matrix is perturbed to A + F.
///
/// N, b, c are shared with the base system; only the resolvents change.
#[derive(Debug, Clone)]
pub struct PerturbedSystem {
    base: BilinearSystem,
    f: DMatrix<f64>,
}

impl PerturbedSystem {
    pub fn new(base: BilinearSystem, f: DMatrix<f64>) -> Result<Self> {
        let dim = base.dim();
        if f.nrows() != dim || f.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "perturbation is {}x{}, state dimension is {dim}",
                f.nrows(),
                f.ncols()
            )));
        }
        if !f.iter().copied().all(f64::is_finite) {
            return Err(Error::InvalidArgument(
                "perturbation contains non-finite entries".into(),
            ));
        }
        Ok(Self { base, f })
    }

    pub fn base(&self) -> &BilinearSystem {
        &self.base
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// The effective state matrix A + F.
    pub fn effective_a(&self) -> DMatrix<f64> {
        self.base.a() + &self.f
    }

    /// The perturbed system reassembled as a plain system, for norm and
    /// simulation routines that want a single state matrix.
    pub fn to_system(&self) -> BilinearSystem {
        BilinearSystem::new(
            self.effective_a(),
            self.base.n().clone(),
            self.base.b().clone(),
            self.base.c().clone(),
        )
        .expect("base system was validated")
    }

    /// Transfer evaluation with every resolvent built from A + F.
    pub fn transfer(&self, points: &[Complex64]) -> Result<Complex64> {
        transfer_core(
            &self.effective_a(),
            self.base.n(),
            self.base.b(),
            self.base.c(),
            points,
        )
    }
}

/// Shared right-to-left evaluation kernel.
fn transfer_core(
    a: &DMatrix<f64>,
    n: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    points: &[Complex64],
) -> Result<Complex64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "transfer evaluation needs at least one frequency point".into(),
        ));
    }
    let ac = linalg::to_complex(a);
    let nc = linalg::to_complex(n);
    let bc = b.map(|x| Complex64::new(x, 0.0));

    let mut v = solve_shifted(&ac, points[0], &bc)?;
    for s in &points[1..] {
        v = solve_shifted(&ac, *s, &(&nc * v))?;
    }
    let mut out = Complex64::new(0.0, 0.0);
    for i in 0..c.len() {
        out += Complex64::new(c[i], 0.0) * v[i];
    }
    Ok(out)
}

fn solve_shifted(
    ac: &linalg::CMat,
    s: Complex64,
    rhs: &linalg::CVec,
) -> Result<linalg::CVec> {
    let lu = linalg::resolvent_lu(ac, s);
    let x = lu
        .solve(rhs)
        .ok_or_else(|| Error::Singular(format!("shifted matrix sI - A is singular at s = {s}")))?;
    if !x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::Numerical(format!(
            "shifted solve overflowed at s = {s}"
        )));
    }
    Ok(x)
}

/// Dense random-direction perturbation rescaled to an exact spectral norm.
///
/// Deterministic in the seed; the returned matrix satisfies
/// ||F||_2 = target_norm to 1e-10 relative.
pub fn make_perturbation(dim: usize, target_norm: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(target_norm > 0.0) {
        return Err(Error::InvalidArgument(
            "perturbation norm must be positive".into(),
        ));
    }
    let mut rng = linalg::seeded_rng(seed);
    let f0 = linalg::uniform_matrix(dim, dim, &mut rng);
    let norm = linalg::spectral_norm(&f0);
    if norm == 0.0 {
        return Err(Error::Numerical("degenerate random draw".into()));
    }
    Ok(f0 * (target_norm / norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn scalar_system(a: f64, n: f64, b: f64, c: f64) -> BilinearSystem {
        BilinearSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, n),
            DVector::from_element(1, b),
            DVector::from_element(1, c),
        )
        .unwrap()
    }

    /// Independent evaluation with explicitly inverted resolvents.
    fn transfer_by_explicit_inverses(sys: &BilinearSystem, points: &[Complex64]) -> Complex64 {
        let dim = sys.dim();
        let ac = linalg::to_complex(sys.a());
        let nc = linalg::to_complex(sys.n());
        let mut acc = sys.b().map(|x| Complex64::new(x, 0.0));
        for (idx, s) in points.iter().enumerate() {
            let k = linalg::CMat::identity(dim, dim) * *s - &ac;
            let kinv = linalg::invert_c(&k, "resolvent").unwrap();
            acc = &kinv * acc;
            if idx + 1 < points.len() {
                acc = &nc * acc;
            }
        }
        let mut out = Complex64::new(0.0, 0.0);
        for i in 0..dim {
            out += Complex64::new(sys.c()[i], 0.0) * acc[i];
        }
        out
    }

    #[test]
    fn scalar_first_order_resolvent() {
        let sys = scalar_system(-2.0, 0.0, 3.0, 4.0);
        let h = sys.transfer(&[Complex64::new(1.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(h.re, 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h.im, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_coupling_kills_higher_orders() {
        let mut rng = linalg::seeded_rng(3);
        let a = linalg::uniform_matrix(4, 4, &mut rng) - DMatrix::identity(4, 4) * 3.0;
        let sys = BilinearSystem::new(
            a,
            DMatrix::zeros(4, 4),
            linalg::unit_vector(4, &mut rng),
            linalg::unit_vector(4, &mut rng),
        )
        .unwrap();
        for k in 2..=3 {
            let pts: Vec<Complex64> = (0..k).map(|j| Complex64::new(0.0, j as f64 + 1.0)).collect();
            let h = sys.transfer(&pts).unwrap();
            assert_abs_diff_eq!(h.norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn matches_explicit_inverse_oracle() {
        let sys = BilinearSystem::seeded(3, 11, 0.8);
        let pts = [Complex64::new(0.0, 1.0), Complex64::new(0.0, 2.0)];
        let fast = sys.transfer(&pts).unwrap();
        let slow = transfer_by_explicit_inverses(&sys, &pts);
        assert_relative_eq!(fast.re, slow.re, max_relative = 1e-10);
        assert_relative_eq!(fast.im, slow.im, max_relative = 1e-10);
    }

    #[test]
    fn singular_shift_is_reported() {
        let sys = scalar_system(-1.0, 0.0, 1.0, 1.0);
        let err = sys.transfer(&[Complex64::new(-1.0, 0.0)]).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn perturbed_with_zero_f_matches_base() {
        let sys = BilinearSystem::seeded(4, 5, 0.6);
        let p = PerturbedSystem::new(sys.clone(), DMatrix::zeros(4, 4)).unwrap();
        let pts = [Complex64::new(0.3, 1.0), Complex64::new(-0.1, 2.0)];
        let h0 = sys.transfer(&pts).unwrap();
        let h1 = p.transfer(&pts).unwrap();
        assert_abs_diff_eq!((h0 - h1).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn perturbed_scalar_resolvent_sign_convention() {
        // a = -2, f = 0.5: H~_1(0) = c b / (0 - (a + f)) = c b / 1.5.
        let sys = scalar_system(-2.0, 0.0, 2.0, 3.0);
        let p = PerturbedSystem::new(sys, DMatrix::from_element(1, 1, 0.5)).unwrap();
        let h = p.transfer(&[Complex64::new(0.0, 0.0)]).unwrap();
        assert_relative_eq!(h.re, 6.0 / 1.5, max_relative = 1e-14);
    }

    #[test]
    fn perturbed_matches_explicit_inverse_oracle() {
        let sys = BilinearSystem::seeded(2, 21, 0.7);
        let f = make_perturbation(2, 1e-2, 99).unwrap();
        let p = PerturbedSystem::new(sys, f).unwrap();
        let pts = [Complex64::new(0.0, 0.7), Complex64::new(0.0, -1.3)];
        let got = p.transfer(&pts).unwrap();
        let expect = transfer_by_explicit_inverses(&p.to_system(), &pts);
        assert_relative_eq!(got.re, expect.re, max_relative = 1e-10);
        assert_relative_eq!(got.im, expect.im, max_relative = 1e-10);
    }

    #[test]
    fn simulate_zero_input_zero_state_is_zero() {
        let sys = BilinearSystem::seeded(3, 8, 0.5);
        let t: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        let u = vec![0.0; t.len()];
        let y = sys.simulate(&u, &t, &DVector::zeros(3)).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn simulate_matches_linear_step_response() {
        // a = -1, b = c = 1, u = 1: y(t) = 1 - exp(-t).
        let sys = scalar_system(-1.0, 0.0, 1.0, 1.0);
        let t: Vec<f64> = (0..=1000).map(|i| i as f64 * 1e-3).collect();
        let u = vec![1.0; t.len()];
        let y = sys.simulate(&u, &t, &DVector::zeros(1)).unwrap();
        let max_err = t
            .iter()
            .zip(&y)
            .map(|(ti, yi)| (yi - (1.0 - (-ti).exp())).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1e-6, "max error {max_err}");
    }

    #[test]
    fn simulate_reports_blow_up_time() {
        let sys = scalar_system(100.0, 0.0, 1.0, 1.0);
        let t: Vec<f64> = (0..=50).map(|i| i as f64).collect();
        let u = vec![1.0; t.len()];
        let err = sys.simulate(&u, &t, &DVector::zeros(1)).unwrap_err();
        match err {
            Error::Numerical(msg) => assert!(msg.contains("t = "), "message: {msg}"),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn perturbation_norm_is_exact_and_seeded() {
        let f1 = make_perturbation(5, 1e-4, 7).unwrap();
        let f2 = make_perturbation(5, 1e-4, 7).unwrap();
        let f3 = make_perturbation(5, 1e-4, 8).unwrap();
        let norm = linalg::spectral_norm(&f1);
        assert!((norm - 1e-4).abs() <= 1e-14, "norm {norm}");
        assert_eq!(f1, f2);
        assert!((f1 - f3).norm() > 0.0);
    }

    #[test]
    fn seeded_system_is_stable_with_prescribed_contraction() {
        for seed in [1u64, 2, 3] {
            let sys = BilinearSystem::seeded(5, seed, 0.3);
            assert!(sys.is_stable());
            assert!(sys.spectral_abscissa() <= -0.5 + 1e-9);
            // Normal A: peak resolvent gain is 1/|abscissa|; the product
            // with the coupling norm was pinned by the generator.
            let peak = -1.0 / sys.spectral_abscissa();
            let eta = peak * linalg::spectral_norm(sys.n());
            assert_relative_eq!(eta, 0.3, max_relative = 1e-9);
        }
    }

    #[test]
    fn marginally_stable_matrix_is_rejected() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1e-15]));
        let sys = BilinearSystem::new(
            a,
            DMatrix::zeros(2, 2),
            DVector::from_element(2, 1.0),
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        assert!(!sys.is_stable());
    }

    #[test]
    fn truncated_series_requires_positive_order() {
        let sys = scalar_system(-1.0, 0.0, 1.0, 1.0);
        assert!(TruncatedSeries::new(sys.clone(), 0).is_err());
        let ts = TruncatedSeries::new(sys, 3).unwrap();
        assert_eq!(ts.order(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn similarity_transform_preserves_transfer(
            seed in 0u64..500,
            k in 1usize..4,
        ) {
            let dim = 4;
            let sys = BilinearSystem::seeded(dim, seed, 0.8);
            let mut rng = linalg::seeded_rng(seed.wrapping_add(1000));
            // Well-conditioned similarity: identity plus a mild offset.
            let t = DMatrix::identity(dim, dim)
                + linalg::uniform_matrix(dim, dim, &mut rng) * 0.3;
            let t_inv = t.clone().lu().try_inverse().unwrap();
            let transformed = BilinearSystem::new(
                &t_inv * sys.a() * &t,
                &t_inv * sys.n() * &t,
                &t_inv * sys.b(),
                t.transpose() * sys.c(),
            ).unwrap();
            for trial in 0..5 {
                let pts: Vec<Complex64> = (0..k)
                    .map(|j| Complex64::new(
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-3.0..3.0) + (trial * k + j) as f64 * 1e-3,
                    ))
                    .collect();
                let h0 = sys.transfer(&pts).unwrap();
                let h1 = transformed.transfer(&pts).unwrap();
                let scale = h0.norm().max(1e-12);
                prop_assert!((h0 - h1).norm() / scale < 1e-9);
            }
        }

        #[test]
        fn transfer_scales_linearly_in_b(
            seed in 0u64..500,
            k in 1usize..4,
            alpha in -3.0f64..3.0,
        ) {
            let sys = BilinearSystem::seeded(3, seed, 0.8);
            let scaled = BilinearSystem::new(
                sys.a().clone(),
                sys.n().clone(),
                sys.b() * alpha,
                sys.c().clone(),
            ).unwrap();
            let pts: Vec<Complex64> = (0..k)
                .map(|j| Complex64::new(0.1, 0.9 + j as f64))
                .collect();
            let h0 = sys.transfer(&pts).unwrap();
            let h1 = scaled.transfer(&pts).unwrap();
            prop_assert!((h1 - h0 * Complex64::new(alpha, 0.0)).norm() <= 1e-10 * (1.0 + h0.norm()));
        }

        #[test]
        fn transfer_conjugate_symmetry(
            seed in 0u64..500,
            k in 1usize..4,
        ) {
            // Real data: conjugating every frequency conjugates the value.
            let sys = BilinearSystem::seeded(3, seed, 0.8);
            let mut rng = linalg::seeded_rng(seed.wrapping_add(77));
            let pts: Vec<Complex64> = (0..k)
                .map(|_| Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-2.0..2.0)))
                .collect();
            let conj_pts: Vec<Complex64> = pts.iter().map(|s| s.conj()).collect();
            let h = sys.transfer(&pts).unwrap();
            let hc = sys.transfer(&conj_pts).unwrap();
            prop_assert!((h.conj() - hc).norm() <= 1e-12 * (1.0 + h.norm()));
        }
    }
}
