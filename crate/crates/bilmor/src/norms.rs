//! H2 and H-infinity norms of bilinear transfer functions.
//!
//! The squared H2 norm of the k-th transfer function is the k-dimensional
//! frequency integral
//!
//! ```text
//! ||H_k||^2 = (1/2pi)^k  int ... int  |H_k(i w_1, ..., i w_k)|^2  dw_1 ... dw_k
//! ```
//!
//! and this module computes it two independent ways:
//!
//! * [`h2_subsystem_quadrature`]: direct quadrature of the integral after
//!   the compactifying substitution w = tan(theta), composite midpoint
//!   rule per axis, with a refinement-based error estimate,
//! * [`h2_truncated_gramian`]: the closed-form Kronecker expression whose
//!   j-th term equals the squared norm of the order-(j+1) subsystem,
//!   evaluated with one dense factorization of the n^2 x n^2 Kronecker
//!   sum.
//!
//! On top of these sit the truncated-series error norms (exact difference
//! of two systems via block-diagonal stacking, and the perturbed-system
//! variant with its printed extra term) and a refinement-based lower-bound
//! estimator for H-infinity norms of arbitrary frequency-domain gains.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, CVec};
use crate::system::{BilinearSystem, TruncatedSeries};
use crate::tensor;

/// Largest k the quadrature path accepts; cost grows as points^k.
pub const MAX_QUADRATURE_AXES: usize = 3;

/// Largest assembled Kronecker dimension (n^2 or (2n)^2) for the dense
/// Gramian path.
const MAX_KRONECKER_DIM: usize = 3600;

/// How a norm value was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMethod {
    Quadrature,
    Gramian,
}

/// A nonnegative norm value with its provenance.
///
/// For quadrature results `estimated_error` is the absolute difference
/// against a half-resolution grid; the Gramian path is exact linear
/// algebra and reports zero.
#[derive(Debug, Clone, Copy)]
pub struct NormResult {
    pub value: f64,
    pub method: NormMethod,
    pub estimated_error: f64,
}

/// A truncated-series H2 norm with its per-term breakdown.
///
/// `per_term[j]` is the norm contributed by summation term j, which for
/// the plain series is the H2 norm of the order-(j+1) subsystem.
#[derive(Debug, Clone)]
pub struct SeriesNorm {
    pub total: NormResult,
    pub per_term: Vec<f64>,
}

/// Midpoint grid on the compactified frequency axis.
///
/// Each axis carries the substitution w = tan(theta) with theta running
/// over (-pi/2, pi/2); the midpoint rule keeps nodes strictly inside, so
/// neither w = 0 nor the infinite endpoints are ever sampled. The count
/// must be even (symmetry about 0) and at least 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrequencyGrid {
    points_per_axis: usize,
}

impl FrequencyGrid {
    pub fn new(points_per_axis: usize) -> Result<Self> {
        if points_per_axis < 16 {
            return Err(Error::InvalidArgument(format!(
                "frequency grid needs at least 16 points per axis, got {points_per_axis}"
            )));
        }
        if !points_per_axis.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "frequency grid needs an even point count, got {points_per_axis}"
            )));
        }
        Ok(Self { points_per_axis })
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self { points_per_axis: 64 }
    }
}

/// Midpoint nodes in theta, mapped to (omega, quadrature weight) pairs.
/// The weight absorbs the Jacobian: dw = (1 + w^2) dtheta.
fn axis_nodes(points: usize) -> (Vec<f64>, Vec<f64>) {
    let h = PI / points as f64;
    (0..points)
        .map(|j| {
            let theta = -FRAC_PI_2 + (j as f64 + 0.5) * h;
            let w = theta.tan();
            (w, h * (1.0 + w * w))
        })
        .unzip()
}

fn singular_node() -> Error {
    Error::Singular("quadrature node produced a singular resolvent".into())
}

/// H2 norm of the k-th transfer function by k-dimensional quadrature.
///
/// One resolvent factorization is cached per node and axis; the k nested
/// sums reuse them, so the cost is O(points^k) inner products plus
/// O(points^(k-1)) solves rather than points^k full evaluations. The
/// summation order is fixed by node index, so the result is deterministic
/// no matter how the per-node work is scheduled.
pub fn h2_subsystem_quadrature(
    sys: &BilinearSystem,
    k: usize,
    grid: &FrequencyGrid,
) -> Result<NormResult> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "subsystem order must be at least 1".into(),
        ));
    }
    if k > MAX_QUADRATURE_AXES {
        return Err(Error::SizeLimit(format!(
            "quadrature supports up to {MAX_QUADRATURE_AXES} axes, got {k}; use the Gramian path"
        )));
    }
    if !sys.is_stable() {
        return Err(Error::Unstable(
            "H2 norm requested for an unstable system".into(),
        ));
    }
    let full = quadrature_value(sys, k, grid.points_per_axis())?;
    let half = quadrature_value(sys, k, grid.points_per_axis() / 2)?;
    Ok(NormResult {
        value: full,
        method: NormMethod::Quadrature,
        estimated_error: (full - half).abs(),
    })
}

fn quadrature_value(sys: &BilinearSystem, k: usize, points: usize) -> Result<f64> {
    let (omegas, weights) = axis_nodes(points);
    let ac = linalg::to_complex(sys.a());
    let nc = linalg::to_complex(sys.n());
    let bc = sys.b().map(|x| Complex64::new(x, 0.0));
    let cc = sys.c().map(|x| Complex64::new(x, 0.0));

    let lus: Vec<linalg::CLu> = omegas
        .par_iter()
        .map(|w| linalg::resolvent_lu(&ac, Complex64::new(0.0, *w)))
        .collect();
    // Stage vectors next to b: f_i = K(i w_i)^-1 b.
    let first: Vec<CVec> = lus
        .par_iter()
        .map(|lu| lu.solve(&bc).ok_or_else(singular_node))
        .collect::<Result<_>>()?;

    let sum = match k {
        1 => weights
            .iter()
            .zip(&first)
            .map(|(w, f)| w * linalg::udot(&cc, f).norm_sqr())
            .sum::<f64>(),
        2 => {
            let u: Vec<CVec> = first.iter().map(|f| &nc * f).collect();
            let z = output_stage(sys.a(), &omegas, &cc)?;
            let partials: Vec<f64> = (0..points)
                .into_par_iter()
                .map(|l| {
                    let mut acc = 0.0;
                    for i in 0..points {
                        acc += weights[i]
                            * weights[l]
                            * linalg::udot(&z[l], &u[i]).norm_sqr();
                    }
                    acc
                })
                .collect();
            partials.iter().sum()
        }
        3 => {
            let u: Vec<CVec> = first.iter().map(|f| &nc * f).collect();
            let z = output_stage(sys.a(), &omegas, &cc)?;
            let partials: Vec<f64> = (0..points)
                .into_par_iter()
                .map(|i| {
                    let mut acc = 0.0;
                    for j in 0..points {
                        let m = lus[j].solve(&u[i]).ok_or_else(singular_node)?;
                        let g = &nc * m;
                        for l in 0..points {
                            acc += weights[i]
                                * weights[j]
                                * weights[l]
                                * linalg::udot(&z[l], &g).norm_sqr();
                        }
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?;
            partials.iter().sum()
        }
        _ => unreachable!("axis count validated above"),
    };

    let scaled = sum * (1.0 / (2.0 * PI)).powi(k as i32);
    Ok(scaled.max(0.0).sqrt())
}

/// Stage rows next to c: z_l = K(i w_l)^-T c^T, via resolvents of A^T.
fn output_stage(a: &DMatrix<f64>, omegas: &[f64], cc: &CVec) -> Result<Vec<CVec>> {
    let at = linalg::to_complex(&a.transpose());
    omegas
        .par_iter()
        .map(|w| {
            linalg::resolvent_lu(&at, Complex64::new(0.0, *w))
                .solve(cc)
                .ok_or_else(singular_node)
        })
        .collect()
}

/// H2 norm of a truncated series by the closed-form Kronecker expression.
///
/// Term j of the summation equals the squared H2 norm of the order-(j+1)
/// subsystem; the per-term breakdown in the result reports the square
/// roots. One real LU of the n^2 x n^2 Kronecker sum is reused across all
/// terms; the coupling factor is applied matrix-free.
pub fn h2_truncated_gramian(ts: &TruncatedSeries) -> Result<SeriesNorm> {
    let sys = ts.system();
    if !sys.is_stable() {
        return Err(Error::Unstable(
            "H2 norm requested for an unstable system".into(),
        ));
    }
    kronecker_series(sys.a(), sys.n(), sys.b(), sys.c(), ts.order())
}

/// H2 distance between a truncated series and its state-matrix
/// perturbation, via the augmented block system.
///
/// The two systems are stacked block-diagonally (states [x; x~], output
/// row [c, -c]) and the Kronecker expression is applied to the stack. The
/// summation runs over j = 0..=M inclusive, one term more than the M
/// subsystem differences; the per-term breakdown makes the extra term
/// visible, and for contractive couplings it is negligible.
pub fn h2_error_norm(ts: &TruncatedSeries, f: &DMatrix<f64>) -> Result<SeriesNorm> {
    let sys = ts.system();
    let dim = sys.dim();
    if f.nrows() != dim || f.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "perturbation is {}x{}, state dimension is {dim}",
            f.nrows(),
            f.ncols()
        )));
    }
    if !sys.is_stable() {
        return Err(Error::Unstable("base system is unstable".into()));
    }
    let a_pert = sys.a() + f;
    if !linalg::is_stable(&a_pert) {
        return Err(Error::Unstable(
            "perturbation too large: A + F is unstable, the error norm does not exist".into(),
        ));
    }

    let a_aug = linalg::block_diag(sys.a(), &a_pert);
    let n_aug = linalg::block_diag(sys.n(), sys.n());
    let mut b_aug = DVector::zeros(2 * dim);
    let mut c_aug = DVector::zeros(2 * dim);
    for i in 0..dim {
        b_aug[i] = sys.b()[i];
        b_aug[dim + i] = sys.b()[i];
        c_aug[i] = sys.c()[i];
        c_aug[dim + i] = -sys.c()[i];
    }
    kronecker_series(&a_aug, &n_aug, &b_aug, &c_aug, ts.order() + 1)
}

/// H2 distance between two truncated series of the same order M:
/// the square root of the sum over k = 1..=M of ||H_k - G_k||^2.
///
/// The state dimensions may differ; the difference is realized exactly by
/// block-diagonal stacking, so this is the natural metric between a
/// system and its reduced model.
pub fn h2_pair_error(
    sys1: &BilinearSystem,
    sys2: &BilinearSystem,
    order: usize,
) -> Result<SeriesNorm> {
    if order == 0 {
        return Err(Error::InvalidArgument(
            "truncation order must be at least 1".into(),
        ));
    }
    let diff = difference_system(sys1, sys2)?;
    if !diff.is_stable() {
        return Err(Error::Unstable(
            "both systems must be stable for the pair error".into(),
        ));
    }
    kronecker_series(diff.a(), diff.n(), diff.b(), diff.c(), order)
}

/// Block-diagonal stacking whose transfer functions are exactly
/// H_k(sys1) - H_k(sys2) at every order k and frequency tuple.
pub fn difference_system(sys1: &BilinearSystem, sys2: &BilinearSystem) -> Result<BilinearSystem> {
    let (n1, n2) = (sys1.dim(), sys2.dim());
    let a = linalg::block_diag(sys1.a(), sys2.a());
    let n = linalg::block_diag(sys1.n(), sys2.n());
    let mut b = DVector::zeros(n1 + n2);
    let mut c = DVector::zeros(n1 + n2);
    for i in 0..n1 {
        b[i] = sys1.b()[i];
        c[i] = sys1.c()[i];
    }
    for i in 0..n2 {
        b[n1 + i] = sys2.b()[i];
        c[n1 + i] = -sys2.c()[i];
    }
    BilinearSystem::new(a, n, b, c)
}

/// Shared Kronecker-series core: sum over the first `terms` values of
/// (c (x) c) [T^-1 (N (x) N)]^j T^-1 (b (x) b) with T = -(A (x) I + I (x) A).
///
/// The Kronecker sum is assembled densely and factored once; applications
/// of N (x) N ride on the identity (N (x) N) vec(P) = vec(N P N^T).
fn kronecker_series(
    a: &DMatrix<f64>,
    n: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    terms: usize,
) -> Result<SeriesNorm> {
    let dim = a.nrows();
    if dim * dim > MAX_KRONECKER_DIM {
        return Err(Error::SizeLimit(format!(
            "dense Gramian path assembles a {0}x{0} matrix; limit is {MAX_KRONECKER_DIM}",
            dim * dim
        )));
    }
    let eye = DMatrix::identity(dim, dim);
    let t = -(tensor::kron(a, &eye) + tensor::kron(&eye, a));
    let lu = t.lu();

    let b_mat = DMatrix::from_column_slice(dim, 1, b.as_slice());
    let c_mat = DMatrix::from_column_slice(dim, 1, c.as_slice());
    let bb = DVector::from_column_slice(tensor::kron(&b_mat, &b_mat).as_slice());
    let cc = DVector::from_column_slice(tensor::kron(&c_mat, &c_mat).as_slice());

    let mut v = lu
        .solve(&bb)
        .ok_or_else(|| Error::Singular("Kronecker sum matrix is singular".into()))?;
    let mut per_term = Vec::with_capacity(terms);
    let mut total = 0.0;
    for j in 0..terms {
        let term = cc.dot(&v);
        per_term.push(term.max(0.0).sqrt());
        total += term;
        if j + 1 < terms {
            let p = tensor::unvectorize(&v, dim, dim)?;
            let w = n * p * n.transpose();
            v = lu
                .solve(&tensor::vectorize(&w))
                .ok_or_else(|| Error::Singular("Kronecker sum matrix is singular".into()))?;
        }
    }
    Ok(SeriesNorm {
        total: NormResult {
            value: total.max(0.0).sqrt(),
            method: NormMethod::Gramian,
            estimated_error: 0.0,
        },
        per_term,
    })
}

/// Lower-bound estimate of an H-infinity norm over k frequency axes.
///
/// `gain` maps a real frequency tuple (w_1, ..., w_k) to a nonnegative
/// gain, typically |H_k| or a spectral norm. A coarse scan over the
/// compactified grid seeds the incumbent; each of the `refine` rounds then
/// evaluates a 9-point-per-axis window around it (the incumbent itself
/// included, so the estimate never decreases) and shrinks the window by 4.
/// The result is a lower bound on the true supremum.
pub fn h_infinity_estimate<F>(gain: &F, k: usize, grid: &FrequencyGrid, refine: usize) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert!(k >= 1, "at least one frequency axis");
    assert!(k <= 4, "H-infinity scan supports up to 4 axes");
    let points = grid.points_per_axis();
    let h = PI / points as f64;
    let thetas: Vec<f64> = (0..points)
        .map(|j| -FRAC_PI_2 + (j as f64 + 0.5) * h)
        .collect();

    // Coarse scan: deterministic argmax by flattened node index.
    let total = points.pow(k as u32);
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let tuple = decode_tuple(flat, points, k);
            let omegas: Vec<f64> = tuple.iter().map(|&j| thetas[j].tan()).collect();
            gain(&omegas)
        })
        .collect();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_idx = 0usize;
    for (i, v) in values.iter().enumerate() {
        if *v > best_val {
            best_val = *v;
            best_idx = i;
        }
    }
    let mut best_theta: Vec<f64> = decode_tuple(best_idx, points, k)
        .iter()
        .map(|&j| thetas[j])
        .collect();

    let limit = FRAC_PI_2 - 1e-9;
    let mut window = h;
    for _ in 0..refine {
        let offsets: Vec<f64> = (-4..=4).map(|i| i as f64 * window / 4.0).collect();
        let mut round_best = best_val;
        let mut round_theta = best_theta.clone();
        for flat in 0..9usize.pow(k as u32) {
            let combo = decode_tuple(flat, 9, k);
            let cand: Vec<f64> = (0..k)
                .map(|axis| (best_theta[axis] + offsets[combo[axis]]).clamp(-limit, limit))
                .collect();
            let omegas: Vec<f64> = cand.iter().map(|t| t.tan()).collect();
            let v = gain(&omegas);
            if v > round_best {
                round_best = v;
                round_theta = cand;
            }
        }
        best_val = round_best;
        best_theta = round_theta;
        window /= 4.0;
    }
    best_val.max(0.0)
}

fn decode_tuple(mut flat: usize, base: usize, k: usize) -> Vec<usize> {
    let mut out = vec![0usize; k];
    for slot in out.iter_mut() {
        *slot = flat % base;
        flat /= base;
    }
    out
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

    fn grid(p: usize) -> FrequencyGrid {
        FrequencyGrid::new(p).unwrap()
    }

    #[test]
    fn grid_rejects_small_or_odd_counts() {
        assert!(FrequencyGrid::new(8).is_err());
        assert!(FrequencyGrid::new(17).is_err());
        assert!(FrequencyGrid::new(16).is_ok());
    }

    #[test]
    fn scalar_first_order_norm_is_inverse_sqrt_two() {
        // (1/2pi) int dw / (1 + w^2) = 1/2; the tan substitution makes the
        // integrand constant in theta, so even a coarse grid nails it.
        let sys = scalar_system(-1.0, 0.0, 1.0, 1.0);
        let r = h2_subsystem_quadrature(&sys, 1, &grid(32)).unwrap();
        assert_relative_eq!(r.value, 1.0 / 2.0f64.sqrt(), max_relative = 1e-4);
        assert!(r.estimated_error <= 1e-12);
        assert_eq!(r.method, NormMethod::Quadrature);
    }

    #[test]
    fn zero_coupling_second_order_norm_vanishes() {
        let sys = BilinearSystem::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0])),
            DMatrix::zeros(2, 2),
            DVector::from_element(2, 1.0),
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        let r = h2_subsystem_quadrature(&sys, 2, &grid(16)).unwrap();
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn quadrature_refuses_unstable_systems() {
        let sys = scalar_system(1.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            h2_subsystem_quadrature(&sys, 1, &grid(16)),
            Err(Error::Unstable(_))
        ));
    }

    #[test]
    fn quadrature_matches_gramian_term_for_second_order() {
        let sys = BilinearSystem::seeded(3, 17, 0.4);
        let quad = h2_subsystem_quadrature(&sys, 2, &grid(256)).unwrap();
        let ts = TruncatedSeries::new(sys, 2).unwrap();
        let gram = h2_truncated_gramian(&ts).unwrap();
        assert_relative_eq!(quad.value, gram.per_term[1], max_relative = 1e-3);
    }

    #[test]
    fn gramian_scalar_series_collapses_to_linear_norm() {
        let sys = scalar_system(-1.0, 0.0, 1.0, 1.0);
        let ts = TruncatedSeries::new(sys, 3).unwrap();
        let r = h2_truncated_gramian(&ts).unwrap();
        assert_relative_eq!(r.total.value, 1.0 / 2.0f64.sqrt(), max_relative = 1e-12);
        assert_eq!(r.per_term.len(), 3);
        assert_relative_eq!(r.per_term[0], 1.0 / 2.0f64.sqrt(), max_relative = 1e-12);
        assert_abs_diff_eq!(r.per_term[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.per_term[2], 0.0, epsilon = 1e-14);
        assert_eq!(r.total.method, NormMethod::Gramian);
    }

    #[test]
    fn gramian_first_term_matches_lyapunov_identity() {
        // Independent oracle: solve A P + P A^T + b b^T = 0 through
        // nalgebra's own kronecker product, then compare c P c^T.
        let sys = BilinearSystem::seeded(4, 23, 0.5);
        let dim = sys.dim();
        let eye = DMatrix::<f64>::identity(dim, dim);
        let lhs = eye.kronecker(sys.a()) + sys.a().kronecker(&eye);
        let bbt = sys.b() * sys.b().transpose();
        let rhs = -DVector::from_column_slice(bbt.as_slice());
        let p_vec = lhs.lu().solve(&rhs).unwrap();
        let p = DMatrix::from_column_slice(dim, dim, p_vec.as_slice());
        let oracle = (sys.c().transpose() * &p * sys.c())[(0, 0)];

        let ts = TruncatedSeries::new(sys, 1).unwrap();
        let r = h2_truncated_gramian(&ts).unwrap();
        assert_relative_eq!(r.total.value, oracle.sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn gramian_agrees_with_quadrature_for_m_two() {
        let sys = BilinearSystem::seeded(4, 31, 0.3);
        let q1 = h2_subsystem_quadrature(&sys, 1, &grid(256)).unwrap().value;
        let q2 = h2_subsystem_quadrature(&sys, 2, &grid(256)).unwrap().value;
        let ts = TruncatedSeries::new(sys, 2).unwrap();
        let gram = h2_truncated_gramian(&ts).unwrap();
        let quad_total = (q1 * q1 + q2 * q2).sqrt();
        assert_relative_eq!(gram.total.value, quad_total, max_relative = 1e-3);
    }

    #[test]
    fn error_norm_of_zero_perturbation_vanishes() {
        let sys = BilinearSystem::seeded(3, 41, 0.4);
        let ts = TruncatedSeries::new(sys, 2).unwrap();
        let r = h2_error_norm(&ts, &DMatrix::zeros(3, 3)).unwrap();
        assert_abs_diff_eq!(r.total.value, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn error_norm_scalar_matches_residue_calculus() {
        // ||1/(s+1) - 1/(s+0.9)||^2 over the imaginary axis is
        // 1/2 + 1/1.8 - 2/1.9 by the pole-pair inner product
        // <1/(s+a), 1/(s+b)> = 1/(a+b).
        let sys = scalar_system(-1.0, 0.0, 1.0, 1.0);
        let ts = TruncatedSeries::new(sys, 1).unwrap();
        let f = DMatrix::from_element(1, 1, 0.1);
        let r = h2_error_norm(&ts, &f).unwrap();
        let expect = (0.5_f64 + 1.0 / 1.8 - 2.0 / 1.9).sqrt();
        assert_relative_eq!(r.total.value, expect, max_relative = 1e-10);
        // Zero coupling: every term beyond the first is zero.
        assert_abs_diff_eq!(r.per_term[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn error_norm_rejects_destabilizing_perturbation() {
        let sys = scalar_system(-0.1, 0.0, 1.0, 1.0);
        let ts = TruncatedSeries::new(sys, 1).unwrap();
        let f = DMatrix::from_element(1, 1, 0.2);
        assert!(matches!(h2_error_norm(&ts, &f), Err(Error::Unstable(_))));
    }

    #[test]
    fn error_norm_matches_per_subsystem_quadrature() {
        // Strongly contractive coupling so the extra printed term is far
        // below the comparison tolerance.
        let sys = BilinearSystem::seeded(3, 7, 0.05);
        let f = crate::system::make_perturbation(3, 1e-3, 5).unwrap();
        let ts = TruncatedSeries::new(sys.clone(), 2).unwrap();
        let total = h2_error_norm(&ts, &f).unwrap().total.value;

        let perturbed = crate::system::PerturbedSystem::new(sys.clone(), f)
            .unwrap()
            .to_system();
        let diff = difference_system(&sys, &perturbed).unwrap();
        let d1 = h2_subsystem_quadrature(&diff, 1, &grid(256)).unwrap().value;
        let d2 = h2_subsystem_quadrature(&diff, 2, &grid(256)).unwrap().value;
        let decomposed = (d1 * d1 + d2 * d2).sqrt();
        assert_relative_eq!(total, decomposed, max_relative = 1e-3);
    }

    #[test]
    fn pair_error_against_itself_is_zero() {
        let sys = BilinearSystem::seeded(3, 3, 0.4);
        let r = h2_pair_error(&sys, &sys.clone(), 2).unwrap();
        assert_abs_diff_eq!(r.total.value, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn pair_error_handles_mixed_dimensions() {
        let big = BilinearSystem::seeded(4, 9, 0.3);
        let small = BilinearSystem::seeded(2, 10, 0.3);
        let r = h2_pair_error(&big, &small, 2).unwrap();
        assert!(r.total.value > 0.0);
        assert_eq!(r.per_term.len(), 2);
    }

    #[test]
    fn hinf_scalar_resolvent_peaks_at_origin() {
        // |1/(i w + 1)| has its maximum 1 at w = 0, which no grid node
        // hits; refinement has to walk there.
        let gain = |w: &[f64]| 1.0 / (Complex64::new(1.0, w[0])).norm();
        let est = h_infinity_estimate(&gain, 1, &grid(32), 8);
        assert!(est <= 1.0 + 1e-12);
        assert!((est - 1.0).abs() <= 1e-6, "estimate {est}");
    }

    #[test]
    fn hinf_zero_gain_stays_zero() {
        let gain = |_: &[f64]| 0.0;
        assert_eq!(h_infinity_estimate(&gain, 2, &grid(16), 3), 0.0);
    }

    #[test]
    fn hinf_diagonal_resolvent_norm() {
        // ||(i w I - A)^-1||_2 for A = diag(-1, -2) peaks at 1 for w = 0.
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let ac = linalg::to_complex(&a);
        let gain = move |w: &[f64]| {
            let k = linalg::CMat::identity(2, 2) * Complex64::new(0.0, w[0]) - &ac;
            1.0 / linalg::smallest_singular_value_c(&k)
        };
        let est = h_infinity_estimate(&gain, 1, &grid(32), 8);
        assert!((est - 1.0).abs() <= 1e-6, "estimate {est}");
    }

    #[test]
    fn hinf_estimate_is_monotone_in_refinement() {
        let sys = BilinearSystem::seeded(3, 57, 0.4);
        let ac = linalg::to_complex(sys.a());
        let bc = sys.b().map(|x| Complex64::new(x, 0.0));
        let cc = sys.c().map(|x| Complex64::new(x, 0.0));
        let gain = move |w: &[f64]| {
            let lu = linalg::resolvent_lu(&ac, Complex64::new(0.0, w[0]));
            let f = lu.solve(&bc).unwrap();
            linalg::udot(&cc, &f).norm()
        };
        let mut prev = 0.0;
        for refine in 0..5 {
            let est = h_infinity_estimate(&gain, 1, &grid(32), refine);
            assert!(est >= prev - 1e-15, "round {refine}: {est} < {prev}");
            prev = est;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn triangle_bound_on_pair_error(seed1 in 0u64..200, seed2 in 200u64..400) {
            let s1 = BilinearSystem::seeded(3, seed1, 0.3);
            let s2 = BilinearSystem::seeded(3, seed2, 0.3);
            let order = 2;
            let err = h2_pair_error(&s1, &s2, order).unwrap();
            let n1 = h2_truncated_gramian(&TruncatedSeries::new(s1, order).unwrap()).unwrap();
            let n2 = h2_truncated_gramian(&TruncatedSeries::new(s2, order).unwrap()).unwrap();
            let bound: f64 = (0..order)
                .map(|j| (n1.per_term[j] + n2.per_term[j]).powi(2))
                .sum::<f64>()
                .sqrt();
            prop_assert!(err.total.value <= bound * (1.0 + 1e-9));
        }

        #[test]
        fn quadrature_norm_scales_with_input(seed in 0u64..200, alpha in 0.1f64..3.0) {
            let sys = BilinearSystem::seeded(3, seed, 0.4);
            let scaled = BilinearSystem::new(
                sys.a().clone(),
                sys.n().clone(),
                sys.b() * alpha,
                sys.c().clone(),
            ).unwrap();
            let g = grid(32);
            let base = h2_subsystem_quadrature(&sys, 2, &g).unwrap().value;
            let oth = h2_subsystem_quadrature(&scaled, 2, &g).unwrap().value;
            prop_assert!((oth - alpha * base).abs() <= 1e-9 * (1.0 + base));
        }
    }
}
