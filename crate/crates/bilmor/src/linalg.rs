//! Shared dense linear-algebra helpers.
//!
//! Everything in this module wraps nalgebra primitives with the
//! conventions the rest of the crate relies on:
//!
//! * complex eigendecompositions of real matrices with deterministic
//!   eigenvalue ordering, conjugate pairing, and phase normalization,
//! * spectral norms and condition estimates via dense SVD,
//! * rank-revealing modified Gram-Schmidt,
//! * seeded random matrices for reproducible experiments.
//!
//! Nothing here is part of the public API; the domain modules re-export
//! what callers need.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub(crate) type CMat = DMatrix<Complex64>;
pub(crate) type CVec = DVector<Complex64>;
pub(crate) type CLu = nalgebra::linalg::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>;

/// Lift a real matrix into complex storage.
pub(crate) fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// LU factorization of the resolvent kernel sI - A for a complex shift.
pub(crate) fn resolvent_lu(a: &CMat, s: Complex64) -> CLu {
    let n = a.nrows();
    (CMat::identity(n, n) * s - a).lu()
}

/// Largest real part over the spectrum of a real matrix.
pub(crate) fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Strict stability with a small guard band: max Re(lambda) < -1e-12.
pub(crate) fn is_stable(a: &DMatrix<f64>) -> bool {
    spectral_abscissa(a) < -1e-12
}

/// Spectral 2-norm of a real matrix.
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Spectral 2-norm of a complex matrix.
pub(crate) fn spectral_norm_c(m: &CMat) -> f64 {
    nalgebra::linalg::SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Smallest singular value of a complex matrix.
pub(crate) fn smallest_singular_value_c(m: &CMat) -> f64 {
    nalgebra::linalg::SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// 2-norm condition number of a complex matrix; infinite when singular.
pub(crate) fn condition_2_c(m: &CMat) -> f64 {
    let sv = nalgebra::linalg::SVD::new(m.clone(), false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Explicit inverse of a complex matrix, with a descriptive error on failure.
pub(crate) fn invert_c(m: &CMat, what: &str) -> Result<CMat> {
    m.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{what} is singular")))
}

/// Eigenvalues of a real matrix, sorted by (Re, Im) ascending.
pub(crate) fn eigenvalues_sorted(a: &DMatrix<f64>) -> Vec<Complex64> {
    let mut vals: Vec<Complex64> = a.clone().complex_eigenvalues().iter().copied().collect();
    vals.sort_by(|x, y| {
        (x.re, x.im)
            .partial_cmp(&(y.re, y.im))
            .expect("eigenvalues are finite")
    });
    vals
}

/// Full complex eigendecomposition A = R diag(lambda) R^-1 of a real matrix.
///
/// Eigenvalues are sorted by (Re, Im) ascending. Conjugate pairs share one
/// inverse-iteration solve: the vector is computed for the positive-imaginary
/// member and conjugated for its partner, so conjugate symmetry of the basis
/// is exact. Each vector is phase-normalized (largest-modulus entry made
/// real and positive) for determinism.
///
/// The decomposition is only as good as the eigenvector conditioning; callers
/// that need a guarantee must check the reconstruction residual themselves.
pub(crate) fn complex_eigen(a: &DMatrix<f64>) -> Result<(Vec<Complex64>, CMat)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigendecomposition needs a square matrix");
    let ac = to_complex(a);
    let vals = eigenvalues_sorted(a);

    // Real Schur produces exactly conjugate spectra for real input, but we
    // classify with a tolerance anyway to be robust to rounding in Im.
    let scale: f64 = vals.iter().map(|l| l.norm()).fold(1.0, f64::max);
    let tol = 1e-12 * scale;

    let mut vectors: Vec<Option<CVec>> = vec![None; n];
    for (i, lam) in vals.iter().enumerate() {
        if vectors[i].is_some() {
            continue;
        }
        if lam.im > tol {
            return Err(Error::Numerical(
                "eigenvalue with positive imaginary part has no conjugate partner".into(),
            ));
        }
        let v = inverse_iteration(&ac, *lam)?;
        if lam.im < -tol {
            // Partner is the matching positive-imaginary eigenvalue.
            let j = vals
                .iter()
                .enumerate()
                .position(|(j, m)| {
                    vectors[j].is_none()
                        && j != i
                        && (m.re - lam.re).abs() <= tol
                        && (m.im + lam.im).abs() <= tol
                })
                .ok_or_else(|| {
                    Error::Numerical("unpaired complex eigenvalue in real spectrum".into())
                })?;
            vectors[j] = Some(v.map(|z| z.conj()));
        }
        vectors[i] = Some(v);
    }

    let mut r = CMat::zeros(n, n);
    for (i, v) in vectors.into_iter().enumerate() {
        r.set_column(i, &v.expect("every eigenvalue got a vector"));
    }
    Ok((vals, r))
}

/// One eigenvector by shifted inverse iteration.
///
/// The shift is offset from the eigenvalue by 1e-12 (1 + |lambda|) so the
/// factored matrix is invertible while still amplifying the target direction
/// by roughly 1e12 per sweep; three sweeps from a fixed starting vector are
/// plenty for well-separated spectra.
fn inverse_iteration(ac: &CMat, lambda: Complex64) -> Result<CVec> {
    let n = ac.nrows();
    let mut offset = 1e-12 * (1.0 + lambda.norm());
    for _attempt in 0..2 {
        let shift = lambda + Complex64::new(offset, 0.0);
        let m = ac - CMat::identity(n, n) * shift;
        let lu = m.lu();
        let mut v = CVec::from_element(n, Complex64::new(1.0, 0.0));
        v /= Complex64::new(v.norm(), 0.0);
        let mut ok = true;
        for _ in 0..3 {
            match lu.solve(&v) {
                Some(w) => v = &w / Complex64::new(w.norm(), 0.0),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(fix_phase(v));
        }
        // Exactly singular at this offset; back away further and retry.
        offset *= 1e3;
    }
    Err(Error::Numerical(format!(
        "inverse iteration failed near eigenvalue {lambda}"
    )))
}

/// Rotate a unit vector so its largest-modulus entry is real and positive.
fn fix_phase(mut v: CVec) -> CVec {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].norm() > v[best].norm() {
            best = i;
        }
    }
    let z = v[best];
    if z.norm() > 0.0 {
        let phase = z.conj() / Complex64::new(z.norm(), 0.0);
        v *= phase;
    }
    v
}

/// Rank-revealing modified Gram-Schmidt over real columns.
///
/// Columns are taken in order; each is orthogonalized twice against the
/// accepted basis (one reorthogonalization pass cures the classical MGS
/// cancellation) and kept only if what survives exceeds `rel_tol` times the
/// column's own norm. Columns negligible against the largest column of the
/// set are skipped outright; they are roundoff debris of whatever produced
/// the set (imaginary parts of nearly real data, say) and normalizing them
/// would launder noise into a basis direction.
/// Returns an nrows x rank matrix, rank possibly zero.
pub(crate) fn mgs_real(nrows: usize, cols: &[DVector<f64>], rel_tol: f64) -> DMatrix<f64> {
    let scale = cols.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in cols {
        assert_eq!(v.len(), nrows, "ragged column set");
        let original = v.norm();
        if original <= rel_tol * scale {
            continue;
        }
        let mut w = v.clone();
        for _pass in 0..2 {
            for q in &basis {
                let proj = q.dot(&w);
                if proj != 0.0 {
                    w -= q * proj;
                }
            }
        }
        let remaining = w.norm();
        if remaining > rel_tol * original {
            basis.push(w / remaining);
        }
    }
    let mut out = DMatrix::zeros(nrows, basis.len());
    for (j, q) in basis.iter().enumerate() {
        out.set_column(j, q);
    }
    out
}

/// Rank-revealing modified Gram-Schmidt over complex columns, with the
/// conjugated (Euclidean) inner product. Mirrors [`mgs_real`].
pub(crate) fn mgs_complex(nrows: usize, cols: &[CVec], rel_tol: f64) -> CMat {
    let scale = cols.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let mut basis: Vec<CVec> = Vec::new();
    for v in cols {
        assert_eq!(v.len(), nrows, "ragged column set");
        let original = v.norm();
        if original <= rel_tol * scale {
            continue;
        }
        let mut w = v.clone();
        for _pass in 0..2 {
            for q in &basis {
                let proj = q.dotc(&w);
                if proj != Complex64::new(0.0, 0.0) {
                    w -= q * proj;
                }
            }
        }
        let remaining = w.norm();
        if remaining > rel_tol * original {
            basis.push(w / Complex64::new(remaining, 0.0));
        }
    }
    let mut out = CMat::zeros(nrows, basis.len());
    for (j, q) in basis.iter().enumerate() {
        out.set_column(j, q);
    }
    out
}

/// Unconjugated complex dot product: sum of componentwise products.
///
/// nalgebra's `dot` already skips conjugation for complex vectors, but the
/// convention matters enough here to pin it down locally.
pub(crate) fn udot(x: &CVec, y: &CVec) -> Complex64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
}

/// Real block-diagonal stacking of two square matrices.
pub(crate) fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(na + nb, na + nb);
    out.view_mut((0, 0), (na, na)).copy_from(a);
    out.view_mut((na, na), (nb, nb)).copy_from(b);
    out
}

/// Deterministic generator for seeded experiments.
pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix with entries uniform on [-1, 1).
pub(crate) fn uniform_matrix(nrows: usize, ncols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(nrows, ncols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random unit vector with uniform entries before normalization.
pub(crate) fn unit_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}
