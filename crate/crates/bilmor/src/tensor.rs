//! Kronecker-product and column-stacking primitives.
//!
//! Everything in this crate that reshapes a matrix equation into a linear
//! system goes through these three operations, so their conventions are the
//! single source of truth:
//!
//! - [`kron`] uses the standard block layout: entry `(i, j)` of the left
//!   factor scales a full copy of the right factor.
//! - [`vectorize`] stacks columns, `(p11, ..., pm1, p12, ...)ᵀ`.
//! - [`unvectorize`] is its exact inverse for given dimensions.
//!
//! The identities that hold for these conventions (and are pinned by the
//! property tests below) are
//!
//! ```text
//! vectorize(A X B) = kron(Bᵀ, A) · vectorize(X)
//! kron(A, B) · kron(C, D) = kron(A C, B D)
//! ‖kron(A, B)‖_F = ‖A‖_F · ‖B‖_F
//! ```

use nalgebra::{DMatrix, DVector, Scalar};
use std::ops::Mul;

use crate::error::{Error, Result};

/// Kronecker product `A ⊗ B`.
///
/// For `A` of size `m×n` and `B` of size `p×q` the result has size
/// `mp×nq`, with the `(i, j)` block equal to `a_ij · B`.
///
/// ```
/// use nalgebra::DMatrix;
/// let a = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
/// let b = DMatrix::from_row_slice(2, 1, &[1.0, 4.0]);
/// let k = bilmor::tensor::kron(&a, &b);
/// assert_eq!(k, DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 8.0, 12.0]));
/// ```
pub fn kron<T>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T>
where
    T: Scalar + Copy + Mul<Output = T>,
{
    let (m, n) = a.shape();
    let (p, q) = b.shape();
    DMatrix::from_fn(m * p, n * q, |row, col| {
        a[(row / p, col / q)] * b[(row % p, col % q)]
    })
}

/// Stacks the columns of `P` into a single vector.
///
/// The storage convention is column-major, so for an `m×n` matrix the
/// result is `(p11, ..., pm1, p12, ..., pmn)ᵀ` of length `mn`.
pub fn vectorize<T: Scalar + Copy>(p: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(p.as_slice())
}

/// Reshapes a length-`mn` vector back into an `m×n` matrix, inverting
/// [`vectorize`].
///
/// Fails if the vector length does not equal `m * n`.
pub fn unvectorize<T: Scalar + Copy>(v: &DVector<T>, m: usize, n: usize) -> Result<DMatrix<T>> {
    if v.len() != m * n {
        return Err(Error::DimensionMismatch(format!(
            "cannot reshape a vector of length {} into a {}x{} matrix",
            v.len(),
            m,
            n
        )));
    }
    Ok(DMatrix::from_column_slice(m, n, v.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Independent oracle: builds `A ⊗ B` entry by entry from the block
    /// definition, with explicit four-fold index loops.
    fn kron_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let (m, n) = a.shape();
        let (p, q) = b.shape();
        let mut out = DMatrix::zeros(m * p, n * q);
        for i in 0..m {
            for j in 0..n {
                for k in 0..p {
                    for l in 0..q {
                        out[(i * p + k, j * q + l)] = a[(i, j)] * b[(k, l)];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn kron_identity_blocks() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(kron(&i2, &i3), DMatrix::<f64>::identity(6, 6));
    }

    #[test]
    fn kron_scalar_left_factor() {
        let a = DMatrix::from_row_slice(1, 1, &[3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(kron(&a, &b), &b * 3.0);
    }

    #[test]
    fn kron_rectangular_matches_index_expansion_oracle() {
        // Frozen 2x3 and 3x2 inputs; expected values come from the
        // independent quadruple-loop oracle above.
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 4.0, -1.0]);
        let b = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, -1.0, 1.5, 0.25, -3.0]);
        let got = kron(&a, &b);
        let want = kron_oracle(&a, &b);
        assert_eq!(got.shape(), (6, 6));
        assert_relative_eq!(got, want, max_relative = 1e-15);
        // spot-check one entry by hand: block (1,2) of A times entry (2,1) of B
        // sits at row 1*3+2 = 5, col 2*2+1 = 5 and equals a12 * b21.
        assert_eq!(got[(5, 5)], a[(1, 2)] * b[(2, 1)]);
    }

    #[test]
    fn vectorize_column_stacks() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        let v = vectorize(&p);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn unvectorize_round_trip() {
        let p = DMatrix::from_row_slice(3, 2, &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = unvectorize(&vectorize(&p), 3, 2).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn unvectorize_rejects_bad_length() {
        let v = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        assert!(unvectorize(&v, 2, 2).is_err());
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |data| DMatrix::from_column_slice(rows, cols, &data))
    }

    fn dims() -> impl Strategy<Value = usize> {
        1usize..=5
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// vectorize(A X B) = kron(Bᵀ, A) vectorize(X)
        #[test]
        fn vec_of_triple_product(
            (a, x, b) in (dims(), dims(), dims(), dims())
                .prop_flat_map(|(m, n, p, q)| (small_matrix(m, n), small_matrix(n, p), small_matrix(p, q)))
        ) {
            let lhs = vectorize(&(&a * &x * &b));
            let rhs = kron(&b.transpose(), &a) * vectorize(&x);
            let scale = lhs.norm().max(1.0);
            prop_assert!((lhs - rhs).norm() <= 1e-12 * scale);
        }

        /// kron(A, B) kron(C, D) = kron(AC, BD)
        #[test]
        fn mixed_product_rule(
            (a, b, c, d) in (dims(), dims(), dims(), dims(), dims(), dims())
                .prop_flat_map(|(m, n, p, q, r, s)| {
                    (small_matrix(m, n), small_matrix(p, q), small_matrix(n, r), small_matrix(q, s))
                })
        ) {
            let lhs = kron(&a, &b) * kron(&c, &d);
            let rhs = kron(&(&a * &c), &(&b * &d));
            let scale = rhs.norm().max(1.0);
            prop_assert!((lhs - rhs).norm() <= 1e-12 * scale);
        }

        /// ‖A ⊗ B‖_F = ‖A‖_F ‖B‖_F
        #[test]
        fn frobenius_multiplicativity(
            (a, b) in (dims(), dims(), dims(), dims())
                .prop_flat_map(|(m, n, p, q)| (small_matrix(m, n), small_matrix(p, q)))
        ) {
            let lhs = kron(&a, &b).norm();
            let rhs = a.norm() * b.norm();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }
}
