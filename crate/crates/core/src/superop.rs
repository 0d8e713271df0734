//! Matrix representations of linear maps on operators.
//!
//! Operators are vectorized by stacking columns: `vec(X)[i + j·d] = X[i, j]`.
//! The matrix units form an orthonormal basis for the Hilbert–Schmidt inner
//! product, so the norm induced by the Frobenius norm is the largest singular
//! value of the representation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::{kron, Operator, ONE, ZERO};

#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    matrix: DMatrix<Complex64>,
}

pub fn vectorize(x: &Operator) -> DVector<Complex64> {
    DVector::from_column_slice(x.as_slice())
}

pub fn unvectorize(v: &DVector<Complex64>, dim: usize) -> Operator {
    Operator::from_column_slice(dim, dim, v.as_slice())
}

impl Superoperator {
    pub fn from_matrix(dim: usize, matrix: DMatrix<Complex64>) -> Result<Self> {
        let n = dim * dim;
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Dimension(format!(
                "superoperator on {dim}-dimensional operators needs a {n}x{n} matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { dim, matrix })
    }

    /// Tabulates a linear map by applying it to every matrix unit.
    pub fn from_map(dim: usize, map: impl Fn(&Operator) -> Operator) -> Self {
        let n = dim * dim;
        let mut matrix = DMatrix::zeros(n, n);
        let mut unit = Operator::zeros(dim, dim);
        for j in 0..dim {
            for i in 0..dim {
                unit[(i, j)] = ONE;
                let image = map(&unit);
                matrix.set_column(i + j * dim, &vectorize(&image));
                unit[(i, j)] = ZERO;
            }
        }
        Self { dim, matrix }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            matrix: DMatrix::identity(dim * dim, dim * dim),
        }
    }

    /// `X ↦ U X U†`, using `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.
    pub fn conjugation(u: &Operator) -> Self {
        Self {
            dim: u.nrows(),
            matrix: kron(&u.map(|z| z.conj()), u),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn apply(&self, x: &Operator) -> Operator {
        unvectorize(&(&self.matrix * vectorize(x)), self.dim)
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &Superoperator) -> Result<Self> {
        self.check_same(inner)?;
        Ok(Self {
            dim: self.dim,
            matrix: &self.matrix * &inner.matrix,
        })
    }

    pub fn sub(&self, other: &Superoperator) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            dim: self.dim,
            matrix: &self.matrix - &other.matrix,
        })
    }

    /// `[self, other] = self∘other − other∘self`.
    pub fn commutator(&self, other: &Superoperator) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            dim: self.dim,
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        })
    }

    /// `sup_{‖σ‖₂=1} ‖S(σ)‖₂`, the largest singular value.
    pub fn induced_norm(&self) -> f64 {
        largest_singular_value(&self.matrix)
    }

    fn check_same(&self, other: &Superoperator) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "superoperators act on {}- and {}-dimensional operators",
                self.dim, other.dim
            )));
        }
        Ok(())
    }
}

/// Largest singular value via the smaller Gram matrix.
pub fn largest_singular_value(m: &DMatrix<Complex64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() >= m.ncols() {
        m.adjoint() * m
    } else {
        m * m.adjoint()
    };
    let gram = (&gram + gram.adjoint()) * Complex64::new(0.5, 0.0);
    gram.symmetric_eigenvalues().max().max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{random_hermitian, random_unitary};
    use crate::operator::identity;
    use crate::rng::seeded_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_and_unitary_conjugation_have_unit_norm() {
        assert_abs_diff_eq!(Superoperator::identity(3).induced_norm(), 1.0, epsilon = 1e-12);
        let mut rng = seeded_rng(1, 0);
        let u = random_unitary(4, &mut rng);
        assert_abs_diff_eq!(Superoperator::conjugation(&u).induced_norm(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn matrix_application_matches_direct_definition() {
        let mut rng = seeded_rng(2, 0);
        let u = random_unitary(3, &mut rng);
        let a = random_hermitian(3, &mut rng);
        let direct = |x: &Operator| &u * x * u.adjoint() + &a * x - x * &a;
        let tabulated = Superoperator::from_map(3, direct);
        let closed = Superoperator::conjugation(&u);
        for _ in 0..100 {
            let x = random_hermitian(3, &mut rng) + random_hermitian(3, &mut rng) * Complex64::i();
            assert!((tabulated.apply(&x) - direct(&x)).norm() <= 1e-11);
            assert!((closed.apply(&x) - &u * &x * u.adjoint()).norm() <= 1e-11);
        }
    }

    #[test]
    fn composition_and_commutator() {
        let mut rng = seeded_rng(3, 0);
        let u = random_unitary(2, &mut rng);
        let v = random_unitary(2, &mut rng);
        let su = Superoperator::conjugation(&u);
        let sv = Superoperator::conjugation(&v);
        let composed = su.compose(&sv).unwrap();
        let uv = &u * &v;
        assert!((composed.matrix() - Superoperator::conjugation(&uv).matrix()).norm() < 1e-12);
        let c = su.commutator(&Superoperator::identity(2)).unwrap();
        assert!(c.matrix().norm() < 1e-14);
        assert!(su.compose(&Superoperator::identity(3)).is_err());
    }

    #[test]
    fn vectorization_is_column_stacking() {
        let x = Operator::from_fn(2, 2, |i, j| Complex64::new((i + 2 * j) as f64, 0.0));
        let v = vectorize(&x);
        assert_eq!(v[1], Complex64::new(1.0, 0.0));
        assert_eq!(v[2], Complex64::new(2.0, 0.0));
        assert_eq!(unvectorize(&v, 2), x);
        assert_eq!(Superoperator::identity(2).apply(&identity(2)), identity(2));
    }
}
