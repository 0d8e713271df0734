//! Dense complex operators on finite-dimensional Hilbert spaces.
//!
//! Every operator is a plain `nalgebra` matrix. Composite spaces are ordered
//! environment ⊗ system ⊗ ancilla throughout the crate, with the first factor
//! most significant in the row-major Kronecker index.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Operator = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Largest entrywise deviation `max |X_ij - conj(X_ji)|`.
pub fn hermiticity_deviation(x: &Operator) -> f64 {
    let n = x.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((x[(i, j)] - x[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Rejects non-square or non-Hermitian input. `tol` is relative to the
/// largest entry (with a floor of one).
pub fn ensure_hermitian(x: &Operator, tol: f64) -> Result<()> {
    if !x.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square operator, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let deviation = hermiticity_deviation(x);
    let scale = x.iter().map(|z| z.norm()).fold(1.0f64, f64::max);
    if deviation > tol * scale {
        return Err(Error::NotHermitian { deviation });
    }
    Ok(())
}

pub fn trace(x: &Operator) -> Complex64 {
    x.diagonal().sum()
}

pub fn frobenius_norm(x: &Operator) -> f64 {
    x.norm()
}

/// Largest singular value.
pub fn operator_norm(x: &Operator) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.clone().singular_values().max()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchattenNorms {
    pub operator: f64,
    pub frobenius: f64,
}

pub fn schatten_norms(x: &Operator) -> SchattenNorms {
    SchattenNorms {
        operator: operator_norm(x),
        frobenius: frobenius_norm(x),
    }
}

/// `tr(A B)` without forming the product.
pub fn trace_product(a: &Operator, b: &Operator) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn kron(a: &Operator, b: &Operator) -> Operator {
    a.kronecker(b)
}

pub fn identity(dim: usize) -> Operator {
    Operator::identity(dim, dim)
}

pub fn projector(v: &DVector<Complex64>) -> Operator {
    v * v.adjoint()
}

pub fn commutator(a: &Operator, b: &Operator) -> Operator {
    a * b - b * a
}

/// Partial trace over every factor not listed in `keep`.
///
/// `factor_dims` lists the tensor factors in order; `keep` holds factor
/// indices (any order, no duplicates). The kept factors stay in their
/// original relative order.
pub fn partial_trace(x: &Operator, factor_dims: &[usize], keep: &[usize]) -> Result<Operator> {
    if factor_dims.is_empty() {
        return Err(Error::Dimension("no tensor factors given".into()));
    }
    if let Some(pos) = factor_dims.iter().position(|&d| d == 0) {
        return Err(Error::Dimension(format!("factor {pos} has dimension 0")));
    }
    let total: usize = factor_dims.iter().product();
    if x.nrows() != total || x.ncols() != total {
        return Err(Error::Dimension(format!(
            "operator is {}x{} but factors {:?} multiply to {}",
            x.nrows(),
            x.ncols(),
            factor_dims,
            total
        )));
    }
    let mut kept = vec![false; factor_dims.len()];
    for &k in keep {
        if k >= factor_dims.len() {
            return Err(Error::Dimension(format!(
                "kept factor {k} does not exist (only {} factors)",
                factor_dims.len()
            )));
        }
        if kept[k] {
            return Err(Error::Dimension(format!("factor {k} listed twice")));
        }
        kept[k] = true;
    }

    // Row-major strides of the full index.
    let mut strides = vec![1usize; factor_dims.len()];
    for f in (0..factor_dims.len() - 1).rev() {
        strides[f] = strides[f + 1] * factor_dims[f + 1];
    }
    let kept_factors: Vec<usize> = (0..factor_dims.len()).filter(|&f| kept[f]).collect();
    let traced_factors: Vec<usize> = (0..factor_dims.len()).filter(|&f| !kept[f]).collect();

    let offsets = |factors: &[usize]| -> Vec<usize> {
        let count: usize = factors.iter().map(|&f| factor_dims[f]).product();
        (0..count)
            .map(|mut idx| {
                let mut offset = 0;
                for &f in factors.iter().rev() {
                    offset += (idx % factor_dims[f]) * strides[f];
                    idx /= factor_dims[f];
                }
                offset
            })
            .collect()
    };
    let kept_offsets = offsets(&kept_factors);
    let traced_offsets = offsets(&traced_factors);

    let out_dim = kept_offsets.len();
    let mut out = Operator::zeros(out_dim, out_dim);
    for (i, &ri) in kept_offsets.iter().enumerate() {
        for (j, &cj) in kept_offsets.iter().enumerate() {
            out[(i, j)] = traced_offsets.iter().map(|&t| x[(ri + t, cj + t)]).sum();
        }
    }
    Ok(out)
}

/// Dimensions of the environment, system and ancilla factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub env: usize,
    pub system: usize,
    pub ancilla: usize,
}

impl Layout {
    pub fn new(env: usize, system: usize, ancilla: usize) -> Result<Self> {
        for (name, d) in [("environment", env), ("system", system), ("ancilla", ancilla)] {
            if d == 0 {
                return Err(Error::Dimension(format!("{name} dimension must be positive")));
            }
        }
        Ok(Self { env, system, ancilla })
    }

    pub fn total(&self) -> usize {
        self.env * self.system * self.ancilla
    }

    pub fn env_system(&self) -> usize {
        self.env * self.system
    }

    pub fn system_ancilla(&self) -> usize {
        self.system * self.ancilla
    }

    pub fn factor_dims(&self) -> [usize; 3] {
        [self.env, self.system, self.ancilla]
    }

    /// `1_E ⊗ K` for an operator `K` on system ⊗ ancilla.
    pub fn embed_operation(&self, k: &Operator) -> Result<Operator> {
        let d = self.system_ancilla();
        if k.nrows() != d || k.ncols() != d {
            return Err(Error::Dimension(format!(
                "operation acts on a {}x{} space, layout expects system ⊗ ancilla of dimension {d}",
                k.nrows(),
                k.ncols()
            )));
        }
        Ok(kron(&identity(self.env), k))
    }

    /// `X ⊗ 1_Γ` for an operator `X` on environment ⊗ system.
    pub fn embed_env_system(&self, x: &Operator) -> Result<Operator> {
        let d = self.env_system();
        if x.nrows() != d || x.ncols() != d {
            return Err(Error::Dimension(format!(
                "expected an environment ⊗ system operator of dimension {d}, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(kron(x, &identity(self.ancilla)))
    }
}

/// Checks that `rho` is Hermitian, positive semidefinite and of unit trace.
pub fn ensure_density(rho: &Operator, tol: f64) -> Result<()> {
    ensure_hermitian(rho, 1e-10).map_err(|e| Error::InvalidState(e.to_string()))?;
    let tr = trace(rho);
    if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
        return Err(Error::InvalidState(format!("trace is {tr}, expected 1")));
    }
    let herm = (rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    let min_eig = herm.symmetric_eigenvalues().min();
    if min_eig < -tol {
        return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:.3e}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_operator(d: usize, seed: u64) -> Operator {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Operator::from_fn(d, d, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    #[test]
    fn diagonal_norms() {
        let x = Operator::from_diagonal(&DVector::from_vec(vec![c(3.0), c(-4.0)]));
        let n = schatten_norms(&x);
        assert_abs_diff_eq!(n.operator, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.frobenius, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_norms() {
        let n = schatten_norms(&Operator::zeros(3, 3));
        assert_eq!(n.operator, 0.0);
        assert_eq!(n.frobenius, 0.0);
    }

    #[test]
    fn frobenius_matches_singular_values() {
        let x = random_operator(4, 11);
        let sv = x.clone().singular_values();
        let sum_sq: f64 = sv.iter().map(|s| s * s).sum();
        assert_abs_diff_eq!(frobenius_norm(&x).powi(2), sum_sq, epsilon = 1e-10);
    }

    #[test]
    fn partial_trace_of_product_state() {
        let a = Operator::from_row_slice(2, 2, &[c(0.7), Complex64::new(0.1, 0.2), Complex64::new(0.1, -0.2), c(0.3)]);
        let b = Operator::from_diagonal(&DVector::from_vec(vec![c(0.2), c(0.5), c(0.3)])) * c(2.0);
        let x = kron(&a, &b);
        let ra = partial_trace(&x, &[2, 3], &[0]).unwrap();
        assert!((ra - &a * trace(&b)).norm() < 1e-14);
    }

    #[test]
    fn partial_trace_of_maximally_entangled_pair() {
        let d = 3;
        let mut v = DVector::zeros(d * d);
        for i in 0..d {
            v[i * d + i] = c(1.0 / (d as f64).sqrt());
        }
        let x = projector(&v);
        for keep in [0, 1] {
            let r = partial_trace(&x, &[d, d], &[keep]).unwrap();
            assert!((r - identity(d) * c(1.0 / d as f64)).norm() < 1e-14);
        }
    }

    #[test]
    fn partial_trace_matches_index_sum_oracle() {
        let (da, db) = (2, 3);
        let g = random_operator(da * db, 5);
        let rho = &g * g.adjoint();
        let rho = &rho / trace(&rho);
        let mut keep_a = Operator::zeros(da, da);
        let mut keep_b = Operator::zeros(db, db);
        for i in 0..da {
            for j in 0..da {
                for k in 0..db {
                    keep_a[(i, j)] += rho[(i * db + k, j * db + k)];
                }
            }
        }
        for i in 0..db {
            for j in 0..db {
                for k in 0..da {
                    keep_b[(i, j)] += rho[(k * db + i, k * db + j)];
                }
            }
        }
        assert!((partial_trace(&rho, &[da, db], &[0]).unwrap() - keep_a).norm() < 1e-14);
        assert!((partial_trace(&rho, &[da, db], &[1]).unwrap() - keep_b).norm() < 1e-14);
    }

    #[test]
    fn partial_trace_reorders_nothing_and_preserves_trace() {
        let x = random_operator(12, 9);
        let r = partial_trace(&x, &[2, 3, 2], &[2, 0]).unwrap();
        assert_eq!(r.nrows(), 4);
        assert!((trace(&r) - trace(&x)).norm() < 1e-12);
        let full = partial_trace(&x, &[2, 3, 2], &[0, 1, 2]).unwrap();
        assert!((full - &x).norm() < 1e-14);
    }

    #[test]
    fn partial_trace_reports_mismatch() {
        let x = Operator::zeros(6, 6);
        let err = partial_trace(&x, &[2, 2], &[0]).unwrap_err();
        assert!(err.to_string().contains("[2, 2]"));
        let err = partial_trace(&x, &[2, 0, 3], &[0]).unwrap_err();
        assert!(err.to_string().contains("factor 1"));
    }

    #[test]
    fn embedding_identity_and_trivial_environment() {
        let layout = Layout::new(3, 2, 2).unwrap();
        let e = layout.embed_operation(&identity(4)).unwrap();
        assert!((e - identity(12)).norm() < 1e-15);

        let k = random_operator(4, 1);
        let layout = Layout::new(1, 2, 2).unwrap();
        assert!((layout.embed_operation(&k).unwrap() - &k).norm() < 1e-15);
    }

    #[test]
    fn embedding_matches_explicit_block_structure() {
        let layout = Layout::new(2, 2, 1).unwrap();
        let sx = Operator::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let e = layout.embed_operation(&sx).unwrap();
        let mut expected = Operator::zeros(4, 4);
        for block in 0..2 {
            expected[(2 * block, 2 * block + 1)] = c(1.0);
            expected[(2 * block + 1, 2 * block)] = c(1.0);
        }
        assert_eq!(e, expected);
        assert!(layout.embed_operation(&identity(3)).is_err());
    }

    #[test]
    fn density_validation() {
        assert!(ensure_density(&(identity(2) * c(0.5)), 1e-10).is_ok());
        assert!(ensure_density(&identity(2), 1e-10).is_err());
        let bad = Operator::from_diagonal(&DVector::from_vec(vec![c(1.5), c(-0.5)]));
        assert!(ensure_density(&bad, 1e-10).is_err());
    }

    #[test]
    fn hermiticity_rejection_reports_violation() {
        let x = Operator::from_row_slice(2, 2, &[c(1.0), c(2.0), c(0.0), c(1.0)]);
        match ensure_hermitian(&x, 1e-12) {
            Err(Error::NotHermitian { deviation }) => assert_abs_diff_eq!(deviation, 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
