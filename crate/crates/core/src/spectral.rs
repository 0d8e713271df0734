//! Spectral decompositions of Hermitian operators with explicit degeneracy
//! grouping.

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::{ensure_hermitian, Operator, ZERO};

pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-9;

/// `H = Σ_n E_n P_n` with orthogonal eigenprojectors `P_n`.
///
/// The eigenbasis is kept alongside the projectors: column `i` of
/// [`basis`](Self::basis) spans part of level [`level_of`](Self::level_of)`[i]`.
/// Levels are sorted by ascending energy of the original operator; after
/// [`with_energies`](Self::with_energies) the order of levels is kept and
/// the energies are no longer sorted or necessarily distinct.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    energies: Vec<f64>,
    basis: Operator,
    level_of: Vec<usize>,
    projectors: Vec<Operator>,
}

impl SpectralDecomposition {
    /// Diagonalizes `h`, merging eigenvalues closer than
    /// `degeneracy_tol` times the spectral range into one level.
    pub fn decompose(h: &Operator, degeneracy_tol: f64) -> Result<Self> {
        if !(degeneracy_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "degeneracy tolerance must be positive, got {degeneracy_tol}"
            )));
        }
        ensure_hermitian(h, 1e-12)?;
        let dim = h.nrows();
        if dim == 0 {
            return Err(Error::Dimension("empty operator".into()));
        }
        let sym = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::try_new(sym, 1e-15, 10_000).ok_or(Error::Eigensolver { dim })?;

        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let sorted: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let range = sorted[dim - 1] - sorted[0];
        let threshold = degeneracy_tol * range;

        let mut basis = Operator::zeros(dim, dim);
        let mut level_of = Vec::with_capacity(dim);
        let mut clusters: Vec<Vec<f64>> = Vec::new();
        for (col, (&src, &value)) in order.iter().zip(&sorted).enumerate() {
            basis.set_column(col, &eig.eigenvectors.column(src));
            let new_level = match clusters.last() {
                None => true,
                Some(cluster) => value - cluster[cluster.len() - 1] > threshold,
            };
            if new_level {
                clusters.push(Vec::new());
            }
            clusters.last_mut().unwrap().push(value);
            level_of.push(clusters.len() - 1);
        }
        let energies = clusters
            .iter()
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        Ok(Self::from_basis(basis, level_of, energies))
    }

    /// Builds a decomposition from an orthonormal basis whose columns are
    /// grouped into levels. The caller guarantees orthonormality.
    pub(crate) fn from_basis(basis: Operator, level_of: Vec<usize>, energies: Vec<f64>) -> Self {
        let dim = basis.nrows();
        let mut projectors = vec![Operator::zeros(dim, dim); energies.len()];
        for (col, &level) in level_of.iter().enumerate() {
            let v = basis.column(col);
            projectors[level] += &v * v.adjoint();
        }
        Self {
            energies,
            basis,
            level_of,
            projectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Number of distinct levels `𝔇`.
    pub fn level_count(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn projectors(&self) -> &[Operator] {
        &self.projectors
    }

    /// Unitary whose columns are eigenvectors, grouped by level.
    pub fn basis(&self) -> &Operator {
        &self.basis
    }

    /// Level index of each basis column.
    pub fn level_of(&self) -> &[usize] {
        &self.level_of
    }

    pub fn rank(&self, level: usize) -> usize {
        self.level_of.iter().filter(|&&l| l == level).count()
    }

    pub fn reconstruct(&self) -> Operator {
        let dim = self.dim();
        self.projectors
            .iter()
            .zip(&self.energies)
            .fold(Operator::zeros(dim, dim), |acc, (p, &e)| acc + p * Complex64::new(e, 0.0))
    }

    /// Same projectors with new level energies, one per level. Used for the
    /// per-step Hamiltonians of a process, which share eigenspaces.
    pub fn with_energies(&self, energies: Vec<f64>) -> Result<Self> {
        if energies.len() != self.level_count() {
            return Err(Error::Dimension(format!(
                "{} energies given for {} levels",
                energies.len(),
                self.level_count()
            )));
        }
        if let Some(bad) = energies.iter().find(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite energy {bad}")));
        }
        Ok(Self {
            energies,
            ..self.clone()
        })
    }

    /// Splits every degenerate level into rank-one levels with the same
    /// energy.
    ///
    /// With a `reference` vector, the first basis vector of each level is
    /// the normalized projection `P_n|φ⟩`, so that the evolution of `|φ⟩`
    /// only ever touches one vector per level, as for a non-degenerate
    /// Hamiltonian.
    pub fn nondegenerate_refinement(&self, reference: Option<&DVector<Complex64>>) -> Result<Self> {
        let dim = self.dim();
        let mut basis = self.basis.clone();
        if let Some(phi) = reference {
            if phi.len() != dim {
                return Err(Error::Dimension(format!(
                    "reference vector has length {}, expected {dim}",
                    phi.len()
                )));
            }
            for level in 0..self.level_count() {
                let cols: Vec<usize> = (0..dim).filter(|&c| self.level_of[c] == level).collect();
                if cols.len() < 2 {
                    continue;
                }
                let projected = &self.projectors[level] * phi;
                let norm = projected.norm();
                if norm < 1e-12 {
                    continue;
                }
                // Gram-Schmidt of [P_n φ, old level vectors...] inside the level.
                let mut fresh: Vec<DVector<Complex64>> = vec![projected / Complex64::new(norm, 0.0)];
                for &c in &cols {
                    if fresh.len() == cols.len() {
                        break;
                    }
                    let mut v: DVector<Complex64> = self.basis.column(c).into_owned();
                    for u in &fresh {
                        let overlap = u.dotc(&v);
                        v -= u * overlap;
                    }
                    let n = v.norm();
                    if n > 1e-8 {
                        fresh.push(v / Complex64::new(n, 0.0));
                    }
                }
                debug_assert_eq!(fresh.len(), cols.len());
                for (&c, v) in cols.iter().zip(&fresh) {
                    basis.set_column(c, v);
                }
            }
        }
        let energies = self.level_of.iter().map(|&l| self.energies[l]).collect();
        Ok(Self::from_basis(basis, (0..dim).collect(), energies))
    }

    /// `(V ⊗ 1_r)† X (V ⊗ 1_r)` for an operator on this space ⊗ a trailing
    /// factor of dimension `r`.
    pub fn to_energy_frame(&self, x: &Operator, trailing: usize) -> Operator {
        conjugate_leading(x, &self.basis, trailing, true)
    }

    pub fn from_energy_frame(&self, x: &Operator, trailing: usize) -> Operator {
        conjugate_leading(x, &self.basis, trailing, false)
    }
}

/// Applies `Σ_nm c_nm P_n (·) P_m` to an operator on this space ⊗ 1_r.
pub(crate) fn apply_level_multiplier(
    spec: &SpectralDecomposition,
    coefficients: &nalgebra::DMatrix<Complex64>,
    x: &Operator,
    trailing: usize,
) -> Operator {
    let mut y = spec.to_energy_frame(x, trailing);
    scale_in_frame(&mut y, spec.level_of(), coefficients, trailing);
    spec.from_energy_frame(&y, trailing)
}

/// Multiplies entry `((a,l),(b,l'))` of a frame operator by `c[level(a), level(b)]`.
pub(crate) fn scale_in_frame(
    y: &mut Operator,
    level_of: &[usize],
    coefficients: &nalgebra::DMatrix<Complex64>,
    trailing: usize,
) {
    let n = y.nrows();
    for j in 0..n {
        let lj = level_of[j / trailing];
        for i in 0..n {
            let li = level_of[i / trailing];
            y[(i, j)] *= coefficients[(li, lj)];
        }
    }
}

fn conjugate_leading(x: &Operator, v: &Operator, trailing: usize, forward: bool) -> Operator {
    let n = v.nrows();
    assert_eq!(x.nrows(), n * trailing, "operator does not match basis ⊗ trailing factor");
    let (left, right) = if forward {
        (v.adjoint(), v.clone())
    } else {
        (v.clone(), v.adjoint())
    };
    if trailing == 1 {
        return &left * x * &right;
    }
    let mut out = Operator::from_element(n * trailing, n * trailing, ZERO);
    let mut block = Operator::zeros(n, n);
    for l in 0..trailing {
        for lp in 0..trailing {
            for c in 0..n {
                for d in 0..n {
                    block[(c, d)] = x[(c * trailing + l, d * trailing + lp)];
                }
            }
            let t = &left * &block * &right;
            for c in 0..n {
                for d in 0..n {
                    out[(c * trailing + l, d * trailing + lp)] = t[(c, d)];
                }
            }
        }
    }
    out
}
