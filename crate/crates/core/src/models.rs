//! Test Hamiltonians and spectral diagnostics: level count, gap density
//! `N(ε)` and effective dimension.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::random_hermitian;
use crate::error::{Error, Result};
use crate::operator::{ensure_density, identity, kron, trace_product, Operator};
use crate::rng::seeded_rng;
use crate::spectral::SpectralDecomposition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelKind {
    /// Complex Gaussian entries of variance `1/d`, symmetrized.
    RandomGaussianHermitian,
    /// Open spin-½ chain `J Σ σ⃗_i·σ⃗_{i+1} + Σ (h + w_i) Z_i` with
    /// `w_i` uniform in `[-disorder, disorder]`.
    HeisenbergChain {
        coupling: f64,
        #[serde(default)]
        field: f64,
        #[serde(default)]
        disorder: f64,
    },
    /// `diag(energies)` in the product basis.
    DiagonalSpectrum { energies: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianModel {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub env_dim: usize,
    pub system_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl HamiltonianModel {
    pub fn dim(&self) -> usize {
        self.env_dim * self.system_dim
    }

    /// Hermitian operator on environment ⊗ system, deterministic in the seed.
    pub fn build(&self) -> Result<Operator> {
        if self.env_dim == 0 || self.system_dim == 0 {
            return Err(Error::InvalidModel(format!(
                "dimensions must be positive, got env {} and system {}",
                self.env_dim, self.system_dim
            )));
        }
        let d = self.dim();
        match &self.kind {
            ModelKind::RandomGaussianHermitian => {
                let mut rng = seeded_rng(self.seed, 0);
                Ok(random_hermitian(d, &mut rng))
            }
            ModelKind::DiagonalSpectrum { energies } => {
                if energies.len() != d {
                    return Err(Error::InvalidModel(format!(
                        "diagonal spectrum has {} energies for dimension {d}",
                        energies.len()
                    )));
                }
                if energies.iter().any(|e| !e.is_finite()) {
                    return Err(Error::InvalidModel("non-finite energy".into()));
                }
                let diag = DVector::from_iterator(d, energies.iter().map(|&e| Complex64::new(e, 0.0)));
                Ok(Operator::from_diagonal(&diag))
            }
            ModelKind::HeisenbergChain {
                coupling,
                field,
                disorder,
            } => {
                if !d.is_power_of_two() || d < 2 {
                    return Err(Error::InvalidModel(format!(
                        "a spin chain needs a power-of-two dimension, got {d}"
                    )));
                }
                let sites = d.trailing_zeros() as usize;
                let mut rng = seeded_rng(self.seed, 0);
                let fields: Vec<f64> = (0..sites)
                    .map(|_| field + disorder * (2.0 * rng.random::<f64>() - 1.0))
                    .collect();
                Ok(heisenberg_chain(sites, *coupling, &fields))
            }
        }
    }
}

fn pauli(which: char) -> Operator {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    match which {
        'x' => Operator::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]),
        'y' => Operator::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]),
        'z' => Operator::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]),
        _ => identity(2),
    }
}

fn site_product(sites: usize, ops: &[(usize, char)]) -> Operator {
    (0..sites).fold(identity(1), |acc, site| {
        let factor = ops
            .iter()
            .find(|(s, _)| *s == site)
            .map(|(_, p)| pauli(*p))
            .unwrap_or_else(|| identity(2));
        kron(&acc, &factor)
    })
}

fn heisenberg_chain(sites: usize, coupling: f64, fields: &[f64]) -> Operator {
    let d = 1 << sites;
    let mut h = Operator::zeros(d, d);
    for i in 0..sites.saturating_sub(1) {
        for p in ['x', 'y', 'z'] {
            h += site_product(sites, &[(i, p), (i + 1, p)]) * Complex64::new(coupling, 0.0);
        }
    }
    for (i, &f) in fields.iter().enumerate() {
        h += site_product(sites, &[(i, 'z')]) * Complex64::new(f, 0.0);
    }
    h
}

/// Level differences of a spectrum and the window counts `N(ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStatistics {
    /// All `E_n − E_m` over ordered pairs of distinct levels, sorted.
    pub gaps: Vec<f64>,
    /// Smallest positive gap; zero when there is a single level.
    pub min_gap: f64,
}

impl GapStatistics {
    pub fn from_energies(energies: &[f64]) -> Self {
        let mut gaps = Vec::with_capacity(energies.len() * energies.len().saturating_sub(1));
        for (n, en) in energies.iter().enumerate() {
            for (m, em) in energies.iter().enumerate() {
                if n != m {
                    gaps.push(en - em);
                }
            }
        }
        gaps.sort_by(f64::total_cmp);
        let min_gap = gaps
            .iter()
            .copied()
            .filter(|&g| g > 0.0)
            .fold(f64::INFINITY, f64::min);
        Self {
            gaps,
            min_gap: if min_gap.is_finite() { min_gap } else { 0.0 },
        }
    }

    pub fn new(spec: &SpectralDecomposition) -> Self {
        Self::from_energies(spec.energies())
    }

    /// `N(ε)`: the largest number of gaps inside any window `[x, x + ε)`.
    ///
    /// The maximum is attained with the left edge on a gap, so it suffices to
    /// slide the window over the sorted gaps.
    pub fn max_gaps_in_window(&self, epsilon: f64) -> usize {
        let mut best = 0;
        let mut right = 0;
        for left in 0..self.gaps.len() {
            if right < left {
                right = left;
            }
            while right < self.gaps.len() && self.gaps[right] < self.gaps[left] + epsilon {
                right += 1;
            }
            best = best.max(right - left);
        }
        best
    }
}

/// `d_eff(ρ) = (Σ_n tr(P_n ρ)²)⁻¹`.
pub fn effective_dimension(rho: &Operator, spec: &SpectralDecomposition) -> Result<f64> {
    if rho.nrows() != spec.dim() {
        return Err(Error::Dimension(format!(
            "state has dimension {}, spectrum {}",
            rho.nrows(),
            spec.dim()
        )));
    }
    ensure_density(rho, 1e-10)?;
    Ok(1.0 / inverse_participation(rho, spec))
}

pub(crate) fn inverse_participation(rho: &Operator, spec: &SpectralDecomposition) -> f64 {
    spec.projectors()
        .iter()
        .map(|p| trace_product(p, rho).re.powi(2))
        .sum()
}
