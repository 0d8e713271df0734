//! Seeded random ensembles: Hermitian matrices, unitaries, states, Kraus
//! families, and whole processes for property checks.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dephasing::{Family, WaitingTimeDistribution};
use crate::error::Result;
use crate::models::GapStatistics;
use crate::operator::{identity, kron, projector, Operator};
use crate::process::{ProcessSpec, Step, WeightedOperation};
use crate::spectral::{SpectralDecomposition, DEFAULT_DEGENERACY_TOL};

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Matrix of independent standard complex Gaussians.
pub fn random_operator<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Operator {
    Operator::from_fn(dim, dim, |_, _| gaussian(rng))
}

/// Hermitian part of a complex Gaussian matrix with entry variance `1/d`.
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Operator {
    let g = random_operator(dim, rng) * Complex64::new((0.5 / dim as f64).sqrt(), 0.0);
    (&g + g.adjoint()) * Complex64::new(0.5f64.sqrt(), 0.0)
}

/// Haar-random unitary from the QR decomposition of a Ginibre matrix.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Operator {
    let qr = random_operator(dim, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

pub fn random_pure_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<Complex64> {
    let v = DVector::from_fn(dim, |_, _| gaussian(rng));
    let norm = v.norm();
    v / Complex64::new(norm, 0.0)
}

pub fn random_pure_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Operator {
    projector(&random_pure_state(dim, rng))
}

/// Full-rank mixed state `GG†/tr(GG†)`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Operator {
    let g = random_operator(dim, rng);
    let rho = &g * g.adjoint();
    let tr = rho.trace();
    rho / tr
}

/// Kraus operators of a random channel: the blocks of a random isometry
/// `ℂ^d → ℂ^d ⊗ ℂ^count`.
pub fn random_kraus<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<Operator> {
    let u = random_unitary(dim * count, rng);
    (0..count)
        .map(|mu| u.view((mu * dim, 0), (dim, dim)).into_owned())
        .collect()
}

/// Kinds of random operations used in the process ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperationKind {
    Identity,
    /// Trace-preserving, unit weights.
    Channel,
    /// Trace-preserving Kraus family with outcome weights `±1`.
    Weighted,
    /// Kraus family scaled so that `Σ K†K < 1`, weights `±1`.
    TraceDecreasing,
    /// Acts only on the ancilla, so it commutes with every `P_n ⊗ 1_Γ`.
    AncillaOnly,
}

pub fn random_operation<R: Rng + ?Sized>(
    kind: OperationKind,
    system_dim: usize,
    ancilla_dim: usize,
    rng: &mut R,
) -> Result<WeightedOperation> {
    let dim = system_dim * ancilla_dim;
    let signs = |count: usize, rng: &mut R| -> Vec<f64> {
        (0..count).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
    };
    match kind {
        OperationKind::Identity => Ok(WeightedOperation::identity(dim)),
        OperationKind::Channel => WeightedOperation::new(random_kraus(dim, 2, rng), vec![1.0; 2]),
        OperationKind::Weighted => {
            let weights = signs(2, rng);
            WeightedOperation::new(random_kraus(dim, 2, rng), weights)
        }
        OperationKind::TraceDecreasing => {
            let scale = Complex64::new((0.5 + 0.5 * rng.random::<f64>()).sqrt(), 0.0);
            let kraus = random_kraus(dim, 2, rng).into_iter().map(|k| k * scale).collect();
            let weights = signs(2, rng);
            WeightedOperation::new(kraus, weights)
        }
        OperationKind::AncillaOnly => {
            let kraus = random_kraus(ancilla_dim, 2, rng)
                .iter()
                .map(|k| kron(&identity(system_dim), k))
                .collect();
            let weights = signs(2, rng);
            WeightedOperation::new(kraus, weights)
        }
    }
}

/// Parameters of a random process draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessEnsemble {
    pub env_dim: usize,
    pub system_dim: usize,
    pub ancilla_dim: usize,
    /// Number of evolution steps after the first; there are `k + 1`
    /// operations.
    pub k: usize,
    pub family: Family,
    /// Fuzziness in units of the inverse minimum gap (squared for the
    /// half-normal family, whose `T` has units of time squared).
    pub fuzziness: f64,
    pub operations: Vec<OperationKind>,
    /// Draw fresh level energies for every step.
    pub distinct_step_energies: bool,
    /// Use a pure system-environment state.
    pub pure_state: bool,
}

impl ProcessEnsemble {
    pub fn new(env_dim: usize, system_dim: usize, ancilla_dim: usize, k: usize, family: Family) -> Self {
        Self {
            env_dim,
            system_dim,
            ancilla_dim,
            k,
            family,
            fuzziness: 1.0,
            operations: vec![OperationKind::Weighted],
            distinct_step_energies: false,
            pure_state: true,
        }
    }

    /// Waiting-time distribution with fuzziness `x` in units of `1/min_gap`.
    pub fn distribution<R: Rng + ?Sized>(&self, min_gap: f64, rng: &mut R) -> Result<WaitingTimeDistribution> {
        let unit = 1.0 / min_gap;
        let x = self.fuzziness;
        match self.family {
            Family::UniformWindow => WaitingTimeDistribution::uniform_window(x * unit * (0.5 + rng.random::<f64>()), x * unit),
            Family::HalfNormal => {
                WaitingTimeDistribution::half_normal(rng.random::<f64>() * 2.0 * PI * unit, (x * unit).powi(2))
            }
            Family::Delta => WaitingTimeDistribution::delta(rng.random::<f64>() * 10.0 * unit),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ProcessSpec> {
        let dim = self.env_dim * self.system_dim;
        let h = random_hermitian(dim, rng);
        let spectrum = Arc::new(SpectralDecomposition::decompose(&h, DEFAULT_DEGENERACY_TOL)?);
        let rho = if self.pure_state {
            random_pure_density(dim, rng)
        } else {
            random_density(dim, rng)
        };
        let gamma = random_pure_density(self.ancilla_dim, rng);
        let levels = spectrum.level_count();
        let mut steps = Vec::with_capacity(self.k + 1);
        let mut operations = Vec::with_capacity(self.k + 1);
        for ell in 0..=self.k {
            let energies = if self.distinct_step_energies && ell > 0 {
                let mut e: Vec<f64> = (0..levels).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                e.sort_by(f64::total_cmp);
                Some(e)
            } else {
                None
            };
            let gaps = GapStatistics::from_energies(energies.as_deref().unwrap_or(spectrum.energies()));
            let min_gap = if gaps.min_gap > 0.0 { gaps.min_gap } else { 1.0 };
            steps.push(Step {
                energies,
                distribution: self.distribution(min_gap, rng)?,
            });
            let kind = self.operations[rng.random_range(0..self.operations.len())];
            operations.push(random_operation(kind, self.system_dim, self.ancilla_dim, rng)?);
        }
        ProcessSpec::new(self.env_dim, self.system_dim, self.ancilla_dim, spectrum, rho, gamma, steps, operations)
    }
}
