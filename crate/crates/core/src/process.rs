//! Multi-time processes on `E ⊗ S ⊗ Γ`: weighted operations, per-step
//! evolution, and sequential propagation.
//!
//! A process alternates evolution maps on `E ⊗ S` with operations on
//! `S ⊗ Γ`, starting from `ϱ = ρ ⊗ γ`:
//!
//! ```text
//! tr[𝒜_k 𝒯_k ⋯ 𝒜_0 𝒯_0 (ϱ)]
//! ```
//!
//! where each `𝒯_ℓ` is the partial dephasing `𝒢_ℓ` (fuzzy mode), the full
//! dephasing `𝒟` (equilibrium mode) or the unitary `e^{−iH_ℓ t_ℓ}` (fixed
//! times). Propagation runs in the energy frame `W = V ⊗ 1_Γ`, where all
//! three evolution maps are entrywise multipliers.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dephasing::{PartialDephasingMap, WaitingTimeDistribution};
use crate::error::{Error, Result};
use crate::operator::{ensure_density, identity, kron, trace, Layout, Operator, ZERO};
use crate::spectral::SpectralDecomposition;
use crate::superop::Superoperator;

/// Slack allowed on `Σ K†K ≤ 1`.
pub const COMPLETENESS_TOL: f64 = 1e-10;
/// Largest imaginary part tolerated in a real expectation value.
pub const IMAGINARY_TOL: f64 = 1e-10;

/// `𝒜(·) = Σ_μ a_μ K_μ (·) K_μ†` with `Σ_μ K_μ†K_μ ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedOperation {
    kraus: Vec<Operator>,
    weights: Vec<f64>,
}

impl WeightedOperation {
    pub fn new(kraus: Vec<Operator>, weights: Vec<f64>) -> Result<Self> {
        let Some(first) = kraus.first() else {
            return Err(Error::InvalidOperation("no Kraus operators".into()));
        };
        let dim = first.nrows();
        if weights.len() != kraus.len() {
            return Err(Error::InvalidOperation(format!(
                "{} weights for {} Kraus operators",
                weights.len(),
                kraus.len()
            )));
        }
        for (mu, k) in kraus.iter().enumerate() {
            if k.nrows() != dim || k.ncols() != dim {
                return Err(Error::InvalidOperation(format!(
                    "Kraus operator {mu} is {}x{}, expected {dim}x{dim}",
                    k.nrows(),
                    k.ncols()
                )));
            }
            if k.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::InvalidOperation(format!("Kraus operator {mu} has non-finite entries")));
            }
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidOperation(format!("weight {w} is not finite")));
        }
        let op = Self { kraus, weights };
        let sum = op.completeness();
        let largest = ((&sum + sum.adjoint()) * Complex64::new(0.5, 0.0)).symmetric_eigenvalues().max();
        if largest > 1.0 + COMPLETENESS_TOL {
            return Err(Error::InvalidOperation(format!(
                "Σ K†K has eigenvalue {largest}, exceeding 1"
            )));
        }
        Ok(op)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            kraus: vec![identity(dim)],
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.kraus[0].nrows()
    }

    pub fn kraus(&self) -> &[Operator] {
        &self.kraus
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply(&self, x: &Operator) -> Operator {
        apply_kraus(&self.kraus, &self.weights, x)
    }

    /// `𝒜†(Y) = Σ_μ a_μ K_μ† Y K_μ`.
    pub fn apply_adjoint(&self, y: &Operator) -> Operator {
        let mut out = Operator::zeros(y.nrows(), y.ncols());
        for (k, &a) in self.kraus.iter().zip(&self.weights) {
            out += k.adjoint() * y * k * Complex64::new(a, 0.0);
        }
        out
    }

    /// `Σ_μ K_μ†K_μ`.
    pub fn completeness(&self) -> Operator {
        let d = self.dim();
        self.kraus
            .iter()
            .fold(Operator::zeros(d, d), |acc, k| acc + k.adjoint() * k)
    }

    /// `𝒜†(1) = Σ_μ a_μ K_μ†K_μ`, so that `tr 𝒜(X) = tr[effect · X]`.
    pub fn effect(&self) -> Operator {
        self.apply_adjoint(&identity(self.dim()))
    }

    pub fn is_trace_preserving(&self, tol: f64) -> bool {
        (self.effect() - identity(self.dim())).norm() <= tol
    }

    /// Matrix of `𝒜` on `S ⊗ Γ`: `Σ_μ a_μ conj(K_μ) ⊗ K_μ`.
    pub fn superoperator(&self) -> Superoperator {
        let d = self.dim();
        let mut m = DMatrix::zeros(d * d, d * d);
        for (k, &a) in self.kraus.iter().zip(&self.weights) {
            m += kron(&k.map(|z| z.conj()), k) * Complex64::new(a, 0.0);
        }
        Superoperator::from_matrix(d, m).expect("square by construction")
    }
}

pub(crate) fn apply_kraus(kraus: &[Operator], weights: &[f64], x: &Operator) -> Operator {
    let mut out = Operator::zeros(x.nrows(), x.ncols());
    for (k, &a) in kraus.iter().zip(weights) {
        out += k * x * k.adjoint() * Complex64::new(a, 0.0);
    }
    out
}

/// One evolution step: level energies over the shared projectors and the
/// waiting-time distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    /// One energy per level of the shared spectrum; `None` keeps the
    /// spectrum's own energies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energies: Option<Vec<f64>>,
    pub distribution: WaitingTimeDistribution,
}

impl Step {
    pub fn new(distribution: WaitingTimeDistribution) -> Self {
        Self {
            energies: None,
            distribution,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProcessSpec {
    layout: Layout,
    spectrum: Arc<SpectralDecomposition>,
    rho: Operator,
    gamma: Operator,
    steps: Vec<Step>,
    operations: Vec<WeightedOperation>,
}

impl ProcessSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        env_dim: usize,
        system_dim: usize,
        ancilla_dim: usize,
        spectrum: Arc<SpectralDecomposition>,
        rho: Operator,
        gamma: Operator,
        steps: Vec<Step>,
        operations: Vec<WeightedOperation>,
    ) -> Result<Self> {
        let layout = Layout::new(env_dim, system_dim, ancilla_dim)?;
        if spectrum.dim() != layout.env_system() {
            return Err(Error::Dimension(format!(
                "Hamiltonian has dimension {}, environment ⊗ system has {}",
                spectrum.dim(),
                layout.env_system()
            )));
        }
        if rho.nrows() != layout.env_system() || rho.ncols() != layout.env_system() {
            return Err(Error::Dimension(format!(
                "initial state is {}x{}, expected {d}x{d}",
                rho.nrows(),
                rho.ncols(),
                d = layout.env_system()
            )));
        }
        if gamma.nrows() != ancilla_dim || gamma.ncols() != ancilla_dim {
            return Err(Error::Dimension(format!(
                "ancilla state is {}x{}, expected {ancilla_dim}x{ancilla_dim}",
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        ensure_density(&rho, 1e-10)?;
        ensure_density(&gamma, 1e-10)?;
        if steps.is_empty() {
            return Err(Error::InvalidProcess("a process needs at least one step".into()));
        }
        if steps.len() != operations.len() {
            return Err(Error::InvalidProcess(format!(
                "{} steps but {} operations",
                steps.len(),
                operations.len()
            )));
        }
        for (ell, step) in steps.iter().enumerate() {
            step.distribution
                .validate()
                .map_err(|e| Error::InvalidProcess(format!("step {ell}: {e}")))?;
            if let Some(e) = &step.energies {
                if e.len() != spectrum.level_count() {
                    return Err(Error::InvalidProcess(format!(
                        "step {ell} lists {} energies for {} levels",
                        e.len(),
                        spectrum.level_count()
                    )));
                }
            }
        }
        for (ell, op) in operations.iter().enumerate() {
            if op.dim() != layout.system_ancilla() {
                return Err(Error::InvalidProcess(format!(
                    "operation {ell} acts on dimension {}, system ⊗ ancilla has {}",
                    op.dim(),
                    layout.system_ancilla()
                )));
            }
        }
        Ok(Self {
            layout,
            spectrum,
            rho,
            gamma,
            steps,
            operations,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn spectrum(&self) -> &Arc<SpectralDecomposition> {
        &self.spectrum
    }

    pub fn rho(&self) -> &Operator {
        &self.rho
    }

    pub fn gamma(&self) -> &Operator {
        &self.gamma
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn operations(&self) -> &[WeightedOperation] {
        &self.operations
    }

    /// Index of the last step; there are `k + 1` steps and operations.
    pub fn k(&self) -> usize {
        self.steps.len() - 1
    }

    /// `ϱ = ρ ⊗ γ`.
    pub fn initial_state(&self) -> Operator {
        kron(&self.rho, &self.gamma)
    }

    pub fn step_energies(&self, ell: usize) -> &[f64] {
        self.steps[ell]
            .energies
            .as_deref()
            .unwrap_or(self.spectrum.energies())
    }

    /// Same process with every step's distribution replaced.
    pub fn with_distributions(&self, f: impl Fn(usize, &Step) -> Result<WaitingTimeDistribution>) -> Result<Self> {
        let steps = self
            .steps
            .iter()
            .enumerate()
            .map(|(ell, s)| {
                Ok(Step {
                    energies: s.energies.clone(),
                    distribution: f(ell, s)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            self.layout.env,
            self.layout.system,
            self.layout.ancilla,
            self.spectrum.clone(),
            self.rho.clone(),
            self.gamma.clone(),
            steps,
            self.operations.clone(),
        )
    }

    /// The first `steps` steps and operations.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        if steps == 0 || steps > self.steps.len() {
            return Err(Error::StepOutOfRange {
                index: steps,
                len: self.steps.len(),
            });
        }
        Self::new(
            self.layout.env,
            self.layout.system,
            self.layout.ancilla,
            self.spectrum.clone(),
            self.rho.clone(),
            self.gamma.clone(),
            self.steps[..steps].to_vec(),
            self.operations[..steps].to_vec(),
        )
    }

    /// Per-step partial dephasing maps on `E ⊗ S`. Steps with identical
    /// energies and distributions share one coefficient table.
    pub fn dephasing_maps(&self) -> Result<Vec<Arc<PartialDephasingMap>>> {
        let mut maps: Vec<Arc<PartialDephasingMap>> = Vec::with_capacity(self.steps.len());
        for (ell, step) in self.steps.iter().enumerate() {
            let reuse = (0..ell).find(|&j| self.steps[j] == *step).map(|j| maps[j].clone());
            let map = match reuse {
                Some(m) => m,
                None => Arc::new(PartialDephasingMap::build_with_energies(
                    self.spectrum.clone(),
                    self.step_energies(ell),
                    &step.distribution,
                )?),
            };
            maps.push(map);
        }
        Ok(maps)
    }

    pub fn unitary_maps(&self, times: &[f64]) -> Result<Vec<PartialDephasingMap>> {
        check_times(times, self.steps.len())?;
        times
            .iter()
            .enumerate()
            .map(|(ell, &t)| PartialDephasingMap::unitary_with_energies(self.spectrum.clone(), self.step_energies(ell), t))
            .collect()
    }

    pub fn compile(&self) -> Result<CompiledProcess> {
        CompiledProcess::new(self)
    }

    pub fn propagate(&self, mode: &PropagationMode) -> Result<Trajectory> {
        self.compile()?.propagate(mode)
    }

    /// `ϱ_ℓ` and `ϖ_ℓ` for `ℓ = 0..=k`.
    pub fn intermediate_states(&self) -> Result<IntermediateStates> {
        let compiled = self.compile()?;
        Ok(IntermediateStates {
            fuzzy: compiled.propagate(&PropagationMode::Fuzzy)?.states,
            equilibrium: compiled.propagate(&PropagationMode::Equilibrium)?.states,
        })
    }
}

fn check_times(times: &[f64], steps: usize) -> Result<()> {
    if times.len() != steps {
        return Err(Error::InvalidProcess(format!(
            "{} waiting times for {steps} steps",
            times.len()
        )));
    }
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::InvalidProcess(format!("waiting time {t} is negative or not finite")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationMode {
    /// Partial dephasing `𝒢_ℓ` from each step's distribution.
    Fuzzy,
    /// Full dephasing `𝒟` at every step.
    Equilibrium,
    /// Unitary evolution for the given waiting times.
    FixedTimes(Vec<f64>),
}

/// States along one propagation, on `E ⊗ S ⊗ Γ`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// The state just before operation `ℓ`, for `ℓ = 0..=k`.
    pub states: Vec<Operator>,
    /// `𝒜_k` applied to the last state.
    pub final_state: Operator,
    /// `tr` of the final state.
    pub expectation: f64,
}

#[derive(Debug, Clone)]
pub struct IntermediateStates {
    /// `ϱ_ℓ`.
    pub fuzzy: Vec<Operator>,
    /// `ϖ_ℓ`.
    pub equilibrium: Vec<Operator>,
}

pub(crate) fn real_expectation(value: Complex64) -> Result<f64> {
    if value.im.abs() > IMAGINARY_TOL * value.re.abs().max(1.0) {
        return Err(Error::ComplexExpectation(value.im));
    }
    Ok(value.re)
}

/// A process transformed once into the energy frame `W = V ⊗ 1_Γ`.
#[derive(Debug, Clone)]
pub struct CompiledProcess {
    layout: Layout,
    frame: Operator,
    level_of: Vec<usize>,
    initial: Operator,
    maps: Vec<Arc<PartialDephasingMap>>,
    kraus: Vec<Vec<Operator>>,
    weights: Vec<Vec<f64>>,
}

impl CompiledProcess {
    fn new(spec: &ProcessSpec) -> Result<Self> {
        let layout = spec.layout();
        let frame = kron(spec.spectrum().basis(), &identity(layout.ancilla));
        let level_of = (0..layout.total())
            .map(|i| spec.spectrum().level_of()[i / layout.ancilla])
            .collect();
        let to_frame = |x: &Operator| frame.adjoint() * x * &frame;
        let kraus = spec
            .operations()
            .iter()
            .map(|op| {
                op.kraus()
                    .iter()
                    .map(|k| Ok(to_frame(&layout.embed_operation(k)?)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout,
            initial: to_frame(&spec.initial_state()),
            level_of,
            maps: spec.dephasing_maps()?,
            kraus,
            weights: spec.operations().iter().map(|op| op.weights().to_vec()).collect(),
            frame,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn k(&self) -> usize {
        self.maps.len() - 1
    }

    pub fn maps(&self) -> &[Arc<PartialDephasingMap>] {
        &self.maps
    }

    /// `ϱ` in the frame.
    pub fn initial(&self) -> &Operator {
        &self.initial
    }

    pub fn to_lab(&self, x: &Operator) -> Operator {
        &self.frame * x * self.frame.adjoint()
    }

    pub fn to_frame(&self, x: &Operator) -> Operator {
        self.frame.adjoint() * x * &self.frame
    }

    /// Level of each frame basis vector of `E ⊗ S ⊗ Γ`.
    pub fn level_of(&self) -> &[usize] {
        &self.level_of
    }

    /// Entrywise multiplication by `table[level(i), level(j)]`.
    pub fn scale(&self, x: &Operator, table: &DMatrix<Complex64>) -> Operator {
        Operator::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * table[(self.level_of[i], self.level_of[j])])
    }

    /// `𝒟` in the frame: keep entries within a level block.
    pub fn dephase(&self, x: &Operator) -> Operator {
        Operator::from_fn(x.nrows(), x.ncols(), |i, j| {
            if self.level_of[i] == self.level_of[j] {
                x[(i, j)]
            } else {
                ZERO
            }
        })
    }

    /// `𝒢_ℓ` in the frame.
    pub fn partial_dephase(&self, ell: usize, x: &Operator) -> Operator {
        self.scale(x, self.maps[ell].coefficients())
    }

    /// `1_E ⊗ 𝒜_ℓ` in the frame.
    pub fn operate(&self, ell: usize, x: &Operator) -> Operator {
        apply_kraus(&self.kraus[ell], &self.weights[ell], x)
    }

    /// `1_E ⊗ 𝒜_ℓ†` in the frame.
    pub fn operate_adjoint(&self, ell: usize, y: &Operator) -> Operator {
        let mut out = Operator::zeros(y.nrows(), y.ncols());
        for (k, &a) in self.kraus[ell].iter().zip(&self.weights[ell]) {
            out += k.adjoint() * y * k * Complex64::new(a, 0.0);
        }
        out
    }

    /// Frame Kraus operators and weights of step `ℓ`.
    pub fn kraus(&self, ell: usize) -> (&[Operator], &[f64]) {
        (&self.kraus[ell], &self.weights[ell])
    }

    /// Propagation with all states left in the frame.
    pub fn propagate_in_frame(&self, mode: &PropagationMode) -> Result<Trajectory> {
        let unitary_tables: Option<Vec<DMatrix<Complex64>>> = match mode {
            PropagationMode::FixedTimes(times) => {
                check_times(times, self.maps.len())?;
                Some(
                    self.maps
                        .iter()
                        .zip(times)
                        .map(|(map, &t)| {
                            let e = map.energies();
                            DMatrix::from_fn(e.len(), e.len(), |n, m| Complex64::new(0.0, -t * (e[n] - e[m])).exp())
                        })
                        .collect(),
                )
            }
            _ => None,
        };
        let evolve = |ell: usize, x: &Operator| -> Operator {
            match mode {
                PropagationMode::Fuzzy => self.partial_dephase(ell, x),
                PropagationMode::Equilibrium => self.dephase(x),
                PropagationMode::FixedTimes(_) => self.scale(x, &unitary_tables.as_ref().unwrap()[ell]),
            }
        };
        let mut states = Vec::with_capacity(self.maps.len());
        let mut x = evolve(0, &self.initial);
        for ell in 0..self.maps.len() {
            if ell > 0 {
                x = evolve(ell, &x);
            }
            states.push(x.clone());
            x = self.operate(ell, &x);
        }
        let expectation = real_expectation(trace(&x))?;
        Ok(Trajectory {
            states,
            final_state: x,
            expectation,
        })
    }

    pub fn propagate(&self, mode: &PropagationMode) -> Result<Trajectory> {
        let t = self.propagate_in_frame(mode)?;
        Ok(Trajectory {
            states: t.states.iter().map(|s| self.to_lab(s)).collect(),
            final_state: self.to_lab(&t.final_state),
            expectation: t.expectation,
        })
    }

    pub fn expectation(&self, mode: &PropagationMode) -> Result<f64> {
        Ok(self.propagate_in_frame(mode)?.expectation)
    }
}
