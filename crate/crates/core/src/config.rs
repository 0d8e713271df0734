//! Experiment configuration: the JSON document read by `fuzzproc run`.
//!
//! Parsing is strict. Unknown fields are rejected, and every section is
//! built once during [`ExperimentConfig::parse`] so that a config that parses
//! can also run. Errors carry the line and column of the offending key.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::choi::max_choi_dim;
use crate::dephasing::{Family, WaitingTimeDistribution};
use crate::ensemble::{random_density, random_hermitian, random_operation, random_pure_density, OperationKind};
use crate::error::{Error, Result};
use crate::models::{GapStatistics, HamiltonianModel, ModelKind};
use crate::operator::{identity, projector, Operator};
use crate::process::{ProcessSpec, Step, WeightedOperation};
use crate::rng::{derive_seed, seeded_rng};
use crate::spectral::{SpectralDecomposition, DEFAULT_DEGENERACY_TOL};

const STREAM_HAMILTONIAN: u64 = 1;
const STREAM_STATE: u64 = 2;
const STREAM_ANCILLA: u64 = 3;
const STREAM_OBSERVABLE: u64 = 4;
const STREAM_OPERATION: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SingleTime,
    MultiTime,
    Sweep,
    Montecarlo,
    ChoiCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SingleTime => "single-time",
            ExperimentKind::MultiTime => "multi-time",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Montecarlo => "montecarlo",
            ExperimentKind::ChoiCheck => "choi-check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Stem of the output files; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_time: Option<SingleTimeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choi: Option<ChoiConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed negative slack of the multi-time bound.
    pub slack: f64,
    pub auxiliary: f64,
    pub single_time: f64,
    /// `|tr[ΛΥ] − sequential|`.
    pub duality: f64,
    /// Lowest eigenvalue accepted for `Υ`.
    pub psd: f64,
    pub trace: f64,
    /// Largest accepted Monte Carlo z-score.
    pub z_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            slack: 1e-9,
            auxiliary: 1e-10,
            single_time: 1e-10,
            duality: 1e-10,
            psd: 1e-10,
            trace: 1e-8,
            z_max: 5.0,
        }
    }
}

/// Complex matrix as nested row arrays of real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexMatrix {
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

impl ComplexMatrix {
    pub fn from_operator(x: &Operator) -> Self {
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..x.nrows()).map(|i| (0..x.ncols()).map(|j| f(&x[(i, j)])).collect()).collect()
        };
        let im = rows(|z| z.im);
        Self {
            re: rows(|z| z.re),
            im: im.iter().flatten().any(|&v| v != 0.0).then_some(im),
        }
    }

    pub fn to_operator(&self, dim: usize, what: &str) -> Result<Operator> {
        let shape_ok = |m: &Vec<Vec<f64>>| m.len() == dim && m.iter().all(|r| r.len() == dim);
        if !shape_ok(&self.re) || !self.im.as_ref().map_or(true, shape_ok) {
            return Err(Error::Dimension(format!("{what} must be a {dim}x{dim} matrix")));
        }
        if self.re.iter().chain(self.im.iter().flatten()).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{what} has a non-finite entry")));
        }
        Ok(Operator::from_fn(dim, dim, |i, j| {
            Complex64::new(self.re[i][j], self.im.as_ref().map_or(0.0, |m| m[i][j]))
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HamiltonianConfig {
    RandomGaussianHermitian {
        #[serde(default)]
        seed: Option<u64>,
    },
    HeisenbergChain {
        coupling: f64,
        #[serde(default)]
        field: f64,
        #[serde(default)]
        disorder: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    DiagonalSpectrum {
        energies: Vec<f64>,
    },
    Matrix {
        re: Vec<Vec<f64>>,
        #[serde(default)]
        im: Option<Vec<Vec<f64>>>,
    },
}

impl HamiltonianConfig {
    pub fn build(&self, env_dim: usize, system_dim: usize, seed: u64) -> Result<Operator> {
        let seed_or = |s: &Option<u64>| s.unwrap_or_else(|| derive_seed(seed, STREAM_HAMILTONIAN));
        let kind = match self {
            HamiltonianConfig::Matrix { re, im } => {
                let h = ComplexMatrix {
                    re: re.clone(),
                    im: im.clone(),
                }
                .to_operator(env_dim * system_dim, "Hamiltonian")?;
                crate::operator::ensure_hermitian(&h, 1e-12)?;
                return Ok(h);
            }
            HamiltonianConfig::RandomGaussianHermitian { seed: s } => (ModelKind::RandomGaussianHermitian, seed_or(s)),
            HamiltonianConfig::HeisenbergChain {
                coupling,
                field,
                disorder,
                seed: s,
            } => (
                ModelKind::HeisenbergChain {
                    coupling: *coupling,
                    field: *field,
                    disorder: *disorder,
                },
                seed_or(s),
            ),
            HamiltonianConfig::DiagonalSpectrum { energies } => (
                ModelKind::DiagonalSpectrum {
                    energies: energies.clone(),
                },
                0,
            ),
        };
        HamiltonianModel {
            kind: kind.0,
            env_dim,
            system_dim,
            seed: kind.1,
        }
        .build()
    }

    /// Whether the model can be rebuilt at another environment dimension.
    pub fn is_resizable(&self) -> bool {
        matches!(
            self,
            HamiltonianConfig::RandomGaussianHermitian { .. } | HamiltonianConfig::HeisenbergChain { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateConfig {
    RandomPure {
        #[serde(default)]
        seed: Option<u64>,
    },
    RandomMixed {
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Computational basis state `|index⟩⟨index|`.
    Basis { index: usize },
    /// Eigenvector `index` of the Hamiltonian, counted in increasing energy.
    Eigenstate { index: usize },
    MaximallyMixed,
    /// Pure state from an unnormalized amplitude vector.
    Vector {
        re: Vec<f64>,
        #[serde(default)]
        im: Option<Vec<f64>>,
    },
    Matrix {
        re: Vec<Vec<f64>>,
        #[serde(default)]
        im: Option<Vec<Vec<f64>>>,
    },
}

impl StateConfig {
    pub fn build(&self, dim: usize, spectrum: Option<&SpectralDecomposition>, seed: u64) -> Result<Operator> {
        let out_of_range = |index: usize| Error::InvalidState(format!("index {index} out of range for dimension {dim}"));
        match self {
            StateConfig::RandomPure { seed: s } => Ok(random_pure_density(dim, &mut seeded_rng(s.unwrap_or(seed), 0))),
            StateConfig::RandomMixed { seed: s } => Ok(random_density(dim, &mut seeded_rng(s.unwrap_or(seed), 0))),
            StateConfig::Basis { index } => {
                if *index >= dim {
                    return Err(out_of_range(*index));
                }
                let mut e = DVector::zeros(dim);
                e[*index] = Complex64::new(1.0, 0.0);
                Ok(projector(&e))
            }
            StateConfig::Eigenstate { index } => {
                let spectrum = spectrum
                    .ok_or_else(|| Error::InvalidState("eigenstates are only defined for environment ⊗ system".into()))?;
                if *index >= dim {
                    return Err(out_of_range(*index));
                }
                Ok(projector(&spectrum.basis().column(*index).into_owned()))
            }
            StateConfig::MaximallyMixed => Ok(identity(dim) / Complex64::new(dim as f64, 0.0)),
            StateConfig::Vector { re, im } => {
                if re.len() != dim || im.as_ref().is_some_and(|v| v.len() != dim) {
                    return Err(Error::Dimension(format!("state vector must have {dim} entries")));
                }
                let v = DVector::from_fn(dim, |i, _| Complex64::new(re[i], im.as_ref().map_or(0.0, |v| v[i])));
                let norm = v.norm();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(Error::InvalidState("state vector must be nonzero and finite".into()));
                }
                Ok(projector(&(v / Complex64::new(norm, 0.0))))
            }
            StateConfig::Matrix { re, im } => {
                let rho = ComplexMatrix {
                    re: re.clone(),
                    im: im.clone(),
                }
                .to_operator(dim, "state")?;
                crate::operator::ensure_density(&rho, 1e-10)?;
                Ok(rho)
            }
        }
    }

    fn is_resizable(&self) -> bool {
        !matches!(self, StateConfig::Vector { .. } | StateConfig::Matrix { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperationConfig {
    Identity,
    /// Explicit Kraus operators on system ⊗ ancilla with optional outcome
    /// weights (default 1).
    Kraus {
        kraus: Vec<ComplexMatrix>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Random {
        class: OperationKind,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl OperationConfig {
    pub fn build(&self, system_dim: usize, ancilla_dim: usize, seed: u64) -> Result<WeightedOperation> {
        let dim = system_dim * ancilla_dim;
        match self {
            OperationConfig::Identity => Ok(WeightedOperation::identity(dim)),
            OperationConfig::Kraus { kraus, weights } => {
                let ops = kraus
                    .iter()
                    .enumerate()
                    .map(|(mu, k)| k.to_operator(dim, &format!("Kraus operator {mu}")))
                    .collect::<Result<Vec<_>>>()?;
                let weights = weights.clone().unwrap_or_else(|| vec![1.0; ops.len()]);
                WeightedOperation::new(ops, weights)
            }
            OperationConfig::Random { class, seed: s } => {
                random_operation(*class, system_dim, ancilla_dim, &mut seeded_rng(s.unwrap_or(seed), 0))
            }
        }
    }

    fn is_resizable(&self) -> bool {
        !matches!(self, OperationConfig::Kraus { .. })
    }
}

fn default_one() -> usize {
    1
}

fn default_ancilla_state() -> StateConfig {
    StateConfig::Basis { index: 0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub env_dim: usize,
    pub system_dim: usize,
    #[serde(default = "default_one")]
    pub ancilla_dim: usize,
    pub hamiltonian: HamiltonianConfig,
    /// Initial state `ρ` on environment ⊗ system.
    pub state: StateConfig,
    /// Ancilla input `γ`.
    #[serde(default = "default_ancilla_state")]
    pub ancilla_state: StateConfig,
    /// Steps `0..=k`; step `ℓ` evolves and operation `ℓ` then acts.
    pub steps: Vec<Step>,
    pub operations: Vec<OperationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy_tol: Option<f64>,
}

impl ProcessConfig {
    pub fn spectrum(&self, seed: u64) -> Result<Arc<SpectralDecomposition>> {
        let h = self.hamiltonian.build(self.env_dim, self.system_dim, seed)?;
        let tol = self.degeneracy_tol.unwrap_or(DEFAULT_DEGENERACY_TOL);
        Ok(Arc::new(SpectralDecomposition::decompose(&h, tol)?))
    }

    pub fn build(&self, seed: u64) -> Result<ProcessSpec> {
        let spectrum = self.spectrum(seed)?;
        let d = self.env_dim * self.system_dim;
        let rho = self.state.build(d, Some(&spectrum), derive_seed(seed, STREAM_STATE))?;
        let gamma = self
            .ancilla_state
            .build(self.ancilla_dim, None, derive_seed(seed, STREAM_ANCILLA))?;
        let operations = self
            .operations
            .iter()
            .enumerate()
            .map(|(ell, op)| {
                op.build(self.system_dim, self.ancilla_dim, derive_seed(seed, STREAM_OPERATION + ell as u64))
                    .map_err(|e| Error::InvalidProcess(format!("operation {ell}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ProcessSpec::new(
            self.env_dim,
            self.system_dim,
            self.ancilla_dim,
            spectrum,
            rho,
            gamma,
            self.steps.clone(),
            operations,
        )
    }

    /// Copy with `k + 1` steps: truncated, or extended by repeating the last
    /// step and operation.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        let (Some(step), Some(op)) = (self.steps.last(), self.operations.last()) else {
            return Err(Error::InvalidProcess("a process needs at least one step".into()));
        };
        let mut out = self.clone();
        out.steps.resize(k + 1, step.clone());
        out.operations.resize(k + 1, op.clone());
        // Repeated random operations need fresh seeds to be independent draws.
        for ell in self.operations.len()..=k {
            if let OperationConfig::Random { seed, .. } = &mut out.operations[ell] {
                *seed = None;
            }
        }
        Ok(out)
    }

    pub fn with_env_dim(&self, env_dim: usize) -> Result<Self> {
        if !self.hamiltonian.is_resizable() || !self.state.is_resizable() {
            return Err(Error::InvalidProcess(
                "changing env_dim needs a random or spin-chain Hamiltonian and a state that is not given explicitly".into(),
            ));
        }
        if self.steps.iter().any(|s| s.energies.is_some()) {
            return Err(Error::InvalidProcess("changing env_dim is incompatible with per-step energies".into()));
        }
        Ok(Self {
            env_dim,
            ..self.clone()
        })
    }

    pub fn with_ancilla_dim(&self, ancilla_dim: usize) -> Result<Self> {
        if !self.ancilla_state.is_resizable() || !self.operations.iter().all(OperationConfig::is_resizable) {
            return Err(Error::InvalidProcess(
                "changing ancilla_dim needs random or identity operations and an implicit ancilla state".into(),
            ));
        }
        Ok(Self {
            ancilla_dim,
            ..self.clone()
        })
    }

    pub fn with_family(&self, family: Family) -> Result<Self> {
        let mut out = self.clone();
        for step in &mut out.steps {
            let d = step.distribution;
            let fuzziness = if family == Family::Delta { 0.0 } else { d.fuzziness };
            step.distribution = WaitingTimeDistribution::new(family, d.tau, fuzziness)?;
        }
        Ok(out)
    }
}

/// How a swept `T` value is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FuzzinessUnit {
    #[default]
    Absolute,
    /// `v / minGap` for the uniform window, `(v / minGap)²` for the
    /// half-normal family, whose `T` has units of time squared.
    InverseMinGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    T,
    #[serde(rename = "k")]
    K,
    #[serde(rename = "env_dim")]
    EnvDim,
    #[serde(rename = "ancilla_dim")]
    AncillaDim,
    #[serde(rename = "family")]
    Family,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::T => "T",
            SweepParameter::K => "k",
            SweepParameter::EnvDim => "env_dim",
            SweepParameter::AncillaDim => "ancilla_dim",
            SweepParameter::Family => "family",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<serde_json::Value>,
    #[serde(default)]
    pub unit: FuzzinessUnit,
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepValue {
    Number(f64),
    Count(usize),
    Family(Family),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Number(v) => write!(f, "{v:?}"),
            SweepValue::Count(n) => write!(f, "{n}"),
            SweepValue::Family(family) => write!(f, "{family}"),
        }
    }
}

impl SweepConfig {
    pub fn points(&self) -> Result<Vec<SweepValue>> {
        let bad = |v: &serde_json::Value, want: &str| {
            Error::InvalidArgument(format!("sweep value {v} is not {want}"))
        };
        self.values
            .iter()
            .map(|v| match self.parameter {
                SweepParameter::T => v
                    .as_f64()
                    .filter(|x| x.is_finite() && *x >= 0.0)
                    .map(SweepValue::Number)
                    .ok_or_else(|| bad(v, "a non-negative number")),
                SweepParameter::K => v
                    .as_u64()
                    .map(|n| SweepValue::Count(n as usize))
                    .ok_or_else(|| bad(v, "a non-negative integer")),
                SweepParameter::EnvDim | SweepParameter::AncillaDim => v
                    .as_u64()
                    .filter(|&n| n >= 1)
                    .map(|n| SweepValue::Count(n as usize))
                    .ok_or_else(|| bad(v, "a positive integer")),
                SweepParameter::Family => serde_json::from_value::<Family>(v.clone())
                    .map(SweepValue::Family)
                    .map_err(|_| bad(v, "a distribution family")),
            })
            .collect()
    }

    /// The process at one grid point. A uniform window swept to `T > 2τ`
    /// has its centre raised to `T/2` so the window stays on `t ≥ 0`.
    pub fn apply(&self, process: &ProcessConfig, value: SweepValue, seed: u64) -> Result<ProcessSpec> {
        match (self.parameter, value) {
            (SweepParameter::K, SweepValue::Count(k)) => process.with_k(k)?.build(seed),
            (SweepParameter::EnvDim, SweepValue::Count(n)) => process.with_env_dim(n)?.build(seed),
            (SweepParameter::AncillaDim, SweepValue::Count(n)) => process.with_ancilla_dim(n)?.build(seed),
            (SweepParameter::Family, SweepValue::Family(f)) => process.with_family(f)?.build(seed),
            (SweepParameter::T, SweepValue::Number(v)) => {
                let spec = process.build(seed)?;
                let unit = self.unit;
                spec.with_distributions(|ell, step| {
                    let d = step.distribution;
                    let min_gap = GapStatistics::from_energies(spec.step_energies(ell)).min_gap;
                    let t = match (unit, d.family) {
                        (_, Family::Delta) => return Ok(d),
                        (FuzzinessUnit::Absolute, _) => v,
                        (FuzzinessUnit::InverseMinGap, _) if min_gap <= 0.0 => {
                            return Err(Error::InvalidArgument(
                                "T in units of 1/minGap needs at least two distinct levels".into(),
                            ))
                        }
                        (FuzzinessUnit::InverseMinGap, Family::UniformWindow) => v / min_gap,
                        (FuzzinessUnit::InverseMinGap, Family::HalfNormal) => (v / min_gap).powi(2),
                    };
                    let tau = match d.family {
                        Family::UniformWindow => d.tau.max(0.5 * t),
                        _ => d.tau,
                    };
                    WaitingTimeDistribution::new(d.family, tau, t)
                })
            }
            (parameter, value) => Err(Error::InvalidArgument(format!(
                "value {value} does not fit sweep parameter {}",
                parameter.name()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservableConfig {
    RandomHermitian {
        #[serde(default)]
        seed: Option<u64>,
    },
    /// `diag(values)` in the computational basis.
    Diagonal { values: Vec<f64> },
    Matrix {
        re: Vec<Vec<f64>>,
        #[serde(default)]
        im: Option<Vec<Vec<f64>>>,
    },
}

impl ObservableConfig {
    pub fn build(&self, dim: usize, seed: u64) -> Result<Operator> {
        match self {
            ObservableConfig::RandomHermitian { seed: s } => {
                Ok(random_hermitian(dim, &mut seeded_rng(s.unwrap_or(seed), 0)))
            }
            ObservableConfig::Diagonal { values } => {
                if values.len() != dim {
                    return Err(Error::Dimension(format!("observable needs {dim} diagonal values")));
                }
                let diag = DVector::from_iterator(dim, values.iter().map(|&v| Complex64::new(v, 0.0)));
                Ok(Operator::from_diagonal(&diag))
            }
            ObservableConfig::Matrix { re, im } => {
                let a = ComplexMatrix {
                    re: re.clone(),
                    im: im.clone(),
                }
                .to_operator(dim, "observable")?;
                crate::operator::ensure_hermitian(&a, 1e-12)?;
                Ok(a)
            }
        }
    }
}

/// A single-time instance `(ρ, H, A, 𝒫_T)` on one Hilbert space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleTimeConfig {
    pub dim: usize,
    pub hamiltonian: HamiltonianConfig,
    pub state: StateConfig,
    pub observable: ObservableConfig,
    /// Required by the single-time kind, unused by the variance estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<WaitingTimeDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy_tol: Option<f64>,
}

/// Built single-time instance.
#[derive(Debug, Clone)]
pub struct SingleTimeInstance {
    pub spectrum: Arc<SpectralDecomposition>,
    pub rho: Operator,
    pub observable: Operator,
    pub distribution: Option<WaitingTimeDistribution>,
}

impl SingleTimeConfig {
    pub fn build(&self, seed: u64) -> Result<SingleTimeInstance> {
        if self.dim == 0 {
            return Err(Error::Dimension("dim must be positive".into()));
        }
        let h = self.hamiltonian.build(1, self.dim, seed)?;
        let tol = self.degeneracy_tol.unwrap_or(DEFAULT_DEGENERACY_TOL);
        let spectrum = Arc::new(SpectralDecomposition::decompose(&h, tol)?);
        let rho = self.state.build(self.dim, Some(&spectrum), derive_seed(seed, STREAM_STATE))?;
        let observable = self.observable.build(self.dim, derive_seed(seed, STREAM_OBSERVABLE))?;
        if let Some(d) = &self.distribution {
            d.validate()?;
        }
        Ok(SingleTimeInstance {
            spectrum,
            rho,
            observable,
            distribution: self.distribution,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McQuantity {
    /// Multi-time expectation of the process.
    #[default]
    Expectation,
    /// Window average of `|tr[A(ρ(t) − ω)]|²` for the single-time instance.
    TimeAveragedVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub samples: usize,
    #[serde(default)]
    pub quantity: McQuantity,
    /// Window length `T` of the variance estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    /// Gap resolutions `ε` at which the comparison bound is reported;
    /// defaults to the minimum gap alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChoiMode {
    #[default]
    Fuzzy,
    Equilibrium,
    FixedTimes,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiConfig {
    #[serde(default)]
    pub mode: ChoiMode,
    /// Waiting times for the fixed-times mode, one per step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

/// Parse or validation failure, anchored to a position in the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Position of the first occurrence of `"key"` in `source`, or the start.
fn locate(source: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    match source.find(&needle) {
        Some(offset) => {
            let before = &source[..offset];
            let line = before.matches('\n').count() + 1;
            let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
            (line, column)
        }
        None => (1, 1),
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON config.
    pub fn parse(source: &str) -> std::result::Result<Self, ConfigError> {
        Self::parse_with_seed(source, None)
    }

    /// Parses a config, replaces its seed when `seed` is given, and
    /// validates the result.
    pub fn parse_with_seed(source: &str, seed: Option<u64>) -> std::result::Result<Self, ConfigError> {
        let mut config: Self = serde_json::from_str(source).map_err(|e| ConfigError {
            line: e.line().max(1),
            column: e.column().max(1),
            message: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
        })?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        config.check().map_err(|(key, message)| {
            let (line, column) = locate(source, key);
            ConfigError { line, column, message }
        })?;
        Ok(config)
    }

    /// Stem of the output files.
    pub fn stem(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    fn section<'a, T>(&self, value: &'a Option<T>, key: &'static str) -> std::result::Result<&'a T, (&'static str, String)> {
        value
            .as_ref()
            .ok_or_else(|| ("kind", format!("a {} experiment needs a \"{key}\" section", self.kind.name())))
    }

    /// Semantic validation: the sections the kind needs are present and
    /// everything in them builds.
    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let at = |key: &'static str| move |e: Error| (key, e.to_string());
        if let Some(name) = &self.name {
            if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
                return Err(("name", format!("name {name:?} is not a plain file stem")));
            }
        }
        match self.kind {
            ExperimentKind::SingleTime => {
                let st = self.section(&self.single_time, "single_time")?;
                if st.distribution.is_none() {
                    return Err(("single_time", "a single-time experiment needs a \"distribution\"".into()));
                }
                st.build(self.seed).map_err(at("single_time"))?;
            }
            ExperimentKind::MultiTime => {
                self.section(&self.process, "process")?.build(self.seed).map_err(at("process"))?;
            }
            ExperimentKind::Sweep => {
                let process = self.section(&self.process, "process")?;
                let sweep = self.section(&self.sweep, "sweep")?;
                let points = sweep.points().map_err(at("values"))?;
                if points.is_empty() {
                    return Err(("values", "a sweep needs at least one value".into()));
                }
                for p in points {
                    sweep.apply(process, p, self.seed).map_err(at("sweep"))?;
                }
            }
            ExperimentKind::Montecarlo => {
                let mc = self.section(&self.montecarlo, "montecarlo")?;
                if mc.samples == 0 {
                    return Err(("samples", "samples must be at least 1".into()));
                }
                match mc.quantity {
                    McQuantity::Expectation => {
                        self.section(&self.process, "process")?.build(self.seed).map_err(at("process"))?;
                    }
                    McQuantity::TimeAveragedVariance => {
                        self.section(&self.single_time, "single_time")?
                            .build(self.seed)
                            .map_err(at("single_time"))?;
                        if !mc.window.is_some_and(|w| w > 0.0 && w.is_finite()) {
                            return Err(("montecarlo", "the variance estimate needs a positive \"window\"".into()));
                        }
                        if let Some(eps) = &mc.epsilons {
                            if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                                return Err(("epsilons", "epsilons must be a nonempty list of positive numbers".into()));
                            }
                        }
                    }
                }
            }
            ExperimentKind::ChoiCheck => {
                let spec = self.section(&self.process, "process")?.build(self.seed).map_err(at("process"))?;
                let choi = self.choi.clone().unwrap_or_default();
                match (choi.mode, &choi.times) {
                    (ChoiMode::FixedTimes, None) => {
                        return Err(("choi", "the fixed-times mode needs \"times\"".into()))
                    }
                    (ChoiMode::FixedTimes, Some(t)) if t.len() != spec.k() + 1 => {
                        return Err(("times", format!("{} times for {} steps", t.len(), spec.k() + 1)))
                    }
                    (ChoiMode::FixedTimes, Some(t)) if t.iter().any(|x| !x.is_finite()) => {
                        return Err(("times", "times must be finite".into()))
                    }
                    (ChoiMode::Fuzzy | ChoiMode::Equilibrium, Some(_)) => {
                        return Err(("times", "\"times\" is only used by the fixed-times mode".into()))
                    }
                    _ => {}
                }
                let dim = spec.layout().system.pow(2 * spec.k() as u32 + 1);
                let limit = max_choi_dim();
                if dim > limit {
                    return Err(("process", Error::ChoiBudget { dim, limit }.to_string()));
                }
            }
        }
        Ok(())
    }
}
