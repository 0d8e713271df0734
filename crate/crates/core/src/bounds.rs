//! Equilibration bounds: the single-time bound, the time-averaged
//! fluctuation bound, and the multi-time bound with its `𝔸`, `𝔹_ℓ`, `ℂ_ℓ`
//! terms for per-step Hamiltonians and distributions.
//!
//! Every multi-time quantity is evaluated in the energy frame of the
//! compiled process; Frobenius norms and induced norms are invariant under
//! that change of basis.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dephasing::{coherence_identity, off_diagonal_max, PartialDephasingMap, WaitingTimeDistribution};
use crate::error::{Error, Result};
use crate::models::{effective_dimension, GapStatistics};
use crate::operator::{ensure_density, ensure_hermitian, operator_norm, trace_product, Operator, ONE, ZERO};
use crate::process::{CompiledProcess, ProcessSpec, PropagationMode, WeightedOperation};
use crate::spectral::SpectralDecomposition;
use crate::superop::largest_singular_value;

/// Tolerance on the multi-time inequality.
pub const SLACK_TOL: f64 = 1e-9;
/// Tolerance on the auxiliary inequalities.
pub const AUXILIARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleTimeBound {
    /// `|tr[A(𝒢(ρ) − 𝒟(ρ))]|`.
    pub lhs: f64,
    /// `𝒮 ‖A‖ ‖ρ − 𝒟(ρ)‖₂`.
    pub rhs: f64,
    pub fuzziness_scale: f64,
    pub observable_norm: f64,
    pub distance: f64,
    /// `‖(𝒢 − 𝒟)(ρ)‖₂²`.
    pub coherence_norm_sq: f64,
    /// `Σ_{n≠m} |G_nm|² tr[P_n ρ P_m ρ]`.
    pub coherence_sum: f64,
}

pub fn single_time_bound(
    rho: &Operator,
    spectrum: Arc<SpectralDecomposition>,
    dist: &WaitingTimeDistribution,
    observable: &Operator,
) -> Result<SingleTimeBound> {
    let map = PartialDephasingMap::build(spectrum, dist)?;
    single_time_bound_for_map(&map, rho, observable)
}

pub fn single_time_bound_for_map(
    map: &PartialDephasingMap,
    rho: &Operator,
    observable: &Operator,
) -> Result<SingleTimeBound> {
    let d = map.dim();
    for (name, x) in [("state", rho), ("observable", observable)] {
        if x.nrows() != d || x.ncols() != d {
            return Err(Error::Dimension(format!("{name} is {}x{}, spectrum has dimension {d}", x.nrows(), x.ncols())));
        }
    }
    ensure_density(rho, 1e-10)?;
    ensure_hermitian(observable, 1e-12)?;
    let omega = PartialDephasingMap::dephasing(map.spectrum().clone()).apply(rho);
    let diff = map.apply(rho) - &omega;
    let lhs = trace_product(observable, &diff).norm();
    let fuzziness_scale = map.fuzziness_scale();
    let observable_norm = operator_norm(observable);
    let distance = (rho - &omega).norm();
    let (coherence_norm_sq, coherence_sum) = coherence_identity(map, rho);
    Ok(SingleTimeBound {
        lhs,
        rhs: fuzziness_scale * observable_norm * distance,
        fuzziness_scale,
        observable_norm,
        distance,
        coherence_norm_sq,
        coherence_sum,
    })
}

/// `‖A‖² N(ε) f(εT) / d_eff(ρ)` with `f(εT) = 1 + 8 log₂(𝔇)/(εT)`.
pub fn short_farrelly_bound(
    rho: &Operator,
    spectrum: &SpectralDecomposition,
    epsilon: f64,
    window: f64,
    observable: &Operator,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {window}")));
    }
    ensure_hermitian(observable, 1e-12)?;
    let d_eff = effective_dimension(rho, spectrum)?;
    let n_eps = GapStatistics::new(spectrum).max_gaps_in_window(epsilon) as f64;
    let levels = spectrum.level_count() as f64;
    let f = 1.0 + 8.0 * levels.log2() / (epsilon * window);
    Ok(operator_norm(observable).powi(2) * n_eps * f / d_eff)
}

/// The two upper bounds on `ℂ_ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryC {
    pub ell: usize,
    pub c: f64,
    /// `‖𝒟𝒜_ℓ(ϱ_ℓ)‖₂ + ‖ϖ_{ℓ+1}‖₂ + ‖𝒜_ℓ‖(‖𝒟(ϱ_ℓ)‖₂ + ‖ϖ_ℓ‖₂)`.
    pub four_term: f64,
    /// `‖[𝒟, 𝒜_ℓ]‖ ‖ϱ_ℓ − ϖ_ℓ‖₂`.
    pub commutator_form: f64,
    pub commutator_norm: f64,
}

/// `𝔹_ℓ` against its majorant
/// `𝔖_{k:ℓ+1}(‖𝒜_ℓ‖‖ϱ_ℓ − 𝒟(ϱ_ℓ)‖₂ + ‖𝒜_ℓ(ϱ_ℓ) − 𝒟𝒜_ℓ(ϱ_ℓ)‖₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BDecay {
    pub ell: usize,
    pub b: f64,
    /// `𝔖_{k:ℓ+1}`.
    pub s_factor: f64,
    pub majorant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub k: usize,
    pub env_dim: usize,
    pub system_dim: usize,
    pub ancilla_dim: usize,
    /// `tr 𝒜_k(ϱ_k)`.
    pub fuzzy_expectation: f64,
    /// `tr 𝒜_k(ϖ_k)`.
    pub equilibrium_expectation: f64,
    pub lhs: f64,
    /// `𝔖_{k:0} ‖𝒜_{k:0}‖ ‖ϱ − ϖ‖₂`.
    pub term_a: f64,
    pub terms_b: Vec<f64>,
    pub terms_c: Vec<f64>,
    /// `‖𝒜_{k:ℓ+1}‖` for `ℓ = 0..k`.
    pub op_norms: Vec<f64>,
    /// `‖𝒜_{k:0}‖`.
    pub op_norm_total: f64,
    /// `‖𝒜_ℓ‖` for every step.
    pub step_op_norms: Vec<f64>,
    /// `Π_{j=ℓ+1}^{k} ‖𝒜_j‖`, the looser product-of-norms alternative to
    /// `op_norms`.
    pub product_norms: Vec<f64>,
    /// `𝒮_j = max_{n≠m} |G^{(j)}_nm|`.
    pub step_scales: Vec<f64>,
    /// `𝔖_{k:ℓ}` for `ℓ = 0..=k`; the first entry is `𝔖_{k:0}`.
    pub s_suffix: Vec<f64>,
    pub initial_distance: f64,
    pub rhs: f64,
    pub slack: f64,
    pub auxiliary_c: Vec<AuxiliaryC>,
    pub b_decay: Vec<BDecay>,
    /// Right-hand side with every `𝔹_ℓ` and `ℂ_ℓ` replaced by its
    /// majorant.
    pub appendix_total: f64,
}

impl BoundReport {
    pub fn sum_b(&self) -> f64 {
        self.terms_b.iter().sum()
    }

    pub fn sum_c(&self) -> f64 {
        self.terms_c.iter().sum()
    }

    /// `𝔖_{k:0}`.
    pub fn s_total(&self) -> f64 {
        self.s_suffix[0]
    }

    /// Checks the main inequality and every auxiliary one, naming the first
    /// that fails.
    pub fn verify(&self) -> Result<()> {
        match self.violations(SLACK_TOL, AUXILIARY_TOL).into_iter().next() {
            Some(v) => Err(Error::BoundViolation {
                check: v.check,
                excess: v.excess,
            }),
            None => Ok(()),
        }
    }

    /// Every failing inequality, main one first.
    pub fn violations(&self, slack_tol: f64, auxiliary_tol: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut check = |ok: bool, name: String, excess: f64| {
            if !ok {
                out.push(Violation { check: name, excess });
            }
        };
        check(self.slack >= -slack_tol, "lhs <= rhs".into(), -self.slack);
        for aux in &self.auxiliary_c {
            check(
                aux.c <= aux.four_term + auxiliary_tol,
                format!("C_{} <= four-term bound", aux.ell),
                aux.c - aux.four_term,
            );
            check(
                aux.c <= aux.commutator_form + auxiliary_tol,
                format!("C_{} <= commutator bound", aux.ell),
                aux.c - aux.commutator_form,
            );
        }
        for b in &self.b_decay {
            check(b.b <= b.majorant + auxiliary_tol, format!("B_{} <= majorant", b.ell), b.b - b.majorant);
        }
        check(
            self.rhs <= self.appendix_total * (1.0 + 1e-12) + auxiliary_tol,
            "rhs <= majorized total".into(),
            self.rhs - self.appendix_total,
        );
        out
    }
}

/// A failed inequality and the amount by which it fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check: String,
    pub excess: f64,
}

/// Induced norm of `𝒜_last ∘ ⋯ ∘ 𝒜_first` on `S ⊗ Γ`, which equals the
/// norm of `1_E ⊗ (·)` on the full space.
pub fn operation_chain_norm(operations: &[WeightedOperation]) -> f64 {
    chain_matrix(operations).map_or(1.0, |m| largest_singular_value(&m))
}

fn chain_matrix(operations: &[WeightedOperation]) -> Option<DMatrix<Complex64>> {
    let mut iter = operations.iter();
    let first = iter.next()?.superoperator().matrix().clone();
    Some(iter.fold(first, |acc, op| op.superoperator().matrix() * acc))
}

/// `‖[𝒟, 1_E ⊗ 𝒜_ℓ]‖` on `E ⊗ S ⊗ Γ`.
///
/// With `Π` the projection onto level-block-diagonal operators, `𝒟 = Π` and
/// `[Π, 𝒜] = Π𝒜Π⊥ − Π⊥𝒜Π`. The two pieces have orthogonal domains and
/// ranges, so the norm is `max(‖Π⊥𝒜Π‖, ‖Π⊥𝒜†Π‖)`, and each of those only
/// needs the images of the block-diagonal matrix units.
pub fn dephasing_commutator_norm(compiled: &CompiledProcess, ell: usize) -> f64 {
    let (kraus, weights) = compiled.kraus(ell);
    let adjoints: Vec<Operator> = kraus.iter().map(|k| k.adjoint()).collect();
    let forward = off_block_images(compiled.level_of(), kraus, weights);
    let backward = off_block_images(compiled.level_of(), &adjoints, weights);
    largest_singular_value(&forward).max(largest_singular_value(&backward))
}

/// Columns `vec(Π⊥ 𝒜(|i⟩⟨j|))` over `level(i) = level(j)`, for
/// `𝒜(X) = Σ a K X K†`.
fn off_block_images(level_of: &[usize], kraus: &[Operator], weights: &[f64]) -> DMatrix<Complex64> {
    let d = level_of.len();
    let units: Vec<(usize, usize)> = (0..d)
        .flat_map(|j| (0..d).map(move |i| (i, j)))
        .filter(|&(i, j)| level_of[i] == level_of[j])
        .collect();
    let mut out = DMatrix::from_element(d * d, units.len(), ZERO);
    for (col, &(i, j)) in units.iter().enumerate() {
        for (k, &a) in kraus.iter().zip(weights) {
            let ki = k.column(i);
            let kj = k.column(j);
            for c in 0..d {
                let right = kj[c].conj() * a;
                for r in 0..d {
                    if level_of[r] != level_of[c] {
                        out[(r + c * d, col)] += ki[r] * right;
                    }
                }
            }
        }
    }
    out
}

/// Entrywise product of the tables of steps `from..=k`, with the
/// level-diagonal entries removed: the multiplier of `𝒢_{k:from} − 𝒟`.
fn suffix_minus_dephasing(compiled: &CompiledProcess, from: usize) -> DMatrix<Complex64> {
    let levels = compiled.maps()[0].coefficients().nrows();
    let mut table = DMatrix::from_element(levels, levels, ONE);
    for map in &compiled.maps()[from..] {
        table.component_mul_assign(map.coefficients());
    }
    table.fill_diagonal(ZERO);
    table
}

pub fn theorem_bound(spec: &ProcessSpec) -> Result<BoundReport> {
    let compiled = spec.compile()?;
    theorem_bound_compiled(spec, &compiled)
}

pub fn theorem_bound_compiled(spec: &ProcessSpec, compiled: &CompiledProcess) -> Result<BoundReport> {
    let k = compiled.k();
    let layout = spec.layout();
    let fuzzy = compiled.propagate_in_frame(&PropagationMode::Fuzzy)?;
    let equilibrium = compiled.propagate_in_frame(&PropagationMode::Equilibrium)?;
    let lhs = (fuzzy.expectation - equilibrium.expectation).abs();

    let step_scales: Vec<f64> = compiled.maps().iter().map(|m| off_diagonal_max(m.coefficients())).collect();
    let s_suffix: Vec<f64> = (0..=k).map(|ell| step_scales[ell..].iter().product()).collect();
    let s_after = |ell: usize| s_suffix.get(ell + 1).copied().unwrap_or(1.0);

    let ops = spec.operations();
    let step_op_norms: Vec<f64> = ops.iter().map(|op| op.superoperator().induced_norm()).collect();
    let op_norms: Vec<f64> = (0..k).map(|ell| operation_chain_norm(&ops[ell + 1..])).collect();
    let op_norm_total = operation_chain_norm(ops);
    let product_norms: Vec<f64> = (0..k).map(|ell| step_op_norms[ell + 1..].iter().product()).collect();

    let initial = compiled.initial();
    let initial_distance = (initial - compiled.dephase(initial)).norm();
    let term_a = s_suffix[0] * op_norm_total * initial_distance;

    let mut terms_b = Vec::with_capacity(k);
    let mut terms_c = Vec::with_capacity(k);
    let mut auxiliary_c = Vec::with_capacity(k);
    let mut b_decay = Vec::with_capacity(k);
    let mut appendix_total = term_a;
    for ell in 0..k {
        let rho_l = &fuzzy.states[ell];
        let varpi_l = &equilibrium.states[ell];
        let a_rho = compiled.operate(ell, rho_l);

        let table = suffix_minus_dephasing(compiled, ell + 1);
        let b = (compiled.scale(&a_rho, &table) - compiled.operate(ell, &compiled.scale(rho_l, &table))).norm();

        let delta = rho_l - varpi_l;
        let dephased_delta = compiled.dephase(&delta);
        let c = (compiled.dephase(&compiled.operate(ell, &delta)) - compiled.operate(ell, &dephased_delta)).norm();

        let d_rho = compiled.dephase(rho_l);
        let d_a_rho = compiled.dephase(&a_rho);
        let varpi_next = &equilibrium.states[ell + 1];
        let norm_a = step_op_norms[ell];
        let four_term = d_a_rho.norm() + varpi_next.norm() + norm_a * (d_rho.norm() + varpi_l.norm());
        let commutator_norm = dephasing_commutator_norm(compiled, ell);
        let commutator_form = commutator_norm * delta.norm();

        let s_factor = s_after(ell);
        let majorant = s_factor * (norm_a * (rho_l - &d_rho).norm() + (&a_rho - &d_a_rho).norm());
        let c_majorant = (&d_a_rho - varpi_next).norm() + norm_a * (&d_rho - varpi_l).norm();
        appendix_total += op_norms[ell] * (majorant + c_majorant);

        terms_b.push(b);
        terms_c.push(c);
        auxiliary_c.push(AuxiliaryC {
            ell,
            c,
            four_term,
            commutator_form,
            commutator_norm,
        });
        b_decay.push(BDecay {
            ell,
            b,
            s_factor,
            majorant,
        });
    }
    let rhs = term_a
        + (0..k)
            .map(|ell| op_norms[ell] * (terms_b[ell] + terms_c[ell]))
            .sum::<f64>();
    Ok(BoundReport {
        k,
        env_dim: layout.env,
        system_dim: layout.system,
        ancilla_dim: layout.ancilla,
        fuzzy_expectation: fuzzy.expectation,
        equilibrium_expectation: equilibrium.expectation,
        lhs,
        term_a,
        terms_b,
        terms_c,
        op_norms,
        op_norm_total,
        step_op_norms,
        product_norms,
        step_scales,
        s_suffix,
        initial_distance,
        rhs,
        slack: rhs - lhs,
        auxiliary_c,
        b_decay,
        appendix_total,
    })
}

pub fn auxiliary_c_bounds(spec: &ProcessSpec, ell: usize) -> Result<AuxiliaryC> {
    let report = theorem_bound(spec)?;
    report.auxiliary_c.get(ell).copied().ok_or(Error::StepOutOfRange {
        index: ell,
        len: report.k,
    })
}

pub fn b_term_decay(spec: &ProcessSpec) -> Result<Vec<BDecay>> {
    Ok(theorem_bound(spec)?.b_decay)
}

/// Signed terms of the exact decomposition
/// `tr 𝒜_{k:0}(𝒢_{k:0} − 𝒟)ϱ + Σ_ℓ tr 𝒜_{k:ℓ+1}[𝒢_{k:ℓ+1} − 𝒟, 𝒜_ℓ]ϱ_ℓ
///  + Σ_ℓ tr 𝒜_{k:ℓ+1}[𝒟, 𝒜_ℓ](ϱ_ℓ − ϖ_ℓ)`, whose sum is
/// `⟨Λ⟩_Ῡ − ⟨Λ⟩_Ω`.
pub fn telescoping_terms(spec: &ProcessSpec) -> Result<Vec<f64>> {
    let compiled = spec.compile()?;
    let k = compiled.k();
    let fuzzy = compiled.propagate_in_frame(&PropagationMode::Fuzzy)?;
    let equilibrium = compiled.propagate_in_frame(&PropagationMode::Equilibrium)?;
    let tail = |from: usize, x: Operator| -> Complex64 {
        (from..=k).fold(x, |acc, j| compiled.operate(j, &acc)).trace()
    };
    let mut terms = Vec::with_capacity(2 * k + 1);
    let first = compiled.scale(compiled.initial(), &suffix_minus_dephasing(&compiled, 0));
    terms.push(tail(0, first).re);
    for ell in 0..k {
        let rho_l = &fuzzy.states[ell];
        let table = suffix_minus_dephasing(&compiled, ell + 1);
        let b = compiled.scale(&compiled.operate(ell, rho_l), &table) - compiled.operate(ell, &compiled.scale(rho_l, &table));
        terms.push(tail(ell + 1, b).re);
        let delta = rho_l - &equilibrium.states[ell];
        let c = compiled.dephase(&compiled.operate(ell, &delta)) - compiled.operate(ell, &compiled.dephase(&delta));
        terms.push(tail(ell + 1, c).re);
    }
    Ok(terms)
}

/// Sanity quantities for a state: `‖ω‖₂²`, `d_eff⁻¹`, and the purity
/// bound `1 − 1/d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub d_eff: f64,
    pub levels: usize,
    pub dim: usize,
    pub dephased_purity: f64,
    pub inverse_d_eff: f64,
}

pub fn hierarchy(rho: &Operator, spectrum: &Arc<SpectralDecomposition>) -> Result<Hierarchy> {
    let d_eff = effective_dimension(rho, spectrum)?;
    let omega = PartialDephasingMap::dephasing(spectrum.clone()).apply(rho);
    Ok(Hierarchy {
        d_eff,
        levels: spectrum.level_count(),
        dim: spectrum.dim(),
        dephased_purity: omega.norm_squared(),
        inverse_d_eff: 1.0 / d_eff,
    })
}

/// Operator diagonal in the energy eigenbasis with the given entries.
pub fn energy_diagonal(spectrum: &SpectralDecomposition, entries: &[f64]) -> Operator {
    let diag = DVector::from_iterator(entries.len(), entries.iter().map(|&x| Complex64::new(x, 0.0)));
    spectrum.basis() * Operator::from_diagonal(&diag) * spectrum.basis().adjoint()
}
