//! Choi states `Υ` of multi-time processes and the observable tensors `Λ`
//! they are contracted with.
//!
//! `Υ` lives on `S_out ⊗ (O_1 ⊗ N_1) ⊗ ⋯ ⊗ (O_k ⊗ N_k)`, with `S_out` most
//! significant. Leg `O_i` receives the system as it leaves evolution step
//! `i − 1`; leg `N_i` is the partner of the system that enters step `i`
//! through the unnormalized maximally entangled state `Σ|jj⟩⟨ll|`.
//!
//! `Λ` is indexed as `Λ[J, I]` so that `tr[ΛΥ] = Σ_{I,J} Λ[J,I] Υ[I,J]`
//! reproduces sequential propagation. The ancilla `Γ` is carried inside
//! `Λ` and traced there.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dephasing::PartialDephasingMap;
use crate::error::{Error, Result};
use crate::operator::{partial_trace, trace, Operator, ZERO};
use crate::process::{real_expectation, ProcessSpec, PropagationMode, WeightedOperation};

pub const DEFAULT_MAX_CHOI_DIM: usize = 256;
pub const MAX_CHOI_DIM_ENV: &str = "FUZZPROC_MAX_CHOI_DIM";

/// Largest allowed `d_S^(2k+1)`: `FUZZPROC_MAX_CHOI_DIM` if set and valid,
/// otherwise [`DEFAULT_MAX_CHOI_DIM`].
pub fn max_choi_dim() -> usize {
    std::env::var(MAX_CHOI_DIM_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&v: &usize| v > 0)
        .unwrap_or(DEFAULT_MAX_CHOI_DIM)
}

fn choi_dim(system_dim: usize, k: usize, limit: usize) -> Result<usize> {
    let exponent = u32::try_from(2 * k + 1).map_err(|_| Error::InvalidArgument(format!("k = {k} is too large")))?;
    match system_dim.checked_pow(exponent) {
        Some(dim) if dim <= limit => Ok(dim),
        dim => Err(Error::ChoiBudget {
            dim: dim.unwrap_or(usize::MAX),
            limit,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct ChoiProcessTensor {
    k: usize,
    system_dim: usize,
    tensor: Operator,
}

impl ChoiProcessTensor {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    pub fn tensor(&self) -> &Operator {
        &self.tensor
    }

    pub fn dim(&self) -> usize {
        self.tensor.nrows()
    }

    pub fn trace(&self) -> f64 {
        trace(&self.tensor).re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.tensor + self.tensor.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().min()
    }
}

/// Builds `Υ` under the given evolution mode, refusing dimensions above
/// [`max_choi_dim`].
pub fn build_choi(spec: &ProcessSpec, mode: &PropagationMode) -> Result<ChoiProcessTensor> {
    build_choi_with_limit(spec, mode, max_choi_dim())
}

pub fn build_choi_with_limit(spec: &ProcessSpec, mode: &PropagationMode, limit: usize) -> Result<ChoiProcessTensor> {
    let layout = spec.layout();
    let ds = layout.system;
    let de = layout.env;
    let k = spec.k();
    choi_dim(ds, k, limit)?;

    let maps: Vec<PartialDephasingMap> = match mode {
        PropagationMode::Fuzzy => spec.dephasing_maps()?.iter().map(|m| (**m).clone()).collect(),
        PropagationMode::Equilibrium => vec![PartialDephasingMap::dephasing(spec.spectrum().clone()); k + 1],
        PropagationMode::FixedTimes(times) => spec.unitary_maps(times)?,
    };

    let mut x = maps[0].apply(spec.rho());
    let mut legs = 1usize;
    for map in &maps[1..] {
        x = swap_insert(&x, de, ds, legs);
        legs *= ds * ds;
        x = map.apply_with_trailing(&x, legs);
    }
    let tensor = partial_trace(&x, &[de, ds * legs], &[1])?;
    Ok(ChoiProcessTensor {
        k,
        system_dim: ds,
        tensor,
    })
}

/// Moves the system into a fresh output leg and feeds in one half of
/// `Σ|jj⟩⟨ll|`:
/// `X′[(e,s,l,o,n),(e′,s′,l′,o′,n′)] = δ_{sn} δ_{s′n′} X[(e,o,l),(e′,o′,l′)]`.
fn swap_insert(x: &Operator, de: usize, ds: usize, legs: usize) -> Operator {
    let new_legs = legs * ds * ds;
    let dim = de * ds * new_legs;
    let mut out = Operator::from_element(dim, dim, ZERO);
    let old = |e: usize, s: usize, l: usize| (e * ds + s) * legs + l;
    let new = |e: usize, s: usize, l: usize, o: usize, n: usize| ((e * ds + s) * legs + l) * ds * ds + o * ds + n;
    for e in 0..de {
        for o in 0..ds {
            for l in 0..legs {
                let row = old(e, o, l);
                for ep in 0..de {
                    for op in 0..ds {
                        for lp in 0..legs {
                            let v = x[(row, old(ep, op, lp))];
                            if v == ZERO {
                                continue;
                            }
                            for s in 0..ds {
                                for sp in 0..ds {
                                    out[(new(e, s, l, o, s), new(ep, sp, lp, op, sp))] = v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MultiTimeObservable {
    k: usize,
    system_dim: usize,
    tensor: Operator,
}

impl MultiTimeObservable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    pub fn tensor(&self) -> &Operator {
        &self.tensor
    }
}

/// `⟨α|K|β⟩` as an operator on `Γ`.
fn gamma_block(k: &Operator, alpha: usize, beta: usize, da: usize) -> Operator {
    k.view((alpha * da, beta * da), (da, da)).into_owned()
}

/// Builds `Λ` for operations `𝒜_0, …, 𝒜_k` on `S ⊗ Γ` with ancilla input
/// `gamma`:
///
/// ```text
/// Λ[J,I] = tr_Γ[⟨s′|M_k|s⟩ Φ^{k−1}_{α_k β_k γ_k δ_k}(⋯ Φ^0_{α_1 β_1 γ_1 δ_1}(γ))]
/// ```
///
/// with `M_k = Σ a K†K`, `Φ^ℓ_{αβγδ}(g) = Σ_μ a_μ ⟨α|K_μ|β⟩ g ⟨γ|K_μ|δ⟩†`,
/// `I = (s, β_1, α_1, …)` and `J = (s′, δ_1, γ_1, …)`.
pub fn build_observable_tensor(
    operations: &[WeightedOperation],
    gamma: &Operator,
    system_dim: usize,
) -> Result<MultiTimeObservable> {
    build_observable_tensor_with_limit(operations, gamma, system_dim, max_choi_dim())
}

pub fn build_observable_tensor_with_limit(
    operations: &[WeightedOperation],
    gamma: &Operator,
    system_dim: usize,
    limit: usize,
) -> Result<MultiTimeObservable> {
    let Some(last) = operations.last() else {
        return Err(Error::InvalidProcess("no operations".into()));
    };
    let da = gamma.nrows();
    let ds = system_dim;
    if gamma.ncols() != da || da == 0 {
        return Err(Error::Dimension(format!("ancilla state is {}x{}", gamma.nrows(), gamma.ncols())));
    }
    for (ell, op) in operations.iter().enumerate() {
        if op.dim() != ds * da {
            return Err(Error::Dimension(format!(
                "operation {ell} acts on dimension {}, expected {ds}·{da}",
                op.dim()
            )));
        }
    }
    let k = operations.len() - 1;
    let dim = choi_dim(ds, k, limit)?;

    // (I legs, J legs, Γ operator), with legs packed as base-d_S digits.
    let mut partial: Vec<(usize, usize, Operator)> = vec![(0, 0, gamma.clone())];
    for op in &operations[..k] {
        let blocks: Vec<Vec<Operator>> = op
            .kraus()
            .iter()
            .map(|kr| {
                (0..ds * ds)
                    .map(|ab| gamma_block(kr, ab / ds, ab % ds, da))
                    .collect()
            })
            .collect();
        let mut next = Vec::with_capacity(partial.len() * ds.pow(4));
        for (i_legs, j_legs, g) in &partial {
            for alpha in 0..ds {
                for beta in 0..ds {
                    for gam in 0..ds {
                        for delta in 0..ds {
                            let mut image = Operator::zeros(da, da);
                            for (mu, &a) in op.weights().iter().enumerate() {
                                let left = &blocks[mu][alpha * ds + beta];
                                let right = &blocks[mu][gam * ds + delta];
                                image += left * g * right.adjoint() * Complex64::new(a, 0.0);
                            }
                            next.push((
                                i_legs * ds * ds + beta * ds + alpha,
                                j_legs * ds * ds + delta * ds + gam,
                                image,
                            ));
                        }
                    }
                }
            }
        }
        partial = next;
    }

    let effect = last.effect();
    let leg_dim = dim / ds;
    let mut tensor = DMatrix::from_element(dim, dim, ZERO);
    for s in 0..ds {
        for sp in 0..ds {
            let m = gamma_block(&effect, sp, s, da);
            for (i_legs, j_legs, g) in &partial {
                let value = (&m * g).trace();
                tensor[(sp * leg_dim + j_legs, s * leg_dim + i_legs)] = value;
            }
        }
    }
    Ok(MultiTimeObservable {
        k,
        system_dim: ds,
        tensor,
    })
}

/// `tr[ΛΥ]`, which must be real.
pub fn born_contraction(lambda: &MultiTimeObservable, upsilon: &ChoiProcessTensor) -> Result<f64> {
    if lambda.k != upsilon.k || lambda.system_dim != upsilon.system_dim {
        return Err(Error::Dimension(format!(
            "observable has k = {}, d_S = {}; process tensor has k = {}, d_S = {}",
            lambda.k, lambda.system_dim, upsilon.k, upsilon.system_dim
        )));
    }
    let l = &lambda.tensor;
    let u = &upsilon.tensor;
    let mut sum = ZERO;
    for j in 0..l.nrows() {
        for i in 0..l.ncols() {
            sum += l[(j, i)] * u[(i, j)];
        }
    }
    real_expectation(sum)
}

/// Result of comparing the Choi contraction with sequential propagation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ChoiCheck {
    pub contraction: f64,
    pub sequential: f64,
    pub abs_diff: f64,
    pub trace: f64,
    pub expected_trace: f64,
    pub min_eigenvalue: f64,
}

pub fn choi_check(spec: &ProcessSpec, mode: &PropagationMode) -> Result<ChoiCheck> {
    let upsilon = build_choi(spec, mode)?;
    let lambda = build_observable_tensor(spec.operations(), spec.gamma(), spec.layout().system)?;
    let contraction = born_contraction(&lambda, &upsilon)?;
    let sequential = spec.propagate(mode)?.expectation;
    Ok(ChoiCheck {
        contraction,
        sequential,
        abs_diff: (contraction - sequential).abs(),
        trace: upsilon.trace(),
        expected_trace: (spec.layout().system as f64).powi(spec.k() as i32),
        min_eigenvalue: upsilon.min_eigenvalue(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dephasing::{Family, WaitingTimeDistribution};
    use crate::ensemble::{random_hermitian, random_pure_density, OperationKind, ProcessEnsemble};
    use crate::operator::{identity, kron};
    use crate::process::Step;
    use crate::rng::seeded_rng;
    use crate::spectral::SpectralDecomposition;
    use std::sync::Arc;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn unit(d: usize, i: usize, j: usize) -> Operator {
        let mut m = Operator::zeros(d, d);
        m[(i, j)] = c(1.0);
        m
    }

    fn evolution(h: &Operator, t: f64) -> Operator {
        let spec = SpectralDecomposition::decompose(h, 1e-9).unwrap();
        let phases = nalgebra::DVector::from_iterator(
            spec.dim(),
            spec.level_of().iter().map(|&l| Complex64::new(0.0, -t * spec.energies()[l]).exp()),
        );
        spec.basis() * Operator::from_diagonal(&phases) * spec.basis().adjoint()
    }

    fn sample(seed: u64, k: usize, kinds: Vec<OperationKind>) -> ProcessSpec {
        let mut ens = ProcessEnsemble::new(2, 2, 2, k, Family::UniformWindow);
        ens.operations = kinds;
        ens.pure_state = seed % 2 == 0;
        ens.sample(&mut seeded_rng(seed, 0)).unwrap()
    }

    #[test]
    fn k0_is_reduced_evolved_state() {
        let mut rng = seeded_rng(1, 0);
        let h = random_hermitian(4, &mut rng);
        let spectrum = Arc::new(SpectralDecomposition::decompose(&h, 1e-9).unwrap());
        let rho = random_pure_density(4, &mut rng);
        let t = 0.9;
        let spec = ProcessSpec::new(
            2,
            2,
            1,
            spectrum,
            rho.clone(),
            identity(1),
            vec![Step::new(WaitingTimeDistribution::delta(t).unwrap())],
            vec![WeightedOperation::identity(2)],
        )
        .unwrap();
        let upsilon = build_choi(&spec, &PropagationMode::FixedTimes(vec![t])).unwrap();
        let u = evolution(&h, t);
        let expected = partial_trace(&(&u * rho * u.adjoint()), &[2, 2], &[1]).unwrap();
        for (a, b) in upsilon.tensor().iter().zip(expected.iter()) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn trace_and_positivity() {
        for (seed, k) in [(2, 1), (3, 2)] {
            let spec = sample(seed, k, vec![OperationKind::Channel]);
            let times = vec![0.4; k + 1];
            for mode in [PropagationMode::FixedTimes(times), PropagationMode::Fuzzy, PropagationMode::Equilibrium] {
                let upsilon = build_choi(&spec, &mode).unwrap();
                assert_eq!(upsilon.dim(), 2usize.pow(2 * k as u32 + 1));
                assert!((upsilon.trace() - 2f64.powi(k as i32)).abs() <= 1e-8);
                assert!(upsilon.min_eigenvalue() >= -1e-10);
            }
        }
    }

    #[test]
    fn swap_insert_matches_explicit_gadget() {
        // de = 1, ds = 2, no previous legs: X′ = swap(X ⊗ ψ) onto (s, o, n).
        let mut rng = seeded_rng(4, 0);
        let x = random_pure_density(2, &mut rng);
        let mut psi = Operator::zeros(4, 4);
        for a in 0..2 {
            for b in 0..2 {
                psi[(a * 3, b * 3)] = c(1.0);
            }
        }
        // x ⊗ ψ is ordered (o, s, n); permute o and s.
        let joint = kron(&x, &psi);
        let perm = |idx: usize| {
            let (o, s, n) = (idx / 4, (idx / 2) % 2, idx % 2);
            s * 4 + o * 2 + n
        };
        let mut expected = Operator::zeros(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                expected[(perm(i), perm(j))] = joint[(i, j)];
            }
        }
        assert!((swap_insert(&x, 1, 2, 1) - expected).norm() < 1e-15);
    }

    #[test]
    fn identity_operations_contract_to_trace() {
        let spec = sample(5, 1, vec![OperationKind::Identity]);
        let upsilon = build_choi(&spec, &PropagationMode::FixedTimes(vec![1.0, 2.0])).unwrap();
        let lambda = build_observable_tensor(spec.operations(), spec.gamma(), 2).unwrap();
        assert!((born_contraction(&lambda, &upsilon).unwrap() - 1.0).abs() < 1e-12);

        let spec0 = sample(6, 0, vec![OperationKind::Identity]);
        let upsilon = build_choi(&spec0, &PropagationMode::Fuzzy).unwrap();
        let lambda = build_observable_tensor(spec0.operations(), spec0.gamma(), 2).unwrap();
        assert!((lambda.tensor() - identity(2)).norm() < 1e-14);
        assert!((born_contraction(&lambda, &upsilon).unwrap() - upsilon.trace()).abs() < 1e-12);
    }

    #[test]
    fn projective_measurements_match_outcome_probabilities() {
        let mut rng = seeded_rng(7, 0);
        let h = random_hermitian(4, &mut rng);
        let spectrum = Arc::new(SpectralDecomposition::decompose(&h, 1e-9).unwrap());
        let rho = random_pure_density(4, &mut rng);
        let proj = |x: usize| unit(2, x, x);
        let measure = WeightedOperation::new(vec![proj(0), proj(1)], vec![1.0, -1.0]).unwrap();
        let times = [0.3, 1.7];
        let steps = times.iter().map(|&t| Step::new(WaitingTimeDistribution::delta(t).unwrap())).collect();
        let spec = ProcessSpec::new(2, 2, 1, spectrum, rho.clone(), identity(1), steps, vec![measure.clone(), measure])
            .unwrap();

        // Σ_{x,y} (−1)^{x+y} p(x, y), with p from explicit Lüders updates.
        let u0 = evolution(&h, times[0]);
        let u1 = evolution(&h, times[1]);
        let mut oracle = 0.0;
        for x in 0..2 {
            for y in 0..2 {
                let px = kron(&identity(2), &proj(x));
                let py = kron(&identity(2), &proj(y));
                let state = &u0 * &rho * u0.adjoint();
                let state = &px * state * &px;
                let state = &u1 * state * u1.adjoint();
                let p = (&py * state * &py).trace().re;
                oracle += if (x + y) % 2 == 0 { p } else { -p };
            }
        }
        let upsilon = build_choi(&spec, &PropagationMode::FixedTimes(times.to_vec())).unwrap();
        let lambda = build_observable_tensor(spec.operations(), spec.gamma(), 2).unwrap();
        assert!((born_contraction(&lambda, &upsilon).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn feed_forward_through_ancilla() {
        let mut rng = seeded_rng(8, 0);
        let h = random_hermitian(4, &mut rng);
        let spectrum = Arc::new(SpectralDecomposition::decompose(&h, 1e-9).unwrap());
        let rho = random_pure_density(4, &mut rng);
        let gamma = unit(2, 0, 0);
        let x_gate = unit(2, 0, 1) + unit(2, 1, 0);
        // Record the outcome of a computational-basis measurement in Γ.
        let record = WeightedOperation::new(
            vec![kron(&unit(2, 0, 0), &identity(2)), kron(&unit(2, 1, 1), &x_gate)],
            vec![1.0, 1.0],
        )
        .unwrap();
        // Rotate S conditioned on Γ, then measure S with ±1 weights.
        let r = {
            let (s, co) = (0.3f64.sin(), 0.3f64.cos());
            Operator::from_row_slice(2, 2, &[c(co), c(-s), c(s), c(co)])
        };
        let controlled = kron(&identity(2), &unit(2, 0, 0)) + kron(&r, &unit(2, 1, 1));
        let readout = WeightedOperation::new(
            vec![
                kron(&unit(2, 0, 0), &identity(2)) * &controlled,
                kron(&unit(2, 1, 1), &identity(2)) * &controlled,
            ],
            vec![1.0, -1.0],
        )
        .unwrap();
        let times = vec![0.5, 1.25];
        let steps = times.iter().map(|&t| Step::new(WaitingTimeDistribution::delta(t).unwrap())).collect();
        let spec = ProcessSpec::new(2, 2, 2, spectrum, rho, gamma, steps, vec![record, readout]).unwrap();
        let mode = PropagationMode::FixedTimes(times);
        let check = choi_check(&spec, &mode).unwrap();
        assert!(check.abs_diff <= 1e-10, "{check:?}");
        assert!(check.sequential.abs() > 1e-3);
    }

    #[test]
    fn contraction_matches_sequential_for_random_specs() {
        for seed in 10..16 {
            let k = 1 + (seed as usize % 2);
            let spec = sample(seed, k, vec![OperationKind::Weighted, OperationKind::TraceDecreasing]);
            for mode in [
                PropagationMode::FixedTimes((0..=k).map(|i| 0.3 + i as f64).collect()),
                PropagationMode::Fuzzy,
                PropagationMode::Equilibrium,
            ] {
                let check = choi_check(&spec, &mode).unwrap();
                assert!(check.abs_diff <= 1e-10, "{check:?}");
            }
        }
    }

    #[test]
    fn guard_refuses_large_tensors() {
        let spec = sample(20, 2, vec![OperationKind::Channel]);
        let err = build_choi_with_limit(&spec, &PropagationMode::Fuzzy, 31).unwrap_err();
        assert!(matches!(err, Error::ChoiBudget { dim: 32, limit: 31 }));
        assert!(build_observable_tensor_with_limit(spec.operations(), spec.gamma(), 2, 16).is_err());
    }
}
