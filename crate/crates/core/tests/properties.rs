//! Randomized invariants. Each case draws its inputs from a seeded stream,
//! so a failing case reproduces from the printed seed.

use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;

use fuzzproc::bounds::{hierarchy, single_time_bound, theorem_bound};
use fuzzproc::choi::choi_check;
use fuzzproc::config::ExperimentConfig;
use fuzzproc::dephasing::{Family, PartialDephasingMap, WaitingTimeDistribution};
use fuzzproc::ensemble::{random_density, random_hermitian, random_pure_density, OperationKind, ProcessEnsemble};
use fuzzproc::experiment::format_float;
use fuzzproc::montecarlo::mc_expectation;
use fuzzproc::operator::{identity, kron, Operator};
use fuzzproc::process::{PropagationMode, ProcessSpec};
use fuzzproc::rng::seeded_rng;
use fuzzproc::spectral::{SpectralDecomposition, DEFAULT_DEGENERACY_TOL};

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(Family::ALL.to_vec())
}

fn distribution(family: Family, scale: f64, seed: u64) -> WaitingTimeDistribution {
    use rand::Rng;
    let mut rng = seeded_rng(seed, 1);
    match family {
        Family::UniformWindow => WaitingTimeDistribution::uniform_window(scale * rng.random_range(0.5..2.0), scale),
        Family::HalfNormal => WaitingTimeDistribution::half_normal(rng.random_range(0.0..3.0), scale * scale),
        Family::Delta => WaitingTimeDistribution::delta(rng.random_range(0.0..3.0)),
    }
    .unwrap()
}

fn spectrum(dim: usize, seed: u64) -> Arc<SpectralDecomposition> {
    let h = random_hermitian(dim, &mut seeded_rng(seed, 0));
    Arc::new(SpectralDecomposition::decompose(&h, DEFAULT_DEGENERACY_TOL).unwrap())
}

fn process(env: usize, anc: usize, k: usize, family: Family, seed: u64) -> ProcessSpec {
    let mut ens = ProcessEnsemble::new(env, 2, anc, k, family);
    ens.operations = vec![OperationKind::Channel, OperationKind::Weighted, OperationKind::TraceDecreasing];
    ens.pure_state = seed % 2 == 0;
    ens.distinct_step_energies = seed % 3 == 0;
    ens.sample(&mut seeded_rng(seed, 2)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partial_dephasing_sits_between_identity_and_dephasing(
        dim in 2usize..6, fam in family(), scale in 0.05f64..20.0, seed in any::<u64>()
    ) {
        let sp = spectrum(dim, seed);
        let map = PartialDephasingMap::build(sp.clone(), &distribution(fam, scale, seed)).unwrap();
        let dephasing = PartialDephasingMap::dephasing(sp);
        let rho = random_density(dim, &mut seeded_rng(seed, 3));
        let g = map.apply(&rho);
        prop_assert!((g.trace() - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        prop_assert!((&g - g.adjoint()).norm() < 1e-12);
        prop_assert!((dephasing.apply(&g) - dephasing.apply(&rho)).norm() < 1e-12);
        prop_assert!((map.apply(&dephasing.apply(&rho)) - dephasing.apply(&rho)).norm() < 1e-12);
        let s = map.fuzziness_scale();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        let induced = map.superoperator().sub(&dephasing.superoperator()).unwrap().induced_norm();
        prop_assert!((induced - s).abs() < 1e-10, "induced {induced} vs scale {s}");
    }

    #[test]
    fn dephased_purity_is_below_inverse_effective_dimension(dim in 1usize..7, seed in any::<u64>(), pure in any::<bool>()) {
        let sp = spectrum(dim, seed);
        let mut rng = seeded_rng(seed, 4);
        let rho = if pure { random_pure_density(dim, &mut rng) } else { random_density(dim, &mut rng) };
        let h = hierarchy(&rho, &sp).unwrap();
        prop_assert!(h.dephased_purity <= h.inverse_d_eff + 1e-10);
        prop_assert!(h.d_eff >= 1.0 - 1e-10 && h.d_eff <= h.levels as f64 + 1e-10);
        if pure {
            prop_assert!((h.dephased_purity - h.inverse_d_eff).abs() < 1e-10);
        }
    }

    #[test]
    fn multi_time_bound_holds(env in prop::sample::select(vec![2usize, 4]), anc in 1usize..3, k in 1usize..4,
                              fam in family(), seed in any::<u64>()) {
        let report = theorem_bound(&process(env, anc, k, fam, seed)).unwrap();
        prop_assert!(report.slack >= -1e-9, "slack {}", report.slack);
        prop_assert!(report.violations(1e-9, 1e-10).is_empty(), "{:?}", report.violations(1e-9, 1e-10));
    }

    #[test]
    fn initial_distance_respects_purity_bound(env in 1usize..5, anc in 1usize..3, fam in family(), seed in any::<u64>()) {
        let report = theorem_bound(&process(env, anc, 1, fam, seed)).unwrap();
        prop_assert!(report.initial_distance.powi(2) <= 1.0 - 1.0 / (2 * env) as f64 + 1e-12);
    }

    #[test]
    fn zero_step_bound_matches_single_time_bound(env in 1usize..4, anc in 1usize..3, fam in family(), seed in any::<u64>()) {
        let spec = process(env, anc, 0, fam, seed);
        let report = theorem_bound(&spec).unwrap();
        // The same quantity on the joint space with H ⊗ 1_Γ and A = ‖𝒜_0‖·1.
        let layout = spec.layout();
        let h = spec.spectrum().basis()
            * Operator::from_diagonal(&nalgebra::DVector::from_iterator(
                layout.env_system(),
                spec.spectrum().level_of().iter().map(|&l| Complex64::new(spec.spectrum().energies()[l], 0.0)),
            ))
            * spec.spectrum().basis().adjoint();
        let joint = Arc::new(SpectralDecomposition::decompose(&kron(&h, &identity(anc)), DEFAULT_DEGENERACY_TOL).unwrap());
        let a = identity(layout.total()) * Complex64::new(report.op_norm_total, 0.0);
        let single = single_time_bound(&spec.initial_state(), joint, &spec.steps()[0].distribution, &a).unwrap();
        prop_assert!((single.rhs - report.rhs).abs() < 1e-10, "{} vs {}", single.rhs, report.rhs);
    }

    #[test]
    fn choi_contraction_matches_sequential(anc in 1usize..3, k in 1usize..3, fam in family(), seed in any::<u64>(),
                                           mode in 0u8..3) {
        let spec = process(2, anc, k, fam, seed);
        let mode = match mode {
            0 => PropagationMode::Fuzzy,
            1 => PropagationMode::Equilibrium,
            _ => PropagationMode::FixedTimes((0..=k).map(|j| 0.7 * j as f64 + 0.1).collect()),
        };
        let c = choi_check(&spec, &mode).unwrap();
        prop_assert!(c.abs_diff < 1e-10);
        prop_assert!(c.min_eigenvalue > -1e-10);
        prop_assert!((c.trace - c.expected_trace).abs() < 1e-8);
    }

    #[test]
    fn floats_survive_csv_formatting(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn monte_carlo_is_seed_deterministic(fam in family(), seed in any::<u64>()) {
        let spec = process(2, 1, 1, fam, seed);
        let a = mc_expectation(&spec, 500, seed).unwrap();
        let b = mc_expectation(&spec, 500, seed).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }
}

#[test]
fn configs_round_trip_through_json() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let config = ExperimentConfig::parse(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let text = serde_json::to_string_pretty(&config).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), config, "{}", path.display());
    }
}
