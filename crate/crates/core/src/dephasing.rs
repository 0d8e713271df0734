//! Waiting-time distributions, their Fourier coefficients `G_nm`, and the
//! partial dephasing maps `𝒢(·) = Σ_nm G_nm P_n (·) P_m` they induce.
//!
//! The full dephasing map `𝒟` is the special case `G_nm = δ_nm`; a sharp
//! waiting time `t` gives the unitary conjugation by `e^{-iHt}`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{Operator, ONE, ZERO};
use crate::quadrature;
use crate::spectral::{apply_level_multiplier, SpectralDecomposition};
use crate::superop::Superoperator;

/// Half-normal densities are integrated up to this many scale units.
pub const HALF_NORMAL_CUTOFF: f64 = 12.0;
pub const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Flat density on `[τ − T/2, τ + T/2]`, clipped at zero and renormalized.
    UniformWindow,
    /// `∝ exp(−(t − τ)²/T)` for `t ≥ τ`: onset `τ`, scale `√(T/2)`.
    HalfNormal,
    /// All weight at `t = τ`; requires `T = 0`.
    Delta,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::UniformWindow, Family::HalfNormal, Family::Delta];

    pub fn name(self) -> &'static str {
        match self {
            Family::UniformWindow => "uniform-window",
            Family::HalfNormal => "half-normal",
            Family::Delta => "delta",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Density `𝒫_T` of a waiting time, serialized as `{family, tau, T}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaitingTimeDistribution {
    pub family: Family,
    pub tau: f64,
    #[serde(rename = "T")]
    pub fuzziness: f64,
}

impl WaitingTimeDistribution {
    pub fn new(family: Family, tau: f64, fuzziness: f64) -> Result<Self> {
        let dist = Self {
            family,
            tau,
            fuzziness,
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn uniform_window(tau: f64, width: f64) -> Result<Self> {
        Self::new(Family::UniformWindow, tau, width)
    }

    pub fn half_normal(onset: f64, fuzziness: f64) -> Result<Self> {
        Self::new(Family::HalfNormal, onset, fuzziness)
    }

    pub fn delta(tau: f64) -> Result<Self> {
        Self::new(Family::Delta, tau, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidDistribution(format!("tau must be finite and ≥ 0, got {}", self.tau)));
        }
        if !(self.fuzziness.is_finite() && self.fuzziness >= 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "T must be finite and ≥ 0, got {}",
                self.fuzziness
            )));
        }
        if self.family == Family::Delta && self.fuzziness != 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "the delta family has no fuzziness, got T = {}",
                self.fuzziness
            )));
        }
        Ok(())
    }

    /// True when all the weight sits at a single time.
    pub fn is_sharp(&self) -> bool {
        self.family == Family::Delta || self.fuzziness == 0.0
    }

    /// A uniform window whose left edge would fall below zero.
    pub fn is_clipped(&self) -> bool {
        self.family == Family::UniformWindow && self.tau < 0.5 * self.fuzziness
    }

    /// Standard deviation parameter of the half-normal family.
    pub fn scale(&self) -> f64 {
        (0.5 * self.fuzziness).sqrt()
    }

    /// Interval outside of which the density vanishes (or is negligible).
    pub fn support(&self) -> (f64, f64) {
        match self.family {
            _ if self.is_sharp() => (self.tau, self.tau),
            Family::UniformWindow => ((self.tau - 0.5 * self.fuzziness).max(0.0), self.tau + 0.5 * self.fuzziness),
            Family::HalfNormal => (self.tau, self.tau + HALF_NORMAL_CUTOFF * self.scale()),
            Family::Delta => unreachable!(),
        }
    }

    /// Density at `t`; `None` for sharp distributions.
    pub fn density(&self, t: f64) -> Option<f64> {
        if self.is_sharp() {
            return None;
        }
        Some(match self.family {
            Family::UniformWindow => {
                let (lo, hi) = self.support();
                if t >= lo && t <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Family::HalfNormal => {
                if t < self.tau {
                    0.0
                } else {
                    let u = t - self.tau;
                    2.0 / (PI * self.fuzziness).sqrt() * (-u * u / self.fuzziness).exp()
                }
            }
            Family::Delta => unreachable!(),
        })
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if self.is_sharp() {
            return if t >= self.tau { 1.0 } else { 0.0 };
        }
        match self.family {
            Family::UniformWindow => {
                let (lo, hi) = self.support();
                ((t - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
            Family::HalfNormal => {
                if t <= self.tau {
                    0.0
                } else {
                    statrs::function::erf::erf((t - self.tau) / self.fuzziness.sqrt())
                }
            }
            Family::Delta => unreachable!(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.is_sharp() {
            return self.tau;
        }
        match self.family {
            Family::UniformWindow => {
                let (lo, hi) = self.support();
                0.5 * (lo + hi)
            }
            Family::HalfNormal => self.tau + (self.fuzziness / PI).sqrt(),
            Family::Delta => unreachable!(),
        }
    }

    /// Integral of the density by quadrature, for normalization checks.
    pub fn total_mass(&self) -> Result<f64> {
        if self.is_sharp() {
            return Ok(1.0);
        }
        let (lo, hi) = self.support();
        let mass = quadrature::integrate(
            |t| Complex64::new(self.density(t).unwrap(), 0.0),
            lo,
            hi,
            QUADRATURE_TOL,
            4,
            10_000,
        )?;
        Ok(mass.re)
    }

    /// `∫ e^{−i t·gap} 𝒫_T(t) dt`, with `gap = E_n − E_m`.
    pub fn coefficient(&self, gap: f64) -> Result<Complex64> {
        if gap == 0.0 {
            return Ok(ONE);
        }
        if self.is_sharp() {
            return Ok(Complex64::new(0.0, -gap * self.tau).exp());
        }
        match self.family {
            Family::UniformWindow => {
                let (lo, hi) = self.support();
                let half_phase = 0.5 * gap * (hi - lo);
                let center = 0.5 * (lo + hi);
                Ok(Complex64::new(0.0, -gap * center).exp() * (half_phase.sin() / half_phase))
            }
            Family::HalfNormal => {
                let (_, hi) = self.support();
                let length = hi - self.tau;
                let periods = (gap.abs() * length / (2.0 * PI)).ceil() as usize;
                let initial = (2 * periods + 4).min(400_000);
                let norm = 2.0 / (PI * self.fuzziness).sqrt();
                let inv_t = 1.0 / self.fuzziness;
                let body = quadrature::integrate(
                    |u| Complex64::new(0.0, -gap * u).exp() * (norm * (-u * u * inv_t).exp()),
                    0.0,
                    length,
                    QUADRATURE_TOL,
                    initial,
                    initial * 8 + 2_000,
                )?;
                Ok(Complex64::new(0.0, -gap * self.tau).exp() * body)
            }
            Family::Delta => unreachable!(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.is_sharp() {
            return self.tau;
        }
        match self.family {
            Family::UniformWindow => {
                let (lo, hi) = self.support();
                lo + (hi - lo) * rng.random::<f64>()
            }
            Family::HalfNormal => loop {
                // Inverse CDF; reject the rare draw whose inverse overflows.
                let u: f64 = rng.random();
                let x = statrs::function::erf::erf_inv(u);
                if x.is_finite() {
                    break self.tau + self.fuzziness.sqrt() * x;
                }
            },
            Family::Delta => unreachable!(),
        }
    }
}

/// `𝒢(·) = Σ_nm G_nm P_n (·) P_m` over a fixed set of eigenprojectors.
#[derive(Debug, Clone)]
pub struct PartialDephasingMap {
    spectrum: Arc<SpectralDecomposition>,
    energies: Vec<f64>,
    coefficients: DMatrix<Complex64>,
    source: Option<WaitingTimeDistribution>,
}

impl PartialDephasingMap {
    /// Tabulates `G_nm` for every pair of levels of `spectrum`.
    pub fn build(spectrum: Arc<SpectralDecomposition>, dist: &WaitingTimeDistribution) -> Result<Self> {
        let energies = spectrum.energies().to_vec();
        Self::build_with_energies(spectrum, &energies, dist)
    }

    /// Same projectors as `spectrum`, with level energies replaced by
    /// `energies` (one per level).
    pub fn build_with_energies(
        spectrum: Arc<SpectralDecomposition>,
        energies: &[f64],
        dist: &WaitingTimeDistribution,
    ) -> Result<Self> {
        dist.validate()?;
        check_energies(&spectrum, energies)?;
        if dist.is_clipped() {
            log::warn!(
                "uniform window (tau = {}, T = {}) crosses t = 0; clipping and renormalizing",
                dist.tau,
                dist.fuzziness
            );
        }
        let levels = spectrum.level_count();
        let pairs: Vec<(usize, usize)> = (0..levels)
            .flat_map(|n| (n + 1..levels).map(move |m| (n, m)))
            .collect();
        let values: Vec<Complex64> = pairs
            .par_iter()
            .map(|&(n, m)| dist.coefficient(energies[n] - energies[m]))
            .collect::<Result<_>>()?;
        let mut coefficients = DMatrix::from_element(levels, levels, ONE);
        for (&(n, m), g) in pairs.iter().zip(values) {
            coefficients[(n, m)] = g;
            coefficients[(m, n)] = g.conj();
        }
        Ok(Self {
            spectrum,
            energies: energies.to_vec(),
            coefficients,
            source: Some(*dist),
        })
    }

    /// `𝒟(·) = Σ_n P_n (·) P_n`.
    pub fn dephasing(spectrum: Arc<SpectralDecomposition>) -> Self {
        let levels = spectrum.level_count();
        let mut coefficients = DMatrix::from_element(levels, levels, ZERO);
        coefficients.fill_diagonal(ONE);
        Self {
            energies: spectrum.energies().to_vec(),
            spectrum,
            coefficients,
            source: None,
        }
    }

    /// Conjugation by `e^{−iHt}`.
    pub fn unitary(spectrum: Arc<SpectralDecomposition>, time: f64) -> Self {
        let energies = spectrum.energies().to_vec();
        Self::unitary_with_energies(spectrum, &energies, time).expect("energies match the spectrum")
    }

    pub fn unitary_with_energies(spectrum: Arc<SpectralDecomposition>, energies: &[f64], time: f64) -> Result<Self> {
        check_energies(&spectrum, energies)?;
        let levels = energies.len();
        let coefficients = DMatrix::from_fn(levels, levels, |n, m| {
            Complex64::new(0.0, -time * (energies[n] - energies[m])).exp()
        });
        Ok(Self {
            spectrum,
            energies: energies.to_vec(),
            coefficients,
            source: WaitingTimeDistribution::delta(time).ok(),
        })
    }

    pub fn spectrum(&self) -> &Arc<SpectralDecomposition> {
        &self.spectrum
    }

    /// Level energies the coefficients were computed from.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn coefficients(&self) -> &DMatrix<Complex64> {
        &self.coefficients
    }

    pub fn source(&self) -> Option<&WaitingTimeDistribution> {
        self.source.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    pub fn apply(&self, x: &Operator) -> Operator {
        self.apply_with_trailing(x, 1)
    }

    /// Applies `𝒢 ⊗ id` to an operator on this space ⊗ a factor of
    /// dimension `trailing`.
    pub fn apply_with_trailing(&self, x: &Operator, trailing: usize) -> Operator {
        apply_level_multiplier(&self.spectrum, &self.coefficients, x, trailing)
    }

    pub fn superoperator(&self) -> Superoperator {
        Superoperator::from_map(self.dim(), |x| self.apply(x))
    }

    /// `𝒮 = max_{n≠m} |G_nm|`; zero for a single level.
    pub fn fuzziness_scale(&self) -> f64 {
        off_diagonal_max(&self.coefficients)
    }

    /// `self ∘ inner`, which multiplies the coefficient tables.
    pub fn after(&self, inner: &PartialDephasingMap) -> Result<Self> {
        if !Arc::ptr_eq(&self.spectrum, &inner.spectrum) && self.spectrum.projectors() != inner.spectrum.projectors() {
            return Err(Error::InvalidArgument("maps are built on different eigenprojectors".into()));
        }
        Ok(Self {
            spectrum: self.spectrum.clone(),
            energies: self.energies.clone(),
            coefficients: self.coefficients.component_mul(&inner.coefficients),
            source: None,
        })
    }
}

fn check_energies(spectrum: &SpectralDecomposition, energies: &[f64]) -> Result<()> {
    if energies.len() != spectrum.level_count() {
        return Err(Error::Dimension(format!(
            "{} energies given for {} levels",
            energies.len(),
            spectrum.level_count()
        )));
    }
    if let Some(e) = energies.iter().find(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument(format!("energy {e} is not finite")));
    }
    Ok(())
}

pub(crate) fn off_diagonal_max(table: &DMatrix<Complex64>) -> f64 {
    let mut best = 0.0f64;
    for n in 0..table.nrows() {
        for m in 0..table.ncols() {
            if n != m {
                best = best.max(table[(n, m)].norm());
            }
        }
    }
    best
}

/// Both sides of `‖(𝒢 − 𝒟)(ρ)‖₂² = Σ_{n≠m} |G_nm|² tr[P_n ρ P_m ρ]`,
/// evaluated independently: the left side by applying the maps, the right
/// side from the projectors.
pub fn coherence_identity(map: &PartialDephasingMap, rho: &Operator) -> (f64, f64) {
    let dephased = PartialDephasingMap::dephasing(map.spectrum.clone());
    let lhs = (map.apply(rho) - dephased.apply(rho)).norm_squared();
    let projectors = map.spectrum.projectors();
    let mut rhs = 0.0;
    for (n, pn) in projectors.iter().enumerate() {
        let left = pn * rho;
        for (m, pm) in projectors.iter().enumerate() {
            if n != m {
                let right = pm * rho;
                rhs += map.coefficients[(n, m)].norm_sqr() * crate::operator::trace_product(&left, &right).re;
            }
        }
    }
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{random_density, random_hermitian, random_operator};
    use crate::operator::{kron, projector, trace, trace_product};
    use crate::rng::seeded_rng;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn spectrum_of(energies: &[f64]) -> Arc<SpectralDecomposition> {
        let h = Operator::from_diagonal(&DVector::from_iterator(
            energies.len(),
            energies.iter().map(|&e| Complex64::new(e, 0.0)),
        ));
        Arc::new(SpectralDecomposition::decompose(&h, 1e-9).unwrap())
    }

    /// `erfi(x)` by its Taylor series; every term is positive, so the sum is
    /// accurate for moderate `x`.
    fn erfi(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 * sum.abs() {
            n += 1.0;
            term *= x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        2.0 / PI.sqrt() * sum
    }

    fn all_dists() -> Vec<WaitingTimeDistribution> {
        vec![
            WaitingTimeDistribution::uniform_window(3.0, 2.0).unwrap(),
            WaitingTimeDistribution::half_normal(0.5, 1.7).unwrap(),
            WaitingTimeDistribution::delta(1.3).unwrap(),
        ]
    }

    #[test]
    fn zero_gap_gives_one() {
        for d in all_dists() {
            assert_eq!(d.coefficient(0.0).unwrap(), ONE);
        }
    }

    #[test]
    fn densities_are_normalized() {
        for d in all_dists()
            .into_iter()
            .chain([WaitingTimeDistribution::uniform_window(0.5, 4.0).unwrap()])
        {
            assert!((d.total_mass().unwrap() - 1.0).abs() < 1e-8, "{d:?}");
        }
    }

    #[test]
    fn uniform_window_modulus_is_sinc() {
        let d = WaitingTimeDistribution::uniform_window(7.0, 3.0).unwrap();
        for half_gap in [0.1, 0.37, 1.0, 2.5, 10.0] {
            let g = d.coefficient(2.0 * half_gap).unwrap();
            let x = 3.0 * half_gap;
            assert_abs_diff_eq!(g.norm(), (x.sin() / x).abs(), epsilon = 1e-14);
        }
    }

    #[test]
    fn uniform_window_scale_decays_like_inverse_width() {
        let sp = spectrum_of(&[0.0, 0.7, 1.9, 4.0]);
        let min_gap = 0.7;
        let mut worst: f64 = 0.0;
        for p in -8..=16 {
            let t_gap = 10f64.powf(0.25 * p as f64);
            let width = t_gap / min_gap;
            let dist = WaitingTimeDistribution::uniform_window(width, width).unwrap();
            let s = PartialDephasingMap::build(sp.clone(), &dist).unwrap().fuzziness_scale();
            if t_gap > 1.0 {
                assert!(s <= 2.0 / t_gap + 1e-15, "T minGap = {t_gap}: {s}");
                worst = worst.max(s * t_gap);
            }
        }
        // The tighter 1/(T minGap) envelope fails near T minGap = π.
        assert!(worst > 1.0);
        let at_pi = WaitingTimeDistribution::uniform_window(PI / min_gap, PI / min_gap).unwrap();
        let s = PartialDephasingMap::build(sp, &at_pi).unwrap().fuzziness_scale();
        assert_abs_diff_eq!(s, 2.0 / PI, epsilon = 1e-12);
    }

    #[test]
    fn uniform_window_agrees_with_quadrature() {
        let d = WaitingTimeDistribution::uniform_window(1.0, 5.0).unwrap();
        assert!(d.is_clipped());
        let (lo, hi) = d.support();
        for gap in [-3.0, 0.4, 2.2] {
            let q = quadrature::integrate(
                |t| Complex64::new(0.0, -gap * t).exp() * d.density(t).unwrap(),
                lo,
                hi,
                1e-13,
                8,
                10_000,
            )
            .unwrap();
            assert!((q - d.coefficient(gap).unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn half_normal_matches_erfi_closed_form() {
        for fuzziness in [0.3, 1.0, 4.0, 25.0] {
            let d = WaitingTimeDistribution::half_normal(2.0, fuzziness).unwrap();
            for half_gap in [0.05, 0.3, 1.0, 2.0] {
                let x = fuzziness.sqrt() * half_gap;
                if x > 5.0 {
                    continue;
                }
                // |G| = e^{−Tℰ²} |1 − erf(i√T ℰ)| = e^{−x²} √(1 + erfi(x)²)
                let closed = (-x * x).exp() * (1.0 + erfi(x).powi(2)).sqrt();
                let g = d.coefficient(2.0 * half_gap).unwrap();
                assert_abs_diff_eq!(g.norm(), closed, epsilon = 1e-8);
                // Phase: e^{−iωτ}(e^{−x²} − i e^{−x²} erfi(x)).
                let expected = Complex64::new(0.0, -2.0 * half_gap * 2.0).exp()
                    * Complex64::new((-x * x).exp(), -(-x * x).exp() * erfi(x));
                assert!((g - expected).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn delta_gives_unitary_evolution() {
        let mut rng = seeded_rng(4, 0);
        let h = random_hermitian(4, &mut rng);
        let spec = Arc::new(SpectralDecomposition::decompose(&h, 1e-9).unwrap());
        let tau = 0.83;
        let map = PartialDephasingMap::build(spec.clone(), &WaitingTimeDistribution::delta(tau).unwrap()).unwrap();
        let u = spec.basis()
            * Operator::from_diagonal(&DVector::from_iterator(
                4,
                spec.level_of().iter().map(|&l| Complex64::new(0.0, -tau * spec.energies()[l]).exp()),
            ))
            * spec.basis().adjoint();
        let rho = random_density(4, &mut rng);
        assert!((map.apply(&rho) - &u * &rho * u.adjoint()).norm() < 1e-12);
        assert!((PartialDephasingMap::unitary(spec, tau).coefficients() - map.coefficients()).norm() < 1e-14);
        assert_abs_diff_eq!(map.fuzziness_scale(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn long_window_approaches_dephasing() {
        let mut rng = seeded_rng(5, 0);
        let h = random_hermitian(3, &mut rng);
        let spec = Arc::new(SpectralDecomposition::decompose(&h, 1e-9).unwrap());
        let min_gap = crate::models::GapStatistics::new(&spec).min_gap;
        let width = 1e6 / min_gap;
        let dist = WaitingTimeDistribution::uniform_window(width, width).unwrap();
        let g = PartialDephasingMap::build(spec.clone(), &dist).unwrap().superoperator();
        let d = PartialDephasingMap::dephasing(spec).superoperator();
        assert!(g.sub(&d).unwrap().induced_norm() <= 1e-5);
    }

    #[test]
    fn diagonal_operators_are_fixed() {
        let mut rng = seeded_rng(6, 0);
        let h = random_hermitian(4, &mut rng);
        let spec = Arc::new(SpectralDecomposition::decompose(&h, 1e-9).unwrap());
        let diag = DVector::from_iterator(4, (0..4).map(|i| Complex64::new(i as f64 - 1.0, 0.0)));
        let sigma = spec.basis() * Operator::from_diagonal(&diag) * spec.basis().adjoint();
        for dist in all_dists() {
            let map = PartialDephasingMap::build(spec.clone(), &dist).unwrap();
            assert!((map.apply(&sigma) - &sigma).norm() < 1e-12);
        }
    }

    #[test]
    fn coefficient_table_invariants() {
        let spec = spectrum_of(&[0.0, 0.7, 1.9, 4.0]);
        for dist in all_dists() {
            let map = PartialDephasingMap::build(spec.clone(), &dist).unwrap();
            let g = map.coefficients();
            for n in 0..4 {
                assert_eq!(g[(n, n)], ONE);
                for m in 0..4 {
                    assert!(g[(n, m)].norm() <= 1.0 + 1e-12);
                    assert_eq!(g[(m, n)], g[(n, m)].conj());
                }
            }
        }
    }

    #[test]
    fn dephasing_examples() {
        let mut rng = seeded_rng(7, 0);
        let h = random_hermitian(3, &mut rng);
        let spec = Arc::new(SpectralDecomposition::decompose(&h, 1e-9).unwrap());
        let d = PartialDephasingMap::dephasing(spec.clone()).superoperator();
        assert!((d.compose(&d).unwrap().matrix() - d.matrix()).norm() < 1e-12);

        let two = spectrum_of(&[0.0, 1.0]);
        let s = 1.0 / 2f64.sqrt();
        let plus = projector(&DVector::from_vec(vec![Complex64::new(s, 0.0); 2]));
        let dephased = PartialDephasingMap::dephasing(two).apply(&plus);
        assert!((dephased - crate::operator::identity(2) * Complex64::new(0.5, 0.0)).norm() < 1e-14);

        let rho = random_density(3, &mut rng);
        let omega = PartialDephasingMap::dephasing(spec).apply(&rho);
        assert_abs_diff_eq!(trace_product(&rho, &omega).re, trace_product(&omega, &omega).re, epsilon = 1e-12);
    }

    #[test]
    fn dephasing_is_completely_positive() {
        // Choi matrix of 𝒟 on a degenerate spectrum is positive semidefinite.
        let spec = spectrum_of(&[0.0, 0.0, 1.0]);
        let d = PartialDephasingMap::dephasing(spec);
        let mut choi = Operator::zeros(9, 9);
        for i in 0..3 {
            for j in 0..3 {
                let mut unit = Operator::zeros(3, 3);
                unit[(i, j)] = ONE;
                choi += kron(&unit, &d.apply(&unit));
            }
        }
        assert!(choi.symmetric_eigenvalues().min() > -1e-12);
    }

    #[test]
    fn fuzziness_scale_examples() {
        let spec = spectrum_of(&[0.0, 2.0]);
        let window = WaitingTimeDistribution::uniform_window(10.0, PI).unwrap();
        let map = PartialDephasingMap::build(spec, &window).unwrap();
        assert!(map.fuzziness_scale() < 1e-15);

        let single = spectrum_of(&[1.0, 1.0]);
        assert_eq!(PartialDephasingMap::dephasing(single).fuzziness_scale(), 0.0);

        // The scan oracle: explicit maximum over all pairs.
        let spec = spectrum_of(&[0.0, 1.0, 10.0]);
        let width = 1001.0;
        let map = PartialDephasingMap::build(spec, &WaitingTimeDistribution::uniform_window(width, width).unwrap()).unwrap();
        let energies = [0.0, 1.0, 10.0];
        let mut best = (0.0, (0, 0));
        for n in 0..3 {
            for m in 0..3 {
                if n != m {
                    let x = width * (energies[n] - energies[m]) / 2.0;
                    let v = (x.sin() / x).abs();
                    if v > best.0 {
                        best = (v, (n.min(m), n.max(m)));
                    }
                }
            }
        }
        assert_abs_diff_eq!(map.fuzziness_scale(), best.0, epsilon = 1e-15);
        assert_eq!(best.1, (0, 1));
    }

    #[test]
    fn uniform_scale_decays_like_inverse_width() {
        let mut rng = seeded_rng(8, 0);
        let h = random_hermitian(5, &mut rng);
        let spec = Arc::new(SpectralDecomposition::decompose(&h, 1e-9).unwrap());
        let min_gap = crate::models::GapStatistics::new(&spec).min_gap;
        for i in 0..=24 {
            let x = 10f64.powf(-2.0 + 0.25 * i as f64);
            let width = x / min_gap;
            let dist = WaitingTimeDistribution::uniform_window(width, width).unwrap();
            let s = PartialDephasingMap::build(spec.clone(), &dist).unwrap().fuzziness_scale();
            assert!(s <= 1.0 + 1e-12);
            if x > 1.0 {
                assert!(s <= 2.0 / x + 1e-12, "x = {x}: {s}");
            }
        }
    }

    #[test]
    fn map_invariants_on_random_instances() {
        let mut rng = seeded_rng(9, 0);
        for trial in 0..20 {
            let h = random_hermitian(4, &mut rng);
            let spec = Arc::new(SpectralDecomposition::decompose(&h, 1e-9).unwrap());
            let dist = all_dists()[trial % 3];
            let g = PartialDephasingMap::build(spec.clone(), &dist).unwrap();
            let d = PartialDephasingMap::dephasing(spec);
            let sigma = random_operator(4, &mut rng);
            assert!((g.apply(&sigma.adjoint()) - g.apply(&sigma).adjoint()).norm() < 1e-12);
            assert!((trace(&g.apply(&sigma)) - trace(&sigma)).norm() < 1e-12);

            let rho = random_density(4, &mut rng);
            let lhs = (g.apply(&rho) - d.apply(&rho)).norm();
            let rhs = g.fuzziness_scale() * (&rho - d.apply(&rho)).norm();
            assert!(lhs <= rhs + 1e-12);
            let (a, b) = coherence_identity(&g, &rho);
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn dephasing_norm_survives_random_search() {
        let mut rng = seeded_rng(10, 0);
        let h = random_hermitian(3, &mut rng);
        let spec = Arc::new(SpectralDecomposition::decompose(&h, 1e-9).unwrap());
        assert_eq!(spec.level_count(), 3);
        let map = PartialDephasingMap::dephasing(spec);
        let svd = map.superoperator().induced_norm();

        // 10⁴ random unit-Frobenius probes, then ascent from the best probe
        // along σ ← 𝒟†𝒟(σ)/‖·‖; every iterate is a valid lower bound.
        let mut best = (0.0, Operator::zeros(3, 3));
        for _ in 0..10_000 {
            let mut sigma = random_operator(3, &mut rng);
            sigma /= Complex64::new(sigma.norm(), 0.0);
            let value = map.apply(&sigma).norm();
            assert!(value <= svd + 1e-12);
            if value > best.0 {
                best = (value, sigma);
            }
        }
        let mut sigma = best.1;
        let mut value = best.0;
        for _ in 0..50 {
            let next = map.apply(&map.apply(&sigma));
            sigma = &next / Complex64::new(next.norm(), 0.0);
            value = map.apply(&sigma).norm();
            assert!(value <= svd + 1e-12);
        }
        assert!(svd - value <= 1e-3, "{value} vs {svd}");
        assert_abs_diff_eq!(svd, 1.0, epsilon = 1e-10);
    }
}
