//! Monte Carlo estimates over sampled waiting times, used as an oracle for
//! the analytic partial-dephasing results.
//!
//! Samples are drawn in fixed chunks of [`CHUNK`], chunk `c` using the
//! stream `(seed, c)`. Chunks run in parallel and are merged in order, so
//! estimates are bitwise reproducible regardless of thread count.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dephasing::WaitingTimeDistribution;
use crate::error::{Error, Result};
use crate::operator::{ensure_density, ensure_hermitian, Operator};
use crate::process::{ProcessSpec, PropagationMode};
use crate::rng::{seeded_rng, StreamRng};
use crate::spectral::SpectralDecomposition;

pub const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√samples`.
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

impl McEstimate {
    /// `|mean − value| / stderr`. Differences at rounding level
    /// (`1e-12` relative) score zero, since a near-constant integrand has a
    /// stderr far below the rounding error of the mean; a zero-variance
    /// estimate that misses scores infinity.
    pub fn z_score(&self, value: f64) -> f64 {
        let diff = (self.mean - value).abs();
        if diff <= 1e-12 * value.abs().max(1.0) {
            0.0
        } else if self.stderr > 0.0 {
            diff / self.stderr
        } else {
            f64::INFINITY
        }
    }
}

/// Count, mean and sum of squared deviations of one chunk.
#[derive(Debug, Clone, Copy)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64,
        }
    }
}

fn chunk_ranges(n: usize) -> Vec<(u64, usize)> {
    (0..n.div_ceil(CHUNK))
        .map(|c| (c as u64, CHUNK.min(n - c * CHUNK)))
        .collect()
}

fn estimate<F>(n: usize, seed: u64, f: F) -> Result<McEstimate>
where
    F: Fn(&mut StreamRng) -> Result<f64> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidArgument("at least one sample is needed".into()));
    }
    let chunks: Vec<Moments> = chunk_ranges(n)
        .into_par_iter()
        .map(|(c, len)| {
            let mut rng = seeded_rng(seed, c);
            let mut m = Moments { n: 0, mean: 0.0, m2: 0.0 };
            for _ in 0..len {
                let x = f(&mut rng)?;
                m.n += 1;
                let delta = x - m.mean;
                m.mean += delta / m.n as f64;
                m.m2 += delta * (x - m.mean);
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let total = chunks
        .into_iter()
        .fold(Moments { n: 0, mean: 0.0, m2: 0.0 }, Moments::merge);
    let variance = if total.n > 1 { total.m2 / (total.n - 1) as f64 } else { 0.0 };
    Ok(McEstimate {
        mean: total.mean,
        stderr: (variance / total.n as f64).sqrt(),
        samples: total.n,
        seed,
    })
}

fn draw_row<R: Rng + ?Sized>(dists: &[WaitingTimeDistribution], rng: &mut R) -> Vec<f64> {
    dists.iter().map(|d| d.sample(rng)).collect()
}

/// `n` rows of independent waiting times, one column per distribution.
pub fn sample_waiting_times(dists: &[WaitingTimeDistribution], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    for d in dists {
        d.validate()?;
    }
    let rows: Vec<Vec<Vec<f64>>> = chunk_ranges(n)
        .into_par_iter()
        .map(|(c, len)| {
            let mut rng = seeded_rng(seed, c);
            (0..len).map(|_| draw_row(dists, &mut rng)).collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Average of the fixed-time expectation over sampled waiting times.
pub fn mc_expectation(spec: &ProcessSpec, n: usize, seed: u64) -> Result<McEstimate> {
    let compiled = spec.compile()?;
    let dists: Vec<WaitingTimeDistribution> = spec.steps().iter().map(|s| s.distribution).collect();
    estimate(n, seed, |rng| {
        compiled.expectation(&PropagationMode::FixedTimes(draw_row(&dists, rng)))
    })
}

/// Window average of `|tr[A(ρ(t) − ω)]|²` for `t` uniform on `[0, T]`.
pub fn mc_time_averaged_variance(
    rho: &Operator,
    spectrum: &Arc<SpectralDecomposition>,
    observable: &Operator,
    window: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {window}")));
    }
    let d = spectrum.dim();
    if rho.nrows() != d || observable.nrows() != d {
        return Err(Error::Dimension(format!("state and observable must have dimension {d}")));
    }
    ensure_density(rho, 1e-10)?;
    ensure_hermitian(observable, 1e-12)?;
    let rho_f = spectrum.to_energy_frame(rho, 1);
    let a_f = spectrum.to_energy_frame(observable, 1);
    let level = spectrum.level_of();
    let energies = spectrum.energies();
    // tr[A ρ(t)] − tr[A ω] = Σ_{level i ≠ level j} A_ji ρ_ij e^{−i(E_i − E_j)t}.
    let terms: Vec<(Complex64, f64)> = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter(|&(i, j)| level[i] != level[j])
        .map(|(i, j)| (a_f[(j, i)] * rho_f[(i, j)], energies[level[i]] - energies[level[j]]))
        .collect();
    estimate(n, seed, |rng| {
        let t = window * rng.random::<f64>();
        let value: Complex64 = terms.iter().map(|&(c, w)| c * Complex64::new(0.0, -w * t).exp()).sum();
        Ok(value.norm_sqr())
    })
}

/// Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
