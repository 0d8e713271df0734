//! Runs an [`ExperimentConfig`] and writes its artifacts.
//!
//! Every run writes `<stem>.csv` (one fixed header per kind) and
//! `<stem>.json` (full reports). Files are written to a temporary name and
//! renamed, so a failed run leaves no partial output. When an inequality
//! check fails, `<stem>.repro.json` records the config and the failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{short_farrelly_bound, single_time_bound, theorem_bound, BoundReport, SingleTimeBound, Violation};
use crate::choi::{choi_check, ChoiCheck};
use crate::config::{ChoiMode, ExperimentConfig, ExperimentKind, McQuantity};
use crate::dephasing::Family;
use crate::error::{Error, Result};
use crate::models::GapStatistics;
use crate::montecarlo::{mc_expectation, mc_time_averaged_variance, McEstimate};
use crate::process::{PropagationMode, ProcessSpec};

pub const MULTI_TIME_HEADER: [&str; 12] =
    ["k", "dE", "dS", "dGamma", "family", "T", "lhs", "termA", "sumB", "sumC", "rhs", "slack"];
pub const SWEEP_HEADER: [&str; 15] = [
    "parameter", "value", "k", "dE", "dS", "dGamma", "family", "T", "lhs", "termA", "sumB", "sumC", "rhs", "slack",
    "s_total",
];
pub const SINGLE_TIME_HEADER: [&str; 9] =
    ["d", "family", "tau", "T", "lhs", "rhs", "slack", "fuzziness_scale", "distance"];
pub const MONTECARLO_HEADER: [&str; 5] = ["quantity", "mean", "stderr", "n", "seed"];
pub const CHOI_HEADER: [&str; 9] =
    ["k", "dS", "mode", "contraction", "sequential", "abs_diff", "trace", "expected_trace", "min_eigenvalue"];

/// Shortest decimal that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

/// Header for an experiment kind.
pub fn header(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::SingleTime => &SINGLE_TIME_HEADER,
        ExperimentKind::MultiTime => &MULTI_TIME_HEADER,
        ExperimentKind::Sweep => &SWEEP_HEADER,
        ExperimentKind::Montecarlo => &MONTECARLO_HEADER,
        ExperimentKind::ChoiCheck => &CHOI_HEADER,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; falls back to the config's `output`, then `.`.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub violations: Vec<Violation>,
    pub repro: Option<PathBuf>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Family column: the shared family of all steps, or `mixed`.
fn family_label(spec: &ProcessSpec) -> String {
    let first = spec.steps()[0].distribution.family;
    if spec.steps().iter().all(|s| s.distribution.family == first) {
        first.to_string()
    } else {
        "mixed".into()
    }
}

fn report_row(spec: &ProcessSpec, r: &BoundReport) -> Vec<String> {
    let f = format_float;
    vec![
        r.k.to_string(),
        r.env_dim.to_string(),
        r.system_dim.to_string(),
        r.ancilla_dim.to_string(),
        family_label(spec),
        f(spec.steps()[0].distribution.fuzziness),
        f(r.lhs),
        f(r.term_a),
        f(r.sum_b()),
        f(r.sum_c()),
        f(r.rhs),
        f(r.slack),
    ]
}

#[derive(Serialize)]
struct SweepPointDetail {
    parameter: &'static str,
    value: String,
    report: BoundReport,
}

#[derive(Serialize)]
struct SingleTimeDetail {
    family: Family,
    tau: f64,
    #[serde(rename = "T")]
    fuzziness: f64,
    bound: SingleTimeBound,
}

#[derive(Serialize)]
struct EpsilonBound {
    epsilon: f64,
    bound: f64,
}

#[derive(Serialize)]
struct MonteCarloDetail {
    quantity: McQuantity,
    estimate: McEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    analytic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_score: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    bounds: Vec<EpsilonBound>,
}

#[derive(Serialize)]
struct ChoiDetail {
    mode: ChoiMode,
    check: ChoiCheck,
}

#[derive(Serialize)]
#[serde(untagged)]
enum Detail {
    Multi(BoundReport),
    Sweep(Vec<SweepPointDetail>),
    Single(SingleTimeDetail),
    MonteCarlo(MonteCarloDetail),
    Choi(ChoiDetail),
}

#[derive(Serialize)]
struct Repro<'a> {
    config: &'a ExperimentConfig,
    violations: &'a [Violation],
}

struct Computed {
    rows: Vec<Vec<String>>,
    detail: Detail,
    violations: Vec<Violation>,
}

fn compute(config: &ExperimentConfig) -> Result<Computed> {
    let tol = config.tolerances;
    let seed = config.seed;
    let missing = |what: &str| Error::InvalidArgument(format!("config has no \"{what}\" section"));
    match config.kind {
        ExperimentKind::MultiTime => {
            let spec = config.process.as_ref().ok_or_else(|| missing("process"))?.build(seed)?;
            let report = theorem_bound(&spec)?;
            Ok(Computed {
                rows: vec![report_row(&spec, &report)],
                violations: report.violations(tol.slack, tol.auxiliary),
                detail: Detail::Multi(report),
            })
        }
        ExperimentKind::Sweep => {
            let process = config.process.as_ref().ok_or_else(|| missing("process"))?;
            let sweep = config.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
            let points = sweep.points()?;
            let results = points
                .par_iter()
                .map(|&p| {
                    let spec = sweep.apply(process, p, seed)?;
                    let report = theorem_bound(&spec)?;
                    Ok((p, spec, report))
                })
                .collect::<Result<Vec<_>>>()?;
            let name = sweep.parameter.name();
            let mut rows = Vec::new();
            let mut violations = Vec::new();
            let mut details = Vec::new();
            for (p, spec, report) in results {
                let mut row = vec![name.to_string(), p.to_string()];
                row.extend(report_row(&spec, &report));
                row.push(format_float(report.s_total()));
                rows.push(row);
                violations.extend(report.violations(tol.slack, tol.auxiliary).into_iter().map(|v| Violation {
                    check: format!("{name}={p}: {}", v.check),
                    excess: v.excess,
                }));
                details.push(SweepPointDetail {
                    parameter: name,
                    value: p.to_string(),
                    report,
                });
            }
            Ok(Computed {
                rows,
                detail: Detail::Sweep(details),
                violations,
            })
        }
        ExperimentKind::SingleTime => {
            let inst = config.single_time.as_ref().ok_or_else(|| missing("single_time"))?.build(seed)?;
            let dist = inst.distribution.ok_or_else(|| missing("distribution"))?;
            let bound = single_time_bound(&inst.rho, inst.spectrum.clone(), &dist, &inst.observable)?;
            let f = format_float;
            let slack = bound.rhs - bound.lhs;
            let mut violations = Vec::new();
            if slack < -tol.single_time {
                violations.push(Violation {
                    check: "single-time lhs <= rhs".into(),
                    excess: -slack,
                });
            }
            Ok(Computed {
                rows: vec![vec![
                    inst.spectrum.dim().to_string(),
                    dist.family.to_string(),
                    f(dist.tau),
                    f(dist.fuzziness),
                    f(bound.lhs),
                    f(bound.rhs),
                    f(slack),
                    f(bound.fuzziness_scale),
                    f(bound.distance),
                ]],
                detail: Detail::Single(SingleTimeDetail {
                    family: dist.family,
                    tau: dist.tau,
                    fuzziness: dist.fuzziness,
                    bound,
                }),
                violations,
            })
        }
        ExperimentKind::Montecarlo => {
            let mc = config.montecarlo.as_ref().ok_or_else(|| missing("montecarlo"))?;
            let f = format_float;
            let row = |quantity: String, mean: f64, stderr: f64, n: usize| {
                vec![quantity, f(mean), f(stderr), n.to_string(), seed.to_string()]
            };
            let mut violations = Vec::new();
            match mc.quantity {
                McQuantity::Expectation => {
                    let spec = config.process.as_ref().ok_or_else(|| missing("process"))?.build(seed)?;
                    let estimate = mc_expectation(&spec, mc.samples, seed)?;
                    let analytic = spec.propagate(&PropagationMode::Fuzzy)?.expectation;
                    let z = estimate.z_score(analytic);
                    if z > tol.z_max {
                        violations.push(Violation {
                            check: format!("|mean - analytic| <= {} stderr", tol.z_max),
                            excess: z - tol.z_max,
                        });
                    }
                    Ok(Computed {
                        rows: vec![
                            row("mc-expectation".into(), estimate.mean, estimate.stderr, estimate.samples),
                            row("analytic-expectation".into(), analytic, 0.0, 0),
                        ],
                        detail: Detail::MonteCarlo(MonteCarloDetail {
                            quantity: mc.quantity,
                            estimate,
                            analytic: Some(analytic),
                            z_score: Some(z),
                            bounds: Vec::new(),
                        }),
                        violations,
                    })
                }
                McQuantity::TimeAveragedVariance => {
                    let inst = config.single_time.as_ref().ok_or_else(|| missing("single_time"))?.build(seed)?;
                    let window = mc.window.ok_or_else(|| missing("window"))?;
                    let epsilons = match &mc.epsilons {
                        Some(e) => e.clone(),
                        None => {
                            let gap = GapStatistics::new(&inst.spectrum).min_gap;
                            vec![if gap > 0.0 { gap } else { 1.0 }]
                        }
                    };
                    let estimate =
                        mc_time_averaged_variance(&inst.rho, &inst.spectrum, &inst.observable, window, mc.samples, seed)?;
                    let mut rows = vec![row("time-averaged-variance".into(), estimate.mean, estimate.stderr, estimate.samples)];
                    let mut bounds = Vec::new();
                    for &epsilon in &epsilons {
                        let bound = short_farrelly_bound(&inst.rho, &inst.spectrum, epsilon, window, &inst.observable)?;
                        rows.push(row(format!("variance-bound(eps={})", f(epsilon)), bound, 0.0, 0));
                        let excess = estimate.mean - (bound + tol.z_max * estimate.stderr);
                        if excess > 0.0 {
                            violations.push(Violation {
                                check: format!("variance <= bound(eps={}) + {} stderr", f(epsilon), tol.z_max),
                                excess,
                            });
                        }
                        bounds.push(EpsilonBound { epsilon, bound });
                    }
                    Ok(Computed {
                        rows,
                        detail: Detail::MonteCarlo(MonteCarloDetail {
                            quantity: mc.quantity,
                            estimate,
                            analytic: None,
                            z_score: None,
                            bounds,
                        }),
                        violations,
                    })
                }
            }
        }
        ExperimentKind::ChoiCheck => {
            let spec = config.process.as_ref().ok_or_else(|| missing("process"))?.build(seed)?;
            let choi = config.choi.clone().unwrap_or_default();
            let mode = match choi.mode {
                ChoiMode::Fuzzy => PropagationMode::Fuzzy,
                ChoiMode::Equilibrium => PropagationMode::Equilibrium,
                ChoiMode::FixedTimes => PropagationMode::FixedTimes(choi.times.clone().ok_or_else(|| missing("times"))?),
            };
            let check = choi_check(&spec, &mode)?;
            let mut violations = Vec::new();
            let mut fail = |ok: bool, name: &str, excess: f64| {
                if !ok {
                    violations.push(Violation {
                        check: name.into(),
                        excess,
                    });
                }
            };
            fail(check.abs_diff <= tol.duality, "|contraction - sequential| <= tol", check.abs_diff - tol.duality);
            fail(check.min_eigenvalue >= -tol.psd, "Choi tensor is PSD", -check.min_eigenvalue - tol.psd);
            let trace_err = (check.trace - check.expected_trace).abs();
            fail(trace_err <= tol.trace, "tr Choi = dS^k", trace_err - tol.trace);
            let mode_name = match choi.mode {
                ChoiMode::Fuzzy => "fuzzy",
                ChoiMode::Equilibrium => "equilibrium",
                ChoiMode::FixedTimes => "fixed-times",
            };
            let f = format_float;
            Ok(Computed {
                rows: vec![vec![
                    spec.k().to_string(),
                    spec.layout().system.to_string(),
                    mode_name.into(),
                    f(check.contraction),
                    f(check.sequential),
                    f(check.abs_diff),
                    f(check.trace),
                    f(check.expected_trace),
                    f(check.min_eigenvalue),
                ]],
                detail: Detail::Choi(ChoiDetail { mode: choi.mode, check }),
                violations,
            })
        }
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// CSV text with a header row and one line per row.
pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidArgument(format!("CSV encoding failed: {e}"));
    writer.write_record(header).map_err(io)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidArgument(format!(
                "row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        writer.write_record(row).map_err(io)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("CSV encoding failed: {e}")))
}

/// Error from [`run_experiment`]: computation or file output.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Compute(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Computes the experiment and writes its artifacts. Inequality failures
/// are reported in the outcome, not as an error.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> std::result::Result<RunOutcome, RunError> {
    let computed = compute(config)?;
    let dir = options
        .out_dir
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let stem = config.stem();
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    let csv_data = csv_bytes(header(config.kind), &computed.rows)?;
    let json_data = serde_json::to_vec_pretty(&computed.detail)
        .map_err(|e| Error::InvalidArgument(format!("JSON encoding failed: {e}")))?;
    let repro = if computed.violations.is_empty() {
        None
    } else {
        let path = dir.join(format!("{stem}.repro.json"));
        let data = serde_json::to_vec_pretty(&Repro {
            config,
            violations: &computed.violations,
        })
        .map_err(|e| Error::InvalidArgument(format!("JSON encoding failed: {e}")))?;
        write_atomic(&path, &data).map_err(io(&path))?;
        Some(path)
    };
    write_atomic(&json, &json_data).map_err(io(&json))?;
    write_atomic(&csv, &csv_data).map_err(io(&csv))?;
    Ok(RunOutcome {
        csv,
        json,
        violations: computed.violations,
        repro,
    })
}
