//! Configuration-driven experiments: a JSON spec selects a mode, the runner
//! orchestrates the other modules and writes artifact files.
//!
//! Artifacts per run, inside the output directory:
//!
//! - `results.json` — full structured output for the mode
//! - `results.csv` — plot-ready table (sweep and single-eval modes)
//! - `manifest.json` — resolved spec echo, derived seeds, toolkit version,
//!   and wall time (wall time lives only here, so `results.json` is
//!   byte-reproducible across reruns)
//!
//! Exit-code contract for callers: `0` success, `2` when a verdict-type run
//! fails its criteria, `1` on operational errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_instance, ChannelModel, Topology};
use crate::link::{compute_metrics, BeamformerSet, ImpairmentProfile, LinkMetrics};
use crate::opt::{
    optimize_rsma, random_feasible_set, random_search_oracle, utility_value, OptimizationResult,
    OptimizerConfig, Utility,
};
use crate::verify::{
    certify_instance, default_delta_grid, degeneration_verdict, delta_sweep, CertificateVerdict,
    DegenerationCertificate, DegenerationReport, SweepResult,
};
use crate::{derive_seed, seed_stream, CVector, Error, Result};
use num_complex::Complex64;

/// What a run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    /// Residual-interference sweep plus degeneration verdict.
    Sweep,
    /// Degeneration certificates on random instances at `delta_sic = 1`.
    Certify,
    /// Optimizer versus random-search oracle on seeded instances.
    OracleCompare,
    /// Metrics of the maximum-ratio space-division beamformer on one
    /// instance.
    SingleEval,
}

/// Fully resolved experiment description. Parsing applies documented
/// defaults for absent optional fields; see [`load_spec`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub topology: Topology,
    pub profile_base: ImpairmentProfile,
    pub delta_grid: Vec<f64>,
    pub trials: usize,
    pub optimizer: OptimizerConfig,
    pub mode: ExperimentMode,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    /// Relative tolerance for the sweep verdict's endpoint check.
    pub verdict_rel_tol: f64,
    /// Random-search budget per instance in oracle-compare mode.
    pub oracle_samples: usize,
    /// Allowed relative shortfall of the optimizer against the oracle.
    pub oracle_margin: f64,
    /// Keep full optimizer traces in artifacts instead of thinning to
    /// every 10th iteration.
    pub full_traces: bool,
}

#[derive(Deserialize)]
struct ProfileWire {
    m_t: Option<f64>,
    m_r: Option<f64>,
    sigma_k_sq: Option<Vec<f64>>,
    delta_sic: Option<f64>,
}

#[derive(Deserialize)]
struct OptimizerWire {
    utility: Option<Utility>,
    restarts: Option<usize>,
    max_iters: Option<usize>,
    rel_tol: Option<f64>,
    armijo_beta: Option<f64>,
    armijo_c: Option<f64>,
    seed: Option<u64>,
    p_max: Option<f64>,
}

#[derive(Deserialize)]
struct SpecWire {
    topology: Topology,
    profile_base: Option<ProfileWire>,
    delta_grid: Option<Vec<f64>>,
    trials: Option<usize>,
    optimizer: Option<OptimizerWire>,
    mode: ExperimentMode,
    output_dir: Option<PathBuf>,
    master_seed: u64,
    verdict_rel_tol: Option<f64>,
    oracle_samples: Option<usize>,
    oracle_margin: Option<f64>,
    full_traces: Option<bool>,
}

impl ExperimentSpec {
    /// Parses a spec from JSON, applying defaults:
    ///
    /// - profile: `m_t = m_r = 0.05`, unit noise variances, `delta_sic = 0.04`
    /// - `delta_grid`: `{0, 0.04, 0.1, 0.25, 0.5, 0.75, 0.9, 1}`
    /// - `trials = 10`, `output_dir = "out"`
    /// - optimizer: 8 restarts, 2000 iterations, `rel_tol = 1e-6`,
    ///   Armijo `beta = 0.5` / `c = 1e-4`, `p_max = 100`, seed = master seed
    /// - `verdict_rel_tol = 0.01`, `oracle_samples = 100000`,
    ///   `oracle_margin = 0.01`, `full_traces = false`
    pub fn from_json_str(json: &str) -> Result<Self> {
        let wire: SpecWire = serde_json::from_str(json).map_err(|source| Error::Parse {
            path: PathBuf::from("<inline json>"),
            source,
        })?;
        Self::resolve(wire)
    }

    fn resolve(wire: SpecWire) -> Result<Self> {
        wire.topology.validate()?;
        let k = wire.topology.k;
        let p = wire.profile_base.unwrap_or(ProfileWire {
            m_t: None,
            m_r: None,
            sigma_k_sq: None,
            delta_sic: None,
        });
        let profile_base = ImpairmentProfile::new(
            p.m_t.unwrap_or(0.05),
            p.m_r.unwrap_or(0.05),
            p.sigma_k_sq.unwrap_or_else(|| vec![1.0; k]),
            p.delta_sic.unwrap_or(0.04),
        )?;
        if profile_base.users() != k {
            return Err(Error::DimensionMismatch {
                operand: "profile_base.sigma_k_sq",
                expected: format!("{k} entries"),
                actual: format!("{}", profile_base.users()),
            });
        }

        let o = wire.optimizer.unwrap_or(OptimizerWire {
            utility: None,
            restarts: None,
            max_iters: None,
            rel_tol: None,
            armijo_beta: None,
            armijo_c: None,
            seed: None,
            p_max: None,
        });
        let defaults = OptimizerConfig::default();
        let optimizer = OptimizerConfig {
            utility: o.utility.unwrap_or(defaults.utility),
            restarts: o.restarts.unwrap_or(defaults.restarts),
            max_iters: o.max_iters.unwrap_or(defaults.max_iters),
            rel_tol: o.rel_tol.unwrap_or(defaults.rel_tol),
            armijo_beta: o.armijo_beta.unwrap_or(defaults.armijo_beta),
            armijo_c: o.armijo_c.unwrap_or(defaults.armijo_c),
            seed: o.seed.unwrap_or(wire.master_seed),
            p_max: o.p_max.unwrap_or(defaults.p_max),
        };
        optimizer.validate()?;

        let delta_grid = wire.delta_grid.unwrap_or_else(default_delta_grid);
        if delta_grid.is_empty() {
            return Err(Error::InvalidParameter {
                field: "delta_grid",
                constraint: "must be nonempty".into(),
            });
        }
        if delta_grid.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::InvalidParameter {
                field: "delta_grid",
                constraint: "every value must lie in [0, 1]".into(),
            });
        }
        if delta_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter {
                field: "delta_grid",
                constraint: "values must be strictly increasing".into(),
            });
        }

        let trials = wire.trials.unwrap_or(10);
        if trials < 1 {
            return Err(Error::InvalidParameter {
                field: "trials",
                constraint: "must be >= 1".into(),
            });
        }
        let oracle_samples = wire.oracle_samples.unwrap_or(100_000);
        if oracle_samples < 1 {
            return Err(Error::InvalidParameter {
                field: "oracle_samples",
                constraint: "must be >= 1".into(),
            });
        }

        Ok(ExperimentSpec {
            topology: wire.topology,
            profile_base,
            delta_grid,
            trials,
            optimizer,
            mode: wire.mode,
            output_dir: wire.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            master_seed: wire.master_seed,
            verdict_rel_tol: wire.verdict_rel_tol.unwrap_or(0.01),
            oracle_samples,
            oracle_margin: wire.oracle_margin.unwrap_or(0.01),
            full_traces: wire.full_traces.unwrap_or(false),
        })
    }
}

impl<'de> Deserialize<'de> for ExperimentSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = SpecWire::deserialize(deserializer)?;
        ExperimentSpec::resolve(wire).map_err(serde::de::Error::custom)
    }
}

/// Reads and validates a spec file.
pub fn load_spec(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let wire: SpecWire = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentSpec::resolve(wire)
}

/// Where a run put its artifacts, and whether its verdict (if any) passed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// `None` for modes without a pass/fail criterion (single-eval).
    pub verdict_passed: Option<bool>,
    pub results_path: PathBuf,
    pub manifest_path: PathBuf,
    pub csv_path: Option<PathBuf>,
    /// One-line human summary of what happened.
    pub summary: String,
}

impl RunOutcome {
    /// Process exit code under the 0/2 contract (operational errors are the
    /// caller's `1`).
    pub fn exit_code(&self) -> i32 {
        match self.verdict_passed {
            Some(false) => 2,
            _ => 0,
        }
    }
}

#[derive(Serialize)]
struct OracleComparison {
    trial: usize,
    optimizer: OptimizationResult,
    oracle_objective: f64,
    relative_margin: f64,
    passed: bool,
}

#[derive(Serialize)]
struct CertifySummary {
    certified: usize,
    degenerate_nullspace: usize,
    violated: usize,
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum ResultsDoc {
    Sweep {
        sweep: SweepResult,
        verdict: DegenerationReport,
    },
    Certify {
        summary: CertifySummary,
        certificates: Vec<DegenerationCertificate>,
    },
    OracleCompare {
        worst_relative_margin: f64,
        passed: bool,
        comparisons: Vec<OracleComparison>,
    },
    SingleEval {
        beamformers: BeamformerSet,
        metrics: LinkMetrics,
    },
}

#[derive(Serialize)]
struct Manifest<'a> {
    spec: &'a ExperimentSpec,
    derived_channel_seeds: Vec<u64>,
    toolkit_name: &'static str,
    toolkit_version: &'static str,
    /// True when a distortion ratio sits on the idealized zero boundary.
    ideal_hardware_boundary: bool,
    wall_time_seconds: f64,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable artifact");
    text.push('\n');
    text
}

/// Executes a spec and writes `results.json`, `manifest.json`, and (for
/// sweep and single-eval modes) `results.csv` into the output directory.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let start = Instant::now();
    std::fs::create_dir_all(&spec.output_dir).map_err(|source| Error::Io {
        path: spec.output_dir.clone(),
        source,
    })?;

    let (doc, csv, channel_seeds, verdict_passed, summary) = match spec.mode {
        ExperimentMode::Sweep => run_sweep(spec)?,
        ExperimentMode::Certify => run_certify(spec)?,
        ExperimentMode::OracleCompare => run_oracle_compare(spec)?,
        ExperimentMode::SingleEval => run_single_eval(spec)?,
    };

    let results_path = spec.output_dir.join("results.json");
    write_file(&results_path, &to_pretty_json(&doc))?;

    let csv_path = match csv {
        Some(table) => {
            let path = spec.output_dir.join("results.csv");
            write_file(&path, &table)?;
            Some(path)
        }
        None => None,
    };

    let manifest = Manifest {
        spec,
        derived_channel_seeds: channel_seeds,
        toolkit_name: env!("CARGO_PKG_NAME"),
        toolkit_version: env!("CARGO_PKG_VERSION"),
        ideal_hardware_boundary: spec.profile_base.is_ideal_boundary(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let manifest_path = spec.output_dir.join("manifest.json");
    write_file(&manifest_path, &to_pretty_json(&manifest))?;

    Ok(RunOutcome {
        verdict_passed,
        results_path,
        manifest_path,
        csv_path,
        summary,
    })
}

type ModeOutput = (
    ResultsDoc,
    Option<String>,
    Vec<u64>,
    Option<bool>,
    String,
);

fn run_sweep(spec: &ExperimentSpec) -> Result<ModeOutput> {
    let sweep = delta_sweep(
        spec.topology,
        &spec.profile_base,
        &spec.delta_grid,
        spec.trials,
        &spec.optimizer,
        spec.master_seed,
    )?;
    let verdict = degeneration_verdict(&sweep, spec.verdict_rel_tol)?;
    let csv = sweep.to_csv();
    let seeds = sweep.trial_seeds.clone();
    let passed = verdict.passed;
    let summary = format!(
        "sweep over {} grid points x {} trials: endpoint gap {:.3e} rel, common power {:.3e}, verdict {}",
        sweep.delta_grid.len(),
        spec.trials,
        verdict.endpoint_gap_rel,
        verdict.common_power_fraction_at_endpoint,
        if passed { "pass" } else { "FAIL" },
    );
    Ok((
        ResultsDoc::Sweep { sweep, verdict },
        Some(csv),
        seeds,
        Some(passed),
        summary,
    ))
}

fn run_certify(spec: &ExperimentSpec) -> Result<ModeOutput> {
    let profile = spec.profile_base.with_delta(1.0)?;
    let seeds: Vec<u64> = (0..spec.trials)
        .map(|t| derive_seed(spec.master_seed, seed_stream::CHANNEL, t as u64))
        .collect();
    let certificates: Vec<DegenerationCertificate> = (0..spec.trials)
        .into_par_iter()
        .map(|t| -> Result<DegenerationCertificate> {
            let instance =
                generate_instance(spec.topology, seeds[t], ChannelModel::Rayleigh)?;
            let b = random_feasible_set(
                spec.topology.m,
                spec.topology.k,
                spec.optimizer.p_max,
                derive_seed(spec.master_seed, seed_stream::BEAMFORMER, t as u64),
            );
            certify_instance(&instance, &b, &profile)
        })
        .collect::<Result<Vec<_>>>()?;

    let count = |v: CertificateVerdict| certificates.iter().filter(|c| c.verdict == v).count();
    let summary_counts = CertifySummary {
        certified: count(CertificateVerdict::Certified),
        degenerate_nullspace: count(CertificateVerdict::DegenerateNullspace),
        violated: count(CertificateVerdict::Violated),
    };
    let passed = summary_counts.violated == 0;
    let summary = format!(
        "certified {} / degenerate {} / violated {} over {} instances",
        summary_counts.certified,
        summary_counts.degenerate_nullspace,
        summary_counts.violated,
        spec.trials
    );
    Ok((
        ResultsDoc::Certify {
            summary: summary_counts,
            certificates,
        },
        None,
        seeds,
        Some(passed),
        summary,
    ))
}

fn run_oracle_compare(spec: &ExperimentSpec) -> Result<ModeOutput> {
    let seeds: Vec<u64> = (0..spec.trials)
        .map(|t| derive_seed(spec.master_seed, seed_stream::CHANNEL, t as u64))
        .collect();
    let comparisons: Vec<OracleComparison> = (0..spec.trials)
        .map(|t| -> Result<OracleComparison> {
            let instance =
                generate_instance(spec.topology, seeds[t], ChannelModel::Rayleigh)?;
            let config = OptimizerConfig {
                seed: derive_seed(spec.master_seed, seed_stream::OPTIMIZER, t as u64),
                ..spec.optimizer.clone()
            };
            let optimizer = optimize_rsma(&instance, &spec.profile_base, &config)?;
            let oracle_best = random_search_oracle(
                &instance,
                &spec.profile_base,
                config.utility,
                spec.oracle_samples,
                derive_seed(spec.master_seed, seed_stream::ORACLE, t as u64),
                config.p_max,
            );
            let oracle_objective =
                utility_value(&instance, &oracle_best, &spec.profile_base, config.utility);
            let relative_margin = (optimizer.objective - oracle_objective)
                / oracle_objective.abs().max(1e-300);
            let passed = relative_margin >= -spec.oracle_margin;
            let optimizer = if spec.full_traces {
                optimizer
            } else {
                optimizer.with_thinned_trace(10)
            };
            Ok(OracleComparison {
                trial: t,
                optimizer,
                oracle_objective,
                relative_margin,
                passed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let worst = comparisons
        .iter()
        .map(|c| c.relative_margin)
        .fold(f64::INFINITY, f64::min);
    let passed = comparisons.iter().all(|c| c.passed);
    let summary = format!(
        "optimizer vs {}-sample oracle on {} instances: worst relative margin {:.3e}, {}",
        spec.oracle_samples,
        spec.trials,
        worst,
        if passed { "pass" } else { "FAIL" }
    );
    Ok((
        ResultsDoc::OracleCompare {
            worst_relative_margin: worst,
            passed,
            comparisons,
        },
        None,
        seeds,
        Some(passed),
        summary,
    ))
}

fn run_single_eval(spec: &ExperimentSpec) -> Result<ModeOutput> {
    let seed = derive_seed(spec.master_seed, seed_stream::CHANNEL, 0);
    let instance = generate_instance(spec.topology, seed, ChannelModel::Rayleigh)?;
    // maximum-ratio space-division set: equal power across users, no common
    let share = (spec.optimizer.p_max / spec.topology.k as f64).sqrt();
    let w: Vec<CVector> = instance
        .h()
        .iter()
        .map(|h| {
            let norm = h.norm();
            if norm == 0.0 {
                CVector::zeros(spec.topology.m)
            } else {
                h * Complex64::new(share / norm, 0.0)
            }
        })
        .collect();
    let beamformers = BeamformerSet::new(CVector::zeros(spec.topology.m), w, spec.optimizer.p_max)?;
    let metrics = compute_metrics(&instance, &beamformers, &spec.profile_base)?;
    let csv = metrics.to_csv();
    let summary = format!(
        "single eval on seed {seed}: r_total = {:.6} bits/s/Hz over {} users",
        metrics.r_total, spec.topology.k
    );
    Ok((
        ResultsDoc::SingleEval {
            beamformers,
            metrics,
        },
        Some(csv),
        vec![seed],
        None,
        summary,
    ))
}
