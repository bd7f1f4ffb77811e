//! Instance-by-instance certification of the degeneration argument, plus
//! residual-interference sweeps demonstrating the limit behavior.
//!
//! The argument being certified: take any feasible beamformer set, replace
//! its common beamformer by zero, and compare. The construction stays
//! feasible (it only sheds power), the aggregate Gram matrix can only
//! shrink in the Loewner order, every distortion floor can only shrink, and
//! every private SINR weakly improves, strictly for every user the common
//! stream actually reaches. A
//! [`DegenerationCertificate`] records each of those inequalities for one
//! instance; a [`SweepResult`] shows the optimizer's rate-splitting
//! solution collapsing onto the space-division one as `delta_sic → 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_instance, ChannelInstance, ChannelModel, Topology};
use crate::link::{
    aggregate_gram, compute_metrics, phi_c, sinr_private, BeamformerSet, ImpairmentProfile,
    POWER_FEASIBILITY_TOL,
};
use crate::opt::{optimize_rsma, optimize_sdma, refine_from, OptimizerConfig};
use crate::{derive_seed, seed_stream, CVector, Error, Result};

/// Loewner-order slack: min eigenvalue of the Gram difference may dip this
/// far below zero, relative to the trace of the full Gram matrix.
pub const GRAM_ORDER_TOL: f64 = 1e-10;
/// Floor-ordering slack, relative to the full-set floor.
pub const FLOOR_ORDER_TOL: f64 = 1e-10;
/// Private-SINR dominance slack, relative to the full-set SINR.
pub const SINR_DOMINANCE_TOL: f64 = 1e-12;
/// Scale-invariant threshold on `|h_k^H w_c|²` deciding whether the common
/// stream reaches user `k`.
pub const STRICT_LEAK_TOL: f64 = 1e-12;
/// A passing sweep must spend at most this fraction of the budget on the
/// common stream at the `delta_sic = 1` endpoint.
pub const COMMON_POWER_LIMIT: f64 = 0.02;
/// A passing sweep must show a rate gap this anticorrelated with
/// `delta_sic` (Spearman rank correlation).
pub const GAP_TREND_SPEARMAN_MAX: f64 = -0.8;

/// Returns the set with the common beamformer zeroed and the private
/// beamformers copied unchanged. Total power can only decrease.
pub fn zero_common(b: &BeamformerSet) -> BeamformerSet {
    BeamformerSet::new_unchecked(
        CVector::zeros(b.antennas()),
        b.w().to_vec(),
        b.p_max(),
    )
}

/// Outcome of certifying one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateVerdict {
    /// Every inequality held, with strict SINR improvement for every user
    /// the common stream reaches.
    Certified,
    /// The common beamformer is nonzero but lies in the nullspace of every
    /// user channel, so no strict improvement is available.
    DegenerateNullspace,
    /// Some inequality failed beyond tolerance.
    Violated,
}

/// Machine-checkable record of the zero-common comparison on one instance.
///
/// Starred quantities refer to the original beamformer set, tilde
/// quantities to its zero-common counterpart. Construction never fails on a
/// violated inequality; violations are reported through the verdict so
/// property tests can shrink counterexamples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerationCertificate {
    /// Original set satisfies the power budget.
    pub power_feasible: bool,
    /// Min eigenvalue of `A* - Ã` (analytically `A* - Ã = w_c w_c^H ⪰ 0`).
    pub gram_ordering_min_eig: f64,
    /// Per-user floor margins `Φ*_c,k - Φ̃_c,k` (analytically ≥ 0).
    pub floor_ordering_margins: Vec<f64>,
    /// Per-user SINR improvements `γ̃_p,k - γ*_p,k` (analytically ≥ 0).
    pub sinr_deltas: Vec<f64>,
    /// Users the common stream reaches: `|h_k^H w_c|²` above the
    /// scale-invariant threshold.
    pub strict_users: Vec<usize>,
    pub verdict: CertificateVerdict,
}

/// Certifies the zero-common comparison for one instance and beamformer
/// set. Meant to be called with the profile at `delta_sic = 1`, where the
/// degeneration argument lives; the inequalities it checks hold for any
/// `delta_sic`.
pub fn certify_instance(
    instance: &ChannelInstance,
    b_star: &BeamformerSet,
    profile: &ImpairmentProfile,
) -> Result<DegenerationCertificate> {
    let t = instance.topology();
    if b_star.antennas() != t.m || b_star.users() != t.k || profile.users() != t.k {
        return Err(Error::DimensionMismatch {
            operand: "b_star",
            expected: format!("{} antennas / {} users", t.m, t.k),
            actual: format!("{} antennas / {} users", b_star.antennas(), b_star.users()),
        });
    }

    let power_feasible =
        b_star.total_power() <= b_star.p_max() * (1.0 + POWER_FEASIBILITY_TOL);

    let b_tilde = zero_common(b_star);
    let a_star = aggregate_gram(b_star);
    let a_tilde = aggregate_gram(&b_tilde);
    let diff = &a_star - &a_tilde;
    let trace_star: f64 = (0..t.m).map(|i| a_star[(i, i)].re).sum();
    let eig = nalgebra::SymmetricEigen::new(diff);
    let gram_ordering_min_eig = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);

    let mut floor_ordering_margins = Vec::with_capacity(t.k);
    let mut sinr_deltas = Vec::with_capacity(t.k);
    let mut strict_users = Vec::new();
    let mut phi_stars = Vec::with_capacity(t.k);
    let mut gamma_stars = Vec::with_capacity(t.k);

    let wc_norm_sq = b_star.w_c().norm_squared();
    for k in 0..t.k {
        let h = instance.user_channel(k);
        let phi_star = phi_c(h, &a_star, profile, k);
        let phi_tilde = phi_c(h, &a_tilde, profile, k);
        floor_ordering_margins.push(phi_star - phi_tilde);
        phi_stars.push(phi_star);

        let gamma_star = sinr_private(h, b_star, profile, k);
        let gamma_tilde = sinr_private(h, &b_tilde, profile, k);
        sinr_deltas.push(gamma_tilde - gamma_star);
        gamma_stars.push(gamma_star);

        let leak = h.dotc(b_star.w_c()).norm_sqr();
        if leak > STRICT_LEAK_TOL * h.norm_squared() * wc_norm_sq {
            strict_users.push(k);
        }
    }

    let inequalities_hold = power_feasible
        && gram_ordering_min_eig >= -GRAM_ORDER_TOL * trace_star
        && floor_ordering_margins
            .iter()
            .zip(&phi_stars)
            .all(|(margin, phi)| *margin >= -FLOOR_ORDER_TOL * phi)
        && sinr_deltas
            .iter()
            .zip(&gamma_stars)
            .all(|(delta, gamma)| *delta >= -SINR_DOMINANCE_TOL * gamma)
        && strict_users.iter().all(|&k| sinr_deltas[k] > 0.0);

    let verdict = if !inequalities_hold {
        CertificateVerdict::Violated
    } else if strict_users.is_empty() && wc_norm_sq > 0.0 {
        CertificateVerdict::DegenerateNullspace
    } else {
        CertificateVerdict::Certified
    };

    Ok(DegenerationCertificate {
        power_feasible,
        gram_ordering_min_eig,
        floor_ordering_margins,
        sinr_deltas,
        strict_users,
        verdict,
    })
}

/// Aggregated rates from optimizing both transmission structures over a
/// grid of residual-interference coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub delta_grid: Vec<f64>,
    /// Per-grid-point mean of the optimized rate-splitting sum rate.
    pub rsma_rate_mean: Vec<f64>,
    /// Per-grid-point sample standard deviation of the same.
    pub rsma_rate_std: Vec<f64>,
    /// Space-division sum rate statistics (independent of `delta_sic`).
    pub sdma_rate_mean: f64,
    pub sdma_rate_std: f64,
    /// Per-grid-point mean of `‖w_c‖² / p_max` at the rate-splitting optimum.
    pub common_power_fraction: Vec<f64>,
    /// Channel seed of each trial, in trial order.
    pub trial_seeds: Vec<u64>,
    /// `(trial, delta_index)` cells where the rate-splitting optimizer hit
    /// its iteration cap without converging.
    pub nonconverged_cells: Vec<(usize, usize)>,
    /// Trials where the space-division optimizer did not converge.
    pub sdma_nonconverged_trials: Vec<usize>,
}

impl SweepResult {
    /// Plot-ready CSV, one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("delta,rsma_rate_mean,rsma_rate_std,sdma_rate_mean,common_power_frac\n");
        for (i, delta) in self.delta_grid.iter().enumerate() {
            out.push_str(&format!(
                "{delta},{},{},{},{}\n",
                self.rsma_rate_mean[i],
                self.rsma_rate_std[i],
                self.sdma_rate_mean,
                self.common_power_fraction[i]
            ));
        }
        out
    }
}

/// Default grid for sweeps: dense near zero (the 4%–10% band typical of
/// deployed cancellers) plus the upper range and the endpoint.
pub fn default_delta_grid() -> Vec<f64> {
    vec![0.0, 0.04, 0.10, 0.25, 0.5, 0.75, 0.9, 1.0]
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let mean = sum / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let mut ss = 0.0;
    for v in values {
        let d = v - mean;
        ss += d * d;
    }
    (mean, (ss / (n - 1) as f64).sqrt())
}

struct TrialOutcome {
    channel_seed: u64,
    sdma_rate: f64,
    sdma_converged: bool,
    // per delta: (r_total, common fraction, converged)
    cells: Vec<(f64, f64, bool)>,
}

/// Optimizes both structures on `trials` seeded channel instances for every
/// grid point and aggregates the rates.
///
/// Per trial, the rate-splitting cell takes the better of the multistart
/// optimizer and an ascent polished from that trial's space-division
/// solution; the latter point is feasible for rate splitting, so the
/// recorded rate can never fall below the space-division one by more than
/// solver tolerance. Fully deterministic for a fixed master seed, and
/// independent of thread count: every seed is a pure function of
/// `(master_seed, trial, role)`.
pub fn delta_sweep(
    topology: Topology,
    profile_base: &ImpairmentProfile,
    delta_grid: &[f64],
    trials: usize,
    config: &OptimizerConfig,
    master_seed: u64,
) -> Result<SweepResult> {
    topology.validate()?;
    config.validate()?;
    if profile_base.users() != topology.k {
        return Err(Error::DimensionMismatch {
            operand: "profile.sigma_k_sq",
            expected: format!("{} users", topology.k),
            actual: format!("{}", profile_base.users()),
        });
    }
    if delta_grid.is_empty() || delta_grid.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(Error::InvalidParameter {
            field: "delta_grid",
            constraint: "must be nonempty with every value in [0, 1]".into(),
        });
    }
    if trials < 1 {
        return Err(Error::InvalidParameter {
            field: "trials",
            constraint: "must be >= 1".into(),
        });
    }

    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<TrialOutcome> {
            let channel_seed = derive_seed(master_seed, seed_stream::CHANNEL, trial as u64);
            let instance = generate_instance(topology, channel_seed, ChannelModel::Rayleigh)?;

            let sdma_config = OptimizerConfig {
                seed: derive_seed(master_seed, seed_stream::OPTIMIZER, 2 * trial as u64),
                ..config.clone()
            };
            let sdma_profile = profile_base.with_delta(0.0)?;
            let sdma = optimize_sdma(&instance, &sdma_profile, &sdma_config)?;
            let sdma_rate = compute_metrics(&instance, &sdma.best, &sdma_profile)?.r_total;

            let rsma_config = OptimizerConfig {
                seed: derive_seed(master_seed, seed_stream::OPTIMIZER, 2 * trial as u64 + 1),
                ..config.clone()
            };
            let cells = delta_grid
                .iter()
                .map(|&delta| -> Result<(f64, f64, bool)> {
                    let profile = profile_base.with_delta(delta)?;
                    let multistart = optimize_rsma(&instance, &profile, &rsma_config)?;
                    let polished = refine_from(&instance, &profile, &rsma_config, &sdma.best)?;
                    let cell = if polished.objective > multistart.objective {
                        polished
                    } else {
                        multistart
                    };
                    let rate = compute_metrics(&instance, &cell.best, &profile)?.r_total;
                    Ok((rate, cell.best.common_power_fraction(), cell.converged))
                })
                .collect::<Result<Vec<_>>>()?;

            Ok(TrialOutcome {
                channel_seed,
                sdma_rate,
                sdma_converged: sdma.converged,
                cells,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // deterministic fold in (trial, delta) order
    let sdma_rates: Vec<f64> = outcomes.iter().map(|o| o.sdma_rate).collect();
    let (sdma_rate_mean, sdma_rate_std) = mean_and_std(&sdma_rates);
    let mut rsma_rate_mean = Vec::with_capacity(delta_grid.len());
    let mut rsma_rate_std = Vec::with_capacity(delta_grid.len());
    let mut common_power_fraction = Vec::with_capacity(delta_grid.len());
    let mut nonconverged_cells = Vec::new();
    for (i, _) in delta_grid.iter().enumerate() {
        let rates: Vec<f64> = outcomes.iter().map(|o| o.cells[i].0).collect();
        let fractions: Vec<f64> = outcomes.iter().map(|o| o.cells[i].1).collect();
        let (mean, std) = mean_and_std(&rates);
        rsma_rate_mean.push(mean);
        rsma_rate_std.push(std);
        common_power_fraction.push(mean_and_std(&fractions).0);
        for (t, o) in outcomes.iter().enumerate() {
            if !o.cells[i].2 {
                nonconverged_cells.push((t, i));
            }
        }
    }
    nonconverged_cells.sort_unstable();

    Ok(SweepResult {
        delta_grid: delta_grid.to_vec(),
        rsma_rate_mean,
        rsma_rate_std,
        sdma_rate_mean,
        sdma_rate_std,
        common_power_fraction,
        trial_seeds: outcomes.iter().map(|o| o.channel_seed).collect(),
        nonconverged_cells,
        sdma_nonconverged_trials: outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| !o.sdma_converged)
            .map(|(t, _)| t)
            .collect(),
    })
}

/// Pass/fail report for the degeneration claim on one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerationReport {
    pub passed: bool,
    pub rel_tol: f64,
    /// `|mean rsma - mean sdma| / mean sdma` at `delta_sic = 1`.
    pub endpoint_gap_rel: f64,
    pub endpoint_ok: bool,
    pub common_power_fraction_at_endpoint: f64,
    pub common_power_ok: bool,
    /// Spearman rank correlation of the rate gap against `delta_sic`,
    /// taken over the grid points whose gap exceeds the resolution floor
    /// `rel_tol · sdma_rate_mean`; absent when fewer than two points do
    /// (a gap flat at the verdict's own resolution has no trend to test).
    pub spearman_gap_vs_delta: Option<f64>,
    pub trend_ok: bool,
}

/// Checks the three degeneration conditions on a sweep containing the
/// `delta_sic = 1` endpoint: endpoint agreement with space division within
/// `rel_tol`, common power starved at the endpoint, and a rate gap that
/// shrinks with `delta_sic`.
pub fn degeneration_verdict(sweep: &SweepResult, rel_tol: f64) -> Result<DegenerationReport> {
    let endpoint = sweep
        .delta_grid
        .iter()
        .position(|d| (d - 1.0).abs() <= 1e-12)
        .ok_or_else(|| Error::InvalidParameter {
            field: "delta_grid",
            constraint: "must contain delta = 1 for the endpoint verdict".into(),
        })?;

    let endpoint_gap_rel = (sweep.rsma_rate_mean[endpoint] - sweep.sdma_rate_mean).abs()
        / sweep.sdma_rate_mean.abs().max(1e-300);
    let endpoint_ok = endpoint_gap_rel <= rel_tol;

    let common_power_fraction_at_endpoint = sweep.common_power_fraction[endpoint];
    let common_power_ok = common_power_fraction_at_endpoint <= COMMON_POWER_LIMIT;

    // Trend: the gap must be nonincreasing in delta up to optimizer noise.
    // Gap values inside the verdict's own equality resolution
    // (rel_tol · sdma mean) are indistinguishable from "already degenerate"
    // and carry no rank information, so the correlation is taken over the
    // grid points with signal. A flat sweep passes vacuously.
    let gaps: Vec<f64> = sweep
        .rsma_rate_mean
        .iter()
        .map(|r| r - sweep.sdma_rate_mean)
        .collect();
    let noise_floor = rel_tol * sweep.sdma_rate_mean.abs();
    let significant: Vec<usize> = (0..gaps.len())
        .filter(|&i| gaps[i].abs() > noise_floor)
        .collect();
    let (spearman_gap_vs_delta, trend_ok) = if significant.len() < 2 {
        (None, true)
    } else {
        let sig_gaps: Vec<f64> = significant.iter().map(|&i| gaps[i]).collect();
        let sig_deltas: Vec<f64> = significant.iter().map(|&i| sweep.delta_grid[i]).collect();
        let rho = spearman(&sig_gaps, &sig_deltas);
        (Some(rho), rho <= GAP_TREND_SPEARMAN_MAX)
    };

    Ok(DegenerationReport {
        passed: endpoint_ok && common_power_ok && trend_ok,
        rel_tol,
        endpoint_gap_rel,
        endpoint_ok,
        common_power_fraction_at_endpoint,
        common_power_ok,
        spearman_gap_vs_delta,
        trend_ok,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}
