//! Beamformer optimization under the total-power constraint, plus
//! brute-force oracles for tiny instances.
//!
//! The solver is projected gradient ascent over the real and imaginary
//! parts of every beamformer entry, with Armijo backtracking along the
//! projection arc. It is deliberately simple: deterministic for a fixed
//! seed, and checkable coordinate-by-coordinate against central finite
//! differences. Restarts are independent and the best one wins, with ties
//! broken toward the lowest restart index so results never depend on
//! evaluation order.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelInstance;
use crate::link::{compute_metrics, BeamformerSet, ImpairmentProfile};
use crate::{derive_seed, seed_stream, CVector, Error, Result};

/// Objective maximized over the beamformer set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Utility {
    /// Sum rate including the min-rule common rate: `r_total`.
    #[default]
    SumRateTotal,
    /// Private rates only: `Σ_k log2(1 + gamma_p_k)`.
    SumRatePrivateOnly,
    /// Worst private SINR: `min_k gamma_p_k`.
    MinPrivateSinr,
}

/// Solver knobs. All runs with the same config, instance, and profile are
/// bit-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub utility: Utility,
    /// Number of random feasible starts, in addition to the matched-filter
    /// start that is always included.
    pub restarts: usize,
    pub max_iters: usize,
    /// Convergence: relative objective improvement below this for 10
    /// consecutive iterations.
    pub rel_tol: f64,
    /// Backtracking shrink factor in (0, 1).
    pub armijo_beta: f64,
    /// Sufficient-increase coefficient.
    pub armijo_c: f64,
    pub seed: u64,
    /// Total transmit power budget shared by all streams.
    pub p_max: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            utility: Utility::SumRateTotal,
            restarts: 8,
            max_iters: 2000,
            rel_tol: 1e-6,
            armijo_beta: 0.5,
            armijo_c: 1e-4,
            seed: 0,
            p_max: 100.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts < 1 {
            return Err(Error::InvalidParameter {
                field: "optimizer.restarts",
                constraint: "must be >= 1".into(),
            });
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter {
                field: "optimizer.max_iters",
                constraint: "must be >= 1".into(),
            });
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter {
                field: "optimizer.rel_tol",
                constraint: format!("must be > 0, got {}", self.rel_tol),
            });
        }
        if !(self.armijo_beta > 0.0 && self.armijo_beta < 1.0) {
            return Err(Error::InvalidParameter {
                field: "optimizer.armijo_beta",
                constraint: format!("must lie in (0, 1), got {}", self.armijo_beta),
            });
        }
        if !(self.armijo_c.is_finite() && self.armijo_c > 0.0) {
            return Err(Error::InvalidParameter {
                field: "optimizer.armijo_c",
                constraint: format!("must be > 0, got {}", self.armijo_c),
            });
        }
        if !(self.p_max.is_finite() && self.p_max > 0.0) {
            return Err(Error::InvalidParameter {
                field: "optimizer.p_max",
                constraint: format!("must be finite and > 0, got {}", self.p_max),
            });
        }
        Ok(())
    }
}

/// Outcome of one optimization call: the winning restart's final point,
/// objective, and iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: BeamformerSet,
    pub objective: f64,
    /// `(iteration, objective)` pairs, starting at iteration 0.
    pub trace: Vec<(usize, f64)>,
    pub converged: bool,
    /// Index of the winning start: `0..restarts` are the random starts,
    /// `restarts` is the matched-filter start.
    pub restart_index: usize,
}

impl OptimizationResult {
    /// Copy with the trace thinned to every `stride`-th iteration (the
    /// final entry is always kept), for disk economy in artifacts.
    pub fn with_thinned_trace(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let last = self.trace.len().saturating_sub(1);
        let trace = self
            .trace
            .iter()
            .enumerate()
            .filter(|(i, (iter, _))| iter % stride == 0 || *i == last)
            .map(|(_, pair)| *pair)
            .collect();
        Self {
            trace,
            best: self.best.clone(),
            ..*self
        }
    }
}

/// Ascent direction with the same shape as a [`BeamformerSet`]: one complex
/// vector per stream, representing the gradient with respect to the real
/// and imaginary parts of every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerGradient {
    pub w_c: CVector,
    pub w: Vec<CVector>,
}

impl BeamformerGradient {
    pub fn norm_squared(&self) -> f64 {
        let mut total = self.w_c.norm_squared();
        for g in &self.w {
            total += g.norm_squared();
        }
        total
    }

    fn zeros(m: usize, k: usize) -> Self {
        Self {
            w_c: CVector::zeros(m),
            w: (0..k).map(|_| CVector::zeros(m)).collect(),
        }
    }
}

/// Projects onto the total-power ball: identity when feasible, otherwise a
/// radial rescale of every beamformer by `sqrt(p_max / total_power)`.
pub fn project_power(b: &BeamformerSet, p_max: f64) -> BeamformerSet {
    let total = b.total_power();
    if total <= p_max {
        return BeamformerSet::new_unchecked(b.w_c().clone(), b.w().to_vec(), p_max);
    }
    let scale = Complex64::new((p_max / total).sqrt(), 0.0);
    BeamformerSet::new_unchecked(
        b.w_c() * scale,
        b.w().iter().map(|wk| wk * scale).collect(),
        p_max,
    )
}

/// Evaluates the chosen utility at a beamformer set.
pub fn utility_value(
    instance: &ChannelInstance,
    b: &BeamformerSet,
    profile: &ImpairmentProfile,
    utility: Utility,
) -> f64 {
    let metrics = compute_metrics(instance, b, profile)
        .expect("utility evaluation requires dimensionally consistent inputs");
    match utility {
        Utility::SumRateTotal => metrics.r_total,
        Utility::SumRatePrivateOnly => metrics.per_user.iter().map(|u| u.r_p_k).sum(),
        Utility::MinPrivateSinr => metrics
            .per_user
            .iter()
            .map(|u| u.gamma_p)
            .fold(f64::INFINITY, f64::min),
    }
}

/// Analytic ascent gradient of the utility with respect to the real and
/// imaginary parts of every beamformer entry.
///
/// Sum-rate utilities are smooth; for the min-type terms (the common rate
/// inside the total sum rate, and the min private SINR) the gradient of the
/// active minimal term is used, ties broken toward the lowest user index.
pub fn utility_gradient(
    instance: &ChannelInstance,
    b: &BeamformerSet,
    profile: &ImpairmentProfile,
    utility: Utility,
) -> BeamformerGradient {
    let k_users = b.users();
    let m = b.antennas();
    let m_t = profile.m_t;
    let m_r = profile.m_r;
    let mt1mr = m_t * (1.0 + m_r);
    let delta_sq = profile.delta_sic * profile.delta_sic;
    let ln2 = std::f64::consts::LN_2;

    // Per-user link quantities, mirroring the metric kernel.
    struct UserState {
        c_common: Complex64,
        c: Vec<Complex64>,
        p_common: f64,
        p: Vec<f64>,
        d: Vec<f64>,
        denom_p: f64,
        denom_c: f64,
        gamma_p: f64,
        gamma_c: f64,
    }

    let states: Vec<UserState> = (0..k_users)
        .map(|k| {
            let h = instance.user_channel(k);
            let c_common = h.dotc(b.w_c());
            let c: Vec<Complex64> = b.w().iter().map(|wi| h.dotc(wi)).collect();
            let p_common = c_common.norm_sqr();
            let p: Vec<f64> = c.iter().map(|ci| ci.norm_sqr()).collect();
            let d: Vec<f64> = h.iter().map(|hm| hm.norm_sqr()).collect();
            let sum_all: f64 = p.iter().sum();
            let interference: f64 = p
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, v)| v)
                .sum();
            let mut quad_diag = 0.0;
            for (idx, dm) in d.iter().enumerate() {
                let mut a_mm = b.w_c()[idx].norm_sqr();
                for wi in b.w() {
                    a_mm += wi[idx].norm_sqr();
                }
                quad_diag += a_mm * dm;
            }
            let phi_c =
                m_r * (p_common + sum_all) + mt1mr * quad_diag + profile.sigma_sq_eff(k);
            let denom_p = interference + delta_sq * p_common + phi_c;
            let denom_c = sum_all + phi_c;
            let gamma_p = p[k] / denom_p;
            let gamma_c = p_common / denom_c;
            UserState {
                c_common,
                c,
                p_common,
                p,
                d,
                denom_p,
                denom_c,
                gamma_p,
                gamma_c,
            }
        })
        .collect();

    let mut grad = BeamformerGradient::zeros(m, k_users);

    // d/dw̄ of phi-like denominator pieces: `coeff·c·h + mt1mr·(d ∘ w)`.
    let add_scaled = |acc: &mut CVector, h: &CVector, c: Complex64, coeff: f64, d: &[f64], w: &CVector, shared: f64| {
        // acc += shared · (coeff·c·h + mt1mr·(d∘w))
        for idx in 0..acc.len() {
            acc[idx] += Complex64::new(shared, 0.0)
                * (Complex64::new(coeff, 0.0) * c * h[idx]
                    + Complex64::new(mt1mr * d[idx], 0.0) * w[idx]);
        }
    };

    // Accumulates weight · dγ_p,k/dw̄ into the gradient.
    let add_private_sinr_grad = |grad: &mut BeamformerGradient, k: usize, weight: f64| {
        let s = &states[k];
        let h = instance.user_channel(k);
        let inv_d = 1.0 / s.denom_p;
        let inv_d2 = inv_d * inv_d;
        // own beamformer: numerator term plus its share of the floor
        for idx in 0..m {
            grad.w[k][idx] += Complex64::new(weight * s.denom_p * inv_d2, 0.0)
                * (s.c[k] * h[idx]);
        }
        add_scaled(
            &mut grad.w[k],
            h,
            s.c[k],
            m_r,
            &s.d,
            &b.w()[k],
            -weight * s.p[k] * inv_d2,
        );
        // other users: interference plus floor
        for j in 0..k_users {
            if j == k {
                continue;
            }
            add_scaled(
                &mut grad.w[j],
                h,
                s.c[j],
                1.0 + m_r,
                &s.d,
                &b.w()[j],
                -weight * s.p[k] * inv_d2,
            );
        }
        // common beamformer: residual leak plus floor
        add_scaled(
            &mut grad.w_c,
            h,
            s.c_common,
            delta_sq + m_r,
            &s.d,
            b.w_c(),
            -weight * s.p[k] * inv_d2,
        );
    };

    // Accumulates weight · dγ_c,k/dw̄ into the gradient.
    let add_common_sinr_grad = |grad: &mut BeamformerGradient, k: usize, weight: f64| {
        let s = &states[k];
        let h = instance.user_channel(k);
        let inv_e = 1.0 / s.denom_c;
        let inv_e2 = inv_e * inv_e;
        for idx in 0..m {
            grad.w_c[idx] += Complex64::new(weight * s.denom_c * inv_e2, 0.0)
                * (s.c_common * h[idx]);
        }
        add_scaled(
            &mut grad.w_c,
            h,
            s.c_common,
            m_r,
            &s.d,
            b.w_c(),
            -weight * s.p_common * inv_e2,
        );
        for j in 0..k_users {
            add_scaled(
                &mut grad.w[j],
                h,
                s.c[j],
                1.0 + m_r,
                &s.d,
                &b.w()[j],
                -weight * s.p_common * inv_e2,
            );
        }
    };

    match utility {
        Utility::SumRatePrivateOnly => {
            for (k, state) in states.iter().enumerate() {
                let weight = 1.0 / ((1.0 + state.gamma_p) * ln2);
                add_private_sinr_grad(&mut grad, k, weight);
            }
        }
        Utility::SumRateTotal => {
            for (k, state) in states.iter().enumerate() {
                let weight = 1.0 / ((1.0 + state.gamma_p) * ln2);
                add_private_sinr_grad(&mut grad, k, weight);
            }
            // min-rule common rate: subgradient of the active user
            let active = argmin(states.iter().map(|s| s.gamma_c));
            let weight = 1.0 / ((1.0 + states[active].gamma_c) * ln2);
            add_common_sinr_grad(&mut grad, active, weight);
        }
        Utility::MinPrivateSinr => {
            let active = argmin(states.iter().map(|s| s.gamma_p));
            add_private_sinr_grad(&mut grad, active, 1.0);
        }
    }

    // Wirtinger-to-real convention: gradient over (Re, Im) coordinates is
    // twice the conjugate-coordinate derivative.
    grad.w_c *= Complex64::new(2.0, 0.0);
    for g in &mut grad.w {
        *g *= Complex64::new(2.0, 0.0);
    }
    grad
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, v) in values.enumerate() {
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

fn step(b: &BeamformerSet, g: &BeamformerGradient, t: f64) -> BeamformerSet {
    let t = Complex64::new(t, 0.0);
    BeamformerSet::new_unchecked(
        b.w_c() + &g.w_c * t,
        b.w()
            .iter()
            .zip(&g.w)
            .map(|(wk, gk)| wk + gk * t)
            .collect(),
        b.p_max(),
    )
}

fn distance_squared(a: &BeamformerSet, b: &BeamformerSet) -> f64 {
    let mut total = (a.w_c() - b.w_c()).norm_squared();
    for (x, y) in a.w().iter().zip(b.w()) {
        total += (x - y).norm_squared();
    }
    total
}

/// Draws one feasible beamformer set: independent complex-Gaussian
/// directions, power fractions uniform on the simplex over the streams,
/// total power equal to `p_max`.
fn sample_feasible(
    rng: &mut ChaCha8Rng,
    m: usize,
    k_users: usize,
    p_max: f64,
    include_common: bool,
) -> BeamformerSet {
    let streams = k_users + usize::from(include_common);
    // uniform simplex via normalized unit exponentials
    let exps: Vec<f64> = (0..streams)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let total: f64 = exps.iter().sum();
    let alphas: Vec<f64> = if total > 0.0 {
        exps.iter().map(|e| e / total).collect()
    } else {
        vec![1.0 / streams as f64; streams]
    };

    let mut draw_direction = |power: f64| -> CVector {
        let v = DVector::from_fn(m, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im)
        });
        let norm = v.norm();
        if norm == 0.0 {
            return CVector::zeros(m);
        }
        v * Complex64::new(power.sqrt() / norm, 0.0)
    };

    let (w_c, private_alphas) = if include_common {
        (draw_direction(alphas[0] * p_max), &alphas[1..])
    } else {
        (CVector::zeros(m), &alphas[..])
    };
    let w = private_alphas
        .iter()
        .map(|a| draw_direction(a * p_max))
        .collect();
    BeamformerSet::new_unchecked(w_c, w, p_max)
}

/// Seeded convenience wrapper around the feasible-set sampler (common
/// stream included), used for random starting points and test corpora.
pub fn random_feasible_set(m: usize, k_users: usize, p_max: f64, seed: u64) -> BeamformerSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_feasible(&mut rng, m, k_users, p_max, true)
}

/// Matched-filter start: each private beamformer along its user's channel,
/// the common one along the average channel direction, power split equally
/// across the streams present.
fn matched_filter_start(
    instance: &ChannelInstance,
    p_max: f64,
    include_common: bool,
) -> BeamformerSet {
    let m = instance.topology().m;
    let k_users = instance.topology().k;
    let streams = k_users + usize::from(include_common);
    let share = p_max / streams as f64;

    let along = |v: &CVector| -> CVector {
        let norm = v.norm();
        if norm == 0.0 {
            CVector::zeros(m)
        } else {
            v * Complex64::new(share.sqrt() / norm, 0.0)
        }
    };

    let w: Vec<CVector> = instance.h().iter().map(along).collect();
    let w_c = if include_common {
        let mut sum = CVector::zeros(m);
        for h in instance.h() {
            sum += h;
        }
        along(&(sum / Complex64::new(k_users as f64, 0.0)))
    } else {
        CVector::zeros(m)
    };
    BeamformerSet::new_unchecked(w_c, w, p_max)
}

struct AscentOutcome {
    best: BeamformerSet,
    objective: f64,
    trace: Vec<(usize, f64)>,
    converged: bool,
}

/// Projected gradient ascent with Armijo backtracking from one start.
///
/// Accepted steps strictly increase the objective, so the trace is
/// nondecreasing by construction. The run converges once the relative
/// improvement stays below `rel_tol` for 10 consecutive iterations.
fn ascend(
    instance: &ChannelInstance,
    profile: &ImpairmentProfile,
    config: &OptimizerConfig,
    pin_common: bool,
    start: BeamformerSet,
) -> AscentOutcome {
    const STALL_LIMIT: usize = 10;
    const MIN_STEP: f64 = 1e-20;

    let mut b = project_power(&start, config.p_max);
    let mut objective = utility_value(instance, &b, profile, config.utility);
    let mut trace = vec![(0usize, objective)];
    let mut stall = 0usize;
    let mut converged = false;

    for iter in 1..=config.max_iters {
        debug_assert!(
            b.total_power() <= config.p_max * (1.0 + crate::link::POWER_FEASIBILITY_TOL),
            "iterate left the feasible set: {} > {}",
            b.total_power(),
            config.p_max
        );
        let mut grad = utility_gradient(instance, &b, profile, config.utility);
        if pin_common {
            grad.w_c.fill(Complex64::new(0.0, 0.0));
        }
        if grad.norm_squared() == 0.0 {
            converged = true;
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t >= MIN_STEP {
            let candidate = project_power(&step(&b, &grad, t), config.p_max);
            let moved = distance_squared(&candidate, &b);
            if moved == 0.0 {
                break;
            }
            let candidate_obj = utility_value(instance, &candidate, profile, config.utility);
            if candidate_obj - objective >= (config.armijo_c / t) * moved {
                accepted = Some((candidate, candidate_obj));
                break;
            }
            t *= config.armijo_beta;
        }

        let improvement = match accepted {
            Some((candidate, candidate_obj)) => {
                let improvement = (candidate_obj - objective) / objective.abs().max(1e-300);
                b = candidate;
                objective = candidate_obj;
                improvement
            }
            None => 0.0,
        };
        trace.push((iter, objective));

        if improvement < config.rel_tol {
            stall += 1;
            if stall >= STALL_LIMIT {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
    }

    AscentOutcome {
        best: b,
        objective,
        trace,
        converged,
    }
}

fn run_multistart(
    instance: &ChannelInstance,
    profile: &ImpairmentProfile,
    config: &OptimizerConfig,
    pin_common: bool,
) -> Result<OptimizationResult> {
    config.validate()?;
    let t = instance.topology();
    if profile.users() != t.k {
        return Err(Error::DimensionMismatch {
            operand: "profile.sigma_k_sq",
            expected: format!("{} users", t.k),
            actual: format!("{}", profile.users()),
        });
    }

    let starts: Vec<BeamformerSet> = (0..config.restarts)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed,
                seed_stream::RESTART,
                r as u64,
            ));
            sample_feasible(&mut rng, t.m, t.k, config.p_max, !pin_common)
        })
        .chain(std::iter::once(matched_filter_start(
            instance,
            config.p_max,
            !pin_common,
        )))
        .collect();

    let mut best: Option<(usize, AscentOutcome)> = None;
    for (idx, start) in starts.into_iter().enumerate() {
        let outcome = ascend(instance, profile, config, pin_common, start);
        let better = match &best {
            None => true,
            Some((_, current)) => outcome.objective > current.objective,
        };
        if better {
            best = Some((idx, outcome));
        }
    }
    let (restart_index, outcome) = best.expect("at least one start");
    Ok(OptimizationResult {
        best: outcome.best,
        objective: outcome.objective,
        trace: outcome.trace,
        converged: outcome.converged,
        restart_index,
    })
}

/// Maximizes the configured utility over the full rate-splitting beamformer
/// set (common plus private streams) under the power budget.
pub fn optimize_rsma(
    instance: &ChannelInstance,
    profile: &ImpairmentProfile,
    config: &OptimizerConfig,
) -> Result<OptimizationResult> {
    run_multistart(instance, profile, config, false)
}

/// Same engine with the common stream removed from the search space: the
/// common beamformer is the zero vector in every start, every gradient, and
/// the returned solution.
pub fn optimize_sdma(
    instance: &ChannelInstance,
    profile: &ImpairmentProfile,
    config: &OptimizerConfig,
) -> Result<OptimizationResult> {
    run_multistart(instance, profile, config, true)
}

/// Single ascent from a caller-supplied start, common stream free. Useful
/// for polishing a known-good point (e.g. a space-division solution used as
/// a rate-splitting candidate).
pub fn refine_from(
    instance: &ChannelInstance,
    profile: &ImpairmentProfile,
    config: &OptimizerConfig,
    start: &BeamformerSet,
) -> Result<OptimizationResult> {
    config.validate()?;
    let outcome = ascend(instance, profile, config, false, start.clone());
    Ok(OptimizationResult {
        best: outcome.best,
        objective: outcome.objective,
        trace: outcome.trace,
        converged: outcome.converged,
        restart_index: 0,
    })
}

const ORACLE_CHUNK: usize = 4096;

/// Pure random search: draws `samples` feasible beamformer sets and returns
/// the best under `utility`.
///
/// Sample `i` is a pure function of `(seed, i)` regardless of thread count,
/// so a run with more samples extends a smaller run rather than reshuffling
/// it, and the best objective is monotone in the sample count.
pub fn random_search_oracle(
    instance: &ChannelInstance,
    profile: &ImpairmentProfile,
    utility: Utility,
    samples: usize,
    seed: u64,
    p_max: f64,
) -> BeamformerSet {
    assert!(samples >= 1, "random_search_oracle needs samples >= 1");
    let t = instance.topology();
    let chunk_count = samples.div_ceil(ORACLE_CHUNK);
    let best = (0..chunk_count)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                seed_stream::ORACLE,
                chunk as u64,
            ));
            let lo = chunk * ORACLE_CHUNK;
            let hi = ((chunk + 1) * ORACLE_CHUNK).min(samples);
            let mut best: Option<(f64, usize, BeamformerSet)> = None;
            for i in lo..hi {
                let candidate = sample_feasible(&mut rng, t.m, t.k, p_max, true);
                let value = utility_value(instance, &candidate, profile, utility);
                let better = match &best {
                    None => true,
                    Some((v, _, _)) => value > *v,
                };
                if better {
                    best = Some((value, i, candidate));
                }
            }
            best
        })
        .reduce(
            || None,
            |a, b| match (a, b) {
                (None, x) => x,
                (x, None) => x,
                (Some(x), Some(y)) => {
                    // strictly-better wins; ties go to the lower sample index
                    if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) {
                        Some(y)
                    } else {
                        Some(x)
                    }
                }
            },
        );
    best.expect("samples >= 1").2
}

/// Fixed unit-norm transmit directions for the common stream and each user.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDirections {
    pub common: CVector,
    pub private: Vec<CVector>,
}

impl SplitDirections {
    /// Maximum-ratio directions: each private direction along its user's
    /// channel, the common one along the normalized channel sum.
    pub fn mrt(instance: &ChannelInstance) -> Self {
        let m = instance.topology().m;
        let unit = |v: &CVector| -> CVector {
            let norm = v.norm();
            if norm == 0.0 {
                CVector::zeros(m)
            } else {
                v / Complex64::new(norm, 0.0)
            }
        };
        let private = instance.h().iter().map(&unit).collect();
        let mut sum = CVector::zeros(m);
        for h in instance.h() {
            sum += h;
        }
        Self {
            common: unit(&sum),
            private,
        }
    }
}

/// Exhaustive power-split search along fixed directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSplitResult {
    /// Winning fractions, ordered `[common, user 0, user 1, ..]`.
    pub best_alphas: Vec<f64>,
    pub best_objective: f64,
    /// The full objective surface: every grid node with its objective.
    pub surface: Vec<(Vec<f64>, f64)>,
}

/// Grids the power fractions `(α_c, α_1, .., α_K)` over the simplex with
/// `grid_points` levels per axis, evaluates the utility at
/// `w_s = sqrt(α_s · p_max) · direction_s`, and returns the argmax plus the
/// whole surface.
///
/// With `grid_points = 2` the grid is exactly the simplex vertices.
pub fn power_split_oracle(
    instance: &ChannelInstance,
    profile: &ImpairmentProfile,
    utility: Utility,
    directions: &SplitDirections,
    grid_points: usize,
    p_max: f64,
) -> PowerSplitResult {
    assert!(grid_points >= 2, "power_split_oracle needs grid_points >= 2");
    let k_users = directions.private.len();
    for (label, v) in std::iter::once(("common", &directions.common))
        .chain(directions.private.iter().map(|v| ("private", v)))
    {
        let norm = v.norm();
        assert!(
            norm == 0.0 || (norm - 1.0).abs() <= 1e-9,
            "{label} direction must be unit-norm, got {norm}"
        );
    }

    let units = grid_points - 1;
    let mut surface = Vec::new();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut composition = vec![0usize; k_users + 1];
    enumerate_compositions(units, 0, &mut composition, &mut |c| {
        let alphas: Vec<f64> = c.iter().map(|&u| u as f64 / units as f64).collect();
        let w_c = &directions.common * Complex64::new((alphas[0] * p_max).sqrt(), 0.0);
        let w: Vec<CVector> = directions
            .private
            .iter()
            .zip(&alphas[1..])
            .map(|(d, a)| d * Complex64::new((a * p_max).sqrt(), 0.0))
            .collect();
        let b = BeamformerSet::new_unchecked(w_c, w, p_max);
        let value = utility_value(instance, &b, profile, utility);
        let better = best.as_ref().is_none_or(|(_, v)| value > *v);
        if better {
            best = Some((alphas.clone(), value));
        }
        surface.push((alphas, value));
    });
    let (best_alphas, best_objective) = best.expect("grid is nonempty");
    PowerSplitResult {
        best_alphas,
        best_objective,
        surface,
    }
}

/// Visits every way of distributing `remaining` grid units over the
/// positions from `index` on, in lexicographic order.
fn enumerate_compositions(
    remaining: usize,
    index: usize,
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if index == current.len() - 1 {
        current[index] = remaining;
        visit(current);
        return;
    }
    for units in 0..=remaining {
        current[index] = units;
        enumerate_compositions(remaining - units, index + 1, current, visit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_instance, ChannelInstance, ChannelModel, Topology};
    use crate::CMatrix;

    fn re(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn test_profile(k: usize, delta: f64) -> ImpairmentProfile {
        ImpairmentProfile::new(0.05, 0.05, vec![1.0; k], delta).unwrap()
    }

    fn small_config(seed: u64, utility: Utility) -> OptimizerConfig {
        OptimizerConfig {
            utility,
            restarts: 4,
            max_iters: 600,
            seed,
            p_max: 10.0,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn projection_identity_when_feasible() {
        let b = random_feasible_set(3, 2, 4.0, 1);
        let scaled = BeamformerSet::new_unchecked(
            b.w_c() * re(0.5),
            b.w().iter().map(|w| w * re(0.5)).collect(),
            4.0,
        );
        let projected = project_power(&scaled, 4.0);
        assert_eq!(projected.w_c(), scaled.w_c());
        assert_eq!(projected.w(), scaled.w());
    }

    #[test]
    fn projection_scales_radially() {
        let b = random_feasible_set(3, 2, 4.0, 2);
        // inflate to 4x the budget: projection must halve every vector
        let inflated = BeamformerSet::new_unchecked(
            b.w_c() * re(2.0),
            b.w().iter().map(|w| w * re(2.0)).collect(),
            4.0,
        );
        let projected = project_power(&inflated, 4.0);
        assert!((projected.total_power() - 4.0).abs() <= 1e-12 * 4.0);
        for (a, b) in projected.w_c().iter().zip(b.w_c().iter()) {
            assert!((a - b).norm() <= 1e-12 * b.norm().max(1e-12));
        }
        // entry ratios preserved
        let r0 = projected.w()[0][0] / inflated.w()[0][0];
        let r1 = projected.w()[1][0] / inflated.w()[1][0];
        assert!((r0 - r1).norm() <= 1e-12);
    }

    fn fd_check(
        instance: &ChannelInstance,
        b: &BeamformerSet,
        profile: &ImpairmentProfile,
        utility: Utility,
        tol: f64,
    ) {
        let grad = utility_gradient(instance, b, profile, utility);
        let g_max = grad
            .w
            .iter()
            .chain(std::iter::once(&grad.w_c))
            .flat_map(|v| v.iter())
            .map(|z| z.re.abs().max(z.im.abs()))
            .fold(0.0f64, f64::max);
        let eps = 1e-6;
        let check = |analytic: f64, stream: isize, idx: usize, imag: bool| {
            let mut plus = b.clone();
            let mut minus = b.clone();
            let bump = if imag {
                Complex64::new(0.0, eps)
            } else {
                Complex64::new(eps, 0.0)
            };
            {
                let target = |set: &mut BeamformerSet, sign: f64| {
                    let v = Complex64::new(sign, 0.0) * bump;
                    if stream < 0 {
                        let mut wc = set.w_c().clone();
                        wc[idx] += v;
                        *set = BeamformerSet::new_unchecked(wc, set.w().to_vec(), set.p_max());
                    } else {
                        let mut w = set.w().to_vec();
                        w[stream as usize][idx] += v;
                        *set = BeamformerSet::new_unchecked(set.w_c().clone(), w, set.p_max());
                    }
                };
                target(&mut plus, 1.0);
                target(&mut minus, -1.0);
            }
            let up = utility_value(instance, &plus, profile, utility);
            let down = utility_value(instance, &minus, profile, utility);
            let fd = (up - down) / (2.0 * eps);
            let denom = analytic.abs().max(fd.abs()).max(1e-3 * g_max.max(1e-12));
            assert!(
                (analytic - fd).abs() <= tol * denom,
                "stream {stream} idx {idx} imag {imag}: analytic {analytic}, fd {fd}"
            );
        };
        for idx in 0..b.antennas() {
            check(grad.w_c[idx].re, -1, idx, false);
            check(grad.w_c[idx].im, -1, idx, true);
        }
        for (k, gk) in grad.w.iter().enumerate() {
            for idx in 0..b.antennas() {
                check(gk[idx].re, k as isize, idx, false);
                check(gk[idx].im, k as isize, idx, true);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let t = Topology::new(2, 4, 2).unwrap();
            let inst = generate_instance(t, seed, ChannelModel::Rayleigh).unwrap();
            // strictly interior so perturbed points stay feasible
            let raw = random_feasible_set(2, 2, 10.0, seed + 77);
            let b = project_power(&raw, 12.5);
            for delta in [0.0, 0.4, 1.0] {
                let profile = test_profile(2, delta);
                fd_check(&inst, &b, &profile, Utility::SumRateTotal, 1e-4);
                fd_check(&inst, &b, &profile, Utility::SumRatePrivateOnly, 1e-4);
                // active-term subgradient; generic points have a unique min
                fd_check(&inst, &b, &profile, Utility::MinPrivateSinr, 1e-4);
            }
        }
    }

    #[test]
    fn gradient_zero_at_origin_but_utility_grows() {
        // The utility is quadratic in the beamformers around zero, so the
        // true gradient vanishes there while any nonzero step helps.
        let t = Topology::new(2, 4, 2).unwrap();
        let inst = generate_instance(t, 3, ChannelModel::Rayleigh).unwrap();
        let profile = test_profile(2, 0.0);
        let zero = BeamformerSet::new(CVector::zeros(2), vec![CVector::zeros(2); 2], 4.0).unwrap();
        let grad = utility_gradient(&inst, &zero, &profile, Utility::SumRatePrivateOnly);
        assert_eq!(grad.norm_squared(), 0.0);
        let off = BeamformerSet::new_unchecked(
            CVector::zeros(2),
            inst.h().iter().map(|h| h * re(1e-3)).collect(),
            4.0,
        );
        let u0 = utility_value(&inst, &zero, &profile, Utility::SumRatePrivateOnly);
        let u1 = utility_value(&inst, &off, &profile, Utility::SumRatePrivateOnly);
        assert!(u1 > u0);
    }

    #[test]
    fn common_gradient_points_down_at_full_residual() {
        // With private-only utility and delta = 1, growing the common stream
        // along itself can only hurt: nonpositive inner product.
        for seed in 0..20 {
            let t = Topology::new(3, 4, 2).unwrap();
            let inst = generate_instance(t, seed, ChannelModel::Rayleigh).unwrap();
            let b = random_feasible_set(3, 2, 8.0, seed + 300);
            let profile = test_profile(2, 1.0);
            let some_leak = inst
                .h()
                .iter()
                .any(|h| h.dotc(b.w_c()).norm_sqr() > 0.0);
            if !some_leak {
                continue;
            }
            let grad = utility_gradient(&inst, &b, &profile, Utility::SumRatePrivateOnly);
            let inner = b
                .w_c()
                .iter()
                .zip(grad.w_c.iter())
                .map(|(w, g)| (w.conj() * g).re)
                .sum::<f64>();
            assert!(inner <= 1e-12, "seed {seed}: inner product {inner}");
            // finite-difference sign check along w_c
            let eps = 1e-6;
            let stretch = BeamformerSet::new_unchecked(
                b.w_c() * re(1.0 + eps),
                b.w().to_vec(),
                b.p_max() * (1.0 + 3.0 * eps),
            );
            let u0 = utility_value(&inst, &b, &profile, Utility::SumRatePrivateOnly);
            let u1 = utility_value(&inst, &stretch, &profile, Utility::SumRatePrivateOnly);
            assert!(u1 <= u0 + 1e-12, "seed {seed}: {u1} > {u0}");
        }
    }

    #[test]
    fn single_user_mrt_optimum() {
        // K=1, M=2, ideal hardware, no common stream, h=[1,0], p_max=1:
        // optimum is w_1 = [1, 0] up to phase with objective log2(1 + 1/σ²).
        let g = CMatrix::from_row_slice(1, 2, &[re(1.0), re(0.0)]);
        let inst = ChannelInstance::from_parts(
            g,
            vec![DVector::from_vec(vec![re(1.0)])],
            DVector::from_vec(vec![re(1.0)]),
        )
        .unwrap();
        let profile = ImpairmentProfile::new(0.0, 0.0, vec![1.0], 0.0).unwrap();
        let config = OptimizerConfig {
            p_max: 1.0,
            seed: 5,
            ..small_config(5, Utility::SumRateTotal)
        };
        let result = optimize_sdma(&inst, &profile, &config).unwrap();
        assert!((result.objective - 1.0).abs() < 1e-6, "{}", result.objective);
        assert!(result.best.w_c().norm() == 0.0);
        let w1 = &result.best.w()[0];
        assert!((w1[0].norm() - 1.0).abs() < 1e-4);
        assert!(w1[1].norm() < 1e-3);
    }

    #[test]
    fn optimizer_deterministic() {
        let t = Topology::new(2, 4, 2).unwrap();
        let inst = generate_instance(t, 9, ChannelModel::Rayleigh).unwrap();
        let profile = test_profile(2, 0.3);
        let config = small_config(33, Utility::SumRateTotal);
        let a = optimize_rsma(&inst, &profile, &config).unwrap();
        let b = optimize_rsma(&inst, &profile, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_nondecreasing_and_objective_consistent() {
        let t = Topology::new(2, 4, 2).unwrap();
        let inst = generate_instance(t, 10, ChannelModel::Rayleigh).unwrap();
        let profile = test_profile(2, 0.5);
        let config = small_config(4, Utility::SumRateTotal);
        let result = optimize_rsma(&inst, &profile, &config).unwrap();
        for window in result.trace.windows(2) {
            assert!(window[1].1 >= window[0].1);
        }
        let reevaluated = utility_value(&inst, &result.best, &profile, config.utility);
        assert!(
            (result.objective - reevaluated).abs() <= 1e-10 * reevaluated.abs().max(1e-300)
        );
        assert!(
            result.best.total_power()
                <= config.p_max * (1.0 + crate::link::POWER_FEASIBILITY_TOL)
        );
    }

    #[test]
    fn sdma_common_exactly_zero_and_engine_consistency() {
        let t = Topology::new(3, 4, 2).unwrap();
        let inst = generate_instance(t, 12, ChannelModel::Rayleigh).unwrap();
        let profile = test_profile(2, 0.2);
        let config = small_config(21, Utility::SumRateTotal);
        let sdma = optimize_sdma(&inst, &profile, &config).unwrap();
        assert!(sdma.best.w_c().iter().all(|z| z.re == 0.0 && z.im == 0.0));
        // pinning the common dimension inside the shared engine IS the
        // space-division path
        let pinned = run_multistart(&inst, &profile, &config, true).unwrap();
        assert!((pinned.objective - sdma.objective).abs() <= 1e-9);
    }

    #[test]
    fn sdma_never_beats_rsma_at_perfect_sic() {
        let t = Topology::new(2, 4, 2).unwrap();
        let inst = generate_instance(t, 13, ChannelModel::Rayleigh).unwrap();
        let profile = ImpairmentProfile::new(0.0, 0.0, vec![1.0, 1.0], 0.0).unwrap();
        let config = small_config(8, Utility::SumRateTotal);
        let sdma = optimize_sdma(&inst, &profile, &config).unwrap();
        let rsma = optimize_rsma(&inst, &profile, &config).unwrap();
        let polished = refine_from(&inst, &profile, &config, &sdma.best).unwrap();
        let rsma_value = rsma.objective.max(polished.objective);
        assert!(
            sdma.objective <= rsma_value + 1e-9,
            "sdma {} rsma {}",
            sdma.objective,
            rsma_value
        );
    }

    #[test]
    fn oracle_single_sample_and_nesting() {
        let t = Topology::new(2, 4, 2).unwrap();
        let inst = generate_instance(t, 14, ChannelModel::Rayleigh).unwrap();
        let profile = test_profile(2, 0.5);
        let one = random_search_oracle(&inst, &profile, Utility::SumRateTotal, 1, 99, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(99, seed_stream::ORACLE, 0));
        let expected = sample_feasible(&mut rng, 2, 2, 4.0, true);
        assert_eq!(one, expected);

        let mut last = f64::NEG_INFINITY;
        for samples in [1usize, 10, 100, 1000] {
            let best = random_search_oracle(&inst, &profile, Utility::SumRateTotal, samples, 99, 4.0);
            let value = utility_value(&inst, &best, &profile, Utility::SumRateTotal);
            assert!(value >= last, "samples {samples}: {value} < {last}");
            last = value;
        }
    }

    #[test]
    fn oracle_starves_common_stream_at_full_residual() {
        // At delta = 1 the best of many random draws allocates almost
        // nothing to the common stream.
        let t = Topology::new(2, 4, 2).unwrap();
        let inst = generate_instance(t, 15, ChannelModel::Rayleigh).unwrap();
        let profile = test_profile(2, 1.0);
        let best =
            random_search_oracle(&inst, &profile, Utility::SumRateTotal, 1_000_000, 7, 10.0);
        let fraction = best.common_power_fraction();
        assert!(fraction < 0.02, "common power fraction {fraction}");
    }

    #[test]
    fn power_split_vertices_and_single_user() {
        let g = CMatrix::from_row_slice(1, 2, &[re(1.0), re(0.5)]);
        let inst = ChannelInstance::from_parts(
            g,
            vec![DVector::from_vec(vec![re(1.0)])],
            DVector::from_vec(vec![re(1.0)]),
        )
        .unwrap();
        let profile = ImpairmentProfile::new(0.0, 0.0, vec![1.0], 1.0).unwrap();
        let directions = SplitDirections::mrt(&inst);
        // grid_points = 2 evaluates exactly the simplex vertices
        let result = power_split_oracle(
            &inst,
            &profile,
            Utility::SumRatePrivateOnly,
            &directions,
            2,
            4.0,
        );
        assert_eq!(result.surface.len(), 2);
        for (alphas, _) in &result.surface {
            assert!(alphas.iter().all(|a| *a == 0.0 || *a == 1.0));
        }
        // common power only adds interference here: argmax has alpha_c = 0
        assert_eq!(result.best_alphas[0], 0.0);

        let fine = power_split_oracle(
            &inst,
            &profile,
            Utility::SumRatePrivateOnly,
            &directions,
            51,
            4.0,
        );
        assert_eq!(fine.best_alphas[0], 0.0);
        assert_eq!(fine.surface.len(), 51);
    }

    #[test]
    fn power_split_grid_is_full_simplex() {
        let t = Topology::new(2, 4, 2).unwrap();
        let inst = generate_instance(t, 16, ChannelModel::Rayleigh).unwrap();
        let profile = test_profile(2, 0.5);
        let directions = SplitDirections::mrt(&inst);
        let result = power_split_oracle(
            &inst,
            &profile,
            Utility::SumRateTotal,
            &directions,
            5,
            4.0,
        );
        // compositions of 4 units into 3 parts: C(6, 2) = 15 nodes
        assert_eq!(result.surface.len(), 15);
        for (alphas, _) in &result.surface {
            let sum: f64 = alphas.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn thinned_trace_keeps_every_tenth_and_last() {
        let result = OptimizationResult {
            best: random_feasible_set(2, 2, 1.0, 0),
            objective: 1.0,
            trace: (0..=25).map(|i| (i, i as f64)).collect(),
            converged: true,
            restart_index: 0,
        };
        let thinned = result.with_thinned_trace(10);
        let iters: Vec<usize> = thinned.trace.iter().map(|(i, _)| *i).collect();
        assert_eq!(iters, vec![0, 10, 20, 25]);
    }

    #[test]
    fn config_validation() {
        let bad = [
            OptimizerConfig {
                restarts: 0,
                ..OptimizerConfig::default()
            },
            OptimizerConfig {
                armijo_beta: 1.0,
                ..OptimizerConfig::default()
            },
            OptimizerConfig {
                p_max: 0.0,
                ..OptimizerConfig::default()
            },
        ];
        for config in bad {
            assert!(config.validate().is_err());
        }
        assert!(OptimizerConfig::default().validate().is_ok());
    }
}
