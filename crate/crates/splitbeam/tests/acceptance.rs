//! Acceptance suite: every release criterion as one test, each printing a
//! PASS line with its headline numbers (run with `--nocapture` to see them).
//!
//! The criteria pin their tolerances and instance counts here, in code.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use splitbeam::channel::{generate_instance, ChannelInstance, ChannelModel, Topology};
use splitbeam::derive_seed;
use splitbeam::experiment::{run, ExperimentSpec};
use splitbeam::link::{
    aggregate_gram, compute_metrics, compute_metrics_sdma, phi_c, sinr_private, BeamformerSet,
    ImpairmentProfile,
};
use splitbeam::opt::{
    optimize_rsma, power_split_oracle, project_power, random_feasible_set, random_search_oracle,
    utility_gradient, utility_value, OptimizerConfig, SplitDirections, Utility,
};
use splitbeam::verify::{
    certify_instance, default_delta_grid, degeneration_verdict, delta_sweep, zero_common,
    STRICT_LEAK_TOL,
};

const SUITE_SEED: u64 = 0xACCE;

/// One deterministic scenario of the dominance corpus: topology, residual
/// level, impairment profile, channel instance, and a random feasible
/// beamformer set.
struct Scenario {
    instance: ChannelInstance,
    beamformers: BeamformerSet,
    profile: ImpairmentProfile,
}

fn dominance_scenario(index: usize) -> Scenario {
    const KS: [usize; 3] = [2, 3, 4];
    const MS: [usize; 3] = [2, 4, 8];
    const NS: [usize; 2] = [4, 16];
    const DELTAS: [f64; 4] = [0.04, 0.1, 0.5, 1.0];

    let k = KS[index % KS.len()];
    let m = MS[(index / KS.len()) % MS.len()];
    let n = NS[(index / (KS.len() * MS.len())) % NS.len()];
    let delta = DELTAS[(index / (KS.len() * MS.len() * NS.len())) % DELTAS.len()];

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(SUITE_SEED, 0x50f1, index as u64));
    let m_t = 0.05 + 0.25 * rng.random::<f64>();
    let m_r = 0.05 + 0.25 * rng.random::<f64>();
    let sigma: Vec<f64> = (0..k).map(|_| 0.5 + 1.5 * rng.random::<f64>()).collect();
    let profile = ImpairmentProfile::new(m_t, m_r, sigma, delta).unwrap();

    let topology = Topology::new(m, n, k).unwrap();
    let instance = generate_instance(
        topology,
        derive_seed(SUITE_SEED, 0xc4a7, index as u64),
        ChannelModel::Rayleigh,
    )
    .unwrap();
    let beamformers = random_feasible_set(
        m,
        k,
        10.0,
        derive_seed(SUITE_SEED, 0xbea7, index as u64),
    );
    Scenario {
        instance,
        beamformers,
        profile,
    }
}

#[test]
fn acceptance_1_dominance_suite() {
    const INSTANCES: usize = 10_000;
    let start = Instant::now();

    let violations: usize = (0..INSTANCES)
        .into_par_iter()
        .map(|i| {
            let s = dominance_scenario(i);
            let stripped = zero_common(&s.beamformers);
            let wc_sq = s.beamformers.w_c().norm_squared();
            let mut bad = 0usize;
            for k in 0..s.instance.topology().k {
                let h = s.instance.user_channel(k);
                let before = sinr_private(h, &s.beamformers, &s.profile, k);
                let after = sinr_private(h, &stripped, &s.profile, k);
                // weak dominance within 1e-12 relative
                if after < before * (1.0 - 1e-12) {
                    bad += 1;
                }
                // strict dominance where the common stream reaches the user
                let leak = h.dotc(s.beamformers.w_c()).norm_sqr();
                if leak > STRICT_LEAK_TOL * h.norm_squared() * wc_sq && after <= before {
                    bad += 1;
                }
            }
            bad
        })
        .sum();

    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(violations, 0, "dominance violations on the corpus");
    assert!(elapsed < 60.0, "runtime target exceeded: {elapsed:.1}s");
    println!(
        "acceptance 1 (zero-common dominance, {INSTANCES} instances): PASS in {elapsed:.1}s, 0 violations"
    );
}

#[test]
fn acceptance_2_certificate_algebra() {
    const INSTANCES: usize = 10_000;
    let start = Instant::now();

    let worst: f64 = (0..INSTANCES)
        .into_par_iter()
        .map(|i| {
            let s = dominance_scenario(i);
            let cert = certify_instance(&s.instance, &s.beamformers, &s.profile).unwrap();
            let a_star = aggregate_gram(&s.beamformers);
            let t = s.instance.topology();
            let trace: f64 = (0..t.m).map(|m| a_star[(m, m)].re).sum();
            assert!(
                cert.gram_ordering_min_eig >= -1e-10 * trace,
                "instance {i}: min eig {} vs trace {trace}",
                cert.gram_ordering_min_eig
            );

            let mut worst_rel: f64 = 0.0;
            for k in 0..t.k {
                let h = s.instance.user_channel(k);
                // closed form: m_r |h^H w_c|² + m_t (1+m_r) h^H diag~(w_c w_c^H) h
                let leak = h.dotc(s.beamformers.w_c()).norm_sqr();
                let mut diag = 0.0;
                for m in 0..t.m {
                    diag += s.beamformers.w_c()[m].norm_sqr() * h[m].norm_sqr();
                }
                let closed = s.profile.m_r * leak + s.profile.m_t * (1.0 + s.profile.m_r) * diag;
                // the certificate margin subtracts two O(phi) floors, so its
                // absolute error scales with the floor; compare accordingly
                let phi_star = phi_c(h, &a_star, &s.profile, k);
                let scale = closed.abs().max(phi_star);
                let rel = (cert.floor_ordering_margins[k] - closed).abs() / scale;
                worst_rel = worst_rel.max(rel);
                assert!(
                    rel <= 1e-10,
                    "instance {i} user {k}: margin {} vs closed {closed} (phi* {phi_star})",
                    cert.floor_ordering_margins[k]
                );
            }
            worst_rel
        })
        .reduce(|| 0.0, f64::max);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "runtime target exceeded: {elapsed:.1}s");
    println!(
        "acceptance 2 (certificate algebra, {INSTANCES} instances): PASS in {elapsed:.1}s, worst margin error {worst:.2e}"
    );
}

#[test]
fn acceptance_3_sdma_structural_equivalence() {
    const INSTANCES: usize = 1_000;
    let start = Instant::now();

    (0..INSTANCES).into_par_iter().for_each(|i| {
        let s = dominance_scenario(i * 7 + 3);
        let stripped = zero_common(&s.beamformers);
        let rsma = compute_metrics(&s.instance, &stripped, &s.profile).unwrap();
        let sdma = compute_metrics_sdma(&s.instance, stripped.w(), &s.profile).unwrap();
        assert_eq!(rsma.r_c, 0.0, "instance {i}");
        for k in 0..s.instance.topology().k {
            let a = rsma.per_user[k];
            let b = sdma.per_user[k];
            assert!(
                (a.gamma_p - b.gamma_p).abs() <= 1e-12 * b.gamma_p.max(1e-12),
                "instance {i} user {k}: gamma {} vs {}",
                a.gamma_p,
                b.gamma_p
            );
            assert!((a.phi_c - b.phi_c).abs() <= 1e-12 * b.phi_c, "instance {i}");
            assert!((a.phi_p - b.phi_p).abs() <= 1e-12 * b.phi_p, "instance {i}");
            assert!(
                (a.r_p_k - b.r_p_k).abs() <= 1e-12 * b.r_p_k.max(1e-12),
                "instance {i}"
            );
        }
        assert!(
            (rsma.r_total - sdma.r_total).abs() <= 1e-12 * sdma.r_total.max(1e-12),
            "instance {i}: r_total {} vs {}",
            rsma.r_total,
            sdma.r_total
        );
    });

    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "acceptance 3 (space-division equivalence, {INSTANCES} instances): PASS in {elapsed:.1}s"
    );
}

#[test]
fn acceptance_4_gradient_against_finite_differences() {
    const INSTANCES: usize = 100;
    const STEP: f64 = 1e-6;
    const TOL: f64 = 1e-4;
    let start = Instant::now();

    let worst = (0..INSTANCES)
        .into_par_iter()
        .map(|i| {
            let ks = [2usize, 3];
            let ms = [2usize, 4];
            let k = ks[i % 2];
            let m = ms[(i / 2) % 2];
            let topology = Topology::new(m, 4, k).unwrap();
            let instance = generate_instance(
                topology,
                derive_seed(SUITE_SEED, 0x64fd, i as u64),
                ChannelModel::Rayleigh,
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(SUITE_SEED, 0x64fe, i as u64));
            let delta = rng.random::<f64>();
            let profile =
                ImpairmentProfile::new(0.08, 0.12, vec![1.0; k], delta).unwrap();
            // strictly interior point so perturbations stay feasible
            let b = project_power(
                &random_feasible_set(m, k, 10.0, derive_seed(SUITE_SEED, 0x64ff, i as u64)),
                12.5,
            );

            let mut worst_rel: f64 = 0.0;
            for utility in [Utility::SumRateTotal, Utility::SumRatePrivateOnly] {
                let grad = utility_gradient(&instance, &b, &profile, utility);
                let g_max = grad
                    .w
                    .iter()
                    .chain(std::iter::once(&grad.w_c))
                    .flat_map(|v| v.iter())
                    .map(|z| z.re.abs().max(z.im.abs()))
                    .fold(0.0f64, f64::max);

                let mut check = |analytic: f64, stream: isize, idx: usize, imag: bool| {
                    let perturb = |sign: f64| -> f64 {
                        let bump = if imag {
                            num_complex::Complex64::new(0.0, sign * STEP)
                        } else {
                            num_complex::Complex64::new(sign * STEP, 0.0)
                        };
                        let mut w_c = b.w_c().clone();
                        let mut w = b.w().to_vec();
                        if stream < 0 {
                            w_c[idx] += bump;
                        } else {
                            w[stream as usize][idx] += bump;
                        }
                        let set = BeamformerSet::new(w_c, w, b.p_max()).unwrap();
                        utility_value(&instance, &set, &profile, utility)
                    };
                    let fd = (perturb(1.0) - perturb(-1.0)) / (2.0 * STEP);
                    let denom = analytic.abs().max(fd.abs()).max(1e-3 * g_max.max(1e-12));
                    let rel = (analytic - fd).abs() / denom;
                    worst_rel = worst_rel.max(rel);
                    assert!(
                        rel <= TOL,
                        "instance {i} {utility:?} stream {stream} coord {idx} imag {imag}: analytic {analytic}, fd {fd}"
                    );
                };
                for idx in 0..m {
                    check(grad.w_c[idx].re, -1, idx, false);
                    check(grad.w_c[idx].im, -1, idx, true);
                }
                for (j, gj) in grad.w.iter().enumerate() {
                    for idx in 0..m {
                        check(gj[idx].re, j as isize, idx, false);
                        check(gj[idx].im, j as isize, idx, true);
                    }
                }
            }
            worst_rel
        })
        .reduce(|| 0.0, f64::max);

    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "acceptance 4 (gradient vs finite differences, {INSTANCES} instances, both utilities): PASS in {elapsed:.1}s, worst coord error {worst:.2e}"
    );
}

#[test]
fn acceptance_5_oracle_agreement() {
    const INSTANCES: usize = 20;
    const ORACLE_SAMPLES: usize = 1_000_000;
    let start = Instant::now();

    let topology = Topology::new(2, 4, 2).unwrap();
    let profile = ImpairmentProfile::new(0.05, 0.05, vec![1.0, 1.0], 0.1).unwrap();
    let mut worst_margin = f64::INFINITY;
    for i in 0..INSTANCES {
        let instance = generate_instance(
            topology,
            derive_seed(SUITE_SEED, 0x0eac, i as u64),
            ChannelModel::Rayleigh,
        )
        .unwrap();
        let config = OptimizerConfig {
            seed: derive_seed(SUITE_SEED, 0x0ead, i as u64),
            p_max: 10.0,
            ..OptimizerConfig::default()
        };
        let optimized = optimize_rsma(&instance, &profile, &config).unwrap();
        let oracle = random_search_oracle(
            &instance,
            &profile,
            config.utility,
            ORACLE_SAMPLES,
            derive_seed(SUITE_SEED, 0x0eae, i as u64),
            config.p_max,
        );
        let oracle_objective = utility_value(&instance, &oracle, &profile, config.utility);
        let margin = (optimized.objective - oracle_objective) / oracle_objective;
        worst_margin = worst_margin.min(margin);
        assert!(
            optimized.objective >= oracle_objective * (1.0 - 0.01),
            "instance {i}: optimizer {} vs oracle {oracle_objective}",
            optimized.objective
        );
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "runtime target exceeded: {elapsed:.1}s");
    println!(
        "acceptance 5 (optimizer vs {ORACLE_SAMPLES}-sample oracle, {INSTANCES} instances): PASS in {elapsed:.1}s, worst relative margin {worst_margin:+.3e}"
    );
}

#[test]
fn acceptance_6_degeneration_at_endpoint() {
    let start = Instant::now();

    let topology = Topology::new(4, 16, 2).unwrap();
    let profile = ImpairmentProfile::new(0.05, 0.05, vec![1.0, 1.0], 0.0).unwrap();
    let config = OptimizerConfig {
        utility: Utility::SumRateTotal,
        seed: derive_seed(SUITE_SEED, 0xdeed, 0),
        ..OptimizerConfig::default()
    };
    let grid = default_delta_grid();
    let sweep = delta_sweep(topology, &profile, &grid, 100, &config, SUITE_SEED).unwrap();
    let report = degeneration_verdict(&sweep, 0.01).unwrap();

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        report.endpoint_ok,
        "endpoint gap {} above 1%",
        report.endpoint_gap_rel
    );
    assert!(
        report.common_power_ok,
        "common power fraction {} above 2%",
        report.common_power_fraction_at_endpoint
    );
    assert!(
        report.trend_ok,
        "gap trend spearman {:?} above -0.8",
        report.spearman_gap_vs_delta
    );
    assert!(report.passed);
    assert!(elapsed < 900.0, "runtime target exceeded: {elapsed:.1}s");
    println!(
        "acceptance 6 (endpoint degeneration, 100 trials x {} grid points): PASS in {elapsed:.1}s, gap {:.2e}, common power {:.2e}, spearman {:?}",
        grid.len(),
        report.endpoint_gap_rel,
        report.common_power_fraction_at_endpoint,
        report.spearman_gap_vs_delta
    );
}

#[test]
fn acceptance_7_power_split_certificate() {
    const INSTANCES: usize = 50;
    let start = Instant::now();

    let topology = Topology::new(4, 8, 2).unwrap();
    let profile = ImpairmentProfile::new(0.05, 0.05, vec![1.0, 1.0], 1.0).unwrap();
    let zero_common_wins = (0..INSTANCES)
        .into_par_iter()
        .filter(|i| {
            let instance = generate_instance(
                topology,
                derive_seed(SUITE_SEED, 0x5711, *i as u64),
                ChannelModel::Rayleigh,
            )
            .unwrap();
            let directions = SplitDirections::mrt(&instance);
            let result = power_split_oracle(
                &instance,
                &profile,
                Utility::SumRatePrivateOnly,
                &directions,
                51,
                10.0,
            );
            result.best_alphas[0] == 0.0
        })
        .count();

    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(
        zero_common_wins, INSTANCES,
        "common stream won power at full residual on {} instances",
        INSTANCES - zero_common_wins
    );
    println!(
        "acceptance 7 (power-split argmax starves the common stream, {zero_common_wins}/{INSTANCES} instances): PASS in {elapsed:.1}s"
    );
}

#[test]
fn acceptance_8_private_sinr_monotone_in_delta() {
    const INSTANCES: usize = 1_000;
    let start = Instant::now();

    (0..INSTANCES).into_par_iter().for_each(|i| {
        let s = dominance_scenario(i * 3 + 1);
        let t = s.instance.topology();
        let mut previous = vec![f64::INFINITY; t.k];
        for step in 0..=10 {
            let delta = step as f64 / 10.0;
            let profile = s.profile.with_delta(delta).unwrap();
            for (k, prev) in previous.iter_mut().enumerate() {
                let gamma = sinr_private(s.instance.user_channel(k), &s.beamformers, &profile, k);
                assert!(
                    gamma <= *prev,
                    "instance {i} user {k} at delta {delta}: {gamma} > {}",
                    *prev
                );
                *prev = gamma;
            }
        }
    });

    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "acceptance 8 (private SINR monotone in delta, {INSTANCES} instances x 11-point grid, exact): PASS in {elapsed:.1}s"
    );
}

#[test]
fn acceptance_9_rerun_determinism() {
    let start = Instant::now();
    let base = std::env::temp_dir().join(format!("splitbeam-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);

    let specs = [
        (
            "sweep",
            format!(
                r#"{{"topology":{{"M":2,"N":3,"K":2}},"mode":"sweep","master_seed":41,
                    "trials":2,"delta_grid":[0.0,1.0],
                    "optimizer":{{"restarts":2,"max_iters":150,"p_max":10.0}},
                    "output_dir":{:?}}}"#,
                base.join("sweep")
            ),
        ),
        (
            "certify",
            format!(
                r#"{{"topology":{{"M":2,"N":4,"K":2}},"mode":"certify","master_seed":42,
                    "trials":10,"output_dir":{:?}}}"#,
                base.join("certify")
            ),
        ),
    ];

    for (name, spec_json) in &specs {
        let mut bytes: Vec<Vec<u8>> = Vec::new();
        for rerun in 0..2 {
            let mut spec = ExperimentSpec::from_json_str(spec_json).unwrap();
            spec.output_dir = spec.output_dir.join(format!("run{rerun}"));
            let outcome = run(&spec).unwrap();
            bytes.push(std::fs::read(&outcome.results_path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1], "{name} results.json not reproducible");
    }

    std::fs::remove_dir_all(&base).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "acceptance 9 (byte-identical results.json across reruns): PASS in {elapsed:.1}s"
    );
}
