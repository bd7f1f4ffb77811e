//! Link-level quantities for one channel instance and one beamformer set:
//! distortion-plus-noise floors, common/private SINRs, and achievable rates.
//!
//! Hardware impairments enter through the aggregate Gram matrix
//! `A = w_c w_c^H + Σ_k w_k w_k^H`: transmit distortion is proportional to
//! the diagonal of `A`, receive distortion to the full quadratic form. The
//! waveforms themselves are never sampled; only these second-order
//! statistics matter.
//!
//! Everything here is a pure function over immutable inputs. Denominator
//! sums are accumulated in a fixed order so that, for fixed inputs, the
//! private SINR is *exactly* monotone in the residual-interference
//! coefficient `delta_sic` (only one denominator term varies with it).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelInstance;
use crate::{CMatrix, CVector, Error, Result};

/// Relative slack allowed on the total-power budget.
pub const POWER_FEASIBILITY_TOL: f64 = 1e-9;

/// Transceiver distortion ratios, per-user noise variances, and the
/// residual-interference coefficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpairmentProfile {
    /// Transmit distortion power as a fraction of transmit signal power.
    pub m_t: f64,
    /// Receive distortion power as a fraction of undistorted receive power.
    pub m_r: f64,
    /// Per-user AWGN variances.
    pub sigma_k_sq: Vec<f64>,
    /// Fraction of common-stream amplitude surviving cancellation, in [0, 1].
    pub delta_sic: f64,
    /// Derived effective noise floors `(1 + m_r) * sigma_k_sq[k]`.
    sigma_sq_eff: Vec<f64>,
}

impl ImpairmentProfile {
    /// Validates ranges and derives the effective noise floors.
    ///
    /// The distortion ratios live in `[0, 1)`: the model itself assumes
    /// strictly positive ratios, and the zero boundary is admitted only so
    /// ideal-hardware baselines can run; [`Self::is_ideal_boundary`] flags
    /// such profiles for reports.
    pub fn new(m_t: f64, m_r: f64, sigma_k_sq: Vec<f64>, delta_sic: f64) -> Result<Self> {
        for (field, v) in [("m_t", m_t), ("m_r", m_r)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParameter {
                    field: if field == "m_t" { "profile.m_t" } else { "profile.m_r" },
                    constraint: format!("must lie in [0, 1), got {v}"),
                });
            }
        }
        if !(0.0..=1.0).contains(&delta_sic) {
            return Err(Error::InvalidParameter {
                field: "profile.delta_sic",
                constraint: format!("must lie in [0, 1], got {delta_sic}"),
            });
        }
        if sigma_k_sq.is_empty() {
            return Err(Error::InvalidParameter {
                field: "profile.sigma_k_sq",
                constraint: "needs at least one user variance".into(),
            });
        }
        if let Some(bad) = sigma_k_sq.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidParameter {
                field: "profile.sigma_k_sq",
                constraint: format!("variances must be finite and > 0, got {bad}"),
            });
        }
        let sigma_sq_eff = sigma_k_sq.iter().map(|s| (1.0 + m_r) * s).collect();
        Ok(Self {
            m_t,
            m_r,
            sigma_k_sq,
            delta_sic,
            sigma_sq_eff,
        })
    }

    /// Same noise and distortion ratios with a different `delta_sic`.
    pub fn with_delta(&self, delta_sic: f64) -> Result<Self> {
        Self::new(self.m_t, self.m_r, self.sigma_k_sq.clone(), delta_sic)
    }

    pub fn users(&self) -> usize {
        self.sigma_k_sq.len()
    }

    /// Effective noise floor `(1 + m_r) * sigma_k_sq[k]`.
    pub fn sigma_sq_eff(&self, k: usize) -> f64 {
        self.sigma_sq_eff[k]
    }

    /// True when either distortion ratio sits on the idealized zero boundary.
    pub fn is_ideal_boundary(&self) -> bool {
        self.m_t == 0.0 || self.m_r == 0.0
    }
}

impl<'de> Deserialize<'de> for ImpairmentProfile {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            m_t: f64,
            m_r: f64,
            sigma_k_sq: Vec<f64>,
            delta_sic: f64,
        }
        let w = Wire::deserialize(deserializer)?;
        ImpairmentProfile::new(w.m_t, w.m_r, w.sigma_k_sq, w.delta_sic)
            .map_err(serde::de::Error::custom)
    }
}

/// A common-stream beamformer, `K` private beamformers, and the power budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    w_c: CVector,
    w: Vec<CVector>,
    p_max: f64,
}

impl BeamformerSet {
    /// Validates dimensions and the power constraint
    /// `‖w_c‖² + Σ_k ‖w_k‖² ≤ p_max` (within [`POWER_FEASIBILITY_TOL`]).
    pub fn new(w_c: CVector, w: Vec<CVector>, p_max: f64) -> Result<Self> {
        if !(p_max.is_finite() && p_max > 0.0) {
            return Err(Error::InvalidParameter {
                field: "p_max",
                constraint: format!("must be finite and > 0, got {p_max}"),
            });
        }
        if w.is_empty() {
            return Err(Error::InvalidParameter {
                field: "w",
                constraint: "needs at least one private beamformer".into(),
            });
        }
        let m = w_c.len();
        for (k, wk) in w.iter().enumerate() {
            if wk.len() != m {
                return Err(Error::DimensionMismatch {
                    operand: "w",
                    expected: format!("length {m} matching w_c"),
                    actual: format!("length {} at user {k}", wk.len()),
                });
            }
        }
        let set = Self { w_c, w, p_max };
        let total = set.total_power();
        if total > p_max * (1.0 + POWER_FEASIBILITY_TOL) {
            return Err(Error::InvalidParameter {
                field: "p_max",
                constraint: format!("total power {total} exceeds budget {p_max}"),
            });
        }
        Ok(set)
    }

    /// Construction without the budget check, for internal points that are
    /// feasible by construction (e.g. fresh projections).
    pub(crate) fn new_unchecked(w_c: CVector, w: Vec<CVector>, p_max: f64) -> Self {
        Self { w_c, w, p_max }
    }

    pub fn w_c(&self) -> &CVector {
        &self.w_c
    }

    pub fn w(&self) -> &[CVector] {
        &self.w
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn antennas(&self) -> usize {
        self.w_c.len()
    }

    pub fn users(&self) -> usize {
        self.w.len()
    }

    /// `‖w_c‖² + Σ_k ‖w_k‖²`, accumulated common-first then users in order.
    pub fn total_power(&self) -> f64 {
        let mut total = self.w_c.norm_squared();
        for wk in &self.w {
            total += wk.norm_squared();
        }
        total
    }

    /// Fraction of the budget spent on the common stream.
    pub fn common_power_fraction(&self) -> f64 {
        self.w_c.norm_squared() / self.p_max
    }
}

// Complex numbers on disk are always `[re, im]` pairs.
#[derive(Serialize, Deserialize)]
struct BeamformerSetWire {
    w_c: Vec<Complex64>,
    w: Vec<Vec<Complex64>>,
    p_max: f64,
}

impl Serialize for BeamformerSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        BeamformerSetWire {
            w_c: self.w_c.iter().cloned().collect(),
            w: self.w.iter().map(|wk| wk.iter().cloned().collect()).collect(),
            p_max: self.p_max,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BeamformerSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let w = BeamformerSetWire::deserialize(deserializer)?;
        BeamformerSet::new(
            CVector::from_vec(w.w_c),
            w.w.into_iter().map(CVector::from_vec).collect(),
            w.p_max,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Floors, SINRs, and rates for one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub phi_c: f64,
    pub phi_p: f64,
    pub gamma_c: f64,
    pub gamma_p: f64,
    /// Common-stream rate `log2(1 + gamma_c)` in bits/s/Hz.
    pub r_c_k: f64,
    /// Private-stream rate `log2(1 + gamma_p)` in bits/s/Hz.
    pub r_p_k: f64,
}

/// Per-user metrics plus the global common rate and sum rate.
///
/// `r_c = min_k r_c_k` (every user must decode the common stream) and
/// `r_total = r_c + Σ_k r_p_k`, both exact by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkMetrics {
    pub per_user: Vec<UserMetrics>,
    pub r_c: f64,
    pub r_total: f64,
}

impl LinkMetrics {
    /// One CSV row per user plus one summary row carrying `r_c`/`r_total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("user,phi_c,phi_p,gamma_c,gamma_p,r_c_k,r_p_k,r_c,r_total\n");
        for (k, u) in self.per_user.iter().enumerate() {
            out.push_str(&format!(
                "{k},{},{},{},{},{},{},,\n",
                u.phi_c, u.phi_p, u.gamma_c, u.gamma_p, u.r_c_k, u.r_p_k
            ));
        }
        out.push_str(&format!("summary,,,,,,,{},{}\n", self.r_c, self.r_total));
        out
    }
}

// Flat JSON object: field-per-column arrays plus the two global scalars.
#[derive(Serialize, Deserialize)]
struct LinkMetricsWire {
    phi_c: Vec<f64>,
    phi_p: Vec<f64>,
    gamma_c: Vec<f64>,
    gamma_p: Vec<f64>,
    r_c_k: Vec<f64>,
    r_p_k: Vec<f64>,
    r_c: f64,
    r_total: f64,
}

impl Serialize for LinkMetrics {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        LinkMetricsWire {
            phi_c: self.per_user.iter().map(|u| u.phi_c).collect(),
            phi_p: self.per_user.iter().map(|u| u.phi_p).collect(),
            gamma_c: self.per_user.iter().map(|u| u.gamma_c).collect(),
            gamma_p: self.per_user.iter().map(|u| u.gamma_p).collect(),
            r_c_k: self.per_user.iter().map(|u| u.r_c_k).collect(),
            r_p_k: self.per_user.iter().map(|u| u.r_p_k).collect(),
            r_c: self.r_c,
            r_total: self.r_total,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LinkMetrics {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let w = LinkMetricsWire::deserialize(deserializer)?;
        let k = w.phi_c.len();
        if [&w.phi_p, &w.gamma_c, &w.gamma_p, &w.r_c_k, &w.r_p_k]
            .iter()
            .any(|v| v.len() != k)
        {
            return Err(serde::de::Error::custom("per-user arrays disagree in length"));
        }
        let per_user = (0..k)
            .map(|i| UserMetrics {
                phi_c: w.phi_c[i],
                phi_p: w.phi_p[i],
                gamma_c: w.gamma_c[i],
                gamma_p: w.gamma_p[i],
                r_c_k: w.r_c_k[i],
                r_p_k: w.r_p_k[i],
            })
            .collect();
        Ok(LinkMetrics {
            per_user,
            r_c: w.r_c,
            r_total: w.r_total,
        })
    }
}

/// `A = w_c w_c^H + Σ_k w_k w_k^H`, Hermitian positive semidefinite.
pub fn aggregate_gram(b: &BeamformerSet) -> CMatrix {
    let m = b.antennas();
    let mut a = CMatrix::zeros(m, m);
    a += b.w_c() * b.w_c().adjoint();
    for wk in b.w() {
        a += wk * wk.adjoint();
    }
    a
}

/// Evaluates the Hermitian quadratic form `h^H X h` as a real scalar.
///
/// Analytically the form is real; the imaginary residue is checked below
/// 1e-12 of the magnitude in debug builds and discarded.
pub(crate) fn hermitian_quadratic_form(h: &CVector, x: &CMatrix) -> f64 {
    let value: Complex64 = h.dotc(&(x * h));
    debug_assert!(
        value.im.abs() <= 1e-12 * value.norm().max(1e-300),
        "quadratic form imaginary residue {} vs magnitude {}",
        value.im,
        value.norm()
    );
    value.re
}

/// Common-stream distortion-plus-noise floor
/// `Φ_c = m_r h^H A h + m_t (1+m_r) h^H diag~(A) h + (1+m_r) σ_k²`,
/// where `diag~(A)` keeps only the diagonal of `A`.
pub fn phi_c(h_k: &CVector, a: &CMatrix, profile: &ImpairmentProfile, k: usize) -> f64 {
    let full = hermitian_quadratic_form(h_k, a);
    let mut diag = 0.0;
    for (m, hm) in h_k.iter().enumerate() {
        diag += a[(m, m)].re * hm.norm_sqr();
    }
    profile.m_r * full + profile.m_t * (1.0 + profile.m_r) * diag + profile.sigma_sq_eff(k)
}

/// Private-stream floor `Φ_p = delta_sic² |h^H w_c|² + Φ_c`; never below `Φ_c`.
pub fn phi_p(h_k: &CVector, w_c: &CVector, phi_c_val: f64, delta_sic: f64) -> f64 {
    let leak = h_k.dotc(w_c).norm_sqr();
    (delta_sic * delta_sic) * leak + phi_c_val
}

/// Per-user quantities along the fixed evaluation order shared by every
/// public SINR/rate entry point, so all routes agree bitwise.
fn user_metrics(
    h: &CVector,
    b: &BeamformerSet,
    profile: &ImpairmentProfile,
    k: usize,
) -> UserMetrics {
    let m_t = profile.m_t;
    let m_r = profile.m_r;
    let delta = profile.delta_sic;

    let p_common = h.dotc(b.w_c()).norm_sqr();
    let mut sum_all = 0.0; // Σ_i |h^H w_i|², ascending i
    let mut interference = 0.0; // Σ_{i≠k} |h^H w_i|², ascending i
    let mut p_own = 0.0;
    for (i, wi) in b.w().iter().enumerate() {
        let p = h.dotc(wi).norm_sqr();
        sum_all += p;
        if i == k {
            p_own = p;
        } else {
            interference += p;
        }
    }

    // h^H A h without forming A: the common outer product first, then users.
    let quad_full = p_common + sum_all;
    // h^H diag~(A) h: per antenna, diagonal of A times |h_m|².
    let mut quad_diag = 0.0;
    for (m, hm) in h.iter().enumerate() {
        let mut a_mm = b.w_c()[m].norm_sqr();
        for wi in b.w() {
            a_mm += wi[m].norm_sqr();
        }
        quad_diag += a_mm * hm.norm_sqr();
    }

    let phi_c = m_r * quad_full + m_t * (1.0 + m_r) * quad_diag + profile.sigma_sq_eff(k);
    let phi_p = (delta * delta) * p_common + phi_c;
    let gamma_c = p_common / (sum_all + phi_c);
    let gamma_p = p_own / (interference + phi_p);

    UserMetrics {
        phi_c,
        phi_p,
        gamma_c,
        gamma_p,
        r_c_k: log2_1p(gamma_c),
        r_p_k: log2_1p(gamma_p),
    }
}

/// `log2(1 + x)` through `ln_1p`, accurate for the tiny SINRs that appear
/// near the residual-interference floor.
pub fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / std::f64::consts::LN_2
}

/// Common-stream SINR for user `k`. The denominator includes *all* `K`
/// private streams (the common stream is decoded first, before any
/// cancellation) plus the floor `Φ_c`.
pub fn sinr_common(
    h_k: &CVector,
    b: &BeamformerSet,
    profile: &ImpairmentProfile,
    k: usize,
) -> f64 {
    user_metrics(h_k, b, profile, k).gamma_c
}

/// Private-stream SINR for user `k`: interference from the other users'
/// private streams, the `delta_sic²`-weighted common-stream residual, and
/// the floor `Φ_c`.
pub fn sinr_private(
    h_k: &CVector,
    b: &BeamformerSet,
    profile: &ImpairmentProfile,
    k: usize,
) -> f64 {
    user_metrics(h_k, b, profile, k).gamma_p
}

fn check_link_dimensions(
    instance: &ChannelInstance,
    b: &BeamformerSet,
    profile: &ImpairmentProfile,
) -> Result<()> {
    let t = instance.topology();
    if b.antennas() != t.m {
        return Err(Error::DimensionMismatch {
            operand: "beamformers",
            expected: format!("{} antennas", t.m),
            actual: format!("{}", b.antennas()),
        });
    }
    if b.users() != t.k {
        return Err(Error::DimensionMismatch {
            operand: "beamformers",
            expected: format!("{} users", t.k),
            actual: format!("{}", b.users()),
        });
    }
    if profile.users() != t.k {
        return Err(Error::DimensionMismatch {
            operand: "profile.sigma_k_sq",
            expected: format!("{} users", t.k),
            actual: format!("{}", profile.users()),
        });
    }
    Ok(())
}

/// Full rate-splitting metrics: per-user floors, SINRs and rates, the
/// min-rule common rate, and the sum rate.
pub fn compute_metrics(
    instance: &ChannelInstance,
    b: &BeamformerSet,
    profile: &ImpairmentProfile,
) -> Result<LinkMetrics> {
    check_link_dimensions(instance, b, profile)?;
    let per_user: Vec<UserMetrics> = instance
        .h()
        .iter()
        .enumerate()
        .map(|(k, h)| user_metrics(h, b, profile, k))
        .collect();
    let r_c = per_user.iter().map(|u| u.r_c_k).fold(f64::INFINITY, f64::min);
    let mut r_total = r_c;
    for u in &per_user {
        r_total += u.r_p_k;
    }
    Ok(LinkMetrics {
        per_user,
        r_c,
        r_total,
    })
}

/// Space-division metrics: private streams only, no common stream anywhere.
///
/// The Gram matrix is `Σ_k w_k w_k^H` and the per-user SINR is the classical
/// `|h^H w_k|² / (Σ_{i≠k} |h^H w_i|² + Φ_c)`. Structurally this is the
/// rate-splitting pipeline with `w_c = 0`, and the two agree to machine
/// precision; keeping the dedicated path makes that equivalence checkable.
pub fn compute_metrics_sdma(
    instance: &ChannelInstance,
    private_w: &[CVector],
    profile: &ImpairmentProfile,
) -> Result<LinkMetrics> {
    let t = instance.topology();
    if private_w.len() != t.k || private_w.iter().any(|w| w.len() != t.m) {
        return Err(Error::DimensionMismatch {
            operand: "private_w",
            expected: format!("{} vectors of length {}", t.k, t.m),
            actual: format!(
                "{} vectors of lengths {:?}",
                private_w.len(),
                private_w.iter().map(CVector::len).collect::<Vec<_>>()
            ),
        });
    }
    if profile.users() != t.k {
        return Err(Error::DimensionMismatch {
            operand: "profile.sigma_k_sq",
            expected: format!("{} users", t.k),
            actual: format!("{}", profile.users()),
        });
    }
    let m_t = profile.m_t;
    let m_r = profile.m_r;
    let per_user: Vec<UserMetrics> = instance
        .h()
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let mut sum_all = 0.0;
            let mut interference = 0.0;
            let mut p_own = 0.0;
            for (i, wi) in private_w.iter().enumerate() {
                let p = h.dotc(wi).norm_sqr();
                sum_all += p;
                if i == k {
                    p_own = p;
                } else {
                    interference += p;
                }
            }
            let quad_full = sum_all;
            let mut quad_diag = 0.0;
            for (m, hm) in h.iter().enumerate() {
                let mut a_mm = 0.0;
                for wi in private_w {
                    a_mm += wi[m].norm_sqr();
                }
                quad_diag += a_mm * hm.norm_sqr();
            }
            let phi_c = m_r * quad_full + m_t * (1.0 + m_r) * quad_diag + profile.sigma_sq_eff(k);
            let gamma_p = p_own / (interference + phi_c);
            UserMetrics {
                phi_c,
                phi_p: phi_c,
                gamma_c: 0.0,
                gamma_p,
                r_c_k: 0.0,
                r_p_k: log2_1p(gamma_p),
            }
        })
        .collect();
    let mut r_total = 0.0;
    for u in &per_user {
        r_total += u.r_p_k;
    }
    Ok(LinkMetrics {
        per_user,
        r_c: 0.0,
        r_total,
    })
}
