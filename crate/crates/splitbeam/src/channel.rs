//! Cascaded-channel geometry: base station → reflecting surface → users.
//!
//! Direct base-station/user links are assumed blocked, so the effective
//! channel of user `k` is the cascade `h_k^H = f_k^H Θ G` with
//! `Θ = diag(conj(phi))`. The reflection matrix is never materialized; the
//! cascade is applied elementwise in `O(N·M)`.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{CMatrix, CVector, Error, Result};

/// Tolerance on `||phi[n]| - 1|` accepted as unit modulus.
pub const UNIT_MODULUS_TOL: f64 = 1e-12;

/// Antenna, reflector, and user counts for one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    /// Transmit antennas at the base station.
    #[serde(rename = "M")]
    pub m: usize,
    /// Reflecting elements on the surface.
    #[serde(rename = "N")]
    pub n: usize,
    /// Single-antenna users.
    #[serde(rename = "K")]
    pub k: usize,
}

impl Topology {
    pub fn new(m: usize, n: usize, k: usize) -> Result<Self> {
        let t = Self { m, n, k };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("M", self.m), ("N", self.n), ("K", self.k)] {
            if v < 1 {
                return Err(Error::InvalidParameter {
                    field: match field {
                        "M" => "topology.M",
                        "N" => "topology.N",
                        _ => "topology.K",
                    },
                    constraint: format!("must be >= 1, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Fading model for instance generation. Only Rayleigh is implemented; the
/// enum is the extension point for other distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    /// I.i.d. circularly-symmetric complex Gaussian entries, zero mean,
    /// unit variance per entry.
    #[default]
    Rayleigh,
}

/// One channel realization: the cascade inputs plus the derived effective
/// channels.
///
/// Immutable after construction; the cached `h[k]` is always exactly the
/// output of [`cascaded_channel`] on the stored `(G, f[k], phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelInstance {
    topology: Topology,
    g: CMatrix,
    f: Vec<CVector>,
    phi: CVector,
    h: Vec<CVector>,
}

impl ChannelInstance {
    /// Builds an instance from raw parts, validating shapes and recomputing
    /// the effective channels.
    pub fn from_parts(g: CMatrix, f: Vec<CVector>, phi: CVector) -> Result<Self> {
        let n = g.nrows();
        let m = g.ncols();
        let k = f.len();
        let topology = Topology::new(m, n, k)?;
        if phi.len() != n {
            return Err(Error::DimensionMismatch {
                operand: "phi",
                expected: format!("length {n}"),
                actual: format!("length {}", phi.len()),
            });
        }
        for (idx, fk) in f.iter().enumerate() {
            if fk.len() != n {
                return Err(Error::DimensionMismatch {
                    operand: "f",
                    expected: format!("length {n} for every user"),
                    actual: format!("length {} at user {idx}", fk.len()),
                });
            }
        }
        let h = f
            .iter()
            .map(|fk| cascaded_channel(&g, fk, &phi))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            topology,
            g,
            f,
            phi,
            h,
        })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Base-station → surface channel matrix, `N x M`.
    pub fn g(&self) -> &CMatrix {
        &self.g
    }

    /// Surface → user channel vectors, one length-`N` vector per user.
    pub fn f(&self) -> &[CVector] {
        &self.f
    }

    /// Unit-modulus reflection coefficients, length `N`.
    pub fn phi(&self) -> &CVector {
        &self.phi
    }

    /// Effective channels, one length-`M` column vector per user. The SINR
    /// formulas always use the conjugate transpose `h_k^H`.
    pub fn h(&self) -> &[CVector] {
        &self.h
    }

    pub fn user_channel(&self, k: usize) -> &CVector {
        &self.h[k]
    }
}

/// Computes the effective channel `h_k` with `h_k^H = f_k^H diag(conj(phi)) G`.
///
/// Returns the column vector `h_k = G^H (phi ∘ f_k)`, whose conjugate
/// transpose is the row appearing in the SINR formulas.
pub fn cascaded_channel(g: &CMatrix, f_k: &CVector, phi: &CVector) -> Result<CVector> {
    let n = g.nrows();
    if f_k.len() != n {
        return Err(Error::DimensionMismatch {
            operand: "f_k",
            expected: format!("length {n}"),
            actual: format!("length {}", f_k.len()),
        });
    }
    if phi.len() != n {
        return Err(Error::DimensionMismatch {
            operand: "phi",
            expected: format!("length {n}"),
            actual: format!("length {}", phi.len()),
        });
    }
    for (index, p) in phi.iter().enumerate() {
        let modulus = p.norm();
        if (modulus - 1.0).abs() > UNIT_MODULUS_TOL {
            return Err(Error::NonUnitModulus { index, modulus });
        }
    }
    Ok(g.ad_mul(&phi.component_mul(f_k)))
}

/// Draws one channel realization, deterministically for a fixed seed.
///
/// `G` and every `f_k` get i.i.d. circularly-symmetric complex Gaussian
/// entries (zero mean, unit variance per entry); `phi` entries are uniform
/// on the complex unit circle. Draw order is fixed: `G` row-major, then
/// `f_0 .. f_{K-1}`, then `phi`.
pub fn generate_instance(
    topology: Topology,
    seed: u64,
    model: ChannelModel,
) -> Result<ChannelInstance> {
    topology.validate()?;
    let ChannelModel::Rayleigh = model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Topology { m, n, k } = topology;

    let mut g = CMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            g[(i, j)] = cscg_unit_variance(&mut rng);
        }
    }
    let f: Vec<CVector> = (0..k)
        .map(|_| DVector::from_fn(n, |_, _| cscg_unit_variance(&mut rng)))
        .collect();
    let phi = DVector::from_fn(n, |_, _| {
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        Complex64::from_polar(1.0, angle)
    });

    ChannelInstance::from_parts(g, f, phi)
}

/// One CN(0, 1) draw: real and imaginary parts N(0, 1/2).
fn cscg_unit_variance<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

// --- serialization ---------------------------------------------------------
//
// On disk an instance is `{"G": [[..row..], ..], "f": [[..], ..], "phi": [..]}`
// with every complex number encoded as `[re, im]`. The derived `h` is never
// written and never trusted from disk; deserialization recomputes it.

#[derive(Serialize, Deserialize)]
struct ChannelInstanceWire {
    #[serde(rename = "G")]
    g: Vec<Vec<Complex64>>,
    f: Vec<Vec<Complex64>>,
    phi: Vec<Complex64>,
}

impl Serialize for ChannelInstance {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let wire = ChannelInstanceWire {
            g: (0..self.g.nrows())
                .map(|i| self.g.row(i).iter().cloned().collect())
                .collect(),
            f: self.f.iter().map(|fk| fk.iter().cloned().collect()).collect(),
            phi: self.phi.iter().cloned().collect(),
        };
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ChannelInstance {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = ChannelInstanceWire::deserialize(deserializer)?;
        let n = wire.g.len();
        let m = wire.g.first().map_or(0, Vec::len);
        if wire.g.iter().any(|row| row.len() != m) {
            return Err(serde::de::Error::custom("ragged rows in G"));
        }
        let g = CMatrix::from_fn(n, m, |i, j| wire.g[i][j]);
        let f = wire.f.into_iter().map(DVector::from_vec).collect();
        let phi = DVector::from_vec(wire.phi);
        ChannelInstance::from_parts(g, f, phi).map_err(serde::de::Error::custom)
    }
}
