//! I.i.d. conductivity fields with reproducible, splittable randomness.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{EdgeField, TorusLattice};

/// Law of a single edge conductivity, supported in `[alpha, beta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConductivityLaw {
    /// `alpha` with probability `p`, otherwise `beta`.
    TwoPoint {
        alpha: f64,
        beta: f64,
        p: f64,
    },
    Uniform {
        alpha: f64,
        beta: f64,
    },
    /// `ln a` uniform on `[ln alpha, ln beta]`.
    LogUniform {
        alpha: f64,
        beta: f64,
    },
}

impl ConductivityLaw {
    pub fn two_point(alpha: f64, beta: f64, p: f64) -> Result<Self> {
        Self::TwoPoint { alpha, beta, p }.validated()
    }

    pub fn uniform(alpha: f64, beta: f64) -> Result<Self> {
        Self::Uniform { alpha, beta }.validated()
    }

    pub fn log_uniform(alpha: f64, beta: f64) -> Result<Self> {
        Self::LogUniform { alpha, beta }.validated()
    }

    /// Two-point law `{1/4, 4}` with equal weights, self-dual in `d = 2`.
    pub fn default_study() -> Self {
        Self::TwoPoint {
            alpha: 0.25,
            beta: 4.0,
            p: 0.5,
        }
    }

    pub fn validated(self) -> Result<Self> {
        let (a, b) = self.bounds();
        if !(a.is_finite() && b.is_finite() && a > 0.0 && a <= b) {
            return Err(Error::InvalidLaw(format!(
                "need 0 < alpha <= beta < inf, got [{a}, {b}]"
            )));
        }
        if let Self::TwoPoint { p, .. } = self {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidLaw(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(self)
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Self::TwoPoint { alpha, beta, .. } | Self::Uniform { alpha, beta } | Self::LogUniform { alpha, beta } => {
                (alpha, beta)
            }
        }
    }

    /// Draw one conductivity from a uniform variate `u` in `[0, 1)`.
    fn transform(&self, u: f64) -> f64 {
        match *self {
            Self::TwoPoint { alpha, beta, p } => {
                if u < p {
                    alpha
                } else {
                    beta
                }
            }
            Self::Uniform { alpha, beta } => (alpha + (beta - alpha) * u).clamp(alpha, beta),
            Self::LogUniform { alpha, beta } => {
                let (la, lb) = (alpha.ln(), beta.ln());
                (la + (lb - la) * u).exp().clamp(alpha, beta)
            }
        }
    }

    /// `sqrt(alpha beta)` when the law is invariant under `a -> alpha beta / a`
    /// and `d = 2`; square-lattice duality then pins `a_hom`.
    pub fn self_dual_value(&self, dim: usize) -> Option<f64> {
        if dim != 2 {
            return None;
        }
        match *self {
            Self::TwoPoint { alpha, beta, p } if p == 0.5 || alpha == beta => Some((alpha * beta).sqrt()),
            Self::LogUniform { alpha, beta } => Some((alpha * beta).sqrt()),
            _ => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        law_moments(self).1 == 0.0
    }
}

impl fmt::Display for ConductivityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::TwoPoint { alpha, beta, p } => write!(f, "twopoint:{alpha},{beta},{p}"),
            Self::Uniform { alpha, beta } => write!(f, "uniform:{alpha},{beta}"),
            Self::LogUniform { alpha, beta } => write!(f, "loguniform:{alpha},{beta}"),
        }
    }
}

impl FromStr for ConductivityLaw {
    type Err = Error;

    /// `twopoint:0.25,4,0.5 | uniform:1,2 | loguniform:0.1,10`
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidLaw(format!("expected <name>:<params>, got {s:?}")))?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidLaw(format!("bad number {t:?} in {s:?}")))
            })
            .collect::<Result<_>>()?;
        let arity = |k: usize| -> Result<()> {
            if nums.len() == k {
                Ok(())
            } else {
                Err(Error::InvalidLaw(format!(
                    "{name} takes {k} parameters, got {}",
                    nums.len()
                )))
            }
        };
        match name.trim().to_ascii_lowercase().as_str() {
            "twopoint" | "two_point" => {
                arity(3)?;
                Self::two_point(nums[0], nums[1], nums[2])
            }
            "uniform" => {
                arity(2)?;
                Self::uniform(nums[0], nums[1])
            }
            "loguniform" | "log_uniform" => {
                arity(2)?;
                Self::log_uniform(nums[0], nums[1])
            }
            other => Err(Error::InvalidLaw(format!("unknown law {other:?}"))),
        }
    }
}

/// Closed-form `(mean, variance)` of a single conductivity.
pub fn law_moments(law: &ConductivityLaw) -> (f64, f64) {
    match *law {
        ConductivityLaw::TwoPoint { alpha, beta, p } => {
            let mean = p * alpha + (1.0 - p) * beta;
            (mean, p * (1.0 - p) * (beta - alpha).powi(2))
        }
        ConductivityLaw::Uniform { alpha, beta } => ((alpha + beta) / 2.0, (beta - alpha).powi(2) / 12.0),
        ConductivityLaw::LogUniform { alpha, beta } => {
            if alpha == beta {
                return (alpha, 0.0);
            }
            let w = beta.ln() - alpha.ln();
            let mean = (beta - alpha) / w;
            let second = (beta * beta - alpha * alpha) / (2.0 * w);
            (mean, (second - mean * mean).max(0.0))
        }
    }
}

/// Purpose tags keeping streams for different uses apart.
pub mod purpose {
    pub const ENVIRONMENT: u64 = 0x656e_7669;
    pub const TEST_FIELD: u64 = 0x7465_7374;
    pub const PROBE: u64 = 0x7072_6f62;
}

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub base_seed: u64,
    pub replica_index: u64,
    pub purpose: u64,
}

impl StreamKey {
    pub fn new(base_seed: u64, replica_index: u64, purpose: u64) -> Self {
        Self {
            base_seed,
            replica_index,
            purpose,
        }
    }

    pub fn environment(base_seed: u64, replica_index: u64) -> Self {
        Self::new(base_seed, replica_index, purpose::ENVIRONMENT)
    }

    /// ChaCha keyed by `(base_seed, purpose)` on stream `replica_index`.
    /// The output depends only on the key, never on call order.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.base_seed ^ self.purpose.rotate_left(32);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.replica_index);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One independent draw per canonical edge, in edge-index order.
pub fn sample_environment(law: &ConductivityLaw, lattice: &TorusLattice, key: StreamKey) -> EdgeField {
    sample_environment_from(law, lattice, &mut key.rng())
}

/// Draws the next field from an existing generator.
pub fn sample_environment_from(law: &ConductivityLaw, lattice: &TorusLattice, rng: &mut impl Rng) -> EdgeField {
    let values = (0..lattice.num_edges())
        .map(|_| law.transform(rng.random::<f64>()))
        .collect();
    EdgeField::from_values(*lattice, values).expect("sampled values are finite and sized")
}
