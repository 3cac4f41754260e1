//! Priors, output channels, spreading-factor distributions, and the
//! input/output function pairs consumed by message passing and state
//! evolution.
//!
//! Conventions: `input_moments` returns the posterior mean and *second moment*
//! of a single component under a Gaussian cavity field, i.e. f and f_II with
//! f_II = Σ ∂_T f + f². `output_score` returns (g, ∂_ω g) of the output
//! channel at a Gaussian belief N(ω, V) for the clean signal.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{h_log_deriv, SIGMA_MIN, V_MIN};

/// Noise levels below this are treated as exactly noiseless.
pub const NOISELESS_THRESHOLD: f64 = 1e-200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorKind {
    /// x ∈ {−1, +1} equiprobable.
    Ising,
    /// x ~ N(0, 1).
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChannelKind {
    /// y = π + Δ·w with w ~ N(0,1).
    AdditiveGaussian { noise_std: f64 },
    /// y = sgn(π) ∈ {−1, +1}.
    Sign,
}

impl ChannelKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            ChannelKind::AdditiveGaussian { noise_std } => {
                if !(noise_std.is_finite() && *noise_std > 0.0) {
                    return Err(Error::Domain(format!(
                        "noise_std must be finite and positive, got {noise_std}"
                    )));
                }
                Ok(())
            }
            ChannelKind::Sign => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpreadingKind {
    /// F ≡ 1 (CP-decomposition layout).
    Deterministic,
    /// F ∈ {−1, +1} equiprobable.
    Rademacher,
    /// F ~ N(0, 1).
    GaussianUnit,
}

/// Posterior mean / second moment under prior and cavity field (Σ, T).
pub fn input_moments(prior: PriorKind, sigma: f64, t_field: f64) -> Result<(f64, f64)> {
    if !sigma.is_finite() || !t_field.is_finite() {
        return Err(Error::NonFinite {
            context: "input_moments",
            detail: format!("sigma = {sigma}, T = {t_field}"),
        });
    }
    let sigma = sigma.max(SIGMA_MIN);
    Ok(input_moments_nat(prior, 1.0 / sigma, t_field / sigma))
}

/// Same as [`input_moments`] in the natural parameters a = 1/Σ, b = T/Σ, which
/// is the form in which the message-passing cavity sums produce them.
#[inline]
pub fn input_moments_nat(prior: PriorKind, a: f64, b: f64) -> (f64, f64) {
    match prior {
        PriorKind::Ising => (b.tanh(), 1.0),
        PriorKind::Gaussian => {
            let f = b / (1.0 + a);
            (f, 1.0 / (1.0 + a) + f * f)
        }
    }
}

/// (g_out, ∂_ω g_out) at belief N(ω, V) for observation y.
pub fn output_score(channel: ChannelKind, omega: f64, y: f64, v: f64) -> Result<(f64, f64)> {
    if !omega.is_finite() || !v.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite {
            context: "output_score",
            detail: format!("omega = {omega}, y = {y}, V = {v}"),
        });
    }
    let v = v.max(V_MIN);
    match channel {
        ChannelKind::AdditiveGaussian { noise_std } => {
            let denom = v + noise_std * noise_std;
            Ok(((y - omega) / denom, -1.0 / denom))
        }
        ChannelKind::Sign => {
            if y != 1.0 && y != -1.0 {
                return Err(Error::Domain(format!("sign channel requires y = ±1, got {y}")));
            }
            let sqrt_v = v.sqrt();
            let x = -y * omega / sqrt_v;
            let r = h_log_deriv(x); // H'(x)/H(x), negative
            let g = -y / sqrt_v * r;
            // dR/dx = -xR - R², and dx/dω = -y/√V appears twice.
            let dg = (-x * r - r * r) / v;
            Ok((g, dg))
        }
    }
}

/// iid prior draws, deterministic for a given rng state.
pub fn sample_prior(prior: PriorKind, count: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match prior {
        PriorKind::Ising => (0..count).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect(),
        PriorKind::Gaussian => {
            (0..count).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
        }
    }
}

/// One spreading-factor draw.
pub fn sample_spreading(kind: SpreadingKind, rng: &mut ChaCha8Rng) -> f64 {
    match kind {
        SpreadingKind::Deterministic => 1.0,
        SpreadingKind::Rademacher => {
            if rng.gen::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        SpreadingKind::GaussianUnit => rng.sample(rand_distr::StandardNormal),
    }
}

/// Push the clean signal through the observation channel.
/// For the additive channel, `noise_draw` is a standard normal variate;
/// `noise_std` below [`NOISELESS_THRESHOLD`] is the documented noiseless flag
/// (y = π exactly). The sign channel resolves the probability-zero tie π = 0
/// to +1 for determinism.
pub fn channel_forward(channel: ChannelKind, pi: f64, noise_draw: f64) -> f64 {
    match channel {
        ChannelKind::AdditiveGaussian { noise_std } => {
            if noise_std < NOISELESS_THRESHOLD {
                pi
            } else {
                pi + noise_std * noise_draw
            }
        }
        ChannelKind::Sign => {
            if pi >= 0.0 {
                1.0
            } else {
                -1.0
            }
        }
    }
}
