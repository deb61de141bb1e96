//! Gray-mapped QPSK (4QAM) with unit symbol energy, and an AWGN channel.

use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

use super::ldpc::LLR_CLAMP;
use super::ChannelError;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Symbol {
    pub re: f64,
    pub im: f64,
}

const AMP: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Bit pairs `(b0, b1)` map to `((1-2·b0)/√2, (1-2·b1)/√2)`.
pub fn qpsk_modulate(bits: &[u8]) -> Result<Vec<Symbol>, ChannelError> {
    if bits.len() % 2 != 0 {
        return Err(ChannelError::OddBitCount(bits.len()));
    }
    let level = |b: u8| if b & 1 == 0 { AMP } else { -AMP };
    Ok(bits
        .chunks_exact(2)
        .map(|p| Symbol { re: level(p[0]), im: level(p[1]) })
        .collect())
}

/// `2·y/σ²` per component; positive favours 0. With `σ² = 0` the LLRs are
/// clamped to `±LLR_CLAMP` by sign.
pub fn qpsk_llr(received: &[Symbol], noise_var: f64) -> Vec<f64> {
    let llr = |y: f64| {
        if noise_var > 0.0 {
            (2.0 * y / noise_var).clamp(-LLR_CLAMP, LLR_CLAMP)
        } else if y > 0.0 {
            LLR_CLAMP
        } else if y < 0.0 {
            -LLR_CLAMP
        } else {
            0.0
        }
    };
    received.iter().flat_map(|s| [llr(s.re), llr(s.im)]).collect()
}

/// Sign decisions: negative component means bit 1.
pub fn hard_decisions(received: &[Symbol]) -> Vec<u8> {
    received
        .iter()
        .flat_map(|s| [u8::from(s.re < 0.0), u8::from(s.im < 0.0)])
        .collect()
}

/// Per-real-dimension noise variance for Es/N0 = `snr_db` and Es = 1.
/// Infinite SNR gives zero.
pub fn noise_variance(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        1.0 / (2.0 * 10f64.powf(snr_db / 10.0))
    }
}

/// Adds seeded Gaussian noise to both components of every symbol. One
/// Box–Muller pair is drawn per symbol, real part first.
pub fn awgn(symbols: &[Symbol], snr_db: f64, seed: u64) -> Vec<Symbol> {
    let var = noise_variance(snr_db);
    if var == 0.0 {
        return symbols.to_vec();
    }
    let sigma = var.sqrt();
    let mut rng = SimRng::new(seed);
    symbols
        .iter()
        .map(|s| {
            let (a, b) = rng.gaussian_pair();
            Symbol { re: s.re + sigma * a, im: s.im + sigma * b }
        })
        .collect()
}
