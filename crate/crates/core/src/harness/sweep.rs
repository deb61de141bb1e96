//! Monte Carlo BER sweeps over the AWGN channel.

use serde::{Deserialize, Serialize};

use crate::channel::modem::hard_decisions;
use crate::channel::{awgn, ldpc_decode, ldpc_encode, noise_variance, qpsk_llr, qpsk_modulate, ChannelError, LdpcCode};
use crate::rng::{derive_seed, SimRng};

/// Window bounds: the weak code must be above this post-decode BER...
pub const WEAK_BER_FLOOR: f64 = 1e-2;
/// ...while the strong code stays below this one.
pub const STRONG_BER_CEILING: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodedPoint {
    pub snr_db: f64,
    pub frames: usize,
    pub post_ber: f64,
    pub frame_error_rate: f64,
}

fn random_bits(rng: &mut SimRng, len: usize) -> Vec<u8> {
    (0..len).map(|_| (rng.next_u64() & 1) as u8).collect()
}

/// Post-decode message BER of `code` over `frames` random codewords.
pub fn coded_ber(code: &LdpcCode, snr_db: f64, frames: usize, max_iters: usize, seed: u64) -> Result<CodedPoint, ChannelError> {
    let var = noise_variance(snr_db);
    let mut errors = 0usize;
    let mut frame_errors = 0usize;
    for f in 0..frames {
        let frame_seed = derive_seed(seed, f as u64);
        let msg = random_bits(&mut SimRng::new(frame_seed), code.k);
        let symbols = qpsk_modulate(&ldpc_encode(code, &msg)?)?;
        let rx = awgn(&symbols, snr_db, derive_seed(frame_seed, 1));
        let out = ldpc_decode(code, &qpsk_llr(&rx, var), max_iters)?;
        let e = out.bits.iter().zip(&msg).filter(|(a, b)| a != b).count();
        errors += e;
        frame_errors += usize::from(e > 0 || !out.converged);
    }
    Ok(CodedPoint {
        snr_db,
        frames,
        post_ber: errors as f64 / (frames * code.k).max(1) as f64,
        frame_error_rate: frame_errors as f64 / frames.max(1) as f64,
    })
}

/// `(snr, strong, weak)` per grid point.
pub type SweepRow = (f64, CodedPoint, CodedPoint);

/// Runs both codes on the grid `start, start+step, ..., ≤ stop`.
pub fn cliff_sweep(
    strong: &LdpcCode,
    weak: &LdpcCode,
    start: f64,
    stop: f64,
    step: f64,
    frames: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, ChannelError> {
    if !(step > 0.0) || stop < start {
        return Err(ChannelError::InvalidParams(format!("bad sweep grid {start}..{stop} step {step}")));
    }
    let points = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..points)
        .map(|i| {
            let snr = start + step * i as f64;
            let s = derive_seed(seed, i as u64);
            Ok((
                snr,
                coded_ber(strong, snr, frames, max_iters, derive_seed(s, 0))?,
                coded_ber(weak, snr, frames, max_iters, derive_seed(s, 1))?,
            ))
        })
        .collect()
}

/// Grid points where the weak code has collapsed and the strong one has not.
pub fn protection_window(rows: &[SweepRow]) -> Vec<f64> {
    rows.iter()
        .filter(|(_, strong, weak)| weak.post_ber > WEAK_BER_FLOOR && strong.post_ber < STRONG_BER_CEILING)
        .map(|r| r.0)
        .collect()
}

/// Hard-decision BER of uncoded QPSK over `n_bits` random bits.
pub fn uncoded_ber(snr_db: f64, n_bits: usize, seed: u64) -> Result<f64, ChannelError> {
    let n_bits = n_bits + n_bits % 2;
    let bits = random_bits(&mut SimRng::new(seed), n_bits);
    let rx = awgn(&qpsk_modulate(&bits)?, snr_db, derive_seed(seed, 1));
    let errors = hard_decisions(&rx).iter().zip(&bits).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / n_bits as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{construct_ldpc, CodeRate};

    #[test]
    fn noiseless_points_are_clean() {
        let code = construct_ldpc(CodeRate::Half, 96, 3).unwrap();
        let p = coded_ber(&code, f64::INFINITY, 5, 10, 1).unwrap();
        assert_eq!((p.post_ber, p.frame_error_rate), (0.0, 0.0));
        assert_eq!(uncoded_ber(f64::INFINITY, 1000, 2).unwrap(), 0.0);
    }

    #[test]
    fn grid_and_window() {
        let strong = construct_ldpc(CodeRate::Half, 96, 3).unwrap();
        let weak = construct_ldpc(CodeRate::TwoThirds, 96, 3).unwrap();
        let rows = cliff_sweep(&strong, &weak, 0.0, 1.0, 0.25, 2, 5, 0).unwrap();
        let snrs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        assert_eq!(snrs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(cliff_sweep(&strong, &weak, 1.0, 0.0, 0.25, 2, 5, 0).is_err());

        let point = |ber| CodedPoint { snr_db: 0.0, frames: 1, post_ber: ber, frame_error_rate: 0.0 };
        let rows = vec![
            (1.0, point(1e-3), point(0.1)),
            (2.0, point(0.0), point(0.05)),
            (3.0, point(0.0), point(1e-3)),
        ];
        assert_eq!(protection_window(&rows), vec![2.0]);
    }
}
