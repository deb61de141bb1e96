//! Channel coding and the simulated physical layer: LDPC codes, QPSK over
//! AWGN, message-wise class framing and Seb-wise label assignment.

pub mod labels;
pub mod ldpc;
pub mod modem;
pub mod uep;

use thiserror::Error;

pub use labels::assign_labels;
pub use ldpc::{construct_ldpc, ldpc_decode, ldpc_encode, CodeRate, DecodeResult, LdpcCode};
pub use modem::{awgn, noise_variance, qpsk_llr, qpsk_modulate, Symbol};
pub use uep::{
    compute_cbr, measure_ber, permute_class_flags, send_unprotected, uep_frame, ChannelConfig,
    ClassOutcome, DiagnosticDump, ProtectedTransmission, UepCodes,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("QPSK needs an even number of bits, got {0}")]
    OddBitCount(usize),
    #[error("no full-rank parity-check matrix from seed {seed} in {attempts} attempts")]
    ConstructionFailed { seed: u64, attempts: u64 },
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("inconsistent frame: {0}")]
    Inconsistent(String),
}
