//! Message-wise unequal error protection for SEBF frames.
//!
//! Class A carries the header, both bitmaps, the CRC trailer and the labels
//! of class-A cells; it is sent at rate 1/2. Class B carries the remaining
//! labels at rate 2/3. Each class is prefixed with its bit length as a
//! u32 LE and zero-padded to whole LDPC blocks. All symbols share one noise
//! stream, class A first.

use serde::{Deserialize, Serialize};

use crate::bits::{bits_to_bytes, bytes_to_bits};
use crate::rng::{derive_seed, SimRng};
use crate::semcodec::bitstream::{bitmap_len, crc32, serialize_frame, CRC_LEN, HEADER_LEN, MAGIC};
use crate::semcodec::SemanticFrame;

use super::ldpc::{construct_ldpc, ldpc_decode, ldpc_encode, CodeRate, LdpcCode, DEFAULT_N};
use super::modem::{awgn, hard_decisions, noise_variance, qpsk_llr, qpsk_modulate, Symbol};
use super::ChannelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Es/N0 in dB; `f64::INFINITY` is a noiseless channel.
    pub snr_db: f64,
    pub seed: u64,
    pub max_bp_iters: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { snr_db: 4.0, seed: 0, max_bp_iters: 50 }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.max_bp_iters == 0 || self.snr_db.is_nan() {
            return Err(ChannelError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// The pair of codes the framer uses.
#[derive(Debug, Clone)]
pub struct UepCodes {
    pub class_a: LdpcCode,
    pub class_b: LdpcCode,
}

impl UepCodes {
    /// Rate 1/2 and rate 2/3 codes of length 648.
    pub fn standard(seed: u64) -> Result<Self, ChannelError> {
        Ok(Self {
            class_a: construct_ldpc(CodeRate::Half, DEFAULT_N, seed)?,
            class_b: construct_ldpc(CodeRate::TwoThirds, DEFAULT_N, derive_seed(seed, 1))?,
        })
    }
}

/// Decoder-side view of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOutcome {
    /// Decoded message bits, prefix and padding included.
    pub bits: Vec<u8>,
    /// Every block converged.
    pub converged: bool,
    pub failed_blocks: usize,
    /// Hard-decision BER on the coded bits before decoding.
    pub pre_ber: f64,
    /// BER of the decoded message bits.
    pub post_ber: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedTransmission {
    /// Sent message bits of each class, prefix and padding included.
    pub class_a_bits: Vec<u8>,
    pub class_b_bits: Vec<u8>,
    pub class_a_blocks: usize,
    pub class_b_blocks: usize,
    pub symbols: Vec<Symbol>,
    pub received_symbols: Vec<Symbol>,
    pub class_a: ClassOutcome,
    pub class_b: ClassOutcome,
    /// Reassembled SEBF bytes, or `None` when the frame is lost.
    pub received: Option<Vec<u8>>,
}

impl ProtectedTransmission {
    pub fn is_lost(&self) -> bool {
        self.received.is_none()
    }
}

pub fn measure_ber(sent: &[u8], received: &[u8]) -> Result<f64, ChannelError> {
    if sent.len() != received.len() {
        return Err(ChannelError::WrongLength { expected: sent.len(), got: received.len() });
    }
    if sent.is_empty() {
        return Ok(0.0);
    }
    let errors = sent.iter().zip(received).filter(|(a, b)| (*a ^ *b) & 1 == 1).count();
    Ok(errors as f64 / sent.len() as f64)
}

/// Channel symbols per source pixel of the original image.
pub fn compute_cbr(n_symbols: usize, original_width: usize, original_height: usize) -> f64 {
    n_symbols as f64 / (original_width * original_height) as f64
}

/// Length prefix plus zero padding to a whole number of `k`-bit blocks.
pub fn frame_class(bits: &[u8], k: usize) -> Vec<u8> {
    let len = u32::try_from(bits.len()).expect("class stream fits u32");
    let mut out = bytes_to_bits(&len.to_le_bytes());
    out.extend_from_slice(bits);
    let padded = out.len().div_ceil(k) * k;
    out.resize(padded, 0);
    out
}

/// Structure of a serialized frame, recovered from its class-A part.
struct Layout {
    prefix_len: usize,
    /// `(start bit within the payload, bit count, class A)` per cell.
    cells: Vec<(usize, usize, bool)>,
}

impl Layout {
    fn from_prefix(prefix: &[u8]) -> Option<Self> {
        if prefix.len() < HEADER_LEN || &prefix[..4] != MAGIC {
            return None;
        }
        let u16_at = |i: usize| usize::from(u16::from_le_bytes([prefix[i], prefix[i + 1]]));
        let n = u16_at(13) * u16_at(15);
        let (bc, bf) = (usize::from(prefix[17]), usize::from(prefix[18]));
        let bm = bitmap_len(n);
        if prefix.len() < HEADER_LEN + 2 * bm {
            return None;
        }
        let fine = bytes_to_bits(&prefix[HEADER_LEN..HEADER_LEN + bm]);
        let class = bytes_to_bits(&prefix[HEADER_LEN + bm..HEADER_LEN + 2 * bm]);
        let mut cells = Vec::with_capacity(n);
        let mut at = 0;
        for c in 0..n {
            let width = if fine[c] == 1 { 4 * bf } else { bc };
            cells.push((at, width, class[c] == 1));
            at += width;
        }
        Some(Self { prefix_len: HEADER_LEN + 2 * bm, cells })
    }

    fn payload_bits(&self) -> usize {
        self.cells.last().map_or(0, |&(s, w, _)| s + w)
    }

    fn class_bits(&self, class_a: bool) -> usize {
        self.cells.iter().filter(|c| c.2 == class_a).map(|c| c.1).sum()
    }
}

/// Splits SEBF bytes into the unframed class A and class B bit streams.
pub fn split_classes(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>), ChannelError> {
    let layout = Layout::from_prefix(bytes).ok_or_else(|| ChannelError::Inconsistent("not an SEBF frame".into()))?;
    let payload_bytes = layout.payload_bits().div_ceil(8);
    if bytes.len() != layout.prefix_len + payload_bytes + CRC_LEN {
        return Err(ChannelError::Inconsistent("length does not match the frame header".into()));
    }
    let payload = bytes_to_bits(&bytes[layout.prefix_len..layout.prefix_len + payload_bytes]);
    let mut a = bytes_to_bits(&bytes[..layout.prefix_len]);
    a.extend(bytes_to_bits(&bytes[bytes.len() - CRC_LEN..]));
    let mut b = Vec::new();
    for &(start, width, in_a) in &layout.cells {
        let bits = &payload[start..start + width];
        if in_a {
            a.extend_from_slice(bits);
        } else {
            b.extend_from_slice(bits);
        }
    }
    Ok((a, b))
}

/// Inverse of [`split_classes`]. `class_b` may be longer than needed (padding)
/// or shorter (missing bits read as zero). Returns `None` when class A does
/// not describe a frame.
pub fn join_classes(class_a: &[u8], class_b: &[u8]) -> Option<Vec<u8>> {
    if class_a.len() < HEADER_LEN * 8 {
        return None;
    }
    let header = bits_to_bytes(&class_a[..HEADER_LEN * 8]);
    let bm = bitmap_len(usize::from(u16::from_le_bytes([header[13], header[14]])) * usize::from(u16::from_le_bytes([header[15], header[16]])));
    let prefix_bits = (HEADER_LEN + 2 * bm) * 8;
    if class_a.len() < prefix_bits + CRC_LEN * 8 {
        return None;
    }
    let prefix = bits_to_bytes(&class_a[..prefix_bits]);
    let layout = Layout::from_prefix(&prefix)?;
    if class_a.len() != prefix_bits + CRC_LEN * 8 + layout.class_bits(true) {
        return None;
    }
    let crc = bits_to_bytes(&class_a[prefix_bits..prefix_bits + CRC_LEN * 8]);
    let mut a_at = prefix_bits + CRC_LEN * 8;
    let mut b_at = 0;
    let mut payload = Vec::with_capacity(layout.payload_bits());
    for &(_, width, in_a) in &layout.cells {
        if in_a {
            payload.extend_from_slice(&class_a[a_at..a_at + width]);
            a_at += width;
        } else {
            for i in 0..width {
                payload.push(class_b.get(b_at + i).copied().unwrap_or(0));
            }
            b_at += width;
        }
    }
    let mut out = prefix;
    out.extend(bits_to_bytes(&payload));
    out.extend(crc);
    Some(out)
}

/// Encodes, modulates and sends several streams over one noise realization,
/// then decodes each. Streams must already be block-aligned for their code.
fn send_streams(streams: &[(&[u8], &LdpcCode)], cfg: &ChannelConfig) -> Result<(Vec<Symbol>, Vec<Symbol>, Vec<ClassOutcome>), ChannelError> {
    cfg.validate()?;
    let mut coded: Vec<Vec<u8>> = Vec::new();
    let mut symbols = Vec::new();
    for (bits, code) in streams {
        let mut c = Vec::with_capacity(bits.len() / code.k * code.n);
        for block in bits.chunks(code.k) {
            c.extend(ldpc_encode(code, block)?);
        }
        symbols.extend(qpsk_modulate(&c)?);
        coded.push(c);
    }
    let received = awgn(&symbols, cfg.snr_db, cfg.seed);
    let var = noise_variance(cfg.snr_db);

    let mut outcomes = Vec::with_capacity(streams.len());
    let mut sym_at = 0;
    for ((bits, code), sent_coded) in streams.iter().zip(&coded) {
        let n_sym = sent_coded.len() / 2;
        let rx = &received[sym_at..sym_at + n_sym];
        sym_at += n_sym;
        let pre_ber = measure_ber(sent_coded, &hard_decisions(rx))?;
        let llrs = qpsk_llr(rx, var);
        let mut decoded = Vec::with_capacity(bits.len());
        let mut failed = 0;
        for block in llrs.chunks(code.n) {
            let r = ldpc_decode(code, block, cfg.max_bp_iters)?;
            failed += usize::from(!r.converged);
            decoded.extend(r.bits);
        }
        outcomes.push(ClassOutcome {
            post_ber: measure_ber(bits, &decoded)?,
            bits: decoded,
            converged: failed == 0,
            failed_blocks: failed,
            pre_ber,
        });
    }
    Ok((symbols, received, outcomes))
}

fn unframe(bits: &[u8]) -> Option<&[u8]> {
    if bits.len() < 32 {
        return None;
    }
    let len = u32::from_le_bytes(bits_to_bytes(&bits[..32]).try_into().ok()?) as usize;
    bits.get(32..32 + len)
}

/// Sends one serialized frame with message-wise UEP.
///
/// `frame_bytes` must be the serialization of `frame`. The frame is lost
/// when any class-A block fails to converge or class A does not parse.
/// Class-B residual errors pass through to the decoder.
pub fn uep_frame(
    frame_bytes: &[u8],
    frame: &SemanticFrame,
    codes: &UepCodes,
    cfg: &ChannelConfig,
) -> Result<ProtectedTransmission, ChannelError> {
    if serialize_frame(frame).map_err(|e| ChannelError::Inconsistent(e.to_string()))? != frame_bytes {
        return Err(ChannelError::Inconsistent("bytes are not the serialization of the frame".into()));
    }
    let (a, b) = split_classes(frame_bytes)?;
    let class_a_bits = frame_class(&a, codes.class_a.k);
    let class_b_bits = frame_class(&b, codes.class_b.k);
    let (symbols, received_symbols, mut outcomes) =
        send_streams(&[(&class_a_bits, &codes.class_a), (&class_b_bits, &codes.class_b)], cfg)?;
    let class_b = outcomes.pop().expect("two classes");
    let class_a = outcomes.pop().expect("two classes");

    let received = if class_a.converged {
        // Class B's own length prefix may be damaged; skip it and let the
        // class-A structure say how many bits to take.
        unframe(&class_a.bits).and_then(|a_rx| join_classes(a_rx, class_b.bits.get(32..).unwrap_or(&[])))
    } else {
        None
    };
    Ok(ProtectedTransmission {
        class_a_blocks: class_a_bits.len() / codes.class_a.k,
        class_b_blocks: class_b_bits.len() / codes.class_b.k,
        class_a_bits,
        class_b_bits,
        symbols,
        received_symbols,
        class_a,
        class_b,
        received,
    })
}

/// Sends the whole frame as a single class with one code. Any failed block
/// loses the frame.
pub fn send_unprotected(frame_bytes: &[u8], code: &LdpcCode, cfg: &ChannelConfig) -> Result<ProtectedTransmission, ChannelError> {
    let bits = frame_class(&bytes_to_bits(frame_bytes), code.k);
    let (symbols, received_symbols, mut outcomes) = send_streams(&[(&bits, code)], cfg)?;
    let outcome = outcomes.pop().expect("one class");
    let received = if outcome.converged {
        unframe(&outcome.bits).filter(|b| b.len() % 8 == 0).map(bits_to_bytes)
    } else {
        None
    };
    Ok(ProtectedTransmission {
        class_a_blocks: bits.len() / code.k,
        class_b_blocks: 0,
        class_a_bits: bits,
        class_b_bits: Vec::new(),
        symbols,
        received_symbols,
        class_a: outcome,
        class_b: ClassOutcome { bits: Vec::new(), converged: true, failed_blocks: 0, pre_ber: 0.0, post_ber: 0.0 },
        received,
    })
}

/// The frame with its class flags shuffled: same number of protected
/// cells, chosen without regard to importance.
pub fn permute_class_flags(frame: &SemanticFrame, seed: u64) -> SemanticFrame {
    let mut out = frame.clone();
    SimRng::new(seed).shuffle(&mut out.class_flags);
    out
}

const DUMP_MAGIC: &[u8; 4] = b"SEBT";

/// Everything needed to replay a transmission offline.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticDump {
    pub class_a_bits: Vec<u8>,
    pub class_b_bits: Vec<u8>,
    pub symbols: Vec<Symbol>,
    pub received_symbols: Vec<Symbol>,
    pub received: Option<Vec<u8>>,
}

impl From<&ProtectedTransmission> for DiagnosticDump {
    fn from(t: &ProtectedTransmission) -> Self {
        Self {
            class_a_bits: t.class_a_bits.clone(),
            class_b_bits: t.class_b_bits.clone(),
            symbols: t.symbols.clone(),
            received_symbols: t.received_symbols.clone(),
            received: t.received.clone(),
        }
    }
}

fn push_section(out: &mut Vec<u8>, count: usize, body: &[u8]) {
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(body);
}

fn symbol_bytes(symbols: &[Symbol]) -> Vec<u8> {
    symbols.iter().flat_map(|s| [s.re.to_le_bytes(), s.im.to_le_bytes()]).flatten().collect()
}

impl DiagnosticDump {
    /// `"SEBT" | u8 1 | u8 lost` then u32-prefixed sections (bit counts for
    /// bit streams, symbol counts for symbols, byte count for the frame)
    /// and a CRC-32 trailer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = DUMP_MAGIC.to_vec();
        out.push(1);
        out.push(u8::from(self.received.is_none()));
        push_section(&mut out, self.class_a_bits.len(), &bits_to_bytes(&self.class_a_bits));
        push_section(&mut out, self.class_b_bits.len(), &bits_to_bytes(&self.class_b_bits));
        push_section(&mut out, self.symbols.len(), &symbol_bytes(&self.symbols));
        push_section(&mut out, self.received_symbols.len(), &symbol_bytes(&self.received_symbols));
        let frame = self.received.as_deref().unwrap_or(&[]);
        push_section(&mut out, frame.len(), frame);
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ChannelError> {
        let bad = |m: &str| ChannelError::Inconsistent(format!("diagnostic dump: {m}"));
        if bytes.len() < 10 || &bytes[..4] != DUMP_MAGIC || bytes[4] != 1 {
            return Err(bad("bad header"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
            return Err(bad("CRC mismatch"));
        }
        let lost = body[5] == 1;
        let mut at = 6;
        let mut section = |unit: fn(usize) -> usize| -> Result<(usize, &[u8]), ChannelError> {
            let count = body.get(at..at + 4).ok_or_else(|| bad("truncated"))?;
            let count = u32::from_le_bytes(count.try_into().expect("4 bytes")) as usize;
            let len = unit(count);
            let data = body.get(at + 4..at + 4 + len).ok_or_else(|| bad("truncated"))?;
            at += 4 + len;
            Ok((count, data))
        };
        let bits = |(count, data): (usize, &[u8])| bytes_to_bits(data)[..count].to_vec();
        let syms = |(_, data): (usize, &[u8])| {
            data.chunks_exact(16)
                .map(|c| Symbol {
                    re: f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    im: f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                })
                .collect::<Vec<_>>()
        };
        let class_a_bits = bits(section(|n| n.div_ceil(8))?);
        let class_b_bits = bits(section(|n| n.div_ceil(8))?);
        let symbols = syms(section(|n| n * 16)?);
        let received_symbols = syms(section(|n| n * 16)?);
        let frame = section(|n| n)?.1.to_vec();
        if at != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            class_a_bits,
            class_b_bits,
            symbols,
            received_symbols,
            received: if lost { None } else { Some(frame) },
        })
    }
}
