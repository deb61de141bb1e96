//! Regular LDPC codes: seeded construction, systematic encoding and
//! normalized min-sum decoding.
//!
//! Bits are `u8` values 0 or 1. Codewords are laid out message first, then
//! parity; the stored parity-check matrix already has its columns permuted
//! into that order.

use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

use super::ChannelError;

pub const DEFAULT_N: usize = 648;
pub const COLUMN_DEGREE: usize = 3;
pub const MAX_CYCLE_PASSES: usize = 100;
pub const MAX_SEED_ATTEMPTS: u64 = 32;
pub const MIN_SUM_SCALE: f64 = 0.75;
/// Magnitude cap applied to incoming LLRs so infinities stay finite.
pub const LLR_CLAMP: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CodeRate {
    Half,
    TwoThirds,
}

impl CodeRate {
    /// `(numerator, denominator)`.
    pub fn fraction(self) -> (usize, usize) {
        match self {
            CodeRate::Half => (1, 2),
            CodeRate::TwoThirds => (2, 3),
        }
    }

    pub fn row_degree(self) -> usize {
        match self {
            CodeRate::Half => 6,
            CodeRate::TwoThirds => 9,
        }
    }

    pub fn parity_rows(self, n: usize) -> usize {
        let (num, den) = self.fraction();
        n * (den - num) / den
    }
}

/// Dense GF(2) row packed into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
struct BitRow(Vec<u64>);

impl BitRow {
    fn zeros(len: usize) -> Self {
        Self(vec![0; len.div_ceil(64)])
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn xor_with(&mut self, other: &BitRow) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }
    fn dot(&self, other: &BitRow) -> u8 {
        let ones: u32 = self.0.iter().zip(&other.0).map(|(a, b)| (a & b).count_ones()).sum();
        (ones & 1) as u8
    }
}

#[derive(Debug, Clone)]
pub struct LdpcCode {
    pub n: usize,
    pub k: usize,
    pub rate: CodeRate,
    /// Column indices of the ones in each check row, ascending.
    pub checks: Vec<Vec<usize>>,
    /// 4-cycles left after the resampling passes.
    pub residual_four_cycles: usize,
    /// Seed the final matrix came from (the requested seed plus retries).
    pub construction_seed: u64,
    /// `column_order[j]` is the column of the raw construction placed at `j`.
    pub column_order: Vec<usize>,
    /// Parity bit `i` is the GF(2) dot product of row `i` with the message.
    parity_map: Vec<BitRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// The `k` systematic bits of the hard decision.
    pub bits: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

impl LdpcCode {
    pub fn ones(&self) -> usize {
        self.checks.iter().map(Vec::len).sum()
    }

    /// `H·cᵀ` over GF(2).
    pub fn syndrome(&self, codeword: &[u8]) -> Vec<u8> {
        self.checks
            .iter()
            .map(|row| row.iter().fold(0u8, |acc, &c| acc ^ (codeword[c] & 1)))
            .collect()
    }

    pub fn is_codeword(&self, codeword: &[u8]) -> bool {
        codeword.len() == self.n && self.syndrome(codeword).iter().all(|&s| s == 0)
    }
}

/// Socket-permutation construction: `3n` column sockets are shuffled and dealt
/// to rows in consecutive runs of the row degree.
fn random_rows(n: usize, rate: CodeRate, rng: &mut SimRng) -> Vec<Vec<usize>> {
    let mut sockets: Vec<usize> = (0..n).flat_map(|c| [c; COLUMN_DEGREE]).collect();
    rng.shuffle(&mut sockets);
    sockets.chunks(rate.row_degree()).map(<[usize]>::to_vec).collect()
}

/// Positions `(row, slot)` of edges that close a 4-cycle or duplicate a column.
fn conflicts(rows: &[Vec<usize>], n: usize) -> Vec<(usize, usize)> {
    let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, row) in rows.iter().enumerate() {
        for &c in row {
            col_rows[c].push(r);
        }
    }
    let mut out = Vec::new();
    let mut shared = vec![0usize; rows.len()];
    for (r, row) in rows.iter().enumerate() {
        for (slot, &c) in row.iter().enumerate() {
            if row[..slot].contains(&c) {
                out.push((r, slot));
            }
        }
        // Count columns shared with each later row.
        let mut touched = Vec::new();
        for &c in row {
            for &r2 in &col_rows[c] {
                if r2 > r {
                    if shared[r2] == 0 {
                        touched.push(r2);
                    }
                    shared[r2] += 1;
                }
            }
        }
        for &r2 in &touched {
            if shared[r2] >= 2 {
                // Move the last shared column of this row.
                let slot = row.iter().rposition(|c| rows[r2].contains(c)).expect("shared column");
                out.push((r, slot));
            }
            shared[r2] = 0;
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn count_four_cycles(rows: &[Vec<usize>], n: usize) -> usize {
    let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, row) in rows.iter().enumerate() {
        for &c in row {
            col_rows[c].push(r);
        }
    }
    let mut total = 0;
    let mut shared = vec![0usize; rows.len()];
    for (r, row) in rows.iter().enumerate() {
        let mut touched = Vec::new();
        for &c in row {
            for &r2 in &col_rows[c] {
                if r2 > r {
                    if shared[r2] == 0 {
                        touched.push(r2);
                    }
                    shared[r2] += 1;
                }
            }
        }
        for &r2 in &touched {
            total += shared[r2] * (shared[r2] - 1) / 2;
            shared[r2] = 0;
        }
    }
    total
}

fn remove_four_cycles(rows: &mut [Vec<usize>], n: usize, rng: &mut SimRng) {
    for _ in 0..MAX_CYCLE_PASSES {
        let bad = conflicts(rows, n);
        if bad.is_empty() {
            return;
        }
        // Swap each offending edge's column with a random edge elsewhere;
        // both columns keep their degree.
        for (r, slot) in bad {
            let r2 = loop {
                let r2 = rng.below(rows.len());
                if r2 != r {
                    break r2;
                }
            };
            let slot2 = rng.below(rows[r2].len());
            let tmp = rows[r][slot];
            rows[r][slot] = rows[r2][slot2];
            rows[r2][slot2] = tmp;
        }
    }
}

/// Reduces `H` to `[A | I]` up to a column permutation. Returns the
/// permutation (message columns first) and the parity map rows, or `None`
/// if `H` is rank deficient.
fn systematic(rows: &[Vec<usize>], n: usize) -> Option<(Vec<usize>, Vec<BitRow>)> {
    let m = rows.len();
    let mut dense: Vec<BitRow> = rows
        .iter()
        .map(|row| {
            let mut b = BitRow::zeros(n);
            for &c in row {
                // Duplicate columns cancel over GF(2).
                b.0[c / 64] ^= 1 << (c % 64);
            }
            b
        })
        .collect();
    let mut pivot_cols = Vec::with_capacity(m);
    let mut col = 0;
    for r in 0..m {
        // Column pivoting: take the next column with a one at or below row r.
        let (pc, pr) = loop {
            if col == n {
                return None;
            }
            if let Some(pr) = (r..m).find(|&i| dense[i].get(col)) {
                break (col, pr);
            }
            col += 1;
        };
        dense.swap(r, pr);
        let pivot = dense[r].clone();
        for (i, row) in dense.iter_mut().enumerate() {
            if i != r && row.get(pc) {
                row.xor_with(&pivot);
            }
        }
        pivot_cols.push(pc);
        col += 1;
    }
    let is_pivot = {
        let mut v = vec![false; n];
        for &c in &pivot_cols {
            v[c] = true;
        }
        v
    };
    let message_cols: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
    let k = message_cols.len();
    // Row r reads p_r + Σ_j A[r][j] m_j = 0, so p_r = A_r · m.
    let parity_map = dense
        .iter()
        .map(|row| {
            let mut a = BitRow::zeros(k);
            for (j, &c) in message_cols.iter().enumerate() {
                if row.get(c) {
                    a.set(j);
                }
            }
            a
        })
        .collect();
    let mut order = message_cols;
    order.extend(pivot_cols);
    Some((order, parity_map))
}

/// Builds a regular code with column degree 3 and the row degree of `rate`.
pub fn construct_ldpc(rate: CodeRate, n: usize, seed: u64) -> Result<LdpcCode, ChannelError> {
    if n == 0 || n % 24 != 0 {
        return Err(ChannelError::InvalidParams(format!("block length {n} is not a positive multiple of 24")));
    }
    let m = rate.parity_rows(n);
    for attempt in 0..MAX_SEED_ATTEMPTS {
        let s = seed.wrapping_add(attempt);
        let mut rng = SimRng::new(s);
        let mut rows = random_rows(n, rate, &mut rng);
        debug_assert_eq!(rows.len(), m);
        remove_four_cycles(&mut rows, n, &mut rng);
        if rows.iter().any(|row| {
            let mut r = row.clone();
            r.sort_unstable();
            r.windows(2).any(|w| w[0] == w[1])
        }) {
            continue;
        }
        let Some((order, parity_map)) = systematic(&rows, n) else {
            continue;
        };
        let mut position = vec![0; n];
        for (j, &c) in order.iter().enumerate() {
            position[c] = j;
        }
        let residual = count_four_cycles(&rows, n);
        let checks: Vec<Vec<usize>> = rows
            .iter()
            .map(|row| {
                let mut r: Vec<usize> = row.iter().map(|&c| position[c]).collect();
                r.sort_unstable();
                r
            })
            .collect();
        return Ok(LdpcCode {
            n,
            k: n - m,
            rate,
            checks,
            residual_four_cycles: residual,
            construction_seed: s,
            column_order: order,
            parity_map,
        });
    }
    Err(ChannelError::ConstructionFailed { seed, attempts: MAX_SEED_ATTEMPTS })
}

/// Systematic encoding: the message followed by its parity bits.
pub fn ldpc_encode(code: &LdpcCode, message: &[u8]) -> Result<Vec<u8>, ChannelError> {
    if message.len() != code.k {
        return Err(ChannelError::WrongLength { expected: code.k, got: message.len() });
    }
    let mut packed = BitRow::zeros(code.k);
    for (i, &b) in message.iter().enumerate() {
        if b & 1 == 1 {
            packed.set(i);
        }
    }
    let mut out = Vec::with_capacity(code.n);
    out.extend(message.iter().map(|b| b & 1));
    out.extend(code.parity_map.iter().map(|row| row.dot(&packed)));
    Ok(out)
}

/// Normalized min-sum with a flooding schedule. Positive LLR favours 0.
///
/// The hard decision is checked before the first iteration and after each
/// one; a posterior of exactly zero counts as undecided and blocks
/// convergence.
pub fn ldpc_decode(code: &LdpcCode, llrs: &[f64], max_iters: usize) -> Result<DecodeResult, ChannelError> {
    if llrs.len() != code.n {
        return Err(ChannelError::WrongLength { expected: code.n, got: llrs.len() });
    }
    let channel: Vec<f64> = llrs
        .iter()
        .map(|&l| if l.is_nan() { 0.0 } else { l.clamp(-LLR_CLAMP, LLR_CLAMP) })
        .collect();

    // Edge e belongs to check `edge_check[e]` and variable `edge_var[e]`.
    let mut check_start = Vec::with_capacity(code.checks.len() + 1);
    let mut edge_var = Vec::with_capacity(code.ones());
    check_start.push(0);
    for row in &code.checks {
        edge_var.extend_from_slice(row);
        check_start.push(edge_var.len());
    }
    let mut var_edges: Vec<Vec<usize>> = vec![Vec::new(); code.n];
    for (e, &v) in edge_var.iter().enumerate() {
        var_edges[v].push(e);
    }

    let mut v2c: Vec<f64> = edge_var.iter().map(|&v| channel[v]).collect();
    let mut c2v = vec![0.0f64; edge_var.len()];
    let mut posterior = channel.clone();
    let mut hard = vec![0u8; code.n];

    let decided = |posterior: &[f64], hard: &mut [u8]| -> bool {
        let mut sure = true;
        for (h, &p) in hard.iter_mut().zip(posterior) {
            *h = u8::from(p < 0.0);
            sure &= p != 0.0;
        }
        sure && code.syndrome(hard).iter().all(|&s| s == 0)
    };

    if decided(&posterior, &mut hard) {
        return Ok(DecodeResult { bits: hard[..code.k].to_vec(), converged: true, iterations: 0 });
    }
    for it in 1..=max_iters {
        for c in 0..code.checks.len() {
            let edges = check_start[c]..check_start[c + 1];
            let mut sign = 1.0f64;
            let (mut min1, mut min2, mut arg) = (f64::INFINITY, f64::INFINITY, usize::MAX);
            for e in edges.clone() {
                let m = v2c[e];
                if m < 0.0 {
                    sign = -sign;
                }
                let a = m.abs();
                if a < min1 {
                    min2 = min1;
                    min1 = a;
                    arg = e;
                } else if a < min2 {
                    min2 = a;
                }
            }
            for e in edges {
                let own = if v2c[e] < 0.0 { -1.0 } else { 1.0 };
                let mag = if e == arg { min2 } else { min1 };
                c2v[e] = MIN_SUM_SCALE * sign * own * mag;
            }
        }
        for (v, edges) in var_edges.iter().enumerate() {
            let total = channel[v] + edges.iter().map(|&e| c2v[e]).sum::<f64>();
            posterior[v] = total;
            for &e in edges {
                v2c[e] = total - c2v[e];
            }
        }
        if decided(&posterior, &mut hard) {
            return Ok(DecodeResult { bits: hard[..code.k].to_vec(), converged: true, iterations: it });
        }
    }
    Ok(DecodeResult { bits: hard[..code.k].to_vec(), converged: false, iterations: max_iters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn half() -> &'static LdpcCode {
        static C: OnceLock<LdpcCode> = OnceLock::new();
        C.get_or_init(|| construct_ldpc(CodeRate::Half, 648, 1).unwrap())
    }

    fn two_thirds() -> &'static LdpcCode {
        static C: OnceLock<LdpcCode> = OnceLock::new();
        C.get_or_init(|| construct_ldpc(CodeRate::TwoThirds, 648, 1).unwrap())
    }

    fn random_bits(rng: &mut SimRng, len: usize) -> Vec<u8> {
        (0..len).map(|_| (rng.next_u64() & 1) as u8).collect()
    }

    /// Dense H·cᵀ straight from the row lists.
    fn syndrome_oracle(code: &LdpcCode, c: &[u8]) -> bool {
        code.checks.iter().all(|row| row.iter().map(|&j| u32::from(c[j])).sum::<u32>() % 2 == 0)
    }

    #[test]
    fn degree_arithmetic() {
        let h = half();
        assert_eq!((h.n, h.k, h.checks.len(), h.ones()), (648, 324, 324, 1944));
        assert!(h.checks.iter().all(|r| r.len() == 6));
        let t = two_thirds();
        assert_eq!((t.n, t.k, t.checks.len(), t.ones()), (648, 432, 216, 1944));
        assert!(t.checks.iter().all(|r| r.len() == 9));
        for code in [h, t] {
            let mut col_deg = vec![0; 648];
            for row in &code.checks {
                for &c in row {
                    col_deg[c] += 1;
                }
            }
            assert!(col_deg.iter().all(|&d| d == 3));
        }
    }

    #[test]
    fn four_cycles_are_removed() {
        assert_eq!(half().residual_four_cycles, 0);
        assert_eq!(two_thirds().residual_four_cycles, 0);
    }

    #[test]
    fn cycle_counter_on_a_planted_square() {
        let rows = vec![vec![0, 1, 2], vec![0, 1, 3], vec![2, 4, 5]];
        assert_eq!(count_four_cycles(&rows, 6), 1);
        assert_eq!(conflicts(&rows, 6), vec![(0, 1)]);
    }

    #[test]
    fn encoder_output_is_a_codeword() {
        let mut rng = SimRng::new(11);
        for code in [half(), two_thirds()] {
            for _ in 0..100 {
                let m = random_bits(&mut rng, code.k);
                let c = ldpc_encode(code, &m).unwrap();
                assert!(syndrome_oracle(code, &c));
                assert_eq!(&c[..code.k], &m[..]);
            }
        }
    }

    #[test]
    fn linearity() {
        let code = half();
        let zero = ldpc_encode(code, &vec![0; code.k]).unwrap();
        assert!(zero.iter().all(|&b| b == 0));
        let mut rng = SimRng::new(2);
        let m1 = random_bits(&mut rng, code.k);
        let m2 = random_bits(&mut rng, code.k);
        let sum: Vec<u8> = m1.iter().zip(&m2).map(|(a, b)| a ^ b).collect();
        let c1 = ldpc_encode(code, &m1).unwrap();
        let c2 = ldpc_encode(code, &m2).unwrap();
        let c12: Vec<u8> = c1.iter().zip(&c2).map(|(a, b)| a ^ b).collect();
        assert_eq!(ldpc_encode(code, &sum).unwrap(), c12);
    }

    #[test]
    fn noiseless_decode_is_immediate() {
        let code = two_thirds();
        let m = random_bits(&mut SimRng::new(3), code.k);
        let c = ldpc_encode(code, &m).unwrap();
        let llrs: Vec<f64> = c.iter().map(|&b| if b == 0 { f64::INFINITY } else { f64::NEG_INFINITY }).collect();
        let r = ldpc_decode(code, &llrs, 50).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 1);
        assert_eq!(r.bits, m);
    }

    #[test]
    fn zero_llrs_do_not_converge() {
        let r = ldpc_decode(half(), &vec![0.0; 648], 50).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 50);
    }

    #[test]
    fn corrects_a_few_flips() {
        let code = half();
        let m = random_bits(&mut SimRng::new(4), code.k);
        let c = ldpc_encode(code, &m).unwrap();
        let mut llrs: Vec<f64> = c.iter().map(|&b| if b == 0 { 2.0 } else { -2.0 }).collect();
        for i in [5, 100, 400, 600] {
            llrs[i] = -llrs[i] * 0.5;
        }
        let r = ldpc_decode(code, &llrs, 50).unwrap();
        assert!(r.converged);
        assert_eq!(r.bits, m);
    }

    #[test]
    fn bad_parameters() {
        assert!(matches!(construct_ldpc(CodeRate::Half, 100, 0), Err(ChannelError::InvalidParams(_))));
        assert!(matches!(ldpc_encode(half(), &[0; 3]), Err(ChannelError::WrongLength { .. })));
        assert!(matches!(ldpc_decode(half(), &[0.0; 3], 1), Err(ChannelError::WrongLength { .. })));
    }

    #[test]
    fn construction_is_deterministic() {
        let a = construct_ldpc(CodeRate::Half, 96, 7).unwrap();
        let b = construct_ldpc(CodeRate::Half, 96, 7).unwrap();
        assert_eq!(a.checks, b.checks);
        assert_eq!(a.column_order, b.column_order);
    }
}
