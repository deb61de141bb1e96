//! Plug-in estimate of the knowledge-base gain `H(X|S) = H(X) - I(X;S)`.

use super::KbError;

/// Entropies and mutual information (bits) estimated from a joint count table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoEstimate {
    pub h_x: f64,
    pub h_s: f64,
    pub mutual_information: f64,
    /// `H(X|S)`, i.e. `h_x - mutual_information`.
    pub conditional_entropy: f64,
}

fn entropy(marginal: &[f64], total: f64) -> f64 {
    marginal
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum()
}

/// `joint[x][s]` counts co-occurrences of source symbol `x` and Seb index `s`.
pub fn empirical_mutual_information(joint: &[Vec<u64>]) -> Result<InfoEstimate, KbError> {
    let cols = joint.first().map_or(0, Vec::len);
    if joint.iter().any(|row| row.len() != cols) {
        return Err(KbError::RaggedTable);
    }
    let total: u64 = joint.iter().flatten().sum();
    if total == 0 {
        return Err(KbError::EmptyTable);
    }
    let total = total as f64;

    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let ps: Vec<f64> = (0..cols)
        .map(|s| joint.iter().map(|r| r[s]).sum::<u64>() as f64)
        .collect();

    let mut mi = 0.0;
    for (x, row) in joint.iter().enumerate() {
        for (s, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            // p(x,s) / (p(x) p(s)) = c * N / (cx * cs)
            mi += (c / total) * (c * total / (px[x] * ps[s])).log2();
        }
    }

    let h_x = entropy(&px, total);
    let h_s = entropy(&ps, total);
    // Rounding can leave the sum a hair outside its bounds.
    let mi = mi.clamp(0.0, h_x.min(h_s));
    Ok(InfoEstimate {
        h_x,
        h_s,
        mutual_information: mi,
        conditional_entropy: h_x - mi,
    })
}
