//! Image quality metrics: PSNR, SSIM and importance-weighted MSE.

use serde::{Deserialize, Serialize};

use crate::importance::Heatmap;
use crate::kb::{empirical_mutual_information, Granularity, InfoEstimate, KnowledgeBase};
use crate::semcodec::{extract_patches, CodecError, ImageGray, CELL};

use super::HarnessError;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn same_dims(a: &ImageGray, b: &ImageGray) -> Result<(), HarnessError> {
    if a.width != b.width || a.height != b.height {
        return Err(HarnessError::DimensionMismatch {
            a: (a.width, a.height),
            b: (b.width, b.height),
        });
    }
    Ok(())
}

pub fn mse(a: &ImageGray, b: &ImageGray) -> Result<f64, HarnessError> {
    same_dims(a, b)?;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(sum / a.pixels.len() as f64)
}

/// `10·log10(255²/MSE)`, capped at 99 dB.
pub fn psnr(a: &ImageGray, b: &ImageGray) -> Result<f64, HarnessError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (255.0f64 * 255.0 / m).log10()).min(PSNR_CAP))
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w: usize,
    data: Vec<u64>,
}

impl Integral {
    fn new(width: usize, height: usize, f: impl Fn(usize) -> u64) -> Self {
        let w = width + 1;
        let mut data = vec![0u64; w * (height + 1)];
        for y in 0..height {
            let mut row = 0u64;
            for x in 0..width {
                row += f(y * width + x);
                data[(y + 1) * w + x + 1] = data[y * w + x + 1] + row;
            }
        }
        Self { w, data }
    }

    fn sum(&self, x: usize, y: usize, wx: usize, wy: usize) -> u64 {
        let at = |x: usize, y: usize| self.data[y * self.w + x];
        at(x + wx, y + wy) + at(x, y) - at(x + wx, y) - at(x, y + wy)
    }
}

pub(crate) fn ssim_from_sums(n: f64, sa: f64, sb: f64, saa: f64, sbb: f64, sab: f64) -> f64 {
    let (ma, mb) = (sa / n, sb / n);
    let va = saa / n - ma * ma;
    let vb = sbb / n - mb * mb;
    let cov = sab / n - ma * mb;
    ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
}

/// Mean SSIM over all 8×8 windows at stride 1 with a uniform window. An
/// image smaller than 8 along either axis is treated as one window.
pub fn ssim(a: &ImageGray, b: &ImageGray) -> Result<f64, HarnessError> {
    same_dims(a, b)?;
    let (w, h) = (a.width, a.height);
    let pa = |i: usize| u64::from(a.pixels[i]);
    let pb = |i: usize| u64::from(b.pixels[i]);
    let ia = Integral::new(w, h, pa);
    let ib = Integral::new(w, h, pb);
    let iaa = Integral::new(w, h, |i| pa(i) * pa(i));
    let ibb = Integral::new(w, h, |i| pb(i) * pb(i));
    let iab = Integral::new(w, h, |i| pa(i) * pb(i));
    let wx = SSIM_WINDOW.min(w);
    let wy = SSIM_WINDOW.min(h);
    let n = (wx * wy) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - wy {
        for x in 0..=w - wx {
            let s = |t: &Integral| t.sum(x, y, wx, wy) as f64;
            total += ssim_from_sums(n, s(&ia), s(&ib), s(&iaa), s(&ibb), s(&iab));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedMse {
    pub value: f64,
    /// Set when the heatmap summed to zero and plain MSE was returned.
    pub unweighted: bool,
}

/// `Σ h·(a−b)² / Σ h` over pixels.
pub fn weighted_mse(a: &ImageGray, b: &ImageGray, heat: &Heatmap) -> Result<WeightedMse, HarnessError> {
    same_dims(a, b)?;
    if heat.width != a.width || heat.height != a.height {
        return Err(HarnessError::DimensionMismatch {
            a: (a.width, a.height),
            b: (heat.width, heat.height),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&x, &y), &hv) in a.pixels.iter().zip(&b.pixels).zip(&heat.values) {
        let hv = f64::from(hv);
        num += hv * (f64::from(x) - f64::from(y)).powi(2);
        den += hv;
    }
    if den == 0.0 {
        return Ok(WeightedMse { value: mse(a, b)?, unweighted: true });
    }
    Ok(WeightedMse { value: num / den, unweighted: false })
}

/// Number of intensity bins used for the source variable of the KB gain.
pub const INTENSITY_BINS: usize = 4;

/// Plug-in `I(X;S)` where `X` is the 4-bin mean intensity of each coarse
/// cell and `S` the index of its nearest coarse Seb.
pub fn kb_information(images: &[ImageGray], kb: &KnowledgeBase) -> Result<InfoEstimate, HarnessError> {
    let ids: Vec<_> = kb.iter_granularity(Granularity::Coarse).map(|s| s.id).collect();
    let mut joint = vec![vec![0u64; ids.len().max(1)]; INTENSITY_BINS];
    for img in images {
        let img = if img.is_cell_aligned() { img.clone() } else { img.padded() };
        for patch in extract_patches(&img, CELL)? {
            let mean = patch.iter().map(|&v| f64::from(v)).sum::<f64>() / patch.len() as f64;
            let x = ((mean * INTENSITY_BINS as f64) as usize).min(INTENSITY_BINS - 1);
            let (id, _) = kb.nearest(Granularity::Coarse, &patch).map_err(CodecError::from)?;
            let s = ids.binary_search(&id).expect("coarse id present");
            joint[x][s] += 1;
        }
    }
    Ok(empirical_mutual_information(&joint).map_err(CodecError::from)?)
}
