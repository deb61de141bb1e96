//! Per-pixel importance heatmaps and their per-cell averages.
//!
//! Two providers ship: heatmaps read from PGM files (for users who bring
//! their own class-activation maps) and a Sobel-energy saliency computed
//! from the image itself.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::semcodec::{parse_pnm, ImageGray, CELL};

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("cannot read heatmap {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad heatmap file: {0}")]
    BadFile(String),
    #[error("heatmap is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("heatmap value {0} outside [0, 1]")]
    OutOfRange(f32),
}

/// Row-major importance values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, ImportanceError> {
        if values.len() != width * height {
            return Err(ImportanceError::DimensionMismatch {
                got_w: values.len(),
                got_h: 1,
                want_w: width,
                want_h: height,
            });
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImportanceError::OutOfRange(bad));
        }
        Ok(Self { width, height, values })
    }

    pub fn uniform(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Pads to multiples of 32 by replicating the last row and column.
    pub fn padded(&self) -> Self {
        let w = self.width.div_ceil(CELL) * CELL;
        let h = self.height.div_ceil(CELL) * CELL;
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                values.push(self.get(x.min(self.width - 1), y.min(self.height - 1)));
            }
        }
        Self { width: w, height: h, values }
    }

    /// Nearest-neighbour resampling.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                values.push(self.get(x * self.width / width, sy));
            }
        }
        Self { width, height, values }
    }

    /// 8-bit rendering, for inspection.
    pub fn to_image(&self) -> ImageGray {
        let pixels = self
            .values
            .iter()
            .map(|&v| (f64::from(v) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect();
        ImageGray {
            width: self.width,
            height: self.height,
            pixels,
            original_width: self.width,
            original_height: self.height,
        }
    }
}

/// Source of a heatmap for an image already padded to the cell grid.
pub trait ImportanceProvider {
    fn heatmap(&self, img: &ImageGray) -> Result<Heatmap, ImportanceError>;
}

/// Sobel-energy saliency.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinSaliency;

impl ImportanceProvider for BuiltinSaliency {
    fn heatmap(&self, img: &ImageGray) -> Result<Heatmap, ImportanceError> {
        Ok(builtin_saliency(img))
    }
}

/// The same value everywhere.
#[derive(Debug, Clone, Copy)]
pub struct UniformImportance(pub f32);

impl ImportanceProvider for UniformImportance {
    fn heatmap(&self, img: &ImageGray) -> Result<Heatmap, ImportanceError> {
        if !(0.0..=1.0).contains(&self.0) {
            return Err(ImportanceError::OutOfRange(self.0));
        }
        Ok(Heatmap::uniform(img.width, img.height, self.0))
    }
}

/// One heatmap file, resampled to each image's original size.
#[derive(Debug, Clone)]
pub struct FileImportance(pub PathBuf);

impl ImportanceProvider for FileImportance {
    fn heatmap(&self, img: &ImageGray) -> Result<Heatmap, ImportanceError> {
        let h = load_heatmap(&self.0, img.original_width, img.original_height)?;
        fit(h, img)
    }
}

/// A precomputed heatmap, checked against each image's size.
#[derive(Debug, Clone)]
pub struct FixedHeatmap(pub Heatmap);

impl ImportanceProvider for FixedHeatmap {
    fn heatmap(&self, img: &ImageGray) -> Result<Heatmap, ImportanceError> {
        fit(self.0.clone(), img)
    }
}

fn fit(h: Heatmap, img: &ImageGray) -> Result<Heatmap, ImportanceError> {
    if (h.width, h.height) == (img.width, img.height) {
        return Ok(h);
    }
    Err(ImportanceError::DimensionMismatch {
        got_w: h.width,
        got_h: h.height,
        want_w: img.width,
        want_h: img.height,
    })
}

/// Provider named by a CLI spec: `builtin` or `file:<path>`.
pub fn provider_from_spec(spec: &str) -> Result<Box<dyn ImportanceProvider>, ImportanceError> {
    match spec.split_once(':') {
        None if spec == "builtin" => Ok(Box::new(BuiltinSaliency)),
        Some(("file", path)) if !path.is_empty() => Ok(Box::new(FileImportance(path.into()))),
        _ => Err(ImportanceError::BadFile(format!(
            "unknown importance provider {spec:?}; use builtin or file:<path>"
        ))),
    }
}

/// Reads a P5 heatmap, resamples it to `target_w × target_h` and pads it to
/// the cell grid the way images are padded.
pub fn load_heatmap(
    path: impl AsRef<Path>,
    target_w: usize,
    target_h: usize,
) -> Result<Heatmap, ImportanceError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImportanceError::Io {
        path: path.to_owned(),
        source,
    })?;
    if !bytes.starts_with(b"P5") {
        return Err(ImportanceError::BadFile("heatmaps must be binary PGM (P5)".into()));
    }
    if target_w == 0 || target_h == 0 {
        return Err(ImportanceError::BadFile("zero target size".into()));
    }
    let img = parse_pnm(&bytes).map_err(|e| ImportanceError::BadFile(e.to_string()))?;
    let raw = Heatmap {
        width: img.width,
        height: img.height,
        values: img.pixels.iter().map(|&p| f32::from(p) / 255.0).collect(),
    };
    Ok(raw.resized(target_w, target_h).padded())
}

const SOBEL_X: [[i32; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
const SOBEL_Y: [[i32; 3]; 3] = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]];

/// `|Gx| + |Gy|` per pixel, borders replicated.
pub fn sobel_energy(img: &ImageGray) -> Vec<f64> {
    let (w, h) = (img.width as isize, img.height as isize);
    let px = |x: isize, y: isize| i32::from(img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize));
    let mut out = Vec::with_capacity(img.pixels.len());
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0, 0);
            for (j, (rx, ry)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                for i in 0..3 {
                    let p = px(x + i as isize - 1, y + j as isize - 1);
                    gx += rx[i] * p;
                    gy += ry[i] * p;
                }
            }
            out.push(f64::from(gx.abs() + gy.abs()));
        }
    }
    out
}

/// Mean over the 8×8 window spanning offsets -3..=4 on each axis, borders
/// replicated. Computed separably with running sums.
fn box8(values: &[f64], w: usize, h: usize) -> Vec<f64> {
    const LO: isize = -3;
    const HI: isize = 4;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        let row = &values[y * w..(y + 1) * w];
        for x in 0..w {
            rows[y * w + x] = (LO..=HI).map(|d| row[clamp(x as isize + d, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (LO..=HI).map(|d| rows[clamp(y as isize + d, h) * w + x]).sum();
            out[y * w + x] = s / 64.0;
        }
    }
    out
}

/// Sobel energy, 8×8 box filter, then per-image min-max normalization.
/// A map with no spread is all zero.
pub fn builtin_saliency(img: &ImageGray) -> Heatmap {
    let smooth = box8(&sobel_energy(img), img.width, img.height);
    let lo = smooth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = if hi > lo {
        smooth.iter().map(|&v| ((v - lo) / (hi - lo)) as f32).collect()
    } else {
        vec![0.0; smooth.len()]
    };
    Heatmap {
        width: img.width,
        height: img.height,
        values,
    }
}

/// Mean heatmap value in each `side × side` block, row-major.
pub fn block_means(heat: &Heatmap, side: usize) -> Result<Vec<f64>, ImportanceError> {
    if side == 0 || heat.width % side != 0 || heat.height % side != 0 || heat.values.len() != heat.width * heat.height {
        return Err(ImportanceError::DimensionMismatch {
            got_w: heat.width,
            got_h: heat.height,
            want_w: heat.width.div_ceil(side.max(1)) * side,
            want_h: heat.height.div_ceil(side.max(1)) * side,
        });
    }
    let (bw, bh) = (heat.width / side, heat.height / side);
    let mut sums = vec![0.0f64; bw * bh];
    for y in 0..heat.height {
        for x in 0..heat.width {
            sums[(y / side) * bw + x / side] += f64::from(heat.get(x, y));
        }
    }
    let area = (side * side) as f64;
    Ok(sums.into_iter().map(|s| s / area).collect())
}

/// Mean importance of each 32×32 cell, row-major.
pub fn cell_importance(heat: &Heatmap) -> Result<Vec<f64>, ImportanceError> {
    block_means(heat, CELL)
}
