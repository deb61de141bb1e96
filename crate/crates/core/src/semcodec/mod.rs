//! Semantic encoder/decoder over the knowledge base.
//!
//! An image is cut into 32×32 cells. The most important cells (by the
//! heatmap) are described by four fine Sebs each, the rest by one coarse
//! Seb. Each chosen Seb travels as its fixed-width label, so the encoded
//! size depends only on the grid and the number of fine cells.

pub mod bitstream;
pub mod image;
pub mod kmeans;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::importance::{block_means, cell_importance, Heatmap, ImportanceError, ImportanceProvider};
use crate::kb::poset::quadrants;
use crate::kb::{Granularity, KbError, KbParams, KnowledgeBase, Seb, SebId};
use crate::rng::derive_seed;

pub use bitstream::{deserialize_frame, serialize_frame};
pub use image::{load_image, parse_pnm, ImageGray, CELL};
pub use kmeans::{train_codebook, KMeansConfig, KMeansResult};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported image magic {0:?}")]
    UnsupportedMagic(String),
    #[error("truncated input")]
    Truncated,
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(usize),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("patch size {size} does not divide {width}x{height}")]
    PatchSize { size: usize, width: usize, height: usize },
    #[error("no features to cluster")]
    EmptyFeatures,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("frame encoded against KB version {frame}, local KB is version {kb}")]
    KbMismatch { frame: u32, kb: u32 },
    #[error("bad SEBF magic")]
    BadMagic,
    #[error("unsupported SEBF version {0}")]
    UnsupportedVersion(u8),
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Corrupt {
        /// The frame as parsed; its contents are not trustworthy.
        frame: Box<SemanticFrame>,
        stored: u32,
        computed: u32,
    },
    #[error("invalid codec configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Importance(#[from] ImportanceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    /// Fraction of cells encoded with fine Sebs.
    pub p_fine: f64,
    /// Fraction of cells placed in the strongly protected class.
    pub p_protect: f64,
    pub k_coarse: usize,
    pub k_fine: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            p_fine: 0.20,
            p_protect: 0.50,
            k_coarse: 256,
            k_fine: 64,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
            seed: 0,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if !(0.0..=1.0).contains(&self.p_fine) || !(0.0..=1.0).contains(&self.p_protect) {
            return Err(CodecError::InvalidConfig("fractions must lie in [0, 1]".into()));
        }
        if !self.k_coarse.is_power_of_two() || !self.k_fine.is_power_of_two() {
            return Err(CodecError::InvalidConfig(
                "codebook sizes must be powers of two".into(),
            ));
        }
        if self.kmeans_max_iters == 0 {
            return Err(CodecError::InvalidConfig("kmeans_max_iters must be positive".into()));
        }
        Ok(())
    }

    pub fn kmeans(&self, k: usize, seed: u64) -> KMeansConfig {
        KMeansConfig {
            k,
            max_iters: self.kmeans_max_iters,
            tol: self.kmeans_tol,
            seed,
        }
    }
}

/// Labels for one 32×32 cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellCode {
    Coarse(u32),
    /// Quadrants in TL, TR, BL, BR order.
    Fine([u32; 4]),
}

impl CellCode {
    pub fn is_fine(&self) -> bool {
        matches!(self, CellCode::Fine(_))
    }
}

/// An encoded image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticFrame {
    pub kb_version: u32,
    pub original_width: usize,
    pub original_height: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    pub bits_coarse: u8,
    pub bits_fine: u8,
    /// One flag per cell, row-major; `true` puts the cell in class A.
    pub class_flags: Vec<bool>,
    pub cells: Vec<CellCode>,
}

impl SemanticFrame {
    pub fn n_cells(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn fine_flags(&self) -> Vec<bool> {
        self.cells.iter().map(CellCode::is_fine).collect()
    }

    /// Payload bits used by one cell's labels.
    pub fn cell_bits(&self, cell: usize) -> usize {
        match self.cells[cell] {
            CellCode::Coarse(_) => usize::from(self.bits_coarse),
            CellCode::Fine(_) => 4 * usize::from(self.bits_fine),
        }
    }
}

/// Row-major non-overlapping `size × size` patches, scaled to `[0, 1]`.
pub fn extract_patches(img: &ImageGray, size: usize) -> Result<Vec<Vec<f32>>, CodecError> {
    if size == 0 || img.width % size != 0 || img.height % size != 0 {
        return Err(CodecError::PatchSize {
            size,
            width: img.width,
            height: img.height,
        });
    }
    let mut out = Vec::with_capacity((img.width / size) * (img.height / size));
    for py in (0..img.height).step_by(size) {
        for px in (0..img.width).step_by(size) {
            let mut v = Vec::with_capacity(size * size);
            for y in py..py + size {
                let row = &img.pixels[y * img.width + px..y * img.width + px + size];
                v.extend(row.iter().map(|&p| f32::from(p) / 255.0));
            }
            out.push(v);
        }
    }
    Ok(out)
}

fn aligned(img: &ImageGray) -> ImageGray {
    if img.is_cell_aligned() {
        img.clone()
    } else {
        img.padded()
    }
}

/// Trains both codebooks on a corpus and assembles a version-0 knowledge base.
pub fn build_kb(
    corpus: &[ImageGray],
    config: &CodecConfig,
    provider: &dyn ImportanceProvider,
) -> Result<KnowledgeBase, CodecError> {
    build_kb_with_params(corpus, config, provider, KbParams::default())
}

pub fn build_kb_with_params(
    corpus: &[ImageGray],
    config: &CodecConfig,
    provider: &dyn ImportanceProvider,
    params: KbParams,
) -> Result<KnowledgeBase, CodecError> {
    if corpus.is_empty() {
        return Err(CodecError::EmptyCorpus);
    }
    config.validate()?;
    params.validate()?;

    let mut feats: BTreeMap<Granularity, (Vec<Vec<f32>>, Vec<f32>)> = BTreeMap::new();
    for img in corpus {
        let img = aligned(img);
        let heat = provider.heatmap(&img)?;
        for g in Granularity::ALL {
            let entry = feats.entry(g).or_default();
            entry.0.extend(extract_patches(&img, g.patch_side())?);
            entry.1.extend(block_means(&heat, g.patch_side())?.into_iter().map(|v| v as f32));
        }
    }

    let mut kb = KnowledgeBase::new(params);
    let mut next_id: SebId = 0;
    for (g, k, seed) in [
        (Granularity::Coarse, config.k_coarse, config.seed),
        (Granularity::Fine, config.k_fine, derive_seed(config.seed, 1)),
    ] {
        let (features, imps) = &feats[&g];
        let result = train_codebook(features, &config.kmeans(k, seed))?;
        let mut sums = vec![(0.0f64, 0usize); k];
        for (&a, &imp) in result.assignments.iter().zip(imps) {
            sums[a].0 += f64::from(imp);
            sums[a].1 += 1;
        }
        if g == Granularity::Coarse {
            kb.baseline_distortion = result.distortion / (features.len() * g.patch_area()) as f64;
        }
        for (centroid, (sum, n)) in result.centroids.into_iter().zip(sums) {
            let importance = if n == 0 { 0.0 } else { (sum / n as f64).clamp(0.0, 1.0) as f32 };
            kb.insert(Seb::new(next_id, g, centroid, importance))?;
            next_id += 1;
        }
    }
    for g in Granularity::ALL {
        crate::channel::labels::assign_labels(&mut kb, g)?;
    }
    kb.rebuild_relation()?;
    Ok(kb)
}

/// Flat lookup over one granularity: positions follow ascending Seb id.
pub(crate) struct CodebookView<'a> {
    pub ids: Vec<SebId>,
    pub labels: Vec<u32>,
    pub centroids: Vec<&'a [f32]>,
    pub width: u32,
    granularity: Granularity,
}

impl<'a> CodebookView<'a> {
    pub fn new(kb: &'a KnowledgeBase, g: Granularity) -> Self {
        let sebs: Vec<&Seb> = kb.iter_granularity(g).collect();
        Self {
            ids: sebs.iter().map(|s| s.id).collect(),
            labels: sebs.iter().map(|s| s.label).collect(),
            centroids: sebs.iter().map(|s| s.centroid.as_slice()).collect(),
            width: kb.bits_per_index(g),
            granularity: g,
        }
    }

    /// Position of the nearest centroid, lowest id on ties.
    pub fn nearest(&self, feature: &[f32]) -> Result<usize, CodecError> {
        if self.centroids.is_empty() {
            return Err(KbError::EmptyCodebook(self.granularity).into());
        }
        Ok(kmeans::nearest(&self.centroids, feature).0)
    }

    /// For every label value of the code width, the codebook position it
    /// decodes to. Labels past the end clamp to the last value; values no
    /// Seb carries resolve to the nearest carried label in Hamming distance.
    pub fn decode_table(&self) -> Vec<usize> {
        let size = 1usize << self.width;
        let mut by_label = vec![None; size];
        for (pos, &label) in self.labels.iter().enumerate() {
            if let Some(slot) = by_label.get_mut(label as usize) {
                *slot = Some(pos);
            }
        }
        (0..size)
            .map(|v| {
                by_label[v].unwrap_or_else(|| {
                    by_label
                        .iter()
                        .enumerate()
                        .filter_map(|(l, p)| p.map(|p| ((l ^ v).count_ones(), l, p)))
                        .min()
                        .map_or(0, |(_, _, p)| p)
                })
            })
            .collect()
    }
}

fn resolve(table: &[usize], label: u32) -> usize {
    table[(label as usize).min(table.len() - 1)]
}

/// Encoder output with the bookkeeping the knowledge-base lifecycle needs.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub frame: SemanticFrame,
    pub cell_importance: Vec<f64>,
    /// Seb id to mean importance of the patches it encoded.
    pub usage: BTreeMap<SebId, f64>,
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

/// Cells ranked by importance, most important first, ties by index.
pub fn rank_cells(importance: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    order
}

pub fn encode(
    img: &ImageGray,
    kb: &KnowledgeBase,
    heatmap: &Heatmap,
    config: &CodecConfig,
) -> Result<SemanticFrame, CodecError> {
    Ok(encode_detailed(img, kb, heatmap, config)?.frame)
}

pub fn encode_detailed(
    img: &ImageGray,
    kb: &KnowledgeBase,
    heatmap: &Heatmap,
    config: &CodecConfig,
) -> Result<Encoded, CodecError> {
    if !img.is_cell_aligned() {
        return Err(CodecError::PatchSize {
            size: CELL,
            width: img.width,
            height: img.height,
        });
    }
    if heatmap.width != img.width || heatmap.height != img.height {
        return Err(CodecError::DimensionMismatch {
            expected: img.width * img.height,
            got: heatmap.width * heatmap.height,
        });
    }
    let importance = cell_importance(heatmap)?;
    let fine_imp = block_means(heatmap, Granularity::Fine.patch_side())?;
    let n = importance.len();
    let order = rank_cells(&importance);
    let n_fine = round_half_up(config.p_fine * n as f64).min(n);
    let n_protect = round_half_up(config.p_protect * n as f64).min(n);

    let mut is_fine = vec![false; n];
    let mut class_flags = vec![false; n];
    for &c in &order[..n_fine] {
        is_fine[c] = true;
    }
    for &c in &order[..n_protect] {
        class_flags[c] = true;
    }

    let coarse = CodebookView::new(kb, Granularity::Coarse);
    let fine = CodebookView::new(kb, Granularity::Fine);
    if n_fine > 0 && fine.ids.is_empty() {
        return Err(KbError::EmptyCodebook(Granularity::Fine).into());
    }
    let patches = extract_patches(img, CELL)?;
    let grid_w = img.width / CELL;

    let mut usage: BTreeMap<SebId, (f64, usize)> = BTreeMap::new();
    let mut cells = Vec::with_capacity(n);
    for (c, patch) in patches.iter().enumerate() {
        if is_fine[c] {
            let blocks = quadrants(patch);
            let (cy, cx) = (c / grid_w, c % grid_w);
            let mut labels = [0u32; 4];
            for (q, block) in blocks.iter().enumerate() {
                let pos = fine.nearest(block)?;
                labels[q] = fine.labels[pos];
                let fine_index = (2 * cy + q / 2) * (2 * grid_w) + 2 * cx + q % 2;
                let e = usage.entry(fine.ids[pos]).or_default();
                e.0 += fine_imp[fine_index];
                e.1 += 1;
            }
            cells.push(CellCode::Fine(labels));
        } else {
            let pos = coarse.nearest(patch)?;
            let e = usage.entry(coarse.ids[pos]).or_default();
            e.0 += importance[c];
            e.1 += 1;
            cells.push(CellCode::Coarse(coarse.labels[pos]));
        }
    }

    let frame = SemanticFrame {
        kb_version: kb.version,
        original_width: img.original_width,
        original_height: img.original_height,
        grid_w,
        grid_h: img.height / CELL,
        bits_coarse: coarse.width as u8,
        bits_fine: fine.width as u8,
        class_flags,
        cells,
    };
    Ok(Encoded {
        frame,
        cell_importance: importance,
        usage: usage
            .into_iter()
            .map(|(id, (sum, count))| (id, sum / count as f64))
            .collect(),
    })
}

fn to_pixel(v: f32) -> u8 {
    (f64::from(v) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Reconstructs the image a frame describes, cropped to its original size.
pub fn decode(frame: &SemanticFrame, kb: &KnowledgeBase) -> Result<ImageGray, CodecError> {
    if frame.kb_version != kb.version {
        return Err(CodecError::KbMismatch {
            frame: frame.kb_version,
            kb: kb.version,
        });
    }
    if frame.cells.len() != frame.n_cells()
        || frame.original_width == 0
        || frame.original_height == 0
        || frame.original_width > frame.grid_w * CELL
        || frame.original_height > frame.grid_h * CELL
    {
        return Err(CodecError::Malformed("frame geometry is inconsistent".into()));
    }
    let coarse = CodebookView::new(kb, Granularity::Coarse);
    let fine = CodebookView::new(kb, Granularity::Fine);
    let coarse_table = coarse.decode_table();
    let fine_table = fine.decode_table();

    let width = frame.grid_w * CELL;
    let mut pixels = vec![0u8; width * frame.grid_h * CELL];
    let mut paint = |x0: usize, y0: usize, side: usize, centroid: &[f32]| {
        for y in 0..side {
            for x in 0..side {
                pixels[(y0 + y) * width + x0 + x] = to_pixel(centroid[y * side + x]);
            }
        }
    };
    for (c, code) in frame.cells.iter().enumerate() {
        let (x0, y0) = ((c % frame.grid_w) * CELL, (c / frame.grid_w) * CELL);
        match *code {
            CellCode::Coarse(label) => {
                let cb = coarse.centroids.get(resolve(&coarse_table, label));
                let cb = cb.ok_or(KbError::EmptyCodebook(Granularity::Coarse))?;
                paint(x0, y0, CELL, cb);
            }
            CellCode::Fine(labels) => {
                let half = CELL / 2;
                for (q, &label) in labels.iter().enumerate() {
                    let cb = fine.centroids.get(resolve(&fine_table, label));
                    let cb = cb.ok_or(KbError::EmptyCodebook(Granularity::Fine))?;
                    paint(x0 + (q % 2) * half, y0 + (q / 2) * half, half, cb);
                }
            }
        }
    }
    let full = ImageGray {
        width,
        height: frame.grid_h * CELL,
        pixels,
        original_width: frame.original_width,
        original_height: frame.original_height,
    };
    Ok(full.cropped())
}

/// Mean per-component squared error between each cell and its nearest
/// coarse centroid, averaged over cells. This is the update-trigger statistic.
pub fn quantization_distortion(img: &ImageGray, kb: &KnowledgeBase) -> Result<f64, CodecError> {
    let img = aligned(img);
    let coarse = CodebookView::new(kb, Granularity::Coarse);
    if coarse.centroids.is_empty() {
        return Err(KbError::EmptyCodebook(Granularity::Coarse).into());
    }
    let patches = extract_patches(&img, CELL)?;
    let area = Granularity::Coarse.patch_area() as f64;
    let total: f64 = patches
        .iter()
        .map(|p| kmeans::nearest(&coarse.centroids, p).1 / area)
        .sum();
    Ok(total / patches.len() as f64)
}
