//! Sequential transmission of image subsets whose content family changes
//! from phase to phase, with knowledge-base updates at fixed subset
//! boundaries.

use std::fmt;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::channel::{send_unprotected, uep_frame, ChannelConfig, UepCodes};
use crate::channel::uep::permute_class_flags;
use crate::importance::{block_means, provider_from_spec, Heatmap, ImportanceProvider};
use crate::kb::{generate_candidates, Granularity, KbParams, KnowledgeBase};
use crate::rng::derive_seed;
use crate::semcodec::{
    build_kb_with_params, decode, deserialize_frame, encode_detailed, extract_patches, quantization_distortion,
    serialize_frame, CodecConfig, CodecError, ImageGray, CELL,
};
use crate::channel::ProtectedTransmission;
use crate::sync::{apply_message, build_delta, decode_message, encode_message, full_message, hex, kb_hash, TriggerState};

use super::corpus::{generate_corpus, Family};
use super::metrics::{kb_information, psnr, ssim, weighted_mse};
use super::HarnessError;

/// Grey level shown for frames that could not be received.
pub const LOST_FILL: u8 = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub texture_family: Family,
    pub n_subsets: usize,
    pub images_per_subset: usize,
    pub image_size: usize,
}

/// An SNR in dB; infinity (written `"inf"`) is the noiseless channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr(pub f64);

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Snr(v)),
            Raw::Text(t) if t == "inf" || t == "noiseless" => Ok(Snr(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad SNR {t:?}"))),
        }
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_finite() {
            write!(f, "{}", self.0)
        } else {
            f.write_str("inf")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub phases: Vec<PhaseConfig>,
    /// Global subset indices (0-based) after whose transmission the
    /// knowledge base is updated.
    pub update_points: Vec<usize>,
    pub enable_updates: bool,
    pub codec: CodecConfig,
    pub kb_params: KbParams,
    pub snrs: Vec<Snr>,
    pub max_bp_iters: usize,
    /// Corpus seed; phase `p` uses `derive_seed(corpus_seed, p)`.
    pub corpus_seed: u64,
    pub channel_seed: u64,
    pub ldpc_seed: u64,
    /// Clusters proposed per update, per granularity.
    pub candidates_coarse: usize,
    pub candidates_fine: usize,
    /// `builtin` or `file:<path>`.
    pub importance: String,
    pub output_dir: Option<PathBuf>,
    pub write_images: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let phase = |f| PhaseConfig { texture_family: f, n_subsets: 3, images_per_subset: 10, image_size: 256 };
        Self {
            phases: vec![phase(Family::Blobs), phase(Family::Checker), phase(Family::Gratings)],
            update_points: vec![3, 6],
            enable_updates: true,
            codec: CodecConfig::default(),
            kb_params: KbParams::default(),
            snrs: vec![Snr(f64::INFINITY), Snr(4.0)],
            max_bp_iters: 50,
            corpus_seed: 1,
            channel_seed: 2,
            ldpc_seed: 3,
            candidates_coarse: 256,
            candidates_fine: 64,
            importance: "builtin".into(),
            output_dir: None,
            write_images: false,
        }
    }
}

impl ScenarioConfig {
    pub fn n_subsets(&self) -> usize {
        self.phases.iter().map(|p| p.n_subsets).sum()
    }

    /// Phase index of every global subset.
    pub fn subset_phases(&self) -> Vec<usize> {
        self.phases
            .iter()
            .enumerate()
            .flat_map(|(p, ph)| std::iter::repeat_n(p, ph.n_subsets))
            .collect()
    }

    /// Subsets of later phases transmitted after an update made within
    /// their phase.
    pub fn post_shift_subsets(&self) -> Vec<usize> {
        let phases = self.subset_phases();
        (0..phases.len())
            .filter(|&s| {
                phases[s] > 0 && self.update_points.iter().any(|&u| u < s && phases[u] == phases[s])
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.phases.is_empty() || self.phases.iter().any(|p| p.n_subsets == 0 || p.images_per_subset == 0) {
            return bad("every phase needs at least one subset of at least one image".into());
        }
        if let Some(p) = self.phases.iter().find(|p| p.image_size == 0 || p.image_size % CELL != 0) {
            return bad(format!("image size {} is not a positive multiple of {CELL}", p.image_size));
        }
        if !self.update_points.windows(2).all(|w| w[0] < w[1]) {
            return bad("update_points must be strictly increasing".into());
        }
        if self.update_points.last().is_some_and(|&u| u >= self.n_subsets()) {
            return bad("update point past the last subset".into());
        }
        if self.snrs.is_empty() || self.snrs.iter().any(|s| s.0.is_nan()) {
            return bad("at least one valid SNR is required".into());
        }
        if self.max_bp_iters == 0 || self.candidates_coarse == 0 || self.candidates_fine == 0 {
            return bad("iteration and candidate counts must be positive".into());
        }
        self.codec.validate()?;
        self.kb_params.validate()?;
        Ok(())
    }
}

/// One CSV row: means over the images of a subset at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub subset: usize,
    pub phase: usize,
    pub family: Family,
    pub snr_db: Snr,
    pub kb_version: u32,
    pub images: usize,
    pub psnr: f64,
    /// PSNR of the local decode, before any channel.
    pub psnr_quant: f64,
    pub ssim: f64,
    pub weighted_mse: f64,
    /// Mean coarse quantization distortion under the transmitting KB.
    pub distortion: f64,
    pub pre_ber_a: f64,
    pub post_ber_a: f64,
    pub pre_ber_b: f64,
    pub post_ber_b: f64,
    pub frame_loss_rate: f64,
    pub cbr: f64,
    pub h_x: f64,
    pub mutual_information: f64,
    pub conditional_entropy: f64,
    pub events: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioEvent {
    FullSync { subset: usize, kb_version: u32, kb_hash: String },
    Request { subset: usize, frame: usize, kb_version: u32, statistic: f64, baseline: f64 },
    Apply {
        subset: usize,
        kb_version: u32,
        added: usize,
        removed: usize,
        delta_bytes: usize,
        new_baseline: f64,
        kb_hash: String,
    },
}

impl ScenarioEvent {
    fn subset(&self) -> usize {
        match self {
            ScenarioEvent::FullSync { subset, .. }
            | ScenarioEvent::Request { subset, .. }
            | ScenarioEvent::Apply { subset, .. } => *subset,
        }
    }

    fn short(&self) -> String {
        match self {
            ScenarioEvent::FullSync { kb_version, .. } => format!("full v{kb_version}"),
            ScenarioEvent::Request { frame, .. } => format!("request f{frame}"),
            ScenarioEvent::Apply { kb_version, added, removed, .. } => {
                format!("apply v{kb_version} +{added} -{removed}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub rows: Vec<ReportRow>,
    pub events: Vec<ScenarioEvent>,
    pub final_kb_version: u32,
    pub final_kb_hash: String,
}

impl ScenarioReport {
    pub fn to_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn rows_at(&self, snr: f64) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.snr_db.0 == snr)
    }
}

/// The reconstruction a receiver produces from a transmission, or `None`
/// when the frame is lost or undecodable. Frames failing only their CRC
/// are decoded anyway.
pub fn receive(tx: &ProtectedTransmission, replica: &KnowledgeBase) -> Option<ImageGray> {
    let bytes = tx.received.as_ref()?;
    let frame = match deserialize_frame(bytes) {
        Ok(f) => f,
        Err(CodecError::Corrupt { frame, .. }) => *frame,
        Err(_) => return None,
    };
    decode(&frame, replica).ok()
}

fn lost_image(img: &ImageGray) -> ImageGray {
    ImageGray::filled(img.original_width, img.original_height, LOST_FILL)
}

fn crop_heatmap(heat: &Heatmap, w: usize, h: usize) -> Heatmap {
    let values = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| heat.get(x, y)).collect();
    Heatmap { width: w, height: h, values }
}

#[derive(Default)]
struct Acc {
    psnr: f64,
    psnr_quant: f64,
    ssim: f64,
    wmse: f64,
    distortion: f64,
    pre_a: f64,
    post_a: f64,
    pre_b: f64,
    post_b: f64,
    lost: f64,
    cbr: f64,
}

/// Runs the whole scenario. Output files are written when `output_dir` is set.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport, HarnessError> {
    config.validate()?;
    let provider = provider_from_spec(&config.importance)?;
    let codes = UepCodes::standard(config.ldpc_seed)?;

    let phases = config.subset_phases();
    let mut subsets: Vec<Vec<ImageGray>> = Vec::with_capacity(phases.len());
    for (p, ph) in config.phases.iter().enumerate() {
        let images = generate_corpus(
            ph.texture_family,
            ph.n_subsets * ph.images_per_subset,
            ph.image_size,
            derive_seed(config.corpus_seed, p as u64),
        )?;
        subsets.extend(images.chunks(ph.images_per_subset).map(<[ImageGray]>::to_vec));
    }

    let mut master = build_kb_with_params(&subsets[0], &config.codec, provider.as_ref(), config.kb_params.clone())?;
    let mut replica = KnowledgeBase::new(config.kb_params.clone());
    apply_message(&mut replica, &decode_message(&encode_message(&full_message(&master))?)?)?;
    let mut events = vec![ScenarioEvent::FullSync {
        subset: 0,
        kb_version: replica.version,
        kb_hash: hex(&kb_hash(&replica)),
    }];
    let mut trigger = TriggerState::new(master.baseline_distortion, &master.params);

    let image_dir = match (&config.output_dir, config.write_images) {
        (Some(dir), true) => {
            let d = dir.join("images");
            fs::create_dir_all(&d).map_err(HarnessError::io(&d))?;
            Some(d)
        }
        _ => None,
    };

    let mut rows = Vec::new();
    let mut frame_index = 0usize;
    for (s, images) in subsets.iter().enumerate() {
        let info = kb_information(images, &master)?;
        let kb_version = master.version;
        let mut acc: Vec<Acc> = config.snrs.iter().map(|_| Acc::default()).collect();

        for (i, img) in images.iter().enumerate() {
            let padded = img.padded();
            let heat = provider.heatmap(&padded)?;
            let enc = encode_detailed(&padded, &master, &heat, &config.codec)?;
            let bytes = serialize_frame(&enc.frame)?;
            let local = decode(&enc.frame, &replica)?;
            let distortion = quantization_distortion(&padded, &master)?;
            let heat_orig = crop_heatmap(&heat, img.width, img.height);
            let psnr_quant = psnr(img, &local)?;

            for (k, snr) in config.snrs.iter().enumerate() {
                let cfg = ChannelConfig {
                    snr_db: snr.0,
                    seed: derive_seed(config.channel_seed, frame_index as u64),
                    max_bp_iters: config.max_bp_iters,
                };
                let tx = uep_frame(&bytes, &enc.frame, &codes, &cfg)?;
                let recon = receive(&tx, &replica);
                let a = &mut acc[k];
                a.lost += f64::from(u8::from(recon.is_none()));
                let recon = recon.unwrap_or_else(|| lost_image(img));
                a.psnr += psnr(img, &recon)?;
                a.psnr_quant += psnr_quant;
                a.ssim += ssim(img, &recon)?;
                a.wmse += weighted_mse(img, &recon, &heat_orig)?.value;
                a.distortion += distortion;
                a.pre_a += tx.class_a.pre_ber;
                a.post_a += tx.class_a.post_ber;
                a.pre_b += tx.class_b.pre_ber;
                a.post_b += tx.class_b.post_ber;
                a.cbr += crate::channel::compute_cbr(tx.symbols.len(), img.width, img.height);
                if let Some(dir) = &image_dir {
                    let path = dir.join(format!("s{s:02}_i{i:02}_snr{snr}.pgm"));
                    recon.write_pgm(&path)?;
                }
            }

            if trigger.should_request_update(distortion) {
                events.push(ScenarioEvent::Request {
                    subset: s,
                    frame: frame_index,
                    kb_version: master.version,
                    statistic: trigger.mean(),
                    baseline: trigger.baseline,
                });
            }
            master.decay_and_refresh(&enc.usage);
            frame_index += 1;
        }

        if config.enable_updates && config.update_points.contains(&s) {
            events.push(update(config, &mut master, &mut replica, &mut trigger, images, provider.as_ref(), s)?);
        }

        let n = images.len() as f64;
        let subset_events: Vec<String> = events.iter().filter(|e| e.subset() == s).map(ScenarioEvent::short).collect();
        for (snr, a) in config.snrs.iter().zip(acc) {
            rows.push(ReportRow {
                subset: s,
                phase: phases[s],
                family: config.phases[phases[s]].texture_family,
                snr_db: *snr,
                kb_version,
                images: images.len(),
                psnr: a.psnr / n,
                psnr_quant: a.psnr_quant / n,
                ssim: a.ssim / n,
                weighted_mse: a.wmse / n,
                distortion: a.distortion / n,
                pre_ber_a: a.pre_a / n,
                post_ber_a: a.post_a / n,
                pre_ber_b: a.pre_b / n,
                post_ber_b: a.post_b / n,
                frame_loss_rate: a.lost / n,
                cbr: a.cbr / n,
                h_x: info.h_x,
                mutual_information: info.mutual_information,
                conditional_entropy: info.conditional_entropy,
                events: subset_events.join("; "),
            });
        }
    }

    let report = ScenarioReport {
        rows,
        events,
        final_kb_version: master.version,
        final_kb_hash: hex(&kb_hash(&master)),
    };
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
        let csv_path = dir.join("report.csv");
        fs::write(&csv_path, report.to_csv()?).map_err(HarnessError::io(&csv_path))?;
        let json_path = dir.join("report.json");
        fs::write(&json_path, report.to_json()?).map_err(HarnessError::io(&json_path))?;
    }
    Ok(report)
}

/// Candidate generation on the subset just sent, pruning, and one DELTA
/// applied to both replicas.
fn update(
    config: &ScenarioConfig,
    master: &mut KnowledgeBase,
    replica: &mut KnowledgeBase,
    trigger: &mut TriggerState,
    images: &[ImageGray],
    provider: &dyn ImportanceProvider,
    subset: usize,
) -> Result<ScenarioEvent, HarnessError> {
    let mut candidates = Vec::new();
    for (g, k, salt) in [
        (Granularity::Coarse, config.candidates_coarse, 0),
        (Granularity::Fine, config.candidates_fine, 1),
    ] {
        let mut feats = Vec::new();
        let mut imps = Vec::new();
        for img in images {
            let padded = img.padded();
            let heat = provider.heatmap(&padded)?;
            feats.extend(extract_patches(&padded, g.patch_side())?);
            imps.extend(block_means(&heat, g.patch_side())?.into_iter().map(|v| v as f32));
        }
        let seed = derive_seed(config.codec.seed, 1000 + 2 * subset as u64 + salt);
        candidates.extend(generate_candidates(master, &feats, &imps, g, &config.codec.kmeans(k, seed))?);
    }
    let removals = master.prune_selection();
    let wire = encode_message(&build_delta(master, &candidates, &removals)?)?;
    let msg = decode_message(&wire)?;
    apply_message(master, &msg)?;
    apply_message(replica, &msg)?;
    let hash = kb_hash(master);
    if hash != kb_hash(replica) {
        return Err(HarnessError::ReplicaDiverged { subset });
    }
    let mut baseline = 0.0;
    for img in images {
        baseline += quantization_distortion(img, master)?;
    }
    baseline /= images.len() as f64;
    trigger.reset(baseline);
    Ok(ScenarioEvent::Apply {
        subset,
        kb_version: master.version,
        added: candidates.len(),
        removed: removals.len(),
        delta_bytes: wire.len(),
        new_baseline: baseline,
        kb_hash: hex(&hash),
    })
}

/// Outcome of sending one frame three ways over the same noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedFrame {
    pub uep_wmse: f64,
    pub random_wmse: f64,
    pub uep_lost: bool,
    pub random_lost: bool,
    /// The whole frame sent at the weaker class-B rate.
    pub unprotected_lost: bool,
}

/// Importance-driven UEP against shuffled class flags and against no UEP,
/// all at one SNR with paired channel seeds.
pub fn compare_protection(
    images: &[ImageGray],
    kb: &KnowledgeBase,
    codec: &CodecConfig,
    provider: &dyn ImportanceProvider,
    codes: &UepCodes,
    snr_db: f64,
    max_bp_iters: usize,
    seed: u64,
) -> Result<Vec<PairedFrame>, HarnessError> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let padded = img.padded();
            let heat = provider.heatmap(&padded)?;
            let heat_orig = crop_heatmap(&heat, img.width, img.height);
            let frame = encode_detailed(&padded, kb, &heat, codec)?.frame;
            let shuffled = permute_class_flags(&frame, derive_seed(seed, 2 * i as u64 + 1));
            let cfg = ChannelConfig { snr_db, seed: derive_seed(seed, 2 * i as u64), max_bp_iters };

            let score = |f: &crate::semcodec::SemanticFrame| -> Result<(f64, bool), HarnessError> {
                let tx = uep_frame(&serialize_frame(f)?, f, codes, &cfg)?;
                let recon = receive(&tx, kb);
                let lost = recon.is_none();
                let recon = recon.unwrap_or_else(|| lost_image(img));
                Ok((weighted_mse(img, &recon, &heat_orig)?.value, lost))
            };
            let (uep_wmse, uep_lost) = score(&frame)?;
            let (random_wmse, random_lost) = score(&shuffled)?;
            let plain = send_unprotected(&serialize_frame(&frame)?, &codes.class_b, &cfg)?;
            Ok(PairedFrame {
                uep_wmse,
                random_wmse,
                uep_lost,
                random_lost,
                unprotected_lost: plain.is_lost(),
            })
        })
        .collect()
}

/// Two-sided sign-test p-value for `wins` against `losses`, ties dropped.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.max(losses);
    // P(X ≥ k) for X ~ Bin(n, 1/2), accumulated in log space.
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_c = 0.0f64;
    let mut terms = Vec::with_capacity(n + 1);
    for j in 0..=n {
        if j > 0 {
            ln_c += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        if j >= k {
            terms.push(ln_c + ln_half_n);
        }
    }
    let tail: f64 = terms.iter().map(|t| t.exp()).sum();
    (2.0 * tail).min(1.0)
}
