use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sebcom::channel::uep::{permute_class_flags, DiagnosticDump};
use sebcom::channel::{send_unprotected, uep_frame, ChannelConfig, ChannelError, UepCodes};
use sebcom::harness::scenario::Snr;
use sebcom::harness::{generate_corpus, run_scenario, Family, HarnessError, ScenarioConfig};
use sebcom::importance::{block_means, provider_from_spec, ImportanceError};
use sebcom::kb::{generate_candidates, Granularity, KbError, KbParams, KnowledgeBase};
use sebcom::rng::derive_seed;
use sebcom::semcodec::{
    build_kb_with_params, decode, deserialize_frame, encode, extract_patches, load_image, serialize_frame,
    CodecConfig, CodecError, ImageGray,
};
use sebcom::sync::{
    apply_message, build_delta, decode_message, encode_message, full_message, hex, kb_hash, SyncError, SyncMessage,
};

#[derive(Parser)]
#[command(name = "sebcom", version, about = "Semantic-base image communication over a simulated channel")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Channel Es/N0 in dB; `inf` for a noiseless channel.
    #[arg(long, global = true, default_value_t = 4.0, allow_negative_numbers = true)]
    snr: f64,
    /// Importance provider: `builtin` or `file:<path>`.
    #[arg(long, global = true, default_value = "builtin")]
    importance: String,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image family as PGM files.
    GenCorpus {
        #[arg(long)]
        family: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a knowledge base and store it as a FULL sync message.
    TrainKb {
        /// Image files or directories of PGM/PPM files.
        #[arg(long, required = true, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(long, default_value_t = 256)]
        k_coarse: usize,
        #[arg(long, default_value_t = 64)]
        k_fine: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode an image into a SEBF frame.
    Encode {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        p_fine: f64,
        #[arg(long, default_value_t = 0.5)]
        p_protect: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct an image from a SEBF frame.
    Decode {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Send a SEBF frame over the simulated channel.
    Transmit {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Uep)]
        mode: Mode,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        /// Received frame; not written when the frame is lost.
        #[arg(long)]
        out: PathBuf,
        /// Optional SEBT diagnostic dump.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Knowledge-base synchronization messages.
    Sync {
        #[command(subcommand)]
        action: SyncAction,
    },
    /// Run an intent-shift scenario from a JSON config.
    RunScenario {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides the config's.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Importance-driven classes.
    Uep,
    /// Same class sizes, shuffled class membership.
    Random,
    /// One class at the weaker rate.
    None,
}

#[derive(Subcommand)]
enum SyncAction {
    /// Emit a REQUEST for the given KB.
    Request {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        statistic: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit the KB as a FULL message.
    Full {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a DELTA from recent images; also writes the updated KB.
    Delta {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(long, default_value_t = 64)]
        k_coarse: usize,
        #[arg(long, default_value_t = 16)]
        k_fine: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_kb: PathBuf,
    },
    /// Apply a DELTA or FULL message to a KB.
    Apply {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        message: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the KB's version and SHA-256 hash.
    Hash {
        #[arg(long)]
        kb: PathBuf,
    },
}

struct Failure {
    kind: &'static str,
    message: String,
}

macro_rules! failure_from {
    ($($t:ty => $kind:literal),* $(,)?) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure { kind: $kind, message: e.to_string() }
            }
        }
    )*};
}

failure_from! {
    CodecError => "codec",
    SyncError => "sync",
    ChannelError => "channel",
    KbError => "kb",
    ImportanceError => "importance",
    HarnessError => "harness",
    serde_json::Error => "config",
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure { kind: "io", message: format!("{}: {e}", path.display()) }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(io_failure(path))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(io_failure(path))
}

fn load_kb(path: &Path) -> Result<KnowledgeBase, Failure> {
    let msg = decode_message(&read(path)?)?;
    if !matches!(msg, SyncMessage::Full { .. }) {
        return Err(Failure { kind: "sync", message: format!("{} is not a FULL message", path.display()) });
    }
    let mut kb = KnowledgeBase::new(KbParams::default());
    apply_message(&mut kb, &msg)?;
    Ok(kb)
}

fn save_kb(kb: &KnowledgeBase, path: &Path) -> Result<(), Failure> {
    write(path, &encode_message(&full_message(kb))?)
}

/// Files given directly, plus the sorted `.pgm`/`.ppm` entries of directories.
fn collect_images(paths: &[PathBuf]) -> Result<Vec<ImageGray>, Failure> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(io_failure(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "pgm" || x == "ppm"))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Failure { kind: "io", message: "no images found".into() });
    }
    files.iter().map(|f| Ok(load_image(f)?)).collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = cli.common;
    match cli.command {
        Command::GenCorpus { family, n, size, out } => {
            let family: Family = family.parse()?;
            let images = generate_corpus(family, n, size, common.seed)?;
            fs::create_dir_all(&out).map_err(io_failure(&out))?;
            for (i, img) in images.iter().enumerate() {
                img.write_pgm(out.join(format!("{family}_{i:03}.pgm")))?;
            }
        }
        Command::TrainKb { images, k_coarse, k_fine, out } => {
            let corpus = collect_images(&images)?;
            let codec = CodecConfig { k_coarse, k_fine, seed: common.seed, ..CodecConfig::default() };
            let provider = provider_from_spec(&common.importance)?;
            let kb = build_kb_with_params(&corpus, &codec, provider.as_ref(), KbParams::default())?;
            save_kb(&kb, &out)?;
            println!("{}", json!({ "kb_version": kb.version, "sebs": kb.sebs.len(), "kb_hash": hex(&kb_hash(&kb)) }));
        }
        Command::Encode { kb, image, p_fine, p_protect, out } => {
            let kb = load_kb(&kb)?;
            let img = load_image(&image)?.padded();
            let provider = provider_from_spec(&common.importance)?;
            let heat = provider.heatmap(&img)?;
            let codec = CodecConfig { p_fine, p_protect, ..CodecConfig::default() };
            let frame = encode(&img, &kb, &heat, &codec)?;
            let bytes = serialize_frame(&frame)?;
            write(&out, &bytes)?;
            println!("{}", json!({ "bytes": bytes.len(), "cells": frame.n_cells(), "kb_version": frame.kb_version }));
        }
        Command::Decode { kb, frame, out } => {
            let kb = load_kb(&kb)?;
            let frame = match deserialize_frame(&read(&frame)?) {
                Ok(f) => f,
                Err(CodecError::Corrupt { frame, .. }) => {
                    eprintln!("{}", json!({ "warning": "crc", "message": "frame CRC mismatch; decoding anyway" }));
                    *frame
                }
                Err(e) => return Err(e.into()),
            };
            decode(&frame, &kb)?.write_pgm(&out)?;
        }
        Command::Transmit { frame, mode, max_iters, out, dump } => {
            let bytes = read(&frame)?;
            let parsed = deserialize_frame(&bytes)?;
            let codes = UepCodes::standard(derive_seed(common.seed, 0))?;
            let cfg = ChannelConfig { snr_db: common.snr, seed: derive_seed(common.seed, 1), max_bp_iters: max_iters };
            let tx = match mode {
                Mode::Uep => uep_frame(&bytes, &parsed, &codes, &cfg)?,
                Mode::Random => {
                    let shuffled = permute_class_flags(&parsed, derive_seed(common.seed, 2));
                    uep_frame(&serialize_frame(&shuffled)?, &shuffled, &codes, &cfg)?
                }
                Mode::None => send_unprotected(&bytes, &codes.class_b, &cfg)?,
            };
            if let Some(rx) = &tx.received {
                write(&out, rx)?;
            }
            if let Some(path) = dump {
                write(&path, &DiagnosticDump::from(&tx).to_bytes())?;
            }
            println!(
                "{}",
                json!({
                    "snr_db": Snr(common.snr),
                    "lost": tx.is_lost(),
                    "symbols": tx.symbols.len(),
                    "class_a": { "blocks": tx.class_a_blocks, "failed": tx.class_a.failed_blocks,
                                 "pre_ber": tx.class_a.pre_ber, "post_ber": tx.class_a.post_ber },
                    "class_b": { "blocks": tx.class_b_blocks, "failed": tx.class_b.failed_blocks,
                                 "pre_ber": tx.class_b.pre_ber, "post_ber": tx.class_b.post_ber },
                })
            );
        }
        Command::Sync { action } => sync(action, &common)?,
        Command::RunScenario { config, out } => {
            let mut cfg: ScenarioConfig = match &config {
                Some(path) => serde_json::from_slice(&read(path)?)?,
                None => ScenarioConfig::default(),
            };
            if out.is_some() {
                cfg.output_dir = out;
            }
            let report = run_scenario(&cfg)?;
            if cfg.output_dir.is_none() {
                print!("{}", String::from_utf8_lossy(&report.to_csv()?));
            }
        }
    }
    Ok(())
}

fn sync(action: SyncAction, common: &Common) -> Result<(), Failure> {
    match action {
        SyncAction::Request { kb, statistic, out } => {
            let kb = load_kb(&kb)?;
            let msg = SyncMessage::Request { kb_version_base: kb.version, statistic };
            write(&out, &encode_message(&msg)?)?;
        }
        SyncAction::Full { kb, out } => save_kb(&load_kb(&kb)?, &out)?,
        SyncAction::Delta { kb, images, k_coarse, k_fine, out, out_kb } => {
            let mut kb = load_kb(&kb)?;
            let provider = provider_from_spec(&common.importance)?;
            let codec = CodecConfig::default();
            let window: Vec<ImageGray> = collect_images(&images)?.iter().map(ImageGray::padded).collect();
            let mut candidates = Vec::new();
            for (g, k, salt) in [(Granularity::Coarse, k_coarse, 0), (Granularity::Fine, k_fine, 1)] {
                let mut feats = Vec::new();
                let mut imps = Vec::new();
                for img in &window {
                    let heat = provider.heatmap(img)?;
                    feats.extend(extract_patches(img, g.patch_side())?);
                    imps.extend(block_means(&heat, g.patch_side())?.into_iter().map(|v| v as f32));
                }
                let km = codec.kmeans(k, derive_seed(common.seed, salt));
                candidates.extend(generate_candidates(&kb, &feats, &imps, g, &km)?);
            }
            let removals = kb.prune_selection();
            let msg = build_delta(&kb, &candidates, &removals)?;
            let wire = encode_message(&msg)?;
            apply_message(&mut kb, &msg)?;
            write(&out, &wire)?;
            save_kb(&kb, &out_kb)?;
            println!(
                "{}",
                json!({ "added": candidates.len(), "removed": removals.len(), "bytes": wire.len(),
                        "kb_version": kb.version, "kb_hash": hex(&kb_hash(&kb)) })
            );
        }
        SyncAction::Apply { kb, message, out } => {
            let mut kb = load_kb(&kb)?;
            let msg = decode_message(&read(&message)?)?;
            apply_message(&mut kb, &msg)?;
            save_kb(&kb, &out)?;
            println!("{}", json!({ "kb_version": kb.version, "kb_hash": hex(&kb_hash(&kb)) }));
        }
        SyncAction::Hash { kb } => {
            let kb = load_kb(&kb)?;
            println!("{}", json!({ "kb_version": kb.version, "kb_hash": hex(&kb_hash(&kb)) }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::FAILURE
        }
    }
}
