use sebcom::channel::{uep_frame, ChannelConfig, UepCodes};
use sebcom::harness::scenario::{receive, Snr, LOST_FILL};
use sebcom::harness::{generate_corpus, run_scenario, Family, PhaseConfig, ScenarioConfig};
use sebcom::importance::{BuiltinSaliency, ImportanceProvider};
use sebcom::semcodec::{build_kb, decode, encode, load_image, serialize_frame, CodecConfig};

fn small_codec() -> CodecConfig {
    CodecConfig { k_coarse: 16, k_fine: 16, ..CodecConfig::default() }
}

fn two_phase(enable_updates: bool) -> ScenarioConfig {
    let phase = |f| PhaseConfig { texture_family: f, n_subsets: 2, images_per_subset: 4, image_size: 128 };
    ScenarioConfig {
        phases: vec![phase(Family::Blobs), phase(Family::Checker)],
        update_points: vec![2],
        enable_updates,
        codec: small_codec(),
        snrs: vec![Snr(f64::INFINITY)],
        candidates_coarse: 16,
        candidates_fine: 16,
        ..ScenarioConfig::default()
    }
}

#[test]
fn noiseless_reception_equals_local_decode() {
    let train = generate_corpus(Family::Blobs, 4, 128, 1).unwrap();
    let kb = build_kb(&train, &small_codec(), &BuiltinSaliency).unwrap();
    let codes = UepCodes::standard(5).unwrap();
    for family in [Family::Blobs, Family::Gratings, Family::Gradients] {
        for img in generate_corpus(family, 3, 96, 2).unwrap() {
            let heat = BuiltinSaliency.heatmap(&img).unwrap();
            let frame = encode(&img, &kb, &heat, &small_codec()).unwrap();
            let bytes = serialize_frame(&frame).unwrap();
            let cfg = ChannelConfig { snr_db: f64::INFINITY, ..ChannelConfig::default() };
            let tx = uep_frame(&bytes, &frame, &codes, &cfg).unwrap();
            assert_eq!(tx.received.as_deref(), Some(&bytes[..]));
            assert_eq!(receive(&tx, &kb).unwrap(), decode(&frame, &kb).unwrap());
        }
    }
}

#[test]
fn frozen_kb_degrades_on_the_second_phase() {
    let report = run_scenario(&two_phase(false)).unwrap();
    let mean = |phase| {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.phase == phase).collect();
        rows.iter().map(|r| r.distortion).sum::<f64>() / rows.len() as f64
    };
    assert!(mean(1) > mean(0), "{} vs {}", mean(1), mean(0));
    assert!(report.rows.iter().all(|r| r.kb_version == 0));
}

#[test]
fn update_bumps_version_and_keeps_replicas_in_step() {
    let report = run_scenario(&two_phase(true)).unwrap();
    let versions: Vec<u32> = report.rows.iter().map(|r| r.kb_version).collect();
    assert_eq!(versions, vec![0, 0, 0, 1]);
    assert_eq!(report.final_kb_version, 1);
    // Noiseless and synchronized: every frame decodes as it would locally.
    assert!(report.rows.iter().all(|r| r.psnr == r.psnr_quant && r.frame_loss_rate == 0.0));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut cfg = two_phase(true);
    cfg.snrs = vec![Snr(f64::INFINITY), Snr(1.5)];
    cfg.write_images = true;
    for dir in [&dir_a, &dir_b] {
        run_scenario(&ScenarioConfig { output_dir: Some(dir.path().to_owned()), ..cfg.clone() }).unwrap();
    }
    for name in ["report.csv", "report.json"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        assert_eq!(a, std::fs::read(dir_b.path().join(name)).unwrap(), "{name}");
    }
    let csv = std::fs::read_to_string(dir_a.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("subset,phase,family,snr_db,kb_version,"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    let images = std::fs::read_dir(dir_a.path().join("images")).unwrap().count();
    assert_eq!(images, 4 * 4 * 2);
}

#[test]
fn lost_frames_become_mid_grey() {
    let train = generate_corpus(Family::Blobs, 2, 64, 1).unwrap();
    let kb = build_kb(&train, &small_codec(), &BuiltinSaliency).unwrap();
    let img = &train[0];
    let frame = encode(img, &kb, &BuiltinSaliency.heatmap(img).unwrap(), &small_codec()).unwrap();
    let bytes = serialize_frame(&frame).unwrap();
    let cfg = ChannelConfig { snr_db: -15.0, ..ChannelConfig::default() };
    let tx = uep_frame(&bytes, &frame, &UepCodes::standard(1).unwrap(), &cfg).unwrap();
    assert!(tx.is_lost());
    assert!(receive(&tx, &kb).is_none());

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = two_phase(false);
    cfg.snrs = vec![Snr(-15.0)];
    cfg.write_images = true;
    cfg.output_dir = Some(dir.path().to_owned());
    let report = run_scenario(&cfg).unwrap();
    assert!(report.rows.iter().all(|r| r.frame_loss_rate == 1.0));
    for entry in std::fs::read_dir(dir.path().join("images")).unwrap() {
        let recon = load_image(entry.unwrap().path()).unwrap();
        assert!(recon.pixels.iter().all(|&p| p == LOST_FILL));
    }
}
