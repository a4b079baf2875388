//! End-to-end checks of encoder pretraining on a small rendered corpus:
//! feature quality, codec fidelity, detection, artifact round trips, and
//! determinism. One corpus and one pretraining run are shared by all tests.

use std::sync::OnceLock;

use idsprite_model::{
    default_window_sizes, iou, load_encoders, pretrain_encoders, save_encoders, EncoderSet,
    ModelError, PretrainConfig,
};
use idsprite_world::{build_dataset, Dataset, WorldParams};
use ndarray::Array4;

fn world_params() -> WorldParams {
    WorldParams { frames: 4, height: 32, width: 32, ..WorldParams::default() }
}

fn pretrain_config() -> PretrainConfig {
    PretrainConfig { seed: 11, ..PretrainConfig::default() }
}

fn fixture() -> &'static (Dataset, EncoderSet) {
    static FIXTURE: OnceLock<(Dataset, EncoderSet)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dataset =
            build_dataset(12, 4, [1.0, 0.0, 0.0], 7, &world_params()).expect("corpus build");
        let set = pretrain_encoders(&dataset, &pretrain_config()).expect("pretraining");
        (dataset, set)
    })
}

#[test]
fn report_snapshot() {
    let (_, set) = fixture();
    println!("{:#?}", set.header.report);
}

#[test]
fn identity_embedding_separates_identities() {
    let (_, set) = fixture();
    let r = &set.header.report;
    assert!(r.identity_margin > 0.1, "identity margin {} too small", r.identity_margin);
    assert!(r.retrieval_accuracy >= 0.8, "retrieval accuracy {} too low", r.retrieval_accuracy);
}

#[test]
fn caption_features_align_with_matching_crops() {
    let (_, set) = fixture();
    let r = &set.header.report;
    assert!(r.text_margin > 0.15, "text margin {} too small", r.text_margin);
}

#[test]
fn codec_reconstructs_heldout_frames() {
    let (_, set) = fixture();
    let r = &set.header.report;
    assert!(r.tau_codec < 0.01, "holdout reconstruction error {} too high", r.tau_codec);
    assert!(r.latent_scale > 0.0 && r.latent_scale.is_finite());
}

#[test]
fn codec_keeps_blank_canvas_blank() {
    let (_, set) = fixture();
    let black: Array4<f64> = Array4::zeros((1, 3, 32, 32));
    let z = set.codec.encode_frames(&black).expect("encode");
    let back = set.codec.decode_frames(&z).expect("decode");
    let worst = back.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 0.1, "blank frame reconstructs with max deviation {worst}");
}

#[test]
fn detector_localizes_visible_sprites() {
    let (dataset, set) = fixture();
    let sizes = default_window_sizes(32, 32);
    let mut tried = 0;
    let mut hits = 0;
    for sample in dataset.samples.iter().step_by(5).take(5) {
        let video = &sample.video;
        for f in 0..video.frame_count() {
            if video.visibility[f] < 1.0 {
                continue;
            }
            tried += 1;
            let frame = video.frames.frame_array(f);
            if let Some(det) = set.attr.detect_sprite(&frame, &sizes, 2, 0.5) {
                if iou(&det.box_, &video.boxes[f]) >= 0.5 {
                    hits += 1;
                }
            }
            break; // one frame per video keeps this test quick
        }
    }
    assert!(tried >= 4, "fixture has too few fully visible frames");
    assert!(hits * 10 >= tried * 8, "detector localized only {hits}/{tried} sprites");
}

#[test]
fn attribute_heads_generalize_to_heldout_videos() {
    let (_, set) = fixture();
    let a = &set.header.report.attr;
    assert!(a.shape >= 0.8, "shape accuracy {}", a.shape);
    assert!(a.color >= 0.9, "color accuracy {}", a.color);
    assert!(a.marking >= 0.7, "marking accuracy {}", a.marking);
    assert!(a.object >= 0.9, "object accuracy {}", a.object);
    assert!(a.background >= 0.9, "background accuracy {}", a.background);
    assert!(a.scale >= 0.9, "scale accuracy {}", a.scale);
    assert!(a.occlusion >= 0.7, "occlusion accuracy {}", a.occlusion);
    assert!(a.motion >= 0.7, "motion accuracy {}", a.motion);
}

#[test]
fn vision_space_keeps_scene_identity_space_drops_it() {
    let (_, set) = fixture();
    let r = &set.header.report;
    assert!(
        r.probe_bg_from_vision >= 0.6,
        "background probe on vision features only reaches {}",
        r.probe_bg_from_vision
    );
    assert!(
        r.probe_bg_from_vision >= r.probe_bg_from_identity + 0.1,
        "identity features leak scene: vision probe {} vs identity probe {}",
        r.probe_bg_from_vision,
        r.probe_bg_from_identity
    );
}

#[test]
fn artifact_round_trips_and_gates_corpus_hash() {
    let (_, set) = fixture();
    let path = std::env::temp_dir().join(format!("idsprite-enc-{}.idsa", std::process::id()));
    save_encoders(&path, set).expect("save");

    let loaded =
        load_encoders(&path, Some(set.header.corpus_hash.as_str()), false).expect("load");
    assert_eq!(loaded.hashes(), set.hashes());
    assert_eq!(loaded.header, set.header);

    let err = match load_encoders(&path, Some("deadbeef"), false) {
        Err(e) => e,
        Ok(_) => panic!("load with a wrong corpus hash should fail"),
    };
    assert!(matches!(err, ModelError::CorpusHashMismatch { .. }), "got {err}");
    let forced = load_encoders(&path, Some("deadbeef"), true).expect("override load");
    assert_eq!(forced.hashes(), set.hashes());

    std::fs::remove_file(&path).ok();
}

#[test]
fn pretraining_is_deterministic() {
    let dataset = build_dataset(6, 2, [1.0, 0.0, 0.0], 3, &world_params()).expect("corpus");
    let cfg = PretrainConfig {
        seed: 5,
        codec_steps: 40,
        contrastive_steps: 40,
        identity_steps: 40,
        attr_steps: 40,
        probe_steps: 40,
        ..PretrainConfig::default()
    };
    let a = pretrain_encoders(&dataset, &cfg).expect("first run");
    let b = pretrain_encoders(&dataset, &cfg).expect("second run");
    assert_eq!(a.hashes(), b.hashes());
    assert_eq!(a.header.report, b.header.report);
}
