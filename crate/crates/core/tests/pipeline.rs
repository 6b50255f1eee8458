//! Library-level integration: synthetic sequence -> real model -> tracker ->
//! metrics, with a weight-file round trip spliced into the middle.

use hit_core::backbone::{ModelConfig, Variant};
use hit_core::metrics::eval_sequence;
use hit_core::model::{AblationSpec, HitModel};
use hit_core::synth::{synth_sequence, Motion};
use hit_core::tracker::{BBox, Tracker};
use hit_core::weights::{load_model, save_model};

fn bits(b: &BBox) -> [u32; 4] {
    [b.x.to_bits(), b.y.to_bits(), b.w.to_bits(), b.h.to_bits()]
}

fn track_all(model: &HitModel, seq: &hit_core::synth::SynthSequence) -> Vec<BBox> {
    let mut tracker = Tracker::init(model, &seq.frames[0], seq.boxes[0]).unwrap();
    let mut out = vec![seq.boxes[0]];
    for frame in &seq.frames[1..] {
        out.push(tracker.track(frame).unwrap());
    }
    out
}

#[test]
fn synth_track_eval_round_trip() {
    let seq = synth_sequence(31, 5, Motion::Linear).unwrap();
    let cfg = ModelConfig::for_variant(Variant::Tiny);
    let model = HitModel::init(&cfg, AblationSpec::default(), 0).unwrap();

    let pred = track_all(&model, &seq);
    assert_eq!(pred.len(), seq.boxes.len());
    // every tracked box stays inside the frame with positive extent
    for b in &pred {
        assert!(b.w >= 1.0 && b.h >= 1.0);
        assert!(b.x >= 0.0 && b.y >= 0.0);
        assert!(b.x + b.w <= 320.0 + 1e-3 && b.y + b.h <= 240.0 + 1e-3);
    }

    let again = track_all(&model, &seq);
    for (a, b) in pred.iter().zip(&again) {
        assert_eq!(bits(a), bits(b), "tracking must be deterministic");
    }

    let m = eval_sequence(&pred, &seq.boxes).unwrap();
    assert!((0.0..=1.0).contains(&m.auc));
    assert!((0.0..=1.0).contains(&m.precision));
    let perfect = eval_sequence(&seq.boxes, &seq.boxes).unwrap();
    assert_eq!(perfect.auc, 1.0);
}

#[test]
fn weight_round_trip_preserves_trajectories() {
    let seq = synth_sequence(32, 4, Motion::Static).unwrap();
    let cfg = ModelConfig::for_variant(Variant::Tiny);
    let spec = AblationSpec::parse("bridge=max,mid downsample=subsample").unwrap();
    let model = HitModel::init(&cfg, spec, 7).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.hitw");
    save_model(&path, &model).unwrap();
    let reloaded = load_model(&path, &cfg, spec).unwrap();

    let a = track_all(&model, &seq);
    let b = track_all(&reloaded, &seq);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(bits(x), bits(y), "reloaded weights must track identically");
    }
}

#[test]
fn ablated_models_track_within_frame() {
    let seq = synth_sequence(33, 3, Motion::Linear).unwrap();
    let cfg = ModelConfig::for_variant(Variant::Tiny);
    for ablation in [
        "bridge=min pos=abs g=off",
        "bridge=mid,min pos=sep downsample=subsample",
    ] {
        let spec = AblationSpec::parse(ablation).unwrap();
        let model = HitModel::init(&cfg, spec, 11).unwrap();
        let pred = track_all(&model, &seq);
        for b in &pred {
            assert!(b.w >= 1.0 && b.h >= 1.0, "{ablation}: degenerate box");
            assert!(
                b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= 320.5 && b.y + b.h <= 240.5,
                "{ablation}: box left the frame"
            );
        }
    }
}
