use std::fs;
use std::path::Path;

use stereogc_cli::dataset::{export_sample, ingest_dataset, Layout};
use stereogc_cli::io::{quantize16, read_depth};
use stereogc_cli::synth::{synth_scene, ScenePreset};

fn export_frames(root: &Path, layout: Layout, sequence: &str, frames: &[&str]) {
    for (k, frame) in frames.iter().enumerate() {
        let (scene, r) = synth_scene(ScenePreset::Slant, 12, 16, k as u64).unwrap();
        export_sample(root, layout, sequence, frame, &r.pair, Some(&r.gt_depth_l), &scene.rig).unwrap();
    }
}

#[test]
fn empty_root_yields_nothing() {
    let dir = tempfile::tempdir().unwrap();
    for layout in [Layout::ScaredLike, Layout::LatteLike] {
        let mut ds = ingest_dataset(dir.path(), layout).unwrap();
        assert_eq!(ds.by_ref().count(), 0);
        assert!(ds.skipped().is_empty());
    }
}

#[test]
fn missing_root_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = ingest_dataset(&dir.path().join("nope"), Layout::ScaredLike).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn corrupt_frame_is_skipped_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    export_frames(dir.path(), Layout::ScaredLike, "seq1", &["000", "001", "002", "003"]);
    fs::write(dir.path().join("seq1/right/002.png"), b"not a png").unwrap();
    let mut ds = ingest_dataset(dir.path(), Layout::ScaredLike).unwrap();
    let frames: Vec<String> = ds.by_ref().map(|s| s.frame).collect();
    assert_eq!(frames, ["000", "001", "003"]);
    assert_eq!(ds.skipped().len(), 1);
    assert_eq!(ds.skipped()[0].frame.as_deref(), Some("002"));
}

#[test]
fn sequence_without_calibration_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    export_frames(dir.path(), Layout::LatteLike, "a", &["0", "1"]);
    export_frames(dir.path(), Layout::LatteLike, "b", &["0"]);
    fs::remove_file(dir.path().join("b/calib.txt")).unwrap();
    let mut ds = ingest_dataset(dir.path(), Layout::LatteLike).unwrap();
    let got: Vec<(String, String)> = ds.by_ref().map(|s| (s.sequence, s.frame)).collect();
    assert_eq!(got, [("a".to_string(), "0".to_string()), ("a".to_string(), "1".to_string())]);
    assert_eq!(ds.skipped().len(), 1);
    assert_eq!(ds.skipped()[0].sequence, "b");
    assert_eq!(ds.skipped()[0].frame, None);
}

#[test]
fn export_then_ingest_round_trips() {
    for layout in [Layout::ScaredLike, Layout::LatteLike] {
        let dir = tempfile::tempdir().unwrap();
        let (scene, r) = synth_scene(ScenePreset::SlantOccluded, 20, 24, 5).unwrap();
        export_sample(dir.path(), layout, "s", "f0", &r.pair, Some(&r.gt_depth_l), &scene.rig).unwrap();
        let samples: Vec<_> = ingest_dataset(dir.path(), layout).unwrap().collect();
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!(s.pair.left, quantize16(&r.pair.left));
        assert_eq!(s.pair.right, quantize16(&r.pair.right));
        assert_eq!(s.rig, scene.rig);
        let gt = s.gt_depth.as_ref().unwrap();
        for (a, b) in gt.values().iter().zip(r.gt_depth_l.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(gt.validity(), r.gt_depth_l.validity());
    }
}

#[test]
fn missing_ground_truth_is_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, r) = synth_scene(ScenePreset::Plane, 8, 10, 0).unwrap();
    export_sample(dir.path(), Layout::ScaredLike, "s", "f", &r.pair, None, &scene.rig).unwrap();
    let samples: Vec<_> = ingest_dataset(dir.path(), Layout::ScaredLike).unwrap().collect();
    assert_eq!(samples.len(), 1);
    assert!(samples[0].gt_depth.is_none());
    assert!(read_depth(&dir.path().join("s/depth/f.pfm")).is_err());
}
