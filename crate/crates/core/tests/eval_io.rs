use std::path::Path;

use tracklab::error::Error;
use tracklab::eval::{
    discover_sequences, evaluate_runs, load_attributes, load_frame, load_sequence, run_benchmark, SequenceSpec,
};
use tracklab::pipeline::{PipelineConfig, TrackerKind};
use tracklab::synth::{generate, write_sequence, SynthCase, SynthConfig};

fn write_static(root: &Path, name: &str, frames: usize) -> SequenceSpec {
    let mut seq = generate(SynthCase::Static, &SynthConfig { frames, ..Default::default() }).unwrap();
    seq.name = name.to_string();
    let dir = root.join(name);
    write_sequence(&seq, &dir).unwrap();
    load_sequence(&dir).unwrap()
}

#[test]
fn written_sequences_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_static(dir.path(), "a", 3);
    let seq = generate(SynthCase::Static, &SynthConfig { frames: 3, ..Default::default() }).unwrap();
    assert_eq!(spec.ground_truth, seq.truth);
    let frame = load_frame(&spec.frames[0], 0).unwrap();
    let diff = frame
        .gray()
        .as_slice()
        .iter()
        .zip(seq.frames[0].gray().as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 0.5 / 255.0 + 1e-12);
    assert_eq!(discover_sequences(dir.path()).unwrap(), vec![dir.path().join("a")]);
    assert_eq!(discover_sequences(&dir.path().join("a")).unwrap().len(), 1);
}

#[test]
fn frame_count_mismatch_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_static(dir.path(), "b", 3);
    std::fs::write(dir.path().join("b/groundtruth_rect.txt"), "1,1,10,10\n").unwrap();
    match load_sequence(&dir.path().join("b")) {
        Err(Error::FrameCountMismatch { name, images, boxes }) => assert_eq!((name.as_str(), images, boxes), ("b", 3, 1)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn sixteen_bit_images_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("deep.png");
    image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(4, 4).save(&path).unwrap();
    assert!(matches!(load_frame(&path, 0), Err(Error::UnsupportedImage { .. })));
}

#[test]
fn unknown_attribute_codes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("attrs.json");
    std::fs::write(&path, r#"{"a": ["IV", "XYZ"]}"#).unwrap();
    assert!(matches!(load_attributes(&path), Err(Error::InvalidConfig(_))));
    std::fs::write(&path, r#"{"a": ["IV", "OCC"]}"#).unwrap();
    assert_eq!(load_attributes(&path).unwrap()["a"].len(), 2);
}

#[test]
fn failing_sequence_does_not_stop_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_static(dir.path(), "good", 4);
    let mut bad = write_static(dir.path(), "bad", 4);
    std::fs::write(&bad.frames[2], b"not an image").unwrap();
    bad.attributes.insert("OCC".into());
    let out = dir.path().join("out");
    let cfg = PipelineConfig::for_kind(TrackerKind::Srdcf);
    let agg = run_benchmark(&[good, bad], &cfg, &out).unwrap();
    assert_eq!(agg.sequences, vec!["good".to_string()]);
    assert!(agg.failures.contains_key("bad"));
    assert!(!agg.by_attribute.contains_key("OCC"));
    assert!(out.join("srdcf/good/run.json").is_file());
    assert!(!out.join("srdcf/bad").exists());
}

#[test]
fn empty_inputs_give_empty_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let agg = run_benchmark(&[], &PipelineConfig::default(), dir.path()).unwrap();
    assert!(agg.overall.is_none() && agg.sequences.is_empty());
    assert!(evaluate_runs(&dir.path().join("srdcf"), &dir.path().join("eval")).unwrap().is_empty());
}
