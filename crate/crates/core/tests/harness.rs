use siamtrack::harness::config::RunConfig;
use siamtrack::harness::*;
use siamtrack::sampling::SynthSpec;

fn oracle_run(ds: &SequenceDataset) -> OpeRun {
    let predictions: Vec<_> = ds.sequences.iter().map(|s| (s.name.clone(), s.gt.clone())).collect();
    let result = score_predictions(ds, &predictions, 10.0).unwrap();
    OpeRun { result, predictions }
}

#[test]
fn reports_are_byte_stable() {
    let ds = SequenceDataset::synthetic(&SynthSpec::default(), 3, 8, 5).unwrap();
    let text = RunConfig::default().canonical();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_reports(a.path(), &oracle_run(&ds), &text).unwrap();
    write_reports(b.path(), &oracle_run(&ds), &text).unwrap();
    for f in ["ope_report.csv", "summary.txt", "predictions/synth_002.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let summary = std::fs::read_to_string(a.path().join("summary.txt")).unwrap();
    assert!(summary.contains(&config_hash(&text)));
}

#[test]
fn dataset_dir_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = SequenceDataset::synthetic(&SynthSpec::default(), 2, 5, 9).unwrap();
    ds.write_dir(dir.path()).unwrap();
    let back = SequenceDataset::load_dir(dir.path()).unwrap();
    assert_eq!(back.total_frames(), 10);
    for (a, b) in ds.sequences.iter().zip(&back.sequences) {
        assert_eq!(a.name, b.name);
        for (x, y) in a.gt.iter().zip(&b.gt) {
            assert!(x.center_distance(y) < 1e-9);
        }
        let (fa, fb) = (a.frame(4).unwrap(), b.frame(4).unwrap());
        assert_eq!((fa.width, fa.height), (fb.width, fb.height));
    }
}

#[test]
fn frame_count_mismatch_is_a_dataset_error() {
    let dir = tempfile::tempdir().unwrap();
    SequenceDataset::synthetic(&SynthSpec::default(), 1, 3, 9).unwrap().write_dir(dir.path()).unwrap();
    let gt = dir.path().join("synth_000/groundtruth.txt");
    let text = std::fs::read_to_string(&gt).unwrap();
    std::fs::write(&gt, format!("{text}1,1,5,5\n")).unwrap();
    assert!(matches!(SequenceDataset::load_dir(dir.path()), Err(siamtrack::Error::Dataset(_))));
}

#[test]
fn random_baseline_is_poor() {
    let ds = SequenceDataset::synthetic(&SynthSpec::default(), 4, 30, 2).unwrap();
    let c = SynthSpec::default().canvas as f64;
    let r = score_predictions(&ds, &random_predictions(&ds, (c, c), 3), 10.0).unwrap();
    assert!(r.auc < 0.1, "{}", r.auc);
    assert_eq!(thresholds().len(), 21);
}

#[test]
fn config_hash_tracks_content() {
    let a = RunConfig::default().canonical();
    let b = RunConfig::from_text("seed = 12").unwrap().canonical();
    assert_eq!(config_hash(&a), config_hash(&a));
    assert_ne!(config_hash(&a), config_hash(&b));
    assert_eq!(config_hash(&a).len(), 16);
}
