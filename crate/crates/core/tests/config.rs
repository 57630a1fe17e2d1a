use siamtrack::backbone::{BackboneVariant, Level};
use siamtrack::harness::config::*;
use siamtrack::Error;

#[test]
fn every_documented_section_is_settable() {
    let text = "\
seed = 4
model.variant = padfree
model.levels = 5
train.epochs = 4
train.warmup_epochs = 1
train.shift_range = 16
synth.appearance_change = 0.5
tracker.window_influence = 0.3
data.sequences = 3
io.out_dir = elsewhere
eval.tracker = random
bias.shifts = 0, 8
gradcheck.tol = 1e-7
bench.dims = 8, 16
";
    let c = RunConfig::from_text(text).unwrap();
    assert_eq!(c.seed, 4);
    assert_eq!(c.variant, BackboneVariant::PadfreeShallow);
    assert_eq!(c.levels, vec![Level::Conv5]);
    assert_eq!(c.shift_range, 16.0);
    assert_eq!(c.bias.shifts, vec![0.0, 8.0]);
    assert_eq!(c.data.sequences, 3);
    c.validate().unwrap();
}

#[test]
fn canonical_text_is_stable() {
    let a = RunConfig::from_text("seed = 3\ntrain.epochs = 5").unwrap();
    let b = RunConfig::from_text("train.epochs = 5\nseed = 3").unwrap();
    assert_eq!(a.canonical(), b.canonical());
}

#[test]
fn errors_name_the_key() {
    for bad in ["bogus = 1", "train.epochs = -1", "seed", "seed = 1\nseed = 1", "eval.tracker = psychic"] {
        match RunConfig::from_text(bad) {
            Err(Error::Config(msg)) => assert!(!msg.is_empty()),
            other => panic!("{bad:?} gave {other:?}"),
        }
    }
}

#[test]
fn comments_and_blank_lines_ignored() {
    let m = parse_pairs("# header\n\nseed = 2 # inline\n").unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m["seed"], "2");
}

#[test]
fn padfree_multi_level_rejected() {
    assert!(matches!(RunConfig::from_text("model.variant = padfree\nmodel.levels = 3,5"), Err(Error::Config(_))));
}
