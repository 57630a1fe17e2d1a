use siamtrack::harness::cli::run;
use std::path::Path;

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut argv = vec!["siamtrack"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(cli(&["frobnicate"]).0, 2);
    assert_eq!(cli(&[]).0, 2);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "no.such.key = 1\n");
    let (code, out) = cli(&["--config", &cfg, "grad-check"]);
    assert_eq!(code, 2, "{out}");
    let cfg = write_config(dir.path(), "seed = 1\nseed = 2\n");
    assert_eq!(cli(&["--config", &cfg, "grad-check"]).0, 2);
}

#[test]
fn missing_checkpoint_fails_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("io.checkpoint = {}\n", dir.path().join("none.ckpt").display()));
    assert_eq!(cli(&["--config", &cfg, "inspect-weights"]).0, 1);
}

#[test]
fn oracle_eval_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!("eval.tracker = oracle\ndata.sequences = 2\ndata.length = 6\nio.out_dir = {}\n", out_dir.display()),
    );
    let (code, out) = cli(&["--config", &cfg, "eval-ope"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("AUC 1.0000"), "{out}");
    assert!(out_dir.join("ope_report.csv").exists());
    assert!(out_dir.join("summary.txt").exists());
    assert!(out_dir.join("predictions/synth_001.txt").exists());
}

#[test]
fn synth_data_roundtrips_through_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let cfg = write_config(
        dir.path(),
        &format!(
            "eval.tracker = oracle\ndata.sequences = 2\ndata.length = 4\ndata.root = {}\nio.out_dir = {}\n",
            root.display(),
            dir.path().join("out").display()
        ),
    );
    assert_eq!(cli(&["--config", &cfg, "synth-data"]).0, 0);
    assert!(root.join("synth_000/groundtruth.txt").exists());
    let (code, out) = cli(&["--config", &cfg, "eval-ope"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("AUC 1.0000"), "{out}");
}

#[test]
fn grad_check_passes() {
    let (code, out) = cli(&["grad-check"]);
    assert_eq!(code, 0, "{out}");
    for op in ["dw_xcorr", "up_xcorr", "fusion", "smooth_l1", "total_loss"] {
        assert!(out.contains(op), "{out}");
    }
}

#[test]
fn train_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let cfg = write_config(
        dir.path(),
        &format!(
            "train.epochs = 2\ntrain.warmup_epochs = 1\ntrain.pairs_per_epoch = 8\nio.checkpoint = {}\nio.out_dir = {}\n",
            ckpt.display(),
            dir.path().join("out").display()
        ),
    );
    let (code, out) = cli(&["--config", &cfg, "train"]);
    assert_eq!(code, 0, "{out}");
    assert!(dir.path().join("out/train_metrics.csv").exists());
    let (code, out) = cli(&["--config", &cfg, "inspect-weights"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("fusion"), "{out}");
}
