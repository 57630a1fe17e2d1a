//! `siamtrack` subcommands.

use super::config::{EvalTracker, RunConfig};
use super::{eval_ope, precision_threshold, random_predictions, score_predictions, write_reports, OpeRun, SequenceDataset};
use crate::bias_lab::{run_simulation, runs_csv, summary_csv};
use crate::checkpoint;
use crate::correlation::{count_macs, count_params, CorrConfig, CorrHead, CorrVariant};
use crate::error::{Error, Result};
use crate::geometry::{format_boxes, iou};
use crate::model::SiamModel;
use crate::nn::Session;
use crate::sampling::LabelConfig;
use crate::tensor::Tensor;
use crate::tracker::track_sequence;
use crate::training::{standard_grad_checks, train, SynthPairs};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(name = "siamtrack", about = "Siamese region-proposal tracker at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat key-value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic sequences (PNG frames plus groundtruth.txt) to data.root.
    SynthData,
    /// Train on synthetic pairs and save a checkpoint.
    Train,
    /// Track every sequence of the dataset and write predictions.
    Track,
    /// One-pass evaluation with success/precision reports.
    EvalOpe,
    /// Shift simulation over bias.shifts x bias.seeds.
    BiasSim,
    /// Parameter, MAC and timing table for the correlation heads.
    CorrBench,
    /// Finite-difference checks of the differentiable operators.
    GradCheck,
    /// Print checkpoint sections and normalized fusion weights.
    InspectWeights,
}

/// Parses `argv` and runs the subcommand; returns the process exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(out, "{e}");
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<(RunConfig, String)> {
    let (mut cfg, _) = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => (RunConfig::default(), String::new()),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let canon = cfg.canonical();
    Ok((cfg, canon))
}

fn dataset(cfg: &RunConfig) -> Result<SequenceDataset> {
    match &cfg.data.root {
        Some(root) if root.exists() => SequenceDataset::load_dir(root),
        Some(root) => Err(Error::Dataset(format!("data.root {} does not exist", root.display()))),
        None => SequenceDataset::synthetic(&cfg.synth, cfg.data.sequences, cfg.data.length, cfg.data.seed),
    }
}

fn w(out: &mut dyn Write, s: String) -> Result<()> {
    out.write_all(s.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// Runs one subcommand; `Ok(false)` means it ran but its check failed.
pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<bool> {
    let (cfg, canon) = load_config(cli)?;
    match cli.command {
        Command::SynthData => {
            let root = cfg
                .data
                .root
                .clone()
                .ok_or_else(|| Error::Usage("synth-data needs data.root".into()))?;
            let ds = SequenceDataset::synthetic(&cfg.synth, cfg.data.sequences, cfg.data.length, cfg.data.seed)?;
            ds.write_dir(&root)?;
            w(out, format!("wrote {} sequences ({} frames) to {}\n", ds.sequences.len(), ds.total_frames(), root.display()))?;
            Ok(true)
        }
        Command::Train => {
            let mut model = SiamModel::build(&cfg.model_config(), cfg.seed)?;
            let tc = cfg.train_config();
            let data = SynthPairs {
                spec: cfg.synth.clone(),
                sample: cfg.sample_config(),
                seed: cfg.seed,
            };
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
            let metrics = cfg.out_dir.join("train_metrics.csv");
            let log = train(&mut model, &tc, &data, &LabelConfig::default(), Some(&metrics))?;
            let meta = serde_json::json!({ "train": tc, "shift_range": cfg.shift_range, "synth": cfg.synth });
            checkpoint::save(&model, &cfg.checkpoint, meta)?;
            let totals = log.epoch_totals();
            w(out, format!(
                "epochs {} loss {:.4} -> {:.4}\nfusion {}\ncheckpoint {}\n",
                totals.len(),
                totals.first().copied().unwrap_or(f64::NAN),
                totals.last().copied().unwrap_or(f64::NAN),
                fusion_line(&model),
                cfg.checkpoint.display()
            ))?;
            Ok(true)
        }
        Command::Track => {
            let (model, _) = checkpoint::load(&cfg.checkpoint)?;
            let ds = dataset(&cfg)?;
            ds.verify()?;
            let dir = cfg.out_dir.join("predictions");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for s in &ds.sequences {
                let res = track_sequence(&model, (0..s.len()).map(|t| s.frame(t)), &s.gt[0], &cfg.tracker)?;
                let boxes: Vec<_> = res.iter().map(|r| r.0).collect();
                let p = dir.join(format!("{}.txt", s.name));
                std::fs::write(&p, format_boxes(&boxes)).map_err(|e| Error::io(&p, e))?;
                let m = boxes.iter().zip(&s.gt).map(|(b, g)| iou(b, g)).sum::<f64>() / s.len() as f64;
                w(out, format!("{} frames {} mean_iou {:.4}\n", s.name, s.len(), m))?;
            }
            Ok(true)
        }
        Command::EvalOpe => {
            let ds = dataset(&cfg)?;
            ds.verify()?;
            let thr = precision_threshold(&cfg.tracker);
            let run = match cfg.eval_tracker {
                EvalTracker::Model => {
                    let (model, _) = checkpoint::load(&cfg.checkpoint)?;
                    eval_ope(&model, &ds, &cfg.tracker)?
                }
                EvalTracker::Oracle => {
                    let predictions: Vec<_> = ds.sequences.iter().map(|s| (s.name.clone(), s.gt.clone())).collect();
                    let result = score_predictions(&ds, &predictions, thr)?;
                    OpeRun { result, predictions }
                }
                EvalTracker::Random => {
                    let size = (cfg.synth.canvas as f64, cfg.synth.canvas as f64);
                    let predictions = random_predictions(&ds, size, cfg.seed);
                    let result = score_predictions(&ds, &predictions, thr)?;
                    OpeRun { result, predictions }
                }
            };
            write_reports(&cfg.out_dir, &run, &canon)?;
            w(out, format!(
                "AUC {:.4}\nprecision {:.4} at {:.2} px\nframes {}\n",
                run.result.auc, run.result.precision, run.result.precision_threshold, run.result.frames
            ))?;
            Ok(true)
        }
        Command::BiasSim => {
            let dir = cfg.out_dir.join("bias");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut runs = Vec::new();
            for &shift in &cfg.bias.shifts {
                for &seed in &cfg.bias.seeds {
                    let r = run_simulation(&cfg.bias_run(shift, seed))?;
                    w(out, format!(
                        "shift {shift} seed {seed} central_mass {:.4} chi_square {:.4} entropy {:.4}\n",
                        r.stats.central_mass, r.stats.chi_square, r.stats.entropy
                    ))?;
                    runs.push(r);
                }
            }
            for (name, body) in [("bias_runs.csv", runs_csv(&runs)), ("bias_summary.csv", summary_csv(&runs))] {
                let p = dir.join(name);
                std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            }
            w(out, summary_csv(&runs))?;
            Ok(true)
        }
        Command::CorrBench => {
            let csv = corr_bench(&cfg)?;
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
            let p = cfg.out_dir.join("corr_bench.csv");
            std::fs::write(&p, &csv).map_err(|e| Error::io(&p, e))?;
            w(out, csv)?;
            Ok(true)
        }
        Command::GradCheck => {
            let gc = crate::training::GradCheckConfig {
                seed: cfg.seed,
                ..cfg.gradcheck.clone()
            };
            let mut ok = true;
            for (name, r) in standard_grad_checks(&gc)? {
                let pass = r.max_rel_error < cfg.gradcheck_tol && r.checked > 0;
                ok &= pass;
                w(out, format!(
                    "{name:<11} max_rel_error {:.3e} checked {} skipped {} {}\n",
                    r.max_rel_error,
                    r.checked,
                    r.skipped.len(),
                    if pass { "ok" } else { "FAIL" }
                ))?;
            }
            Ok(ok)
        }
        Command::InspectWeights => {
            let bytes = std::fs::read(&cfg.checkpoint).map_err(|e| Error::io(&cfg.checkpoint, e))?;
            let (model, header) = checkpoint::decode(&bytes)?;
            for l in &model.cfg.levels {
                let prefix = format!("head.l{}", l.tag());
                let n: usize = checkpoint::section(&header, &prefix)
                    .iter()
                    .map(|r| r.shape.iter().product::<usize>())
                    .sum();
                w(out, format!("{prefix} values {n}\n"))?;
            }
            w(out, format!("fusion {}\n", fusion_line(&model)))?;
            Ok(true)
        }
    }
}

fn fusion_line(model: &SiamModel) -> String {
    let f = model.fusion_weights();
    let tags: Vec<String> = model.cfg.levels.iter().map(|l| format!("l{}", l.tag())).collect();
    let fmt = |v: &[f64]| {
        v.iter()
            .zip(&tags)
            .map(|(x, t)| format!("{t}={x:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    format!("alpha [{}] beta [{}]", fmt(&f.normalized_alpha()), fmt(&f.normalized_beta()))
}

/// CSV `variant,D,k,params,flops,wall_time_ms` for each configured size.
pub fn corr_bench(cfg: &RunConfig) -> Result<String> {
    let k = 5;
    let mut s = String::from("variant,D,k,params,flops,wall_time_ms\n");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for &variant in &cfg.bench.variants {
        for &d in &cfg.bench.dims {
            let cc = CorrConfig::new(variant, d);
            let params = count_params(&cc, k).total();
            let flops = 2 * count_macs(&cc, k, cfg.bench.template, cfg.bench.search)?;
            let z = Tensor::randn(&[1, d, cfg.bench.template, cfg.bench.template], 1.0, &mut rng);
            let x = Tensor::randn(&[1, d, cfg.bench.search, cfg.bench.search], 1.0, &mut rng);
            let ms = if variant == CorrVariant::XCorr {
                let t = Instant::now();
                for _ in 0..cfg.bench.repeats {
                    crate::correlation::xcorr(&z, &x, 0.0)?;
                }
                t.elapsed().as_secs_f64() * 1e3 / cfg.bench.repeats.max(1) as f64
            } else {
                let mut store = crate::nn::ParamStore::new();
                let head = CorrHead::build(&mut store, "bench", &cc, k, &mut rng)?;
                let t = Instant::now();
                for _ in 0..cfg.bench.repeats {
                    let mut sess = Session::inference(&store);
                    let zv = sess.tape.constant(z.clone());
                    let xv = sess.tape.constant(x.clone());
                    head.forward(&mut sess, zv, xv)?;
                }
                t.elapsed().as_secs_f64() * 1e3 / cfg.bench.repeats.max(1) as f64
            };
            s.push_str(&format!("{variant},{d},{k},{params},{flops},{ms:.3}\n"));
        }
    }
    Ok(s)
}
