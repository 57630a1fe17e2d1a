//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
//! Slow (about half an hour on one core): it trains 21 desk-scale models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamtrack::backbone::{build_backbone, shift_deviation, BackboneConfig, Level};
use siamtrack::bias_lab::{median, run_simulation, BiasRun, BiasRunConfig};
use siamtrack::correlation::{count_params, dw_xcorr, CorrConfig, CorrVariant};
use siamtrack::geometry::{decode_regression, encode_regression, iou, BBox};
use siamtrack::harness::config::RunConfig;
use siamtrack::harness::{eval_ope, precision_threshold, random_predictions, score_predictions, SequenceDataset};
use siamtrack::model::SiamModel;
use siamtrack::sampling::LabelConfig;
use siamtrack::tensor::Tensor;
use siamtrack::training::{lr_schedule, standard_grad_checks, train, GradCheckConfig, SynthPairs, TrainConfig};
use std::time::Instant;

type Outcome = Result<(bool, String), String>;

fn report(results: &mut Vec<bool>, name: &str, out: Outcome) {
    let (ok, msg) = out.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("{} {name}: {msg}", if ok { "PASS" } else { "FAIL" });
    results.push(ok);
}

fn e<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

fn c1_param_ratio() -> Outcome {
    let k = 5;
    let dw = count_params(&CorrConfig::new(CorrVariant::DwXCorr, 256), k).total();
    let up = count_params(&CorrConfig::new(CorrVariant::UpXCorr, 256), k).total();
    let r = dw as f64 / up as f64;
    Ok((r <= 0.1, format!("dw {dw} / up {up} = {r:.4} (<= 0.1)")))
}

fn c2_equivariance() -> Outcome {
    let (pf, pfs) = build_backbone(&BackboneConfig::desk_padfree(), 11).map_err(e)?;
    let (pd, pds) = build_backbone(&BackboneConfig::desk(), 11).map_err(e)?;
    let a = shift_deviation(&pf, &pfs, Level::Conv5, 127, 1, 4).map_err(e)?;
    let b = shift_deviation(&pd, &pds, Level::Conv5, 127, 1, 4).map_err(e)?;
    let ok = a.max_dev < 1e-5 && b.border_dev > 1e-3;
    Ok((ok, format!(
        "4 px shift: pad-free max dev {:.2e} (< 1e-5), padded border dev {:.2e} (> 1e-3)",
        a.max_dev, b.border_dev
    )))
}

fn c3_bias(runs: &[Vec<BiasRun>]) -> Outcome {
    let med: Vec<f64> = runs.iter().map(|rs| median(&rs.iter().map(|r| r.stats.chi_square).collect::<Vec<_>>())).collect();
    let central: Vec<f64> = runs.iter().map(|rs| median(&rs.iter().map(|r| r.stats.central_mass).collect::<Vec<_>>())).collect();
    let ok = med[0] > med[1] && med[1] > med[2] && central[0] > 0.6 && central[2] < 0.4;
    Ok((ok, format!(
        "median chi2 {:.3} > {:.3} > {:.3}; central mass shift0 {:.3} (> 0.6), shift32 {:.3} (< 0.4)",
        med[0], med[1], med[2], central[0], central[2]
    )))
}

fn c4_tracking(runs: &[Vec<BiasRun>]) -> Outcome {
    let mean = |rs: &Vec<BiasRun>| -> Result<f64, String> {
        let v: Vec<f64> = rs.iter().map(|r| r.track_iou.ok_or("no tracking iou")).collect::<Result<_, _>>()?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    };
    let (a, b) = (mean(&runs[0])?, mean(&runs[2])?);
    Ok((a <= b - 0.1, format!("mean IoU shift0 {a:.3} <= shift32 {b:.3} - 0.1")))
}

fn c5_gradcheck() -> Outcome {
    let reports = standard_grad_checks(&GradCheckConfig::default()).map_err(e)?;
    let worst = reports.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    let detail: Vec<String> = reports.iter().map(|(n, r)| format!("{n} {:.1e}", r.max_rel_error)).collect();
    Ok((worst < 1e-6, format!("max rel error {worst:.2e} (< 1e-6) [{}]", detail.join(", "))))
}

fn c6_orthogonality() -> Outcome {
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = Tensor::randn(&[1, d, 5, 5], 1.0, &mut rng);
    let x = Tensor::randn(&[1, d, 13, 13], 1.0, &mut rng);
    let base = dw_xcorr(&z, &x).map_err(e)?;
    let plane = base.numel() / d;
    let mut violations = 0;
    for c in 0..d {
        for (zz, xx) in [(true, false), (false, true)] {
            let (mut z2, mut x2) = (z.clone(), x.clone());
            if zz {
                let n = 25;
                z2.data_mut()[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += rng.random_range(0.5..2.0));
            }
            if xx {
                let n = 169;
                x2.data_mut()[c * n..(c + 1) * n].iter_mut().for_each(|v| *v -= rng.random_range(0.5..2.0));
            }
            let out = dw_xcorr(&z2, &x2).map_err(e)?;
            for o in 0..d {
                let same = out.data()[o * plane..(o + 1) * plane]
                    .iter()
                    .zip(&base.data()[o * plane..(o + 1) * plane])
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                if (o == c) == same {
                    violations += 1;
                }
            }
        }
    }
    Ok((violations == 0, format!("{violations} violations over {} perturbations of D=16", 2 * d)))
}

fn c7_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let mut b = || {
            BBox::new(
                rng.random_range(-200.0..200.0),
                rng.random_range(-200.0..200.0),
                rng.random_range(2.0..300.0),
                rng.random_range(2.0..300.0),
            )
        };
        let (a, g) = (b().map_err(e)?, b().map_err(e)?);
        let back = decode_regression(&a, &encode_regression(&a, &g)).map_err(e)?;
        let (p, q) = (back.corners(), g.corners());
        for d in [p.0 - q.0, p.1 - q.1, p.2 - q.2, p.3 - q.3] {
            worst = worst.max(d.abs());
        }
    }
    // Area-coverage raster: each of the 512 x 512 pixels adds its exact
    // overlap with the box, so the oracle shares no code with `iou`.
    let mut raster_worst = 0.0f64;
    for _ in 0..1000 {
        let mut b = || {
            let w = rng.random_range(40.0..300.0);
            let h = rng.random_range(40.0..300.0);
            BBox::new(rng.random_range(180.0..332.0), rng.random_range(180.0..332.0), w, h)
        };
        let (a, g) = (b().map_err(e)?, b().map_err(e)?);
        let (mut inter, mut area_a, mut area_g) = (0.0, 0.0, 0.0);
        for y in 0..512 {
            for x in 0..512 {
                inter += overlap_px(&a, &g, x, y);
                area_a += overlap_px(&a, &a, x, y);
                area_g += overlap_px(&g, &g, x, y);
            }
        }
        raster_worst = raster_worst.max((inter / (area_a + area_g - inter) - iou(&a, &g)).abs());
    }
    let ok = worst < 1e-9 && raster_worst < 2e-3;
    Ok((ok, format!(
        "encode/decode max err {worst:.2e} over 1e4 (< 1e-9); IoU vs 512^2 raster max err {raster_worst:.2e} over 1e3 (< 2e-3)"
    )))
}

/// Area of `a ∩ b ∩ pixel(x, y)`.
fn overlap_px(a: &BBox, b: &BBox, x: usize, y: usize) -> f64 {
    let (a0, a1, a2, a3) = a.corners();
    let (b0, b1, b2, b3) = b.corners();
    let w = (a2.min(b2).min((x + 1) as f64) - a0.max(b0).max(x as f64)).max(0.0);
    let h = (a3.min(b3).min((y + 1) as f64) - a1.max(b1).max(y as f64)).max(0.0);
    w * h
}

fn c10_schedule() -> Outcome {
    let cfg = TrainConfig::full_size();
    let mut bad = Vec::new();
    for epoch in 1..=5 {
        if lr_schedule(epoch, &cfg).map_err(e)? != 0.001 {
            bad.push(epoch);
        }
    }
    if lr_schedule(6, &cfg).map_err(e)? != 0.005 {
        bad.push(6);
    }
    if lr_schedule(20, &cfg).map_err(e)? != 0.0005 {
        bad.push(20);
    }
    Ok((bad.is_empty(), format!("epochs 1-5 = 0.001, 6 = 0.005, 20 = 0.0005; mismatches {bad:?}")))
}

fn trained(levels: &[Level], seed: u64) -> Result<(RunConfig, SiamModel), String> {
    let cfg = RunConfig {
        seed,
        levels: levels.to_vec(),
        ..RunConfig::default()
    };
    let mut model = SiamModel::build(&cfg.model_config(), seed).map_err(e)?;
    let data = SynthPairs {
        spec: cfg.synth.clone(),
        sample: cfg.sample_config(),
        seed,
    };
    train(&mut model, &cfg.train_config(), &data, &LabelConfig::default(), None).map_err(e)?;
    Ok((cfg, model))
}

fn main() {
    let t0 = Instant::now();
    let mut results = Vec::new();
    report(&mut results, "1 dw head params <= 0.1x up head (D=256, k=5)", c1_param_ratio());
    report(&mut results, "2 translation equivariance", c2_equivariance());

    let shifts = [0.0, 16.0, 32.0];
    let bias: Result<Vec<Vec<BiasRun>>, String> = shifts
        .iter()
        .map(|&s| (1..=3).map(|seed| run_simulation(&BiasRunConfig::desk(s, seed)).map_err(e)).collect())
        .collect();
    match &bias {
        Ok(runs) => {
            report(&mut results, "3 center bias shrinks with shift range", c3_bias(runs));
            report(&mut results, "4 tracking IoU gain from shift 0 to 32", c4_tracking(runs));
        }
        Err(err) => {
            report(&mut results, "3 center bias shrinks with shift range", Err(err.clone()));
            report(&mut results, "4 tracking IoU gain from shift 0 to 32", Err(err.clone()));
        }
    }

    report(&mut results, "5 gradient checks", c5_gradcheck());
    report(&mut results, "6 dw_xcorr channel independence", c6_orthogonality());
    report(&mut results, "7 box encode/decode and IoU", c7_geometry());

    let ope = (|| -> Result<Vec<(f64, [f64; 3], String)>, String> {
        let mut rows = Vec::new();
        for seed in 1..=3u64 {
            let mut aucs = Vec::new();
            let mut weights = String::new();
            let sets: [&[Level]; 4] = [&Level::ALL, &[Level::Conv3], &[Level::Conv4], &[Level::Conv5]];
            for (i, levels) in sets.iter().enumerate() {
                let (cfg, model) = trained(levels, seed)?;
                let ds = SequenceDataset::synthetic(&cfg.synth, cfg.data.sequences, cfg.data.length, cfg.data.seed).map_err(e)?;
                let run = eval_ope(&model, &ds, &cfg.tracker).map_err(e)?;
                if i == 0 {
                    let fw = model.fusion_weights();
                    weights = format!("alpha {:.2?} beta {:.2?}", fw.normalized_alpha(), fw.normalized_beta());
                }
                aucs.push(run.result.auc);
            }
            rows.push((aucs[0], [aucs[1], aucs[2], aucs[3]], weights));
        }
        Ok(rows)
    })();

    let c8 = ope.as_ref().map_err(Clone::clone).and_then(|rows| {
        let cfg = RunConfig::default();
        let ds = SequenceDataset::synthetic(&cfg.synth, cfg.data.sequences, cfg.data.length, cfg.data.seed).map_err(e)?;
        let canvas = cfg.synth.canvas as f64;
        let rnd = score_predictions(&ds, &random_predictions(&ds, (canvas, canvas), 99), precision_threshold(&cfg.tracker))
            .map_err(e)?;
        let auc = rows[0].0;
        Ok((auc >= 0.5 && rnd.auc <= 0.05, format!(
            "fused AUC {auc:.4} on 10 held-out sequences (>= 0.5); random baseline {:.4} (<= 0.05)",
            rnd.auc
        )))
    });
    report(&mut results, "8 tracking AUC on held-out synthetic sequences", c8);

    let c9 = ope.map(|rows| {
        let mut ok = true;
        let mut parts = Vec::new();
        for (seed, (fused, single, w)) in rows.iter().enumerate() {
            let best = single.iter().cloned().fold(f64::MIN, f64::max);
            ok &= *fused >= best - 0.02;
            parts.push(format!(
                "seed {}: fused {fused:.4} vs l3/l4/l5 {:.4}/{:.4}/{:.4} ({w})",
                seed + 1,
                single[0],
                single[1],
                single[2]
            ));
        }
        (ok, parts.join("; "))
    });
    report(&mut results, "9 fused AUC >= best single level - 0.02", c9);
    report(&mut results, "10 learning rate schedule", c10_schedule());

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed in {:.0?}", results.len(), t0.elapsed());
    if passed != results.len() {
        std::process::exit(1);
    }
}
