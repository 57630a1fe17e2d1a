//! Sequence datasets, one-pass evaluation, reports and the command line.

pub mod cli;
pub mod config;

use crate::error::{Error, Result};
use crate::geometry::{format_boxes, iou, parse_boxes, BBox};
use crate::image::{load_png, save_png, Frame};
use crate::model::SiamModel;
use crate::sampling::{Scene, SynthSpec};
use crate::tracker::{track_sequence, TrackerConfig};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Overlap thresholds of the success curve: 0.00, 0.05, ..., 1.00.
pub fn thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Clone, Debug)]
pub enum FrameSource {
    Files(Vec<PathBuf>),
    Synthetic(Box<Scene>),
}

#[derive(Clone, Debug)]
pub struct Sequence {
    pub name: String,
    pub frames: FrameSource,
    pub gt: Vec<BBox>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }

    pub fn frame(&self, t: usize) -> Result<Frame> {
        match &self.frames {
            FrameSource::Files(paths) => {
                let p = paths
                    .get(t)
                    .ok_or_else(|| Error::Dataset(format!("{}: no frame {t}", self.name)))?;
                load_png(p)
            }
            FrameSource::Synthetic(scene) => Ok(scene.render(t)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SequenceDataset {
    pub name: String,
    pub sequences: Vec<Sequence>,
}

impl SequenceDataset {
    /// Every subdirectory of `root` holding `groundtruth.txt` and PNG frames
    /// (sorted by file name) is one sequence.
    pub fn load_dir(root: &Path) -> Result<Self> {
        let rd = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        let mut dirs: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut sequences = Vec::new();
        for d in dirs {
            let gt_path = d.join("groundtruth.txt");
            if !gt_path.exists() {
                continue;
            }
            let name = d.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let text = std::fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
            let gt = parse_boxes(&text).map_err(|e| Error::Dataset(format!("{name}: {e}")))?;
            let mut frames: Vec<PathBuf> = std::fs::read_dir(&d)
                .map_err(|e| Error::io(&d, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            frames.sort();
            if frames.len() != gt.len() {
                return Err(Error::Dataset(format!(
                    "{name}: {} frames but {} ground-truth boxes",
                    frames.len(),
                    gt.len()
                )));
            }
            if gt.is_empty() {
                return Err(Error::Dataset(format!("{name}: empty sequence")));
            }
            sequences.push(Sequence {
                name,
                frames: FrameSource::Files(frames),
                gt,
            });
        }
        if sequences.is_empty() {
            return Err(Error::Dataset(format!("no sequences under {}", root.display())));
        }
        Ok(SequenceDataset {
            name: root.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            sequences,
        })
    }

    /// `count` generated sequences; sequence `i` uses a seed derived from `seed` and `i`.
    pub fn synthetic(spec: &SynthSpec, count: usize, length: usize, seed: u64) -> Result<Self> {
        let sequences = (0..count)
            .map(|i| {
                let scene = Scene::new(spec, length, crate::training::mix_seed(seed, 0x5E0, i as u64))?;
                Ok(Sequence {
                    name: format!("synth_{i:03}"),
                    gt: scene.boxes(),
                    frames: FrameSource::Synthetic(Box::new(scene)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SequenceDataset {
            name: format!("synthetic_{seed}"),
            sequences,
        })
    }

    /// Writes every sequence as `root/<name>/{00000.png, ..., groundtruth.txt}`.
    pub fn write_dir(&self, root: &Path) -> Result<()> {
        for s in &self.sequences {
            let d = root.join(&s.name);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            for t in 0..s.len() {
                save_png(&s.frame(t)?, &d.join(format!("{t:05}.png")))?;
            }
            let p = d.join("groundtruth.txt");
            std::fs::write(&p, format_boxes(&s.gt)).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Checks that every frame is present before any tracking starts.
    pub fn verify(&self) -> Result<()> {
        for s in &self.sequences {
            if let FrameSource::Files(paths) = &s.frames {
                if let Some(p) = paths.iter().find(|p| !p.is_file()) {
                    return Err(Error::Dataset(format!("{}: missing frame {}", s.name, p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpeResult {
    /// `(threshold, fraction of frames with IoU >= threshold)`.
    pub success: Vec<(f64, f64)>,
    pub auc: f64,
    pub precision: f64,
    pub precision_threshold: f64,
    pub frames: usize,
}

/// Per-sequence predictions, in dataset order.
#[derive(Clone, Debug)]
pub struct OpeRun {
    pub result: OpeResult,
    pub predictions: Vec<(String, Vec<BBox>)>,
}

/// Success curve, AUC and precision from per-frame IoU and center errors.
///
/// AUC integrates the (right-continuous) success step function over the grid:
/// `sum_{i=1..20} 0.05 * success(t_i)`, so a constant IoU `v` gives
/// `floor(v / 0.05) * 0.05`.
pub fn summarize(ious: &[f64], errors: &[f64], precision_threshold: f64) -> OpeResult {
    let n = ious.len().max(1) as f64;
    let success: Vec<(f64, f64)> = thresholds()
        .into_iter()
        .map(|t| (t, ious.iter().filter(|v| **v >= t).count() as f64 / n))
        .collect();
    let auc = success[1..].iter().map(|(_, s)| s).sum::<f64>() / 20.0;
    let precision = errors.iter().filter(|e| **e <= precision_threshold).count() as f64 / n;
    OpeResult {
        success,
        auc,
        precision,
        precision_threshold,
        frames: ious.len(),
    }
}

/// Center-error threshold: 20 px at 255 px search size, scaled.
pub fn precision_threshold(cfg: &TrackerConfig) -> f64 {
    20.0 * cfg.search_size as f64 / 255.0
}

/// Worker count from `SIAMTRACK_THREADS`; unset or invalid means 1.
pub fn worker_count() -> usize {
    std::env::var("SIAMTRACK_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(1)
}

/// Scores predicted boxes against ground truth; the first frame counts too.
pub fn score_predictions(dataset: &SequenceDataset, predictions: &[(String, Vec<BBox>)], thr: f64) -> Result<OpeResult> {
    let mut ious = Vec::new();
    let mut errors = Vec::new();
    for (s, (name, pred)) in dataset.sequences.iter().zip(predictions) {
        if pred.len() != s.len() {
            return Err(Error::Usage(format!("{name}: {} predictions for {} frames", pred.len(), s.len())));
        }
        for (p, g) in pred.iter().zip(&s.gt) {
            ious.push(iou(p, g));
            errors.push(p.center_distance(g));
        }
    }
    Ok(summarize(&ious, &errors, thr))
}

/// One-pass evaluation: initialize on the first ground-truth box, never reset.
pub fn eval_ope(model: &SiamModel, dataset: &SequenceDataset, cfg: &TrackerConfig) -> Result<OpeRun> {
    dataset.verify()?;
    cfg.validate()?;
    let run_one = |s: &Sequence| -> Result<(String, Vec<BBox>)> {
        let out = track_sequence(model, (0..s.len()).map(|t| s.frame(t)), &s.gt[0], cfg)?;
        Ok((s.name.clone(), out.into_iter().map(|(b, _)| b).collect()))
    };
    let workers = worker_count();
    let predictions = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
        pool.install(|| dataset.sequences.par_iter().map(run_one).collect::<Result<Vec<_>>>())?
    } else {
        dataset.sequences.iter().map(run_one).collect::<Result<Vec<_>>>()?
    };
    let result = score_predictions(dataset, &predictions, precision_threshold(cfg))?;
    Ok(OpeRun { result, predictions })
}

/// Baseline that emits a uniformly random box of the first-frame size.
pub fn random_predictions(dataset: &SequenceDataset, frame_size: (f64, f64), seed: u64) -> Vec<(String, Vec<BBox>)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    dataset
        .sequences
        .iter()
        .map(|s| {
            let (w, h) = (s.gt[0].w, s.gt[0].h);
            let boxes = (0..s.len())
                .map(|_| BBox {
                    cx: rng.random_range(w / 2.0..=(frame_size.0 - w / 2.0).max(w / 2.0)),
                    cy: rng.random_range(h / 2.0..=(frame_size.1 - h / 2.0).max(h / 2.0)),
                    w,
                    h,
                })
                .collect();
            (s.name.clone(), boxes)
        })
        .collect()
}

pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn ope_csv(r: &OpeResult) -> String {
    let mut s = String::from("threshold,success\n");
    for (t, v) in &r.success {
        let _ = writeln!(s, "{t:.2},{v:.6}");
    }
    s
}

pub fn summary_text(r: &OpeResult, config_text: &str) -> String {
    format!(
        "auc {:.6}\nprecision {:.6}\nprecision_threshold_px {:.4}\nframes {}\nconfig_hash {}\n",
        r.auc,
        r.precision,
        r.precision_threshold,
        r.frames,
        config_hash(config_text)
    )
}

/// Writes predictions, `ope_report.csv` and `summary.txt` under `dir`.
pub fn write_reports(dir: &Path, run: &OpeRun, config_text: &str) -> Result<()> {
    let pred_dir = dir.join("predictions");
    std::fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
    for (name, boxes) in &run.predictions {
        let p = pred_dir.join(format!("{name}.txt"));
        std::fs::write(&p, format_boxes(boxes)).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join("ope_report.csv");
    std::fs::write(&p, ope_csv(&run.result)).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("summary.txt");
    std::fs::write(&p, summary_text(&run.result, config_text)).map_err(|e| Error::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_and_far_boxes() {
        let r = summarize(&[1.0; 10], &[0.0; 10], 20.0);
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.precision, 1.0);
        let r = summarize(&[0.0; 10], &[1000.0; 10], 20.0);
        assert_eq!(r.auc, 0.0);
        assert_eq!(r.precision, 0.0);
    }

    #[test]
    fn constant_half_overlap_is_a_step() {
        let r = summarize(&[0.5; 7], &[0.0; 7], 20.0);
        for (t, s) in &r.success {
            assert_eq!(*s, if *t <= 0.5 { 1.0 } else { 0.0 });
        }
        assert!((r.auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn curve_nonincreasing() {
        let ious: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37) % 1.0).collect();
        let r = summarize(&ious, &ious, 0.5);
        assert!(r.success.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!((0.0..=1.0).contains(&r.auc));
    }
}
