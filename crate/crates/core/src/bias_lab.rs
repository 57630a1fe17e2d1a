//! Shift simulation: how training-time target placement shapes the prior
//! over response positions of a padded network.

use crate::backbone::BackboneVariant;
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::image::{heatmap_frame, save_png};
use crate::model::{ModelConfig, SiamModel};
use crate::rpn_head::ResponsePair;
use crate::sampling::{sample_pair_frames, LabelConfig, Motion, SampleConfig, Scene, SynthSpec};
use crate::tracker::{track_sequence, TrackerConfig};
use crate::training::{mix_seed, train, SynthPairs, TrainConfig, TrainLog};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Square grid of nonnegative values, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size || size == 0 {
            return Err(Error::Shape(format!("heatmap {size}x{size} needs {} values, got {}", size * size, data.len())));
        }
        Ok(Heatmap { size, data })
    }

    pub fn uniform(size: usize) -> Self {
        let n = (size * size) as f64;
        Heatmap {
            size,
            data: vec![1.0 / n; size * size],
        }
    }

    /// Per-cell max over anchors of the positive probability of sample `n`.
    pub fn from_response(pair: &ResponsePair, n: usize) -> Result<Self> {
        let (h, w) = pair.grid();
        if h != w {
            return Err(Error::Shape(format!("response {h}x{w} is not square")));
        }
        let k = pair.k();
        let p = pair.positive_scores(n);
        let data = p.chunks(k).map(|c| c.iter().cloned().fold(0.0, f64::max)).collect();
        Heatmap::new(h, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapStats {
    /// Normalized aggregate, sums to 1.
    pub map: Heatmap,
    pub central_mass: f64,
    pub chi_square: f64,
    /// Nats.
    pub entropy: f64,
}

/// Elementwise mean of equally shaped maps, renormalized to sum 1.
pub fn aggregate_heatmaps(maps: &[Heatmap]) -> Result<Heatmap> {
    let first = maps.first().ok_or_else(|| Error::Usage("no heatmaps to aggregate".into()))?;
    let mut acc = vec![0.0; first.data.len()];
    for m in maps {
        if m.size != first.size {
            return Err(Error::Shape(format!("heatmap sizes {} and {} differ", first.size, m.size)));
        }
        if m.data.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Usage("heatmap entries must be finite and nonnegative".into()));
        }
        for (a, v) in acc.iter_mut().zip(&m.data) {
            *a += v;
        }
    }
    let total: f64 = acc.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numeric("heatmaps carry no mass".into()));
    }
    acc.iter_mut().for_each(|v| *v /= total);
    Heatmap::new(first.size, acc)
}

/// Overlap of cell `[i, i+1)` with `[lo, hi)`.
fn overlap(i: usize, lo: f64, hi: f64) -> f64 {
    (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0)
}

/// Central mass, chi-square against uniform and entropy of a normalized map.
///
/// The central region is the centered square of half the side, cells counted
/// by their fractional overlap with it. Chi-square is `N * sum (p - 1/N)^2`.
pub fn bias_metrics(map: &Heatmap) -> Result<HeatmapStats> {
    let sum: f64 = map.data.iter().sum();
    if map.data.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Usage(format!("heatmap is not normalized (sum {sum})")));
    }
    let r = map.size;
    let (lo, hi) = (r as f64 / 4.0, 3.0 * r as f64 / 4.0);
    let ov: Vec<f64> = (0..r).map(|i| overlap(i, lo, hi)).collect();
    let mut central = 0.0;
    for i in 0..r {
        for j in 0..r {
            central += map.data[i * r + j] * ov[i] * ov[j];
        }
    }
    let n = (r * r) as f64;
    let chi_square = n * map.data.iter().map(|p| (p - 1.0 / n).powi(2)).sum::<f64>();
    let entropy = -map.data.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>();
    Ok(HeatmapStats {
        map: map.clone(),
        central_mass: central,
        chi_square,
        entropy,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRunConfig {
    /// Training shift range, search-patch pixels.
    pub shift_range: f64,
    pub variant: BackboneVariant,
    pub epochs: usize,
    /// Held-out pairs aggregated into the heatmap.
    pub eval_samples: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    /// Constant-velocity sequences for the tracking check; 0 skips it.
    pub track_sequences: usize,
    pub track_length: usize,
    pub track_speed: f64,
    /// Heatmap PNG and training CSV land here when set.
    pub out_dir: Option<PathBuf>,
}

impl BiasRunConfig {
    pub fn desk(shift_range: f64, seed: u64) -> Self {
        BiasRunConfig {
            shift_range,
            variant: BackboneVariant::PaddedResidual,
            epochs: 20,
            eval_samples: 200,
            seed,
            train: TrainConfig::desk(),
            synth: SynthSpec {
                appearance_change: 0.6,
                ..SynthSpec::default()
            },
            track_sequences: 6,
            track_length: 60,
            track_speed: 8.0,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shift_range >= 0.0 && self.shift_range.is_finite()) {
            return Err(Error::Config(format!("shift_range {} must be >= 0", self.shift_range)));
        }
        if self.eval_samples == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and eval_samples must be positive".into()));
        }
        if self.track_sequences > 0 && self.track_length < 2 {
            return Err(Error::Config("track_length must be at least 2".into()));
        }
        SampleConfig::desk(self.shift_range).validate()?;
        self.synth.validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        match self.variant {
            BackboneVariant::PaddedResidual => ModelConfig::desk(),
            BackboneVariant::PadfreeShallow => ModelConfig::desk_padfree(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BiasRun {
    pub shift_range: f64,
    pub seed: u64,
    pub stats: HeatmapStats,
    /// Mean per-frame IoU on the tracking sequences, if any were run.
    pub track_iou: Option<f64>,
    pub log: TrainLog,
    pub model: SiamModel,
}

/// Aggregated heatmap of `model` over pairs whose target offset is uniform
/// over the whole area covered by the response grid.
pub fn evaluate_heatmap(model: &SiamModel, spec: &SynthSpec, samples: usize, seed: u64) -> Result<HeatmapStats> {
    let reach = (model.response_size() as f64 - 1.0) / 2.0 * model.stride() as f64;
    let cfg = SampleConfig {
        template_size: model.cfg.template_size,
        search_size: model.cfg.search_size,
        scale_jitter: 0.0,
        ..SampleConfig::desk(0.0)
    };
    let mut maps = Vec::with_capacity(samples);
    for i in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xB1A5, i as u64));
        let scene = Scene::new(spec, cfg.max_gap + 1, rng.random())?;
        let tz = rng.random_range(0..scene.len());
        let tx = rng.random_range(0..scene.len());
        let shift = (rng.random_range(-reach..=reach), rng.random_range(-reach..=reach));
        let s = sample_pair_frames(&scene, tz, tx, shift, &cfg, &mut rng)?;
        let zf = model.embed_template(&s.z)?;
        let (fused, _) = model.respond(&zf, &s.x)?;
        maps.push(Heatmap::from_response(&fused, 0)?);
    }
    bias_metrics(&aggregate_heatmaps(&maps)?)
}

/// Mean per-frame IoU of the tracker on fresh constant-velocity sequences.
pub fn tracking_iou(model: &SiamModel, spec: &SynthSpec, sequences: usize, length: usize, speed: f64, seed: u64) -> Result<f64> {
    let spec = SynthSpec {
        motion: Motion::ConstantVelocity { speed },
        ..spec.clone()
    };
    let cfg = TrackerConfig {
        template_size: model.cfg.template_size,
        search_size: model.cfg.search_size,
        ..TrackerConfig::default()
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for q in 0..sequences {
        let scene = Scene::new(&spec, length, mix_seed(seed, 0x7AC, q as u64))?;
        let gt = scene.boxes();
        let out = track_sequence(model, (0..scene.len()).map(|t| Ok(scene.render(t))), &gt[0], &cfg)?;
        for (b, g) in out.iter().zip(&gt).skip(1) {
            total += iou(&b.0, g);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Trains a desk model at `cfg.shift_range` and measures its response prior.
pub fn run_simulation(cfg: &BiasRunConfig) -> Result<BiasRun> {
    cfg.validate()?;
    let mut model = SiamModel::build(&cfg.model_config(), cfg.seed)?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let data = SynthPairs {
        spec: cfg.synth.clone(),
        sample: SampleConfig::desk(cfg.shift_range),
        seed: mix_seed(cfg.seed, 1, 0),
    };
    let tag = format!("shift{}_seed{}", cfg.shift_range, cfg.seed);
    let csv = match &cfg.out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            Some(d.join(format!("train_{tag}.csv")))
        }
        None => None,
    };
    let log = train(&mut model, &tc, &data, &LabelConfig::default(), csv.as_deref())?;
    let stats = evaluate_heatmap(&model, &cfg.synth, cfg.eval_samples, mix_seed(cfg.seed, 2, 0))?;
    let track_iou = if cfg.track_sequences > 0 {
        Some(tracking_iou(
            &model,
            &cfg.synth,
            cfg.track_sequences,
            cfg.track_length,
            cfg.track_speed,
            mix_seed(cfg.seed, 3, 0),
        )?)
    } else {
        None
    };
    if let Some(d) = &cfg.out_dir {
        let r = stats.map.size;
        let img = heatmap_frame(&stats.map.data, r, r)?;
        save_png(&img, &d.join(format!("heatmap_{tag}.png")))?;
    }
    Ok(BiasRun {
        shift_range: cfg.shift_range,
        seed: cfg.seed,
        stats,
        track_iou,
        log,
        model,
    })
}

/// Median of a nonempty slice.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Per-run rows `shift,seed,central_mass,chi_square,entropy,track_iou`.
pub fn runs_csv(runs: &[BiasRun]) -> String {
    let mut s = String::from("shift,seed,central_mass,chi_square,entropy,track_iou\n");
    for r in runs {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{}\n",
            r.shift_range,
            r.seed,
            r.stats.central_mass,
            r.stats.chi_square,
            r.stats.entropy,
            r.track_iou.map(|v| format!("{v:.6}")).unwrap_or_default()
        ));
    }
    s
}

/// Medians per shift: `shift,runs,central_mass,chi_square,entropy,track_iou`.
pub fn summary_csv(runs: &[BiasRun]) -> String {
    let mut shifts: Vec<f64> = runs.iter().map(|r| r.shift_range).collect();
    shifts.sort_by(|a, b| a.total_cmp(b));
    shifts.dedup();
    let mut s = String::from("shift,runs,central_mass,chi_square,entropy,track_iou\n");
    for sh in shifts {
        let g: Vec<&BiasRun> = runs.iter().filter(|r| r.shift_range == sh).collect();
        let col = |f: &dyn Fn(&BiasRun) -> f64| median(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        let ious: Vec<f64> = g.iter().filter_map(|r| r.track_iou).collect();
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{}\n",
            sh,
            g.len(),
            col(&|r| r.stats.central_mass),
            col(&|r| r.stats.chi_square),
            col(&|r| r.stats.entropy),
            if ious.is_empty() { String::new() } else { format!("{:.6}", median(&ious)) }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_and_delta() {
        let u = bias_metrics(&Heatmap::uniform(25)).unwrap();
        assert!((u.central_mass - 0.25).abs() < 1e-12);
        assert!(u.chi_square.abs() < 1e-12);
        assert!((u.entropy - (625.0f64).ln()).abs() < 1e-12);
        let mut d = vec![0.0; 625];
        d[12 * 25 + 12] = 1.0;
        let s = bias_metrics(&Heatmap::new(25, d).unwrap()).unwrap();
        assert_eq!(s.central_mass, 1.0);
        assert_eq!(s.entropy, 0.0);
    }

    #[test]
    fn mixture_entropy() {
        let n = 49.0;
        let mut d = vec![0.5 / n; 49];
        d[24] += 0.5;
        let s = bias_metrics(&Heatmap::new(7, d).unwrap()).unwrap();
        let pc = 0.5 + 0.5 / n;
        let po = 0.5 / n;
        let want = -(pc * pc.ln() + (n - 1.0) * po * po.ln());
        assert!((s.entropy - want).abs() < 1e-9);
    }

    #[test]
    fn aggregate_examples() {
        assert!(matches!(aggregate_heatmaps(&[]), Err(Error::Usage(_))));
        let a = Heatmap::new(2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Heatmap::new(2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(aggregate_heatmaps(&[a.clone(), b]).unwrap().data, vec![0.5, 0.0, 0.0, 0.5]);
        let c = Heatmap::new(2, vec![2.0, 2.0, 4.0, 0.0]).unwrap();
        assert_eq!(aggregate_heatmaps(&[c]).unwrap().data, vec![0.25, 0.25, 0.5, 0.0]);
    }

    #[test]
    fn unnormalized_rejected() {
        let m = Heatmap::new(2, vec![1.0; 4]).unwrap();
        assert!(matches!(bias_metrics(&m), Err(Error::Usage(_))));
    }
}
