//! Flat `section.key = value` run configuration. Unknown keys are errors.

use crate::backbone::{BackboneVariant, Level};
use crate::bias_lab::BiasRunConfig;
use crate::correlation::CorrVariant;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::sampling::{Motion, SampleConfig, SynthSpec};
use crate::tracker::TrackerConfig;
use crate::training::{GradCheckConfig, TrainConfig};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataConfig {
    /// Directory of sequences; synthetic sequences are generated when unset.
    pub root: Option<PathBuf>,
    pub sequences: usize,
    pub length: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasConfig {
    pub shifts: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variant: BackboneVariant,
    pub epochs: usize,
    pub eval_samples: usize,
    pub appearance_change: f64,
    pub track_sequences: usize,
    pub track_length: usize,
    pub track_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchConfig {
    pub variants: Vec<CorrVariant>,
    pub dims: Vec<usize>,
    pub template: usize,
    pub search: usize,
    pub repeats: usize,
}

/// Which boxes `eval-ope` scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTracker {
    Model,
    /// Ground truth echoed back.
    Oracle,
    /// Uniformly random boxes of the first-frame size.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: BackboneVariant,
    pub levels: Vec<Level>,
    pub train: TrainConfig,
    pub shift_range: f64,
    pub synth: SynthSpec,
    pub tracker: TrackerConfig,
    pub data: DataConfig,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
    pub eval_tracker: EvalTracker,
    pub bias: BiasConfig,
    pub gradcheck: GradCheckConfig,
    pub gradcheck_tol: f64,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bias = BiasRunConfig::desk(0.0, 0);
        RunConfig {
            seed: 0,
            variant: BackboneVariant::PaddedResidual,
            levels: Level::ALL.to_vec(),
            train: TrainConfig::desk(),
            shift_range: 32.0,
            synth: SynthSpec::default(),
            tracker: TrackerConfig::desk(),
            data: DataConfig {
                root: None,
                sequences: 10,
                length: 100,
                seed: 1000,
            },
            checkpoint: PathBuf::from("out/model.ckpt"),
            out_dir: PathBuf::from("out"),
            eval_tracker: EvalTracker::Model,
            bias: BiasConfig {
                shifts: vec![0.0, 16.0, 32.0],
                seeds: vec![1, 2, 3],
                variant: BackboneVariant::PaddedResidual,
                epochs: bias.epochs,
                eval_samples: bias.eval_samples,
                appearance_change: bias.synth.appearance_change,
                track_sequences: bias.track_sequences,
                track_length: bias.track_length,
                track_speed: bias.track_speed,
            },
            gradcheck: GradCheckConfig::default(),
            gradcheck_tol: 1e-6,
            bench: BenchConfig {
                variants: vec![CorrVariant::XCorr, CorrVariant::UpXCorr, CorrVariant::DwXCorr],
                dims: vec![16, 32, 64],
                template: 7,
                search: 31,
                repeats: 3,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|t| parse(key, t.trim())).collect()
}

/// `key = value` lines; `#` starts a comment. Duplicate keys are errors.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_text(&text)?, text))
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        let t = &mut self.train;
        let s = &mut self.synth;
        let tr = &mut self.tracker;
        let b = &mut self.bias;
        match key {
            "seed" => self.seed = parse(k, v)?,
            "model.variant" => self.variant = parse(k, v)?,
            "model.levels" => {
                self.levels = list::<u8>(k, v)?.into_iter().map(Level::from_tag).collect::<Result<_>>()?;
            }
            "train.epochs" => t.epochs = parse(k, v)?,
            "train.warmup_epochs" => t.warmup_epochs = parse(k, v)?,
            "train.warmup_lr" => t.warmup_lr = parse(k, v)?,
            "train.peak_lr" => t.peak_lr = parse(k, v)?,
            "train.final_lr" => t.final_lr = parse(k, v)?,
            "train.momentum" => t.momentum = parse(k, v)?,
            "train.weight_decay" => t.weight_decay = parse(k, v)?,
            "train.backbone_lr_scale" => t.backbone_lr_scale = parse(k, v)?,
            "train.batch_size" => t.batch_size = parse(k, v)?,
            "train.freeze_backbone_epochs" => t.freeze_backbone_epochs = parse(k, v)?,
            "train.pairs_per_epoch" => t.pairs_per_epoch = parse(k, v)?,
            "train.reg_weight" => t.reg_weight = parse(k, v)?,
            "train.bn_momentum" => t.bn_momentum = parse(k, v)?,
            "train.clip_norm" => t.clip_norm = if v == "none" { None } else { Some(parse(k, v)?) },
            "train.shift_range" => self.shift_range = parse(k, v)?,
            "synth.canvas" => s.canvas = parse(k, v)?,
            "synth.size_min" => s.size_range.0 = parse(k, v)?,
            "synth.size_max" => s.size_range.1 = parse(k, v)?,
            "synth.max_aspect" => s.max_aspect = parse(k, v)?,
            "synth.texture_seed" => s.texture_seed = if v == "none" { None } else { Some(parse(k, v)?) },
            "synth.motion" => {
                s.motion = match v {
                    "random_walk" => Motion::RandomWalk { sigma: 2.0 },
                    "constant_velocity" => Motion::ConstantVelocity { speed: 4.0 },
                    _ => return Err(Error::Config(format!("{k}: unknown motion {v:?}"))),
                }
            }
            "synth.motion_step" => {
                let x: f64 = parse(k, v)?;
                s.motion = match s.motion {
                    Motion::RandomWalk { .. } => Motion::RandomWalk { sigma: x },
                    Motion::ConstantVelocity { .. } => Motion::ConstantVelocity { speed: x },
                }
            }
            "synth.distractors" => s.distractors = parse(k, v)?,
            "synth.noise" => s.noise = parse(k, v)?,
            "synth.texture_cells" => s.texture_cells = parse(k, v)?,
            "synth.lookalike" => s.lookalike = parse(k, v)?,
            "synth.appearance_change" => s.appearance_change = parse(k, v)?,
            "tracker.template_size" => tr.template_size = parse(k, v)?,
            "tracker.search_size" => tr.search_size = parse(k, v)?,
            "tracker.context_fraction" => tr.context_fraction = parse(k, v)?,
            "tracker.window_influence" => tr.window_influence = parse(k, v)?,
            "tracker.penalty_k" => tr.penalty_k = parse(k, v)?,
            "tracker.size_lr" => tr.size_lr = parse(k, v)?,
            "data.root" => self.data.root = Some(PathBuf::from(v)),
            "data.sequences" => self.data.sequences = parse(k, v)?,
            "data.length" => self.data.length = parse(k, v)?,
            "data.seed" => self.data.seed = parse(k, v)?,
            "io.checkpoint" => self.checkpoint = PathBuf::from(v),
            "io.out_dir" => self.out_dir = PathBuf::from(v),
            "eval.tracker" => {
                self.eval_tracker = match v {
                    "model" => EvalTracker::Model,
                    "oracle" => EvalTracker::Oracle,
                    "random" => EvalTracker::Random,
                    _ => return Err(Error::Config(format!("{k}: expected model, oracle or random"))),
                }
            }
            "bias.shifts" => b.shifts = list(k, v)?,
            "bias.seeds" => b.seeds = list(k, v)?,
            "bias.variant" => b.variant = parse(k, v)?,
            "bias.epochs" => b.epochs = parse(k, v)?,
            "bias.eval_samples" => b.eval_samples = parse(k, v)?,
            "bias.appearance_change" => b.appearance_change = parse(k, v)?,
            "bias.track_sequences" => b.track_sequences = parse(k, v)?,
            "bias.track_length" => b.track_length = parse(k, v)?,
            "bias.track_speed" => b.track_speed = parse(k, v)?,
            "gradcheck.eps" => self.gradcheck.eps = parse(k, v)?,
            "gradcheck.samples" => self.gradcheck.samples = parse(k, v)?,
            "gradcheck.tol" => self.gradcheck_tol = parse(k, v)?,
            "bench.variants" => self.bench.variants = list(k, v)?,
            "bench.dims" => self.bench.dims = list(k, v)?,
            "bench.template" => self.bench.template = parse(k, v)?,
            "bench.search" => self.bench.search = parse(k, v)?,
            "bench.repeats" => self.bench.repeats = parse(k, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        self.tracker.validate()?;
        self.sample_config().validate()?;
        self.model_config().validate()?;
        if self.bias.shifts.is_empty() || self.bias.seeds.is_empty() {
            return Err(Error::Config("bias.shifts and bias.seeds must be nonempty".into()));
        }
        if self.data.sequences == 0 || self.data.length < 2 {
            return Err(Error::Config("data.sequences must be positive and data.length >= 2".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let base = match self.variant {
            BackboneVariant::PaddedResidual => ModelConfig::desk(),
            BackboneVariant::PadfreeShallow => ModelConfig::desk_padfree(),
        };
        let mut m = base.with_levels(&self.levels);
        m.template_size = self.tracker.template_size;
        m.search_size = self.tracker.search_size;
        m
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            template_size: self.tracker.template_size,
            search_size: self.tracker.search_size,
            context: self.tracker.context_fraction,
            ..SampleConfig::desk(self.shift_range)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn bias_run(&self, shift: f64, seed: u64) -> BiasRunConfig {
        let base = BiasRunConfig::desk(shift, seed);
        BiasRunConfig {
            variant: self.bias.variant,
            epochs: self.bias.epochs,
            eval_samples: self.bias.eval_samples,
            train: self.train.clone(),
            synth: SynthSpec {
                appearance_change: self.bias.appearance_change,
                ..self.synth.clone()
            },
            track_sequences: self.bias.track_sequences,
            track_length: self.bias.track_length,
            track_speed: self.bias.track_speed,
            out_dir: Some(self.out_dir.join("bias")),
            ..base
        }
    }

    /// Canonical JSON of the resolved configuration; hashed into reports.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let c = RunConfig::from_text("seed = 9\n# comment\ntrain.epochs = 3 # trailing\nmodel.levels = 4,5\nbias.shifts = 0, 32\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.levels, vec![Level::Conv4, Level::Conv5]);
        assert_eq!(c.bias.shifts, vec![0.0, 32.0]);
    }

    #[test]
    fn unknown_and_malformed_rejected() {
        assert!(matches!(RunConfig::from_text("train.epoch = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("train.epochs = three"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("train.epochs"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("seed = 1\nseed = 2"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("train.shift_range = 40"), Err(Error::Config(_))));
    }
}
