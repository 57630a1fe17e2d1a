//! Losses, learning-rate schedule, SGD, the training loop and finite-difference
//! gradient checks.

use crate::error::{Error, Result};
use crate::model::SiamModel;
use crate::nn::ops::lincomb;
use crate::nn::{Backward, GradSink, ParamGroup, ParamId, ParamKind, ParamStore, Session, Tape, Var};
use crate::rpn_head::ResponsePair;
use crate::backbone::Backbone;
use crate::sampling::{
    assign_labels, sample_synthetic_pair, AnchorClass, LabelAssignment, LabelConfig, SampleConfig, SynthSpec,
    TrainSample,
};
use crate::tensor::Tensor;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

struct SmoothL1Op {
    x: Var,
}

impl Backward for SmoothL1Op {
    fn backward(&self, tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>) {
        let x = tape.value(self.x);
        sink.add_with(self.x, |g| {
            for ((a, &xv), &gv) in g.data_mut().iter_mut().zip(x.data()).zip(grad.data()) {
                *a += smooth_l1_grad(xv) * gv;
            }
        });
    }
}

/// Elementwise smooth L1 on the tape.
pub fn smooth_l1_op(tape: &mut Tape, x: Var) -> Var {
    let out = tape.value(x).map(smooth_l1);
    tape.push_op(out, &[x], SmoothL1Op { x })
}

/// Per-batch loss targets flattened to tensor offsets.
#[derive(Clone, Debug, Default)]
struct Targets {
    /// `(offset of class-0 logit, offset of class-1 logit, label)`.
    cls: Vec<(usize, usize, usize)>,
    /// Offsets of the four regression channels and their targets.
    reg: Vec<([usize; 4], [f64; 4])>,
}

fn targets(cls_shape: &[usize], labels: &[LabelAssignment]) -> Result<Targets> {
    let (n, c2, h, w) = (cls_shape[0], cls_shape[1], cls_shape[2], cls_shape[3]);
    let k = c2 / 2;
    let hw = h * w;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} label sets for a batch of {n}", labels.len())));
    }
    let mut t = Targets::default();
    for (b, la) in labels.iter().enumerate() {
        if la.class.len() != hw * k {
            return Err(Error::Shape(format!("{} labels for {} anchors", la.class.len(), hw * k)));
        }
        for (idx, (&cls, &m)) in la.class.iter().zip(&la.mask).enumerate() {
            if !m || cls == AnchorClass::Ignore {
                continue;
            }
            let (cell, a) = (idx / k, idx % k);
            let off = |ch: usize, chans: usize| (b * chans + ch) * hw + cell;
            let y = usize::from(cls == AnchorClass::Positive);
            t.cls.push((off(a, 2 * k), off(k + a, 2 * k), y));
            if cls == AnchorClass::Positive {
                t.reg.push(([0, 1, 2, 3].map(|d| off(d * k + a, 4 * k)), la.deltas[idx].as_array()));
            }
        }
    }
    Ok(t)
}

struct ClsLossOp {
    x: Var,
    items: Vec<(usize, usize, usize)>,
    /// Softmax probability of class 1 per item.
    p1: Vec<f64>,
}

impl Backward for ClsLossOp {
    fn backward(&self, _tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>) {
        let scale = grad.item() / self.items.len() as f64;
        sink.add_with(self.x, |g| {
            let d = g.data_mut();
            for (&(o0, o1, y), &p1) in self.items.iter().zip(&self.p1) {
                let g1 = p1 - y as f64;
                d[o1] += scale * g1;
                d[o0] -= scale * g1;
            }
        });
    }
}

struct RegLossOp {
    x: Var,
    items: Vec<([usize; 4], [f64; 4])>,
}

impl Backward for RegLossOp {
    fn backward(&self, tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>) {
        let scale = grad.item() / self.items.len() as f64;
        let x = tape.value(self.x).data();
        sink.add_with(self.x, |g| {
            let d = g.data_mut();
            for (offs, t) in &self.items {
                for (o, tv) in offs.iter().zip(t) {
                    d[*o] += scale * smooth_l1_grad(x[*o] - tv);
                }
            }
        });
    }
}

/// Mean softmax cross-entropy over sampled anchors; zero when none are sampled.
pub fn cls_loss_op(tape: &mut Tape, cls: Var, labels: &[LabelAssignment]) -> Result<Var> {
    let t = targets(tape.value(cls).shape(), labels)?;
    let x = tape.value(cls).data();
    let mut total = 0.0;
    let mut p1 = Vec::with_capacity(t.cls.len());
    for &(o0, o1, y) in &t.cls {
        let (l0, l1) = (x[o0], x[o1]);
        let m = l0.max(l1);
        let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
        total += lse - if y == 1 { l1 } else { l0 };
        p1.push((l1 - lse).exp());
    }
    if t.cls.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let value = total / t.cls.len() as f64;
    Ok(tape.push_op(Tensor::scalar(value), &[cls], ClsLossOp { x: cls, items: t.cls, p1 }))
}

/// Smooth L1 summed over the four deltas, averaged over sampled positives.
pub fn reg_loss_op(tape: &mut Tape, reg: Var, labels: &[LabelAssignment], cls_shape: &[usize]) -> Result<Var> {
    let t = targets(cls_shape, labels)?;
    if t.reg.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let x = tape.value(reg).data();
    let total: f64 = t
        .reg
        .iter()
        .map(|(offs, tv)| offs.iter().zip(tv).map(|(o, v)| smooth_l1(x[*o] - v)).sum::<f64>())
        .sum();
    let value = total / t.reg.len() as f64;
    Ok(tape.push_op(Tensor::scalar(value), &[reg], RegLossOp { x: reg, items: t.reg }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
    /// No anchor entered the classification loss.
    pub empty_mask: bool,
}

/// Loss nodes for one batch: `(total, cls, reg)`.
pub fn loss_graph(
    tape: &mut Tape,
    cls: Var,
    reg: Var,
    labels: &[LabelAssignment],
    reg_weight: f64,
) -> Result<(Var, Var, Var)> {
    let shape = tape.value(cls).shape().to_vec();
    let r = tape.value(reg).shape();
    if r[0] != shape[0] || r[1] != 2 * shape[1] || r[2..] != shape[2..] {
        return Err(Error::Shape(format!("cls {:?} and reg {:?} misaligned", shape, r)));
    }
    let c = cls_loss_op(tape, cls, labels)?;
    let g = reg_loss_op(tape, reg, labels, &shape)?;
    let total = lincomb(tape, &[(c, 1.0), (g, reg_weight)])?;
    Ok((total, c, g))
}

/// Loss of fixed response maps against label assignments.
pub fn total_loss(fused: &ResponsePair, labels: &[LabelAssignment], reg_weight: f64) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let cls = tape.constant(fused.cls.clone());
    let reg = tape.constant(fused.reg.clone());
    let (t, c, g) = loss_graph(&mut tape, cls, reg, labels, reg_weight)?;
    Ok(breakdown(&tape, t, c, g, labels))
}

fn breakdown(tape: &Tape, t: Var, c: Var, g: Var, labels: &[LabelAssignment]) -> LossBreakdown {
    LossBreakdown {
        cls_loss: tape.value(c).item(),
        reg_loss: tape.value(g).item(),
        total: tape.value(t).item(),
        empty_mask: labels
            .iter()
            .all(|la| la.mask.iter().zip(&la.class).all(|(m, c)| !*m || *c == AnchorClass::Ignore)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub backbone_lr_scale: f64,
    pub batch_size: usize,
    pub freeze_backbone_epochs: usize,
    pub seed: u64,
    pub pairs_per_epoch: usize,
    pub reg_weight: f64,
    pub bn_momentum: f64,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    /// Schedule and optimizer values of the full-size recipe.
    pub fn full_size() -> Self {
        TrainConfig {
            epochs: 20,
            warmup_epochs: 5,
            warmup_lr: 0.001,
            peak_lr: 0.005,
            final_lr: 0.0005,
            momentum: 0.9,
            weight_decay: 0.0005,
            backbone_lr_scale: 0.1,
            batch_size: 8,
            freeze_backbone_epochs: 0,
            seed: 0,
            pairs_per_epoch: 128,
            reg_weight: 1.0,
            bn_momentum: 0.1,
            clip_norm: None,
        }
    }

    /// Short schedule for a randomly initialized desk-scale model.
    pub fn desk() -> Self {
        TrainConfig {
            warmup_epochs: 2,
            warmup_lr: 0.025,
            peak_lr: 0.1,
            final_lr: 0.01,
            backbone_lr_scale: 1.0,
            pairs_per_epoch: 96,
            ..Self::full_size()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.pairs_per_epoch == 0 {
            return Err(Error::Config("epochs, batch_size and pairs_per_epoch must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config("warmup_epochs must be below epochs".into()));
        }
        for (name, v) in [
            ("warmup_lr", self.warmup_lr),
            ("peak_lr", self.peak_lr),
            ("final_lr", self.final_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.warmup_lr > self.peak_lr {
            return Err(Error::Config(format!(
                "warmup_lr {} above peak_lr {} makes the schedule jump down at the warmup boundary",
                self.warmup_lr, self.peak_lr
            )));
        }
        if self.final_lr > self.peak_lr {
            return Err(Error::Config("final_lr must not exceed peak_lr".into()));
        }
        if !(self.backbone_lr_scale > 0.0 && self.backbone_lr_scale <= 1.0) {
            return Err(Error::Config("backbone_lr_scale must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1) and weight_decay >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.reg_weight < 0.0 {
            return Err(Error::Config("bn_momentum must be in [0, 1] and reg_weight >= 0".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::full_size()
    }
}

/// Learning rate of 1-based `epoch`: constant warmup, then geometric decay
/// from `peak_lr` to `final_lr` ending at the last epoch.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(Error::Usage(format!("epoch {epoch} outside 1..={}", cfg.epochs)));
    }
    let w = cfg.warmup_epochs;
    if epoch <= w {
        return Ok(cfg.warmup_lr);
    }
    if epoch == w + 1 {
        return Ok(cfg.peak_lr);
    }
    if epoch == cfg.epochs {
        return Ok(cfg.final_lr);
    }
    let t = (epoch - w - 1) as f64 / (cfg.epochs - w - 1) as f64;
    Ok(cfg.peak_lr * (cfg.final_lr / cfg.peak_lr).powf(t))
}

/// SGD with momentum and L2 weight decay.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<ParamId, Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    /// `v = m v + g + wd p; p -= lr v` for every parameter with a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr_of: impl Fn(ParamGroup) -> f64) {
        for (id, g) in grads {
            let lr = lr_of(store.get(*id).group);
            let p = store.value(*id);
            let mut upd = g.clone();
            if self.weight_decay != 0.0 {
                upd.axpy(self.weight_decay, p);
            }
            let v = match self.velocity.get_mut(id) {
                Some(v) if self.momentum != 0.0 => {
                    v.scale(self.momentum);
                    v.add_assign(&upd);
                    v.clone()
                }
                _ => {
                    if self.momentum != 0.0 {
                        self.velocity.insert(*id, upd.clone());
                    }
                    upd
                }
            };
            store.value_mut(*id).axpy(-lr, &v);
        }
    }
}

/// Deterministic source of training pairs indexed by `(epoch, index)`.
pub trait PairSampler: Sync {
    fn sample(&self, epoch: usize, index: usize) -> Result<TrainSample>;
}

/// Pairs from fresh synthetic scenes.
#[derive(Clone, Debug)]
pub struct SynthPairs {
    pub spec: SynthSpec,
    pub sample: SampleConfig,
    pub seed: u64,
}

pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ 0x243F_6A88_85A3_08D3;
    for v in [a, b] {
        h = (h ^ v).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        h ^= h >> 29;
    }
    h
}

impl PairSampler for SynthPairs {
    fn sample(&self, epoch: usize, index: usize) -> Result<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, epoch as u64, index as u64));
        sample_synthetic_pair(&self.spec, &self.sample, &mut rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepMetrics>,
}

impl TrainLog {
    /// Mean total loss of each epoch.
    pub fn epoch_totals(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for s in &self.steps {
            if out.len() < s.epoch {
                out.resize(s.epoch, (0.0, 0));
            }
            out[s.epoch - 1].0 += s.loss.total;
            out[s.epoch - 1].1 += 1;
        }
        out.into_iter().map(|(t, n)| t / n.max(1) as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,step,cls_loss,reg_loss,total,lr\n");
        for m in &self.steps {
            s.push_str(&format!(
                "{},{},{:.8},{:.8},{:.8},{:.8e}\n",
                m.epoch, m.step, m.loss.cls_loss, m.loss.reg_loss, m.loss.total, m.lr
            ));
        }
        s
    }
}

/// One optimization step on a batch; returns its loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut SiamModel,
    opt: &mut Sgd,
    batch: &[TrainSample],
    labels: &[LabelAssignment],
    cfg: &TrainConfig,
    lr: f64,
    freeze_backbone: bool,
) -> Result<LossBreakdown> {
    let z = Tensor::stack(&batch.iter().map(|s| Backbone::prepare(&s.z)).collect::<Vec<_>>())?;
    let x = Tensor::stack(&batch.iter().map(|s| Backbone::prepare(&s.x)).collect::<Vec<_>>())?;
    let (loss, mut grads, stats) = {
        let mut s = Session::train(&model.store);
        if freeze_backbone {
            s = s.freeze(&[ParamGroup::Backbone]);
        }
        let zv = s.tape.constant(z);
        let xv = s.tape.constant(x);
        let out = model.forward(&mut s, zv, xv)?;
        let (t, c, g) = loss_graph(&mut s.tape, out.cls, out.reg, labels, cfg.reg_weight)?;
        let loss = breakdown(&s.tape, t, c, g, labels);
        let mut gr = s.tape.backward(t);
        (loss, s.param_grads(&mut gr), s.take_stat_updates())
    };
    if !loss.total.is_finite() {
        return Ok(loss);
    }
    if let Some(max) = cfg.clip_norm {
        let norm = grads.iter().map(|(_, g)| g.norm().powi(2)).sum::<f64>().sqrt();
        if norm > max {
            for (_, g) in grads.iter_mut() {
                g.scale(max / norm);
            }
        }
    }
    let scale = cfg.backbone_lr_scale;
    opt.step(&mut model.store, &grads, |g| if g == ParamGroup::Backbone { lr * scale } else { lr });
    model.store.apply_stat_updates(&stats, cfg.bn_momentum);
    Ok(loss)
}

/// Labels for the samples of one batch, seeded by their global index.
pub fn batch_labels(model: &SiamModel, batch: &[TrainSample], cfg: &LabelConfig, seed: u64, first: usize) -> Result<Vec<LabelAssignment>> {
    let anchors = model.anchors();
    batch
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX, (first + i) as u64));
            assign_labels(&anchors, &s.gt, cfg, &mut rng)
        })
        .collect()
}

/// End-to-end training. Writes the step metrics CSV when `metrics` is set.
pub fn train(
    model: &mut SiamModel,
    cfg: &TrainConfig,
    data: &dyn PairSampler,
    labels: &LabelConfig,
    metrics: Option<&Path>,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut log = TrainLog::default();
    let mut csv = match metrics {
        Some(p) => {
            let mut f = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
            f.write_all(b"epoch,step,cls_loss,reg_loss,total,lr\n").map_err(|e| Error::io(p, e))?;
            Some((f, p))
        }
        None => None,
    };
    let steps = cfg.pairs_per_epoch.div_ceil(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        let lr = lr_schedule(epoch, cfg)?;
        let freeze = epoch <= cfg.freeze_backbone_epochs;
        for step in 0..steps {
            let first = step * cfg.batch_size;
            let last = (first + cfg.batch_size).min(cfg.pairs_per_epoch);
            let batch = (first..last)
                .into_par_iter()
                .map(|i| data.sample(epoch, i))
                .collect::<Result<Vec<_>>>()?;
            let la = batch_labels(model, &batch, labels, mix_seed(cfg.seed, epoch as u64, 0), first)?;
            let loss = train_step(model, &mut opt, &batch, &la, cfg, lr, freeze)?;
            if !loss.total.is_finite() {
                let detail = format!(
                    "cls={} reg={} lr={lr} freeze_backbone={freeze}; parameters left at the previous step",
                    loss.cls_loss, loss.reg_loss
                );
                if let Some((_, p)) = &csv {
                    let dump = p.with_extension("divergence.json");
                    let body = serde_json::json!({ "epoch": epoch, "step": step, "loss": loss, "lr": lr, "log": log });
                    std::fs::write(&dump, body.to_string()).map_err(|e| Error::io(&dump, e))?;
                }
                return Err(Error::Divergence { epoch, step, detail });
            }
            let m = StepMetrics { epoch, step, loss, lr };
            if let Some((f, p)) = csv.as_mut() {
                writeln!(
                    f,
                    "{},{},{:.8},{:.8},{:.8},{:.8e}",
                    epoch, step, loss.cls_loss, loss.reg_loss, loss.total, lr
                )
                .map_err(|e| Error::io(*p, e))?;
            }
            log.steps.push(m);
        }
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates checked per input (all when the input is smaller).
    pub samples: usize,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Step-halving disagreement above which a coordinate counts as a kink.
    pub kink_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            samples: 64,
            seed: 0,
            floor: 1e-4,
            kink_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, coordinate)` pairs skipped as nondifferentiable.
    pub skipped: Vec<(usize, usize)>,
}

/// Compares reverse-mode gradients of `op` against central differences.
///
/// Non-scalar outputs are projected on a fixed random unit direction.
pub fn grad_check<F>(op: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = op(&mut tape, &vars)?;
    let shape = tape.value(out).shape().to_vec();
    let mut dir = Tensor::randn(&shape, 1.0, &mut rng);
    let n = dir.norm();
    dir.scale(1.0 / n);
    let mut grads = tape.backward_with(out, dir.clone());
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = op(&mut tape, &vs)?;
        Ok(tape.value(y).dot(&dir))
    };
    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let numel = input.numel();
        let coords: Vec<usize> = if numel <= cfg.samples {
            (0..numel).collect()
        } else {
            sample_indices(&mut rng, numel, cfg.samples).into_vec()
        };
        for c in coords {
            let x0 = input.data()[c];
            let mut diff = |h: f64| -> Result<f64> {
                work[i].data_mut()[c] = x0 + h;
                let up = eval(&work)?;
                work[i].data_mut()[c] = x0 - h;
                let down = eval(&work)?;
                work[i].data_mut()[c] = x0;
                Ok((up - down) / (2.0 * h))
            };
            let d1 = diff(cfg.eps)?;
            let d2 = diff(2.0 * cfg.eps)?;
            if (d1 - d2).abs() > cfg.kink_tol * d1.abs().max(cfg.floor) {
                report.skipped.push((i, c));
                continue;
            }
            let a = analytic[i].data()[c];
            let rel = (a - d1).abs() / a.abs().max(d1.abs()).max(cfg.floor);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Finite-difference checks of the correlation, fusion and loss operators on
/// small random fixtures, in float64.
pub fn standard_grad_checks(cfg: &GradCheckConfig) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use crate::correlation::{dw_xcorr_op, grouped_xcorr_op};
    use crate::geometry::{make_anchors, AnchorConfig, BBox};
    use crate::nn::ops::weighted_fusion;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();

    let z = Tensor::randn(&[2, 3, 3, 3], 1.0, &mut rng);
    let x = Tensor::randn(&[2, 3, 6, 6], 1.0, &mut rng);
    out.push(("dw_xcorr", grad_check(|t, v| dw_xcorr_op(t, v[0], v[1]), &[z, x.clone()], cfg)?));

    let zu = Tensor::randn(&[2, 4 * 3, 3, 3], 1.0, &mut rng);
    out.push(("up_xcorr", grad_check(|t, v| grouped_xcorr_op(t, v[0], v[1]), &[zu, x], cfg)?));

    let levels: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[1, 4, 3, 3], 1.0, &mut rng)).collect();
    let mut inputs = levels;
    inputs.push(Tensor::randn(&[3], 0.5, &mut rng));
    out.push((
        "fusion",
        grad_check(|t, v| weighted_fusion(t, &v[..3], v[3]), &inputs, cfg)?,
    ));

    let s = Tensor::randn(&[64], 1.5, &mut rng);
    out.push(("smooth_l1", grad_check(|t, v| Ok(smooth_l1_op(t, v[0])), &[s], cfg)?));

    let acfg = AnchorConfig::with_stride(8);
    let k = acfg.k();
    let anchors = make_anchors(&acfg, (5, 5), (16.0, 16.0))?;
    let labels = [
        assign_labels(&anchors, &BBox::new(32.0, 33.0, 30.0, 22.0)?, &LabelConfig::default(), &mut rng)?,
        assign_labels(&anchors, &BBox::new(40.0, 28.0, 18.0, 36.0)?, &LabelConfig::default(), &mut rng)?,
    ];
    let cls = Tensor::randn(&[2, 2 * k, 5, 5], 1.0, &mut rng);
    let reg = Tensor::randn(&[2, 4 * k, 5, 5], 0.5, &mut rng);
    out.push((
        "total_loss",
        grad_check(|t, v| Ok(loss_graph(t, v[0], v[1], &labels, 1.0)?.0), &[cls, reg], cfg)?,
    ));
    Ok(out)
}

/// Number of trainable values per parameter group.
pub fn group_sizes(store: &ParamStore) -> HashMap<ParamGroup, usize> {
    let mut out = HashMap::new();
    for (_, e) in store.iter() {
        if e.kind == ParamKind::Trainable {
            *out.entry(e.group).or_insert(0) += e.value.numel();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RegressionDelta;

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
    }

    #[test]
    fn schedule_full_size_values() {
        let cfg = TrainConfig::full_size();
        for e in 1..=5 {
            assert_eq!(lr_schedule(e, &cfg).unwrap(), 0.001);
        }
        assert_eq!(lr_schedule(6, &cfg).unwrap(), 0.005);
        assert_eq!(lr_schedule(20, &cfg).unwrap(), 0.0005);
        assert!((lr_schedule(13, &cfg).unwrap() - 1.581_138_830_084_19e-3).abs() < 1e-15);
        assert!(lr_schedule(0, &cfg).is_err());
        assert!(lr_schedule(21, &cfg).is_err());
        let mut prev = f64::INFINITY;
        for e in 6..=20 {
            let lr = lr_schedule(e, &cfg).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
        let bad = TrainConfig {
            warmup_lr: 0.01,
            ..cfg
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    fn one_anchor_labels(class: AnchorClass, delta: [f64; 4]) -> LabelAssignment {
        LabelAssignment {
            class: vec![class],
            deltas: vec![RegressionDelta::from_array(delta)],
            mask: vec![true],
            no_positive: class != AnchorClass::Positive,
        }
    }

    #[test]
    fn loss_closed_forms() {
        // uniform logits: ln 2
        let pair = ResponsePair::new(Tensor::zeros(&[1, 2, 1, 1]), Tensor::zeros(&[1, 4, 1, 1]), None).unwrap();
        let l = total_loss(&pair, &[one_anchor_labels(AnchorClass::Negative, [0.0; 4])], 1.0).unwrap();
        assert!((l.cls_loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(l.reg_loss, 0.0);
        // perfect prediction
        let d = [0.1, -0.2, 0.05, 0.3];
        let cls = Tensor::from_vec(&[1, 2, 1, 1], vec![-50.0, 50.0]).unwrap();
        let reg = Tensor::from_vec(&[1, 4, 1, 1], d.to_vec()).unwrap();
        let pair = ResponsePair::new(cls, reg, None).unwrap();
        let l = total_loss(&pair, &[one_anchor_labels(AnchorClass::Positive, d)], 1.0).unwrap();
        assert!(l.total < 1e-6);
        // reg weight linearity
        let la = [one_anchor_labels(AnchorClass::Positive, [1.0, 0.0, -3.0, 0.2])];
        let l1 = total_loss(&pair, &la, 1.0).unwrap();
        let l2 = total_loss(&pair, &la, 2.0).unwrap();
        assert_eq!(l2.total - l1.total, l1.reg_loss);
        // empty mask
        let mut empty = one_anchor_labels(AnchorClass::Negative, [0.0; 4]);
        empty.mask[0] = false;
        let l = total_loss(&pair, &[empty], 1.0).unwrap();
        assert!(l.empty_mask && l.total == 0.0);
    }

    #[test]
    fn sgd_plain_and_decay() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap(), ParamGroup::Head, ParamKind::Trainable);
        let g = Tensor::from_vec(&[3], vec![0.3, 0.1, -4.0]).unwrap();
        let mut opt = Sgd::new(0.0, 0.0);
        opt.step(&mut store, &[(id, g.clone())], |_| 0.1);
        let expect = [1.0 - 0.03, -2.0 - 0.01, 0.5 + 0.4];
        for (a, b) in store.value(id).data().iter().zip(expect) {
            assert!((a - b).abs() <= 1e-9 * b.abs());
        }
        let before = store.value(id).clone();
        let mut opt = Sgd::new(0.0, 0.0005);
        opt.step(&mut store, &[(id, Tensor::zeros(&[3]))], |_| 0.1);
        for (a, b) in store.value(id).data().iter().zip(before.data()) {
            assert!((a - b * (1.0 - 0.1 * 0.0005)).abs() <= 1e-15);
        }
    }

    #[test]
    fn grad_check_linear_and_kink() {
        let a = Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let r = grad_check(
            |t, v| lincomb(t, &[(v[0], 3.0), (v[1], -0.5)]),
            &[a.clone(), a.map(|x| x * 2.0)],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-10, "{}", r.max_rel_error);
        let x = Tensor::from_vec(&[5], vec![0.3, -0.7, 1.0, -1.0, 2.5]).unwrap();
        let r = grad_check(|t, v| Ok(smooth_l1_op(t, v[0])), &[x], &GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
        assert_eq!(r.skipped, vec![(0, 2), (0, 3)]);
    }
}
