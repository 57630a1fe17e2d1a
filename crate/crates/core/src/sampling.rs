//! Synthetic scenes, shifted training pairs and anchor label assignment.

use crate::error::{Error, Result};
use crate::geometry::{encode_regression, iou, AnchorSet, BBox, RegressionDelta};
use crate::image::{crop_and_resize, Frame};
use crate::tensor::Tensor;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    /// Per-frame displacement drawn from `N(0, sigma^2)` on each axis.
    RandomWalk { sigma: f64 },
    /// Fixed speed (pixels per frame) in a random direction.
    ConstantVelocity { speed: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub canvas: usize,
    /// Range of the longer target side, pixels.
    pub size_range: (f64, f64),
    /// Largest aspect ratio (long side over short side).
    pub max_aspect: f64,
    /// Fixes the target texture across sequences when set.
    pub texture_seed: Option<u64>,
    pub motion: Motion,
    pub distractors: usize,
    /// Standard deviation of per-pixel noise.
    pub noise: f64,
    /// Texture cells per object side.
    pub texture_cells: usize,
    /// Blend of each distractor texture toward the target's, 1 = identical.
    #[serde(default)]
    pub lookalike: f64,
    /// Per-frame blend of every texture toward a fresh random one.
    #[serde(default)]
    pub appearance_change: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            canvas: 256,
            size_range: (24.0, 40.0),
            max_aspect: 1.6,
            texture_seed: None,
            motion: Motion::RandomWalk { sigma: 2.0 },
            distractors: 3,
            noise: 6.0,
            texture_cells: 4,
            lookalike: 0.0,
            appearance_change: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.size_range;
        if !(lo > 0.0 && hi >= lo && hi < self.canvas as f64 / 2.0) {
            return Err(Error::Config(format!(
                "size range {:?} must be positive and below half the {} px canvas",
                self.size_range, self.canvas
            )));
        }
        if !(self.max_aspect >= 1.0 && self.max_aspect.is_finite()) {
            return Err(Error::Config("max_aspect must be at least 1".into()));
        }
        for (name, v) in [("lookalike", self.lookalike), ("appearance_change", self.appearance_change)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} must be in [0, 1]")));
            }
        }
        if self.noise < 0.0 || self.texture_cells == 0 {
            return Err(Error::Config("noise must be >= 0 and texture_cells > 0".into()));
        }
        let step = match self.motion {
            Motion::RandomWalk { sigma } => sigma,
            Motion::ConstantVelocity { speed } => speed,
        };
        if !(step >= 0.0 && step.is_finite()) {
            return Err(Error::Config(format!("motion parameter {step} must be finite and >= 0")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ObjectTrack {
    texture: Vec<[f64; 3]>,
    w: f64,
    h: f64,
    centers: Vec<(f64, f64)>,
}

/// A rendered-on-demand synthetic sequence; object 0 is the target.
#[derive(Clone, Debug)]
pub struct Scene {
    spec: SynthSpec,
    background: Frame,
    objects: Vec<ObjectTrack>,
    noise_seed: u64,
}

fn reflect(p: f64, lo: f64, hi: f64) -> (f64, bool) {
    if hi <= lo {
        return ((lo + hi) / 2.0, false);
    }
    let mut p = p;
    let mut flipped = false;
    for _ in 0..4 {
        if p < lo {
            p = 2.0 * lo - p;
            flipped = !flipped;
        } else if p > hi {
            p = 2.0 * hi - p;
            flipped = !flipped;
        } else {
            break;
        }
    }
    (p.clamp(lo, hi), flipped)
}

impl Scene {
    pub fn new(spec: &SynthSpec, length: usize, seed: u64) -> Result<Scene> {
        spec.validate()?;
        if length == 0 {
            return Err(Error::Usage("sequence length must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.canvas;
        let mut data = vec![0.0; 3 * n * n];
        for c in 0..3 {
            let base = rng.random_range(70.0..180.0);
            let waves: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(8.0..28.0),
                        rng.random_range(-4.0..4.0),
                        rng.random_range(-4.0..4.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let plane = &mut data[c * n * n..(c + 1) * n * n];
            plane.fill(base);
            for (a, fx, fy, ph) in &waves {
                // sin(p + q) = sin p cos q + cos p sin q, with p along x and q along y
                let px: Vec<(f64, f64)> = (0..n)
                    .map(|x| (std::f64::consts::TAU * fx * x as f64 / n as f64 + ph).sin_cos())
                    .collect();
                for y in 0..n {
                    let (sq, cq) = (std::f64::consts::TAU * fy * y as f64 / n as f64).sin_cos();
                    for (v, (sp, cp)) in plane[y * n..(y + 1) * n].iter_mut().zip(&px) {
                        *v += a * (sp * cq + cp * sq);
                    }
                }
            }
        }
        let background = Frame::new(n, n, data)?;
        let mut objects: Vec<ObjectTrack> = Vec::with_capacity(1 + spec.distractors);
        for i in 0..=spec.distractors {
            let mut tex_rng = match (i, spec.texture_seed) {
                (0, Some(ts)) => ChaCha8Rng::seed_from_u64(ts),
                _ => ChaCha8Rng::seed_from_u64(rng.random()),
            };
            let cells = spec.texture_cells * spec.texture_cells;
            let mut texture: Vec<[f64; 3]> = (0..cells)
                .map(|_| [0, 1, 2].map(|_| tex_rng.random_range(0.0..255.0)))
                .collect();
            if i > 0 && spec.lookalike > 0.0 {
                let a = spec.lookalike;
                for (t, o) in texture.iter_mut().zip(&objects[0].texture) {
                    for c in 0..3 {
                        t[c] += a * (o[c] - t[c]);
                    }
                }
            }
            let long = rng.random_range(spec.size_range.0..=spec.size_range.1);
            let short = long / rng.random_range(1.0..=spec.max_aspect);
            let (w, h) = if rng.random::<bool>() { (long, short) } else { (short, long) };
            let (lox, hix) = (w / 2.0, n as f64 - w / 2.0);
            let (loy, hiy) = (h / 2.0, n as f64 - h / 2.0);
            let mut p = (rng.random_range(lox..=hix), rng.random_range(loy..=hiy));
            if i == 0 {
                // keep the target away from the border on frame 1
                let m = n as f64 / 4.0;
                p = (rng.random_range(m..n as f64 - m), rng.random_range(m..n as f64 - m));
            }
            let mut centers = Vec::with_capacity(length);
            centers.push(p);
            match spec.motion {
                Motion::RandomWalk { sigma } => {
                    let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("validated sigma"));
                    for _ in 1..length {
                        if let Some(d) = &normal {
                            p.0 = reflect(p.0 + d.sample(&mut rng), lox, hix).0;
                            p.1 = reflect(p.1 + d.sample(&mut rng), loy, hiy).0;
                        }
                        centers.push(p);
                    }
                }
                Motion::ConstantVelocity { speed } => {
                    let angle = rng.random_range(0.0..std::f64::consts::TAU);
                    let mut v = (speed * angle.cos(), speed * angle.sin());
                    for _ in 1..length {
                        let (x, fx) = reflect(p.0 + v.0, lox, hix);
                        let (y, fy) = reflect(p.1 + v.1, loy, hiy);
                        if fx {
                            v.0 = -v.0;
                        }
                        if fy {
                            v.1 = -v.1;
                        }
                        p = (x, y);
                        centers.push(p);
                    }
                }
            }
            objects.push(ObjectTrack { texture, w, h, centers });
        }
        Ok(Scene {
            spec: spec.clone(),
            background,
            objects,
            noise_seed: rng.random(),
        })
    }

    pub fn len(&self) -> usize {
        self.objects[0].centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gt(&self, t: usize) -> BBox {
        let o = &self.objects[0];
        let (cx, cy) = o.centers[t];
        BBox { cx, cy, w: o.w, h: o.h }
    }

    pub fn boxes(&self) -> Vec<BBox> {
        (0..self.len()).map(|t| self.gt(t)).collect()
    }

    pub fn render(&self, t: usize) -> Frame {
        let mut f = self.background.clone();
        let n = self.spec.canvas;
        let cells = self.spec.texture_cells;
        let change = self.spec.appearance_change;
        let mut tex_rng = ChaCha8Rng::seed_from_u64(self.noise_seed ^ 0x5EED ^ (t as u64).wrapping_mul(0xD134_2543_DE82_EF95));
        let textures: Vec<Vec<[f64; 3]>> = self
            .objects
            .iter()
            .map(|o| {
                if change == 0.0 {
                    return o.texture.clone();
                }
                o.texture
                    .iter()
                    .map(|c| c.map(|v| v + change * (tex_rng.random_range(0.0..255.0) - v)))
                    .collect()
            })
            .collect();
        // distractors first so the target is never occluded
        for (o, texture) in self.objects.iter().zip(&textures).rev() {
            let (cx, cy) = o.centers[t];
            let (x0, y0) = (cx - o.w / 2.0, cy - o.h / 2.0);
            let xs = (x0 - 0.5).ceil().max(0.0) as usize;
            let ys = (y0 - 0.5).ceil().max(0.0) as usize;
            let xe = ((x0 + o.w - 0.5).ceil().max(0.0) as usize).min(n);
            let ye = ((y0 + o.h - 0.5).ceil().max(0.0) as usize).min(n);
            for y in ys..ye {
                let ty = (((y as f64 + 0.5 - y0) / o.h * cells as f64) as usize).min(cells - 1);
                for x in xs..xe {
                    let tx = (((x as f64 + 0.5 - x0) / o.w * cells as f64) as usize).min(cells - 1);
                    let col = texture[ty * cells + tx];
                    for (c, v) in col.iter().enumerate() {
                        f.set(c, y, x, *v);
                    }
                }
            }
        }
        if self.spec.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let normal = Normal::new(0.0, self.spec.noise).expect("validated noise");
            for v in f.data.iter_mut() {
                *v = (*v + normal.sample(&mut rng)).clamp(0.0, 255.0);
            }
        } else {
            for v in f.data.iter_mut() {
                *v = v.clamp(0.0, 255.0);
            }
        }
        f
    }
}

/// Frames and ground truth of a synthetic sequence.
pub fn synth_sequence(spec: &SynthSpec, length: usize, seed: u64) -> Result<(Vec<Frame>, Vec<BBox>)> {
    let scene = Scene::new(spec, length, seed)?;
    Ok(((0..length).map(|t| scene.render(t)).collect(), scene.boxes()))
}

/// Side of the square context region around a `w x h` box.
pub fn context_side(w: f64, h: f64, context: f64) -> f64 {
    let c = context * (w + h);
    ((w + c) * (h + c)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub template_size: usize,
    pub search_size: usize,
    pub context: f64,
    /// Largest target offset from the search-patch center, patch pixels.
    pub shift_range: f64,
    /// Log-uniform search scale jitter, as a fraction.
    pub scale_jitter: f64,
    /// Largest frame gap between template and search frames.
    pub max_gap: usize,
}

impl SampleConfig {
    pub fn desk(shift_range: f64) -> Self {
        SampleConfig {
            template_size: 63,
            search_size: 127,
            context: 0.5,
            shift_range,
            scale_jitter: 0.05,
            max_gap: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.search_size <= self.template_size {
            return Err(Error::Config("search_size must exceed template_size".into()));
        }
        let limit = (self.search_size - self.template_size) as f64 / 2.0;
        if !(self.shift_range >= 0.0 && self.shift_range <= limit) {
            return Err(Error::Config(format!(
                "shift_range {} outside [0, {limit}] for a {} px search patch",
                self.shift_range, self.search_size
            )));
        }
        if !(0.0..0.5).contains(&self.scale_jitter) {
            return Err(Error::Config("scale_jitter must be in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Template patch, search patch and target box in search-patch coordinates.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub z: Tensor,
    pub x: Tensor,
    pub gt: BBox,
    pub shift: (f64, f64),
}

/// Offset drawn uniformly from `[-range, range]^2`.
pub fn draw_shift<R: Rng + ?Sized>(range: f64, rng: &mut R) -> (f64, f64) {
    if range == 0.0 {
        return (0.0, 0.0);
    }
    (rng.random_range(-range..=range), rng.random_range(-range..=range))
}

/// Template from frame `tz`, search from frame `tx` with the target placed at
/// `shift` from the search-patch center. The shift is not range-checked.
pub fn sample_pair_frames<R: Rng + ?Sized>(
    scene: &Scene,
    tz: usize,
    tx: usize,
    shift: (f64, f64),
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<TrainSample> {
    let bz = scene.gt(tz);
    let fz = scene.render(tz);
    let z = crop_and_resize(&fz, (bz.cx, bz.cy), context_side(bz.w, bz.h, cfg.context), cfg.template_size)?;
    let bx = scene.gt(tx);
    let jitter = if cfg.scale_jitter > 0.0 {
        let l = (1.0 + cfg.scale_jitter).ln();
        rng.random_range(-l..=l).exp()
    } else {
        1.0
    };
    let side = context_side(bx.w, bx.h, cfg.context) * cfg.search_size as f64 / cfg.template_size as f64 * jitter;
    let scale = side / cfg.search_size as f64;
    let center = (bx.cx - shift.0 * scale, bx.cy - shift.1 * scale);
    let fx = if tx == tz { fz } else { scene.render(tx) };
    let x = crop_and_resize(&fx, center, side, cfg.search_size)?;
    let half = cfg.search_size as f64 / 2.0;
    let gt = BBox {
        cx: (bx.cx - center.0) / scale + half,
        cy: (bx.cy - center.1) / scale + half,
        w: bx.w / scale,
        h: bx.h / scale,
    };
    Ok(TrainSample { z, x, gt, shift })
}

/// Random frame pair of `scene` at most `max_gap` frames apart.
pub fn sample_pair<R: Rng + ?Sized>(scene: &Scene, cfg: &SampleConfig, rng: &mut R) -> Result<TrainSample> {
    cfg.validate()?;
    let tz = rng.random_range(0..scene.len());
    let lo = tz.saturating_sub(cfg.max_gap);
    let hi = (tz + cfg.max_gap).min(scene.len() - 1);
    let tx = rng.random_range(lo..=hi);
    let shift = draw_shift(cfg.shift_range, rng);
    sample_pair_frames(scene, tz, tx, shift, cfg, rng)
}

/// Pair from a fresh scene drawn from `spec`.
pub fn sample_synthetic_pair<R: Rng + ?Sized>(spec: &SynthSpec, cfg: &SampleConfig, rng: &mut R) -> Result<TrainSample> {
    let scene = Scene::new(spec, cfg.max_gap + 1, rng.random())?;
    sample_pair(&scene, cfg, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub pos_thr: f64,
    pub neg_thr: f64,
    pub max_pos: usize,
    /// Sampled anchors per image (positives plus negatives).
    pub total: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            pos_thr: 0.6,
            neg_thr: 0.3,
            max_pos: 16,
            total: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorClass {
    Positive,
    Negative,
    Ignore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelAssignment {
    pub class: Vec<AnchorClass>,
    /// Regression targets; zero for non-positive anchors.
    pub deltas: Vec<RegressionDelta>,
    /// Anchors that enter the loss.
    pub mask: Vec<bool>,
    /// Set when no anchor reached the positive threshold.
    pub no_positive: bool,
}

impl LabelAssignment {
    pub fn sampled(&self, class: AnchorClass) -> usize {
        self.class
            .iter()
            .zip(&self.mask)
            .filter(|(c, m)| **m && **c == class)
            .count()
    }
}

/// Classifies anchors by IoU with `gt` and samples at most `max_pos`
/// positives plus `total - positives` negatives.
pub fn assign_labels<R: Rng + ?Sized>(anchors: &AnchorSet, gt: &BBox, cfg: &LabelConfig, rng: &mut R) -> Result<LabelAssignment> {
    if !(cfg.pos_thr > cfg.neg_thr) {
        return Err(Error::Config(format!(
            "positive threshold {} must exceed negative threshold {}",
            cfg.pos_thr, cfg.neg_thr
        )));
    }
    let n = anchors.len();
    let mut class = Vec::with_capacity(n);
    let mut deltas = vec![RegressionDelta::ZERO; n];
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (i, a) in anchors.boxes.iter().enumerate() {
        let o = iou(a, gt);
        let c = if o >= cfg.pos_thr {
            pos.push(i);
            deltas[i] = encode_regression(a, gt);
            AnchorClass::Positive
        } else if o <= cfg.neg_thr {
            neg.push(i);
            AnchorClass::Negative
        } else {
            AnchorClass::Ignore
        };
        class.push(c);
    }
    let mut mask = vec![false; n];
    let keep_pos = pick(&pos, cfg.max_pos, rng);
    for &i in &keep_pos {
        mask[i] = true;
    }
    for i in pick(&neg, cfg.total.saturating_sub(keep_pos.len()), rng) {
        mask[i] = true;
    }
    Ok(LabelAssignment {
        class,
        deltas,
        mask,
        no_positive: pos.is_empty(),
    })
}

fn pick<R: Rng + ?Sized>(items: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    if items.len() <= count {
        return items.to_vec();
    }
    sample_indices(rng, items.len(), count).into_iter().map(|j| items[j]).collect()
}
