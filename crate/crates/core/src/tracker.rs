//! Inference loop: template caching, penalized selection and smoothed updates.

use crate::error::{Error, Result};
use crate::geometry::{decode_regression, BBox};
use crate::image::{crop_and_resize, Frame};
use crate::model::SiamModel;
use crate::rpn_head::{argmax, ResponsePair};
use crate::sampling::context_side;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub template_size: usize,
    pub search_size: usize,
    pub context_fraction: f64,
    pub window_influence: f64,
    pub penalty_k: f64,
    pub size_lr: f64,
}

impl TrackerConfig {
    pub fn desk() -> Self {
        TrackerConfig {
            template_size: 63,
            search_size: 127,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.search_size <= self.template_size || self.template_size == 0 {
            return Err(Error::Config("search_size must exceed template_size".into()));
        }
        let fin = [self.context_fraction, self.window_influence, self.penalty_k, self.size_lr];
        if fin.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("tracker parameters must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.window_influence) || self.penalty_k < 0.0 || self.context_fraction < 0.0 {
            return Err(Error::Config(
                "window_influence must be in [0, 1]; penalty_k and context_fraction >= 0".into(),
            ));
        }
        if !(self.size_lr > 0.0 && self.size_lr <= 1.0) {
            return Err(Error::Config("size_lr must be in (0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            template_size: 127,
            search_size: 255,
            context_fraction: 0.5,
            window_influence: 0.4,
            penalty_k: 0.04,
            size_lr: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerState {
    /// Cropped template features per level; never updated after init.
    pub template: Vec<Tensor>,
    pub bbox: BBox,
    /// Cosine window, one value per anchor in flat order.
    pub window: Vec<f64>,
    pub cfg: TrackerConfig,
    pub frame_index: usize,
    frame_size: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackOutput {
    pub bbox: BBox,
    /// Positive-class probability of the selected anchor.
    pub score: f64,
    pub anchor: usize,
}

/// Outer product of two Hann windows of length `n`, tiled over `k` anchors.
pub fn cosine_window(n: usize, k: usize) -> Vec<f64> {
    let hann: Vec<f64> = if n == 1 {
        vec![1.0]
    } else {
        (0..n)
            .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos())
            .collect()
    };
    let mut out = Vec::with_capacity(n * n * k);
    for wy in &hann {
        for wx in &hann {
            out.extend(std::iter::repeat_n(wy * wx, k));
        }
    }
    out
}

fn change(r: f64) -> f64 {
    r.max(1.0 / r)
}

/// Scale/aspect change penalty `exp(-k (r_c s_c - 1))`.
pub fn shape_penalty(prev: (f64, f64), cand: (f64, f64), k: f64, context: f64) -> f64 {
    let rc = change((prev.0 / prev.1) / (cand.0 / cand.1));
    let sc = change(context_side(cand.0, cand.1, context) / context_side(prev.0, prev.1, context));
    (-(rc * sc - 1.0) * k).exp()
}

/// Index of the best penalized score.
pub fn select_anchor(scores: &[f64], penalties: &[f64], window: &[f64], influence: f64) -> usize {
    let p: Vec<f64> = scores
        .iter()
        .zip(penalties)
        .zip(window)
        .map(|((s, p), w)| (1.0 - influence) * s * p + influence * w)
        .collect();
    argmax(&p).0
}

pub fn init(model: &SiamModel, frame: &Frame, bbox: &BBox, cfg: &TrackerConfig) -> Result<TrackerState> {
    cfg.validate()?;
    if !(bbox.w > 0.0 && bbox.h > 0.0 && bbox.cx.is_finite() && bbox.cy.is_finite() && bbox.w.is_finite() && bbox.h.is_finite()) {
        return Err(Error::Usage(format!("degenerate initial box {bbox:?}")));
    }
    if cfg.template_size != model.cfg.template_size || cfg.search_size != model.cfg.search_size {
        return Err(Error::Config(format!(
            "tracker patch sizes {}/{} differ from the model's {}/{}",
            cfg.template_size, cfg.search_size, model.cfg.template_size, model.cfg.search_size
        )));
    }
    let side = context_side(bbox.w, bbox.h, cfg.context_fraction);
    let z = crop_and_resize(frame, (bbox.cx, bbox.cy), side, cfg.template_size)?;
    let template = model.embed_template(&z)?;
    Ok(TrackerState {
        template,
        bbox: *bbox,
        window: cosine_window(model.response_size(), model.k()),
        cfg: cfg.clone(),
        frame_index: 0,
        frame_size: (frame.width as f64, frame.height as f64),
    })
}

/// Candidate boxes (search-patch coordinates) and their positive scores.
fn candidates(model: &SiamModel, fused: &ResponsePair) -> (Vec<Option<BBox>>, Vec<f64>) {
    let anchors = model.anchors();
    let scores = fused.positive_scores(0);
    let boxes = (0..anchors.len())
        .map(|i| decode_regression(&anchors.boxes[i], &fused.delta_at(0, i)).ok())
        .collect();
    (boxes, scores)
}

pub fn track_step(model: &SiamModel, state: &mut TrackerState, frame: &Frame) -> Result<TrackOutput> {
    let cfg = &state.cfg;
    let prev = state.bbox;
    let s_z = context_side(prev.w, prev.h, cfg.context_fraction);
    let scale = cfg.template_size as f64 / s_z;
    let s_x = cfg.search_size as f64 / scale;
    let x = crop_and_resize(frame, (prev.cx, prev.cy), s_x, cfg.search_size)?;
    let (fused, _) = model.respond(&state.template, &x)?;
    let (boxes, scores) = candidates(model, &fused);
    let prev_patch = (prev.w * scale, prev.h * scale);
    let penalties: Vec<f64> = boxes
        .iter()
        .map(|b| match b {
            Some(b) => shape_penalty(prev_patch, (b.w, b.h), cfg.penalty_k, cfg.context_fraction),
            None => 0.0,
        })
        .collect();
    let valid: Vec<f64> = scores
        .iter()
        .zip(&boxes)
        .map(|(s, b)| if b.is_some() { *s } else { f64::NEG_INFINITY })
        .collect();
    let best = select_anchor(&valid, &penalties, &state.window, cfg.window_influence);
    let score = scores[best];
    let half = cfg.search_size as f64 / 2.0;
    let (cx, cy, w, h) = match boxes[best] {
        Some(b) => {
            let lr = (penalties[best] * score * cfg.size_lr).clamp(0.0, 1.0);
            (
                prev.cx + (b.cx - half) / scale,
                prev.cy + (b.cy - half) / scale,
                prev.w * (1.0 - lr) + b.w / scale * lr,
                prev.h * (1.0 - lr) + b.h / scale * lr,
            )
        }
        None => (prev.cx, prev.cy, prev.w, prev.h),
    };
    let (fw, fh) = (frame.width as f64, frame.height as f64);
    state.frame_size = (fw, fh);
    let bbox = BBox {
        cx: cx.clamp(0.0, fw),
        cy: cy.clamp(0.0, fh),
        w: w.clamp(4.0_f64.min(fw), fw),
        h: h.clamp(4.0_f64.min(fh), fh),
    };
    state.bbox = bbox;
    state.frame_index += 1;
    Ok(TrackOutput { bbox, score, anchor: best })
}

/// Runs a whole sequence: frame 0 initializes, later frames are tracked.
///
/// Returns one box and score per frame (the first is the initial box, score 1).
pub fn track_sequence(
    model: &SiamModel,
    frames: impl IntoIterator<Item = Result<Frame>>,
    init_box: &BBox,
    cfg: &TrackerConfig,
) -> Result<Vec<(BBox, f64)>> {
    let mut it = frames.into_iter();
    let first = it.next().ok_or_else(|| Error::Dataset("empty sequence".into()))??;
    let mut state = init(model, &first, init_box, cfg)?;
    let mut out = vec![(*init_box, 1.0)];
    for f in it {
        let o = track_step(model, &mut state, &f?)?;
        out.push((o.bbox, o.score));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_shape_and_peak() {
        let w = cosine_window(5, 2);
        assert_eq!(w.len(), 50);
        assert_eq!(w[(2 * 5 + 2) * 2], 1.0);
        assert_eq!(w[0], 0.0);
    }

    #[test]
    fn penalty_identity_is_one() {
        assert_eq!(shape_penalty((30.0, 20.0), (30.0, 20.0), 0.04, 0.5), 1.0);
        assert!(shape_penalty((30.0, 20.0), (60.0, 20.0), 0.04, 0.5) < 1.0);
        assert_eq!(shape_penalty((30.0, 20.0), (60.0, 20.0), 0.0, 0.5), 1.0);
    }

    #[test]
    fn selection_without_penalties_is_argmax() {
        let scores = [0.1, 0.7, 0.3, 0.7];
        let ones = [1.0; 4];
        let window = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(select_anchor(&scores, &ones, &window, 0.0), 1);
        let scaled: Vec<f64> = scores.iter().map(|s| s * 3.5).collect();
        assert_eq!(select_anchor(&scaled, &ones, &window, 0.0), 1);
        assert_eq!(select_anchor(&scores, &ones, &window, 0.9), 2);
    }

    #[test]
    fn context_side_hand_value() {
        // w = h = 50, c = 50: sqrt(100 * 100)
        assert_eq!(context_side(50.0, 50.0, 0.5), 100.0);
    }
}
