//! Per-level RPN outputs, weighted fusion across levels and raw selection.

use crate::backbone::{FeatureMap, Level};
use crate::correlation::CorrHead;
use crate::error::{Error, Result};
use crate::geometry::{decode_regression, AnchorSet, BBox, RegressionDelta};
use crate::nn::ops::softmax;
use crate::nn::{ParamStore, Session};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Classification `(N, 2k, H, W)` and regression `(N, 4k, H, W)` maps.
///
/// `level` is `None` for a fused pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponsePair {
    pub cls: Tensor,
    pub reg: Tensor,
    pub level: Option<Level>,
}

impl ResponsePair {
    pub fn new(cls: Tensor, reg: Tensor, level: Option<Level>) -> Result<Self> {
        let (n, c, h, w) = cls.dims4()?;
        let (rn, rc, rh, rw) = reg.dims4()?;
        if c % 2 != 0 || rc != 2 * c || (n, h, w) != (rn, rh, rw) {
            return Err(Error::Shape(format!(
                "cls {:?} and reg {:?} are not a 2k/4k pair on one grid",
                cls.shape(),
                reg.shape()
            )));
        }
        Ok(ResponsePair { cls, reg, level })
    }

    pub fn k(&self) -> usize {
        self.cls.shape()[1] / 2
    }

    /// `(H, W)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.cls.shape()[2], self.cls.shape()[3])
    }

    /// Positive-class softmax probability per anchor of batch item `n`, in
    /// flat `(i, j, a)` order.
    pub fn positive_scores(&self, n: usize) -> Vec<f64> {
        let k = self.k();
        let (h, w) = self.grid();
        let hw = h * w;
        let cls = self.cls.batch_item(n);
        let mut out = vec![0.0; hw * k];
        for cell in 0..hw {
            for a in 0..k {
                let neg = cls[a * hw + cell];
                let pos = cls[(k + a) * hw + cell];
                out[cell * k + a] = 1.0 / (1.0 + (neg - pos).exp());
            }
        }
        out
    }

    /// Regression deltas of batch item `n` for the anchor at flat index `idx`.
    pub fn delta_at(&self, n: usize, idx: usize) -> RegressionDelta {
        let k = self.k();
        let (h, w) = self.grid();
        let hw = h * w;
        let (cell, a) = (idx / k, idx % k);
        let reg = self.reg.batch_item(n);
        RegressionDelta::from_array([0, 1, 2, 3].map(|d| reg[(d * k + a) * hw + cell]))
    }
}

/// Raw (pre-normalization) fusion weights for the cls and reg groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl FusionWeights {
    /// Equal weights over `levels` levels.
    pub fn uniform(levels: usize) -> Self {
        FusionWeights {
            alpha: vec![0.0; levels],
            beta: vec![0.0; levels],
        }
    }

    pub fn normalized_alpha(&self) -> Vec<f64> {
        softmax(&self.alpha)
    }

    pub fn normalized_beta(&self) -> Vec<f64> {
        softmax(&self.beta)
    }

    /// Raw weights whose normalization yields exactly the given positive mixture.
    pub fn from_normalized(alpha: &[f64], beta: &[f64]) -> Self {
        FusionWeights {
            alpha: alpha.iter().map(|v| v.ln()).collect(),
            beta: beta.iter().map(|v| v.ln()).collect(),
        }
    }
}

/// Runs one level's correlation head on cached template and search features.
pub fn rpn_block(
    store: &ParamStore,
    head: &CorrHead,
    zf: (Level, &FeatureMap),
    xf: (Level, &FeatureMap),
) -> Result<ResponsePair> {
    if zf.0 != xf.0 {
        return Err(Error::Usage(format!(
            "template level conv{} paired with search level conv{}",
            zf.0.tag(),
            xf.0.tag()
        )));
    }
    let mut s = Session::inference(store);
    let z = s.tape.constant(zf.1.values.clone());
    let x = s.tape.constant(xf.1.values.clone());
    let (cls, reg) = head.forward(&mut s, z, x)?;
    ResponsePair::new(s.tape.value(cls).clone(), s.tape.value(reg).clone(), Some(zf.0))
}

/// Weighted sum of per-level pairs; cls and reg use separate weights.
pub fn fuse(levels: &[ResponsePair], w: &FusionWeights) -> Result<ResponsePair> {
    let first = levels
        .first()
        .ok_or_else(|| Error::Usage("fuse needs at least one level".into()))?;
    if w.alpha.len() != levels.len() || w.beta.len() != levels.len() {
        return Err(Error::Shape(format!(
            "{} levels but {}/{} fusion weights",
            levels.len(),
            w.alpha.len(),
            w.beta.len()
        )));
    }
    for p in &levels[1..] {
        if p.cls.shape() != first.cls.shape() || p.reg.shape() != first.reg.shape() {
            return Err(Error::Shape(format!(
                "level maps {:?} and {:?} differ",
                first.cls.shape(),
                p.cls.shape()
            )));
        }
    }
    let mix = |weights: Vec<f64>, pick: fn(&ResponsePair) -> &Tensor| {
        let mut out = Tensor::zeros(pick(first).shape());
        for (p, a) in levels.iter().zip(weights) {
            out.axpy(a, pick(p));
        }
        out
    };
    let cls = mix(w.normalized_alpha(), |p| &p.cls);
    let reg = mix(w.normalized_beta(), |p| &p.reg);
    Ok(ResponsePair { cls, reg, level: None })
}

/// Highest positive-probability anchor of batch item 0 and its decoded box.
///
/// Ties go to the lowest flat index.
pub fn select_best(fused: &ResponsePair, anchors: &AnchorSet) -> Result<(usize, f64, BBox)> {
    let scores = fused.positive_scores(0);
    if scores.len() != anchors.len() || fused.grid() != (anchors.h, anchors.w) {
        return Err(Error::Shape(format!(
            "{} scores for {} anchors",
            scores.len(),
            anchors.len()
        )));
    }
    let (idx, score) = argmax(&scores);
    let bbox = decode_regression(&anchors.boxes[idx], &fused.delta_at(0, idx))?;
    Ok((idx, score, bbox))
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_anchors, AnchorConfig};

    fn constant_pair(v: f64, k: usize, level: Level) -> ResponsePair {
        ResponsePair::new(
            Tensor::full(&[1, 2 * k, 3, 3], v),
            Tensor::full(&[1, 4 * k, 3, 3], v),
            Some(level),
        )
        .unwrap()
    }

    #[test]
    fn one_hot_fusion_selects_level() {
        let l: Vec<_> = Level::ALL.iter().zip([1.0, 2.0, 3.0]).map(|(l, v)| constant_pair(v, 5, *l)).collect();
        let w = FusionWeights {
            alpha: vec![0.0, -1e4, -1e4],
            beta: vec![-1e4, -1e4, 0.0],
        };
        let f = fuse(&l, &w).unwrap();
        assert_eq!(f.cls, l[0].cls);
        assert_eq!(f.reg, l[2].reg);
        assert_eq!(f.k(), 5);
        assert_eq!(f.cls.shape()[1], 10);
        assert_eq!(f.reg.shape()[1], 20);
    }

    #[test]
    fn weighted_constants() {
        let l: Vec<_> = Level::ALL.iter().zip([1.0, 2.0, 3.0]).map(|(l, v)| constant_pair(v, 1, *l)).collect();
        let w = FusionWeights::from_normalized(&[0.2, 0.5, 0.3], &[1.0 / 3.0; 3]);
        let f = fuse(&l, &w).unwrap();
        assert!(f.cls.data().iter().all(|v| (v - 2.1).abs() < 1e-12));
        assert!(f.reg.data().iter().all(|v| (v - 2.0).abs() < 1e-12));
        let same: Vec<_> = Level::ALL.iter().map(|l| constant_pair(0.7, 1, *l)).collect();
        let f = fuse(&same, &FusionWeights::uniform(3)).unwrap();
        assert!(f.cls.max_abs_diff(&same[0].cls) < 1e-15);
    }

    #[test]
    fn fusion_shape_mismatch() {
        let a = constant_pair(1.0, 1, Level::Conv3);
        let b = ResponsePair::new(Tensor::zeros(&[1, 2, 4, 4]), Tensor::zeros(&[1, 4, 4, 4]), None).unwrap();
        assert!(matches!(fuse(&[a, b], &FusionWeights::uniform(2)), Err(Error::Shape(_))));
        assert!(ResponsePair::new(Tensor::zeros(&[1, 2, 4, 4]), Tensor::zeros(&[1, 4, 4, 3]), None).is_err());
    }

    #[test]
    fn select_best_known_max() {
        let cfg = AnchorConfig::with_stride(8);
        let anchors = make_anchors(&cfg, (5, 9), (10.0, 10.0)).unwrap();
        let k = cfg.k();
        let mut cls = Tensor::zeros(&[1, 2 * k, 5, 9]);
        let hw = 45;
        cls.data_mut()[(k + 2) * hw + 3 * 9 + 7] = 5.0;
        let pair = ResponsePair::new(cls, Tensor::zeros(&[1, 4 * k, 5, 9]), None).unwrap();
        let (idx, score, bbox) = select_best(&pair, &anchors).unwrap();
        assert_eq!(anchors.unflatten(idx), (3, 7, 2));
        assert!((score - 1.0 / (1.0 + (-5.0f64).exp())).abs() < 1e-12);
        assert_eq!(&bbox, anchors.get(3, 7, 2));
        // all equal: lowest flat index wins
        let flat = ResponsePair::new(Tensor::zeros(&[1, 2 * k, 5, 9]), Tensor::zeros(&[1, 4 * k, 5, 9]), None).unwrap();
        assert_eq!(select_best(&flat, &anchors).unwrap().0, 0);
    }

    #[test]
    fn single_candidate() {
        let cfg = AnchorConfig::new(vec![1.0], vec![8.0], 8).unwrap();
        let anchors = make_anchors(&cfg, (1, 1), (0.0, 0.0)).unwrap();
        let pair = ResponsePair::new(Tensor::zeros(&[1, 2, 1, 1]), Tensor::zeros(&[1, 4, 1, 1]), None).unwrap();
        assert_eq!(select_best(&pair, &anchors).unwrap().0, 0);
    }
}
