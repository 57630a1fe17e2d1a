//! Backbone, adapters, per-level correlation heads and learned fusion.

use crate::backbone::{Backbone, BackboneConfig, BackboneVariant, Level};
use crate::correlation::{CorrConfig, CorrHead, CorrVariant};
use crate::error::{Error, Result};
use crate::geometry::{make_anchors, AnchorConfig, AnchorSet};
use crate::nn::ops::{crop_center, weighted_fusion};
use crate::nn::{ParamGroup, ParamId, ParamKind, ParamStore, Session, Var};
use crate::rpn_head::{FusionWeights, ResponsePair};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub corr: CorrConfig,
    /// Pyramid levels with a head, ascending.
    pub levels: Vec<Level>,
    pub template_size: usize,
    pub search_size: usize,
    /// Side of the centered template feature crop.
    pub template_crop: usize,
    pub anchors: AnchorConfig,
}

impl ModelConfig {
    /// Padded residual backbone, three fused levels, stride 4.
    pub fn desk() -> Self {
        ModelConfig {
            backbone: BackboneConfig::desk(),
            corr: CorrConfig {
                adjust_kernel: 1,
                ..CorrConfig::new(CorrVariant::DwXCorr, 32)
            },
            levels: Level::ALL.to_vec(),
            template_size: 63,
            search_size: 127,
            template_crop: 7,
            anchors: AnchorConfig::with_stride(4),
        }
    }

    /// Pad-free backbone; only conv5 since its levels differ in size.
    pub fn desk_padfree() -> Self {
        ModelConfig {
            backbone: BackboneConfig::desk_padfree(),
            levels: vec![Level::Conv5],
            ..Self::desk()
        }
    }

    pub fn with_levels(mut self, levels: &[Level]) -> Self {
        self.levels = levels.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.corr.validate()?;
        self.anchors.validate()?;
        if self.levels.is_empty() {
            return Err(Error::Config("model needs at least one pyramid level".into()));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("levels must be ascending and distinct".into()));
        }
        if self.corr.d != self.backbone.adapter_dim {
            return Err(Error::Config(format!(
                "head D={} differs from adapter_dim={}",
                self.corr.d, self.backbone.adapter_dim
            )));
        }
        if self.search_size <= self.template_size {
            return Err(Error::Config("search_size must exceed template_size".into()));
        }
        let strides = self.backbone.strides();
        for l in &self.levels {
            if strides[l.index()] != self.anchors.stride {
                return Err(Error::Config(format!(
                    "conv{} stride {} differs from anchor stride {}",
                    l.tag(),
                    strides[l.index()],
                    self.anchors.stride
                )));
            }
        }
        if self.backbone.variant == BackboneVariant::PadfreeShallow && self.levels.len() > 1 {
            return Err(Error::Config(
                "pad-free levels have different resolutions and cannot be fused".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

/// Graph outputs of one forward pass.
pub struct ModelOutput {
    pub cls: Var,
    pub reg: Var,
    /// Per-level `(cls, reg)` before fusion.
    pub levels: Vec<(Var, Var)>,
}

#[derive(Clone, Debug)]
pub struct SiamModel {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub heads: Vec<(Level, CorrHead)>,
    pub fusion_alpha: ParamId,
    pub fusion_beta: ParamId,
    pub store: ParamStore,
    response: usize,
}

impl SiamModel {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::build(&mut store, &cfg.backbone, &mut rng)?;
        let k = cfg.anchors.k();
        let mut heads = Vec::new();
        for l in &cfg.levels {
            heads.push((*l, CorrHead::build(&mut store, &format!("head.l{}", l.tag()), &cfg.corr, k, &mut rng)?));
        }
        let n = cfg.levels.len();
        let fusion_alpha = store.insert("fusion.alpha", Tensor::zeros(&[n]), ParamGroup::Fusion, ParamKind::Trainable);
        let fusion_beta = store.insert("fusion.beta", Tensor::zeros(&[n]), ParamGroup::Fusion, ParamKind::Trainable);
        let mut sizes = Vec::new();
        for l in &cfg.levels {
            let zs = backbone.output_size(*l, cfg.template_size)?;
            let xs = backbone.output_size(*l, cfg.search_size)?;
            if zs < cfg.template_crop || (zs - cfg.template_crop) % 2 != 0 {
                return Err(Error::Config(format!(
                    "template features {zs}x{zs} at conv{} cannot be center-cropped to {}",
                    l.tag(),
                    cfg.template_crop
                )));
            }
            if cfg.template_crop < cfg.corr.adjust_kernel || xs < cfg.template_crop {
                return Err(Error::Config(format!("conv{} features too small for the head", l.tag())));
            }
            sizes.push(xs - cfg.template_crop + 1);
        }
        if sizes.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Config(format!("per-level response sizes differ: {sizes:?}")));
        }
        Ok(SiamModel {
            cfg: cfg.clone(),
            backbone,
            heads,
            fusion_alpha,
            fusion_beta,
            store,
            response: sizes[0],
        })
    }

    pub fn k(&self) -> usize {
        self.cfg.anchors.k()
    }

    pub fn stride(&self) -> usize {
        self.cfg.anchors.stride
    }

    /// Side of the (square) response grid.
    pub fn response_size(&self) -> usize {
        self.response
    }

    /// Search-patch coordinate of response cell `(0, 0)`.
    pub fn origin_offset(&self) -> f64 {
        self.cfg.search_size as f64 / 2.0 - (self.response as f64 - 1.0) / 2.0 * self.stride() as f64
    }

    /// Anchors in search-patch coordinates.
    pub fn anchors(&self) -> AnchorSet {
        let o = self.origin_offset();
        make_anchors(&self.cfg.anchors, (self.response, self.response), (o, o)).expect("validated at build")
    }

    pub fn fusion_weights(&self) -> FusionWeights {
        FusionWeights {
            alpha: self.store.value(self.fusion_alpha).data().to_vec(),
            beta: self.store.value(self.fusion_beta).data().to_vec(),
        }
    }

    /// Cropped, adapted template features for each level.
    pub fn template_branch(&self, s: &mut Session<'_>, z: Var) -> Result<Vec<Var>> {
        let feats = self.backbone.forward(s, z, &self.cfg.levels)?;
        feats
            .into_iter()
            .map(|f| crop_center(&mut s.tape, f, self.cfg.template_crop))
            .collect()
    }

    /// Heads and fusion on already-computed template features.
    pub fn search_branch(&self, s: &mut Session<'_>, zfs: &[Var], x: Var) -> Result<ModelOutput> {
        let xfs = self.backbone.forward(s, x, &self.cfg.levels)?;
        let mut levels = Vec::with_capacity(self.heads.len());
        for ((_, head), (zf, xf)) in self.heads.iter().zip(zfs.iter().zip(xfs)) {
            levels.push(head.forward(s, *zf, xf)?);
        }
        let (cls, reg) = if levels.len() == 1 {
            levels[0]
        } else {
            let alpha = s.param(self.fusion_alpha);
            let beta = s.param(self.fusion_beta);
            let cls_l: Vec<Var> = levels.iter().map(|p| p.0).collect();
            let reg_l: Vec<Var> = levels.iter().map(|p| p.1).collect();
            (
                weighted_fusion(&mut s.tape, &cls_l, alpha)?,
                weighted_fusion(&mut s.tape, &reg_l, beta)?,
            )
        };
        Ok(ModelOutput { cls, reg, levels })
    }

    /// Full graph on prepared template `(N, 3, Tz, Tz)` and search `(N, 3, Tx, Tx)` inputs.
    pub fn forward(&self, s: &mut Session<'_>, z: Var, x: Var) -> Result<ModelOutput> {
        let zfs = self.template_branch(s, z)?;
        self.search_branch(s, &zfs, x)
    }

    /// Inference template features for a pixel patch.
    pub fn embed_template(&self, patch: &Tensor) -> Result<Vec<Tensor>> {
        let mut s = Session::inference(&self.store);
        let z = s.tape.constant(Backbone::prepare(patch));
        let zfs = self.template_branch(&mut s, z)?;
        Ok(zfs.iter().map(|v| s.tape.value(*v).clone()).collect())
    }

    /// Inference responses for a pixel search patch: fused pair and per-level pairs.
    pub fn respond(&self, template: &[Tensor], patch: &Tensor) -> Result<(ResponsePair, Vec<ResponsePair>)> {
        let mut s = Session::inference(&self.store);
        let zfs: Vec<Var> = template.iter().map(|t| s.tape.constant(t.clone())).collect();
        let x = s.tape.constant(Backbone::prepare(patch));
        let out = self.search_branch(&mut s, &zfs, x)?;
        let fused = ResponsePair::new(s.tape.value(out.cls).clone(), s.tape.value(out.reg).clone(), None)?;
        let per_level = out
            .levels
            .iter()
            .zip(&self.cfg.levels)
            .map(|((c, r), l)| ResponsePair::new(s.tape.value(*c).clone(), s.tape.value(*r).clone(), Some(*l)))
            .collect::<Result<Vec<_>>>()?;
        Ok((fused, per_level))
    }

    pub fn trainable_params(&self) -> usize {
        self.store.count_trainable(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpn_head::fuse;

    #[test]
    fn desk_geometry() {
        let m = SiamModel::build(&ModelConfig::desk(), 0).unwrap();
        assert_eq!(m.response_size(), 25);
        assert_eq!(m.origin_offset(), 15.5);
        let a = m.anchors();
        assert_eq!(a.len(), 25 * 25 * 5);
        assert_eq!(a.get(12, 12, 2).cx, 63.5);
        let p = SiamModel::build(&ModelConfig::desk_padfree(), 0).unwrap();
        assert_eq!(p.response_size(), 19);
    }

    #[test]
    fn padfree_multi_level_rejected() {
        let cfg = ModelConfig::desk_padfree().with_levels(&Level::ALL);
        assert!(matches!(SiamModel::build(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn respond_matches_fuse_of_levels() {
        let m = SiamModel::build(&ModelConfig::desk(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = Tensor::randn(&[1, 3, 63, 63], 50.0, &mut rng).map(|v| v + 128.0);
        let x = Tensor::randn(&[1, 3, 127, 127], 50.0, &mut rng).map(|v| v + 128.0);
        let zf = m.embed_template(&z).unwrap();
        assert_eq!(zf[0].shape(), &[1, 32, 7, 7]);
        let (fused, levels) = m.respond(&zf, &x).unwrap();
        assert_eq!(fused.cls.shape(), &[1, 10, 25, 25]);
        let manual = fuse(&levels, &m.fusion_weights()).unwrap();
        assert!(manual.cls.max_abs_diff(&fused.cls) < 1e-12);
        assert!(manual.reg.max_abs_diff(&fused.reg) < 1e-12);
    }
}
