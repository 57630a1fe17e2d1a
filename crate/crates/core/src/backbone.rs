//! Feature extractors producing a three-level pyramid (conv3, conv4, conv5).
//!
//! Two topologies share the same stem of stride-2 valid convolutions:
//!
//! * `PaddedResidual`: residual blocks with "same" padding. conv4 and conv5
//!   keep unit stride and grow their receptive field through dilation, so all
//!   three levels share one resolution and one effective stride.
//! * `PadfreeShallow`: every convolution is valid (no padding). Each level
//!   shrinks, but the map is exactly shift-equivariant in steps of the stride.

use crate::error::{Error, Result};
use crate::nn::layers::ConvBn;
use crate::nn::ops::{add, crop_center as crop_center_op, relu};
use crate::nn::{ConvGeom, Mode, ParamGroup, ParamStore, Session, Var};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Pyramid level tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Conv3,
    Conv4,
    Conv5,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Conv3, Level::Conv4, Level::Conv5];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Stage number, 3 to 5.
    pub fn tag(self) -> u8 {
        self as u8 + 3
    }

    pub fn from_tag(tag: u8) -> Result<Level> {
        match tag {
            3 => Ok(Level::Conv3),
            4 => Ok(Level::Conv4),
            5 => Ok(Level::Conv5),
            _ => Err(Error::Config(format!("pyramid level must be 3, 4 or 5, got {tag}"))),
        }
    }
}

/// Dense activations `(N, C, H, W)` with their input stride.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub values: Tensor,
    pub stride: usize,
    pub padding_used: bool,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    /// `(H, W)`.
    pub fn spatial(&self) -> (usize, usize) {
        (self.values.shape()[2], self.values.shape()[3])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<(Level, FeatureMap)>,
}

impl FeaturePyramid {
    pub fn get(&self, level: Level) -> Option<&FeatureMap> {
        self.levels.iter().find(|(l, _)| *l == level).map(|(_, m)| m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneVariant {
    PadfreeShallow,
    PaddedResidual,
}

impl std::str::FromStr for BackboneVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "padfree_shallow" | "padfree" => Ok(BackboneVariant::PadfreeShallow),
            "padded_residual" | "padded" => Ok(BackboneVariant::PaddedResidual),
            other => Err(Error::Config(format!("unknown backbone variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub variant: BackboneVariant,
    pub in_channels: usize,
    /// Channels of the stem convolutions before conv3.
    pub stem_channels: usize,
    /// Output channels of conv3, conv4, conv5.
    pub channels: [usize; 3],
    /// Number of stride-2 valid 3x3 convolutions up to and including the
    /// conv3 entry; the effective stride of conv3 is `2^downsample`.
    pub downsample: usize,
    /// Spatial stride of the conv4 and conv5 stages.
    pub stage_strides: [usize; 2],
    pub dilations: [usize; 3],
    /// Residual blocks per stage (padded variant only).
    pub blocks_per_stage: usize,
    /// Channel count of the 1x1 adapters appended to every level.
    pub adapter_dim: usize,
}

impl BackboneConfig {
    /// Desk-scale residual network: stride 4, 63 px template to 15 cells,
    /// 127 px search to 31 cells.
    pub fn desk() -> Self {
        BackboneConfig {
            variant: BackboneVariant::PaddedResidual,
            in_channels: 3,
            stem_channels: 8,
            channels: [16, 24, 32],
            downsample: 2,
            stage_strides: [1, 1],
            dilations: [2, 4, 8],
            blocks_per_stage: 1,
            adapter_dim: 32,
        }
    }

    /// Desk-scale padding-free counterpart of [`BackboneConfig::desk`].
    pub fn desk_padfree() -> Self {
        BackboneConfig {
            variant: BackboneVariant::PadfreeShallow,
            dilations: [1, 1, 1],
            ..Self::desk()
        }
    }

    /// Full-size geometry: stride 8, 127 px template to 15 cells, 255 px
    /// search to 31 cells, 256-channel adapters.
    pub fn full_size() -> Self {
        BackboneConfig {
            variant: BackboneVariant::PaddedResidual,
            in_channels: 3,
            stem_channels: 16,
            channels: [32, 64, 128],
            downsample: 3,
            stage_strides: [1, 1],
            dilations: [1, 2, 4],
            blocks_per_stage: 1,
            adapter_dim: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.adapter_dim == 0 {
            return Err(Error::Config("adapter_dim must be positive".into()));
        }
        if self.in_channels == 0 || self.stem_channels == 0 || self.channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.downsample == 0 || self.downsample > 5 {
            return Err(Error::Config(format!(
                "downsample must be in 1..=5, got {}",
                self.downsample
            )));
        }
        if self.dilations.contains(&0) || self.stage_strides.contains(&0) {
            return Err(Error::Config("strides and dilations must be positive".into()));
        }
        for (stride, dil) in self.stage_strides.iter().zip(&self.dilations[1..]) {
            if *stride > 1 && *dil > 1 {
                return Err(Error::Config(format!(
                    "stage stride {stride} combined with dilation {dil}: a dilated stage must keep unit stride"
                )));
            }
        }
        if self.variant == BackboneVariant::PaddedResidual {
            if self.stage_strides != [1, 1] {
                return Err(Error::Config(
                    "padded_residual keeps unit spatial stride in conv4 and conv5".into(),
                ));
            }
            if self.blocks_per_stage == 0 {
                return Err(Error::Config("blocks_per_stage must be positive".into()));
            }
        }
        let strides = self.strides();
        if strides.iter().any(|s| *s > 32) {
            return Err(Error::Config(format!("effective strides {strides:?} exceed 32")));
        }
        Ok(())
    }

    /// Effective input stride of conv3, conv4, conv5.
    pub fn strides(&self) -> [usize; 3] {
        let s3 = 1usize << self.downsample;
        let s4 = s3 * self.stage_strides[0];
        [s3, s4, s4 * self.stage_strides[1]]
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig::desk()
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    a: ConvBn,
    b: ConvBn,
    shortcut: Option<ConvBn>,
}

impl ResBlock {
    fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let y = self.a.forward(s, x)?;
        let y = self.b.forward(s, y)?;
        let skip = match &self.shortcut {
            Some(sc) => sc.forward(s, x)?,
            None => x,
        };
        let sum = add(&mut s.tape, y, skip)?;
        Ok(relu(&mut s.tape, sum))
    }
}

#[derive(Clone, Debug)]
enum Unit {
    Plain(ConvBn),
    Residual(ResBlock),
}

/// One layer of the analytic receptive-field walk.
#[derive(Clone, Copy, Debug)]
struct Tap {
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    stem: Vec<ConvBn>,
    stages: [Vec<Unit>; 3],
    adapters: [ConvBn; 3],
    taps: [Vec<Tap>; 3],
}

impl Backbone {
    /// Registers all backbone and adapter parameters in `store`.
    pub fn build<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &BackboneConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let g = ParamGroup::Backbone;
        let down = ConvGeom::new(2, 0, 1);
        let mut taps: Vec<Tap> = Vec::new();
        let mut stem = Vec::new();
        let mut ch = cfg.in_channels;
        for i in 0..cfg.downsample - 1 {
            stem.push(ConvBn::new(store, &format!("backbone.stem{i}"), g, ch, cfg.stem_channels, 3, down, true, rng));
            taps.push(Tap { kernel: 3, stride: 2, dilation: 1, padding: 0 });
            ch = cfg.stem_channels;
        }
        let mut stages: [Vec<Unit>; 3] = Default::default();
        let mut stage_taps: [Vec<Tap>; 3] = Default::default();
        let padded = cfg.variant == BackboneVariant::PaddedResidual;
        for (si, stage) in stages.iter_mut().enumerate() {
            let out = cfg.channels[si];
            let dil = cfg.dilations[si];
            let name = format!("backbone.conv{}", si + 3);
            if si == 0 {
                stage.push(Unit::Plain(ConvBn::new(store, &format!("{name}.down"), g, ch, out, 3, down, true, rng)));
                taps.push(Tap { kernel: 3, stride: 2, dilation: 1, padding: 0 });
                ch = out;
            }
            let stride = if si == 0 { 1 } else { cfg.stage_strides[si - 1] };
            if padded {
                for bi in 0..cfg.blocks_per_stage {
                    let geom_a = ConvGeom::new(if bi == 0 { stride } else { 1 }, dil, dil);
                    let geom_b = ConvGeom::new(1, dil, dil);
                    let bname = format!("{name}.block{bi}");
                    let shortcut = (ch != out || geom_a.stride != 1).then(|| {
                        ConvBn::new(
                            store,
                            &format!("{bname}.shortcut"),
                            g,
                            ch,
                            out,
                            1,
                            ConvGeom::new(geom_a.stride, 0, 1),
                            false,
                            rng,
                        )
                    });
                    let a = ConvBn::new(store, &format!("{bname}.a"), g, ch, out, 3, geom_a, true, rng);
                    let b = ConvBn::new(store, &format!("{bname}.b"), g, out, out, 3, geom_b, false, rng);
                    stage.push(Unit::Residual(ResBlock { a, b, shortcut }));
                    taps.push(Tap { kernel: 3, stride: geom_a.stride, dilation: dil, padding: dil });
                    taps.push(Tap { kernel: 3, stride: 1, dilation: dil, padding: dil });
                    ch = out;
                }
            } else {
                let geom = ConvGeom::new(stride, 0, dil);
                stage.push(Unit::Plain(ConvBn::new(store, &format!("{name}.conv"), g, ch, out, 3, geom, true, rng)));
                taps.push(Tap { kernel: 3, stride, dilation: dil, padding: 0 });
                ch = out;
            }
            stage_taps[si] = taps.clone();
        }
        let adapters = [0, 1, 2].map(|si| {
            ConvBn::new(
                store,
                &format!("adapter.l{}", si + 3),
                ParamGroup::Adapter,
                cfg.channels[si],
                cfg.adapter_dim,
                1,
                ConvGeom::UNIT,
                false,
                rng,
            )
        });
        Ok(Backbone {
            cfg: cfg.clone(),
            stem,
            stages,
            adapters,
            taps: stage_taps,
        })
    }

    pub fn strides(&self) -> [usize; 3] {
        self.cfg.strides()
    }

    pub fn padding_used(&self) -> bool {
        self.cfg.variant == BackboneVariant::PaddedResidual
    }

    /// Analytic receptive field (pixels) of one cell of `level`, before adapters.
    pub fn receptive_field(&self, level: Level) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for t in &self.taps[level.index()] {
            rf += (t.kernel - 1) * t.dilation * jump;
            jump *= t.stride;
        }
        rf
    }

    /// Spatial side of `level` for a square input of side `input`.
    pub fn output_size(&self, level: Level, input: usize) -> Result<usize> {
        let mut n = input;
        for t in &self.taps[level.index()] {
            n = ConvGeom::new(t.stride, t.padding, t.dilation).out_len(n, t.kernel)?;
        }
        Ok(n)
    }

    /// Maps a pixel patch `(N, C, H, W)` in `[0, 255]` to network input range.
    pub fn prepare(patch: &Tensor) -> Tensor {
        patch.map(|v| (v - 127.5) / 64.0)
    }

    /// Raw stage outputs up to and including `upto`, before adapters.
    pub fn forward_raw(&self, s: &mut Session<'_>, x: Var, upto: Level) -> Result<Vec<Var>> {
        let mut h = x;
        for layer in &self.stem {
            h = layer.forward(s, h)?;
        }
        let mut outs = Vec::with_capacity(3);
        for stage in self.stages.iter().take(upto.index() + 1) {
            for unit in stage {
                h = match unit {
                    Unit::Plain(c) => c.forward(s, h)?,
                    Unit::Residual(r) => r.forward(s, h)?,
                };
            }
            outs.push(h);
        }
        Ok(outs)
    }

    /// Adapted features for each requested level (ascending order).
    pub fn forward(&self, s: &mut Session<'_>, x: Var, levels: &[Level]) -> Result<Vec<Var>> {
        let upto = *levels
            .iter()
            .max()
            .ok_or_else(|| Error::Usage("no pyramid level requested".into()))?;
        let raw = self.forward_raw(s, x, upto)?;
        levels
            .iter()
            .map(|l| self.adapters[l.index()].forward(s, raw[l.index()]))
            .collect()
    }

    /// Inference-mode pyramid of raw stage outputs for a pixel patch.
    pub fn extract_pyramid(&self, store: &ParamStore, patch: &Tensor) -> Result<FeaturePyramid> {
        let mut s = Session::inference(store);
        let x = s.tape.constant(Backbone::prepare(patch));
        let raw = self.forward_raw(&mut s, x, Level::Conv5)?;
        Ok(self.wrap(&s, &raw))
    }

    /// Inference-mode adapted pyramid (every level has `adapter_dim` channels).
    pub fn extract_adapted(&self, store: &ParamStore, patch: &Tensor) -> Result<FeaturePyramid> {
        let mut s = Session::inference(store);
        let x = s.tape.constant(Backbone::prepare(patch));
        let outs = self.forward(&mut s, x, &Level::ALL)?;
        Ok(self.wrap(&s, &outs))
    }

    /// Applies the 1x1 adapters to an existing raw pyramid.
    pub fn adapt_channels(&self, store: &ParamStore, pyramid: &FeaturePyramid) -> Result<FeaturePyramid> {
        let mut s = Session::new(store, Mode::Eval, false);
        let mut levels = Vec::new();
        for (level, map) in &pyramid.levels {
            let x = s.tape.constant(map.values.clone());
            let y = self.adapters[level.index()].forward(&mut s, x)?;
            levels.push((
                *level,
                FeatureMap {
                    values: s.tape.value(y).clone(),
                    stride: map.stride,
                    padding_used: map.padding_used,
                },
            ));
        }
        Ok(FeaturePyramid { levels })
    }

    /// Sets the adapter of `level` to an identity map (requires equal channels).
    pub fn set_identity_adapter(&self, store: &mut ParamStore, level: Level) -> Result<()> {
        let conv = &self.adapters[level.index()].conv;
        if conv.in_ch != conv.out_ch {
            return Err(Error::Config("identity adapter needs C_in == D".into()));
        }
        let w = store.value_mut(conv.weight);
        w.fill(0.0);
        for c in 0..conv.out_ch {
            w.data_mut()[c * conv.in_ch + c] = 1.0;
        }
        Ok(())
    }

    fn wrap(&self, s: &Session<'_>, vars: &[Var]) -> FeaturePyramid {
        let strides = self.strides();
        FeaturePyramid {
            levels: Level::ALL
                .iter()
                .zip(vars)
                .map(|(l, v)| {
                    (
                        *l,
                        FeatureMap {
                            values: s.tape.value(*v).clone(),
                            stride: strides[l.index()],
                            padding_used: self.padding_used(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Builds a backbone with its own parameter store from a seed.
pub fn build_backbone(cfg: &BackboneConfig, seed: u64) -> Result<(Backbone, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bb = Backbone::build(&mut store, cfg, &mut rng)?;
    Ok((bb, store))
}

/// Feature deviation between two crops of one image offset by whole cells.
#[derive(Clone, Debug)]
pub struct ShiftReport {
    /// Max abs deviation per overlapping output column.
    pub columns: Vec<f64>,
    pub max_dev: f64,
    /// Max over the outer quarter of columns on each side.
    pub border_dev: f64,
}

/// Crops `size x size` patches at column 0 and at `cells * stride` from a
/// random image and compares `level` features after undoing the offset.
/// A translation-equivariant network gives zero deviation everywhere.
pub fn shift_deviation(
    bb: &Backbone,
    store: &ParamStore,
    level: Level,
    size: usize,
    cells: usize,
    seed: u64,
) -> Result<ShiftReport> {
    let stride = bb.strides()[level.index()];
    let px = cells * stride;
    let (c, w) = (bb.cfg.in_channels, size + px);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img: Vec<f64> = (0..c * size * w).map(|_| rng.random_range(0.0..255.0)).collect();
    let crop = |x0: usize| {
        let mut out = Vec::with_capacity(c * size * size);
        for ch in 0..c {
            for y in 0..size {
                let row = (ch * size + y) * w + x0;
                out.extend_from_slice(&img[row..row + size]);
            }
        }
        Tensor::from_vec(&[1, c, size, size], out)
    };
    let fa = bb.extract_pyramid(store, &crop(0)?)?;
    let fb = bb.extract_pyramid(store, &crop(px)?)?;
    let (a, b) = (&fa.get(level).expect("level").values, &fb.get(level).expect("level").values);
    let (_, ch, h, ow) = a.dims4()?;
    if ow <= cells {
        return Err(Error::Config(format!("shift of {cells} cells leaves no overlap in {ow} columns")));
    }
    let n = ow - cells;
    let mut columns = vec![0.0f64; n];
    for k in 0..ch {
        for y in 0..h {
            let base = (k * h + y) * ow;
            for (j, col) in columns.iter_mut().enumerate() {
                let d = (a.data()[base + j + cells] - b.data()[base + j]).abs();
                *col = col.max(d);
            }
        }
    }
    let max_dev = columns.iter().cloned().fold(0.0, f64::max);
    let band = (n / 4).max(1);
    let border_dev = columns[..band].iter().chain(&columns[n - band..]).cloned().fold(0.0, f64::max);
    Ok(ShiftReport { columns, max_dev, border_dev })
}

/// Spatially centered crop of `size x size` cells; channels untouched.
pub fn crop_center(feat: &FeatureMap, size: usize) -> Result<FeatureMap> {
    let mut tape = crate::nn::Tape::new();
    let x = tape.constant(feat.values.clone());
    let y = crop_center_op(&mut tape, x, size)?;
    Ok(FeatureMap {
        values: tape.value(y).clone(),
        stride: feat.stride,
        padding_used: feat.padding_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_of_default_configs() {
        assert_eq!(BackboneConfig::full_size().strides(), [8, 8, 8]);
        assert_eq!(BackboneConfig::desk().strides(), [4, 4, 4]);
    }

    #[test]
    fn inconsistent_stride_dilation_rejected() {
        let mut cfg = BackboneConfig::desk();
        cfg.stage_strides = [2, 1];
        assert!(matches!(build_backbone(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = BackboneConfig::desk_padfree();
        cfg.stage_strides = [2, 1];
        cfg.dilations = [1, 2, 1];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = BackboneConfig::desk();
        cfg.adapter_dim = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn receptive_field_arithmetic() {
        let (bb, _) = build_backbone(&BackboneConfig::desk(), 1).unwrap();
        // stem 3 -> 3; down s2 -> 7 (jump 4); conv3 dil 2 2x(2*2*4) -> 39;
        // conv4 dil 4 2x(2*4*4) -> 103; conv5 dil 8 2x(2*8*4) -> 231
        assert_eq!(bb.receptive_field(Level::Conv3), 39);
        assert_eq!(bb.receptive_field(Level::Conv4), 103);
        assert_eq!(bb.receptive_field(Level::Conv5), 231);
        assert_eq!(bb.output_size(Level::Conv5, 63).unwrap(), 15);
        assert_eq!(bb.output_size(Level::Conv3, 127).unwrap(), 31);
        let (pf, _) = build_backbone(&BackboneConfig::desk_padfree(), 1).unwrap();
        assert_eq!(pf.output_size(Level::Conv5, 63).unwrap(), 9);
        assert_eq!(pf.output_size(Level::Conv5, 127).unwrap(), 25);
        let (ps, _) = build_backbone(&BackboneConfig::full_size(), 1).unwrap();
        assert_eq!(ps.output_size(Level::Conv4, 127).unwrap(), 15);
        assert_eq!(ps.output_size(Level::Conv4, 255).unwrap(), 31);
    }

    #[test]
    fn crop_center_rows() {
        let vals = Tensor::from_vec(&[1, 1, 15, 15], (0..225).map(|v| v as f64).collect()).unwrap();
        let f = FeatureMap {
            values: vals,
            stride: 8,
            padding_used: true,
        };
        let c = crop_center(&f, 7).unwrap();
        assert_eq!(c.spatial(), (7, 7));
        assert_eq!(c.values.data()[0], (4 * 15 + 4) as f64);
        assert_eq!(c.values.data()[48], (10 * 15 + 10) as f64);
        assert_eq!(crop_center(&f, 15).unwrap(), f);
        assert!(matches!(crop_center(&f, 8), Err(Error::Shape(_))));
    }
}
