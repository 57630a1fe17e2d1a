//! Cross-correlation operators between template and search features.
//!
//! Three variants are provided:
//!
//! * [`xcorr`]: single-channel response, summed over all channels, plus a
//!   scalar offset `b`.
//! * [`grouped_xcorr`] (the core of the up-channel head): the template is
//!   raised to `out * D` channels and each group of `D` is correlated against
//!   the search map independently.
//! * [`dw_xcorr`]: channel-by-channel correlation, `D` outputs, no mixing.
//!
//! All correlations are "valid" mode: an `hz x wz` template over an `hx x wx`
//! search map yields `(hx - hz + 1) x (wx - wz + 1)`. The `*_reference`
//! functions are explicit-loop versions kept as test oracles.

use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, ConvBn};
use crate::nn::ops::add_scalar;
use crate::nn::{Backward, ConvGeom, GradSink, ParamGroup, ParamStore, Session, Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

struct Geometry {
    n: usize,
    c: usize,
    hz: usize,
    wz: usize,
    hx: usize,
    wx: usize,
    ho: usize,
    wo: usize,
}

/// `groups` is the number of template channels per search channel (1 for
/// depthwise / plain, `out` for the up-channel variant).
fn geometry(z: &Tensor, x: &Tensor, template_groups: Option<usize>) -> Result<(Geometry, usize)> {
    let (nz, cz, hz, wz) = z.dims4()?;
    let (nx, cx, hx, wx) = x.dims4()?;
    if nz != nx {
        return Err(Error::Shape(format!("correlation batch mismatch: {nz} vs {nx}")));
    }
    let groups = match template_groups {
        Some(g) => {
            if cz != g * cx {
                return Err(Error::Shape(format!(
                    "correlation channel mismatch: template {cz}, search {cx}"
                )));
            }
            g
        }
        None => {
            if cz % cx != 0 || cz == 0 {
                return Err(Error::Shape(format!(
                    "correlation channel mismatch: template {cz}, search {cx}"
                )));
            }
            cz / cx
        }
    };
    if hz > hx || wz > wx {
        return Err(Error::Shape(format!(
            "template {hz}x{wz} larger than search {hx}x{wx}"
        )));
    }
    Ok((
        Geometry {
            n: nz,
            c: cx,
            hz,
            wz,
            hx,
            wx,
            ho: hx - hz + 1,
            wo: wx - wz + 1,
        },
        groups,
    ))
}

/// `out += zp ⋆ xp` for one template/search plane pair.
fn corr_plane_acc(zp: &[f64], xp: &[f64], out: &mut [f64], g: &Geometry) {
    for u in 0..g.hz {
        for v in 0..g.wz {
            let zv = zp[u * g.wz + v];
            if zv == 0.0 {
                continue;
            }
            for i in 0..g.ho {
                let xs = (i + u) * g.wx + v;
                let xrow = &xp[xs..xs + g.wo];
                let orow = &mut out[i * g.wo..(i + 1) * g.wo];
                for (o, xv) in orow.iter_mut().zip(xrow) {
                    *o += zv * xv;
                }
            }
        }
    }
}

/// Gradients of one plane correlation w.r.t. template and search planes.
fn corr_plane_backward(
    zp: &[f64],
    xp: &[f64],
    gp: &[f64],
    dz: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
    g: &Geometry,
) {
    if let Some(dz) = dz {
        for u in 0..g.hz {
            for v in 0..g.wz {
                let mut acc = 0.0;
                for i in 0..g.ho {
                    let xs = (i + u) * g.wx + v;
                    let xrow = &xp[xs..xs + g.wo];
                    let grow = &gp[i * g.wo..(i + 1) * g.wo];
                    acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                }
                dz[u * g.wz + v] += acc;
            }
        }
    }
    if let Some(dx) = dx {
        for u in 0..g.hz {
            for v in 0..g.wz {
                let zv = zp[u * g.wz + v];
                for i in 0..g.ho {
                    let xs = (i + u) * g.wx + v;
                    let drow = &mut dx[xs..xs + g.wo];
                    let grow = &gp[i * g.wo..(i + 1) * g.wo];
                    for (d, gv) in drow.iter_mut().zip(grow) {
                        *d += zv * gv;
                    }
                }
            }
        }
    }
}

/// Depthwise correlation: output channel `c` is `z[c] ⋆ x[c]`.
pub fn dw_xcorr(z: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (g, _) = geometry(z, x, Some(1))?;
    let (zs, xs, os) = (g.hz * g.wz, g.hx * g.wx, g.ho * g.wo);
    let mut out = Tensor::zeros(&[g.n, g.c, g.ho, g.wo]);
    for p in 0..g.n * g.c {
        corr_plane_acc(
            &z.data()[p * zs..(p + 1) * zs],
            &x.data()[p * xs..(p + 1) * xs],
            &mut out.data_mut()[p * os..(p + 1) * os],
            &g,
        );
    }
    Ok(out)
}

/// Grouped correlation: template `(N, out*C, hz, wz)` against search
/// `(N, C, hx, wx)`; output channel `o` sums `z[o*C + c] ⋆ x[c]` over `c`.
pub fn grouped_xcorr(z: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (g, groups) = geometry(z, x, None)?;
    let (zs, xs, os) = (g.hz * g.wz, g.hx * g.wx, g.ho * g.wo);
    let mut out = Tensor::zeros(&[g.n, groups, g.ho, g.wo]);
    for n in 0..g.n {
        for o in 0..groups {
            let op = (n * groups + o) * os;
            for c in 0..g.c {
                let zp = (n * groups * g.c + o * g.c + c) * zs;
                let xp = (n * g.c + c) * xs;
                corr_plane_acc(
                    &z.data()[zp..zp + zs],
                    &x.data()[xp..xp + xs],
                    &mut out.data_mut()[op..op + os],
                    &g,
                );
            }
        }
    }
    Ok(out)
}

/// Plain cross-correlation with offset: `f(z, x) = z ⋆ x + b`, one channel.
pub fn xcorr(z: &Tensor, x: &Tensor, b: f64) -> Result<Tensor> {
    let (_, cz, _, _) = z.dims4()?;
    let (_, cx, _, _) = x.dims4()?;
    if cz != cx {
        return Err(Error::Shape(format!(
            "xcorr channel mismatch: template {cz}, search {cx}"
        )));
    }
    let mut out = grouped_xcorr(z, x)?;
    out.data_mut().iter_mut().for_each(|v| *v += b);
    Ok(out)
}

/// Explicit-loop depthwise correlation (test oracle).
pub fn dw_xcorr_reference(z: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (g, _) = geometry(z, x, Some(1))?;
    let mut out = Tensor::zeros(&[g.n, g.c, g.ho, g.wo]);
    for n in 0..g.n {
        for c in 0..g.c {
            for i in 0..g.ho {
                for j in 0..g.wo {
                    let mut acc = 0.0;
                    for u in 0..g.hz {
                        for v in 0..g.wz {
                            acc += z.data()[((n * g.c + c) * g.hz + u) * g.wz + v]
                                * x.data()[((n * g.c + c) * g.hx + i + u) * g.wx + j + v];
                        }
                    }
                    out.data_mut()[((n * g.c + c) * g.ho + i) * g.wo + j] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Explicit-loop grouped correlation (test oracle).
pub fn grouped_xcorr_reference(z: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (g, groups) = geometry(z, x, None)?;
    let mut out = Tensor::zeros(&[g.n, groups, g.ho, g.wo]);
    for n in 0..g.n {
        for o in 0..groups {
            for i in 0..g.ho {
                for j in 0..g.wo {
                    let mut acc = 0.0;
                    for c in 0..g.c {
                        for u in 0..g.hz {
                            for v in 0..g.wz {
                                acc += z.data()[(((n * groups + o) * g.c + c) * g.hz + u) * g.wz + v]
                                    * x.data()[((n * g.c + c) * g.hx + i + u) * g.wx + j + v];
                            }
                        }
                    }
                    out.data_mut()[((n * groups + o) * g.ho + i) * g.wo + j] = acc;
                }
            }
        }
    }
    Ok(out)
}

struct CorrOp {
    z: Var,
    x: Var,
    depthwise: bool,
}

impl Backward for CorrOp {
    fn backward(&self, tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>) {
        let z = tape.value(self.z);
        let x = tape.value(self.x);
        let groups_hint = if self.depthwise { Some(1) } else { None };
        let (g, groups) = geometry(z, x, groups_hint).expect("checked in forward");
        let (zs, xs, os) = (g.hz * g.wz, g.hx * g.wx, g.ho * g.wo);
        // Output plane p = (n, o[, c]) pairs template plane zp with search plane xp.
        let pairs = |n: usize, o: usize, c: usize| -> (usize, usize, usize) {
            if self.depthwise {
                let p = n * g.c + c;
                (p * zs, p * xs, p * os)
            } else {
                (
                    (n * groups * g.c + o * g.c + c) * zs,
                    (n * g.c + c) * xs,
                    (n * groups + o) * os,
                )
            }
        };
        let outer = if self.depthwise { 1 } else { groups };
        if sink.wants(self.z) {
            sink.add_with(self.z, |dz| {
                for n in 0..g.n {
                    for o in 0..outer {
                        for c in 0..g.c {
                            let (zp, xp, op) = pairs(n, o, c);
                            corr_plane_backward(
                                &z.data()[zp..zp + zs],
                                &x.data()[xp..xp + xs],
                                &grad.data()[op..op + os],
                                Some(&mut dz.data_mut()[zp..zp + zs]),
                                None,
                                &g,
                            );
                        }
                    }
                }
            });
        }
        if sink.wants(self.x) {
            sink.add_with(self.x, |dx| {
                for n in 0..g.n {
                    for o in 0..outer {
                        for c in 0..g.c {
                            let (zp, xp, op) = pairs(n, o, c);
                            corr_plane_backward(
                                &z.data()[zp..zp + zs],
                                &x.data()[xp..xp + xs],
                                &grad.data()[op..op + os],
                                None,
                                Some(&mut dx.data_mut()[xp..xp + xs]),
                                &g,
                            );
                        }
                    }
                }
            });
        }
    }
}

/// Records a depthwise correlation on the tape.
pub fn dw_xcorr_op(tape: &mut Tape, z: Var, x: Var) -> Result<Var> {
    let out = dw_xcorr(tape.value(z), tape.value(x))?;
    Ok(tape.push_op(out, &[z, x], CorrOp { z, x, depthwise: true }))
}

/// Records a grouped correlation on the tape.
pub fn grouped_xcorr_op(tape: &mut Tape, z: Var, x: Var) -> Result<Var> {
    let out = grouped_xcorr(tape.value(z), tape.value(x))?;
    Ok(tape.push_op(out, &[z, x], CorrOp { z, x, depthwise: false }))
}

/// Records a plain correlation plus learnable scalar offset `b` (shape `[1]`).
pub fn xcorr_op(tape: &mut Tape, z: Var, x: Var, b: Var) -> Result<Var> {
    let (_, cz, _, _) = tape.value(z).dims4()?;
    let (_, cx, _, _) = tape.value(x).dims4()?;
    if cz != cx {
        return Err(Error::Shape(format!(
            "xcorr channel mismatch: template {cz}, search {cx}"
        )));
    }
    let r = grouped_xcorr_op(tape, z, x)?;
    add_scalar(tape, r, b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrVariant {
    XCorr,
    UpXCorr,
    DwXCorr,
}

impl std::str::FromStr for CorrVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "xcorr" => Ok(CorrVariant::XCorr),
            "up" | "up_xcorr" => Ok(CorrVariant::UpXCorr),
            "dw" | "dw_xcorr" => Ok(CorrVariant::DwXCorr),
            other => Err(Error::Config(format!("unknown correlation variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for CorrVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorrVariant::XCorr => "xcorr",
            CorrVariant::UpXCorr => "up_xcorr",
            CorrVariant::DwXCorr => "dw_xcorr",
        })
    }
}

/// Head configuration for one correlation variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrConfig {
    pub variant: CorrVariant,
    /// Input channels on both branches.
    pub d: usize,
    /// Offset `b` of the plain variant.
    pub bias: f64,
    /// Kernel of the branch adjust convolutions.
    pub adjust_kernel: usize,
    /// Kernel of the up-channel template raise convolution.
    pub raise_kernel: usize,
    /// Kernel of the depthwise fuse (conv-bn-relu) block.
    pub fuse_kernel: usize,
    /// Kernel of the final classification / regression convolutions.
    pub output_kernel: usize,
}

impl CorrConfig {
    pub fn new(variant: CorrVariant, d: usize) -> Self {
        CorrConfig {
            variant,
            d,
            bias: 0.0,
            adjust_kernel: 3,
            raise_kernel: 3,
            fuse_kernel: 1,
            output_kernel: 1,
        }
    }

    /// Channels the up-channel head raises the template to, per output map.
    pub fn up_out_channels(&self, k: usize) -> (usize, usize) {
        (2 * k, 4 * k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("correlation D must be positive".into()));
        }
        for (name, v) in [
            ("adjust_kernel", self.adjust_kernel),
            ("raise_kernel", self.raise_kernel),
            ("fuse_kernel", self.fuse_kernel),
            ("output_kernel", self.output_kernel),
        ] {
            if v == 0 || v % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd and positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Trainable-parameter breakdown of one head (both classification and
/// regression outputs). Convolution weights and biases are counted apart so
/// that each weight group has a clean closed form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub adjust_conv: usize,
    pub raise: usize,
    pub fuse: usize,
    pub output: usize,
    pub norm: usize,
    pub bias: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.adjust_conv + self.raise + self.fuse + self.output + self.norm + self.bias
    }
}

/// Closed-form parameter count of a head with `k` anchors.
pub fn count_params(cfg: &CorrConfig, k: usize) -> ParamCount {
    let d = cfg.d;
    let sq = |v: usize| v * v;
    match cfg.variant {
        CorrVariant::XCorr => ParamCount {
            bias: 1,
            ..Default::default()
        },
        CorrVariant::DwXCorr => ParamCount {
            // non-shared template / search adjust conv-bn
            adjust_conv: 2 * d * d * sq(cfg.adjust_kernel),
            // separate conv-bn-relu fuse blocks for cls and reg
            fuse: 2 * d * d * sq(cfg.fuse_kernel),
            output: d * (2 * k) * sq(cfg.output_kernel) + d * (4 * k) * sq(cfg.output_kernel),
            norm: 2 * (2 * d) + 2 * (2 * d),
            bias: 2 * k + 4 * k,
            ..Default::default()
        },
        CorrVariant::UpXCorr => {
            let (oc, or) = cfg.up_out_channels(k);
            ParamCount {
                // search-side adjust convs, one per output map
                adjust_conv: 2 * d * d * sq(cfg.adjust_kernel),
                raise: sq(cfg.raise_kernel) * d * (oc * d) + sq(cfg.raise_kernel) * d * (or * d),
                // 1x1 regression adjust after correlation
                output: or * or,
                bias: oc * d + or * d + 2 * d + or,
                ..Default::default()
            }
        }
    }
}

/// Multiply-accumulate count of one head forward at feature sizes
/// `template` and `search` (square), batch 1.
pub fn count_macs(cfg: &CorrConfig, k: usize, template: usize, search: usize) -> Result<u64> {
    let d = cfg.d as u64;
    let conv = |cin: u64, cout: u64, kern: usize, size: usize| -> Result<(u64, usize)> {
        let out = ConvGeom::UNIT.out_len(size, kern)?;
        Ok((cin * cout * (kern * kern) as u64 * (out * out) as u64, out))
    };
    let corr = |channels: u64, zs: usize, xs: usize| -> Result<(u64, usize)> {
        if zs > xs {
            return Err(Error::Shape(format!("template {zs} larger than search {xs}")));
        }
        let out = xs - zs + 1;
        Ok((channels * (zs * zs) as u64 * (out * out) as u64, out))
    };
    Ok(match cfg.variant {
        CorrVariant::XCorr => corr(d, template, search)?.0,
        CorrVariant::DwXCorr => {
            let (a, zs) = conv(d, d, cfg.adjust_kernel, template)?;
            let (b, xs) = conv(d, d, cfg.adjust_kernel, search)?;
            let (c, r) = corr(d, zs, xs)?;
            let (f, r2) = conv(d, d, cfg.fuse_kernel, r)?;
            let (o1, _) = conv(d, 2 * k as u64, cfg.output_kernel, r2)?;
            let (o2, _) = conv(d, 4 * k as u64, cfg.output_kernel, r2)?;
            a + b + c + 2 * f + o1 + o2
        }
        CorrVariant::UpXCorr => {
            let (oc, or) = cfg.up_out_channels(k);
            let (r1, zs) = conv(d, oc as u64 * d, cfg.raise_kernel, template)?;
            let (r2, _) = conv(d, or as u64 * d, cfg.raise_kernel, template)?;
            let (a, xs) = conv(d, d, cfg.adjust_kernel, search)?;
            let (c1, r) = corr(d * oc as u64, zs, xs)?;
            let (c2, _) = corr(d * or as u64, zs, xs)?;
            let (o, _) = conv(or as u64, or as u64, 1, r)?;
            r1 + r2 + 2 * a + c1 + c2 + o
        }
    })
}

/// Trainable parameters of the five-layer padding-free AlexNet extractor
/// used by the up-channel tracker (conv weights, biases-free, plus
/// normalization scale/offset).
pub fn reference_extractor_params() -> usize {
    // (in, out, kernel)
    let layers = [(3, 96, 11), (96, 256, 5), (256, 384, 3), (384, 384, 3), (384, 256, 3)];
    layers
        .iter()
        .map(|&(i, o, kk)| i * o * kk * kk + 2 * o)
        .sum()
}

/// Depthwise head: non-shared template/search adjust conv-bn, channelwise
/// correlation, then per-output conv-bn-relu fuse and final convolution.
#[derive(Clone, Debug)]
pub struct DwHead {
    pub adjust_z: ConvBn,
    pub adjust_x: ConvBn,
    pub fuse_cls: ConvBn,
    pub fuse_reg: ConvBn,
    pub out_cls: Conv2d,
    pub out_reg: Conv2d,
}

/// Up-channel head: template raise convolutions and search adjust
/// convolutions per output, grouped correlation, regression adjust.
#[derive(Clone, Debug)]
pub struct UpHead {
    pub raise_cls: Conv2d,
    pub raise_reg: Conv2d,
    pub adjust_cls: Conv2d,
    pub adjust_reg: Conv2d,
    pub reg_adjust: Conv2d,
}

#[derive(Clone, Debug)]
pub enum CorrHead {
    Dw(DwHead),
    Up(UpHead),
}

impl CorrHead {
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &CorrConfig,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let g = ParamGroup::Head;
        let unit = ConvGeom::UNIT;
        match cfg.variant {
            CorrVariant::DwXCorr => Ok(CorrHead::Dw(DwHead {
                adjust_z: ConvBn::new(store, &format!("{prefix}.adjust_z"), g, d, d, cfg.adjust_kernel, unit, false, rng),
                adjust_x: ConvBn::new(store, &format!("{prefix}.adjust_x"), g, d, d, cfg.adjust_kernel, unit, false, rng),
                fuse_cls: ConvBn::new(store, &format!("{prefix}.fuse_cls"), g, d, d, cfg.fuse_kernel, unit, true, rng),
                fuse_reg: ConvBn::new(store, &format!("{prefix}.fuse_reg"), g, d, d, cfg.fuse_kernel, unit, true, rng),
                out_cls: small_init(Conv2d::new(store, &format!("{prefix}.out_cls"), g, d, 2 * k, cfg.output_kernel, unit, true, rng), store),
                out_reg: small_init(Conv2d::new(store, &format!("{prefix}.out_reg"), g, d, 4 * k, cfg.output_kernel, unit, true, rng), store),
            })),
            CorrVariant::UpXCorr => {
                let (oc, or) = cfg.up_out_channels(k);
                Ok(CorrHead::Up(UpHead {
                    raise_cls: Conv2d::new(store, &format!("{prefix}.raise_cls"), g, d, oc * d, cfg.raise_kernel, unit, true, rng),
                    raise_reg: Conv2d::new(store, &format!("{prefix}.raise_reg"), g, d, or * d, cfg.raise_kernel, unit, true, rng),
                    adjust_cls: Conv2d::new(store, &format!("{prefix}.adjust_cls"), g, d, d, cfg.adjust_kernel, unit, true, rng),
                    adjust_reg: Conv2d::new(store, &format!("{prefix}.adjust_reg"), g, d, d, cfg.adjust_kernel, unit, true, rng),
                    reg_adjust: small_init(Conv2d::new(store, &format!("{prefix}.reg_adjust"), g, or, or, 1, unit, true, rng), store),
                }))
            }
            CorrVariant::XCorr => Err(Error::Config(
                "plain xcorr yields one response map and cannot drive an anchor head".into(),
            )),
        }
    }

    /// `(cls, reg)` maps of shape `(N, 2k, H, W)` and `(N, 4k, H, W)`.
    pub fn forward(&self, s: &mut Session<'_>, z: Var, x: Var) -> Result<(Var, Var)> {
        match self {
            CorrHead::Dw(h) => {
                let zf = h.adjust_z.forward(s, z)?;
                let xf = h.adjust_x.forward(s, x)?;
                let corr = dw_xcorr_op(&mut s.tape, zf, xf)?;
                let c = h.fuse_cls.forward(s, corr)?;
                let cls = h.out_cls.forward(s, c)?;
                let r = h.fuse_reg.forward(s, corr)?;
                let reg = h.out_reg.forward(s, r)?;
                Ok((cls, reg))
            }
            CorrHead::Up(h) => {
                let zc = h.raise_cls.forward(s, z)?;
                let xc = h.adjust_cls.forward(s, x)?;
                let cls = grouped_xcorr_op(&mut s.tape, zc, xc)?;
                let zr = h.raise_reg.forward(s, z)?;
                let xr = h.adjust_reg.forward(s, x)?;
                let reg = grouped_xcorr_op(&mut s.tape, zr, xr)?;
                let reg = h.reg_adjust.forward(s, reg)?;
                Ok((cls, reg))
            }
        }
    }
}

/// Output convolutions start near zero so initial logits and deltas are small.
fn small_init(conv: Conv2d, store: &mut ParamStore) -> Conv2d {
    store.value_mut(conv.weight).scale(0.1);
    conv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn xcorr_examples() {
        let x = t(&[1, 2, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let z = t(&[1, 2, 1, 1], &[1., 2.]);
        let r = xcorr(&z, &x, 0.0).unwrap();
        assert_eq!(r.shape(), &[1, 1, 2, 2]);
        assert_eq!(r.data(), &[11., 14., 17., 20.]);

        let zero = Tensor::zeros(&[1, 2, 1, 1]);
        assert!(xcorr(&zero, &x, 0.7).unwrap().data().iter().all(|&v| v == 0.7));

        assert!(matches!(xcorr(&t(&[1, 1, 1, 1], &[1.]), &x, 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn delta_template_crops_search() {
        let x = Tensor::from_vec(&[1, 1, 4, 5], (0..20).map(|v| v as f64).collect()).unwrap();
        let mut z = Tensor::zeros(&[1, 1, 2, 3]);
        z.data_mut()[0] = 1.0;
        let r = xcorr(&z, &x, 0.0).unwrap();
        assert_eq!(r.shape(), &[1, 1, 3, 3]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r.data()[i * 3 + j], x.data()[i * 5 + j]);
            }
        }
    }

    #[test]
    fn dw_xcorr_example() {
        let x = t(&[1, 2, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let z = t(&[1, 2, 1, 1], &[1., 2.]);
        let r = dw_xcorr(&z, &x).unwrap();
        assert_eq!(r.data(), &[1., 2., 3., 4., 10., 12., 14., 16.]);
        assert!(matches!(dw_xcorr(&t(&[1, 1, 1, 1], &[1.]), &x), Err(Error::Shape(_))));
    }

    #[test]
    fn up_with_identity_raise_equals_xcorr() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let z = Tensor::randn(&[1, 3, 3, 3], 1.0, &mut rng);
        let x = Tensor::randn(&[1, 3, 7, 6], 1.0, &mut rng);
        // out_channels = 1 with an identity raise leaves z unchanged
        let up = grouped_xcorr(&z, &x).unwrap();
        assert!(up.max_abs_diff(&xcorr(&z, &x, 0.0).unwrap()) < 1e-12);
    }

    #[test]
    fn hand_counted_unit_heads() {
        let mut cfg = CorrConfig::new(CorrVariant::DwXCorr, 1);
        cfg.adjust_kernel = 1;
        cfg.raise_kernel = 1;
        let dw = count_params(&cfg, 1);
        // adjust 1+1, fuse 1+1, output 2+4, norm 4 BN layers x 2, bias 2+4
        assert_eq!(
            dw,
            ParamCount {
                adjust_conv: 2,
                raise: 0,
                fuse: 2,
                output: 6,
                norm: 8,
                bias: 6
            }
        );
        assert_eq!(dw.total(), 24);
        cfg.variant = CorrVariant::UpXCorr;
        let up = count_params(&cfg, 1);
        // raise 2+4, adjust 1+1, reg adjust 4x4, biases 2+4 (raise) + 2 (adjust) + 4
        assert_eq!(up.total(), 6 + 2 + 16 + 12);
    }
}
