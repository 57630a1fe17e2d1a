//! 2-D convolution (cross-correlation convention) via im2col + GEMM.

use super::gemm::{gemm, Layout};
use super::tape::{Backward, GradSink, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Square-kernel convolution geometry shared by both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const UNIT: ConvGeom = ConvGeom {
        stride: 1,
        padding: 0,
        dilation: 1,
    };

    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeom {
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent along one axis, or a shape error when the kernel's
    /// dilated footprint does not fit.
    pub fn out_len(&self, input: usize, kernel: usize) -> Result<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(Error::Shape(format!(
                "input extent {input} (padding {}) smaller than kernel footprint {span}",
                self.padding
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }
}

struct Dims {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

impl Dims {
    fn is_pointwise(&self, g: &ConvGeom) -> bool {
        self.k == 1 && g.stride == 1 && g.padding == 0
    }
}

fn im2col(x: &[f64], d: &Dims, g: &ConvGeom, col: &mut [f64]) {
    let cols = d.ho * d.wo;
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = ((c * d.k + ki) * d.k + kj) * cols;
                let dst = &mut col[row..row + cols];
                for oi in 0..d.ho {
                    let ii = (oi * g.stride + ki * g.dilation) as isize - g.padding as isize;
                    let out_row = &mut dst[oi * d.wo..(oi + 1) * d.wo];
                    if ii < 0 || ii >= d.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[ii as usize * d.w..(ii as usize + 1) * d.w];
                    for (oj, v) in out_row.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj * g.dilation) as isize - g.padding as isize;
                        *v = if jj < 0 || jj >= d.w as isize {
                            0.0
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], d: &Dims, g: &ConvGeom, x: &mut [f64]) {
    let cols = d.ho * d.wo;
    for c in 0..d.c {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = ((c * d.k + ki) * d.k + kj) * cols;
                let src = &col[row..row + cols];
                for oi in 0..d.ho {
                    let ii = (oi * g.stride + ki * g.dilation) as isize - g.padding as isize;
                    if ii < 0 || ii >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * d.w..(ii as usize + 1) * d.w];
                    for oj in 0..d.wo {
                        let jj = (oj * g.stride + kj * g.dilation) as isize - g.padding as isize;
                        if jj >= 0 && jj < d.w as isize {
                            dst[jj as usize] += src[oi * d.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

fn check(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: &ConvGeom) -> Result<(usize, usize, Dims)> {
    let (n, c, h, wd) = x.dims4()?;
    let (o, ci, kh, kw) = w.dims4()?;
    if ci != c {
        return Err(Error::Shape(format!(
            "conv2d: input has {c} channels, weight expects {ci}"
        )));
    }
    if kh != kw {
        return Err(Error::Shape("conv2d: only square kernels are supported".into()));
    }
    if let Some(b) = b {
        if b.numel() != o {
            return Err(Error::Shape(format!(
                "conv2d: bias has {} entries for {o} outputs",
                b.numel()
            )));
        }
    }
    if g.stride == 0 || g.dilation == 0 {
        return Err(Error::Shape("conv2d: stride and dilation must be positive".into()));
    }
    let ho = g.out_len(h, kh)?;
    let wo = g.out_len(wd, kw)?;
    Ok((
        n,
        o,
        Dims {
            c,
            h,
            w: wd,
            k: kh,
            ho,
            wo,
        },
    ))
}

/// Plain (tape-free) forward convolution: `x (N,C,H,W)`, `w (O,C,k,k)`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: &ConvGeom) -> Result<Tensor> {
    let (n, o, d) = check(x, w, b, g)?;
    let cols = d.ho * d.wo;
    let ckk = d.c * d.k * d.k;
    let mut out = Tensor::zeros(&[n, o, d.ho, d.wo]);
    let pointwise = d.is_pointwise(g);
    let mut col = if pointwise { Vec::new() } else { vec![0.0; ckk * cols] };
    for i in 0..n {
        let xi = x.batch_item(i);
        let src: &[f64] = if pointwise {
            xi
        } else {
            im2col(xi, &d, g, &mut col);
            &col
        };
        let dst = &mut out.data_mut()[i * o * cols..(i + 1) * o * cols];
        gemm(o, ckk, cols, 1.0, w.data(), Layout::N, src, Layout::N, 0.0, dst);
        if let Some(b) = b {
            for (oc, chunk) in dst.chunks_mut(cols).enumerate() {
                let bv = b.data()[oc];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

struct Conv2dOp {
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: ConvGeom,
}

impl Backward for Conv2dOp {
    fn backward(&self, tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>) {
        let x = tape.value(self.x);
        let w = tape.value(self.w);
        let (n, o, d) = check(x, w, None, &self.geom).expect("shapes checked in forward");
        let cols = d.ho * d.wo;
        let ckk = d.c * d.k * d.k;
        let pointwise = d.is_pointwise(&self.geom);
        let want_x = sink.wants(self.x);
        let want_w = sink.wants(self.w);

        if let Some(b) = self.b {
            sink.add_with(b, |gb| {
                for i in 0..n {
                    let gi = grad.batch_item(i);
                    for (oc, chunk) in gi.chunks(cols).enumerate() {
                        gb.data_mut()[oc] += chunk.iter().sum::<f64>();
                    }
                }
            });
        }

        if want_w {
            let mut col = if pointwise { Vec::new() } else { vec![0.0; ckk * cols] };
            sink.add_with(self.w, |gw| {
                for i in 0..n {
                    let xi = x.batch_item(i);
                    let src: &[f64] = if pointwise {
                        xi
                    } else {
                        im2col(xi, &d, &self.geom, &mut col);
                        &col
                    };
                    gemm(
                        o,
                        cols,
                        ckk,
                        1.0,
                        grad.batch_item(i),
                        Layout::N,
                        src,
                        Layout::T,
                        1.0,
                        gw.data_mut(),
                    );
                }
            });
        }

        if want_x {
            let per_x = d.c * d.h * d.w;
            let mut dcol = vec![0.0; ckk * cols];
            sink.add_with(self.x, |gx| {
                for i in 0..n {
                    let dst = &mut gx.data_mut()[i * per_x..(i + 1) * per_x];
                    if pointwise {
                        gemm(ckk, o, cols, 1.0, w.data(), Layout::T, grad.batch_item(i), Layout::N, 1.0, dst);
                    } else {
                        gemm(ckk, o, cols, 1.0, w.data(), Layout::T, grad.batch_item(i), Layout::N, 0.0, &mut dcol);
                        col2im(&dcol, &d, &self.geom, dst);
                    }
                }
            });
        }
    }
}

/// Records a convolution on the tape.
pub fn conv2d(tape: &mut Tape, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
    let out = conv2d_forward(tape.value(x), tape.value(w), b.map(|b| tape.value(b)), &geom)?;
    let mut inputs = vec![x, w];
    inputs.extend(b);
    Ok(tape.push_op(out, &inputs, Conv2dOp { x, w, b, geom }))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as the oracle.
    fn conv_loops(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: &ConvGeom) -> Tensor {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (o, _, k, _) = w.dims4().unwrap();
        let ho = g.out_len(h, k).unwrap();
        let wo = g.out_len(wd, k).unwrap();
        let mut out = Tensor::zeros(&[n, o, ho, wo]);
        for i in 0..n {
            for oc in 0..o {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b.data()[oc]);
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ii = (oi * g.stride + ki * g.dilation) as isize - g.padding as isize;
                                    let jj = (oj * g.stride + kj * g.dilation) as isize - g.padding as isize;
                                    if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((i * c + ci) * h + ii as usize) * wd + jj as usize]
                                        * w.data()[((oc * c + ci) * k + ki) * k + kj];
                                }
                            }
                        }
                        out.data_mut()[((i * o + oc) * ho + oi) * wo + oj] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_loop_oracle_across_geometries() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(&[2, 3, 9, 8], 1.0, &mut rng);
        for (k, g) in [
            (3, ConvGeom::new(1, 1, 1)),
            (3, ConvGeom::new(2, 0, 1)),
            (3, ConvGeom::new(1, 2, 2)),
            (1, ConvGeom::UNIT),
            (2, ConvGeom::new(2, 1, 1)),
        ] {
            let w = Tensor::randn(&[4, 3, k, k], 1.0, &mut rng);
            let b = Tensor::randn(&[4], 1.0, &mut rng);
            let fast = conv2d_forward(&x, &w, Some(&b), &g).unwrap();
            let slow = conv_loops(&x, &w, Some(&b), &g);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "geom {g:?}");
        }
    }

    #[test]
    fn too_small_input_is_a_shape_error() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &w, None, &ConvGeom::UNIT),
            Err(Error::Shape(_))
        ));
    }
}
