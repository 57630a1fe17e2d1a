//! Elementwise, cropping and combination ops.

use super::tape::{Backward, GradSink, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct ReluOp {
    x: Var,
}

impl Backward for ReluOp {
    fn backward(&self, tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>) {
        let x = tape.value(self.x);
        sink.add_with(self.x, |g| {
            for ((a, &xv), &gv) in g.data_mut().iter_mut().zip(x.data()).zip(grad.data()) {
                if xv > 0.0 {
                    *a += gv;
                }
            }
        });
    }
}

pub fn relu(tape: &mut Tape, x: Var) -> Var {
    let out = tape.value(x).map(|v| v.max(0.0));
    tape.push_op(out, &[x], ReluOp { x })
}

struct LinCombOp {
    terms: Vec<(Var, f64)>,
}

impl Backward for LinCombOp {
    fn backward(&self, _tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>) {
        for &(v, c) in &self.terms {
            sink.add_with(v, |g| g.axpy(c, grad));
        }
    }
}

/// `Σ c_i · v_i` over same-shaped inputs.
pub fn lincomb(tape: &mut Tape, terms: &[(Var, f64)]) -> Result<Var> {
    let (first, _) = *terms
        .first()
        .ok_or_else(|| Error::Usage("lincomb needs at least one term".into()))?;
    let shape = tape.value(first).shape().to_vec();
    let mut out = Tensor::zeros(&shape);
    for &(v, c) in terms {
        let t = tape.value(v);
        if t.shape() != shape.as_slice() {
            return Err(Error::Shape(format!("lincomb: {:?} vs {shape:?}", t.shape())));
        }
        out.axpy(c, t);
    }
    let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
    Ok(tape.push_op(
        out,
        &inputs,
        LinCombOp {
            terms: terms.to_vec(),
        },
    ))
}

pub fn add(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    lincomb(tape, &[(a, 1.0), (b, 1.0)])
}

struct AddScalarOp {
    x: Var,
    b: Var,
}

impl Backward for AddScalarOp {
    fn backward(&self, _tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>) {
        sink.add_with(self.x, |g| g.add_assign(grad));
        let total = grad.sum();
        sink.add_with(self.b, |g| g.data_mut()[0] += total);
    }
}

/// Adds a learnable scalar (shape `[1]`) to every entry of `x`.
pub fn add_scalar(tape: &mut Tape, x: Var, b: Var) -> Result<Var> {
    if tape.value(b).numel() != 1 {
        return Err(Error::Shape("add_scalar: bias must hold one value".into()));
    }
    let bv = tape.value(b).item();
    let out = tape.value(x).map(|v| v + bv);
    Ok(tape.push_op(out, &[x, b], AddScalarOp { x, b }))
}

/// Offset of a centered crop of `size` from an extent of `extent`.
pub fn center_offset(extent: usize, size: usize) -> Result<usize> {
    if size == 0 || size > extent {
        return Err(Error::Shape(format!(
            "crop of {size} cells does not fit in extent {extent}"
        )));
    }
    if (extent - size) % 2 != 0 {
        return Err(Error::Shape(format!(
            "crop of {size} from {extent} cannot be centered (parity mismatch)"
        )));
    }
    Ok((extent - size) / 2)
}

/// Spatial crop `x[:, :, top..top+size, top..top+size]` of a `(N,C,H,W)` tensor.
pub fn crop_spatial(x: &Tensor, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if top + size_h > h || left + size_w > w {
        return Err(Error::Shape("crop window exceeds input".into()));
    }
    let mut out = Tensor::zeros(&[n, c, size_h, size_w]);
    let dst = out.data_mut();
    for plane in 0..n * c {
        for i in 0..size_h {
            let src = (plane * h + top + i) * w + left;
            let d = (plane * size_h + i) * size_w;
            dst[d..d + size_w].copy_from_slice(&x.data()[src..src + size_w]);
        }
    }
    Ok(out)
}

struct CropOp {
    x: Var,
    top: usize,
    left: usize,
}

impl Backward for CropOp {
    fn backward(&self, tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>) {
        let (n, c, h, w) = tape.value(self.x).dims4().expect("checked");
        let (_, _, sh, sw) = grad.dims4().expect("checked");
        sink.add_with(self.x, |g| {
            let dst = g.data_mut();
            for plane in 0..n * c {
                for i in 0..sh {
                    let d = (plane * h + self.top + i) * w + self.left;
                    let s = (plane * sh + i) * sw;
                    for j in 0..sw {
                        dst[d + j] += grad.data()[s + j];
                    }
                }
            }
        });
    }
}

/// Centered spatial crop; rejects crops that cannot be exactly centered.
pub fn crop_center(tape: &mut Tape, x: Var, size: usize) -> Result<Var> {
    let (_, _, h, w) = tape.value(x).dims4()?;
    let top = center_offset(h, size)?;
    let left = center_offset(w, size)?;
    let out = crop_spatial(tape.value(x), top, left, size, size)?;
    Ok(tape.push_op(out, &[x], CropOp { x, top, left }))
}

/// Numerically stable softmax of a small vector.
pub fn softmax(raw: &[f64]) -> Vec<f64> {
    let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

struct WeightedFusionOp {
    levels: Vec<Var>,
    raw: Var,
    weights: Vec<f64>,
}

impl Backward for WeightedFusionOp {
    fn backward(&self, tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>) {
        for (&v, &w) in self.levels.iter().zip(&self.weights) {
            sink.add_with(v, |g| g.axpy(w, grad));
        }
        if sink.wants(self.raw) {
            let dw: Vec<f64> = self.levels.iter().map(|&v| tape.value(v).dot(grad)).collect();
            let inner: f64 = self.weights.iter().zip(&dw).map(|(w, d)| w * d).sum();
            sink.add_with(self.raw, |g| {
                for ((a, &w), &d) in g.data_mut().iter_mut().zip(&self.weights).zip(&dw) {
                    *a += w * (d - inner);
                }
            });
        }
    }
}

/// `Σ_l softmax(raw)_l · level_l` over same-shaped level maps.
pub fn weighted_fusion(tape: &mut Tape, levels: &[Var], raw: Var) -> Result<Var> {
    if levels.is_empty() {
        return Err(Error::Usage("fusion needs at least one level".into()));
    }
    if tape.value(raw).numel() != levels.len() {
        return Err(Error::Shape(format!(
            "fusion: {} weights for {} levels",
            tape.value(raw).numel(),
            levels.len()
        )));
    }
    let weights = softmax(tape.value(raw).data());
    let shape = tape.value(levels[0]).shape().to_vec();
    let mut out = Tensor::zeros(&shape);
    for (&v, &w) in levels.iter().zip(&weights) {
        let t = tape.value(v);
        if t.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "fusion: level shapes differ, {:?} vs {shape:?}",
                t.shape()
            )));
        }
        out.axpy(w, t);
    }
    let mut inputs = levels.to_vec();
    inputs.push(raw);
    Ok(tape.push_op(
        out,
        &inputs,
        WeightedFusionOp {
            levels: levels.to_vec(),
            raw,
            weights,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_offset_rules() {
        assert_eq!(center_offset(15, 7).unwrap(), 4);
        assert_eq!(center_offset(15, 15).unwrap(), 0);
        assert!(center_offset(15, 8).is_err());
        assert!(center_offset(5, 7).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[101.0, 102.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
