//! Per-channel batch normalization over `(N, H, W)`.

use super::tape::{Backward, GradSink, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// Batch statistics observed by a training-mode normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as accumulated into running statistics.
    pub var: Vec<f64>,
}

struct BatchNormOp {
    x: Var,
    gamma: Var,
    beta: Var,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    /// Statistics are per-batch (true) or frozen constants (false).
    batch: bool,
}

fn check(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::Shape(format!(
            "batch_norm: {c} channels but affine params of size {}/{}",
            gamma.numel(),
            beta.numel()
        )));
    }
    Ok((n, c, h * w))
}

fn normalize(x: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f64], inv_std: &[f64]) -> Tensor {
    let (n, c, hw) = check(x, gamma, beta).expect("checked");
    let mut out = x.clone();
    let data = out.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let scale = gamma.data()[ch] * inv_std[ch];
            let shift = beta.data()[ch] - mean[ch] * scale;
            let base = (i * c + ch) * hw;
            data[base..base + hw].iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }
    out
}

/// Training-mode normalization using statistics of the current batch.
pub fn batch_norm_train(tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
    let xv = tape.value(x);
    let (n, c, hw) = check(xv, tape.value(gamma), tape.value(beta))?;
    let m = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            let base = (i * c + ch) * hw;
            s += xv.data()[base..base + hw].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut ss = 0.0;
        for i in 0..n {
            let base = (i * c + ch) * hw;
            ss += xv.data()[base..base + hw].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = ss / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let out = normalize(xv, tape.value(gamma), tape.value(beta), &mean, &inv_std);
    let unbiased = if m > 1.0 {
        var.iter().map(|v| v * m / (m - 1.0)).collect()
    } else {
        var.clone()
    };
    let stats = BatchStats {
        mean: mean.clone(),
        var: unbiased,
    };
    let op = BatchNormOp {
        x,
        gamma,
        beta,
        mean,
        inv_std,
        batch: true,
    };
    Ok((tape.push_op(out, &[x, gamma, beta], op), stats))
}

/// Inference-mode normalization with frozen running statistics.
pub fn batch_norm_eval(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &[f64],
    running_var: &[f64],
) -> Result<Var> {
    let xv = tape.value(x);
    let (_, c, _) = check(xv, tape.value(gamma), tape.value(beta))?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape("batch_norm: running statistics size mismatch".into()));
    }
    let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let out = normalize(xv, tape.value(gamma), tape.value(beta), running_mean, &inv_std);
    let op = BatchNormOp {
        x,
        gamma,
        beta,
        mean: running_mean.to_vec(),
        inv_std,
        batch: false,
    };
    Ok(tape.push_op(out, &[x, gamma, beta], op))
}

impl Backward for BatchNormOp {
    fn backward(&self, tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>) {
        let x = tape.value(self.x);
        let gamma = tape.value(self.gamma);
        let (n, c, hw) = x.dims4().map(|(n, c, h, w)| (n, c, h * w)).expect("checked");
        let m = (n * hw) as f64;
        // Per-channel sums of dy and dy * xhat.
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                let (mu, is) = (self.mean[ch], self.inv_std[ch]);
                for (xv, gv) in x.data()[base..base + hw].iter().zip(&grad.data()[base..base + hw]) {
                    sum_dy[ch] += gv;
                    sum_dy_xhat[ch] += gv * (xv - mu) * is;
                }
            }
        }
        sink.add_with(self.gamma, |g| {
            g.data_mut().iter_mut().zip(&sum_dy_xhat).for_each(|(a, b)| *a += b)
        });
        sink.add_with(self.beta, |g| {
            g.data_mut().iter_mut().zip(&sum_dy).for_each(|(a, b)| *a += b)
        });
        sink.add_with(self.x, |gx| {
            let out = gx.data_mut();
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * hw;
                    let (mu, is, gm) = (self.mean[ch], self.inv_std[ch], gamma.data()[ch]);
                    let k = gm * is;
                    if self.batch {
                        let mdy = sum_dy[ch] / m;
                        let mdyx = sum_dy_xhat[ch] / m;
                        for j in base..base + hw {
                            let xhat = (x.data()[j] - mu) * is;
                            out[j] += k * (grad.data()[j] - mdy - xhat * mdyx);
                        }
                    } else {
                        for j in base..base + hw {
                            out[j] += k * grad.data()[j];
                        }
                    }
                }
            }
        });
    }
}
