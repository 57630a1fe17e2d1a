use super::conv::{conv2d, ConvGeom};
use super::norm::{batch_norm_eval, batch_norm_train};
use super::ops::relu;
use super::params::{Mode, ParamGroup, ParamId, ParamKind, ParamStore, Session, StatUpdate};
use super::tape::Var;
use crate::error::Result;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv2d {
    /// Fan-in scaled (He) initialization, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let w = Tensor::randn(&[out_ch, in_ch, kernel, kernel], (2.0 / fan_in).sqrt(), rng);
        let weight = store.insert(&format!("{name}.weight"), w, group, ParamKind::Trainable);
        let bias = bias.then(|| {
            store.insert(
                &format!("{name}.bias"),
                Tensor::zeros(&[out_ch]),
                group,
                ParamKind::Trainable,
            )
        });
        Conv2d {
            weight,
            bias,
            geom,
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        conv2d(&mut s.tape, x, w, b, self.geom)
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + if self.bias.is_some() { self.out_ch } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    /// Unit scale, zero offset, identity running statistics.
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, ch: usize) -> Self {
        BatchNorm2d {
            gamma: store.insert(&format!("{name}.gamma"), Tensor::full(&[ch], 1.0), group, ParamKind::Trainable),
            beta: store.insert(&format!("{name}.beta"), Tensor::zeros(&[ch]), group, ParamKind::Trainable),
            running_mean: store.insert(
                &format!("{name}.running_mean"),
                Tensor::zeros(&[ch]),
                group,
                ParamKind::Buffer,
            ),
            running_var: store.insert(
                &format!("{name}.running_var"),
                Tensor::full(&[ch], 1.0),
                group,
                ParamKind::Buffer,
            ),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        match s.mode() {
            Mode::Train => {
                let (y, stats) = batch_norm_train(&mut s.tape, x, gamma, beta)?;
                s.record_stats(StatUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    mean: stats.mean,
                    var: stats.var,
                });
                Ok(y)
            }
            Mode::Eval => {
                let store = s.store();
                let rm = store.value(self.running_mean).data().to_vec();
                let rv = store.value(self.running_var).data().to_vec();
                batch_norm_eval(&mut s.tape, x, gamma, beta, &rm, &rv)
            }
        }
    }
}

/// Convolution, optional normalization, optional rectifier.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: Option<BatchNorm2d>,
    pub relu: bool,
}

impl ConvBn {
    /// Convolution without bias followed by normalization.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        geom: ConvGeom,
        relu: bool,
        rng: &mut R,
    ) -> Self {
        let conv = Conv2d::new(store, &format!("{name}.conv"), group, in_ch, out_ch, kernel, geom, false, rng);
        let bn = Some(BatchNorm2d::new(store, &format!("{name}.bn"), group, out_ch));
        ConvBn { conv, bn, relu }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let mut y = self.conv.forward(s, x)?;
        if let Some(bn) = &self.bn {
            y = bn.forward(s, y)?;
        }
        if self.relu {
            y = relu(&mut s.tape, y);
        }
        Ok(y)
    }
}
