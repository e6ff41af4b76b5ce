use crate::error::{Error, Result};

use super::Tensor;

/// Classic SGD with momentum and decoupled-from-nothing L2 weight decay
/// (decay is added to the gradient before the momentum update).
#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument { what: "learning rate", detail: format!("{lr} must be > 0") });
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument { what: "momentum", detail: format!("{momentum} must be in [0,1)") });
        }
        if weight_decay < 0.0 {
            return Err(Error::InvalidArgument { what: "weight decay", detail: format!("{weight_decay} must be >= 0") });
        }
        Ok(SgdConfig { lr, momentum, weight_decay })
    }
}

pub struct Sgd {
    cfg: SgdConfig,
    params: Vec<Tensor>,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(params: Vec<Tensor>, cfg: SgdConfig) -> Self {
        let velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Sgd { cfg, params, velocity }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Multiply every parameter gradient in place; used to average the
    /// gradients accumulated over several passes before one update.
    pub fn scale_grads(&self, factor: f64) {
        for p in &self.params {
            let mut d = p.data_mut();
            if let Some(g) = d.grad.as_mut() {
                g.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    /// v <- momentum*v + (g + wd*w); w <- w - lr*v; gradients zeroed.
    pub fn step(&mut self) -> Result<()> {
        for (index, (p, v)) in self.params.iter().zip(self.velocity.iter_mut()).enumerate() {
            let mut d = p.data_mut();
            let grad = match d.grad.take() {
                Some(g) => g,
                None => return Err(Error::MissingGradient { index }),
            };
            for ((w, vel), g) in d.values.iter_mut().zip(v.iter_mut()).zip(&grad) {
                let g = g + self.cfg.weight_decay * *w;
                *vel = self.cfg.momentum * *vel + g;
                *w -= self.cfg.lr * *vel;
            }
            d.grad = Some(vec![0.0; grad.len()]);
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
