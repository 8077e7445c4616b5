use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators, one pair per trainable tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub hyper: AdamConfig,
}

impl OptimizerState {
    pub fn new(net: &Network, hyper: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = net.tensors().into_iter().map(Tensor::zeros_like).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            hyper,
        }
    }

    pub fn matches(&self, net: &Network) -> bool {
        let t = net.tensors();
        t.len() == self.m.len()
            && t.iter().zip(&self.m).all(|(a, b)| a.shape() == b.shape())
            && t.iter().zip(&self.v).all(|(a, b)| a.shape() == b.shape())
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
pub fn adam_step(net: &mut Network, grads: &Gradients, opt: &mut OptimizerState, lr: f64) -> Result<()> {
    if !opt.matches(net) || grads.tensors.len() != opt.m.len() {
        return Err(Error::Dimension("optimizer state does not match network".into()));
    }
    let AdamConfig { beta1, beta2, eps } = opt.hyper;
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in net
        .tensors_mut()
        .into_iter()
        .zip(&grads.tensors)
        .zip(opt.m.iter_mut())
        .zip(opt.v.iter_mut())
    {
        if p.shape() != g.shape() {
            return Err(Error::Dimension("gradient shape mismatch".into()));
        }
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}
