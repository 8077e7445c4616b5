use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::sigmoid;
use super::tensor::{add_bias, matmul_nn_acc, matmul_nt, matmul_tn_acc, sum_rows_acc, Tensor};

/// Overflow-free `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `x · tanh(softplus(x))`
pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

pub fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

/// Fully connected layer, `y = x Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Tensor::zeros(&[output, input]),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (input as f64).sqrt();
        Self {
            w: Tensor::uniform(&[output, input], k, rng),
            b: Tensor::uniform(&[output], k, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let (k, n) = (self.input_dim(), self.output_dim());
        let mut out = vec![0.0; batch * n];
        matmul_nt(x, self.w.data(), batch, k, n, &mut out);
        add_bias(&mut out, self.b.data());
        out
    }

    /// Accumulates parameter grads into `grads` and returns the input grad.
    pub fn backward(&self, x: &[f64], dy: &[f64], batch: usize, grads: &mut DenseLayer) -> Vec<f64> {
        let (k, n) = (self.input_dim(), self.output_dim());
        matmul_tn_acc(dy, x, batch, k, n, grads.w.data_mut());
        sum_rows_acc(dy, grads.b.data_mut());
        let mut dx = vec![0.0; batch * k];
        matmul_nn_acc(dy, self.w.data(), batch, k, n, &mut dx);
        dx
    }
}

/// Batch normalization over the batch dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

/// Per-call intermediates of [`BatchNorm::forward`].
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub train: bool,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[width], 1.0),
            beta: Tensor::zeros(&[width]),
            running_mean: Tensor::zeros(&[width]),
            running_var: Tensor::filled(&[width], 1.0),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &[f64], batch: usize, train: bool) -> (Vec<f64>, NormCache) {
        let w = self.width();
        let (mean, var) = if train {
            let mut mean = vec![0.0; w];
            let mut var = vec![0.0; w];
            for row in x.chunks(w) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= batch as f64);
            for row in x.chunks(w) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= batch as f64);
            (mean, var)
        } else {
            (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        let (g, b) = (self.gamma.data(), self.beta.data());
        for (r, row) in x.chunks(w).enumerate() {
            for j in 0..w {
                let xh = (row[j] - mean[j]) * inv_std[j];
                xhat[r * w + j] = xh;
                y[r * w + j] = g[j] * xh + b[j];
            }
        }
        let cache = NormCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            train,
        };
        (y, cache)
    }

    pub fn backward(&self, cache: &NormCache, dy: &[f64], batch: usize, grads: &mut BatchNorm) -> Vec<f64> {
        let w = self.width();
        let g = self.gamma.data();
        let mut dx = vec![0.0; dy.len()];
        let mut sum_dxh = vec![0.0; w];
        let mut sum_dxh_xh = vec![0.0; w];
        for r in 0..batch {
            for j in 0..w {
                let i = r * w + j;
                grads.gamma.data_mut()[j] += dy[i] * cache.xhat[i];
                grads.beta.data_mut()[j] += dy[i];
                let dxh = dy[i] * g[j];
                sum_dxh[j] += dxh;
                sum_dxh_xh[j] += dxh * cache.xhat[i];
            }
        }
        let nb = batch as f64;
        for r in 0..batch {
            for j in 0..w {
                let i = r * w + j;
                let dxh = dy[i] * g[j];
                dx[i] = if cache.train {
                    cache.inv_std[j] / nb * (nb * dxh - sum_dxh[j] - cache.xhat[i] * sum_dxh_xh[j])
                } else {
                    dxh * cache.inv_std[j]
                };
            }
        }
        dx
    }

    /// Fold one training batch's statistics into the running estimates.
    pub fn update_running(&mut self, cache: &NormCache, batch: usize) {
        let m = self.momentum;
        let unbias = if batch > 1 {
            batch as f64 / (batch as f64 - 1.0)
        } else {
            1.0
        };
        for j in 0..self.width() {
            let rm = &mut self.running_mean.data_mut()[j];
            *rm = (1.0 - m) * *rm + m * cache.batch_mean[j];
            let rv = &mut self.running_var.data_mut()[j];
            *rv = (1.0 - m) * *rv + m * cache.batch_var[j] * unbias;
        }
    }
}
