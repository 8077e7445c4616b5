use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{add_bias, matmul_nn_acc, matmul_nt, matmul_tn_acc, sum_rows_acc, Tensor};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One GRU layer. Gate blocks are stacked `[reset; update; candidate]`, each
/// with an input-side and a recurrent-side bias:
///
/// ```text
/// r = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    ghn: Vec<f64>,
}

/// Intermediates of a layer's pass over a sequence.
#[derive(Debug, Clone)]
pub struct GruCache {
    batch: usize,
    steps: Vec<StepCache>,
}

impl GruLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[3 * hidden, input]),
            w_hh: Tensor::zeros(&[3 * hidden, hidden]),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn random(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Tensor::uniform(&[3 * hidden, input], k, rng),
            w_hh: Tensor::uniform(&[3 * hidden, hidden], k, rng),
            b_ih: Tensor::uniform(&[3 * hidden], k, rng),
            b_hh: Tensor::uniform(&[3 * hidden], k, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn parameter_count(&self) -> usize {
        self.w_ih.len() + self.w_hh.len() + self.b_ih.len() + self.b_hh.len()
    }

    /// One recurrence step for a batch; returns the new hidden state.
    pub fn cell(&self, x: &[f64], h: &[f64], batch: usize) -> Vec<f64> {
        self.cell_cached(x, h, batch).1
    }

    fn cell_cached(&self, x: &[f64], h: &[f64], batch: usize) -> (StepCache, Vec<f64>) {
        let hid = self.hidden_dim();
        let inp = self.input_dim();
        let g3 = 3 * hid;
        let mut gi = vec![0.0; batch * g3];
        let mut gh = vec![0.0; batch * g3];
        matmul_nt(x, self.w_ih.data(), batch, inp, g3, &mut gi);
        add_bias(&mut gi, self.b_ih.data());
        matmul_nt(h, self.w_hh.data(), batch, hid, g3, &mut gh);
        add_bias(&mut gh, self.b_hh.data());

        let mut r = vec![0.0; batch * hid];
        let mut z = vec![0.0; batch * hid];
        let mut n = vec![0.0; batch * hid];
        let mut ghn = vec![0.0; batch * hid];
        let mut out = vec![0.0; batch * hid];
        for b in 0..batch {
            let gi = &gi[b * g3..(b + 1) * g3];
            let gh = &gh[b * g3..(b + 1) * g3];
            for j in 0..hid {
                let idx = b * hid + j;
                let rj = sigmoid(gi[j] + gh[j]);
                let zj = sigmoid(gi[hid + j] + gh[hid + j]);
                let nj = (gi[2 * hid + j] + rj * gh[2 * hid + j]).tanh();
                r[idx] = rj;
                z[idx] = zj;
                n[idx] = nj;
                ghn[idx] = gh[2 * hid + j];
                out[idx] = (1.0 - zj) * nj + zj * h[idx];
            }
        }
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            r,
            z,
            n,
            ghn,
        };
        (cache, out)
    }

    /// Run the layer over `xs` (one `batch × input` matrix per step) from a
    /// zero hidden state. Returns every step's hidden output.
    pub fn forward_seq(&self, xs: &[Vec<f64>], batch: usize) -> (Vec<Vec<f64>>, GruCache) {
        let hid = self.hidden_dim();
        let mut h = vec![0.0; batch * hid];
        let mut outs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (cache, next) = self.cell_cached(x, &h, batch);
            steps.push(cache);
            outs.push(next.clone());
            h = next;
        }
        (outs, GruCache { batch, steps })
    }

    /// Backpropagation through time. `dhs[t]` is the loss gradient w.r.t.
    /// the step-`t` output (may be empty for "no gradient"). Parameter
    /// gradients are accumulated into `grads`; returns per-step input grads.
    pub fn backward_seq(
        &self,
        cache: &GruCache,
        dhs: &[Vec<f64>],
        grads: &mut GruLayer,
    ) -> Vec<Vec<f64>> {
        let batch = cache.batch;
        let hid = self.hidden_dim();
        let inp = self.input_dim();
        let g3 = 3 * hid;
        let steps = cache.steps.len();
        let mut dxs = vec![Vec::new(); steps];
        let mut carry = vec![0.0; batch * hid];
        let mut dgi = vec![0.0; batch * g3];
        let mut dgh = vec![0.0; batch * g3];
        for t in (0..steps).rev() {
            let c = &cache.steps[t];
            let mut dh = carry.clone();
            if !dhs[t].is_empty() {
                for (a, b) in dh.iter_mut().zip(&dhs[t]) {
                    *a += b;
                }
            }
            let mut dh_prev = vec![0.0; batch * hid];
            for b in 0..batch {
                for j in 0..hid {
                    let idx = b * hid + j;
                    let (r, z, n) = (c.r[idx], c.z[idx], c.n[idx]);
                    let g = dh[idx];
                    let dn = g * (1.0 - z);
                    let dz = g * (c.h_prev[idx] - n);
                    dh_prev[idx] = g * z;
                    let dan = dn * (1.0 - n * n);
                    let dr = dan * c.ghn[idx];
                    let daz = dz * z * (1.0 - z);
                    let dar = dr * r * (1.0 - r);
                    let row = b * g3;
                    dgi[row + j] = dar;
                    dgi[row + hid + j] = daz;
                    dgi[row + 2 * hid + j] = dan;
                    dgh[row + j] = dar;
                    dgh[row + hid + j] = daz;
                    dgh[row + 2 * hid + j] = dan * r;
                }
            }
            matmul_tn_acc(&dgi, &c.x, batch, inp, g3, grads.w_ih.data_mut());
            sum_rows_acc(&dgi, grads.b_ih.data_mut());
            matmul_tn_acc(&dgh, &c.h_prev, batch, hid, g3, grads.w_hh.data_mut());
            sum_rows_acc(&dgh, grads.b_hh.data_mut());
            let mut dx = vec![0.0; batch * inp];
            matmul_nn_acc(&dgi, self.w_ih.data(), batch, inp, g3, &mut dx);
            matmul_nn_acc(&dgh, self.w_hh.data(), batch, hid, g3, &mut dh_prev);
            dxs[t] = dx;
            carry = dh_prev;
        }
        dxs
    }
}
