use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }
}

/// `out[b, n] = sum_k a[b, k] * w[n, k]` (overwrites `out`).
pub fn matmul_nt(a: &[f64], w: &[f64], batch: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), batch * k);
    debug_assert_eq!(w.len(), n * k);
    debug_assert_eq!(out.len(), batch * n);
    for b in 0..batch {
        let row = &a[b * k..(b + 1) * k];
        let o = &mut out[b * n..(b + 1) * n];
        for (j, oj) in o.iter_mut().enumerate() {
            let wr = &w[j * k..(j + 1) * k];
            *oj = row.iter().zip(wr).map(|(x, y)| x * y).sum();
        }
    }
}

/// `dw[n, k] += sum_b dout[b, n] * a[b, k]`
pub fn matmul_tn_acc(dout: &[f64], a: &[f64], batch: usize, k: usize, n: usize, dw: &mut [f64]) {
    for b in 0..batch {
        let ar = &a[b * k..(b + 1) * k];
        for j in 0..n {
            let g = dout[b * n + j];
            if g == 0.0 {
                continue;
            }
            let wr = &mut dw[j * k..(j + 1) * k];
            for (w, x) in wr.iter_mut().zip(ar) {
                *w += g * x;
            }
        }
    }
}

/// `da[b, k] += sum_n dout[b, n] * w[n, k]`
pub fn matmul_nn_acc(dout: &[f64], w: &[f64], batch: usize, k: usize, n: usize, da: &mut [f64]) {
    for b in 0..batch {
        let dr = &mut da[b * k..(b + 1) * k];
        for j in 0..n {
            let g = dout[b * n + j];
            if g == 0.0 {
                continue;
            }
            let wr = &w[j * k..(j + 1) * k];
            for (d, x) in dr.iter_mut().zip(wr) {
                *d += g * x;
            }
        }
    }
}

/// Add a bias row to every batch row.
pub fn add_bias(out: &mut [f64], bias: &[f64]) {
    let n = bias.len();
    for row in out.chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// Column sums accumulated into `acc`.
pub fn sum_rows_acc(dout: &[f64], acc: &mut [f64]) {
    let n = acc.len();
    for row in dout.chunks(n) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}
