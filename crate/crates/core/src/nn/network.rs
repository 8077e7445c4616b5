use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::{GruCache, GruLayer};
use super::head::{mish, mish_grad, BatchNorm, DenseLayer, NormCache};
use super::tensor::Tensor;
use crate::dynamics::N_PARAMS;
use crate::error::{Error, Result};
use crate::guard::ProfileName;

/// Per-step features: `vx, vy, omega, throttle_fb, steer_fb, throttle_cmd, steer_cmd`.
const OUTPUT_INIT_SCALE: f64 = 0.1;

pub const N_FEATURES: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub history_len: usize,
    pub input_dim: usize,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub dense_widths: Vec<usize>,
    pub output_dim: usize,
    pub profile: ProfileName,
}

impl NetworkConfig {
    /// Layout for the full-scale vehicle.
    pub fn real_default() -> Self {
        Self {
            history_len: 12,
            input_dim: N_FEATURES,
            gru_layers: 5,
            gru_hidden: 144,
            dense_widths: vec![184, 184],
            output_dim: N_PARAMS,
            profile: ProfileName::Real,
        }
    }

    /// Layout for the small-scale simulated vehicle.
    pub fn sim_default() -> Self {
        Self {
            history_len: 12,
            input_dim: N_FEATURES,
            gru_layers: 2,
            gru_hidden: 96,
            dense_widths: vec![128, 128],
            output_dim: N_PARAMS,
            profile: ProfileName::Sim,
        }
    }

    /// Compact layout used for laptop-scale synthetic experiments.
    pub fn desk() -> Self {
        Self {
            gru_layers: 1,
            gru_hidden: 32,
            dense_widths: vec![32, 32],
            ..Self::sim_default()
        }
    }

    pub fn default_for(profile: ProfileName) -> Self {
        match profile {
            ProfileName::Sim => Self::sim_default(),
            ProfileName::Real => Self::real_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_len == 0 {
            return Err(Error::Config("history_len must be at least 1".into()));
        }
        if self.output_dim != N_PARAMS {
            return Err(Error::Config(format!("output_dim must be {N_PARAMS}")));
        }
        if self.input_dim == 0 || self.gru_layers == 0 || self.gru_hidden == 0 {
            return Err(Error::Config("input_dim, gru_layers and gru_hidden must be positive".into()));
        }
        if self.dense_widths.contains(&0) {
            return Err(Error::Config("dense widths must be positive".into()));
        }
        Ok(())
    }

    /// Trainable parameter count implied by the layout.
    pub fn parameter_count(&self) -> usize {
        let h = self.gru_hidden;
        let mut n = 0;
        let mut inp = self.input_dim;
        for _ in 0..self.gru_layers {
            n += 3 * ((inp + h) * h + 2 * h);
            inp = h;
        }
        for &w in &self.dense_widths {
            n += inp * w + w + 2 * w;
            inp = w;
        }
        n + inp * self.output_dim + self.output_dim
    }
}

/// Per-feature standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputScaler {
    /// Fit from rows of `dim` features; near-constant features keep unit scale.
    pub fn fit(rows: &[f64], dim: usize) -> Self {
        let n = (rows.len() / dim).max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for row in rows.chunks(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &mut [f64]) {
        let d = self.mean.len();
        for chunk in row.chunks_mut(d) {
            for ((v, m), s) in chunk.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// GRU stack followed by `dense -> mish -> batch-norm` blocks and a linear
/// output layer emitting raw (pre-projection) parameter logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetworkConfig,
    pub gru: Vec<GruLayer>,
    pub dense: Vec<DenseLayer>,
    pub norms: Vec<BatchNorm>,
    pub out: DenseLayer,
    pub scaler: Option<InputScaler>,
}

/// Everything recorded by [`Network::forward`] for the reverse sweep.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub batch: usize,
    pub mode: Mode,
    /// Top-layer hidden state at the last step, `[batch, hidden]`.
    pub hidden: Vec<f64>,
    /// Raw logits, `[batch, 17]`.
    pub z: Vec<f64>,
    gru: Vec<GruCache>,
    dense_in: Vec<Vec<f64>>,
    pre_act: Vec<Vec<f64>>,
    norm: Vec<NormCache>,
    out_in: Vec<f64>,
}

/// Parameter gradients in the canonical tensor order of [`Network::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn scale(&mut self, k: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(k));
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    /// First block holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.tensors.iter().position(|t| !t.all_finite())
    }
}

impl Network {
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut gru = Vec::new();
        let mut inp = config.input_dim;
        for _ in 0..config.gru_layers {
            gru.push(GruLayer::zeros(inp, config.gru_hidden));
            inp = config.gru_hidden;
        }
        let mut dense = Vec::new();
        let mut norms = Vec::new();
        for &w in &config.dense_widths {
            dense.push(DenseLayer::zeros(inp, w));
            norms.push(BatchNorm::new(w));
            inp = w;
        }
        let out = DenseLayer::zeros(inp, config.output_dim);
        Ok(Self {
            config,
            gru,
            dense,
            norms,
            out,
            scaler: None,
        })
    }

    pub fn random(config: NetworkConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        for layer in net.gru.iter_mut() {
            *layer = GruLayer::random(layer.input_dim(), layer.hidden_dim(), rng);
        }
        for layer in net.dense.iter_mut() {
            *layer = DenseLayer::random(layer.input_dim(), layer.output_dim(), rng);
        }
        // a small output layer starts every window near the bounds midpoint,
        // which keeps early rollouts inside the stable region
        net.out = DenseLayer::random(net.out.input_dim(), net.out.output_dim(), rng);
        net.out.w.scale(OUTPUT_INIT_SCALE);
        net.out.b.scale(OUTPUT_INIT_SCALE);
        Ok(net)
    }

    /// A network whose output layer ignores its input and always emits `z`.
    pub fn constant(config: NetworkConfig, z: &[f64; N_PARAMS]) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        net.out.b.data_mut().copy_from_slice(z);
        Ok(net)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Trainable tensors: per GRU layer `[w_ih, w_hh, b_ih, b_hh]`, per dense
    /// block `[w, b, gamma, beta]`, then the output `[w, b]`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for g in &self.gru {
            v.extend([&g.w_ih, &g.w_hh, &g.b_ih, &g.b_hh]);
        }
        for (d, n) in self.dense.iter().zip(&self.norms) {
            v.extend([&d.w, &d.b, &n.gamma, &n.beta]);
        }
        v.extend([&self.out.w, &self.out.b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for g in self.gru.iter_mut() {
            v.extend([&mut g.w_ih, &mut g.w_hh, &mut g.b_ih, &mut g.b_hh]);
        }
        for (d, n) in self.dense.iter_mut().zip(self.norms.iter_mut()) {
            v.extend([&mut d.w, &mut d.b, &mut n.gamma, &mut n.beta]);
        }
        v.extend([&mut self.out.w, &mut self.out.b]);
        v
    }

    /// Human-readable names matching [`Network::tensors`].
    pub fn block_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.gru.len() {
            for p in ["w_ih", "w_hh", "b_ih", "b_hh"] {
                v.push(format!("gru{i}.{p}"));
            }
        }
        for i in 0..self.dense.len() {
            for p in ["w", "b", "gamma", "beta"] {
                v.push(format!("dense{i}.{p}"));
            }
        }
        v.push("out.w".into());
        v.push("out.b".into());
        v
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.tensors().into_iter().map(Tensor::zeros_like).collect(),
        }
    }

    /// Forward pass over a `[batch, history_len, input_dim]` tensor of raw
    /// features. Running statistics are not touched; see
    /// [`Network::commit_running_stats`].
    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<ForwardPass> {
        let cfg = &self.config;
        let (tau, d) = (cfg.history_len, cfg.input_dim);
        let shape = input.shape();
        if shape.len() != 3 || shape[1] != tau || shape[2] != d {
            return Err(Error::Dimension(format!(
                "expected input [batch, {tau}, {d}], got {shape:?}"
            )));
        }
        let batch = shape[0];
        if batch == 0 {
            return Err(Error::Dimension("empty batch".into()));
        }
        let mut xs: Vec<Vec<f64>> = (0..tau)
            .map(|t| {
                let mut step = Vec::with_capacity(batch * d);
                for b in 0..batch {
                    let off = (b * tau + t) * d;
                    step.extend_from_slice(&input.data()[off..off + d]);
                }
                if let Some(s) = &self.scaler {
                    s.apply(&mut step);
                }
                step
            })
            .collect();

        let mut gru = Vec::with_capacity(self.gru.len());
        for layer in &self.gru {
            let (outs, cache) = layer.forward_seq(&xs, batch);
            gru.push(cache);
            xs = outs;
        }
        let hidden = xs.pop().expect("history_len >= 1");

        let train = mode == Mode::Train;
        let mut x = hidden.clone();
        let mut dense_in = Vec::new();
        let mut pre_act = Vec::new();
        let mut norm = Vec::new();
        for (layer, bn) in self.dense.iter().zip(&self.norms) {
            let a = layer.forward(&x, batch);
            let m: Vec<f64> = a.iter().map(|v| mish(*v)).collect();
            let (y, cache) = bn.forward(&m, batch, train);
            dense_in.push(std::mem::replace(&mut x, y));
            pre_act.push(a);
            norm.push(cache);
        }
        let z = self.out.forward(&x, batch);
        Ok(ForwardPass {
            batch,
            mode,
            hidden,
            z,
            gru,
            dense_in,
            pre_act,
            norm,
            out_in: x,
        })
    }

    /// Reverse sweep given `dL/dz` (`[batch, 17]`).
    pub fn backward(&self, pass: &ForwardPass, dz: &[f64]) -> Gradients {
        let batch = pass.batch;
        let mut g_out = DenseLayer::zeros(self.out.input_dim(), self.out.output_dim());
        let mut dx = self.out.backward(&pass.out_in, dz, batch, &mut g_out);

        let mut g_dense: Vec<DenseLayer> = Vec::with_capacity(self.dense.len());
        let mut g_norm: Vec<BatchNorm> = Vec::with_capacity(self.dense.len());
        for i in (0..self.dense.len()).rev() {
            let (layer, bn) = (&self.dense[i], &self.norms[i]);
            let mut gb = BatchNorm::new(bn.width());
            gb.gamma = Tensor::zeros(&[bn.width()]);
            let dm = bn.backward(&pass.norm[i], &dx, batch, &mut gb);
            let da: Vec<f64> = dm
                .iter()
                .zip(&pass.pre_act[i])
                .map(|(g, a)| g * mish_grad(*a))
                .collect();
            let mut gd = DenseLayer::zeros(layer.input_dim(), layer.output_dim());
            dx = layer.backward(&pass.dense_in[i], &da, batch, &mut gd);
            g_dense.push(gd);
            g_norm.push(gb);
        }
        g_dense.reverse();
        g_norm.reverse();

        let tau = self.config.history_len;
        let mut dhs = vec![Vec::new(); tau];
        dhs[tau - 1] = dx;
        let mut g_gru: Vec<GruLayer> = Vec::with_capacity(self.gru.len());
        for (layer, cache) in self.gru.iter().zip(&pass.gru).rev() {
            let mut g = GruLayer::zeros(layer.input_dim(), layer.hidden_dim());
            dhs = layer.backward_seq(cache, &dhs, &mut g);
            g_gru.push(g);
        }
        g_gru.reverse();

        let mut tensors = Vec::new();
        for g in g_gru {
            tensors.extend([g.w_ih, g.w_hh, g.b_ih, g.b_hh]);
        }
        for (d, n) in g_dense.into_iter().zip(g_norm) {
            tensors.extend([d.w, d.b, n.gamma, n.beta]);
        }
        tensors.extend([g_out.w, g_out.b]);
        Gradients { tensors }
    }

    /// Fold the batch statistics of a training-mode pass into the running
    /// estimates. Eval-mode passes are ignored.
    pub fn commit_running_stats(&mut self, pass: &ForwardPass) {
        if pass.mode != Mode::Train {
            return;
        }
        for (bn, cache) in self.norms.iter_mut().zip(&pass.norm) {
            bn.update_running(cache, pass.batch);
        }
    }
}
