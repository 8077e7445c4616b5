//! Recurrent parameter estimator trained end-to-end through the physics step.
//!
//! A window of `history_len` telemetry records is mapped to 17 guarded
//! coefficients; the physics step then advances the window's last state with
//! the recorded applied (feedback) input and the loss compares it with the
//! next recorded state.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{BodyState, ModelParams, PhysicsMode, StepTape, VehicleGeometry, N_PARAMS};
use crate::error::{Error, Result};
use crate::guard::{project, project_grad, validate, BoundsProfile, GuardedParams};
use crate::nn::{
    adam_step, lr_schedule, AdamConfig, ForwardPass, Gradients, InputScaler, LrSchedule, Mode,
    Network, OptimizerState, Tensor, N_FEATURES,
};
use crate::telemetry::{SampleWindow, TelemetryRecord};

/// Per-step network input: `vx, vy, omega, throttle_fb, steer_fb,
/// throttle_cmd, steer_cmd`.
pub fn record_features(r: &TelemetryRecord) -> [f64; N_FEATURES] {
    [
        r.state.vx,
        r.state.vy,
        r.state.omega,
        r.u_fb.throttle,
        r.u_fb.steer,
        r.u_cmd.throttle,
        r.u_cmd.steer,
    ]
}

/// Stack histories into a `[batch, history_len, 7]` tensor.
pub fn batch_input(histories: &[&[TelemetryRecord]], history_len: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(histories.len() * history_len * N_FEATURES);
    for h in histories {
        if h.len() != history_len {
            return Err(Error::Window {
                expected: history_len,
                got: h.len(),
            });
        }
        for r in h.iter() {
            data.extend_from_slice(&record_features(r));
        }
    }
    Tensor::from_vec(&[histories.len(), history_len, N_FEATURES], data)
}

fn logits(pass: &ForwardPass, b: usize) -> [f64; N_PARAMS] {
    let mut z = [0.0; N_PARAMS];
    z.copy_from_slice(&pass.z[b * N_PARAMS..(b + 1) * N_PARAMS]);
    z
}

/// Guarded coefficients for each history in the batch.
pub fn estimate_batch(
    histories: &[&[TelemetryRecord]],
    net: &Network,
    profile: &BoundsProfile,
    mode: Mode,
) -> Result<Vec<GuardedParams>> {
    let input = batch_input(histories, net.config.history_len)?;
    let pass = net.forward(&input, mode)?;
    (0..histories.len())
        .map(|b| project(&logits(&pass, b), profile))
        .collect()
}

pub fn estimate_params(
    window: &SampleWindow,
    net: &Network,
    profile: &BoundsProfile,
    mode: Mode,
) -> Result<GuardedParams> {
    Ok(estimate_batch(&[&window.records], net, profile, mode)?.remove(0))
}

/// One-step prediction from the window's last record using its recorded
/// applied input.
pub fn predict_next_state(
    window: &SampleWindow,
    net: &Network,
    profile: &BoundsProfile,
    geom: &VehicleGeometry,
    dt: f64,
    mode: PhysicsMode,
) -> Result<BodyState> {
    let p = estimate_params(window, net, profile, Mode::Eval)?;
    let cur = window.current();
    let tape = StepTape::record(&cur.state, &cur.pose, &cur.u_fb, &p.params, geom, dt, mode)?;
    Ok(tape.next_state)
}

/// Mean of the squared componentwise error over `(vx, vy, omega)`.
pub fn mse_loss(pred: &BodyState, obs: &BodyState) -> f64 {
    weighted_mse(&[*pred], &[*obs], &[1.0; 3])
}

/// `sum_b sum_c w_c (pred - obs)^2 / (3 B)`
pub fn weighted_mse(pred: &[BodyState], obs: &[BodyState], weights: &[f64; 3]) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(obs)
        .map(|(p, o)| {
            let (p, o) = (p.to_array(), o.to_array());
            (0..3).map(|c| weights[c] * (p[c] - o[c]).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        / (3.0 * n)
}

/// Loss and parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub grads: Gradients,
    pub pass: ForwardPass,
    pub params: Vec<ModelParams>,
}

/// Forward through network, guard and physics, then reverse through all
/// three.
pub fn batch_loss_and_grad(
    windows: &[&SampleWindow],
    net: &Network,
    profile: &BoundsProfile,
    geom: &VehicleGeometry,
    dt: f64,
    physics: PhysicsMode,
    weights: &[f64; 3],
    mode: Mode,
) -> Result<BatchResult> {
    let histories: Vec<&[TelemetryRecord]> = windows.iter().map(|w| w.records.as_slice()).collect();
    let input = batch_input(&histories, net.config.history_len)?;
    let pass = net.forward(&input, mode)?;
    let bsz = windows.len();
    let mut dz = vec![0.0; bsz * N_PARAMS];
    let mut loss = 0.0;
    let mut params = Vec::with_capacity(bsz);
    let scale = 1.0 / (3.0 * bsz as f64);
    for (b, w) in windows.iter().enumerate() {
        let z = logits(&pass, b);
        let p = project(&z, profile)?.params;
        let cur = w.current();
        let tape = StepTape::record(&cur.state, &cur.pose, &cur.u_fb, &p, geom, dt, physics)?;
        let (pred, obs) = (tape.next_state.to_array(), w.target.state.to_array());
        let mut adj = [0.0; 3];
        for c in 0..3 {
            let e = pred[c] - obs[c];
            loss += weights[c] * e * e * scale;
            adj[c] = 2.0 * weights[c] * e * scale;
        }
        let back = tape.backward(adj, [0.0; 3]);
        let jac = project_grad(&z, &profile.bounds);
        for i in 0..N_PARAMS {
            dz[b * N_PARAMS + i] = back.params[i] * jac[i];
        }
        params.push(p);
    }
    let grads = net.backward(&pass, &dz);
    Ok(BatchResult {
        loss,
        grads,
        pass,
        params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    /// Defaults to 5% of the total steps.
    pub warmup_steps: Option<u64>,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss_weights: [f64; 3],
    pub physics: PhysicsMode,
    /// Fit a per-feature standardization on the training windows.
    pub standardize_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            batch_size: 128,
            warmup_steps: None,
            epochs: 50,
            seed: 0,
            adam: AdamConfig::default(),
            loss_weights: [1.0; 3],
            physics: PhysicsMode::Full,
            standardize_inputs: false,
        }
    }
}

impl TrainConfig {
    /// Recipe for the compact desk network: small batches and a high rate
    /// make up for the few thousand windows a handful of laps provides.
    pub fn desk() -> Self {
        Self {
            base_lr: 3e-2,
            batch_size: 8,
            standardize_inputs: true,
            ..Self::default()
        }
    }

    /// Optimizer steps per epoch; a trailing batch of one sample is dropped
    /// because batch statistics are undefined for it.
    pub fn batches_per_epoch(&self, n_windows: usize) -> usize {
        let full = n_windows / self.batch_size;
        let rem = n_windows % self.batch_size;
        full + usize::from(rem >= 2)
    }

    pub fn schedule(&self, n_windows: usize) -> Result<LrSchedule> {
        let total = (self.epochs * self.batches_per_epoch(n_windows)) as u64;
        let warmup = self.warmup_steps.unwrap_or(total / 20);
        LrSchedule::new(self.base_lr, warmup, total)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.loss_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// Emitted parameter sets that failed validation (expected zero).
    pub guard_violations: usize,
    pub optimizer: OptimizerState,
}

/// Eval-mode loss over `windows`, evaluated in chunks.
pub fn evaluate_loss(
    windows: &[SampleWindow],
    net: &Network,
    profile: &BoundsProfile,
    geom: &VehicleGeometry,
    dt: f64,
    physics: PhysicsMode,
    weights: &[f64; 3],
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Config("no windows to evaluate".into()));
    }
    let mut total = 0.0;
    for chunk in windows.chunks(256) {
        let hist: Vec<&[TelemetryRecord]> = chunk.iter().map(|w| w.records.as_slice()).collect();
        let est = estimate_batch(&hist, net, profile, Mode::Eval)?;
        let mut pred = Vec::with_capacity(chunk.len());
        for (w, p) in chunk.iter().zip(&est) {
            let cur = w.current();
            let t = StepTape::record(&cur.state, &cur.pose, &cur.u_fb, &p.params, geom, dt, physics)?;
            pred.push(t.next_state);
        }
        let obs: Vec<BodyState> = chunk.iter().map(|w| w.target.state).collect();
        total += weighted_mse(&pred, &obs, weights) * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Eval-mode loss of fixed coefficients (e.g. the box midpoint).
pub fn fixed_params_loss(
    windows: &[SampleWindow],
    params: &ModelParams,
    geom: &VehicleGeometry,
    dt: f64,
    physics: PhysicsMode,
) -> Result<f64> {
    let mut pred = Vec::with_capacity(windows.len());
    for w in windows {
        let cur = w.current();
        pred.push(StepTape::record(&cur.state, &cur.pose, &cur.u_fb, params, geom, dt, physics)?.next_state);
    }
    let obs: Vec<BodyState> = windows.iter().map(|w| w.target.state).collect();
    Ok(weighted_mse(&pred, &obs, &[1.0; 3]))
}

/// Mini-batch Adam with warm-up + cosine schedule. Deterministic for a given
/// seed. Passing a previous optimizer state resumes its step counter.
#[allow(clippy::too_many_arguments)]
pub fn train(
    train_windows: &[SampleWindow],
    val_windows: &[SampleWindow],
    net: &mut Network,
    cfg: &TrainConfig,
    profile: &BoundsProfile,
    geom: &VehicleGeometry,
    dt: f64,
    resume: Option<OptimizerState>,
) -> Result<TrainReport> {
    train_with_progress(train_windows, val_windows, net, cfg, profile, geom, dt, resume, &mut |_| {})
}

/// As [`train`], calling `on_epoch` after every completed epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_with_progress(
    train_windows: &[SampleWindow],
    val_windows: &[SampleWindow],
    net: &mut Network,
    cfg: &TrainConfig,
    profile: &BoundsProfile,
    geom: &VehicleGeometry,
    dt: f64,
    resume: Option<OptimizerState>,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_windows.len() < 2 {
        return Err(Error::Config("need at least two training windows".into()));
    }
    if cfg.standardize_inputs && net.scaler.is_none() {
        let rows: Vec<f64> = train_windows
            .iter()
            .flat_map(|w| w.records.iter().flat_map(record_features))
            .collect();
        net.scaler = Some(InputScaler::fit(&rows, N_FEATURES));
    }
    let schedule = cfg.schedule(train_windows.len())?;
    let mut opt = match resume {
        Some(o) if o.matches(net) => o,
        Some(_) => return Err(Error::Config("optimizer state does not match network".into())),
        None => OptimizerState::new(net, cfg.adam),
    };
    let names = net.block_names();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut guard_violations = 0;
    let mut local_step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut seen = 0usize;
        let mut lr = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            let batch: Vec<&SampleWindow> = idx.iter().map(|&i| &train_windows[i]).collect();
            let res = batch_loss_and_grad(
                &batch,
                net,
                profile,
                geom,
                dt,
                cfg.physics,
                &cfg.loss_weights,
                Mode::Train,
            )?;
            guard_violations += res
                .params
                .iter()
                .filter(|p| !validate(p, &profile.bounds).is_empty())
                .count();
            if !res.loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    step: opt.step,
                    block: "loss".into(),
                    what: "loss",
                });
            }
            if let Some(i) = res.grads.first_non_finite() {
                return Err(Error::TrainingDiverged {
                    step: opt.step,
                    block: names[i].clone(),
                    what: "gradient",
                });
            }
            local_step += 1;
            lr = lr_schedule(local_step.min(schedule.total_steps), &schedule)?;
            adam_step(net, &res.grads, &mut opt, lr)?;
            net.commit_running_stats(&res.pass);
            if let Some(i) = net.tensors().iter().position(|t| !t.all_finite()) {
                return Err(Error::TrainingDiverged {
                    step: opt.step,
                    block: names[i].clone(),
                    what: "weight",
                });
            }
            sum += res.loss * idx.len() as f64;
            seen += idx.len();
        }
        let val_loss = if val_windows.is_empty() {
            None
        } else {
            Some(evaluate_loss(val_windows, net, profile, geom, dt, cfg.physics, &cfg.loss_weights)?)
        };
        let stats = EpochStats {
            epoch,
            train_loss: sum / seen as f64,
            val_loss,
            lr,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainReport {
        history,
        guard_violations,
        optimizer: opt,
    })
}

/// Source of physics coefficients for rollouts and control.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsModel {
    /// The same coefficients everywhere; `history_len` only sets how much
    /// history controllers wait for.
    Fixed { params: ModelParams, history_len: usize },
    Learned { net: Network, profile: BoundsProfile },
}

impl DynamicsModel {
    pub fn history_len(&self) -> usize {
        match self {
            DynamicsModel::Fixed { history_len, .. } => *history_len,
            DynamicsModel::Learned { net, .. } => net.config.history_len,
        }
    }

    /// Trainable parameter count (zero for fixed coefficients).
    pub fn parameter_count(&self) -> usize {
        match self {
            DynamicsModel::Fixed { .. } => 0,
            DynamicsModel::Learned { net, .. } => net.parameter_count(),
        }
    }

    pub fn estimate(&self, history: &[TelemetryRecord]) -> Result<ModelParams> {
        Ok(self.estimate_batch(&[history])?.remove(0))
    }

    pub fn estimate_batch(&self, histories: &[&[TelemetryRecord]]) -> Result<Vec<ModelParams>> {
        match self {
            DynamicsModel::Fixed { params, history_len } => {
                if let Some(h) = histories.iter().find(|h| h.len() != *history_len) {
                    return Err(Error::Window {
                        expected: *history_len,
                        got: h.len(),
                    });
                }
                Ok(vec![*params; histories.len()])
            }
            DynamicsModel::Learned { net, profile } => Ok(estimate_batch(histories, net, profile, Mode::Eval)?
                .into_iter()
                .map(|g| g.params)
                .collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ControlInput, Pose};
    use crate::guard::ProfileName;
    use crate::nn::NetworkConfig;

    #[test]
    fn loss_examples() {
        let o = BodyState::new(1.0, 2.0, 3.0);
        assert_eq!(mse_loss(&o, &o), 0.0);
        assert_eq!(mse_loss(&BodyState::new(2.0, 3.0, 4.0), &o), 1.0);
        assert_eq!(mse_loss(&BodyState::new(4.0, 2.0, 3.0), &o), 3.0);
    }

    #[test]
    fn batches_per_epoch_drops_singletons() {
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.batches_per_epoch(8), 2);
        assert_eq!(cfg.batches_per_epoch(9), 2);
        assert_eq!(cfg.batches_per_epoch(10), 3);
    }

    #[test]
    fn zero_network_gives_midpoints() {
        let profile = BoundsProfile::builtin(ProfileName::Sim);
        let mut cfg = NetworkConfig::sim_default();
        cfg.history_len = 2;
        let net = Network::zeros(cfg).unwrap();
        let rec = TelemetryRecord {
            t: 0.0,
            state: BodyState::new(1.0, 0.1, 0.2),
            pose: Pose::default(),
            u_fb: ControlInput::new(0.3, 0.1),
            u_cmd: ControlInput::new(0.4, 0.1),
        };
        let w = SampleWindow {
            start: 0,
            records: vec![rec; 2],
            target: rec,
        };
        let p = estimate_params(&w, &net, &profile, Mode::Eval).unwrap();
        let mid = profile.bounds.midpoint().to_array();
        for (a, b) in p.params.to_array().iter().zip(mid) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
        let short = SampleWindow {
            records: vec![rec],
            ..w
        };
        assert!(matches!(
            estimate_params(&short, &net, &profile, Mode::Eval),
            Err(Error::Window { expected: 2, got: 1 })
        ));
    }
}
