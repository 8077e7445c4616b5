//! Open-loop metrics: one-step RMSE and maximum error per state, and
//! multi-step ADE/FDE of rollouts over a fixed horizon.

use serde::{Deserialize, Serialize};

use crate::dynamics::{BodyState, ModelParams, PhysicsMode, Pose, StepTape, VehicleGeometry};
use crate::error::{Error, Result};
use crate::estimator::DynamicsModel;
use crate::nn::Network;
use crate::telemetry::{TelemetryRecord, TelemetrySeries};

/// Rollouts with any state component above this magnitude count as failed.
pub const DIVERGENCE_LIMIT: f64 = 1e4;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("sequence lengths differ: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Dimension("empty sequences".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), obs.len())?;
    let ss: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

pub fn max_abs_err(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), obs.len())?;
    Ok(pred.iter().zip(obs).map(|(p, o)| (p - o).abs()).fold(0.0, f64::max))
}

/// Mean and final Euclidean position error.
pub fn displacement_errors(pred: &[Pose], obs: &[Pose]) -> Result<(f64, f64)> {
    check_lengths(pred.len(), obs.len())?;
    let d: Vec<f64> = pred.iter().zip(obs).map(|(p, o)| p.distance(o)).collect();
    Ok((d.iter().sum::<f64>() / d.len() as f64, d[d.len() - 1]))
}

/// Whole number of steps in `horizon_ms` at step `dt`.
pub fn horizon_steps(horizon_ms: f64, dt: f64) -> Result<usize> {
    let n = horizon_ms / (1000.0 * dt);
    let r = n.round();
    if !(r >= 1.0) || (n - r).abs() * dt > 1e-9 {
        return Err(Error::Config(format!(
            "horizon {horizon_ms} ms is not a positive multiple of dt = {dt} s"
        )));
    }
    Ok(r as usize)
}

/// Exact trainable-parameter count.
pub fn count_parameters(net: &Network) -> usize {
    net.parameter_count()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateMetrics {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl StateMetrics {
    fn from_array(a: [f64; 3]) -> Self {
        Self {
            vx: a[0],
            vy: a[1],
            omega: a[2],
        }
    }
}

/// Mean position error and state RMSE across rollouts at one horizon step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub t_ms: f64,
    pub mean_position_error: f64,
    pub rmse_vx: f64,
    pub rmse_vy: f64,
    pub rmse_omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopReport {
    pub label: String,
    pub mode: PhysicsMode,
    pub horizon_ms: f64,
    pub horizon_steps: usize,
    /// Windows used for the one-step metrics.
    pub n_samples: usize,
    pub n_rollouts: usize,
    pub n_failed: usize,
    pub rmse: StateMetrics,
    pub max_error: StateMetrics,
    pub ade: f64,
    pub fde: f64,
    /// Straight-line constant-velocity extrapolation over the same rollouts.
    pub cv_ade: f64,
    pub cv_fde: f64,
    pub parameter_count: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

pub const REPORT_CSV_HEADER: &str = "label,mode,horizon_ms,horizon_steps,n_samples,n_rollouts,n_failed,\
rmse_vx,rmse_vy,rmse_omega,max_vx,max_vy,max_omega,ade,fde,cv_ade,cv_fde,parameter_count";

impl OpenLoopReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn csv_row(&self) -> String {
        let f = [
            self.rmse.vx,
            self.rmse.vy,
            self.rmse.omega,
            self.max_error.vx,
            self.max_error.vy,
            self.max_error.omega,
            self.ade,
            self.fde,
            self.cv_ade,
            self.cv_fde,
        ];
        let nums: Vec<String> = f.iter().map(|v| v.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.label,
            self.mode,
            self.horizon_ms,
            self.horizon_steps,
            self.n_samples,
            self.n_rollouts,
            self.n_failed,
            nums.join(","),
            self.parameter_count
        )
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("step,t_ms,mean_position_error,rmse_vx,rmse_vy,rmse_omega\n");
        for r in &self.trace {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.t_ms, r.mean_position_error, r.rmse_vx, r.rmse_vy, r.rmse_omega
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub horizon_ms: f64,
    pub mode: PhysicsMode,
    /// Distance between consecutive window starts.
    pub stride: usize,
    pub label: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon_ms: 300.0,
            mode: PhysicsMode::Full,
            stride: 1,
            label: "model".into(),
        }
    }
}

/// Rollout of `h` steps from the history ending at record `cur`. Step 0
/// applies the recorded feedback input; later steps apply the recorded
/// command, and the history is shifted with synthesized records whose
/// feedback slots hold the applied inputs.
struct Rollout {
    history: Vec<TelemetryRecord>,
    state: BodyState,
    pose: Pose,
    cur: usize,
    poses: Vec<Pose>,
    states: Vec<BodyState>,
    failed: bool,
}

fn step_rollouts(
    rolls: &mut [Rollout],
    model: &DynamicsModel,
    records: &[TelemetryRecord],
    k: usize,
    geom: &VehicleGeometry,
    dt: f64,
    mode: PhysicsMode,
) -> Result<()> {
    let active: Vec<usize> = (0..rolls.len()).filter(|&i| !rolls[i].failed).collect();
    if active.is_empty() {
        return Ok(());
    }
    let hist: Vec<&[TelemetryRecord]> = active.iter().map(|&i| rolls[i].history.as_slice()).collect();
    let params: Vec<ModelParams> = match model.estimate_batch(&hist) {
        Ok(p) => p,
        Err(Error::Domain(_)) => {
            for &i in &active {
                rolls[i].failed = true;
            }
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    for (&i, p) in active.iter().zip(&params) {
        let r = &mut rolls[i];
        let rec = &records[r.cur + k];
        let u = if k == 0 { rec.u_fb } else { rec.u_cmd };
        let step = StepTape::record(&r.state, &r.pose, &u, p, geom, dt, mode);
        let Ok(tape) = step else {
            r.failed = true;
            continue;
        };
        if !tape.next_state.is_finite()
            || tape.next_state.max_abs() > DIVERGENCE_LIMIT
            || !tape.next_pose.is_finite()
        {
            r.failed = true;
            continue;
        }
        r.state = tape.next_state;
        r.pose = tape.next_pose;
        r.poses.push(r.pose);
        r.states.push(r.state);
        let next = &records[r.cur + k + 1];
        r.history.remove(0);
        r.history.push(TelemetryRecord {
            t: next.t,
            state: r.state,
            pose: r.pose,
            u_fb: next.u_cmd,
            u_cmd: next.u_cmd,
        });
    }
    Ok(())
}

/// One-step and rollout metrics of `model` on `series`.
pub fn evaluate_open_loop(
    model: &DynamicsModel,
    series: &TelemetrySeries,
    geom: &VehicleGeometry,
    cfg: &EvalConfig,
) -> Result<OpenLoopReport> {
    let dt = series.dt();
    let h = horizon_steps(cfg.horizon_ms, dt)?;
    let tau = model.history_len();
    if cfg.stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let recs = &series.records;
    let n = recs.len();
    if n <= tau {
        return Err(Error::Config(format!(
            "series of {n} records is too short for history {tau}"
        )));
    }

    // one-step metrics over every window with a target
    let starts: Vec<usize> = (0..n - tau).step_by(cfg.stride).collect();
    let hist: Vec<&[TelemetryRecord]> = starts.iter().map(|&s| &recs[s..s + tau]).collect();
    let mut pred: [Vec<f64>; 3] = Default::default();
    let mut obs: [Vec<f64>; 3] = Default::default();
    for (chunk_s, chunk_h) in starts.chunks(256).zip(hist.chunks(256)) {
        let params = model.estimate_batch(chunk_h)?;
        for (&s, p) in chunk_s.iter().zip(&params) {
            let cur = &recs[s + tau - 1];
            let tape = StepTape::record(&cur.state, &cur.pose, &cur.u_fb, p, geom, dt, cfg.mode)?;
            let (a, b) = (tape.next_state.to_array(), recs[s + tau].state.to_array());
            for c in 0..3 {
                pred[c].push(a[c]);
                obs[c].push(b[c]);
            }
        }
    }
    let mut r = [0.0; 3];
    let mut m = [0.0; 3];
    for c in 0..3 {
        r[c] = rmse(&pred[c], &obs[c])?;
        m[c] = max_abs_err(&pred[c], &obs[c])?;
    }

    // rollouts over windows with a full horizon of future records
    let mut rolls: Vec<Rollout> = starts
        .iter()
        .filter(|&&s| s + tau - 1 + h < n)
        .map(|&s| {
            let cur = s + tau - 1;
            Rollout {
                history: recs[s..s + tau].to_vec(),
                state: recs[cur].state,
                pose: recs[cur].pose,
                cur,
                poses: Vec::with_capacity(h),
                states: Vec::with_capacity(h),
                failed: false,
            }
        })
        .collect();
    if rolls.is_empty() {
        return Err(Error::Config(format!(
            "series of {n} records is too short for history {tau} plus horizon {h}"
        )));
    }
    for k in 0..h {
        step_rollouts(&mut rolls, model, recs, k, geom, dt, cfg.mode)?;
    }

    let mut ade = 0.0;
    let mut fde = 0.0;
    let mut cv_ade = 0.0;
    let mut cv_fde = 0.0;
    let mut ok = 0usize;
    let mut pos_sum = vec![0.0; h];
    let mut sq_sum = vec![[0.0; 3]; h];
    for roll in rolls.iter().filter(|r| !r.failed) {
        let truth: Vec<Pose> = (1..=h).map(|k| recs[roll.cur + k].pose).collect();
        let (a, f) = displacement_errors(&roll.poses, &truth)?;
        let (ca, cf) = displacement_errors(&constant_velocity(&recs[roll.cur], h, dt), &truth)?;
        ade += a;
        fde += f;
        cv_ade += ca;
        cv_fde += cf;
        ok += 1;
        for k in 0..h {
            pos_sum[k] += roll.poses[k].distance(&truth[k]);
            let (p, o) = (roll.states[k].to_array(), recs[roll.cur + k + 1].state.to_array());
            for c in 0..3 {
                sq_sum[k][c] += (p[c] - o[c]).powi(2);
            }
        }
    }
    let denom = ok.max(1) as f64;
    let trace = (0..h)
        .map(|k| TraceRow {
            step: k + 1,
            t_ms: (k + 1) as f64 * dt * 1000.0,
            mean_position_error: pos_sum[k] / denom,
            rmse_vx: (sq_sum[k][0] / denom).sqrt(),
            rmse_vy: (sq_sum[k][1] / denom).sqrt(),
            rmse_omega: (sq_sum[k][2] / denom).sqrt(),
        })
        .collect();
    let failed = rolls.len() - ok;
    let nan_if_none = |v: f64| if ok == 0 { f64::NAN } else { v / denom };
    Ok(OpenLoopReport {
        label: cfg.label.clone(),
        mode: cfg.mode,
        horizon_ms: cfg.horizon_ms,
        horizon_steps: h,
        n_samples: starts.len(),
        n_rollouts: rolls.len(),
        n_failed: failed,
        rmse: StateMetrics::from_array(r),
        max_error: StateMetrics::from_array(m),
        ade: nan_if_none(ade),
        fde: nan_if_none(fde),
        cv_ade: nan_if_none(cv_ade),
        cv_fde: nan_if_none(cv_fde),
        parameter_count: model.parameter_count(),
        trace,
    })
}

/// Straight-line extrapolation of the world-frame velocity at `rec`.
pub fn constant_velocity(rec: &TelemetryRecord, steps: usize, dt: f64) -> Vec<Pose> {
    let (s, c) = rec.pose.theta.sin_cos();
    let vx = rec.state.vx * c - rec.state.vy * s;
    let vy = rec.state.vx * s + rec.state.vy * c;
    (1..=steps)
        .map(|k| {
            let t = k as f64 * dt;
            Pose::new(rec.pose.x + vx * t, rec.pose.y + vy * t, rec.pose.theta)
        })
        .collect()
}
