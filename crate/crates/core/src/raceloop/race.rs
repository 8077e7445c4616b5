use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::nmpc::{nmpc_solve, Corridor, NmpcConfig, NmpcProblem};
use super::pursuit::{pure_pursuit_from, PurePursuitConfig};
use crate::dynamics::{
    simulate_step, BodyState, ControlInput, ForceTrace, ModelParams, PhysicsMode, Pose,
    VehicleGeometry,
};
use crate::error::{Error, Result};
use crate::estimator::DynamicsModel;
use crate::telemetry::{TelemetryRecord, TrackDefinition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    /// Pure pursuit while the history fills, then NMPC.
    Nmpc,
    /// Pure pursuit throughout; the reference lap for comparisons.
    PurePursuit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaceConfig {
    pub laps: usize,
    pub controller: Controller,
    pub nmpc: NmpcConfig,
    pub pursuit: PurePursuitConfig,
    /// First-order lag between commands and the plant (s).
    pub actuator_tau: f64,
    /// Physics of the simulated plant.
    pub plant_physics: PhysicsMode,
    /// The car starts this far (m) before the start line at the reference
    /// speed, so the timed lap begins with a settled controller.
    pub run_up: f64,
    /// Multiplier on the raceline reference speeds.
    pub speed_scale: f64,
    /// Give up after this many multiples of the reference lap time.
    pub timeout_factor: f64,
    /// Abort when farther than this many half-widths from the centerline.
    pub abort_half_widths: f64,
}

impl Default for RaceConfig {
    fn default() -> Self {
        Self {
            laps: 1,
            controller: Controller::Nmpc,
            nmpc: NmpcConfig::default(),
            pursuit: PurePursuitConfig::default(),
            actuator_tau: 0.05,
            plant_physics: PhysicsMode::Full,
            run_up: 1.0,
            speed_scale: 1.0,
            timeout_factor: 5.0,
            abort_half_widths: 5.0,
        }
    }
}

impl RaceConfig {
    pub fn validate(&self) -> Result<()> {
        self.nmpc.validate()?;
        if self.laps == 0 {
            return Err(Error::Config("laps must be at least 1".into()));
        }
        if self.actuator_tau < 0.0 || self.run_up < 0.0 {
            return Err(Error::Config("actuator_tau and run_up must be non-negative".into()));
        }
        if !(self.speed_scale > 0.0) || !(self.timeout_factor > 0.0) || !(self.abort_half_widths > 1.0) {
            return Err(Error::Config(
                "speed_scale and timeout_factor must be positive, abort_half_widths above 1".into(),
            ));
        }
        if !(self.pursuit.lookahead > 0.0) {
            return Err(Error::Config("pursuit lookahead must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaceTraceRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
    pub throttle_cmd: f64,
    pub steer_cmd: f64,
    pub throttle_applied: f64,
    pub steer_applied: f64,
    /// Signed distance from the centerline, left positive.
    pub offset: f64,
    pub nmpc: bool,
    pub forces: ForceTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapResult {
    pub track: String,
    pub controller: Controller,
    pub completed: bool,
    /// Time of the first full lap; `None` when no lap was completed.
    pub lap_time: Option<f64>,
    pub lap_times: Vec<f64>,
    /// Number of excursions beyond the half-width.
    pub violations: usize,
    pub max_offset: f64,
    pub mean_vx: f64,
    pub mean_vy: f64,
    pub mean_omega: f64,
    pub steps: usize,
    /// Step at which NMPC took over, if it did.
    pub handoff_step: Option<usize>,
    pub nmpc_solves: usize,
    pub nmpc_unconverged: usize,
    pub mean_nmpc_iterations: f64,
    pub abort_reason: Option<String>,
    #[serde(skip)]
    pub trace: Vec<RaceTraceRow>,
}

pub const RACE_TRACE_HEADER: &str = "t,x,y,theta,vx,vy,omega,throttle_cmd,steer_cmd,throttle_applied,steer_applied,offset,nmpc";
pub const FORCE_TRACE_HEADER: &str = "t,frx,ffy,fry,ffz,frz,ffz_raw,frz_raw,alpha_f,alpha_r";

impl LapResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from(RACE_TRACE_HEADER);
        s.push('\n');
        for r in &self.trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.x,
                r.y,
                r.theta,
                r.vx,
                r.vy,
                r.omega,
                r.throttle_cmd,
                r.steer_cmd,
                r.throttle_applied,
                r.steer_applied,
                r.offset,
                u8::from(r.nmpc)
            );
        }
        s
    }

    /// Per-step forces; rows end one step before the trace does.
    pub fn force_csv(&self) -> String {
        let mut s = String::from(FORCE_TRACE_HEADER);
        s.push('\n');
        for r in &self.trace[..self.trace.len().saturating_sub(1)] {
            let f = &r.forces;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.t, f.frx, f.ffy, f.fry, f.ffz, f.frz, f.ffz_raw, f.frz_raw, f.alpha_f, f.alpha_r
            );
        }
        s
    }
}

/// Excursions beyond `half_width`: each transition from inside to outside
/// counts once, however long the car stays out.
pub fn count_violations(offsets: &[f64], half_width: f64) -> usize {
    let mut outside = false;
    let mut n = 0;
    for o in offsets {
        let now = o.abs() > half_width;
        if now && !outside {
            n += 1;
        }
        outside = now;
    }
    n
}

/// Start line: the centerline normal through arc length zero.
#[derive(Debug, Clone, Copy)]
struct StartLine {
    origin: [f64; 2],
    tangent: [f64; 2],
    reach: f64,
}

impl StartLine {
    /// Signed distance along the track direction and distance along the line.
    fn coords(&self, p: [f64; 2]) -> (f64, f64) {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1]];
        let along = d[0] * self.tangent[0] + d[1] * self.tangent[1];
        let across = -d[0] * self.tangent[1] + d[1] * self.tangent[0];
        (along, across)
    }

    /// Fraction of the step `a → b` at which the line is crossed forwards.
    fn crossing(&self, a: [f64; 2], b: [f64; 2]) -> Option<f64> {
        let (da, ca) = self.coords(a);
        let (db, cb) = self.coords(b);
        if da < 0.0 && db >= 0.0 {
            let f = -da / (db - da);
            let across = ca + f * (cb - ca);
            (across.abs() <= self.reach).then_some(f)
        } else {
            None
        }
    }
}

/// Drive `cfg.laps` timed laps on the simulated plant `plant_params`.
///
/// The controller plans with `model`. Pure pursuit drives until `model`'s
/// history window holds that many completed steps, then (for
/// [`Controller::Nmpc`]) NMPC applies the first control of each plan.
/// Commands reach the plant through the configured actuator lag. Leaving
/// the track is counted, not fatal; divergence, or running far off the
/// track or out of time, ends the run with `completed = false`.
pub fn run_race(
    track: &TrackDefinition,
    model: &DynamicsModel,
    plant_params: &ModelParams,
    geom: &VehicleGeometry,
    cfg: &RaceConfig,
) -> Result<LapResult> {
    cfg.validate()?;
    track.validate()?;
    geom.validate()?;
    let tau = model.history_len();
    if tau == 0 {
        return Err(Error::Config("model history length must be positive".into()));
    }
    let scaled = track.with_speed_scale(cfg.speed_scale);
    let corridor = Corridor::from_track(&scaled);
    let center = &corridor.centerline;
    let raceline = &corridor.raceline;
    let length = center.length();
    let dt = cfg.nmpc.dt;
    let blend = if cfg.actuator_tau > 0.0 {
        1.0 - (-dt / cfg.actuator_tau).exp()
    } else {
        1.0
    };

    let (o, t0) = center.point_at(0.0);
    let line = StartLine {
        origin: o,
        tangent: t0,
        reach: 2.0 * track.half_width,
    };
    let (p_start, t_start) = center.point_at(-cfg.run_up);
    let mut pose = Pose::new(p_start[0], p_start[1], t_start[1].atan2(t_start[0]));
    let mut state = BodyState::new(raceline.speed_at(raceline.path.project(p_start).s), 0.0, 0.0);
    let mean_ref = raceline.speeds.iter().sum::<f64>() / raceline.speeds.len() as f64;
    let ref_lap = length / mean_ref.max(1e-6);
    let max_steps = ((cfg.laps as f64 + 1.0) * ref_lap * cfg.timeout_factor / dt).ceil() as usize
        + (cfg.run_up / mean_ref.max(1e-6) / dt) as usize;

    let mut history: Vec<TelemetryRecord> = Vec::new();
    let mut trace = Vec::new();
    let mut c_proj = center.project_near([pose.x, pose.y], center.project(p_start).segment, 8, 1.0);
    let mut r_proj = raceline.path.project([pose.x, pose.y]);
    let mut applied: Option<ControlInput> = None;
    let mut last_cmd = ControlInput::new(0.0, 0.0);
    let mut warm: Option<Vec<ControlInput>> = None;
    let mut crossings: Vec<f64> = Vec::new();
    let mut handoff = None;
    let (mut solves, mut unconverged, mut iters) = (0usize, 0usize, 0usize);
    let mut abort: Option<String> = None;
    let mut lap_window: Option<(usize, usize)> = None;

    for k in 0..=max_steps {
        let t = k as f64 * dt;
        let use_nmpc = cfg.controller == Controller::Nmpc && history.len() >= tau;
        let cmd = if use_nmpc {
            if handoff.is_none() {
                handoff = Some(k);
            }
            let params = model.estimate(&history[history.len() - tau..])?;
            let problem = NmpcProblem {
                state,
                pose,
                params: &params,
                prev_control: last_cmd,
                corridor: &corridor,
                geom,
            };
            match nmpc_solve(&problem, &cfg.nmpc, warm.as_deref()) {
                Ok(sol) => {
                    solves += 1;
                    iters += sol.stats.iterations;
                    if !sol.stats.converged {
                        unconverged += 1;
                    }
                    warm = Some(sol.shifted());
                    sol.first()
                }
                Err(e) => {
                    abort = Some(format!("NMPC failed at step {k}: {e}"));
                    break;
                }
            }
        } else {
            pure_pursuit_from(&pose, &state, raceline, &r_proj, &cfg.pursuit, geom)
        };
        let cmd = cfg.nmpc.bounds.clip(cmd);
        let u = match applied {
            Some(prev) if blend < 1.0 => ControlInput {
                throttle: prev.throttle + blend * (cmd.throttle - prev.throttle),
                steer: prev.steer + blend * (cmd.steer - prev.steer),
            },
            _ => cmd,
        };
        applied = Some(u);
        last_cmd = cmd;

        let step = simulate_step(&state, &pose, &u, plant_params, geom, dt, cfg.plant_physics);
        let (next_state, next_pose, forces) = match step {
            Ok(v) if v.0.is_finite() && v.1.is_finite() => v,
            Ok(_) => {
                abort = Some(format!("plant state became non-finite at step {k}"));
                (state, pose, ForceTrace::default())
            }
            Err(e) => {
                abort = Some(format!("plant step {k} failed: {e}"));
                (state, pose, ForceTrace::default())
            }
        };
        trace.push(RaceTraceRow {
            t,
            x: pose.x,
            y: pose.y,
            theta: pose.theta,
            vx: state.vx,
            vy: state.vy,
            omega: state.omega,
            throttle_cmd: cmd.throttle,
            steer_cmd: cmd.steer,
            throttle_applied: u.throttle,
            steer_applied: u.steer,
            offset: c_proj.offset,
            nmpc: use_nmpc,
            forces,
        });
        history.push(TelemetryRecord {
            t,
            state,
            pose,
            u_fb: u,
            u_cmd: cmd,
        });
        if abort.is_some() {
            break;
        }

        if let Some(f) = line.crossing([pose.x, pose.y], [next_pose.x, next_pose.y]) {
            crossings.push(t + f * dt);
            if crossings.len() == 1 {
                lap_window = Some((k + 1, k + 1));
            }
        }
        state = next_state;
        pose = next_pose;
        c_proj = center.project_near([pose.x, pose.y], c_proj.segment, 8, cfg.abort_half_widths * track.half_width);
        r_proj = raceline.path.project_near([pose.x, pose.y], r_proj.segment, 8, 1.0);
        if let Some(w) = lap_window.as_mut() {
            if crossings.len() <= cfg.laps {
                w.1 = k + 1;
            }
        }
        if c_proj.offset.abs() > cfg.abort_half_widths * track.half_width {
            abort = Some(format!(
                "vehicle left the track by {:.3} m at t = {:.2} s",
                c_proj.offset.abs(),
                t + dt
            ));
            break;
        }
        if crossings.len() > cfg.laps {
            trace.push(RaceTraceRow {
                t: t + dt,
                x: pose.x,
                y: pose.y,
                theta: pose.theta,
                vx: state.vx,
                vy: state.vy,
                omega: state.omega,
                throttle_cmd: f64::NAN,
                steer_cmd: f64::NAN,
                throttle_applied: f64::NAN,
                steer_applied: f64::NAN,
                offset: c_proj.offset,
                nmpc: false,
                forces: ForceTrace::default(),
            });
            break;
        }
        if k == max_steps {
            abort = Some(format!("no lap completed within {:.1} s", (k + 1) as f64 * dt));
        }
    }

    let lap_times: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
    let completed = lap_times.len() >= cfg.laps && abort.is_none();
    let offsets: Vec<f64> = trace.iter().map(|r| r.offset).collect();
    let (a, b) = lap_window.unwrap_or((0, trace.len()));
    let timed = &trace[a.min(trace.len())..b.min(trace.len())];
    let mean = |f: fn(&RaceTraceRow) -> f64| {
        if timed.is_empty() {
            0.0
        } else {
            timed.iter().map(f).sum::<f64>() / timed.len() as f64
        }
    };
    Ok(LapResult {
        track: track.name.clone(),
        controller: cfg.controller,
        completed,
        lap_time: lap_times.first().copied(),
        lap_times,
        violations: count_violations(&offsets, track.half_width),
        max_offset: offsets.iter().fold(0.0, |m, o| m.max(o.abs())),
        mean_vx: mean(|r| r.vx),
        mean_vy: mean(|r| r.vy),
        mean_omega: mean(|r| r.omega),
        steps: trace.len(),
        handoff_step: handoff,
        nmpc_solves: solves,
        nmpc_unconverged: unconverged,
        mean_nmpc_iterations: if solves > 0 {
            iters as f64 / solves as f64
        } else {
            0.0
        },
        abort_reason: abort,
        trace,
    })
}
