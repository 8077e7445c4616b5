use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::series::{Source, TelemetryRecord, TelemetrySeries};
use super::track::TrackDefinition;
use crate::dynamics::{
    BodyState, ControlInput, ForceTrace, ModelParams, PhysicsMode, Pose, StepTape,
    VehicleGeometry,
};
use crate::error::{Error, Result};
use crate::raceloop::{pure_pursuit_from, PurePursuitConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub rate_hz: f64,
    pub laps: usize,
    /// Time constant of the first-order actuator response (s); 0 applies
    /// commands unchanged.
    pub actuator_tau: f64,
    pub pursuit: PurePursuitConfig,
    /// Half-width of the uniform excitation noise added to throttle commands.
    pub throttle_noise: f64,
    /// Half-width of the uniform excitation noise added to steering commands (rad).
    pub steer_noise: f64,
    /// Multiplier on the raceline reference speeds.
    pub speed_scale: f64,
    /// Generation fails if `|vx|` exceeds this (m/s).
    pub v_max: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            rate_hz: 50.0,
            laps: 3,
            actuator_tau: 0.05,
            pursuit: PurePursuitConfig::default(),
            throttle_noise: 0.15,
            steer_noise: 0.05,
            speed_scale: 1.0,
            v_max: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub series: TelemetrySeries,
    /// Record index at which each lap begins.
    pub lap_starts: Vec<usize>,
    /// Forces of the step taken from each record (the last record has none).
    pub forces: Vec<ForceTrace>,
}

/// Closed-loop pure-pursuit driving of the full-physics model around
/// `track`. Commands carry seeded excitation noise and reach the vehicle
/// through a first-order lag; both are recorded.
pub fn generate_synthetic(
    track: &TrackDefinition,
    true_params: &ModelParams,
    geom: &VehicleGeometry,
    cfg: &GeneratorConfig,
) -> Result<GeneratedData> {
    if !(cfg.rate_hz > 0.0) || cfg.actuator_tau < 0.0 {
        return Err(Error::Config("rate_hz must be positive and actuator_tau non-negative".into()));
    }
    geom.validate()?;
    let dt = 1.0 / cfg.rate_hz;
    let mut series = TelemetrySeries {
        records: Vec::new(),
        rate_hz: cfg.rate_hz,
        source: Source::Synthetic,
    };
    if cfg.laps == 0 {
        return Ok(GeneratedData {
            series,
            lap_starts: Vec::new(),
            forces: Vec::new(),
        });
    }
    let raceline = track.with_speed_scale(cfg.speed_scale).raceline_ref();
    let center = track.centerline_path();
    let length = center.length();
    let blend = if cfg.actuator_tau > 0.0 {
        1.0 - (-dt / cfg.actuator_tau).exp()
    } else {
        1.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let (p0, t0) = center.point_at(0.0);
    let mut pose = Pose::new(p0[0], p0[1], t0[1].atan2(t0[0]));
    let mut state = BodyState::new(raceline.speed_at(0.0), 0.0, 0.0);
    let mut c_proj = center.project([pose.x, pose.y]);
    let mut r_proj = raceline.path.project([pose.x, pose.y]);
    let mut progress = 0.0;
    let mut lap_starts = vec![0];
    let mut forces = Vec::new();
    let mut fb: Option<ControlInput> = None;
    // generous cap: ten times the laps at a crawl of 0.2 m/s
    let max_steps = (10.0 * cfg.laps as f64 * length / (0.2 * dt)) as usize;

    for k in 0.. {
        let base = pure_pursuit_from(&pose, &state, &raceline, &r_proj, &cfg.pursuit, geom);
        let noisy = ControlInput {
            throttle: base.throttle + noise(&mut rng, cfg.throttle_noise),
            steer: base.steer + noise(&mut rng, cfg.steer_noise),
        };
        let cmd = cfg.pursuit.bounds.clip(noisy);
        let applied = match fb {
            _ if blend == 1.0 => cmd,
            None => cmd,
            Some(prev) => ControlInput {
                throttle: prev.throttle + blend * (cmd.throttle - prev.throttle),
                steer: prev.steer + blend * (cmd.steer - prev.steer),
            },
        };
        fb = Some(applied);
        series.records.push(TelemetryRecord {
            t: k as f64 * dt,
            state,
            pose,
            u_fb: applied,
            u_cmd: cmd,
        });
        if progress >= cfg.laps as f64 * length {
            break;
        }
        if k >= max_steps {
            return Err(Error::Diverged {
                step: k,
                reason: "vehicle is not making progress along the track".into(),
            });
        }

        let tape = StepTape::record(&state, &pose, &applied, true_params, geom, dt, PhysicsMode::Full)?;
        forces.push(tape.forces);
        state = tape.next_state;
        pose = tape.next_pose;
        if !state.is_finite() || !pose.is_finite() || state.vx.abs() > cfg.v_max {
            return Err(Error::Diverged {
                step: k + 1,
                reason: format!("state left the admissible range: {state:?}"),
            });
        }

        let next = center.project_near([pose.x, pose.y], c_proj.segment, 8, 5.0 * track.half_width);
        if next.offset.abs() > 5.0 * track.half_width {
            return Err(Error::Diverged {
                step: k + 1,
                reason: format!(
                    "vehicle is {:.3} m from the centerline (more than 5 half-widths)",
                    next.offset.abs()
                ),
            });
        }
        let mut ds = next.s - c_proj.s;
        ds -= length * (ds / length).round();
        progress += ds;
        c_proj = next;
        r_proj = raceline.path.project_near([pose.x, pose.y], r_proj.segment, 8, 1.0);
        if lap_starts.len() < cfg.laps && progress >= lap_starts.len() as f64 * length {
            lap_starts.push(k + 1);
        }
    }
    Ok(GeneratedData {
        series,
        lap_starts,
        forces,
    })
}

fn noise(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(-half_width..=half_width)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rollout, ParamSchedule};

    fn quick(laps: usize, tau: f64) -> GeneratedData {
        let cfg = GeneratorConfig {
            laps,
            actuator_tau: tau,
            ..GeneratorConfig::default()
        };
        generate_synthetic(
            &TrackDefinition::bundled("train-track").unwrap(),
            &ModelParams::small_scale_reference(),
            &VehicleGeometry::small_scale(),
            &cfg,
        )
        .unwrap()
    }

    #[test]
    fn zero_laps_is_empty() {
        let d = quick(0, 0.05);
        assert!(d.series.is_empty());
        assert!(d.lap_starts.is_empty());
    }

    #[test]
    fn one_lap_is_sane() {
        let d = quick(1, 0.05);
        let s = &d.series;
        s.validate().unwrap();
        assert_eq!(d.lap_starts, vec![0]);
        assert_eq!(d.forces.len(), s.len() - 1);
        let secs = s.records.last().unwrap().t;
        assert!(secs > 3.0 && secs < 10.0, "lap took {secs} s");
        let g = VehicleGeometry::small_scale();
        for f in &d.forces {
            let sum = f.ffz_raw + f.frz_raw;
            assert!((sum - g.mass * g.gravity).abs() <= 4.0 * f64::EPSILON * sum);
        }
        // the lag makes the applied input differ from the command
        assert!(s.records.iter().any(|r| (r.u_fb.steer - r.u_cmd.steer).abs() > 1e-3));
    }

    #[test]
    fn replay_reproduces_states() {
        let d = quick(1, 0.05);
        let recs = &d.series.records;
        let controls: Vec<ControlInput> = recs[..recs.len() - 1].iter().map(|r| r.u_fb).collect();
        let traj = rollout(
            &recs[0].state,
            &recs[0].pose,
            &controls,
            ParamSchedule::Fixed(&ModelParams::small_scale_reference()),
            &VehicleGeometry::small_scale(),
            0.02,
            PhysicsMode::Full,
        )
        .unwrap();
        for (p, r) in traj.iter().zip(&recs[1..]) {
            assert!((p.state.vx - r.state.vx).abs() <= 1e-9);
            assert!((p.state.vy - r.state.vy).abs() <= 1e-9);
            assert!((p.state.omega - r.state.omega).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_tau_applies_command() {
        let d = quick(1, 0.0);
        assert!(d.series.records.iter().all(|r| r.u_fb == r.u_cmd));
    }

    #[test]
    fn deterministic_and_lap_aligned() {
        let a = quick(2, 0.05);
        let b = quick(2, 0.05);
        assert_eq!(a, b);
        assert_eq!(a.lap_starts.len(), 2);
        let detected = crate::telemetry::detect_laps(
            &a.series,
            &TrackDefinition::bundled("train-track").unwrap().centerline_path(),
        );
        assert_eq!(&detected[..2], &a.lap_starts[..]);
    }
}
