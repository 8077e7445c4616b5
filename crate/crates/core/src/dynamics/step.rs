use serde::{Deserialize, Serialize};

use super::forces::{
    axle_loads_unclamped, body_derivative, body_derivative_jacobian, euler_step,
    longitudinal_force, longitudinal_force_partials, pacejka_lateral, pacejka_partials,
    slip_angles, slip_angles_partials,
};
use super::types::{
    wrap_angle, BodyState, ControlInput, ForceTrace, ModelParams, PhysicsMode, Pose,
    VehicleGeometry, N_PARAMS,
};
use crate::error::{Error, Result};

/// Planar body-to-world kinematics with the current body velocities.
pub fn advance_pose(pose: &Pose, state: &BodyState, dt: f64) -> Pose {
    let (s, c) = pose.theta.sin_cos();
    Pose {
        x: pose.x + dt * (state.vx * c - state.vy * s),
        y: pose.y + dt * (state.vx * s + state.vy * c),
        theta: wrap_angle(pose.theta + dt * state.omega),
    }
}

/// Jacobian of [`advance_pose`] w.r.t. `[x, y, theta, vx, vy, omega]`
/// (the angle wrap is treated as identity).
pub fn advance_pose_jacobian(pose: &Pose, state: &BodyState, dt: f64) -> [[f64; 6]; 3] {
    let (s, c) = pose.theta.sin_cos();
    [
        [1.0, 0.0, dt * (-state.vx * s - state.vy * c), dt * c, -dt * s, 0.0],
        [0.0, 1.0, dt * (state.vx * c - state.vy * s), dt * s, dt * c, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, dt],
    ]
}

/// Recorded forward pass of one physics step, replayable in reverse.
#[derive(Debug, Clone)]
pub struct StepTape {
    pub state: BodyState,
    pub pose: Pose,
    pub control: ControlInput,
    pub params: ModelParams,
    pub geom: VehicleGeometry,
    pub dt: f64,
    pub mode: PhysicsMode,
    pub forces: ForceTrace,
    /// Normal loads and reference loads fed to the front/rear tire curves.
    tire_loads: [(f64, f64); 2],
    deriv: [f64; 3],
    pub next_state: BodyState,
    pub next_pose: Pose,
}

/// Gradients of a scalar objective w.r.t. every input of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepAdjoint {
    pub state: [f64; 3],
    pub pose: [f64; 3],
    /// `[throttle, steer]`
    pub control: [f64; 2],
    pub params: [f64; N_PARAMS],
}

impl StepTape {
    pub fn record(
        state: &BodyState,
        pose: &Pose,
        u: &ControlInput,
        params: &ModelParams,
        geom: &VehicleGeometry,
        dt: f64,
        mode: PhysicsMode,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        if !u.is_finite() || !params.is_finite() || !pose.is_finite() {
            return Err(Error::Domain("non-finite step input".into()));
        }
        let pc = &params.pacejka;
        let (alpha_f, alpha_r) = slip_angles(state, u.steer, geom, pc)?;
        let frx = longitudinal_force(state.vx, u.throttle, &params.drivetrain);
        let raw = axle_loads_unclamped(frx, geom);
        let ffz = raw.front.max(geom.load_floor);
        let frz = raw.rear.max(geom.load_floor);
        let tire_loads = match mode {
            PhysicsMode::Full => [(ffz, geom.fz0), (frz, geom.fz0)],
            PhysicsMode::NominalLoad => [(geom.fz0, geom.fz0), (geom.fz0, geom.fz0)],
            PhysicsMode::LoadTransferOnly => {
                let st = geom.static_loads();
                [(ffz, st.front), (frz, st.rear)]
            }
        };
        let ffy = pacejka_lateral(alpha_f, tire_loads[0].0, pc.bf, pc.cf, pc.df, pc.ef, pc.svf, tire_loads[0].1);
        let fry = pacejka_lateral(alpha_r, tire_loads[1].0, pc.br, pc.cr, pc.dr, pc.er, pc.svr, tire_loads[1].1);
        let deriv = body_derivative(state, u.steer, frx, ffy, fry, geom, params.iz);
        let next_state = euler_step(state, &deriv, dt);
        let next_pose = advance_pose(pose, state, dt);
        let (ffz_out, frz_out) = match mode {
            PhysicsMode::NominalLoad => (geom.fz0, geom.fz0),
            _ => (ffz, frz),
        };
        Ok(Self {
            state: *state,
            pose: *pose,
            control: *u,
            params: *params,
            geom: *geom,
            dt,
            mode,
            forces: ForceTrace {
                frx,
                ffy,
                fry,
                ffz: ffz_out,
                frz: frz_out,
                ffz_raw: raw.front,
                frz_raw: raw.rear,
                alpha_f,
                alpha_r,
            },
            tire_loads,
            deriv,
            next_state,
            next_pose,
        })
    }

    pub fn derivative(&self) -> [f64; 3] {
        self.deriv
    }

    /// Reverse-mode sweep: given the adjoints of the next state and next
    /// pose, return the adjoints of every step input.
    pub fn backward(&self, adj_state: [f64; 3], adj_pose: [f64; 3]) -> StepAdjoint {
        let mut out = StepAdjoint::default();
        let s = &self.state;
        let g = &self.geom;
        let pc = &self.params.pacejka;
        let f = &self.forces;

        // pose kinematics
        let jp = advance_pose_jacobian(&self.pose, s, self.dt);
        for (i, row) in jp.iter().enumerate() {
            for j in 0..3 {
                out.pose[j] += adj_pose[i] * row[j];
                out.state[j] += adj_pose[i] * row[3 + j];
            }
        }

        // Euler
        let mut g_deriv = [0.0; 3];
        for i in 0..3 {
            out.state[i] += adj_state[i];
            g_deriv[i] = self.dt * adj_state[i];
        }

        // rigid body
        let jb = body_derivative_jacobian(s, self.control.steer, f.ffy, f.fry, g, self.params.iz);
        let mut cols = [0.0; 8];
        for (i, row) in jb.iter().enumerate() {
            for (c, v) in cols.iter_mut().zip(row) {
                *c += g_deriv[i] * v;
            }
        }
        for i in 0..3 {
            out.state[i] += cols[i];
        }
        out.control[1] += cols[3];
        let mut g_frx = cols[4];
        let g_ffy = cols[5];
        let g_fry = cols[6];
        out.params[16] += cols[7];

        // tires
        let pf = pacejka_partials(
            f.alpha_f, self.tire_loads[0].0, pc.bf, pc.cf, pc.df, pc.ef, pc.svf, self.tire_loads[0].1,
        );
        let pr = pacejka_partials(
            f.alpha_r, self.tire_loads[1].0, pc.br, pc.cr, pc.dr, pc.er, pc.svr, self.tire_loads[1].1,
        );
        let g_alpha_f = g_ffy * pf.alpha;
        let g_alpha_r = g_fry * pr.alpha;
        for (k, v) in [pf.b, pf.c, pf.d, pf.e].into_iter().enumerate() {
            out.params[k] += g_ffy * v;
        }
        for (k, v) in [pr.b, pr.c, pr.d, pr.e].into_iter().enumerate() {
            out.params[4 + k] += g_fry * v;
        }
        out.params[9] += g_ffy * pf.sv;
        out.params[11] += g_fry * pr.sv;

        // load transfer
        if self.mode != PhysicsMode::NominalLoad {
            let l = g.wheelbase();
            if f.ffz_raw > g.load_floor {
                g_frx += g_ffy * pf.fz * (-g.hcg / l);
            }
            if f.frz_raw > g.load_floor {
                g_frx += g_fry * pr.fz * (g.hcg / l);
            }
        }

        // drivetrain
        let lp = longitudinal_force_partials(s.vx, self.control.throttle, &self.params.drivetrain);
        out.state[0] += g_frx * lp.vx;
        out.control[0] += g_frx * lp.throttle;
        for k in 0..4 {
            out.params[12 + k] += g_frx * lp.coeffs[k];
        }

        // slip angles
        let sp = slip_angles_partials(s, g);
        for i in 0..3 {
            out.state[i] += g_alpha_f * sp.front[i] + g_alpha_r * sp.rear[i];
        }
        out.control[1] += g_alpha_f;
        out.params[8] += g_alpha_f;
        out.params[10] += g_alpha_r;
        out
    }
}

/// One physics step: slip → drive force → loads → tires → accelerations →
/// Euler → pose.
pub fn simulate_step(
    state: &BodyState,
    pose: &Pose,
    u: &ControlInput,
    params: &ModelParams,
    geom: &VehicleGeometry,
    dt: f64,
    mode: PhysicsMode,
) -> Result<(BodyState, Pose, ForceTrace)> {
    let tape = StepTape::record(state, pose, u, params, geom, dt, mode)?;
    Ok((tape.next_state, tape.next_pose, tape.forces))
}

/// Parameters used along a rollout.
#[derive(Debug, Clone, Copy)]
pub enum ParamSchedule<'a> {
    Fixed(&'a ModelParams),
    PerStep(&'a [ModelParams]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub state: BodyState,
    pub pose: Pose,
    pub forces: ForceTrace,
}

/// Apply `simulate_step` once per control; the returned trajectory holds the
/// state after each step.
pub fn rollout(
    state0: &BodyState,
    pose0: &Pose,
    controls: &[ControlInput],
    params: ParamSchedule<'_>,
    geom: &VehicleGeometry,
    dt: f64,
    mode: PhysicsMode,
) -> Result<Vec<TrajectoryPoint>> {
    if controls.is_empty() {
        return Err(Error::Domain("rollout needs at least one control".into()));
    }
    if let ParamSchedule::PerStep(p) = params {
        if p.len() != controls.len() {
            return Err(Error::Dimension(format!(
                "{} parameter sets for {} controls",
                p.len(),
                controls.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(controls.len());
    let (mut state, mut pose) = (*state0, *pose0);
    for (k, u) in controls.iter().enumerate() {
        let p = match params {
            ParamSchedule::Fixed(p) => p,
            ParamSchedule::PerStep(ps) => &ps[k],
        };
        let (s, q, forces) = simulate_step(&state, &pose, u, p, geom, dt, mode).map_err(|e| {
            Error::Diverged {
                step: k,
                reason: e.to_string(),
            }
        })?;
        if !s.is_finite() || !q.is_finite() {
            return Err(Error::Diverged {
                step: k,
                reason: "non-finite state".into(),
            });
        }
        state = s;
        pose = q;
        out.push(TrajectoryPoint { state, pose, forces });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn pose_examples() {
        let p = advance_pose(&Pose::default(), &BodyState::new(1.0, 0.0, 0.0), 0.02);
        assert_eq!((p.x, p.y, p.theta), (0.02, 0.0, 0.0));
        let p = advance_pose(&Pose::new(0.0, 0.0, FRAC_PI_2), &BodyState::new(1.0, 0.0, 0.0), 0.02);
        assert!(p.x.abs() < 1e-17 && (p.y - 0.02).abs() < 1e-17);
        let p = advance_pose(&Pose::new(1.0, 2.0, 0.0), &BodyState::new(0.0, 0.0, 1.0), 0.1);
        assert_eq!((p.x, p.y), (1.0, 2.0));
        assert!((p.theta - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rest_with_rolling_resistance() {
        let g = VehicleGeometry::small_scale();
        let p = ModelParams::small_scale_reference();
        let dt = 0.02;
        let (s, _, _) = simulate_step(&BodyState::default(), &Pose::default(), &ControlInput::default(), &p, &g, dt, PhysicsMode::Full).unwrap();
        let expect = -dt * p.drivetrain.cr0 / g.mass;
        assert!((s.vx - expect).abs() < 1e-15, "{} vs {expect}", s.vx);
    }

    #[test]
    fn nonpositive_dt_rejected() {
        let g = VehicleGeometry::small_scale();
        let p = ModelParams::small_scale_reference();
        assert!(simulate_step(&BodyState::default(), &Pose::default(), &ControlInput::default(), &p, &g, 0.0, PhysicsMode::Full).is_err());
    }

    #[test]
    fn modes_coincide_without_load_transfer() {
        // symmetric car, nominal load equal to static axle load, zero drive force
        let mut g = VehicleGeometry::small_scale();
        g.lr = g.lf;
        g.fz0 = 0.5 * g.mass * g.gravity;
        let mut p = ModelParams::small_scale_reference();
        p.drivetrain = Default::default();
        let s = BodyState::new(1.5, 0.05, 0.8);
        let u = ControlInput::new(0.7, 0.1);
        let a = simulate_step(&s, &Pose::default(), &u, &p, &g, 0.02, PhysicsMode::Full).unwrap();
        let b = simulate_step(&s, &Pose::default(), &u, &p, &g, 0.02, PhysicsMode::NominalLoad).unwrap();
        let c = simulate_step(&s, &Pose::default(), &u, &p, &g, 0.02, PhysicsMode::LoadTransferOnly).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.0, c.0);
    }

    #[test]
    fn force_trace_conserves_load() {
        let g = VehicleGeometry::small_scale();
        let p = ModelParams::small_scale_reference();
        let (_, _, f) = simulate_step(&BodyState::new(2.0, 0.1, 1.0), &Pose::default(), &ControlInput::new(-0.8, 0.2), &p, &g, 0.02, PhysicsMode::Full).unwrap();
        let mg = g.mass * g.gravity;
        assert!(((f.ffz_raw + f.frz_raw) - mg).abs() <= 4.0 * f64::EPSILON * mg);
    }

    #[test]
    fn rollout_matches_iteration() {
        let g = VehicleGeometry::small_scale();
        let p = ModelParams::small_scale_reference();
        let controls: Vec<_> = (0..25).map(|k| ControlInput::new(0.3, 0.1 * (k as f64 * 0.3).sin())).collect();
        let s0 = BodyState::new(1.0, 0.0, 0.0);
        let traj = rollout(&s0, &Pose::default(), &controls, ParamSchedule::Fixed(&p), &g, 0.02, PhysicsMode::Full).unwrap();
        let (mut s, mut q) = (s0, Pose::default());
        for (k, u) in controls.iter().enumerate() {
            let (ns, nq, _) = simulate_step(&s, &q, u, &p, &g, 0.02, PhysicsMode::Full).unwrap();
            s = ns;
            q = nq;
            assert_eq!(traj[k].state, s);
            assert_eq!(traj[k].pose, q);
        }
    }

    #[test]
    fn coasting_decays() {
        let g = VehicleGeometry::small_scale();
        let p = ModelParams::small_scale_reference();
        let controls = vec![ControlInput::default(); 40];
        let traj = rollout(&BodyState::new(2.0, 0.0, 0.0), &Pose::default(), &controls, ParamSchedule::Fixed(&p), &g, 0.02, PhysicsMode::Full).unwrap();
        let mut prev = 2.0;
        for pt in &traj {
            assert!(pt.state.vx < prev);
            prev = pt.state.vx;
        }
    }

    #[test]
    fn rollout_errors() {
        let g = VehicleGeometry::small_scale();
        let p = ModelParams::small_scale_reference();
        assert!(rollout(&BodyState::default(), &Pose::default(), &[], ParamSchedule::Fixed(&p), &g, 0.02, PhysicsMode::Full).is_err());
        let mut bad = p;
        bad.iz = 1e-300;
        let controls = vec![ControlInput::new(1.0, 0.4); 200];
        let err = rollout(&BodyState::new(2.0, 0.0, 0.0), &Pose::default(), &controls, ParamSchedule::Fixed(&bad), &g, 0.02, PhysicsMode::Full).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }
}
