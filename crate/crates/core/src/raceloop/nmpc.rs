use serde::{Deserialize, Serialize};

use super::pursuit::InputBounds;
use crate::dynamics::{
    wrap_angle, BodyState, ControlInput, ModelParams, PhysicsMode, Pose, StepTape, VehicleGeometry,
};
use crate::error::{Error, Result};
use crate::telemetry::{Polyline, Projection, Raceline, TrackDefinition};

/// Penalty weights of the receding-horizon cost. All terms are summed over
/// the predicted steps `1..=horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmpcWeights {
    /// Squared lateral offset from the raceline (per m²).
    pub lateral: f64,
    /// Squared heading error against the raceline tangent.
    pub heading: f64,
    /// Squared error to the raceline reference speed.
    pub speed: f64,
    /// Reward per metre of arc progress at the end of the horizon.
    pub progress: f64,
    pub throttle_effort: f64,
    pub steer_effort: f64,
    /// Squared change between consecutive throttle commands.
    pub throttle_rate: f64,
    pub steer_rate: f64,
    /// Squared hinge on leaving the centerline corridor.
    pub boundary: f64,
}

impl Default for NmpcWeights {
    fn default() -> Self {
        Self {
            lateral: 50.0,
            heading: 1.0,
            speed: 1.0,
            progress: 0.0,
            throttle_effort: 0.0,
            steer_effort: 0.01,
            throttle_rate: 0.05,
            steer_rate: 0.5,
            boundary: 2000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub weights: NmpcWeights,
    pub bounds: InputBounds,
    /// The boundary penalty starts this far inside the track edge (m).
    pub boundary_margin: f64,
    pub max_iter: usize,
    /// Stop once the projected-gradient step is below this in every entry.
    pub tol: f64,
    pub physics: PhysicsMode,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            dt: 0.02,
            weights: NmpcWeights::default(),
            bounds: InputBounds::default(),
            boundary_margin: 0.05,
            max_iter: 40,
            tol: 1e-6,
            physics: PhysicsMode::Full,
        }
    }
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let ws = [
            w.lateral,
            w.heading,
            w.speed,
            w.progress,
            w.throttle_effort,
            w.steer_effort,
            w.throttle_rate,
            w.steer_rate,
            w.boundary,
        ];
        if self.horizon == 0 {
            return Err(Error::Config("NMPC horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("NMPC dt must be positive".into()));
        }
        if ws.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("NMPC weights must be non-negative".into()));
        }
        if !self.bounds.is_valid() {
            return Err(Error::Config("input bounds are empty".into()));
        }
        if !(self.tol >= 0.0) || !(self.boundary_margin >= 0.0) {
            return Err(Error::Config("tol and boundary_margin must be non-negative".into()));
        }
        Ok(())
    }
}

/// Reference geometry seen by the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub raceline: Raceline,
    pub centerline: Polyline,
    pub half_width: f64,
}

impl Corridor {
    pub fn from_track(track: &TrackDefinition) -> Self {
        Self {
            raceline: track.raceline_ref(),
            centerline: track.centerline_path(),
            half_width: track.half_width,
        }
    }
}

/// One receding-horizon problem: the current measurement, the coefficients
/// the plan is built on, and the last command sent.
#[derive(Debug, Clone, Copy)]
pub struct NmpcProblem<'a> {
    pub state: BodyState,
    pub pose: Pose,
    pub params: &'a ModelParams,
    pub prev_control: ControlInput,
    pub corridor: &'a Corridor,
    pub geom: &'a VehicleGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartPoint {
    Warm,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub converged: bool,
    pub start: StartPoint,
    pub zero_cost: f64,
    pub initial_cost: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcSolution {
    pub plan: Vec<ControlInput>,
    /// Predicted `(state, pose)` after each planned control.
    pub predicted: Vec<(BodyState, Pose)>,
    pub stats: SolveStats,
}

impl NmpcSolution {
    pub fn first(&self) -> ControlInput {
        self.plan[0]
    }

    /// The plan advanced by one step, repeating the last control; the usual
    /// warm start for the next solve.
    pub fn shifted(&self) -> Vec<ControlInput> {
        let mut v = self.plan[1..].to_vec();
        v.push(*self.plan.last().unwrap());
        v
    }
}

/// Receding-horizon cost of a control sequence.
pub fn plan_cost(problem: &NmpcProblem<'_>, plan: &[ControlInput], cfg: &NmpcConfig) -> Result<f64> {
    Ok(evaluate(problem, plan, cfg, false)?.0)
}

/// Cost and its gradient with respect to `[throttle, steer]` of each control.
pub fn plan_cost_and_grad(
    problem: &NmpcProblem<'_>,
    plan: &[ControlInput],
    cfg: &NmpcConfig,
) -> Result<(f64, Vec<[f64; 2]>)> {
    let (c, g) = evaluate(problem, plan, cfg, true)?;
    Ok((c, g.expect("gradient requested")))
}

fn evaluate(
    problem: &NmpcProblem<'_>,
    plan: &[ControlInput],
    cfg: &NmpcConfig,
    want_grad: bool,
) -> Result<(f64, Option<Vec<[f64; 2]>>)> {
    let w = &cfg.weights;
    let cor = problem.corridor;
    let n = plan.len();
    let mut tapes = Vec::with_capacity(n);
    let (mut state, mut pose) = (problem.state, problem.pose);
    for u in plan {
        let tape = StepTape::record(&state, &pose, u, problem.params, problem.geom, cfg.dt, cfg.physics)?;
        state = tape.next_state;
        pose = tape.next_pose;
        if !state.is_finite() || !pose.is_finite() {
            return Err(Error::Solver("non-finite predicted state".into()));
        }
        tapes.push(tape);
    }

    let mut cost = 0.0;
    // cost adjoints on the state/pose after each step
    let mut d_state = vec![[0.0; 3]; n];
    let mut d_pose = vec![[0.0; 3]; n];
    let mut d_u = vec![[0.0; 2]; n];

    let start = cor.raceline.path.project([problem.pose.x, problem.pose.y]);
    let mut r_hint = start.segment;
    let mut c_hint = cor
        .centerline
        .project([problem.pose.x, problem.pose.y])
        .segment;
    let mut last_r: Option<Projection> = None;
    for (k, tape) in tapes.iter().enumerate() {
        let (x, p) = (tape.next_state, tape.next_pose);
        let pr = cor.raceline.path.project_near([p.x, p.y], r_hint, 8, 0.5);
        r_hint = pr.segment;
        let t = pr.tangent;
        let normal = [-t[1], t[0]];

        let e = pr.offset;
        cost += w.lateral * e * e;
        d_pose[k][0] += 2.0 * w.lateral * e * normal[0];
        d_pose[k][1] += 2.0 * w.lateral * e * normal[1];

        let eh = wrap_angle(p.theta - t[1].atan2(t[0]));
        cost += w.heading * eh * eh;
        d_pose[k][2] += 2.0 * w.heading * eh;

        let (v_ref, dv_ds) = speed_and_slope(&cor.raceline, &pr);
        let ev = x.vx - v_ref;
        cost += w.speed * ev * ev;
        d_state[k][0] += 2.0 * w.speed * ev;
        d_pose[k][0] -= 2.0 * w.speed * ev * dv_ds * t[0];
        d_pose[k][1] -= 2.0 * w.speed * ev * dv_ds * t[1];

        let pc = cor.centerline.project_near([p.x, p.y], c_hint, 8, 0.5);
        c_hint = pc.segment;
        let limit = cor.half_width - cfg.boundary_margin;
        let excess = pc.offset.abs() - limit;
        if excess > 0.0 {
            cost += w.boundary * excess * excess;
            let g = 2.0 * w.boundary * excess * pc.offset.signum();
            let cn = [-pc.tangent[1], pc.tangent[0]];
            d_pose[k][0] += g * cn[0];
            d_pose[k][1] += g * cn[1];
        }
        last_r = Some(pr);
    }
    if let Some(pr) = last_r {
        if w.progress > 0.0 {
            let prog = cor.raceline.path.forward_distance(start.s, pr.s);
            cost -= w.progress * prog;
            d_pose[n - 1][0] -= w.progress * pr.tangent[0];
            d_pose[n - 1][1] -= w.progress * pr.tangent[1];
        }
    }

    let mut prev = problem.prev_control;
    for (k, u) in plan.iter().enumerate() {
        cost += w.throttle_effort * u.throttle * u.throttle + w.steer_effort * u.steer * u.steer;
        d_u[k][0] += 2.0 * w.throttle_effort * u.throttle;
        d_u[k][1] += 2.0 * w.steer_effort * u.steer;
        let (dt_, ds_) = (u.throttle - prev.throttle, u.steer - prev.steer);
        cost += w.throttle_rate * dt_ * dt_ + w.steer_rate * ds_ * ds_;
        d_u[k][0] += 2.0 * w.throttle_rate * dt_;
        d_u[k][1] += 2.0 * w.steer_rate * ds_;
        if k > 0 {
            d_u[k - 1][0] -= 2.0 * w.throttle_rate * dt_;
            d_u[k - 1][1] -= 2.0 * w.steer_rate * ds_;
        }
        prev = *u;
    }
    if !cost.is_finite() {
        return Err(Error::Solver("non-finite plan cost".into()));
    }
    if !want_grad {
        return Ok((cost, None));
    }

    let mut adj_s = [0.0; 3];
    let mut adj_p = [0.0; 3];
    for k in (0..n).rev() {
        for i in 0..3 {
            adj_s[i] += d_state[k][i];
            adj_p[i] += d_pose[k][i];
        }
        let a = tapes[k].backward(adj_s, adj_p);
        d_u[k][0] += a.control[0];
        d_u[k][1] += a.control[1];
        adj_s = a.state;
        adj_p = a.pose;
    }
    Ok((cost, Some(d_u)))
}

/// Reference speed at a projection and its derivative along the arc.
fn speed_and_slope(raceline: &Raceline, pr: &Projection) -> (f64, f64) {
    let path = &raceline.path;
    let n = raceline.speeds.len();
    let i = pr.segment;
    let j = (i + 1) % n;
    let (a, b) = (path.points()[i], path.points()[j % path.points().len()]);
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let v = raceline.speed_at(pr.s);
    let slope = if len > 0.0 {
        (raceline.speeds[j] - raceline.speeds[i]) / len
    } else {
        0.0
    };
    (v, slope)
}

fn project_box(u: &[f64], bounds: &InputBounds) -> Vec<f64> {
    u.chunks(2)
        .flat_map(|c| {
            [
                c[0].clamp(bounds.throttle_min, bounds.throttle_max),
                c[1].clamp(-bounds.steer_max, bounds.steer_max),
            ]
        })
        .collect()
}

fn to_controls(u: &[f64]) -> Vec<ControlInput> {
    u.chunks(2).map(|c| ControlInput::new(c[0], c[1])).collect()
}

fn flatten(plan: &[ControlInput]) -> Vec<f64> {
    plan.iter().flat_map(|u| [u.throttle, u.steer]).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Single-shooting solve by projected gradient descent with a
/// Barzilai-Borwein step and Armijo backtracking. The search starts from the
/// cheaper of the warm start and the all-zero plan and never accepts an
/// increase, so the returned cost is at most that of either candidate.
pub fn nmpc_solve(
    problem: &NmpcProblem<'_>,
    cfg: &NmpcConfig,
    warm: Option<&[ControlInput]>,
) -> Result<NmpcSolution> {
    cfg.validate()?;
    let h = cfg.horizon;
    let zero_plan = cfg.bounds.clip(ControlInput::new(0.0, 0.0));
    let zero = vec![zero_plan; h];
    let zero_cost = plan_cost(problem, &zero, cfg).unwrap_or(f64::INFINITY);

    let mut start = StartPoint::Zero;
    let mut u = flatten(&zero);
    let mut cost = zero_cost;
    if let Some(w) = warm {
        if w.len() != h {
            return Err(Error::Dimension(format!("warm start has {} controls, horizon is {h}", w.len())));
        }
        let w: Vec<ControlInput> = w.iter().map(|c| cfg.bounds.clip(*c)).collect();
        if let Ok(c) = plan_cost(problem, &w, cfg) {
            if c <= cost {
                start = StartPoint::Warm;
                u = flatten(&w);
                cost = c;
            }
        }
    }
    if !cost.is_finite() {
        return Err(Error::Solver("no finite starting plan".into()));
    }
    let initial_cost = cost;

    let (_, g0) = plan_cost_and_grad(problem, &to_controls(&u), cfg)?;
    let mut g = flatten_grad(&g0);
    let mut alpha = 1e-2;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let stationarity = project_box(
            &u.iter().zip(&g).map(|(x, d)| x - d).collect::<Vec<_>>(),
            &cfg.bounds,
        )
        .iter()
        .zip(&u)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
        if stationarity <= cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut accepted = None;
        let mut step = alpha;
        for _ in 0..40 {
            let cand = project_box(
                &u.iter().zip(&g).map(|(x, d)| x - step * d).collect::<Vec<_>>(),
                &cfg.bounds,
            );
            let delta: Vec<f64> = cand.iter().zip(&u).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &delta);
            if let Ok(c) = plan_cost(problem, &to_controls(&cand), cfg) {
                if c <= cost + 1e-4 * decrease {
                    accepted = Some((cand, delta, c));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, s, c)) = accepted else {
            // no descent along the projected gradient at machine scale
            converged = true;
            break;
        };
        let (_, g_new) = plan_cost_and_grad(problem, &to_controls(&cand), cfg)?;
        let g_new = flatten_grad(&g_new);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        alpha = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(1e-8, 1e3)
        } else {
            (step * 2.0).min(1e3)
        };
        u = cand;
        g = g_new;
        cost = c;
    }

    let plan = to_controls(&u);
    let mut predicted = Vec::with_capacity(h);
    let (mut state, mut pose) = (problem.state, problem.pose);
    for c in &plan {
        let tape = StepTape::record(&state, &pose, c, problem.params, problem.geom, cfg.dt, cfg.physics)?;
        state = tape.next_state;
        pose = tape.next_pose;
        predicted.push((state, pose));
    }
    Ok(NmpcSolution {
        plan,
        predicted,
        stats: SolveStats {
            iterations,
            converged,
            start,
            zero_cost,
            initial_cost,
            cost,
        },
    })
}

fn flatten_grad(g: &[[f64; 2]]) -> Vec<f64> {
    g.iter().flat_map(|d| *d).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::Polyline;

    fn straight() -> Corridor {
        let pts: Vec<[f64; 2]> = (0..200).map(|i| [i as f64 * 0.05, 0.0]).collect();
        let path = Polyline::new(pts.clone(), false);
        Corridor {
            raceline: Raceline {
                path: path.clone(),
                speeds: vec![1.5; pts.len()],
            },
            centerline: path,
            half_width: 0.3,
        }
    }

    fn problem<'a>(cor: &'a Corridor, params: &'a ModelParams, geom: &'a VehicleGeometry) -> NmpcProblem<'a> {
        NmpcProblem {
            state: BodyState::new(1.5, 0.0, 0.0),
            pose: Pose::new(1.0, 0.0, 0.0),
            params,
            prev_control: ControlInput::new(0.0, 0.0),
            corridor: cor,
            geom,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cor = straight();
        let params = ModelParams::small_scale_reference();
        let geom = VehicleGeometry::small_scale();
        let mut pb = problem(&cor, &params, &geom);
        pb.pose = Pose::new(1.0, 0.05, 0.1);
        let cfg = NmpcConfig {
            horizon: 6,
            weights: NmpcWeights {
                progress: 0.3,
                throttle_effort: 0.1,
                ..NmpcWeights::default()
            },
            boundary_margin: 0.26,
            ..NmpcConfig::default()
        };
        let plan: Vec<ControlInput> = (0..6)
            .map(|k| ControlInput::new(0.2 + 0.05 * k as f64, -0.1 + 0.03 * k as f64))
            .collect();
        let (_, g) = plan_cost_and_grad(&pb, &plan, &cfg).unwrap();
        for k in 0..6 {
            for j in 0..2 {
                let h = 1e-6;
                let bump = |d: f64| {
                    let mut p = plan.clone();
                    if j == 0 {
                        p[k].throttle += d;
                    } else {
                        p[k].steer += d;
                    }
                    plan_cost(&pb, &p, &cfg).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let err = (fd - g[k][j]).abs() / fd.abs().max(g[k][j].abs()).max(1e-3);
                assert!(err < 1e-4, "k {k} j {j}: fd {fd} analytic {}", g[k][j]);
            }
        }
    }

    #[test]
    fn straight_line_needs_no_steering() {
        let cor = straight();
        // shift terms make the tires asymmetric; without them the problem is
        // mirror-symmetric and zero steering is stationary
        let mut params = ModelParams::small_scale_reference();
        params.pacejka.shf = 0.0;
        params.pacejka.svf = 0.0;
        params.pacejka.shr = 0.0;
        params.pacejka.svr = 0.0;
        let geom = VehicleGeometry::small_scale();
        let sol = nmpc_solve(&problem(&cor, &params, &geom), &NmpcConfig::default(), None).unwrap();
        for u in &sol.plan {
            assert!(u.steer.abs() <= 1e-3, "steer {}", u.steer);
        }
        assert!(sol.stats.cost <= sol.stats.zero_cost);
    }

    #[test]
    fn warm_start_is_no_slower() {
        let cor = straight();
        let params = ModelParams::small_scale_reference();
        let geom = VehicleGeometry::small_scale();
        let mut pb = problem(&cor, &params, &geom);
        pb.pose = Pose::new(1.0, 0.08, -0.05);
        let cfg = NmpcConfig::default();
        let cold = nmpc_solve(&pb, &cfg, None).unwrap();
        let warm = nmpc_solve(&pb, &cfg, Some(&cold.plan)).unwrap();
        assert!(warm.stats.iterations <= cold.stats.iterations);
        assert!(warm.stats.cost <= cold.stats.cost);
        assert!(cold.stats.cost <= cold.stats.zero_cost);
        assert!(cold.plan.iter().all(|u| cfg.bounds.contains(u)));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = NmpcConfig {
            horizon: 0,
            ..NmpcConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
