//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackdyn::dynamics::*;
use trackdyn::estimator::batch_loss_and_grad;
use trackdyn::guard::{project, project_slot, project_slot_grad, BoundsProfile, ProfileName};
use trackdyn::nn::{mish, mish_grad, Mode, Network, NetworkConfig, Tensor};
use trackdyn::telemetry::{generate_synthetic, make_windows, GeneratorConfig, SampleWindow, TrackDefinition};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worst relative error between analytic and central-difference gradients
/// of one component, over all random points.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: &'static str,
    pub points: usize,
    pub max_rel_err: f64,
}

/// Mismatch of two gradient vectors; entries small compared to the largest
/// one are judged against that scale so rounding noise does not dominate.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central difference of `f` at `x` in every coordinate, with a step
/// relative to each coordinate's magnitude.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    central_diff_with(f, x, |v| 1e-6 * v.abs().max(1e-3))
}

pub fn central_diff_with(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step(x[i]);
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn random_state(r: &mut ChaCha8Rng) -> BodyState {
    BodyState::new(r.gen_range(0.5..3.0), r.gen_range(-0.2..0.2), r.gen_range(-2.0..2.0))
}

fn random_params(r: &mut ChaCha8Rng) -> ModelParams {
    let profile = BoundsProfile::builtin(ProfileName::Sim);
    let z: [f64; N_PARAMS] = std::array::from_fn(|_| r.gen_range(-2.0..2.0));
    project(&z, &profile).unwrap().params
}

fn check(name: &'static str, points: usize, mut one: impl FnMut(&mut ChaCha8Rng) -> f64, seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let max_rel_err = (0..points).map(|_| one(&mut r)).fold(0.0, f64::max);
    GradCheck {
        name,
        points,
        max_rel_err,
    }
}

pub fn slip_check(points: usize) -> GradCheck {
    let geom = VehicleGeometry::small_scale();
    check(
        "slip angles",
        points,
        |r| {
            let s = random_state(r);
            let c = PacejkaCoeffs::default();
            let p = slip_angles_partials(&s, &geom);
            let x = s.to_array();
            let mut worst = 0.0f64;
            for (k, analytic) in [p.front, p.rear].iter().enumerate() {
                let fd = central_diff(
                    &mut |v| {
                        let a = slip_angles(&BodyState::new(v[0], v[1], v[2]), 0.1, &geom, &c).unwrap();
                        if k == 0 { a.0 } else { a.1 }
                    },
                    &x,
                );
                worst = worst.max(rel_err(analytic, &fd));
            }
            worst
        },
        1,
    )
}

pub fn longitudinal_check(points: usize) -> GradCheck {
    check(
        "longitudinal force",
        points,
        |r| {
            let x = [
                r.gen_range(0.0..3.0),
                r.gen_range(-1.0..1.0),
                r.gen_range(0.0..12.0),
                r.gen_range(0.0..1.0),
                r.gen_range(0.0..1.0),
                r.gen_range(0.0..1.0),
            ];
            let f = |v: &[f64]| {
                longitudinal_force(v[0], v[1], &DrivetrainCoeffs { cm1: v[2], cm2: v[3], cr0: v[4], cr2: v[5] })
            };
            let p = longitudinal_force_partials(
                x[0],
                x[1],
                &DrivetrainCoeffs { cm1: x[2], cm2: x[3], cr0: x[4], cr2: x[5] },
            );
            let analytic = [p.vx, p.throttle, p.coeffs[0], p.coeffs[1], p.coeffs[2], p.coeffs[3]];
            rel_err(&analytic, &central_diff(&mut |v| f(v), &x))
        },
        2,
    )
}

pub fn pacejka_check(points: usize) -> GradCheck {
    check(
        "pacejka lateral force",
        points,
        |r| {
            // alpha, fz, B, C, D, E, Sv
            let x = [
                r.gen_range(-0.3..0.3),
                r.gen_range(0.5..3.0),
                r.gen_range(5.0..30.0),
                r.gen_range(0.5..2.0),
                r.gen_range(0.1..0.9),
                r.gen_range(-2.0..0.0),
                r.gen_range(-0.003..0.003),
            ];
            let fz0 = 1.5;
            let p = pacejka_partials(x[0], x[1], x[2], x[3], x[4], x[5], x[6], fz0);
            let analytic = [p.alpha, p.fz, p.b, p.c, p.d, p.e, p.sv];
            let fd = central_diff(&mut |v| pacejka_lateral(v[0], v[1], v[2], v[3], v[4], v[5], v[6], fz0), &x);
            rel_err(&analytic, &fd)
        },
        3,
    )
}

pub fn body_derivative_check(points: usize) -> GradCheck {
    let geom = VehicleGeometry::small_scale();
    check(
        "body accelerations",
        points,
        |r| {
            // vx, vy, omega, delta, Frx, Ffy, Fry, Iz
            let x = [
                r.gen_range(0.5..3.0),
                r.gen_range(-0.2..0.2),
                r.gen_range(-2.0..2.0),
                r.gen_range(-0.4..0.4),
                r.gen_range(-2.0..2.0),
                r.gen_range(-2.0..2.0),
                r.gen_range(-2.0..2.0),
                r.gen_range(1.4e-5..5.6e-5),
            ];
            let jac = body_derivative_jacobian(&BodyState::new(x[0], x[1], x[2]), x[3], x[5], x[6], &geom, x[7]);
            (0..3)
                .map(|row| {
                    let fd = central_diff(
                        &mut |v| body_derivative(&BodyState::new(v[0], v[1], v[2]), v[3], v[4], v[5], v[6], &geom, v[7])[row],
                        &x,
                    );
                    rel_err(&jac[row], &fd)
                })
                .fold(0.0, f64::max)
        },
        4,
    )
}

pub fn pose_check(points: usize) -> GradCheck {
    check(
        "pose kinematics",
        points,
        |r| {
            let x = [
                r.gen_range(-5.0..5.0),
                r.gen_range(-5.0..5.0),
                r.gen_range(-2.5..2.5),
                r.gen_range(0.5..3.0),
                r.gen_range(-0.2..0.2),
                r.gen_range(-2.0..2.0),
            ];
            let jac = advance_pose_jacobian(&Pose::new(x[0], x[1], x[2]), &BodyState::new(x[3], x[4], x[5]), 0.02);
            (0..3)
                .map(|row| {
                    let fd = central_diff(
                        &mut |v| {
                            let p = advance_pose(&Pose::new(v[0], v[1], v[2]), &BodyState::new(v[3], v[4], v[5]), 0.02);
                            [p.x, p.y, p.theta][row]
                        },
                        &x,
                    );
                    rel_err(&jac[row], &fd)
                })
                .fold(0.0, f64::max)
        },
        5,
    )
}

pub fn guard_check(points: usize) -> GradCheck {
    let profile = BoundsProfile::builtin(ProfileName::Sim);
    check(
        "guard projection",
        points,
        |r| {
            let i = r.gen_range(0..N_PARAMS);
            let (lo, hi) = (profile.bounds.lo[i], profile.bounds.hi[i]);
            let z = r.gen_range(-6.0..6.0);
            let fd = central_diff(&mut |v| project_slot(v[0], lo, hi), &[z]);
            rel_err(&[project_slot_grad(z, lo, hi)], &fd)
        },
        6,
    )
}

pub fn mish_check(points: usize) -> GradCheck {
    check(
        "mish activation",
        points,
        |r| {
            let x = r.gen_range(-6.0..6.0);
            rel_err(&[mish_grad(x)], &central_diff(&mut |v| mish(v[0]), &[x]))
        },
        7,
    )
}

/// Reverse sweep of one full physics step (every mode) against differences
/// of a random linear functional of the next state and pose.
pub fn step_check(points: usize) -> GradCheck {
    let geom = VehicleGeometry::small_scale();
    let profile = BoundsProfile::builtin(ProfileName::Sim);
    check(
        "physics step",
        points,
        |r| {
            let mode = PhysicsMode::ALL[r.gen_range(0..PhysicsMode::ALL.len())];
            let s = random_state(r);
            let p = Pose::new(r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0), r.gen_range(-2.0..2.0));
            let u = ControlInput::new(r.gen_range(-1.0..1.0), r.gen_range(-0.4..0.4));
            let params = random_params(r);
            let ws: [f64; 3] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
            let wp: [f64; 3] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
            let mut x: Vec<f64> = s.to_array().to_vec();
            x.extend([p.x, p.y, p.theta, u.throttle, u.steer]);
            x.extend(params.to_array());
            let objective = |v: &[f64]| {
                let pa: [f64; N_PARAMS] = v[8..].try_into().unwrap();
                let t = StepTape::record(
                    &BodyState::new(v[0], v[1], v[2]),
                    &Pose::new(v[3], v[4], v[5]),
                    &ControlInput::new(v[6], v[7]),
                    &ModelParams::from_array(&pa),
                    &geom,
                    0.02,
                    mode,
                )
                .unwrap();
                let ns = t.next_state.to_array();
                let np = t.next_pose;
                (0..3).map(|i| ws[i] * ns[i]).sum::<f64>() + wp[0] * np.x + wp[1] * np.y + wp[2] * np.theta
            };
            let tape = StepTape::record(&s, &p, &u, &params, &geom, 0.02, mode).unwrap();
            let adj = tape.backward(ws, wp);
            let mut analytic: Vec<f64> = adj.state.to_vec();
            analytic.extend(adj.pose);
            analytic.extend(adj.control);
            analytic.extend(adj.params);
            // parameters span many magnitudes, so differentiate in coordinates
            // normalized by each slot's bound range
            let range: Vec<f64> = (0..N_PARAMS).map(|i| profile.bounds.hi[i] - profile.bounds.lo[i]).collect();
            let mut objective = objective;
            let fd_spc = central_diff(&mut objective, &x)[..8].to_vec();
            let mut fd_par = Vec::with_capacity(N_PARAMS);
            let mut q = x.clone();
            for i in 0..N_PARAMS {
                let h = 1e-6 * range[i];
                q[8 + i] = x[8 + i] + h;
                let up = objective(&q);
                q[8 + i] = x[8 + i] - h;
                let down = objective(&q);
                q[8 + i] = x[8 + i];
                fd_par.push((up - down) / (2.0 * h) * range[i]);
            }
            let an_par: Vec<f64> = (0..N_PARAMS).map(|i| analytic[8 + i] * range[i]).collect();
            rel_err(&analytic[..8], &fd_spc).max(rel_err(&an_par, &fd_par))
        },
        8,
    )
}

/// Tiny estimator used for the composed window → loss gradient check.
pub fn tiny_network(r: &mut ChaCha8Rng) -> Network {
    let cfg = NetworkConfig {
        history_len: 3,
        gru_layers: 1,
        gru_hidden: 4,
        dense_widths: vec![5],
        ..NetworkConfig::sim_default()
    };
    let mut net = Network::random(cfg, r).unwrap();
    // a livelier output layer so the guard is not pinned near its midpoint
    for v in net.out.w.data_mut() {
        *v *= 10.0;
    }
    for n in net.norms.iter_mut() {
        for g in n.gamma.data_mut() {
            *g = r.gen_range(0.5..1.5);
        }
        for b in n.beta.data_mut() {
            *b = r.gen_range(-0.5..0.5);
        }
    }
    net
}

pub fn short_windows(history_len: usize) -> Vec<SampleWindow> {
    let track = TrackDefinition::bundled("train-track").unwrap();
    let cfg = GeneratorConfig {
        laps: 1,
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(
        &track,
        &ModelParams::small_scale_reference(),
        &VehicleGeometry::small_scale(),
        &cfg,
    )
    .unwrap();
    make_windows(&data.series, history_len, 7).unwrap()
}

/// Network weights → GRU → dense/BN head → guard → physics step → loss,
/// checked against finite differences in every trainable weight.
pub fn composition_check(points: usize) -> GradCheck {
    let windows = short_windows(3);
    let profile = BoundsProfile::builtin(ProfileName::Sim);
    let geom = VehicleGeometry::small_scale();
    check(
        "window to loss composition",
        points,
        |r| {
            let net = tiny_network(r);
            let a = r.gen_range(0..windows.len());
            let b = (a + 1 + r.gen_range(0..windows.len() - 1)) % windows.len();
            let batch = [&windows[a], &windows[b]];
            let weights = [1.0, 2.0, 0.5];
            let res = batch_loss_and_grad(&batch, &net, &profile, &geom, 0.02, PhysicsMode::Full, &weights, Mode::Train)
                .unwrap();
            let analytic: Vec<f64> = res.grads.tensors.iter().flat_map(|t| t.data().to_vec()).collect();
            let x: Vec<f64> = net.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
            let shapes: Vec<Vec<usize>> = net.tensors().iter().map(|t| t.shape().to_vec()).collect();
            // weights cluster around zero, where a relative step is too small
            let fd = central_diff_with(
                &mut |v| {
                    let mut n = net.clone();
                    let mut off = 0;
                    for (t, shape) in n.tensors_mut().into_iter().zip(&shapes) {
                        let len: usize = shape.iter().product();
                        *t = Tensor::from_vec(shape, v[off..off + len].to_vec()).unwrap();
                        off += len;
                    }
                    batch_loss_and_grad(&batch, &n, &profile, &geom, 0.02, PhysicsMode::Full, &weights, Mode::Train)
                        .unwrap()
                        .loss
                },
                &x,
                |_| 1e-6,
            );
            rel_err(&analytic, &fd)
        },
        9,
    )
}

/// The whole suite with `points` random points per component.
pub fn gradient_suite(points: usize) -> Vec<GradCheck> {
    vec![
        slip_check(points),
        longitudinal_check(points),
        pacejka_check(points),
        body_derivative_check(points),
        pose_check(points),
        guard_check(points),
        mish_check(points),
        step_check(points),
        composition_check(points),
    ]
}
