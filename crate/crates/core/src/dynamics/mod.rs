//! Enhanced single-track vehicle model.
//!
//! The state is the body-frame velocity triple `(vx, vy, omega)`. Each step
//! evaluates slip angles, the rear-drive longitudinal force, longitudinal
//! load transfer, load-scaled Pacejka lateral forces and the planar rigid-body
//! equations, then integrates with forward Euler. Every stage has a matching
//! partial-derivative routine so the whole step can be differentiated in
//! reverse mode (see [`StepTape`]).

mod forces;
mod step;
mod types;

pub use forces::{
    axle_loads, axle_loads_unclamped, body_derivative, body_derivative_jacobian, euler_step,
    longitudinal_force, longitudinal_force_partials, pacejka_lateral, pacejka_partials,
    slip_angles, slip_angles_partials, LongitudinalPartials, PacejkaPartials, SlipPartials,
};
pub use step::{
    advance_pose, advance_pose_jacobian, rollout, simulate_step, ParamSchedule, StepAdjoint,
    StepTape, TrajectoryPoint,
};
pub use types::{
    wrap_angle, AxleLoads, BodyState, ControlInput, DrivetrainCoeffs, ForceTrace, ModelParams,
    PacejkaCoeffs, PhysicsMode, Pose, VehicleGeometry, N_PARAMS, PARAM_NAMES,
};

/// Floor on `|vx|` used in the slip-angle denominators (m/s).
pub const V_EPS: f64 = 0.05;
