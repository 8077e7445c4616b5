//! Closed-loop racing: pure pursuit, NMPC over the learned or fixed
//! dynamics, lap timing and boundary accounting.

mod nmpc;
mod pursuit;
mod race;

pub use nmpc::{
    nmpc_solve, plan_cost, plan_cost_and_grad, Corridor, NmpcConfig, NmpcProblem, NmpcSolution,
    NmpcWeights, SolveStats, StartPoint,
};
pub use pursuit::{pure_pursuit, pure_pursuit_from, InputBounds, PurePursuitConfig};
pub use race::{
    count_violations, run_race, Controller, LapResult, RaceConfig, RaceTraceRow, FORCE_TRACE_HEADER,
    RACE_TRACE_HEADER,
};
