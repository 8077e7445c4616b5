//! Physics-aware single-track vehicle dynamics.
//!
//! * [`dynamics`]: load-sensitive single-track model and its reverse-mode step.
//! * [`guard`]: bounded projection of learned coefficients.
//! * [`nn`] and [`estimator`]: recurrent estimator trained through the physics.
//! * [`telemetry`]: CSV schema, windowing, tracks and the synthetic generator.
//! * [`evaluation`]: one-step and rollout metrics.
//! * [`raceloop`]: pure pursuit, NMPC and lap timing.

pub mod checkpoint;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod guard;
pub mod nn;
pub mod raceloop;
pub mod telemetry;

pub use error::{Error, Result};
