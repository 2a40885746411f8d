//! Parallel-in-time physics prediction for planar pusher-slider manipulation.
//!
//! Parareal couples a cheap coarse propagator (the kinematic
//! [`analytical`] model or the [`learned`] network) with the expensive
//! [`fine`] disc-contact simulator. The resulting predictor drives the
//! sampling-based trajectory optimizer and MPC loop in [`planner`].

// validation negates comparisons so that NaN parameters are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytical;
pub mod error;
pub mod fine;
pub mod geometry;
pub mod learned;
pub mod nn;
pub mod parareal;
pub mod planner;
pub mod propagator;
pub mod scenario;
pub mod state;

pub use error::{Error, Result};
pub use propagator::Propagator;
pub use state::{
    ControlAction, ControlSequence, PusherState, Rect, SceneConfig, SliderState, SystemState, Trajectory, Vec2,
};
