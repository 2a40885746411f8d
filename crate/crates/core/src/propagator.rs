use std::sync::Arc;

use crate::error::Result;
use crate::state::{ControlAction, ControlSequence, SystemState, Trajectory};

/// A deterministic one-interval state propagator: `x_{n+1} = P(x_n, u_n)`.
///
/// Implementations must be pure: equal inputs give bit-identical outputs.
/// Parareal's exactness relies on it.
pub trait Propagator: Send + Sync {
    fn step(&self, state: &SystemState, action: &ControlAction) -> Result<SystemState>;

    /// Serial composition of [`Propagator::step`] over `seq`.
    fn rollout(&self, s0: &SystemState, seq: &ControlSequence) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(seq.len() + 1);
        states.push(s0.clone());
        for action in &seq.actions {
            let next = self.step(states.last().unwrap(), action)?;
            states.push(next);
        }
        Ok(Trajectory { states })
    }
}

impl<P: Propagator + ?Sized> Propagator for &P {
    fn step(&self, state: &SystemState, action: &ControlAction) -> Result<SystemState> {
        (**self).step(state, action)
    }
}

impl<P: Propagator + ?Sized> Propagator for Box<P> {
    fn step(&self, state: &SystemState, action: &ControlAction) -> Result<SystemState> {
        (**self).step(state, action)
    }
}

impl<P: Propagator + ?Sized> Propagator for Arc<P> {
    fn step(&self, state: &SystemState, action: &ControlAction) -> Result<SystemState> {
        (**self).step(state, action)
    }
}
