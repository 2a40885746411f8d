//! Domain types shared by every propagator, the Parareal engine and the planner.
//!
//! All types are plain values. A [`SystemState`] holds the pusher and a fixed
//! number of sliders; the flat vector layout produced by [`state_to_vector`]
//! is a contract the learned model depends on:
//!
//! ```text
//! [p_x, p_y, p_vx, p_vy, (s_x, s_y, s_theta, s_vx, s_vy, s_omega) * N_s]
//! ```

use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Entries per slider in the flat state vector.
pub const SLIDER_DIM: usize = 6;
/// Entries for the pusher in the flat state vector.
pub const PUSHER_DIM: usize = 4;

pub const DEFAULT_PUSHER_RADIUS: f64 = 0.0145;
pub const DEFAULT_SLIDER_RADIUS: f64 = 0.0512;
pub const DEFAULT_CONTROL_DURATION: f64 = 1.0;
pub const DEFAULT_MAX_SPEED: f64 = 0.1;

/// Wraps an angle to `[-pi, pi)`. Angles already in range are returned
/// unchanged, bit for bit.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2*pi
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Length of the flat vector for `num_sliders` sliders.
pub fn state_dim(num_sliders: usize) -> usize {
    PUSHER_DIM + SLIDER_DIM * num_sliders
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PusherState {
    pub position: Vec2,
    pub velocity: Vec2,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SliderState {
    pub position: Vec2,
    /// Radians in `[-pi, pi)`.
    pub orientation: f64,
    pub linear_velocity: Vec2,
    pub angular_velocity: f64,
}

impl SliderState {
    pub fn at_rest(position: Vec2) -> Self {
        Self {
            position,
            ..Default::default()
        }
    }

    fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.is_finite()
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SystemState {
    pub pusher: PusherState,
    pub sliders: Vec<SliderState>,
}

impl SystemState {
    /// Builds a state for `cfg`, rejecting a slider list of the wrong length.
    pub fn for_scene(cfg: &SceneConfig, pusher: PusherState, sliders: Vec<SliderState>) -> Result<Self> {
        let state = Self { pusher, sliders };
        state.check_scene(cfg)?;
        Ok(state)
    }

    /// All-zero state with the scene's slider count.
    pub fn zeros(cfg: &SceneConfig) -> Self {
        Self {
            pusher: PusherState::default(),
            sliders: vec![SliderState::default(); cfg.num_sliders],
        }
    }

    pub fn check_scene(&self, cfg: &SceneConfig) -> Result<()> {
        if self.sliders.len() != cfg.num_sliders {
            return Err(Error::SliderCount {
                expected: cfg.num_sliders,
                found: self.sliders.len(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.pusher.position.iter().all(|v| v.is_finite())
            && self.pusher.velocity.iter().all(|v| v.is_finite())
            && self.sliders.iter().all(SliderState::is_finite)
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(state_dim(self.sliders.len()));
        v.extend_from_slice(&[
            self.pusher.position.x,
            self.pusher.position.y,
            self.pusher.velocity.x,
            self.pusher.velocity.y,
        ]);
        for s in &self.sliders {
            v.extend_from_slice(&[
                s.position.x,
                s.position.y,
                s.orientation,
                s.linear_velocity.x,
                s.linear_velocity.y,
                s.angular_velocity,
            ]);
        }
        v
    }

    pub fn from_vector(v: &[f64], num_sliders: usize) -> Result<Self> {
        let expected = state_dim(num_sliders);
        if v.len() != expected {
            return Err(Error::VectorLength {
                expected,
                found: v.len(),
            });
        }
        let pusher = PusherState {
            position: Vec2::new(v[0], v[1]),
            velocity: Vec2::new(v[2], v[3]),
        };
        let sliders = v[PUSHER_DIM..]
            .chunks_exact(SLIDER_DIM)
            .map(|c| SliderState {
                position: Vec2::new(c[0], c[1]),
                orientation: wrap_angle(c[2]),
                linear_velocity: Vec2::new(c[3], c[4]),
                angular_velocity: c[5],
            })
            .collect();
        Ok(Self { pusher, sliders })
    }
}

/// Flattens `s` into the documented pusher-first layout.
pub fn state_to_vector(s: &SystemState, cfg: &SceneConfig) -> Result<Vec<f64>> {
    s.check_scene(cfg)?;
    Ok(s.to_vector())
}

/// Inverse of [`state_to_vector`]; orientation entries are wrapped to `[-pi, pi)`.
pub fn vector_to_state(v: &[f64], cfg: &SceneConfig) -> Result<SystemState> {
    SystemState::from_vector(v, cfg.num_sliders)
}

/// A pusher velocity command held for `duration` seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlAction {
    pub velocity: Vec2,
    pub duration: f64,
}

impl ControlAction {
    /// Action with the default 1 s duration.
    pub fn new(vx: f64, vy: f64) -> Self {
        Self {
            velocity: Vec2::new(vx, vy),
            duration: DEFAULT_CONTROL_DURATION,
        }
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    /// Same action with its speed clamped to `max_speed`.
    pub fn clamped(mut self, max_speed: f64) -> Self {
        let speed = self.velocity.norm();
        if speed > max_speed {
            self.velocity *= max_speed / speed;
        }
        self
    }

    pub fn validate(&self, max_speed: f64) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "control duration must be positive, got {}",
                self.duration
            )));
        }
        if !self.velocity.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite control velocity".into()));
        }
        // small slack for velocities that were clamped and then rounded
        if self.velocity.norm() > max_speed * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "control speed {} exceeds the maximum {}",
                self.velocity.norm(),
                max_speed
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlSequence {
    pub actions: Vec<ControlAction>,
}

impl ControlSequence {
    pub fn new(actions: Vec<ControlAction>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidParameter(
                "control sequence must hold at least one action".into(),
            ));
        }
        Ok(Self { actions })
    }

    /// `n` zero-velocity actions of the default duration.
    pub fn zeros(n: usize) -> Self {
        Self {
            actions: vec![ControlAction::new(0.0, 0.0); n.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self, cfg: &SceneConfig) -> Result<()> {
        if self.actions.is_empty() {
            return Err(Error::InvalidParameter(
                "control sequence must hold at least one action".into(),
            ));
        }
        self.actions.iter().try_for_each(|a| a.validate(cfg.max_speed))
    }
}

/// States along a rollout, including the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<SystemState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn initial(&self) -> &SystemState {
        &self.states[0]
    }

    pub fn last(&self) -> &SystemState {
        self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// Axis-aligned rectangle in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min: Vec2::new(min_x, min_y),
            max: Vec2::new(max_x, max_y),
        }
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Rectangle shrunk by `margin` on every side.
    pub fn shrink(&self, margin: f64) -> Self {
        Self {
            min: self.min.add_scalar(margin),
            max: self.max.add_scalar(-margin),
        }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

/// The world every propagator shares.
///
/// Sliders `0..active_sliders` are in play; the rest sit at their
/// `parked_positions` entry so one network serves every active count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub num_sliders: usize,
    pub active_sliders: usize,
    pub pusher_radius: f64,
    pub slider_radii: Vec<f64>,
    pub table_bounds: Rect,
    pub goal_center: Vec2,
    pub goal_radius: f64,
    pub goal_slider_index: usize,
    pub parked_positions: Vec<Vec2>,
    pub max_speed: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::with_sliders(4, 4)
    }
}

impl SceneConfig {
    /// Default scene with `num_sliders` slots of which the first `active` are in play.
    pub fn with_sliders(num_sliders: usize, active: usize) -> Self {
        let parked_positions = (0..num_sliders)
            .map(|i| Vec2::new(1.0, -0.3 + 0.2 * i as f64))
            .collect();
        Self {
            num_sliders,
            active_sliders: active.min(num_sliders),
            pusher_radius: DEFAULT_PUSHER_RADIUS,
            slider_radii: vec![DEFAULT_SLIDER_RADIUS; num_sliders],
            table_bounds: Rect::new(-0.3, -0.3, 0.3, 0.3),
            goal_center: Vec2::new(0.2, 0.0),
            goal_radius: 0.05,
            goal_slider_index: 0,
            parked_positions,
            max_speed: DEFAULT_MAX_SPEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.num_sliders == 0 {
            return bad("scene needs at least one slider".into());
        }
        if self.active_sliders == 0 || self.active_sliders > self.num_sliders {
            return bad(format!(
                "active slider count {} outside 1..={}",
                self.active_sliders, self.num_sliders
            ));
        }
        if self.slider_radii.len() != self.num_sliders || self.parked_positions.len() != self.num_sliders {
            return bad("slider_radii and parked_positions need one entry per slider".into());
        }
        if !(self.pusher_radius > 0.0) || self.slider_radii.iter().any(|r| !(*r > 0.0)) {
            return bad("radii must be positive".into());
        }
        if self.goal_slider_index >= self.active_sliders {
            return bad(format!(
                "goal slider {} is not an active slider",
                self.goal_slider_index
            ));
        }
        if !(self.max_speed > 0.0) || !(self.goal_radius > 0.0) {
            return bad("max_speed and goal_radius must be positive".into());
        }
        if self.table_bounds.width() <= 0.0 || self.table_bounds.height() <= 0.0 {
            return bad("table bounds are empty".into());
        }
        for i in self.active_sliders..self.num_sliders {
            let p = &self.parked_positions[i];
            if self.table_bounds.shrink(-self.slider_radii[i]).contains(p) {
                return bad(format!("parked position of slider {i} lies on the table"));
            }
            for j in (i + 1)..self.num_sliders {
                let gap = (p - self.parked_positions[j]).norm();
                if gap < self.slider_radii[i] + self.slider_radii[j] {
                    return bad(format!("parked sliders {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }

    pub fn is_active(&self, slider: usize) -> bool {
        slider < self.active_sliders
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.num_sliders)
    }

    /// True when `p` lies within the goal region.
    pub fn in_goal(&self, p: &Vec2) -> bool {
        (p - self.goal_center).norm() <= self.goal_radius
    }
}
