//! Kinematic single-object coarse propagator.
//!
//! The slider moves with the pusher's velocity for the fraction `p_c` of the
//! pusher path spent in contact, and picks up an angular velocity
//! `K_w * |u| * sin(theta) / |r_c|` from the contact geometry at first touch.
//! One closed-form evaluation per step; no substepping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{contact_interval, contact_point_and_angle, swept_contact_split, ContactSplit};
use crate::propagator::Propagator;
use crate::state::{wrap_angle, ControlAction, PusherState, SceneConfig, SystemState, Vec2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticalParams {
    pub k_omega: f64,
}

impl Default for AnalyticalParams {
    fn default() -> Self {
        Self { k_omega: 0.5 }
    }
}

impl AnalyticalParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_omega > 0.0 && self.k_omega.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "k_omega must be positive, got {}",
                self.k_omega
            )))
        }
    }
}

// |r_c| below this means the pusher center sits inside the slider
const MIN_LEVER: f64 = 1e-9;

/// Pusher update shared by every propagator: `q += u * dt`, `qdot = u`.
pub fn kinematic_pusher(pusher: &PusherState, u: &ControlAction) -> PusherState {
    PusherState {
        position: pusher.position + u.velocity * u.duration,
        velocity: u.velocity,
    }
}

pub fn analytical_coarse_step(
    s: &SystemState,
    u: &ControlAction,
    cfg: &SceneConfig,
    p: &AnalyticalParams,
) -> Result<SystemState> {
    s.check_scene(cfg)?;
    let start = s.pusher.position;
    let motion = u.velocity * u.duration;
    let mut next = SystemState {
        pusher: kinematic_pusher(&s.pusher, u),
        sliders: s.sliders.clone(),
    };

    // only the active slider swept longest by the pusher responds
    let mut best: Option<(usize, ContactSplit)> = None;
    for i in 0..cfg.active_sliders {
        let reach = cfg.pusher_radius + cfg.slider_radii[i];
        let split = swept_contact_split(&start, &motion, &s.sliders[i].position, reach);
        if split.d_contact > 0.0 && best.is_none_or(|(_, b)| split.d_contact > b.d_contact) {
            best = Some((i, split));
        }
    }
    let Some((i, split)) = best else {
        return Ok(next);
    };

    let slider = &s.sliders[i];
    let radius = cfg.slider_radii[i];
    let p_c = split.contact_fraction();
    let omega = {
        let reach = cfg.pusher_radius + radius;
        let (enter, _) = contact_interval(&start, &motion, &slider.position, reach)
            .expect("positive contact length implies an interval");
        let at_contact = start + motion * (enter / motion.norm());
        match contact_point_and_angle(&at_contact, &slider.position, radius, &u.velocity) {
            Ok((r_c, theta)) if r_c.norm() > MIN_LEVER => p.k_omega * u.velocity.norm() * theta.sin() / r_c.norm(),
            _ => 0.0,
        }
    };

    let rate = Vec2::new(u.velocity.x, u.velocity.y);
    let out = &mut next.sliders[i];
    out.position = slider.position + rate * (p_c * u.duration);
    out.orientation = wrap_angle(slider.orientation + omega * p_c * u.duration);
    if p_c > 0.0 {
        out.linear_velocity = rate;
        out.angular_velocity = omega;
    }
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct AnalyticalCoarse {
    pub scene: SceneConfig,
    pub params: AnalyticalParams,
}

impl AnalyticalCoarse {
    pub fn new(scene: SceneConfig, params: AnalyticalParams) -> Self {
        Self { scene, params }
    }
}

impl Propagator for AnalyticalCoarse {
    fn step(&self, state: &SystemState, action: &ControlAction) -> Result<SystemState> {
        analytical_coarse_step(state, action, &self.scene, &self.params)
    }
}
