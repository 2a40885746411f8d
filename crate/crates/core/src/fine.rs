//! Fine propagator: a deterministic planar disc-contact simulator.
//!
//! Each control interval is split into `ceil(duration / substep)` substeps.
//! Per substep the sliders first lose speed to table friction, then integrate
//! their positions with the updated velocities (semi-implicit Euler), the
//! pusher is placed kinematically at its commanded position, and finally all
//! pusher-slider and slider-slider overlaps are removed by Gauss-Seidel
//! projection with inelastic normal impulses and Coulomb-limited tangential
//! impulses. The pusher has infinite effective mass: it pushes and is never
//! pushed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::penetration_depth;
use crate::propagator::Propagator;
use crate::state::{
    wrap_angle, ControlAction, ControlSequence, PusherState, SceneConfig, SliderState, SystemState, Trajectory, Vec2,
};

/// Draw budget for [`sample_valid_state`].
pub const SAMPLE_ATTEMPT_BUDGET: usize = 10_000;

// overlaps below this are treated as touching
const CONTACT_SLOP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineParams {
    /// Seconds.
    pub substep: f64,
    /// Kilograms, shared by every slider.
    pub slider_mass: f64,
    /// m/s^2 of table-friction deceleration.
    pub linear_friction_decel: f64,
    /// rad/s^2 of table-friction deceleration.
    pub angular_friction_decel: f64,
    pub restitution: f64,
    /// Gauss-Seidel passes over all contact pairs per substep.
    pub contact_stiffness_iterations: usize,
    /// Meters of overlap tolerated in returned states.
    pub penetration_tolerance: f64,
    /// Coulomb coefficient bounding tangential contact impulses.
    pub contact_friction: f64,
}

impl Default for FineParams {
    fn default() -> Self {
        Self {
            substep: 0.001,
            slider_mass: 0.2,
            linear_friction_decel: 1.0,
            angular_friction_decel: 5.0,
            restitution: 0.0,
            contact_stiffness_iterations: 8,
            penetration_tolerance: 1e-4,
            contact_friction: 0.3,
        }
    }
}

impl FineParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.substep > 0.0
            && self.slider_mass > 0.0
            && self.linear_friction_decel >= 0.0
            && self.angular_friction_decel >= 0.0
            && (0.0..=1.0).contains(&self.restitution)
            && self.contact_stiffness_iterations >= 1
            && self.penetration_tolerance > 0.0
            && self.contact_friction >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid fine parameters: {self:?}")))
        }
    }
}

/// Mass properties of one slider, cached for the substep loop.
#[derive(Clone, Copy)]
struct Body {
    radius: f64,
    inv_mass: f64,
    inv_inertia: f64,
}

struct Solver<'a> {
    params: &'a FineParams,
    pusher_radius: f64,
    bodies: Vec<Body>,
}

impl Solver<'_> {
    /// Pusher-slider contact. Returns true when an overlap was resolved.
    fn pusher_contact(&self, pusher: &Vec2, pusher_vel: &Vec2, body: &Body, s: &mut SliderState) -> bool {
        let d = s.position - pusher;
        let reach = self.pusher_radius + body.radius;
        let dist2 = d.norm_squared();
        if dist2 >= reach * reach {
            return false;
        }
        let dist = dist2.sqrt();
        if reach - dist <= CONTACT_SLOP {
            return false;
        }
        let n = if dist > 0.0 {
            d / dist
        } else {
            fallback_normal(pusher_vel)
        };
        s.position = pusher + n * reach;

        let vn = (s.linear_velocity - pusher_vel).dot(&n);
        if vn < 0.0 {
            let jn = -(1.0 + self.params.restitution) * vn / body.inv_mass;
            s.linear_velocity += n * (jn * body.inv_mass);

            let t = Vec2::new(-n.y, n.x);
            // contact point sits at -radius * n from the slider center
            let r = -n * body.radius;
            let r_cross_t = r.x * t.y - r.y * t.x;
            let v_contact = s.linear_velocity + Vec2::new(-s.angular_velocity * r.y, s.angular_velocity * r.x);
            let vt = (v_contact - pusher_vel).dot(&t);
            let k = body.inv_mass + r_cross_t * r_cross_t * body.inv_inertia;
            let limit = self.params.contact_friction * jn;
            let jt = (-vt / k).clamp(-limit, limit);
            s.linear_velocity += t * (jt * body.inv_mass);
            s.angular_velocity += r_cross_t * jt * body.inv_inertia;
        }
        true
    }

    fn slider_contact(&self, ba: &Body, a: &mut SliderState, bb: &Body, b: &mut SliderState) -> bool {
        let d = b.position - a.position;
        let reach = ba.radius + bb.radius;
        let dist2 = d.norm_squared();
        if dist2 >= reach * reach {
            return false;
        }
        let dist = dist2.sqrt();
        let overlap = reach - dist;
        if overlap <= CONTACT_SLOP {
            return false;
        }
        let n = if dist > 0.0 { d / dist } else { Vec2::new(1.0, 0.0) };
        let inv_sum = ba.inv_mass + bb.inv_mass;
        a.position -= n * (overlap * ba.inv_mass / inv_sum);
        b.position += n * (overlap * bb.inv_mass / inv_sum);

        let vn = (b.linear_velocity - a.linear_velocity).dot(&n);
        if vn < 0.0 {
            let jn = -(1.0 + self.params.restitution) * vn / inv_sum;
            a.linear_velocity -= n * (jn * ba.inv_mass);
            b.linear_velocity += n * (jn * bb.inv_mass);

            let t = Vec2::new(-n.y, n.x);
            let ra = n * ba.radius;
            let rb = -n * bb.radius;
            let ra_t = ra.x * t.y - ra.y * t.x;
            let rb_t = rb.x * t.y - rb.y * t.x;
            let va = a.linear_velocity + Vec2::new(-a.angular_velocity * ra.y, a.angular_velocity * ra.x);
            let vb = b.linear_velocity + Vec2::new(-b.angular_velocity * rb.y, b.angular_velocity * rb.x);
            let vt = (vb - va).dot(&t);
            let k = inv_sum + ra_t * ra_t * ba.inv_inertia + rb_t * rb_t * bb.inv_inertia;
            let limit = self.params.contact_friction * jn;
            let jt = (-vt / k).clamp(-limit, limit);
            a.linear_velocity -= t * (jt * ba.inv_mass);
            a.angular_velocity -= ra_t * jt * ba.inv_inertia;
            b.linear_velocity += t * (jt * bb.inv_mass);
            b.angular_velocity += rb_t * jt * bb.inv_inertia;
        }
        true
    }

    fn resolve(&self, pusher: &Vec2, pusher_vel: &Vec2, sliders: &mut [SliderState]) {
        for _ in 0..self.params.contact_stiffness_iterations {
            let mut touched = false;
            for (body, s) in self.bodies.iter().zip(sliders.iter_mut()) {
                touched |= self.pusher_contact(pusher, pusher_vel, body, s);
            }
            for i in 0..sliders.len() {
                let (head, tail) = sliders.split_at_mut(i + 1);
                let a = &mut head[i];
                for (j, b) in tail.iter_mut().enumerate() {
                    touched |= self.slider_contact(&self.bodies[i], a, &self.bodies[i + 1 + j], b);
                }
            }
            if !touched {
                break;
            }
        }
    }
}

fn fallback_normal(pusher_vel: &Vec2) -> Vec2 {
    let speed = pusher_vel.norm();
    if speed > 0.0 {
        pusher_vel / speed
    } else {
        Vec2::new(1.0, 0.0)
    }
}

fn apply_table_friction(s: &mut SliderState, dv: f64, dw: f64) {
    let speed = s.linear_velocity.norm();
    if speed <= dv {
        s.linear_velocity = Vec2::zeros();
    } else {
        s.linear_velocity *= (speed - dv) / speed;
    }
    let spin = s.angular_velocity.abs();
    s.angular_velocity = if spin <= dw {
        0.0
    } else {
        s.angular_velocity.signum() * (spin - dw)
    };
}

/// Advances `s` by one control interval.
pub fn fine_step(s: &SystemState, u: &ControlAction, cfg: &SceneConfig, p: &FineParams) -> Result<SystemState> {
    p.validate()?;
    s.check_scene(cfg)?;
    if !(u.duration > 0.0 && u.duration.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "control duration {} is not positive",
            u.duration
        )));
    }

    let substeps = ((u.duration / p.substep).ceil() as usize).max(1);
    let h = u.duration / substeps as f64;
    let solver = Solver {
        params: p,
        pusher_radius: cfg.pusher_radius,
        bodies: cfg
            .slider_radii
            .iter()
            .map(|&radius| Body {
                radius,
                inv_mass: 1.0 / p.slider_mass,
                inv_inertia: 1.0 / (0.5 * p.slider_mass * radius * radius),
            })
            .collect(),
    };

    let start = s.pusher.position;
    let motion = u.velocity * u.duration;
    let dv = p.linear_friction_decel * h;
    let dw = p.angular_friction_decel * h;
    let mut sliders = s.sliders.clone();

    for k in 1..=substeps {
        for sl in sliders.iter_mut() {
            apply_table_friction(sl, dv, dw);
            sl.position += sl.linear_velocity * h;
            sl.orientation = wrap_angle(sl.orientation + sl.angular_velocity * h);
        }
        let pusher = if k == substeps {
            start + motion
        } else {
            start + u.velocity * (k as f64 * h)
        };
        solver.resolve(&pusher, &u.velocity, &mut sliders);
    }

    let next = SystemState {
        pusher: PusherState {
            position: start + motion,
            velocity: u.velocity,
        },
        sliders,
    };
    if !next.is_finite() {
        return Err(Error::NonFinite("fine_step".into()));
    }
    Ok(next)
}

/// Serial fine rollout over `seq`.
pub fn fine_rollout(s0: &SystemState, seq: &ControlSequence, cfg: &SceneConfig, p: &FineParams) -> Result<Trajectory> {
    FinePropagator::new(cfg.clone(), p.clone()).rollout(s0, seq)
}

/// Largest pairwise overlap among all bodies of `s`.
pub fn max_penetration(s: &SystemState, cfg: &SceneConfig) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in s.sliders.iter().enumerate() {
        let ra = cfg.slider_radii[i];
        worst = worst.max(penetration_depth(
            &s.pusher.position,
            cfg.pusher_radius,
            &a.position,
            ra,
        ));
        for (j, b) in s.sliders.iter().enumerate().skip(i + 1) {
            worst = worst.max(penetration_depth(&a.position, ra, &b.position, cfg.slider_radii[j]));
        }
    }
    worst
}

/// Random resting state with no interpenetration, drawn by rejection sampling.
pub fn sample_valid_state(seed: u64, cfg: &SceneConfig) -> Result<SystemState> {
    sample_valid_state_with(&mut ChaCha8Rng::seed_from_u64(seed), cfg)
}

/// [`sample_valid_state`] drawing from a caller-supplied generator.
///
/// The pusher and active sliders are placed uniformly on the table (discs fully
/// on it), one at a time, each redrawn until it overlaps nothing placed
/// before it. Inactive sliders go to their parked positions.
pub fn sample_valid_state_with<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Result<SystemState> {
    cfg.validate()?;
    let mut attempts = 0usize;
    let mut draw = |rng: &mut R, radius: f64| -> Result<Vec2> {
        let region = cfg.table_bounds.shrink(radius);
        if region.width() <= 0.0 || region.height() <= 0.0 {
            return Err(Error::WorkspaceTooCrowded(attempts));
        }
        attempts += 1;
        if attempts > SAMPLE_ATTEMPT_BUDGET {
            return Err(Error::WorkspaceTooCrowded(SAMPLE_ATTEMPT_BUDGET));
        }
        Ok(Vec2::new(
            rng.random_range(region.min.x..region.max.x),
            rng.random_range(region.min.y..region.max.y),
        ))
    };

    let pusher = draw(rng, cfg.pusher_radius)?;
    let mut placed: Vec<(Vec2, f64)> = vec![(pusher, cfg.pusher_radius)];
    let mut sliders = Vec::with_capacity(cfg.num_sliders);
    for i in 0..cfg.num_sliders {
        let r = cfg.slider_radii[i];
        let position = if cfg.is_active(i) {
            loop {
                let candidate = draw(rng, r)?;
                if placed
                    .iter()
                    .all(|(c, rc)| penetration_depth(&candidate, r, c, *rc) == 0.0)
                {
                    break candidate;
                }
            }
        } else {
            cfg.parked_positions[i]
        };
        placed.push((position, r));
        sliders.push(SliderState::at_rest(position));
    }
    Ok(SystemState {
        pusher: PusherState {
            position: pusher,
            velocity: Vec2::zeros(),
        },
        sliders,
    })
}

/// The fine simulator as a [`Propagator`].
#[derive(Clone, Debug)]
pub struct FinePropagator {
    pub scene: SceneConfig,
    pub params: FineParams,
}

impl FinePropagator {
    pub fn new(scene: SceneConfig, params: FineParams) -> Self {
        Self { scene, params }
    }
}

impl Propagator for FinePropagator {
    fn step(&self, state: &SystemState, action: &ControlAction) -> Result<SystemState> {
        fine_step(state, action, &self.scene, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> SceneConfig {
        SceneConfig::with_sliders(1, 1)
    }

    fn resting(cfg: &SceneConfig, pusher: Vec2, sliders: &[Vec2]) -> SystemState {
        let s = SystemState {
            pusher: PusherState {
                position: pusher,
                velocity: Vec2::zeros(),
            },
            sliders: sliders.iter().map(|p| SliderState::at_rest(*p)).collect(),
        };
        s.check_scene(cfg).unwrap();
        s
    }

    fn kinetic_energy(s: &SystemState, cfg: &SceneConfig, p: &FineParams) -> f64 {
        s.sliders
            .iter()
            .zip(&cfg.slider_radii)
            .map(|(sl, r)| {
                let inertia = 0.5 * p.slider_mass * r * r;
                0.5 * p.slider_mass * sl.linear_velocity.norm_squared() + 0.5 * inertia * sl.angular_velocity.powi(2)
            })
            .sum()
    }

    #[test]
    fn free_motion_leaves_slider_alone() {
        let cfg = single();
        let p = FineParams::default();
        let s = resting(&cfg, Vec2::new(0.0, 0.0), &[Vec2::new(0.2, 0.0)]);
        let u = ControlAction::new(-0.1, 0.0);
        let next = fine_step(&s, &u, &cfg, &p).unwrap();
        assert_eq!(next.sliders, s.sliders);
        assert_eq!(next.pusher.position, s.pusher.position + u.velocity * u.duration);
        assert_eq!(next.pusher.velocity, u.velocity);
    }

    #[test]
    fn sliding_slider_stops_under_friction() {
        let cfg = single();
        let p = FineParams::default();
        let mut s = resting(&cfg, Vec2::new(-0.2, -0.2), &[Vec2::new(0.0, 0.0)]);
        s.sliders[0].linear_velocity = Vec2::new(0.05, 0.0);
        let next = fine_step(&s, &ControlAction::new(0.0, 0.0), &cfg, &p).unwrap();
        // v^2 / (2 a) = 0.05^2 / 2
        let closed_form = 0.05f64.powi(2) / (2.0 * p.linear_friction_decel);
        assert!((closed_form - 0.00125).abs() < 1e-15);
        assert!((next.sliders[0].position.x - closed_form).abs() < 1e-4);
        assert_eq!(next.sliders[0].linear_velocity, Vec2::zeros());
    }

    #[test]
    fn head_on_push_does_not_rotate() {
        let cfg = single();
        let p = FineParams::default();
        let mut s = resting(&cfg, Vec2::new(0.0, 0.0), &[Vec2::new(0.1, 0.0)]);
        s.sliders[0].orientation = 0.3;
        let next = fine_step(&s, &ControlAction::new(0.1, 0.0), &cfg, &p).unwrap();
        assert_eq!(next.sliders[0].orientation, 0.3);
        assert_eq!(next.sliders[0].angular_velocity, 0.0);
        assert!(next.sliders[0].position.x > 0.1);
        assert_eq!(next.sliders[0].position.y, 0.0);
        assert!(max_penetration(&next, &cfg) <= p.penetration_tolerance);
    }

    #[test]
    fn off_center_push_spins_and_deflects() {
        let cfg = single();
        let p = FineParams::default();
        let s = resting(&cfg, Vec2::new(0.0, 0.0), &[Vec2::new(0.1, 0.03)]);
        let next = fine_step(&s, &ControlAction::new(0.1, 0.0), &cfg, &p).unwrap();
        let sl = &next.sliders[0];
        assert!(sl.position.x > 0.1 && sl.position.y > 0.03);
        assert!(max_penetration(&next, &cfg) <= p.penetration_tolerance);
    }

    #[test]
    fn determinism_is_bitwise() {
        let cfg = SceneConfig::default();
        let p = FineParams::default();
        let s = sample_valid_state(3, &cfg).unwrap();
        let u = ControlAction::new(0.07, -0.05);
        assert_eq!(
            fine_step(&s, &u, &cfg, &p).unwrap(),
            fine_step(&s, &u, &cfg, &p).unwrap()
        );
    }

    #[test]
    fn resting_rollout_is_constant() {
        let cfg = SceneConfig::default();
        let p = FineParams::default();
        let s0 = sample_valid_state(11, &cfg).unwrap();
        let t = fine_rollout(&s0, &ControlSequence::zeros(4), &cfg, &p).unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.states.iter().all(|s| *s == s0));
    }

    #[test]
    fn rollout_composes_steps() {
        let cfg = SceneConfig::default();
        let p = FineParams::default();
        let s0 = sample_valid_state(5, &cfg).unwrap();
        let u1 = ControlAction::new(0.1, 0.0);
        let u2 = ControlAction::new(0.0, -0.08);
        let t = fine_rollout(&s0, &ControlSequence::new(vec![u1, u2]).unwrap(), &cfg, &p).unwrap();
        let twice = fine_step(&fine_step(&s0, &u1, &cfg, &p).unwrap(), &u2, &cfg, &p).unwrap();
        assert_eq!(t.states[2], twice);
    }

    #[test]
    fn random_rollouts_respect_penetration_tolerance() {
        let cfg = SceneConfig::default();
        let p = FineParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..100 {
            let s0 = sample_valid_state(seed, &cfg).unwrap();
            // aim at a slider so most rollouts involve contact
            let target = s0.sliders[(seed % 4) as usize].position;
            let dir = (target - s0.pusher.position).normalize();
            let actions = (0..4)
                .map(|_| {
                    let angle: f64 = rng.random_range(-0.4..0.4);
                    let rot = nalgebra::Rotation2::new(angle);
                    let v = rot * dir * rng.random_range(0.05..0.1);
                    ControlAction::new(v.x, v.y)
                })
                .collect();
            let t = fine_rollout(&s0, &ControlSequence::new(actions).unwrap(), &cfg, &p).unwrap();
            for s in &t.states {
                assert!(max_penetration(s, &cfg) <= p.penetration_tolerance, "seed {seed}");
            }
        }
    }

    #[test]
    fn passive_scene_loses_energy() {
        let cfg = SceneConfig::default();
        let p = FineParams::default();
        let mut s = resting(
            &cfg,
            Vec2::new(-0.25, -0.25),
            &[
                Vec2::new(0.0, 0.0),
                Vec2::new(0.15, 0.0),
                Vec2::new(0.0, 0.2),
                Vec2::new(0.2, 0.2),
            ],
        );
        s.sliders[0].linear_velocity = Vec2::new(0.3, 0.01);
        s.sliders[0].angular_velocity = 2.0;
        s.sliders[2].linear_velocity = Vec2::new(0.2, -0.05);
        let before = kinetic_energy(&s, &cfg, &p);
        let next = fine_step(&s, &ControlAction::new(0.0, 0.0).with_duration(0.1), &cfg, &p).unwrap();
        assert!(kinetic_energy(&next, &cfg, &p) <= before);
    }

    #[test]
    fn head_on_push_never_pulls() {
        let cfg = single();
        let p = FineParams::default();
        for gap in [0.0, 0.01, 0.05, 0.09] {
            let start = 0.0657 + gap;
            let s = resting(&cfg, Vec2::new(0.0, 0.0), &[Vec2::new(start, 0.0)]);
            let next = fine_step(&s, &ControlAction::new(0.1, 0.0), &cfg, &p).unwrap();
            assert!(next.sliders[0].position.x >= start);
        }
    }

    #[test]
    fn non_finite_input_is_reported() {
        let cfg = single();
        let mut s = resting(&cfg, Vec2::new(0.0, 0.0), &[Vec2::new(0.2, 0.0)]);
        s.sliders[0].linear_velocity.x = f64::NAN;
        assert!(matches!(
            fine_step(&s, &ControlAction::new(0.0, 0.0), &cfg, &FineParams::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn sampler_is_deterministic_and_valid() {
        let cfg = single();
        let a = sample_valid_state(42, &cfg).unwrap();
        assert_eq!(a, sample_valid_state(42, &cfg).unwrap());
        assert_eq!(max_penetration(&a, &cfg), 0.0);
    }

    #[test]
    fn thousand_samples_never_overlap() {
        let cfg = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = sample_valid_state_with(&mut rng, &cfg).unwrap();
            assert_eq!(max_penetration(&s, &cfg), 0.0);
            assert!(s.sliders.iter().all(|sl| sl.linear_velocity == Vec2::zeros()));
        }
    }

    #[test]
    fn parked_sliders_use_configured_positions() {
        let cfg = SceneConfig::with_sliders(4, 2);
        let s = sample_valid_state(8, &cfg).unwrap();
        assert_eq!(s.sliders[2].position, cfg.parked_positions[2]);
        assert_eq!(s.sliders[3].position, cfg.parked_positions[3]);
        assert!(cfg.table_bounds.contains(&s.sliders[0].position));
    }

    #[test]
    fn crowded_table_is_an_error() {
        let cfg = SceneConfig {
            table_bounds: crate::state::Rect::new(-0.06, -0.06, 0.06, 0.06),
            ..SceneConfig::default()
        };
        assert!(matches!(
            sample_valid_state(0, &cfg),
            Err(Error::WorkspaceTooCrowded(_))
        ));
    }
}
