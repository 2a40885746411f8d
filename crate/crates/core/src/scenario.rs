//! Seeded scene generators for the convergence and MPC experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fine::{fine_rollout, sample_valid_state_with, FineParams};
use crate::geometry::penetration_depth;
use crate::state::{ControlAction, ControlSequence, PusherState, SceneConfig, SliderState, SystemState, Vec2};

/// Draws before a generator gives up.
const SCENE_ATTEMPTS: usize = 1000;

/// Minimum slider travel, meters, for a sequence to count as making contact.
pub const CONTACT_THRESHOLD: f64 = 1e-3;

/// Random resting scene plus an `n_actions` sequence whose fine rollout moves
/// at least one active slider.
///
/// The first action heads roughly at a random active slider; each later
/// action turns by a random angle so pushes slide off and re-engage.
pub fn convergence_scene(
    seed: u64,
    cfg: &SceneConfig,
    fine: &FineParams,
    n_actions: usize,
) -> Result<(SystemState, ControlSequence)> {
    if n_actions == 0 {
        return Err(Error::InvalidParameter("a scene needs at least one action".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..SCENE_ATTEMPTS {
        let s = sample_valid_state_with(&mut rng, cfg)?;
        let target = s.sliders[rng.random_range(0..cfg.active_sliders)].position;
        let mut heading = {
            let d = target - s.pusher.position;
            d.y.atan2(d.x) + rng.random_range(-0.3..0.3)
        };
        let actions = (0..n_actions)
            .map(|i| {
                if i > 0 {
                    heading += rng.random_range(-0.5..0.5);
                }
                let speed = rng.random_range(0.5..=1.0) * cfg.max_speed;
                ControlAction::new(heading.cos() * speed, heading.sin() * speed)
            })
            .collect();
        let seq = ControlSequence::new(actions)?;
        let traj = fine_rollout(&s, &seq, cfg, fine)?;
        let moved = (0..cfg.active_sliders)
            .any(|i| (traj.last().sliders[i].position - s.sliders[i].position).norm() > CONTACT_THRESHOLD);
        if moved {
            return Ok((s, seq));
        }
    }
    Err(Error::InvalidParameter(format!(
        "no contact-making sequence found in {SCENE_ATTEMPTS} draws"
    )))
}

/// Planning scene: the goal slider sits 0.12-0.2 m from the goal, the pusher
/// just behind it on the far side from the goal, and the remaining active
/// sliders are placed at random clear of the goal region and of the corridor
/// between goal slider and goal.
pub fn mpc_scene(seed: u64, cfg: &SceneConfig) -> Result<SystemState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = cfg.goal_slider_index;
    let rg = cfg.slider_radii[g];
    for _ in 0..SCENE_ATTEMPTS {
        let dist = rng.random_range(0.12..0.2);
        let phi = std::f64::consts::PI + rng.random_range(-1.0..1.0);
        let dir = Vec2::new(phi.cos(), phi.sin());
        let goal_pos = cfg.goal_center + dir * dist;
        let pusher = goal_pos + dir * (cfg.pusher_radius + rg + rng.random_range(0.005..0.03));
        let table = cfg.table_bounds.shrink(rg);
        if !table.contains(&goal_pos) || !cfg.table_bounds.shrink(cfg.pusher_radius).contains(&pusher) {
            continue;
        }

        let mut sliders: Vec<SliderState> = (0..cfg.num_sliders)
            .map(|i| SliderState::at_rest(cfg.parked_positions[i]))
            .collect();
        sliders[g] = SliderState::at_rest(goal_pos);
        let mut placed = vec![(pusher, cfg.pusher_radius), (goal_pos, rg)];
        let mut ok = true;
        for i in (0..cfg.active_sliders).filter(|&i| i != g) {
            let r = cfg.slider_radii[i];
            let region = cfg.table_bounds.shrink(r);
            let spot = (0..SCENE_ATTEMPTS).find_map(|_| {
                let p = Vec2::new(
                    rng.random_range(region.min.x..region.max.x),
                    rng.random_range(region.min.y..region.max.y),
                );
                let clear_goal = (p - cfg.goal_center).norm() > cfg.goal_radius + r + 0.03;
                let clear_path = segment_distance(&p, &pusher, &cfg.goal_center) > rg + r + 0.02;
                let clear = placed.iter().all(|(c, rc)| penetration_depth(&p, r, c, *rc) == 0.0);
                (clear_goal && clear_path && clear).then_some(p)
            });
            match spot {
                Some(p) => {
                    placed.push((p, r));
                    sliders[i] = SliderState::at_rest(p);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return SystemState::for_scene(
                cfg,
                PusherState {
                    position: pusher,
                    velocity: Vec2::zeros(),
                },
                sliders,
            );
        }
    }
    Err(Error::WorkspaceTooCrowded(SCENE_ATTEMPTS))
}

/// Distance from `p` to the segment `a`-`b`.
fn segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}
