//! Sampling-based trajectory optimization and the receding-horizon loop.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parareal::PararealEngine;
use crate::propagator::Propagator;
use crate::state::{ControlAction, ControlSequence, SceneConfig, SystemState, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub w_goal: f64,
    pub w_obstacle: f64,
    pub w_drop: f64,
    pub w_action: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            w_goal: 1.0,
            w_obstacle: 0.5,
            w_drop: 1000.0,
            w_action: 0.01,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if [self.w_goal, self.w_obstacle, self.w_drop, self.w_action]
            .iter()
            .all(|w| *w >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "cost weights must be non-negative: {self:?}"
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub num_candidates: usize,
    /// Per-component velocity noise, m/s.
    pub noise_std: f64,
    pub elites: usize,
    pub refine_rounds: usize,
    pub rng_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            num_candidates: 32,
            noise_std: 0.03,
            elites: 4,
            refine_rounds: 3,
            rng_seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.num_candidates > 0
            && self.noise_std > 0.0
            && self.elites > 0
            && self.elites <= self.num_candidates
            && self.refine_rounds > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid optimizer config: {self:?}")))
        }
    }
}

/// Kinds of constraint violation counted by [`trajectory_cost`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    OffTable,
    ObstacleInGoal,
}

/// Violations present in a single state, as `(slider, kind)`.
pub fn state_violations(s: &SystemState, cfg: &SceneConfig) -> Vec<(usize, Violation)> {
    let mut out = Vec::new();
    for (i, sl) in s.sliders.iter().enumerate().take(cfg.active_sliders) {
        if !cfg.table_bounds.contains(&sl.position) {
            out.push((i, Violation::OffTable));
        }
        if i != cfg.goal_slider_index && cfg.in_goal(&sl.position) {
            out.push((i, Violation::ObstacleInGoal));
        }
    }
    out
}

/// Distinct `(slider, kind)` violations over time indices `1..=N`.
pub fn count_violations(t: &Trajectory, cfg: &SceneConfig) -> usize {
    t.states
        .iter()
        .skip(1)
        .flat_map(|s| state_violations(s, cfg))
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn goal_distance(s: &SystemState, cfg: &SceneConfig) -> f64 {
    (s.sliders[cfg.goal_slider_index].position - cfg.goal_center).norm()
}

pub fn goal_reached(s: &SystemState, cfg: &SceneConfig) -> bool {
    goal_distance(s, cfg) <= cfg.goal_radius
}

/// `w_goal * final goal distance + w_obstacle * obstacle displacement
///  + w_drop * violations + w_action * sum |u|^2`.
pub fn trajectory_cost(t: &Trajectory, seq: &ControlSequence, cfg: &SceneConfig, cp: &CostParams) -> f64 {
    let first = t.initial();
    let last = t.last();
    let goal = goal_distance(last, cfg);
    let obstacle: f64 = (0..cfg.active_sliders)
        .filter(|&i| i != cfg.goal_slider_index)
        .map(|i| (last.sliders[i].position - first.sliders[i].position).norm())
        .sum();
    let effort: f64 = seq.actions.iter().map(|u| u.velocity.norm_squared()).sum();
    cp.w_goal * goal + cp.w_obstacle * obstacle + cp.w_drop * count_violations(t, cfg) as f64 + cp.w_action * effort
}

/// Anything that predicts a trajectory from a start state and a control sequence.
pub trait Predictor: Send + Sync {
    fn predict(&self, s0: &SystemState, seq: &ControlSequence) -> Result<Trajectory>;

    /// Whether candidates may be evaluated concurrently with this predictor.
    fn parallel_candidates(&self) -> bool {
        true
    }
}

/// Serial rollout of a single propagator.
pub struct SerialPredictor<P>(pub P);

impl<P: Propagator> Predictor for SerialPredictor<P> {
    fn predict(&self, s0: &SystemState, seq: &ControlSequence) -> Result<Trajectory> {
        self.0.rollout(s0, seq)
    }
}

/// Parareal stopped after a fixed number of iterations.
pub struct PararealPredictor {
    pub engine: Arc<PararealEngine>,
    pub coarse: Arc<dyn Propagator>,
    pub fine: Arc<dyn Propagator>,
    pub iterations: usize,
    pub scene: SceneConfig,
}

impl Predictor for PararealPredictor {
    fn predict(&self, s0: &SystemState, seq: &ControlSequence) -> Result<Trajectory> {
        let k = self.iterations.min(seq.len());
        let result = self
            .engine
            .run(s0, seq, self.coarse.as_ref(), self.fine.as_ref(), k, &self.scene)?;
        Ok(result.iterations.into_iter().last().unwrap())
    }

    /// The engine's own pool already holds the worker budget.
    fn parallel_candidates(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub sequence: ControlSequence,
    pub cost: f64,
    pub initial_cost: f64,
    pub evaluations: usize,
}

fn evaluate(
    candidates: &[ControlSequence],
    s0: &SystemState,
    predictor: &dyn Predictor,
    cfg: &SceneConfig,
    cp: &CostParams,
) -> Result<Vec<f64>> {
    let cost = |seq: &ControlSequence| predictor.predict(s0, seq).map(|t| trajectory_cost(&t, seq, cfg, cp));
    if predictor.parallel_candidates() {
        candidates.par_iter().map(cost).collect()
    } else {
        candidates.iter().map(cost).collect()
    }
}

fn elite_mean(candidates: &[ControlSequence], costs: &[f64], elites: usize) -> ControlSequence {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    let n = candidates[0].len();
    let mut mean = vec![crate::state::Vec2::zeros(); n];
    for &c in &order[..elites] {
        for (m, u) in mean.iter_mut().zip(&candidates[c].actions) {
            *m += u.velocity;
        }
    }
    ControlSequence {
        actions: mean
            .into_iter()
            .zip(&candidates[0].actions)
            .map(|(v, u)| ControlAction {
                velocity: v / elites as f64,
                duration: u.duration,
            })
            .collect(),
    }
}

/// Cross-entropy-style search around `initial`. Never returns a sequence
/// costlier than `initial` under the same predictor.
pub fn optimize(
    s0: &SystemState,
    initial: &ControlSequence,
    predictor: &dyn Predictor,
    cfg: &SceneConfig,
    cp: &CostParams,
    oc: &OptimizerConfig,
) -> Result<OptimizeResult> {
    cp.validate()?;
    oc.validate()?;
    s0.check_scene(cfg)?;
    initial.validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(oc.rng_seed);
    let noise = Normal::new(0.0, oc.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let initial_cost = evaluate(std::slice::from_ref(initial), s0, predictor, cfg, cp)?[0];
    let mut best = (initial.clone(), initial_cost);
    let mut evaluations = 1;
    let mut incumbent = initial.clone();

    for _ in 0..oc.refine_rounds {
        let mut candidates = Vec::with_capacity(oc.num_candidates);
        candidates.push(incumbent.clone());
        for _ in 1..oc.num_candidates {
            let actions = incumbent
                .actions
                .iter()
                .map(|u| {
                    ControlAction {
                        velocity: u.velocity + crate::state::Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng)),
                        duration: u.duration,
                    }
                    .clamped(cfg.max_speed)
                })
                .collect();
            candidates.push(ControlSequence { actions });
        }
        let costs = evaluate(&candidates, s0, predictor, cfg, cp)?;
        evaluations += candidates.len();
        for (c, cost) in candidates.iter().zip(&costs) {
            if *cost < best.1 {
                best = (c.clone(), *cost);
            }
        }
        incumbent = elite_mean(&candidates, &costs, oc.elites);
    }
    let last = evaluate(std::slice::from_ref(&incumbent), s0, predictor, cfg, cp)?[0];
    evaluations += 1;
    if last < best.1 {
        best = (incumbent, last);
    }
    Ok(OptimizeResult {
        sequence: best.0,
        cost: best.1,
        initial_cost,
        evaluations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub max_steps: usize,
    /// Actions per optimized sequence.
    pub horizon: usize,
    /// Std of Gaussian noise added to each executed velocity component, m/s.
    pub world_noise: f64,
    /// Start each optimization from the previous solution shifted by one step.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            max_steps: 25,
            horizon: 4,
            world_noise: 0.0,
            warm_start: true,
            seed: 0,
        }
    }
}

/// One MPC step: the observed state, the executed action and the optimizer's
/// predicted cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub state: Vec<f64>,
    pub action: [f64; 2],
    pub cost: f64,
    pub predict_wall_clock_s: f64,
    pub success_flag: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Violation,
    StepLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub final_state: SystemState,
    pub outcome: Outcome,
}

impl EpisodeLog {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    pub fn total_predict_s(&self) -> f64 {
        self.steps.iter().map(|s| s.predict_wall_clock_s).sum()
    }

    /// One JSON object per step.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Receding-horizon loop: optimize, execute the first action in `world`,
/// observe, repeat.
pub fn mpc_episode(
    s0: &SystemState,
    cfg: &SceneConfig,
    cp: &CostParams,
    oc: &OptimizerConfig,
    mpc: &MpcConfig,
    predictor: &dyn Predictor,
    world: &dyn Propagator,
) -> Result<EpisodeLog> {
    if mpc.horizon == 0 || !(mpc.world_noise >= 0.0) {
        return Err(Error::InvalidParameter(format!("invalid MPC config: {mpc:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mpc.seed);
    let noise =
        Normal::new(0.0, mpc.world_noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut s = s0.clone();
    let mut steps = Vec::new();
    let mut plan = ControlSequence::zeros(mpc.horizon);

    if goal_reached(&s, cfg) {
        return Ok(EpisodeLog {
            steps,
            final_state: s,
            outcome: Outcome::Success,
        });
    }
    for step in 0..mpc.max_steps {
        let initial = if mpc.warm_start {
            plan.clone()
        } else {
            ControlSequence::zeros(mpc.horizon)
        };
        let step_oc = OptimizerConfig {
            rng_seed: oc.rng_seed.wrapping_add(step as u64),
            ..oc.clone()
        };
        let t = Instant::now();
        let result = optimize(&s, &initial, predictor, cfg, cp, &step_oc)?;
        let predict_wall_clock_s = t.elapsed().as_secs_f64();

        let mut action = result.sequence.actions[0];
        if mpc.world_noise > 0.0 {
            action.velocity.x += noise.sample(&mut rng);
            action.velocity.y += noise.sample(&mut rng);
        }
        let next = world.step(&s, &action)?;
        let success = goal_reached(&next, cfg);
        steps.push(StepRecord {
            step,
            state: s.to_vector(),
            action: [action.velocity.x, action.velocity.y],
            cost: result.cost,
            predict_wall_clock_s,
            success_flag: success,
        });
        s = next;

        let mut shifted = result.sequence.actions[1..].to_vec();
        shifted.push(ControlAction::new(0.0, 0.0));
        plan = ControlSequence { actions: shifted };

        if success {
            return Ok(EpisodeLog {
                steps,
                final_state: s,
                outcome: Outcome::Success,
            });
        }
        if !state_violations(&s, cfg).is_empty() {
            return Ok(EpisodeLog {
                steps,
                final_state: s,
                outcome: Outcome::Violation,
            });
        }
    }
    Ok(EpisodeLog {
        steps,
        final_state: s,
        outcome: Outcome::StepLimit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fine::{FineParams, FinePropagator};
    use crate::state::{PusherState, SliderState, Vec2};

    fn scene() -> SceneConfig {
        SceneConfig::with_sliders(2, 2)
    }

    fn state(goal: Vec2, obstacle: Vec2, pusher: Vec2) -> SystemState {
        SystemState {
            pusher: PusherState {
                position: pusher,
                velocity: Vec2::zeros(),
            },
            sliders: vec![SliderState::at_rest(goal), SliderState::at_rest(obstacle)],
        }
    }

    fn still(s: &SystemState, n: usize) -> Trajectory {
        Trajectory {
            states: vec![s.clone(); n + 1],
        }
    }

    #[test]
    fn solved_and_still_costs_nothing() {
        let cfg = scene();
        let s = state(cfg.goal_center, Vec2::new(-0.2, 0.0), Vec2::new(-0.2, 0.2));
        let seq = ControlSequence::zeros(4);
        assert_eq!(trajectory_cost(&still(&s, 4), &seq, &cfg, &CostParams::default()), 0.0);
    }

    #[test]
    fn obstacle_displacement_is_linear() {
        let cfg = scene();
        let cp = CostParams::default();
        let s = state(Vec2::new(0.0, 0.0), Vec2::new(-0.2, 0.0), Vec2::new(-0.2, 0.2));
        let seq = ControlSequence::zeros(2);
        let base = still(&s, 2);
        let mut moved = base.clone();
        moved.states[2].sliders[1].position.y += 0.1;
        let diff = trajectory_cost(&moved, &seq, &cfg, &cp) - trajectory_cost(&base, &seq, &cfg, &cp);
        assert!((diff - cp.w_obstacle * 0.1).abs() < 1e-12);
    }

    #[test]
    fn off_table_costs_at_least_drop_weight() {
        let cfg = scene();
        let cp = CostParams::default();
        let s = state(Vec2::new(0.0, 0.0), Vec2::new(-0.2, 0.0), Vec2::new(-0.2, 0.2));
        let mut t = still(&s, 3);
        for st in &mut t.states[1..] {
            st.sliders[1].position.x = -0.5;
        }
        // counted once even though it persists for three steps
        assert_eq!(count_violations(&t, &cfg), 1);
        assert!(trajectory_cost(&t, &ControlSequence::zeros(3), &cfg, &cp) >= cp.w_drop);
    }

    #[test]
    fn obstacle_in_goal_is_a_violation() {
        let cfg = scene();
        let s = state(Vec2::new(0.0, 0.0), cfg.goal_center, Vec2::new(-0.2, 0.2));
        assert_eq!(state_violations(&s, &cfg), vec![(1, Violation::ObstacleInGoal)]);
        let goal_in = state(cfg.goal_center, Vec2::new(-0.2, 0.0), Vec2::new(-0.2, 0.2));
        assert!(state_violations(&goal_in, &cfg).is_empty());
    }

    fn fine_predictor(cfg: &SceneConfig) -> SerialPredictor<FinePropagator> {
        SerialPredictor(FinePropagator::new(cfg.clone(), FineParams::default()))
    }

    #[test]
    fn optimize_never_worsens_solved_state() {
        let cfg = scene();
        let s = state(cfg.goal_center, Vec2::new(-0.2, -0.2), Vec2::new(-0.25, 0.25));
        let initial = ControlSequence::zeros(4);
        let r = optimize(
            &s,
            &initial,
            &fine_predictor(&cfg),
            &cfg,
            &CostParams::default(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!(r.cost <= r.initial_cost);
        assert_eq!(r.initial_cost, 0.0);
    }

    #[test]
    fn optimize_pushes_goal_slider_closer() {
        let cfg = SceneConfig::with_sliders(1, 1);
        let s = SystemState {
            pusher: PusherState {
                position: Vec2::new(-0.02, 0.0),
                velocity: Vec2::zeros(),
            },
            sliders: vec![SliderState::at_rest(Vec2::new(0.05, 0.0))],
        };
        let pred = fine_predictor(&cfg);
        let initial = ControlSequence::zeros(4);
        let r = optimize(
            &s,
            &initial,
            &pred,
            &cfg,
            &CostParams::default(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        let before = goal_distance(pred.predict(&s, &initial).unwrap().last(), &cfg);
        let after = goal_distance(pred.predict(&s, &r.sequence).unwrap().last(), &cfg);
        assert!(after < before, "{after} >= {before}");
        assert!(r.cost < r.initial_cost);
    }

    #[test]
    fn optimize_is_deterministic() {
        let cfg = scene();
        let s = state(Vec2::new(0.05, 0.0), Vec2::new(-0.2, 0.1), Vec2::new(-0.02, 0.0));
        let oc = OptimizerConfig {
            rng_seed: 3,
            ..Default::default()
        };
        let pred = fine_predictor(&cfg);
        let a = optimize(&s, &ControlSequence::zeros(4), &pred, &cfg, &CostParams::default(), &oc).unwrap();
        let b = optimize(&s, &ControlSequence::zeros(4), &pred, &cfg, &CostParams::default(), &oc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn candidates_respect_speed_limit() {
        let cfg = SceneConfig::with_sliders(1, 1);
        let s = SystemState {
            pusher: PusherState {
                position: Vec2::new(-0.02, 0.0),
                velocity: Vec2::zeros(),
            },
            sliders: vec![SliderState::at_rest(Vec2::new(0.05, 0.0))],
        };
        let oc = OptimizerConfig {
            noise_std: 1.0,
            ..Default::default()
        };
        let r = optimize(
            &s,
            &ControlSequence::zeros(4),
            &fine_predictor(&cfg),
            &cfg,
            &CostParams::default(),
            &oc,
        )
        .unwrap();
        assert!(r.sequence.validate(&cfg).is_ok());
    }

    #[test]
    fn already_solved_episode_takes_no_steps() {
        let cfg = scene();
        let s = state(cfg.goal_center, Vec2::new(-0.2, 0.0), Vec2::new(-0.2, 0.2));
        let world = FinePropagator::new(cfg.clone(), FineParams::default());
        let log = mpc_episode(
            &s,
            &cfg,
            &CostParams::default(),
            &OptimizerConfig::default(),
            &MpcConfig::default(),
            &fine_predictor(&cfg),
            &world,
        )
        .unwrap();
        assert!(log.success());
        assert!(log.steps.is_empty());
    }

    fn short_episode(noise: f64) -> (SystemState, SceneConfig, EpisodeLog) {
        let cfg = SceneConfig::with_sliders(1, 1);
        let s = SystemState {
            pusher: PusherState {
                position: Vec2::new(-0.02, 0.0),
                velocity: Vec2::zeros(),
            },
            sliders: vec![SliderState::at_rest(Vec2::new(0.05, 0.0))],
        };
        let world = FinePropagator::new(cfg.clone(), FineParams::default());
        let mpc = MpcConfig {
            max_steps: 4,
            world_noise: noise,
            seed: 2,
            ..Default::default()
        };
        let oc = OptimizerConfig {
            num_candidates: 8,
            refine_rounds: 2,
            ..Default::default()
        };
        let log = mpc_episode(
            &s,
            &cfg,
            &CostParams::default(),
            &oc,
            &mpc,
            &fine_predictor(&cfg),
            &world,
        )
        .unwrap();
        (s, cfg, log)
    }

    #[test]
    fn replaying_logged_actions_reproduces_states() {
        let (s0, cfg, log) = short_episode(0.0);
        assert!(!log.steps.is_empty());
        let world = FinePropagator::new(cfg.clone(), FineParams::default());
        let mut s = s0;
        for rec in &log.steps {
            assert_eq!(s.to_vector(), rec.state);
            s = world
                .step(&s, &ControlAction::new(rec.action[0], rec.action[1]))
                .unwrap();
        }
        assert_eq!(s, log.final_state);
    }

    fn untimed(mut log: EpisodeLog) -> EpisodeLog {
        log.steps.iter_mut().for_each(|s| s.predict_wall_clock_s = 0.0);
        log
    }

    #[test]
    fn zero_noise_episodes_are_deterministic() {
        assert_eq!(untimed(short_episode(0.0).2), untimed(short_episode(0.0).2));
    }

    #[test]
    fn world_noise_perturbs_execution() {
        let (_, _, clean) = short_episode(0.0);
        let (_, _, noisy) = short_episode(0.005);
        assert_ne!(clean.steps[0].action, noisy.steps[0].action);
        assert_eq!(untimed(short_episode(0.005).2), untimed(noisy));
    }

    #[test]
    fn jsonl_has_one_record_per_step() {
        let (_, _, log) = short_episode(0.0);
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), log.steps.len());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in [
            "step",
            "state",
            "action",
            "cost",
            "predict_wall_clock_s",
            "success_flag",
        ] {
            assert!(first.get(key).is_some(), "{key}");
        }
        assert_eq!(first["state"].as_array().unwrap().len(), 10);
    }

    #[test]
    fn parareal_predictor_matches_fine_at_full_iterations() {
        use crate::analytical::{AnalyticalCoarse, AnalyticalParams};
        let cfg = SceneConfig::with_sliders(1, 1);
        let fine = Arc::new(FinePropagator::new(cfg.clone(), FineParams::default()));
        let pred = PararealPredictor {
            engine: Arc::new(PararealEngine::new(2).unwrap().with_diagnostics(false)),
            coarse: Arc::new(AnalyticalCoarse::new(cfg.clone(), AnalyticalParams::default())),
            fine: fine.clone(),
            iterations: 4,
            scene: cfg.clone(),
        };
        let s = crate::fine::sample_valid_state(2, &cfg).unwrap();
        let seq = ControlSequence::new(vec![ControlAction::new(0.05, 0.02); 4]).unwrap();
        assert_eq!(pred.predict(&s, &seq).unwrap(), fine.rollout(&s, &seq).unwrap());
    }
}
