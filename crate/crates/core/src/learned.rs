//! The trained network as a coarse propagator, plus fine-model dataset
//! generation and the dataset CSV format.

use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytical::kinematic_pusher;
use crate::error::{Error, Result};
use crate::fine::{fine_step, sample_valid_state_with, FineParams};
use crate::geometry::penetration_depth;
use crate::nn::{NetworkModel, Sample};
use crate::propagator::Propagator;
use crate::state::{
    wrap_angle, ControlAction, ControlSequence, SceneConfig, SystemState, Trajectory, Vec2, DEFAULT_CONTROL_DURATION,
    PUSHER_DIM, SLIDER_DIM,
};

/// Control duration the network is trained for.
pub const TRAINED_DURATION: f64 = DEFAULT_CONTROL_DURATION;

/// One forward pass: sliders move by the predicted change, the pusher moves
/// kinematically.
pub fn learned_coarse_step(
    m: &NetworkModel,
    s: &SystemState,
    u: &ControlAction,
    cfg: &SceneConfig,
) -> Result<SystemState> {
    m.check_scene(cfg)?;
    s.check_scene(cfg)?;
    if (u.duration - TRAINED_DURATION).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "learned model is trained for {TRAINED_DURATION} s actions, got {} s",
            u.duration
        )));
    }
    let mut input = s.to_vector();
    input.extend_from_slice(&[u.velocity.x, u.velocity.y]);
    let delta = m.forward(&input)?;

    let mut next = SystemState {
        pusher: kinematic_pusher(&s.pusher, u),
        sliders: s.sliders.clone(),
    };
    for (sl, d) in next.sliders.iter_mut().zip(delta.chunks_exact(SLIDER_DIM)) {
        sl.position += Vec2::new(d[0], d[1]);
        sl.orientation = wrap_angle(sl.orientation + d[2]);
        sl.linear_velocity += Vec2::new(d[3], d[4]);
        sl.angular_velocity += d[5];
    }
    if !next.is_finite() {
        return Err(Error::NonFinite("learned_coarse_step".into()));
    }
    Ok(next)
}

/// Feeds each prediction back as the next input.
pub fn autoregressive_rollout(
    m: &NetworkModel,
    s0: &SystemState,
    seq: &ControlSequence,
    cfg: &SceneConfig,
) -> Result<Trajectory> {
    LearnedCoarse::new(cfg.clone(), m.clone())?.rollout(s0, seq)
}

#[derive(Clone, Debug)]
pub struct LearnedCoarse {
    pub scene: SceneConfig,
    pub model: NetworkModel,
}

impl LearnedCoarse {
    pub fn new(scene: SceneConfig, model: NetworkModel) -> Result<Self> {
        model.validate()?;
        model.check_scene(&scene)?;
        Ok(Self { scene, model })
    }
}

impl Propagator for LearnedCoarse {
    fn step(&self, state: &SystemState, action: &ControlAction) -> Result<SystemState> {
        learned_coarse_step(&self.model, state, action, &self.scene)
    }
}

/// Knobs of the action and state distribution used for data collection.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Fraction of samples whose action is aimed at a slider.
    pub aim_fraction: f64,
    /// Fraction of samples whose sliders start moving.
    pub moving_fraction: f64,
    /// Bound on sampled slider spin, rad/s.
    pub max_spin: f64,
    /// Active-slider counts drawn uniformly per sample; empty uses the scene's.
    pub active_counts: Vec<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            aim_fraction: 0.5,
            moving_fraction: 0.5,
            max_spin: 2.0,
            active_counts: Vec::new(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self, cfg: &SceneConfig) -> Result<()> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if !frac(self.aim_fraction) || !frac(self.moving_fraction) || !(self.max_spin >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid dataset config: {self:?}")));
        }
        if let Some(bad) = self.active_counts.iter().find(|&&c| c == 0 || c > cfg.num_sliders) {
            return Err(Error::InvalidParameter(format!(
                "active count {bad} outside 1..={}",
                cfg.num_sliders
            )));
        }
        Ok(())
    }
}

/// Generator for sample `index`: its own ChaCha stream under `seed`.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn random_velocity<R: Rng + ?Sized>(rng: &mut R, max_speed: f64) -> Vec2 {
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let speed = rng.random_range(0.0..=max_speed);
    Vec2::new(angle.cos(), angle.sin()) * speed
}

/// Draws one `(state, action)` pair and simulates it.
fn draw_sample<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SceneConfig,
    fine: &FineParams,
    dc: &DatasetConfig,
) -> Result<Sample> {
    let scene = if dc.active_counts.is_empty() {
        cfg.clone()
    } else {
        let mut c = cfg.clone();
        c.active_sliders = dc.active_counts[rng.random_range(0..dc.active_counts.len())];
        c
    };
    let mut s = sample_valid_state_with(rng, &scene)?;
    let max_speed = scene.max_speed;

    if rng.random_bool(dc.moving_fraction) {
        s.pusher.velocity = random_velocity(rng, max_speed);
        for sl in s.sliders.iter_mut().take(scene.active_sliders) {
            sl.linear_velocity = random_velocity(rng, max_speed);
            sl.angular_velocity = rng.random_range(-dc.max_spin..=dc.max_spin);
        }
    }

    let mut velocity = random_velocity(rng, max_speed);
    if rng.random_bool(dc.aim_fraction) {
        let target_idx = rng.random_range(0..scene.active_sliders);
        let center = s.sliders[target_idx].position;
        let radius = scene.slider_radii[target_idx];
        // aim point: uniform in the slider's disc
        let r = radius * rng.random::<f64>().sqrt();
        let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let aim = center + Vec2::new(phi.cos(), phi.sin()) * r;

        // move the pusher to within one step's reach of the slider when the
        // spot is free, so the aimed push can actually land
        let reach = scene.pusher_radius + radius;
        let gap = rng.random_range(0.0..=0.5 * max_speed * TRAINED_DURATION);
        let psi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let spot = center + Vec2::new(psi.cos(), psi.sin()) * (reach + gap);
        let on_table = scene.table_bounds.shrink(scene.pusher_radius).contains(&spot);
        let free = s
            .sliders
            .iter()
            .zip(&scene.slider_radii)
            .all(|(o, ro)| penetration_depth(&spot, scene.pusher_radius, &o.position, *ro) == 0.0);
        if on_table && free {
            s.pusher.position = spot;
        }
        let dir = aim - s.pusher.position;
        let speed = rng.random_range(0.0..=max_speed);
        if dir.norm() > 0.0 {
            velocity = dir.normalize() * speed;
        }
    }
    let u = ControlAction::new(velocity.x, velocity.y);
    let next = fine_step(&s, &u, &scene, fine)?;
    Ok(Sample {
        state: s.to_vector(),
        action: [u.velocity.x, u.velocity.y],
        next_state: next.to_vector(),
    })
}

/// `num_samples` fine-model transitions; sample `i` depends only on
/// `(rng_seed, i)`, so the result is independent of thread scheduling.
pub fn generate_dataset(
    num_samples: usize,
    cfg: &SceneConfig,
    fine: &FineParams,
    rng_seed: u64,
) -> Result<Vec<Sample>> {
    generate_dataset_with(num_samples, cfg, fine, &DatasetConfig::default(), rng_seed)
}

pub fn generate_dataset_with(
    num_samples: usize,
    cfg: &SceneConfig,
    fine: &FineParams,
    dc: &DatasetConfig,
    rng_seed: u64,
) -> Result<Vec<Sample>> {
    cfg.validate()?;
    fine.validate()?;
    dc.validate(cfg)?;
    (0..num_samples)
        .into_par_iter()
        .map(|i| draw_sample(&mut sample_rng(rng_seed, i), cfg, fine, dc))
        .collect()
}

/// Largest slider displacement within one sample.
pub fn max_slider_displacement(sample: &Sample) -> f64 {
    sample.state[PUSHER_DIM..]
        .chunks_exact(SLIDER_DIM)
        .zip(sample.next_state[PUSHER_DIM..].chunks_exact(SLIDER_DIM))
        .map(|(a, b)| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt())
        .fold(0.0, f64::max)
}

/// Fraction of samples in which some slider moves more than `threshold` meters.
pub fn contact_rate(samples: &[Sample], threshold: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .filter(|s| max_slider_displacement(s) > threshold)
        .count() as f64
        / samples.len() as f64
}

/// Column names of a flat state vector, prefixed.
pub fn state_column_names(prefix: &str, num_sliders: usize) -> Vec<String> {
    let mut names: Vec<String> = ["pusher_x", "pusher_y", "pusher_vx", "pusher_vy"]
        .iter()
        .map(|n| format!("{prefix}{n}"))
        .collect();
    for i in 0..num_sliders {
        for field in ["x", "y", "theta", "vx", "vy", "omega"] {
            names.push(format!("{prefix}slider{i}_{field}"));
        }
    }
    names
}

/// Header of the dataset CSV: state, action, next state.
pub fn dataset_header(num_sliders: usize) -> Vec<String> {
    let mut h = state_column_names("", num_sliders);
    h.push("action_vx".into());
    h.push("action_vy".into());
    h.extend(state_column_names("next_", num_sliders));
    h
}

/// Writes `samples` as CSV. A leading `# config: ` line carries `metadata`.
pub fn write_dataset<W: Write>(
    out: W,
    samples: &[Sample],
    num_sliders: usize,
    metadata: &serde_json::Value,
) -> Result<()> {
    let mut out = out;
    writeln!(out, "# config: {}", serde_json::to_string(metadata)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset_header(num_sliders))?;
    let mut row = Vec::new();
    for s in samples {
        row.clear();
        row.extend(
            s.state
                .iter()
                .chain(&s.action)
                .chain(&s.next_state)
                .map(|v| v.to_string()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV laid out for `num_sliders`, returning the samples and
/// the metadata line (if any).
pub fn read_dataset<R: Read>(input: R, num_sliders: usize) -> Result<(Vec<Sample>, Option<serde_json::Value>)> {
    read_dataset_impl(input, Some(num_sliders)).map(|(s, m, _)| (s, m))
}

/// [`read_dataset`] taking the slider count from the header width.
pub fn read_dataset_any<R: Read>(input: R) -> Result<(Vec<Sample>, Option<serde_json::Value>, usize)> {
    read_dataset_impl(input, None)
}

fn read_dataset_impl<R: Read>(
    input: R,
    num_sliders: Option<usize>,
) -> Result<(Vec<Sample>, Option<serde_json::Value>, usize)> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let (metadata, rest): (Option<serde_json::Value>, Option<String>) = match first.strip_prefix("# config: ") {
        Some(json) => (Some(serde_json::from_str(json.trim_end())?), None),
        None => (None, Some(first)),
    };
    let chained: Box<dyn Read> = match rest {
        Some(line) => Box::new(std::io::Cursor::new(line.into_bytes()).chain(reader)),
        None => Box::new(reader),
    };
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(chained);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let num_sliders = match num_sliders {
        Some(n) => n,
        None => {
            let state_cols = header.len().saturating_sub(2) / 2;
            state_cols.saturating_sub(PUSHER_DIM) / SLIDER_DIM
        }
    };
    let expected = dataset_header(num_sliders);
    if header != expected {
        return Err(Error::Format(format!(
            "dataset header has {} columns, expected {} for {num_sliders} sliders",
            header.len(),
            expected.len()
        )));
    }
    let dim = PUSHER_DIM + SLIDER_DIM * num_sliders;
    let mut samples = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let values = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("row {}: {e}", line + 1)))?;
        samples.push(Sample {
            state: values[..dim].to_vec(),
            action: [values[dim], values[dim + 1]],
            next_state: values[dim + 2..].to_vec(),
        });
    }
    Ok((samples, metadata, num_sliders))
}
