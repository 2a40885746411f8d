//! Parareal: serial coarse sweeps corrected by fine evaluations that run in
//! parallel across time slices.
//!
//! Iteration `k -> k+1` evaluates `F(x^k_n)` for every slice at once, then
//! sweeps `x^{k+1}_{n+1} = C(x^{k+1}_n) + F(x^k_n) - C(x^k_n)`. After
//! iteration `k` the first `k + 1` states are exact, so neither the fine
//! evaluations nor the sweep revisit them.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};
use crate::propagator::Propagator;
use crate::state::{wrap_angle, ControlSequence, SceneConfig, SystemState, Trajectory, PUSHER_DIM, SLIDER_DIM};

/// Wall-clock split of one Parareal iteration, seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IterationTiming {
    pub fine_s: f64,
    pub sweep_s: f64,
}

impl IterationTiming {
    pub fn total_s(&self) -> f64 {
        self.fine_s + self.sweep_s
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PararealTimings {
    /// Initial serial coarse rollout.
    pub coarse_s: f64,
    /// One entry per iteration `1..=K`.
    pub iterations: Vec<IterationTiming>,
    /// Serial fine reference (zero when diagnostics are off).
    pub reference_s: f64,
}

impl PararealTimings {
    /// Wall-clock to produce iterate `k`, excluding the diagnostic reference.
    pub fn cumulative_s(&self, k: usize) -> f64 {
        self.coarse_s + self.iterations[..k].iter().map(IterationTiming::total_s).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PararealResult {
    /// `iterations[k]` is iterate `k`; `iterations[0]` is the coarse rollout.
    pub iterations: Vec<Trajectory>,
    /// Serial fine rollout, when diagnostics are on.
    pub reference: Option<Trajectory>,
    /// Per-iteration RMS position error against `reference` (empty without it).
    pub rms_vs_fine: Vec<f64>,
    /// `rms_per_slider[k][i]` for each active slider `i`.
    pub rms_per_slider: Vec<Vec<f64>>,
    pub wall_clock: PararealTimings,
}

impl PararealResult {
    pub fn last(&self) -> &Trajectory {
        self.iterations.last().unwrap()
    }
}

/// RMS over time indices `1..=N` of active-slider position differences, plus
/// the same per active slider.
pub fn rms_error(a: &Trajectory, b: &Trajectory, cfg: &SceneConfig) -> Result<(f64, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::VectorLength {
            expected: a.len(),
            found: b.len(),
        });
    }
    let active = cfg.active_sliders;
    let steps = a.len().saturating_sub(1);
    if steps == 0 || active == 0 {
        return Ok((0.0, vec![0.0; active]));
    }
    let mut per = vec![0.0; active];
    for (sa, sb) in a.states.iter().zip(&b.states).skip(1) {
        if sa.sliders.len() < active || sb.sliders.len() < active {
            return Err(Error::SliderCount {
                expected: cfg.num_sliders,
                found: sa.sliders.len().min(sb.sliders.len()),
            });
        }
        for (i, acc) in per.iter_mut().enumerate() {
            *acc += (sa.sliders[i].position - sb.sliders[i].position).norm_squared();
        }
    }
    let total = (per.iter().sum::<f64>() / (steps * active) as f64).sqrt();
    let per = per.into_iter().map(|v| (v / steps as f64).sqrt()).collect();
    Ok((total, per))
}

/// `f + (c_new - c_old)` on flat state vectors, orientations by shortest angle.
fn correct(c_new: &SystemState, f: &SystemState, c_old: &SystemState) -> Result<SystemState> {
    let (cn, fv, co) = (c_new.to_vector(), f.to_vector(), c_old.to_vector());
    let out: Vec<f64> = (0..fv.len())
        .map(|j| {
            if cn[j] == co[j] {
                fv[j]
            } else if j >= PUSHER_DIM && (j - PUSHER_DIM) % SLIDER_DIM == 2 {
                wrap_angle(fv[j] + wrap_angle(cn[j] - co[j]))
            } else {
                fv[j] + (cn[j] - co[j])
            }
        })
        .collect();
    SystemState::from_vector(&out, f.sliders.len())
}

fn slice_error(iteration: usize, slice: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Slice {
        iteration,
        slice,
        source: Box::new(e),
    }
}

fn check_finite(s: &SystemState, iteration: usize, slice: usize) -> Result<()> {
    if s.is_finite() {
        Ok(())
    } else {
        Err(slice_error(iteration, slice)(Error::NonFinite(
            "parareal iterate".into(),
        )))
    }
}

/// Parareal driver owning a fixed-size worker pool.
pub struct PararealEngine {
    pool: ThreadPool,
    workers: usize,
    diagnostics: bool,
}

impl fmt::Debug for PararealEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PararealEngine")
            .field("workers", &self.workers)
            .field("diagnostics", &self.diagnostics)
            .finish()
    }
}

impl PararealEngine {
    /// Engine with `worker_count` threads and the fine-reference diagnostics on.
    pub fn new(worker_count: usize) -> Result<Self> {
        if worker_count == 0 {
            return Err(Error::InvalidParameter("worker_count must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(worker_count)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot build worker pool: {e}")))?;
        Ok(Self {
            pool,
            workers: worker_count,
            diagnostics: true,
        })
    }

    /// Turns the serial fine reference and RMS tracking on or off.
    pub fn with_diagnostics(mut self, on: bool) -> Self {
        self.diagnostics = on;
        self
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn pool(&self) -> &ThreadPool {
        &self.pool
    }

    pub fn run(
        &self,
        s0: &SystemState,
        seq: &ControlSequence,
        coarse: &dyn Propagator,
        fine: &dyn Propagator,
        iterations: usize,
        cfg: &SceneConfig,
    ) -> Result<PararealResult> {
        let n = seq.len();
        if iterations == 0 || iterations > n {
            return Err(Error::InvalidParameter(format!(
                "iteration count {iterations} outside 1..={n}"
            )));
        }
        s0.check_scene(cfg)?;
        let mut timings = PararealTimings::default();

        // k = 0: serial coarse rollout, keeping C(x^0_n) for the first correction
        let t = Instant::now();
        let mut states = Vec::with_capacity(n + 1);
        states.push(s0.clone());
        for (i, u) in seq.actions.iter().enumerate() {
            let next = coarse.step(&states[i], u).map_err(slice_error(0, i))?;
            check_finite(&next, 0, i)?;
            states.push(next);
        }
        let mut coarse_of: Vec<SystemState> = states[1..].to_vec();
        timings.coarse_s = t.elapsed().as_secs_f64();
        let mut history = vec![Trajectory { states }];

        for k in 0..iterations {
            let prev = &history[k].states;
            let t = Instant::now();
            let fine_vals: Vec<SystemState> = self.pool.install(|| {
                (k..n)
                    .into_par_iter()
                    .map(|i| fine.step(&prev[i], &seq.actions[i]).map_err(slice_error(k + 1, i)))
                    .collect::<Result<_>>()
            })?;
            let fine_s = t.elapsed().as_secs_f64();

            let t = Instant::now();
            let mut next = prev[..=k].to_vec();
            let mut next_coarse = coarse_of.clone();
            for i in k..n {
                let c_new = coarse.step(&next[i], &seq.actions[i]).map_err(slice_error(k + 1, i))?;
                let x = correct(&c_new, &fine_vals[i - k], &coarse_of[i]).map_err(slice_error(k + 1, i))?;
                check_finite(&x, k + 1, i)?;
                next_coarse[i] = c_new;
                next.push(x);
            }
            coarse_of = next_coarse;
            timings.iterations.push(IterationTiming {
                fine_s,
                sweep_s: t.elapsed().as_secs_f64(),
            });
            history.push(Trajectory { states: next });
        }

        let (reference, rms_vs_fine, rms_per_slider) = if self.diagnostics {
            let t = Instant::now();
            let reference = fine.rollout(s0, seq)?;
            timings.reference_s = t.elapsed().as_secs_f64();
            let mut totals = Vec::with_capacity(history.len());
            let mut per = Vec::with_capacity(history.len());
            for traj in &history {
                let (total, sliders) = rms_error(traj, &reference, cfg)?;
                totals.push(total);
                per.push(sliders);
            }
            (Some(reference), totals, per)
        } else {
            (None, Vec::new(), Vec::new())
        };

        Ok(PararealResult {
            iterations: history,
            reference,
            rms_vs_fine,
            rms_per_slider,
            wall_clock: timings,
        })
    }
}

/// One-shot [`PararealEngine::run`] on a fresh pool of `worker_count` threads.
pub fn parareal_run(
    s0: &SystemState,
    seq: &ControlSequence,
    coarse: &dyn Propagator,
    fine: &dyn Propagator,
    iterations: usize,
    worker_count: usize,
    cfg: &SceneConfig,
) -> Result<PararealResult> {
    PararealEngine::new(worker_count)?.run(s0, seq, coarse, fine, iterations, cfg)
}

/// Parareal wall-clock against the serial fine rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupReport {
    pub serial_fine_s: f64,
    pub coarse_sweep_s: f64,
    /// Wall-clock to reach iterate `k`, for `k = 1..=K`.
    pub cumulative_s: Vec<f64>,
}

impl SpeedupReport {
    /// `serial / parareal` to reach iterate `k` (1-based).
    pub fn speedup(&self, k: usize) -> f64 {
        self.serial_fine_s / self.cumulative_s[k - 1]
    }

    pub fn coarse_ratio(&self) -> f64 {
        self.serial_fine_s / self.coarse_sweep_s
    }
}

pub fn speedup_report(timings: &PararealTimings, serial_fine_s: f64) -> SpeedupReport {
    SpeedupReport {
        serial_fine_s,
        coarse_sweep_s: timings.coarse_s,
        cumulative_s: (1..=timings.iterations.len())
            .map(|k| timings.cumulative_s(k))
            .collect(),
    }
}

impl fmt::Display for SpeedupReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "serial fine      {:>12.6} s", self.serial_fine_s)?;
        writeln!(
            f,
            "coarse sweep     {:>12.6} s  (fine/coarse {:.1}x)",
            self.coarse_sweep_s,
            self.coarse_ratio()
        )?;
        writeln!(f, "{:>4}  {:>12}  {:>8}", "k", "parareal_s", "speedup")?;
        for (i, c) in self.cumulative_s.iter().enumerate() {
            writeln!(f, "{:>4}  {:>12.6}  {:>8.3}", i + 1, c, self.serial_fine_s / c)?;
        }
        write!(
            f,
            "speedup is governed by the iteration count: each iteration costs one fine slice plus a coarse sweep"
        )
    }
}

pub const CONVERGENCE_HEADER: [&str; 5] = ["scene_id", "iteration", "slider_index", "rms_m", "wall_clock_s"];

/// Appends one scene's rows: per active slider, plus an `all` row with the total.
pub fn write_convergence_rows<W: Write>(
    w: &mut csv::Writer<W>,
    scene_id: usize,
    result: &PararealResult,
) -> Result<()> {
    for (k, total) in result.rms_vs_fine.iter().enumerate() {
        let wall = result.wall_clock.cumulative_s(k).to_string();
        for (i, v) in result.rms_per_slider[k].iter().enumerate() {
            w.write_record([
                scene_id.to_string(),
                k.to_string(),
                i.to_string(),
                v.to_string(),
                wall.clone(),
            ])?;
        }
        w.write_record([
            scene_id.to_string(),
            k.to_string(),
            "all".into(),
            total.to_string(),
            wall,
        ])?;
    }
    Ok(())
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytical::{AnalyticalCoarse, AnalyticalParams};
    use crate::fine::{sample_valid_state, FineParams, FinePropagator};
    use crate::state::{ControlAction, SliderState, Vec2};

    fn single() -> SceneConfig {
        SceneConfig::with_sliders(1, 1)
    }

    fn pushing_scene(seed: u64, n: usize) -> (SystemState, ControlSequence) {
        let cfg = single();
        let s = sample_valid_state(seed, &cfg).unwrap();
        let dir = (s.sliders[0].position - s.pusher.position).normalize() * 0.08;
        let seq = ControlSequence::new(
            (0..n)
                .map(|i| ControlAction::new(dir.x + 0.005 * i as f64, dir.y - 0.004 * i as f64))
                .collect(),
        )
        .unwrap();
        (s, seq)
    }

    fn propagators() -> (AnalyticalCoarse, FinePropagator) {
        (
            AnalyticalCoarse::new(single(), AnalyticalParams::default()),
            FinePropagator::new(single(), FineParams::default()),
        )
    }

    #[test]
    fn rms_examples() {
        let cfg = single();
        let traj = |offsets: &[f64]| Trajectory {
            states: std::iter::once(0.0)
                .chain(offsets.iter().copied())
                .map(|dx| SystemState {
                    pusher: Default::default(),
                    sliders: vec![SliderState::at_rest(Vec2::new(dx, 0.0))],
                })
                .collect(),
        };
        let base = traj(&[0.0, 0.0, 0.0]);
        assert_eq!(rms_error(&base, &base, &cfg).unwrap().0, 0.0);
        let (r, per) = rms_error(&traj(&[0.01, 0.01, 0.01]), &base, &cfg).unwrap();
        assert!((r - 0.01).abs() < 1e-15 && (per[0] - 0.01).abs() < 1e-15);
        let (r, _) = rms_error(&traj(&[0.03, 0.04]), &traj(&[0.0, 0.0]), &cfg).unwrap();
        assert!((r - 0.0354).abs() < 5e-5);
        assert!((r - (0.0025f64 / 2.0).sqrt()).abs() < 1e-15);
        assert!(rms_error(&base, &traj(&[0.0]), &cfg).is_err());
    }

    #[test]
    fn rms_counts_only_active_sliders() {
        let cfg = SceneConfig::with_sliders(2, 1);
        let mk = |x1: f64| SystemState {
            pusher: Default::default(),
            sliders: vec![
                SliderState::at_rest(Vec2::new(0.01, 0.0)),
                SliderState::at_rest(Vec2::new(x1, 0.0)),
            ],
        };
        let a = Trajectory {
            states: vec![mk(0.0), mk(0.0)],
        };
        let b = Trajectory {
            states: vec![mk(0.0), mk(0.5)],
        };
        assert_eq!(rms_error(&a, &b, &cfg).unwrap(), (0.0, vec![0.0]));
    }

    #[test]
    fn fine_as_coarse_is_exact_after_one_iteration() {
        let (s, seq) = pushing_scene(1, 4);
        let (_, fine) = propagators();
        let r = parareal_run(&s, &seq, &fine, &fine, 1, 2, &single()).unwrap();
        assert_eq!(r.iterations[1], fine.rollout(&s, &seq).unwrap());
        assert_eq!(r.iterations[0], r.iterations[1]);
    }

    #[test]
    fn exact_at_full_iteration_count() {
        let (coarse, fine) = propagators();
        for n in [4, 8] {
            let (s, seq) = pushing_scene(3, n);
            let r = parareal_run(&s, &seq, &coarse, &fine, n, 4, &single()).unwrap();
            assert_eq!(r.iterations.len(), n + 1);
            assert_eq!(r.rms_vs_fine.len(), n + 1);
            assert_eq!(r.rms_vs_fine[n], 0.0);
            assert_eq!(r.last(), r.reference.as_ref().unwrap());
        }
    }

    #[test]
    fn prefix_is_bit_exact() {
        let (coarse, fine) = propagators();
        for seed in 0..5 {
            let (s, seq) = pushing_scene(seed, 4);
            let r = parareal_run(&s, &seq, &coarse, &fine, 4, 2, &single()).unwrap();
            let reference = r.reference.as_ref().unwrap();
            for (k, it) in r.iterations.iter().enumerate() {
                assert_eq!(it.states[..=k], reference.states[..=k], "seed {seed} k {k}");
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (coarse, fine) = propagators();
        let (s, seq) = pushing_scene(9, 4);
        let runs: Vec<_> = [1, 2, 4]
            .iter()
            .map(|&w| parareal_run(&s, &seq, &coarse, &fine, 3, w, &single()).unwrap())
            .collect();
        for r in &runs[1..] {
            assert_eq!(r.iterations, runs[0].iterations);
            assert_eq!(r.rms_vs_fine, runs[0].rms_vs_fine);
        }
    }

    #[test]
    fn iteration_zero_is_coarse_rollout() {
        let (coarse, fine) = propagators();
        let (s, seq) = pushing_scene(2, 4);
        let r = parareal_run(&s, &seq, &coarse, &fine, 1, 1, &single()).unwrap();
        assert_eq!(r.iterations[0], coarse.rollout(&s, &seq).unwrap());
    }

    #[test]
    fn production_mode_skips_reference() {
        let (coarse, fine) = propagators();
        let (s, seq) = pushing_scene(2, 4);
        let engine = PararealEngine::new(2).unwrap().with_diagnostics(false);
        let r = engine.run(&s, &seq, &coarse, &fine, 2, &single()).unwrap();
        assert!(r.reference.is_none() && r.rms_vs_fine.is_empty());
        assert_eq!(r.wall_clock.reference_s, 0.0);
        let with = PararealEngine::new(2)
            .unwrap()
            .run(&s, &seq, &coarse, &fine, 2, &single())
            .unwrap();
        assert_eq!(r.iterations, with.iterations);
    }

    #[test]
    fn invalid_iteration_counts() {
        let (coarse, fine) = propagators();
        let (s, seq) = pushing_scene(2, 4);
        assert!(parareal_run(&s, &seq, &coarse, &fine, 0, 1, &single()).is_err());
        assert!(parareal_run(&s, &seq, &coarse, &fine, 5, 1, &single()).is_err());
        assert!(PararealEngine::new(0).is_err());
    }

    struct Exploding;
    impl Propagator for Exploding {
        fn step(&self, s: &SystemState, _: &ControlAction) -> Result<SystemState> {
            let mut out = s.clone();
            out.sliders[0].position.x = f64::NAN;
            Ok(out)
        }
    }

    #[test]
    fn non_finite_iterates_are_reported_with_location() {
        let (_, fine) = propagators();
        let (s, seq) = pushing_scene(2, 4);
        match parareal_run(&s, &seq, &Exploding, &fine, 1, 1, &single()) {
            Err(Error::Slice {
                iteration: 0, slice: 0, ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shortest_angle_correction() {
        let mk = |theta: f64| {
            let mut s = SystemState {
                pusher: Default::default(),
                sliders: vec![SliderState::at_rest(Vec2::zeros())],
            };
            s.sliders[0].orientation = theta;
            s
        };
        // coarse moved across the wrap by 0.2 rad; fine sits at 3.0
        let x = correct(&mk(-3.1), &mk(3.0), &mk(2.98318530717958)).unwrap();
        let expected = wrap_angle(3.0 + 0.2);
        assert!((x.sliders[0].orientation - expected).abs() < 1e-9);
    }

    #[test]
    fn speedup_report_rows() {
        let t = PararealTimings {
            coarse_s: 0.01,
            iterations: vec![
                IterationTiming {
                    fine_s: 0.2,
                    sweep_s: 0.01,
                },
                IterationTiming {
                    fine_s: 0.2,
                    sweep_s: 0.01,
                },
            ],
            reference_s: 0.8,
        };
        let r = speedup_report(&t, 0.8);
        assert_eq!(r.cumulative_s.len(), 2);
        assert!((r.speedup(1) - 0.8 / 0.22).abs() < 1e-12);
        assert!(r.speedup(2) < r.speedup(1));
        assert!((r.coarse_ratio() - 80.0).abs() < 1e-9);
        assert!(r.to_string().contains("speedup"));
    }

    #[test]
    fn convergence_csv_layout() {
        let (coarse, fine) = propagators();
        let (s, seq) = pushing_scene(2, 4);
        let r = parareal_run(&s, &seq, &coarse, &fine, 4, 1, &single()).unwrap();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CONVERGENCE_HEADER).unwrap();
        write_convergence_rows(&mut w, 7, &r).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "scene_id,iteration,slider_index,rms_m,wall_clock_s");
        assert_eq!(lines.len(), 1 + 5 * 2);
        assert!(lines[1].starts_with("7,0,0,"));
        assert!(lines[2].starts_with("7,0,all,"));
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
