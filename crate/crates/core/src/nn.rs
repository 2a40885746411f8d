//! Feed-forward network, penetration-penalized loss and Adam training.
//!
//! The network maps `[state (4 + 6 N_s), action velocity (2)]` to the change
//! of every slider's `(x, y, theta, vx, vy, omega)`. The pusher never goes
//! through the network; its next position is kinematic.
//!
//! Inputs are standardized with `input_shift`/`input_scale` before the first
//! layer and outputs are mapped back with `output_scale`/`output_shift`, both
//! fitted to the training set.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{state_dim, wrap_angle, SceneConfig, PUSHER_DIM, SLIDER_DIM};

/// Hidden widths of the default architecture.
pub const DEFAULT_HIDDEN: [usize; 4] = [512, 256, 128, 64];
/// Input entries appended after the state vector.
pub const ACTION_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `rows = outputs`, `cols = inputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_shift: Vec<f64>,
    pub output_scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_shift: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
            output_shift: vec![0.0; output_dim],
            output_scale: vec![1.0; output_dim],
        }
    }

    /// Mean and standard deviation per column; constant columns get unit scale.
    pub fn fit_columns(data: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = data.nrows().max(1) as f64;
        let mut shift = Vec::with_capacity(data.ncols());
        let mut scale = Vec::with_capacity(data.ncols());
        for col in data.columns() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            shift.push(mean);
            scale.push(if std > 1e-12 { std } else { 1.0 });
        }
        (shift, scale)
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize_input(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Layer weights plus the normalization constants fitted at training time.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub layers: Vec<Layer>,
    pub normalization: Normalization,
}

impl NetworkModel {
    /// Architecture `[input, hidden..., output]` with ReLU hidden layers and a
    /// linear output layer, all parameters zero.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Dimension(format!("invalid layer widths {widths:?}")));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
                activation: if i == last {
                    Activation::Linear
                } else {
                    Activation::Relu
                },
            })
            .collect();
        Ok(Self {
            layers,
            normalization: Normalization::identity(widths[0], widths[widths.len() - 1]),
        })
    }

    /// He-style uniform fan-in initialization, zero biases.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(widths)?;
        for layer in &mut model.layers {
            let limit = (6.0 / layer.weights.ncols() as f64).sqrt();
            layer.weights.mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        Ok(model)
    }

    /// Default architecture for a scene: `(4 + 6 N_s + 2) -> 512 -> 256 -> 128 -> 64 -> 6 N_s`.
    pub fn default_widths(num_sliders: usize) -> Vec<usize> {
        let mut widths = vec![state_dim(num_sliders) + ACTION_DIM];
        widths.extend(DEFAULT_HIDDEN);
        widths.push(SLIDER_DIM * num_sliders);
        widths
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Dimension("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weights.nrows() != pair[1].weights.ncols() {
                return Err(Error::Dimension(format!("layers {i} and {} do not chain", i + 1)));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::Dimension(format!("layer {i} bias length mismatch")));
            }
        }
        if self.layers.last().unwrap().activation != Activation::Linear {
            return Err(Error::Dimension("output layer must be linear".into()));
        }
        let n = &self.normalization;
        if n.input_shift.len() != self.input_dim()
            || n.input_scale.len() != self.input_dim()
            || n.output_shift.len() != self.output_dim()
            || n.output_scale.len() != self.output_dim()
        {
            return Err(Error::Dimension(
                "normalization vectors do not match the layer sizes".into(),
            ));
        }
        Ok(())
    }

    /// Checks the model fits `cfg`'s state layout.
    pub fn check_scene(&self, cfg: &SceneConfig) -> Result<()> {
        let (input, output) = (state_dim(cfg.num_sliders) + ACTION_DIM, SLIDER_DIM * cfg.num_sliders);
        if self.input_dim() != input || self.output_dim() != output {
            return Err(Error::Dimension(format!(
                "model is {}->{}, scene with {} sliders needs {input}->{output}",
                self.input_dim(),
                self.output_dim(),
                cfg.num_sliders
            )));
        }
        Ok(())
    }

    /// De-normalized network output for one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} entries, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut a = Array1::from(self.normalization.normalize_input(input));
        for layer in &self.layers {
            let mut z = layer.weights.dot(&a);
            z += &layer.bias;
            if layer.activation == Activation::Relu {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        let n = &self.normalization;
        Ok(a.iter()
            .zip(n.output_scale.iter().zip(&n.output_shift))
            .map(|(y, (s, m))| y * s + m)
            .collect())
    }

    /// Normalized forward pass over a batch of normalized inputs, keeping
    /// every layer's activation for backpropagation.
    fn forward_cached(&self, x: Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for layer in &self.layers {
            let mut z = acts.last().unwrap().dot(&layer.weights.t());
            z += &layer.bias;
            if layer.activation == Activation::Relu {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    fn normalize_batch(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        let n = &self.normalization;
        let mut x = raw.to_owned();
        for (mut col, (m, s)) in x
            .columns_mut()
            .into_iter()
            .zip(n.input_shift.iter().zip(&n.input_scale))
        {
            col.mapv_inplace(|v| (v - m) / s);
        }
        x
    }

    pub fn to_file_format(&self, metadata: Option<serde_json::Value>) -> WeightFile {
        WeightFile {
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            normalization: self.normalization.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                    activation: l.activation,
                })
                .collect(),
            metadata,
        }
    }

    pub fn from_file_format(file: WeightFile) -> Result<Self> {
        let layers = file
            .layers
            .into_iter()
            .map(|r| {
                let weights = Array2::from_shape_vec((r.rows, r.cols), r.weights)
                    .map_err(|e| Error::Format(format!("layer weights: {e}")))?;
                Ok(Layer {
                    weights,
                    bias: Array1::from(r.bias),
                    activation: r.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self {
            layers,
            normalization: file.normalization,
        };
        model.validate()?;
        if model.input_dim() != file.input_dim || model.output_dim() != file.output_dim {
            return Err(Error::Format("declared dimensions disagree with the layers".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self, metadata: Option<serde_json::Value>) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file_format(metadata))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file_format(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path, metadata: Option<serde_json::Value>) -> Result<()> {
        std::fs::write(path, self.to_json(metadata)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk weight format. Weights are row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightFile {
    pub input_dim: usize,
    pub output_dim: usize,
    pub normalization: Normalization,
    pub layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// One fine-model transition `(x_n, u_n, x_{n+1})` in flat-vector form.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub state: Vec<f64>,
    pub action: [f64; 2],
    pub next_state: Vec<f64>,
}

impl Sample {
    /// Network input `[state, action]`.
    pub fn input(&self) -> Vec<f64> {
        let mut x = self.state.clone();
        x.extend_from_slice(&self.action);
        x
    }

    /// Change of the slider sub-vector, orientation differences wrapped.
    pub fn slider_delta(&self) -> Vec<f64> {
        self.next_state[PUSHER_DIM..]
            .iter()
            .zip(&self.state[PUSHER_DIM..])
            .enumerate()
            .map(|(i, (next, cur))| {
                if i % SLIDER_DIM == 2 {
                    wrap_angle(next - cur)
                } else {
                    next - cur
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `W_F`, weight of both penetration penalties.
    pub penetration_weight: f64,
    pub mse_space: MseSpace,
    pub rng_seed: u64,
}

/// Units of the squared-error term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MseSpace {
    /// Raw state units (meters, radians, per second).
    Physical,
    /// Each output divided by its training-set standard deviation.
    Normalized,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            epochs: 100,
            batch_size: 1024,
            penetration_weight: 10.0,
            mse_space: MseSpace::Normalized,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate > 0.0 && self.epochs > 0 && self.batch_size > 0 && self.penetration_weight >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid training config: {self:?}")))
        }
    }
}

/// Per-parameter gradients, laid out like [`NetworkModel::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    fn zeros_like(model: &NetworkModel) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }
}

/// Loss terms averaged over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse: f64,
    pub slider_penalty: f64,
    pub pusher_penalty: f64,
}

/// Dense training tensors derived from a list of samples.
struct Prepared {
    inputs: Array2<f64>,
    /// Slider sub-vector of the current state.
    sliders: Array2<f64>,
    /// Target change of the slider sub-vector.
    targets: Array2<f64>,
    /// Pusher position after the action.
    pusher_next: Array2<f64>,
}

impl Prepared {
    fn new(samples: &[Sample], cfg: &SceneConfig) -> Result<Self> {
        let sdim = state_dim(cfg.num_sliders);
        let odim = SLIDER_DIM * cfg.num_sliders;
        let n = samples.len();
        let mut inputs = Array2::zeros((n, sdim + ACTION_DIM));
        let mut sliders = Array2::zeros((n, odim));
        let mut targets = Array2::zeros((n, odim));
        let mut pusher_next = Array2::zeros((n, 2));
        for (i, smp) in samples.iter().enumerate() {
            if smp.state.len() != sdim || smp.next_state.len() != sdim {
                return Err(Error::Dimension(format!(
                    "sample {i} has state lengths {}/{}, scene needs {sdim}",
                    smp.state.len(),
                    smp.next_state.len()
                )));
            }
            inputs.row_mut(i).assign(&Array1::from(smp.input()));
            sliders
                .row_mut(i)
                .assign(&Array1::from(smp.state[PUSHER_DIM..].to_vec()));
            targets.row_mut(i).assign(&Array1::from(smp.slider_delta()));
            // kinematic pusher update over the fixed 1 s interval
            pusher_next[[i, 0]] = smp.state[0] + smp.action[0];
            pusher_next[[i, 1]] = smp.state[1] + smp.action[1];
        }
        Ok(Self {
            inputs,
            sliders,
            targets,
            pusher_next,
        })
    }

    fn rows(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), idx),
            sliders: self.sliders.select(Axis(0), idx),
            targets: self.targets.select(Axis(0), idx),
            pusher_next: self.pusher_next.select(Axis(0), idx),
        }
    }
}

/// Loss and gradient on prepared tensors. The returned gradient is of the
/// batch-mean loss.
fn loss_grad_prepared(
    model: &NetworkModel,
    batch: &Prepared,
    cfg: &SceneConfig,
    tc: &TrainConfig,
) -> (LossBreakdown, Gradients) {
    let b = batch.inputs.nrows();
    let acts = model.forward_cached(model.normalize_batch(batch.inputs.view()));
    let out = acts.last().unwrap();
    let n = &model.normalization;

    // physical delta and its gradient
    let mut delta = out.clone();
    for (j, mut col) in delta.columns_mut().into_iter().enumerate() {
        let (s, m) = (n.output_scale[j], n.output_shift[j]);
        col.mapv_inplace(|y| y * s + m);
    }
    let residual = &batch.targets - &delta;
    let mut mse = 0.0;
    let mut d_delta = residual.clone();
    for (j, (col, mut grad)) in residual.columns().into_iter().zip(d_delta.columns_mut()).enumerate() {
        let weight = match tc.mse_space {
            MseSpace::Physical => 1.0,
            MseSpace::Normalized => n.output_scale[j].powi(-2),
        };
        mse += weight * col.iter().map(|r| r * r).sum::<f64>();
        grad.mapv_inplace(|r| -2.0 * weight * r);
    }

    let w = tc.penetration_weight;
    let mut slider_penalty = 0.0;
    let mut pusher_penalty = 0.0;
    let ns = cfg.num_sliders;
    for row in 0..b {
        let pos = |i: usize| {
            let c = i * SLIDER_DIM;
            [
                batch.sliders[[row, c]] + delta[[row, c]],
                batch.sliders[[row, c + 1]] + delta[[row, c + 1]],
            ]
        };
        for i in 0..ns {
            let pi = pos(i);
            for j in (i + 1)..ns {
                let pj = pos(j);
                let (dx, dy) = (pi[0] - pj[0], pi[1] - pj[1]);
                let dist = (dx * dx + dy * dy).sqrt();
                let gap = (dist - (cfg.slider_radii[i] + cfg.slider_radii[j])).min(0.0);
                if gap < 0.0 {
                    slider_penalty += gap * gap;
                    if dist > 0.0 {
                        let k = w * 2.0 * gap / dist;
                        d_delta[[row, i * SLIDER_DIM]] += k * dx;
                        d_delta[[row, i * SLIDER_DIM + 1]] += k * dy;
                        d_delta[[row, j * SLIDER_DIM]] -= k * dx;
                        d_delta[[row, j * SLIDER_DIM + 1]] -= k * dy;
                    }
                }
            }
            let (dx, dy) = (pi[0] - batch.pusher_next[[row, 0]], pi[1] - batch.pusher_next[[row, 1]]);
            let dist = (dx * dx + dy * dy).sqrt();
            let gap = (dist - (cfg.pusher_radius + cfg.slider_radii[i])).min(0.0);
            if gap < 0.0 {
                pusher_penalty += gap * gap;
                if dist > 0.0 {
                    let k = w * 2.0 * gap / dist;
                    d_delta[[row, i * SLIDER_DIM]] += k * dx;
                    d_delta[[row, i * SLIDER_DIM + 1]] += k * dy;
                }
            }
        }
    }

    let inv_b = 1.0 / b as f64;
    let loss = LossBreakdown {
        total: (mse + w * slider_penalty + w * pusher_penalty) * inv_b,
        mse: mse * inv_b,
        slider_penalty: w * slider_penalty * inv_b,
        pusher_penalty: w * pusher_penalty * inv_b,
    };

    // back to the normalized output, then through the layers
    let mut grad = d_delta;
    for (j, mut col) in grad.columns_mut().into_iter().enumerate() {
        let s = n.output_scale[j] * inv_b;
        col.mapv_inplace(|g| g * s);
    }
    let mut grads = Gradients::zeros_like(model);
    for (l, layer) in model.layers.iter().enumerate().rev() {
        if layer.activation == Activation::Relu {
            grad.zip_mut_with(&acts[l + 1], |g, a| {
                if *a <= 0.0 {
                    *g = 0.0
                }
            });
        }
        grads.weights[l] = grad.t().dot(&acts[l]);
        grads.biases[l] = grad.sum_axis(Axis(0));
        if l > 0 {
            grad = grad.dot(&layer.weights);
        }
    }
    (loss, grads)
}

/// Batch-mean loss and its gradient with respect to every parameter.
///
/// Per sample the loss is
///
/// ```text
/// W_F * sum_{i<j} min(|p_i - p_j| - (r_i + r_j), 0)^2
///   + W_F * sum_i min(|p_P - p_i| - (r_p + r_i), 0)^2
///   + |x_fine - x_net|^2
/// ```
///
/// with `p_i` the predicted slider positions and `p_P` the pusher position
/// after the action. Under [`MseSpace::Normalized`] each squared-error column
/// is divided by its output scale squared; the penalties stay in meters.
pub fn loss_and_gradient(
    model: &NetworkModel,
    batch: &[Sample],
    cfg: &SceneConfig,
    tc: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    model.validate()?;
    model.check_scene(cfg)?;
    let prepared = Prepared::new(batch, cfg)?;
    Ok(loss_grad_prepared(model, &prepared, cfg, tc))
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    fn new(model: &NetworkModel) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
        }
    }

    fn update(&mut self, model: &mut NetworkModel, g: &Gradients, lr: f64) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (l, layer) in model.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .and(&g.weights[l])
                .for_each(|p, m, v, g| apply(p, m, v, *g));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .and(&g.biases[l])
                .for_each(|p, m, v, g| apply(p, m, v, *g));
        }
    }
}

/// Outcome of [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Sample-weighted mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Set when the median-filtered loss curve ends above where it started.
    pub flagged: bool,
}

/// Median filter with a centered window of `width` (shrunk at the ends).
pub fn median_filter(values: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            let mut w = values[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            w[w.len() / 2]
        })
        .collect()
}

/// True when the median-filtered loss curve ends no higher than it starts.
fn loss_trend_ok(losses: &[f64]) -> bool {
    let filtered = median_filter(losses, 5);
    match (filtered.first(), filtered.last()) {
        (Some(first), Some(last)) => last <= first,
        _ => true,
    }
}

/// Trains a network with the default architecture on `dataset`.
pub fn train(dataset: &[Sample], tc: &TrainConfig, cfg: &SceneConfig) -> Result<(NetworkModel, TrainReport)> {
    train_with_progress(
        dataset,
        tc,
        cfg,
        &NetworkModel::default_widths(cfg.num_sliders),
        |_, _| {},
    )
}

/// [`train`] with an explicit architecture and a per-epoch callback
/// `(epoch, mean loss)`.
pub fn train_with_progress(
    dataset: &[Sample],
    tc: &TrainConfig,
    cfg: &SceneConfig,
    widths: &[usize],
    mut progress: impl FnMut(usize, &LossBreakdown),
) -> Result<(NetworkModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    tc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.rng_seed);
    let mut model = NetworkModel::init(widths, &mut rng)?;
    model.check_scene(cfg)?;

    let data = Prepared::new(dataset, cfg)?;
    let (input_shift, input_scale) = Normalization::fit_columns(data.inputs.view());
    let (output_shift, output_scale) = Normalization::fit_columns(data.targets.view());
    model.normalization = Normalization {
        input_shift,
        input_scale,
        output_shift,
        output_scale,
    };

    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for (batch_idx, idx) in order.chunks(tc.batch_size).enumerate() {
            let batch = data.rows(idx);
            let (loss, grads) = loss_grad_prepared(&model, &batch, cfg, tc);
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: loss.total,
                });
            }
            let k = idx.len() as f64;
            sum.total += loss.total * k;
            sum.mse += loss.mse * k;
            sum.slider_penalty += loss.slider_penalty * k;
            sum.pusher_penalty += loss.pusher_penalty * k;
            adam.update(&mut model, &grads, tc.learning_rate);
        }
        let n = dataset.len() as f64;
        let mean = LossBreakdown {
            total: sum.total / n,
            mse: sum.mse / n,
            slider_penalty: sum.slider_penalty / n,
            pusher_penalty: sum.pusher_penalty / n,
        };
        progress(epoch, &mean);
        epoch_losses.push(mean.total);
    }
    let flagged = !loss_trend_ok(&epoch_losses);
    Ok((model, TrainReport { epoch_losses, flagged }))
}

/// Batch-mean loss of `model` on `samples` without gradients.
pub fn evaluate_loss(
    model: &NetworkModel,
    samples: &[Sample],
    cfg: &SceneConfig,
    tc: &TrainConfig,
) -> Result<LossBreakdown> {
    loss_and_gradient(model, samples, cfg, tc).map(|(l, _)| l)
}
