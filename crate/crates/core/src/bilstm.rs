//! Stacked bidirectional LSTM surrogates for inverse dynamics (angles to
//! torque) and forward dynamics (torques to angle).

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dynamics::{self, ArmParams, Trial};
use crate::error::{Error, Result};
use crate::metrics;
use crate::motion::{split_indices, NormalizationParams, Sequence, SequenceKind};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::dense::DenseCache;
use crate::nn::lstm::LstmCache;
use crate::nn::{
    ordered_grad_sum, train_loop, Activation, Dense, LossTerms, Lstm, Objective, Parameters,
    TrainConfig,
};

pub const CHECKPOINT_KIND: &str = "bilstm-dyn";

/// Reverses the frame order of a row-major `T x width` buffer.
fn reverse_frames(xs: &[f64], width: usize) -> Vec<f64> {
    xs.chunks_exact(width).rev().flatten().copied().collect()
}

/// Forward and backward LSTM cells whose per-frame outputs are concatenated
/// as `[h_fwd; h_bwd]` and passed through `activation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmLayer {
    forward: Lstm,
    backward: Lstm,
    activation: Activation,
}

#[derive(Debug, Clone)]
pub struct BiLstmLayerCache {
    steps: usize,
    fwd: LstmCache,
    bwd: LstmCache,
    pre: Vec<f64>,
    out: Vec<f64>,
}

impl BiLstmLayer {
    pub fn new(inputs: usize, hidden: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        Self {
            forward: Lstm::new(inputs, hidden, rng),
            backward: Lstm::new(inputs, hidden, rng),
            activation,
        }
    }

    pub fn from_cells(forward: Lstm, backward: Lstm, activation: Activation) -> Result<Self> {
        if forward.inputs() != backward.inputs() || forward.hidden() != backward.hidden() {
            return Err(Error::invalid("forward and backward cells differ in shape"));
        }
        Ok(Self {
            forward,
            backward,
            activation,
        })
    }

    pub fn forward_cell(&self) -> &Lstm {
        &self.forward
    }

    pub fn backward_cell(&self) -> &Lstm {
        &self.backward
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn inputs(&self) -> usize {
        self.forward.inputs()
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn outputs(&self) -> usize {
        2 * self.hidden()
    }

    /// The same layer with the two directions' parameters exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            forward: self.backward.clone(),
            backward: self.forward.clone(),
            activation: self.activation,
        }
    }

    /// Row-major `steps x 2H` output for a `steps x inputs` sequence.
    pub fn forward(&self, xs: &[f64], steps: usize) -> Result<(Vec<f64>, BiLstmLayerCache)> {
        let h = self.hidden();
        let (hf, fwd) = self.forward.forward(xs, steps)?;
        let reversed = reverse_frames(xs, self.inputs());
        let (hb_rev, bwd) = self.backward.forward(&reversed, steps)?;
        let mut pre = Vec::with_capacity(steps * 2 * h);
        for t in 0..steps {
            pre.extend_from_slice(&hf[t * h..(t + 1) * h]);
            let tb = steps - 1 - t;
            pre.extend_from_slice(&hb_rev[tb * h..(tb + 1) * h]);
        }
        let out: Vec<f64> = pre.iter().map(|&z| self.activation.apply(z)).collect();
        let cache = BiLstmLayerCache {
            steps,
            fwd,
            bwd,
            pre,
            out: out.clone(),
        };
        Ok((out, cache))
    }

    /// Backpropagates `d_out` (`steps x 2H`); parameter gradients for the
    /// forward then backward cell are added into `grad`.
    pub fn backward(&self, cache: &BiLstmLayerCache, d_out: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let (h, steps) = (self.hidden(), cache.steps);
        if d_out.len() != steps * 2 * h {
            return Err(Error::ShapeMismatch {
                layer: "bilstm output gradient".into(),
                expected: steps * 2 * h,
                found: d_out.len(),
            });
        }
        let mut d_f = vec![0.0; steps * h];
        let mut d_b_rev = vec![0.0; steps * h];
        for t in 0..steps {
            let tb = steps - 1 - t;
            for k in 0..h {
                let i = t * 2 * h + k;
                d_f[t * h + k] = d_out[i] * self.activation.derivative(cache.pre[i], cache.out[i]);
                let j = i + h;
                d_b_rev[tb * h + k] = d_out[j] * self.activation.derivative(cache.pre[j], cache.out[j]);
            }
        }
        let (g_f, g_b) = grad.split_at_mut(self.forward.n_params());
        let mut dx = self.forward.backward(&cache.fwd, &d_f, g_f)?;
        let dx_b = reverse_frames(&self.backward.backward(&cache.bwd, &d_b_rev, g_b)?, self.inputs());
        for (a, b) in dx.iter_mut().zip(&dx_b) {
            *a += b;
        }
        Ok(dx)
    }
}

impl Parameters for BiLstmLayer {
    fn n_params(&self) -> usize {
        self.forward.n_params() + self.backward.n_params()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        self.forward.write_params(out);
        self.backward.write_params(out);
    }

    fn read_params(&mut self, src: &mut &[f64]) {
        self.forward.read_params(src);
        self.backward.read_params(src);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiLstmConfig {
    pub layers: usize,
    /// Units per direction.
    pub hidden: usize,
}

impl BiLstmConfig {
    /// Five layers of 128 units.
    pub const FULL: Self = Self {
        layers: 5,
        hidden: 128,
    };
    /// Two layers of 32 units, sized for a workstation.
    pub const DESK: Self = Self { layers: 2, hidden: 32 };

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::invalid("BiLSTM needs at least one layer and one unit"));
        }
        Ok(())
    }
}

impl Default for BiLstmConfig {
    fn default() -> Self {
        Self::DESK
    }
}

/// Stacked bidirectional layers followed by a per-frame linear head. The
/// first layer's output is linear, later layers use ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmModel {
    config: BiLstmConfig,
    layers: Vec<BiLstmLayer>,
    head: Dense,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    steps: usize,
    layers: Vec<BiLstmLayerCache>,
    head: Vec<DenseCache>,
}

impl BiLstmModel {
    pub fn new(inputs: usize, outputs: usize, config: BiLstmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if inputs == 0 || outputs == 0 {
            return Err(Error::invalid("model needs at least one input and one output"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut width = inputs;
        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let act = if i == 0 { Activation::Linear } else { Activation::Relu };
            layers.push(BiLstmLayer::new(width, config.hidden, act, &mut rng));
            width = 2 * config.hidden;
        }
        let head = Dense::new(width, outputs, Activation::Linear, &mut rng);
        Ok(Self { config, layers, head })
    }

    pub fn config(&self) -> BiLstmConfig {
        self.config
    }

    pub fn layers(&self) -> &[BiLstmLayer] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.head.outputs()
    }

    /// Row-major `steps x outputs` predictions.
    pub fn forward(&self, xs: &[f64], steps: usize) -> Result<(Vec<f64>, BiLstmCache)> {
        if steps == 0 {
            return Err(Error::Empty("sequence".into()));
        }
        if xs.len() != steps * self.inputs() {
            return Err(Error::ShapeMismatch {
                layer: "bilstm[0]".into(),
                expected: steps * self.inputs(),
                found: xs.len(),
            });
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = xs.to_vec();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&h, steps)?;
            caches.push(cache);
            h = out;
        }
        let width = self.head.inputs();
        let mut ys = Vec::with_capacity(steps * self.outputs());
        let mut head = Vec::with_capacity(steps);
        for frame in h.chunks_exact(width) {
            let (y, c) = self.head.forward(frame)?;
            ys.extend(y);
            head.push(c);
        }
        Ok((
            ys,
            BiLstmCache {
                steps,
                layers: caches,
                head,
            },
        ))
    }

    pub fn predict(&self, xs: &[f64], steps: usize) -> Result<Vec<f64>> {
        Ok(self.forward(xs, steps)?.0)
    }

    /// Adds parameter gradients (layers in order, then the head) into `grad`
    /// and returns the input gradient.
    pub fn backward(&self, cache: &BiLstmCache, d_ys: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if cache.layers.len() != self.layers.len() || cache.head.len() != cache.steps {
            return Err(Error::Missing("forward cache for this model".into()));
        }
        if d_ys.len() != cache.steps * self.outputs() {
            return Err(Error::ShapeMismatch {
                layer: "bilstm head gradient".into(),
                expected: cache.steps * self.outputs(),
                found: d_ys.len(),
            });
        }
        let layer_params: usize = self.layers.iter().map(Parameters::n_params).sum();
        let (g_layers, g_head) = grad.split_at_mut(layer_params);
        let k = self.outputs();
        let mut d_h = Vec::with_capacity(cache.steps * self.head.inputs());
        for (c, d) in cache.head.iter().zip(d_ys.chunks_exact(k)) {
            d_h.extend(self.head.backward(c, d, g_head));
        }
        let mut slices = Vec::with_capacity(self.layers.len());
        let mut rest = g_layers;
        for layer in &self.layers {
            let (a, b) = rest.split_at_mut(layer.n_params());
            slices.push(a);
            rest = b;
        }
        for ((layer, c), g) in self.layers.iter().zip(&cache.layers).zip(slices).rev() {
            d_h = layer.backward(c, &d_h, g)?;
        }
        Ok(d_h)
    }
}

impl Parameters for BiLstmModel {
    fn n_params(&self) -> usize {
        self.layers.iter().map(Parameters::n_params).sum::<usize>() + self.head.n_params()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            l.write_params(out);
        }
        self.head.write_params(out);
    }

    fn read_params(&mut self, src: &mut &[f64]) {
        for l in &mut self.layers {
            l.read_params(src);
        }
        self.head.read_params(src);
    }
}

/// All joint angles in, one joint torque out.
pub fn build_id_model(n_joints: usize, config: BiLstmConfig, seed: u64) -> Result<BiLstmModel> {
    BiLstmModel::new(n_joints, 1, config, seed)
}

/// All joint torques in, one joint angle out.
pub fn build_fd_model(n_joints: usize, config: BiLstmConfig, seed: u64) -> Result<BiLstmModel> {
    BiLstmModel::new(n_joints, 1, config, seed)
}

/// Parameter count of a model with the given shape.
pub fn parameter_count(inputs: usize, outputs: usize, config: BiLstmConfig) -> usize {
    let h = config.hidden;
    let cell = |i: usize| 4 * h * (i + h + 1);
    let mut total = 2 * cell(inputs);
    total += (config.layers - 1) * 2 * cell(2 * h);
    total + outputs * (2 * h + 1)
}

/// One normalized training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub steps: usize,
    /// `steps x n_inputs`.
    pub inputs: Vec<f64>,
    /// `steps x n_outputs`.
    pub targets: Vec<f64>,
    /// Equation-of-motion torque per frame and output, in physical units.
    pub eom: Option<Vec<f64>>,
}

/// A set of sequences sharing input and output widths. Each sequence runs at
/// its own length, so no padding is involved.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    n_inputs: usize,
    n_outputs: usize,
    samples: Vec<SequenceSample>,
}

impl SequenceBatch {
    pub fn new(n_inputs: usize, n_outputs: usize, samples: Vec<SequenceSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.steps == 0 {
                return Err(Error::Empty(format!("sequence {i}")));
            }
            let bad = s.inputs.len() != s.steps * n_inputs
                || s.targets.len() != s.steps * n_outputs
                || s.eom.as_ref().is_some_and(|e| e.len() != s.steps * n_outputs);
            if bad {
                return Err(Error::invalid(format!("sequence {i} does not match the batch widths")));
            }
        }
        Ok(Self {
            n_inputs,
            n_outputs,
            samples,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn samples(&self) -> &[SequenceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Maps normalized predictions back to physical units for the physics term.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsScale {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynEpoch {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub physics_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynTrainReport {
    pub history: Vec<DynEpoch>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl DynTrainReport {
    pub fn log_csv(&self) -> String {
        let physics = self.history.iter().any(|e| e.physics_residual.is_some());
        let mut out = String::from("epoch,train_mse,val_mse");
        out.push_str(if physics { ",physics_residual\n" } else { "\n" });
        for e in &self.history {
            let val = e.val_mse.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!("{},{},{val}", e.epoch + 1, e.train_mse));
            if let Some(p) = e.physics_residual {
                out.push_str(&format!(",{p}"));
            }
            out.push('\n');
        }
        out
    }
}

struct SequenceObjective<'a> {
    train: &'a SequenceBatch,
    val: Option<&'a SequenceBatch>,
    physics: Option<&'a PhysicsScale>,
}

/// Per-sample squared error sums `(data, physics)`; with `grad`, adds the
/// gradient of `(data + w physics) / frames`.
fn sample_terms(
    model: &BiLstmModel,
    s: &SequenceSample,
    physics: Option<&PhysicsScale>,
    frames: f64,
    grad: Option<&mut [f64]>,
) -> Result<(f64, f64)> {
    let (ys, cache) = model.forward(&s.inputs, s.steps)?;
    let k = model.outputs();
    let mut d = vec![0.0; ys.len()];
    let mut data = 0.0;
    for (i, (y, t)) in ys.iter().zip(&s.targets).enumerate() {
        let e = y - t;
        data += e * e;
        d[i] = 2.0 * e / frames;
    }
    let mut phys = 0.0;
    if let (Some(p), Some(eom)) = (physics, &s.eom) {
        for (i, (y, tau)) in ys.iter().zip(eom).enumerate() {
            let j = i % k;
            let r = tau - (p.min[j] + p.range[j] * y);
            phys += r * r;
            d[i] -= 2.0 * p.weight * r * p.range[j] / frames;
        }
    }
    if let Some(g) = grad {
        model.backward(&cache, &d, g)?;
    }
    Ok((data, phys))
}

fn batch_mse(model: &BiLstmModel, batch: &SequenceBatch) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in batch.samples() {
        sum += sample_terms(model, s, None, 1.0, None)?.0;
        n += s.steps * batch.n_outputs();
    }
    Ok(sum / n as f64)
}

impl Objective<BiLstmModel> for SequenceObjective<'_> {
    fn len(&self) -> usize {
        self.train.len()
    }

    fn loss_and_grad(&self, model: &BiLstmModel, batch: &[usize], grad: &mut [f64]) -> Result<LossTerms> {
        let samples = self.train.samples();
        let frames: usize = batch.iter().map(|&i| samples[i].steps * self.train.n_outputs()).sum();
        let frames = frames as f64;
        let parts = ordered_grad_sum(batch, grad, |&i, g| {
            sample_terms(model, &samples[i], self.physics, frames, Some(g))
        })?;
        let data = parts.iter().map(|p| p.0).sum::<f64>() / frames;
        let phys = parts.iter().map(|p| p.1).sum::<f64>() / frames;
        let w = self.physics.map_or(0.0, |p| p.weight);
        Ok(LossTerms {
            total: data + w * phys,
            components: vec![data, phys],
        })
    }

    fn validation_loss(&self, model: &BiLstmModel) -> Result<Option<f64>> {
        match self.val {
            Some(v) if !v.is_empty() => Ok(Some(batch_mse(model, v)?)),
            _ => Ok(None),
        }
    }
}

impl BiLstmModel {
    /// Minimizes the mean squared error on `train`, plus the weighted squared
    /// equation-of-motion residual when `physics` is given. Early stopping
    /// monitors the data MSE on `val` when present.
    pub fn train(
        &mut self,
        train: &SequenceBatch,
        val: Option<&SequenceBatch>,
        physics: Option<&PhysicsScale>,
        config: &TrainConfig,
    ) -> Result<DynTrainReport> {
        for b in std::iter::once(train).chain(val) {
            if b.n_inputs() != self.inputs() || b.n_outputs() != self.outputs() {
                return Err(Error::invalid("sequence widths do not match the model"));
            }
        }
        if let Some(p) = physics {
            if p.min.len() != self.outputs() || p.range.len() != self.outputs() {
                return Err(Error::invalid("physics scale does not match the model outputs"));
            }
            if train.samples().iter().any(|s| s.eom.is_none()) {
                return Err(Error::Missing("equation-of-motion targets for the physics loss".into()));
            }
        }
        let objective = SequenceObjective { train, val, physics };
        let report = train_loop(self, &objective, config)?;
        let history = report
            .history
            .iter()
            .map(|e| DynEpoch {
                epoch: e.epoch,
                train_mse: e.components[0],
                val_mse: e.val_loss,
                physics_residual: physics.map(|_| e.components[1]),
            })
            .collect();
        Ok(DynTrainReport {
            history,
            best_epoch: report.best_epoch,
            stopped_early: report.stopped_early,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynRole {
    /// Angles to torques.
    Inverse,
    /// Torques to angles.
    Forward,
}

impl DynRole {
    pub fn input_kind(self) -> SequenceKind {
        match self {
            DynRole::Inverse => SequenceKind::Angle,
            DynRole::Forward => SequenceKind::Torque,
        }
    }

    pub fn output_kind(self) -> SequenceKind {
        match self {
            DynRole::Inverse => SequenceKind::Torque,
            DynRole::Forward => SequenceKind::Angle,
        }
    }

    fn split(self, trial: &Trial) -> (&Sequence, &Sequence) {
        match self {
            DynRole::Inverse => (&trial.motion, &trial.torque),
            DynRole::Forward => (&trial.torque, &trial.motion),
        }
    }
}

/// Trial indices for fitting, early-stopping validation and testing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl TrialSplit {
    /// Holds out `test_fraction` of the trials, then `val_fraction` of the rest.
    pub fn new(n: usize, test_fraction: f64, val_fraction: f64, seed: u64) -> Result<Self> {
        let (rest, test) = split_indices(n, 1.0 - test_fraction, seed)?;
        if val_fraction == 0.0 {
            return Ok(Self {
                train: rest,
                val: Vec::new(),
                test,
            });
        }
        let (fit, val) = split_indices(rest.len(), 1.0 - val_fraction, seed.wrapping_add(1))?;
        Ok(Self {
            train: fit.iter().map(|&i| rest[i]).collect(),
            val: val.iter().map(|&i| rest[i]).collect(),
            test,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynTrainConfig {
    pub model: BiLstmConfig,
    pub train: TrainConfig,
    /// Frames per training window; `None` trains on whole trials.
    pub window: Option<usize>,
    pub stride: usize,
    /// Weight on the equation-of-motion term when enabled.
    pub physics_weight: f64,
}

impl Default for DynTrainConfig {
    fn default() -> Self {
        Self {
            model: BiLstmConfig::DESK,
            train: TrainConfig::default(),
            window: None,
            stride: 1,
            physics_weight: 1.0,
        }
    }
}

impl DynTrainConfig {
    /// Desk-scale schedule: 50-frame windows at stride 25 for 300 epochs,
    /// keeping the parameters with the best validation loss.
    pub fn desk() -> Self {
        Self {
            train: TrainConfig {
                epochs: 300,
                patience: None,
                ..TrainConfig::default()
            },
            window: Some(50),
            stride: 25,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.window == Some(0) || self.stride == 0 {
            return Err(Error::invalid("window and stride must be positive"));
        }
        if !(self.physics_weight >= 0.0 && self.physics_weight.is_finite()) {
            return Err(Error::invalid("physics weight must be non-negative"));
        }
        Ok(())
    }
}

/// Window start frames covering `0..steps`, always including the tail.
fn window_starts(steps: usize, window: Option<usize>, stride: usize) -> (usize, Vec<usize>) {
    match window {
        Some(w) if w < steps => {
            let mut starts: Vec<usize> = (0..=steps - w).step_by(stride).collect();
            if *starts.last().unwrap() != steps - w {
                starts.push(steps - w);
            }
            (w, starts)
        }
        _ => (steps, vec![0]),
    }
}

/// A trained surrogate with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynSurrogate {
    pub role: DynRole,
    pub input_norm: NormalizationParams,
    pub output_norm: NormalizationParams,
    pub model: BiLstmModel,
}

impl DynSurrogate {
    pub fn input_joints(&self) -> &[String] {
        &self.input_norm.joints
    }

    pub fn output_joints(&self) -> &[String] {
        &self.output_norm.joints
    }

    fn encode(&self, seq: &Sequence) -> Result<Vec<f64>> {
        if seq.kind() != self.role.input_kind() {
            return Err(Error::invalid(format!(
                "{:?} surrogate expects {:?} input, got {:?}",
                self.role,
                self.role.input_kind(),
                seq.kind()
            )));
        }
        if seq.is_normalized() {
            return Err(Error::invalid("surrogate input must be in physical units"));
        }
        let picked = seq.select(&self.input_norm.joints)?;
        Ok(self.input_norm.normalize(&picked)?.as_flat().to_vec())
    }

    /// Runs the model on a physical-unit sequence and returns physical-unit
    /// outputs for the surrogate's output joints.
    pub fn predict(&self, seq: &Sequence) -> Result<Sequence> {
        let xs = self.encode(seq)?;
        let ys = self.model.predict(&xs, seq.n_frames())?;
        let k = self.model.outputs();
        let values = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| self.output_norm.denormalize_value(i % k, y))
            .collect();
        let out = Sequence::from_flat(self.role.output_kind(), &self.output_norm.joints, seq.dt(), values)?;
        if out.as_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("surrogate prediction".into()));
        }
        Ok(out)
    }

    fn samples(&self, trials: &[&Trial], window: Option<usize>, stride: usize, arm: Option<&ArmParams>) -> Result<SequenceBatch> {
        let k = self.model.outputs();
        let mut samples = Vec::new();
        for trial in trials {
            let (input, target) = self.role.split(trial);
            let xs = self.encode(input)?;
            let picked = target.select(&self.output_norm.joints)?;
            let ys = self.output_norm.normalize(&picked)?.as_flat().to_vec();
            let eom = arm.map(|p| eom_torques(trial, &self.output_norm.joints, p)).transpose()?;
            let steps = input.n_frames();
            let n = self.model.inputs();
            let (w, starts) = window_starts(steps, window, stride);
            for s in starts {
                samples.push(SequenceSample {
                    steps: w,
                    inputs: xs[s * n..(s + w) * n].to_vec(),
                    targets: ys[s * k..(s + w) * k].to_vec(),
                    eom: eom.as_ref().map(|e| e[s * k..(s + w) * k].to_vec()),
                });
            }
        }
        SequenceBatch::new(self.model.inputs(), k, samples)
    }

    /// Per-output `(NRMSE %, R²)` over the concatenated trials.
    pub fn evaluate(&self, trials: &[&Trial]) -> Result<Vec<ChannelScore>> {
        let mut pred: Vec<Vec<f64>> = vec![Vec::new(); self.model.outputs()];
        let mut truth = pred.clone();
        for trial in trials {
            let (input, target) = self.role.split(trial);
            let p = self.predict(input)?;
            let t = target.select(&self.output_norm.joints)?;
            for j in 0..pred.len() {
                pred[j].extend(p.channel(j));
                truth[j].extend(t.channel(j));
            }
        }
        pred.iter()
            .zip(&truth)
            .zip(&self.output_norm.joints)
            .map(|((p, t), joint)| {
                Ok(ChannelScore {
                    joint: joint.clone(),
                    nrmse: metrics::nrmse(p, t)?,
                    r_squared: metrics::r_squared(p, t)?,
                })
            })
            .collect()
    }

    pub fn to_checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        let meta = json!({
            "role": self.role,
            "inputs": self.model.inputs(),
            "input_norm": self.input_norm,
            "output_norm": self.output_norm,
        });
        Checkpoint::new(CHECKPOINT_KIND, &self.model.config(), seed, meta, &self.model.params())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let config: BiLstmConfig = ckpt.architecture()?;
        let field = |name: &str| {
            let v = ckpt.metadata.get(name).cloned();
            v.ok_or_else(|| Error::Checkpoint(format!("missing `{name}`")))
        };
        let role: DynRole = serde_json::from_value(field("role")?)?;
        let inputs: usize = serde_json::from_value(field("inputs")?)?;
        let input_norm: NormalizationParams = serde_json::from_value(field("input_norm")?)?;
        let output_norm: NormalizationParams = serde_json::from_value(field("output_norm")?)?;
        input_norm.validate()?;
        output_norm.validate()?;
        if input_norm.joints.len() != inputs {
            return Err(Error::Checkpoint("input normalization width mismatch".into()));
        }
        let mut model = BiLstmModel::new(inputs, output_norm.joints.len(), config, 0)?;
        model.set_params(&ckpt.decode_params()?)?;
        Ok(Self {
            role,
            input_norm,
            output_norm,
            model,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub joint: String,
    pub nrmse: f64,
    pub r_squared: f64,
}

/// `(M q̈ + C + G)` for the named joints of the two-link arm, per frame.
pub fn eom_torques(trial: &Trial, joints: &[String], arm: &ArmParams) -> Result<Vec<f64>> {
    let idx = joints
        .iter()
        .map(|j| {
            dynamics::JOINT_NAMES
                .iter()
                .position(|n| n == j)
                .ok_or_else(|| Error::Unsupported(format!("no equation of motion for joint `{j}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(trial.motion.n_frames() * idx.len());
    for s in trial.samples() {
        let tau = dynamics::inverse_dynamics(
            &Vector2::from(s.q),
            &Vector2::from(s.qd),
            &Vector2::from(s.qdd),
            arm,
        );
        out.extend(idx.iter().map(|&j| tau[j]));
    }
    Ok(out)
}

/// Fits normalization on the training trials, trains a surrogate for
/// `outputs` and returns it with its history. `physics` adds the
/// equation-of-motion loss and is only defined for inverse dynamics.
pub fn train_surrogate(
    trials: &[Trial],
    split: &TrialSplit,
    role: DynRole,
    outputs: &[String],
    config: &DynTrainConfig,
    physics: Option<&ArmParams>,
    seed: u64,
) -> Result<(DynSurrogate, DynTrainReport)> {
    config.validate()?;
    if physics.is_some() && role == DynRole::Forward {
        return Err(Error::Unsupported(
            "the equation-of-motion loss applies to inverse dynamics only".into(),
        ));
    }
    if outputs.is_empty() {
        return Err(Error::invalid("no output joints"));
    }
    let pick = |idx: &[usize]| -> Result<Vec<&Trial>> {
        idx.iter()
            .map(|&i| trials.get(i).ok_or_else(|| Error::invalid(format!("trial {i} out of range"))))
            .collect()
    };
    let (fit, val) = (pick(&split.train)?, pick(&split.val)?);
    if fit.is_empty() {
        return Err(Error::Empty("training trials".into()));
    }
    let inputs: Vec<Sequence> = fit.iter().map(|t| role.split(t).0.clone()).collect();
    let targets: Vec<Sequence> = fit.iter().map(|t| role.split(t).1.clone()).collect();
    let input_norm = NormalizationParams::fit_many(&inputs)?;
    let output_norm = NormalizationParams::fit_many(&targets)?.select(outputs)?;
    let model = BiLstmModel::new(input_norm.joints.len(), outputs.len(), config.model, seed)?;
    let mut surrogate = DynSurrogate {
        role,
        input_norm,
        output_norm,
        model,
    };
    let train = surrogate.samples(&fit, config.window, config.stride, physics)?;
    let val = surrogate.samples(&val, None, 1, None)?;
    let scale = physics.map(|_| PhysicsScale {
        min: surrogate.output_norm.min.clone(),
        range: (0..outputs.len()).map(|j| surrogate.output_norm.range(j)).collect(),
        weight: config.physics_weight,
    });
    let mut train_cfg = config.train.clone();
    train_cfg.seed = seed;
    let report = surrogate
        .model
        .train(&train, (!val.is_empty()).then_some(&val), scale.as_ref(), &train_cfg)?;
    Ok((surrogate, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_grad_close, central_difference};
    use rand::Rng;

    fn random_seq(rng: &mut ChaCha8Rng, steps: usize, width: usize) -> Vec<f64> {
        (0..steps * width).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn single_frame_concatenates_both_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = BiLstmLayer::new(3, 4, Activation::Linear, &mut rng);
        let x = random_seq(&mut rng, 1, 3);
        let (out, _) = layer.forward(&x, 1).unwrap();
        let (f, _) = layer.forward_cell().forward(&x, 1).unwrap();
        let (b, _) = layer.backward_cell().forward(&x, 1).unwrap();
        assert_eq!(out, [f, b].concat());
    }

    #[test]
    fn reversal_swaps_directions_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = BiLstmLayer::new(2, 3, Activation::Relu, &mut rng);
        let steps = 7;
        let x = random_seq(&mut rng, steps, 2);
        let (out, _) = layer.forward(&x, steps).unwrap();
        let (out_rev, _) = layer.swapped().forward(&reverse_frames(&x, 2), steps).unwrap();
        for t in 0..steps {
            let a = &out_rev[t * 6..(t + 1) * 6];
            let b = &out[(steps - 1 - t) * 6..(steps - t) * 6];
            assert_eq!(&a[..3], &b[3..]);
            assert_eq!(&a[3..], &b[..3]);
        }
    }

    #[test]
    fn layer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = BiLstmLayer::new(2, 3, Activation::Tanh, &mut rng);
        let steps = 5;
        let x = random_seq(&mut rng, steps, 2);
        let w = random_seq(&mut rng, steps, 6);
        let loss = |l: &BiLstmLayer, x: &[f64]| -> f64 {
            let (o, _) = l.forward(x, steps).unwrap();
            o.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer.forward(&x, steps).unwrap();
        let mut grad = vec![0.0; layer.n_params()];
        let dx = layer.backward(&cache, &w, &mut grad).unwrap();
        let p0 = layer.params();
        let fd = central_difference(&p0, 1e-5, |p| {
            layer.set_params(p).unwrap();
            loss(&layer, &x)
        });
        layer.set_params(&p0).unwrap();
        assert_grad_close(&grad, &fd, 1e-4, 1e-6);
        assert_grad_close(&dx, &central_difference(&x, 1e-5, |x| loss(&layer, x)), 1e-4, 1e-6);
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        // Two layers, T = 8, N = 2, with targets and a physics term.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = BiLstmConfig { layers: 2, hidden: 3 };
        let mut model = BiLstmModel::new(2, 1, cfg, 5).unwrap();
        let steps = 8;
        let sample = SequenceSample {
            steps,
            inputs: random_seq(&mut rng, steps, 2),
            targets: random_seq(&mut rng, steps, 1),
            eom: Some(random_seq(&mut rng, steps, 1)),
        };
        let scale = PhysicsScale {
            min: vec![-2.0],
            range: vec![3.0],
            weight: 0.5,
        };
        let f = |m: &BiLstmModel| {
            let (d, p) = sample_terms(m, &sample, Some(&scale), steps as f64, None).unwrap();
            (d + 0.5 * p) / steps as f64
        };
        let mut grad = vec![0.0; model.n_params()];
        sample_terms(&model, &sample, Some(&scale), steps as f64, Some(&mut grad)).unwrap();
        let p0 = model.params();
        let fd = central_difference(&p0, 1e-5, |p| {
            model.set_params(p).unwrap();
            f(&model)
        });
        model.set_params(&p0).unwrap();
        assert_grad_close(&grad, &fd, 1e-4, 1e-6);
    }

    #[test]
    fn builders_follow_config() {
        let full = build_id_model(4, BiLstmConfig::FULL, 0).unwrap();
        assert_eq!(full.layers().len(), 5);
        assert!(full.layers().iter().all(|l| l.hidden() == 128));
        assert_eq!(full.layers()[0].activation(), Activation::Linear);
        assert!(full.layers()[1..].iter().all(|l| l.activation() == Activation::Relu));
        assert_eq!(full.outputs(), 1);
        assert_eq!(full.n_params(), parameter_count(4, 1, BiLstmConfig::FULL));
        let id = build_id_model(2, BiLstmConfig::DESK, 9).unwrap();
        let fd = build_fd_model(2, BiLstmConfig::DESK, 9).unwrap();
        assert_eq!((id.layers().len(), id.layers()[0].hidden()), (2, 32));
        assert_eq!(id, fd);
        assert!(BiLstmModel::new(2, 1, BiLstmConfig { layers: 0, hidden: 4 }, 0).is_err());
    }

    #[test]
    fn prediction_is_deterministic_and_finite() {
        let model = build_id_model(2, BiLstmConfig { layers: 2, hidden: 4 }, 1).unwrap();
        let xs = vec![0.5; 2 * 30];
        let a = model.predict(&xs, 30).unwrap();
        assert_eq!(a, model.predict(&xs, 30).unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(matches!(model.predict(&xs[..59], 30), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(model.predict(&[], 0), Err(Error::Empty(_))));
    }

    #[test]
    fn windows_cover_the_tail() {
        assert_eq!(window_starts(10, Some(4), 3), (4, vec![0, 3, 6]));
        assert_eq!(window_starts(11, Some(4), 3), (4, vec![0, 3, 6, 7]));
        assert_eq!(window_starts(5, Some(8), 2), (5, vec![0]));
        assert_eq!(window_starts(5, None, 1), (5, vec![0]));
    }

    #[test]
    fn physics_loss_is_rejected_for_forward_dynamics() {
        let arm = ArmParams::default();
        let trials = dynamics::generate_dataset(&arm, 3, 20, 0.02, 0).unwrap();
        let split = TrialSplit::new(3, 0.34, 0.0, 0).unwrap();
        let r = train_surrogate(&trials, &split, DynRole::Forward, &["elbow".into()], &DynTrainConfig::default(), Some(&arm), 0);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn eom_torques_match_oracle_torques() {
        let arm = ArmParams::default();
        let trials = dynamics::generate_dataset(&arm, 1, 30, 0.02, 3).unwrap();
        let e = eom_torques(&trials[0], &["elbow".into()], &arm).unwrap();
        for (t, v) in e.iter().enumerate() {
            assert!((v - trials[0].torque.value(t, 1)).abs() < 1e-9);
        }
    }

    #[test]
    fn short_training_run_improves_and_round_trips() {
        let arm = ArmParams::default();
        let trials = dynamics::generate_dataset(&arm, 6, 40, 0.02, 1).unwrap();
        let split = TrialSplit::new(6, 0.2, 0.2, 1).unwrap();
        assert_eq!(split.train.len() + split.val.len() + split.test.len(), 6);
        let cfg = DynTrainConfig {
            model: BiLstmConfig { layers: 1, hidden: 6 },
            train: TrainConfig {
                epochs: 30,
                batch_size: 4,
                learning_rate: 1e-2,
                ..Default::default()
            },
            window: Some(20),
            stride: 10,
            physics_weight: 1.0,
        };
        let (s, report) = train_surrogate(&trials, &split, DynRole::Inverse, &["elbow".into()], &cfg, Some(&arm), 2).unwrap();
        let first = report.history.first().unwrap();
        let best = &report.history[report.best_epoch];
        assert!(best.val_mse.unwrap() < first.val_mse.unwrap());
        assert!(report.log_csv().starts_with("epoch,train_mse,val_mse,physics_residual\n"));

        let ckpt = s.to_checkpoint(2).unwrap();
        let back = DynSurrogate::from_checkpoint(&ckpt).unwrap();
        assert_eq!(back, s);
        let pred = back.predict(&trials[0].motion).unwrap();
        assert_eq!(pred.joint_names(), vec!["elbow".to_string()]);
        assert_eq!(pred.kind(), SequenceKind::Torque);
        assert!(back.predict(&trials[0].torque).is_err());
    }
}
