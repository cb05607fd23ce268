//! The neural stoppability monitor: a tanh MLP with a sigmoid head that maps
//! a state to an estimated probability of a successful fallback stop.
//!
//! Parameters live in one flat vector. Per layer the layout is the weight
//! matrix (`outputs x inputs`, row-major) followed by the bias vector; the
//! binary checkpoint format uses the same order.
//!
//! Checkpoint (`.bin`), all integers and floats little-endian:
//!
//! ```text
//! b"PRISMMON" | u32 version (=1) | u32 layer count L
//! L x (u32 inputs, u32 outputs)
//! f64 parameters in flat order
//! ```
//!
//! The JSON sidecar (`.json`) holds the input normalization bounds and
//! training metadata.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::dataset::{class_weights, ClassWeights, Dataset, TriggerSample};
use crate::env::{EnvSpec, State};
use crate::error::{PrismError, Result};
use crate::seed::StreamRng;

/// Probability clamp applied inside the loss.
pub const PROB_EPS: f64 = 1e-7;

const MAGIC: &[u8; 8] = b"PRISMMON";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    fn num_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Network weights plus the affine input normalization to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Monitor {
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
    input_lo: Vec<f64>,
    input_hi: Vec<f64>,
}

/// Binary stop/continue decision at threshold alpha.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Stoppable,
    Unstoppable,
}

/// `Stoppable` iff `value >= alpha`.
pub fn decide(value: f64, alpha: f64) -> Decision {
    if value >= alpha {
        Decision::Stoppable
    } else {
        Decision::Unstoppable
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with the probability clamped to `[eps, 1 - eps]`.
pub fn bce(prob: f64, label: f64) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -label * p.ln() - (1.0 - label) * (1.0 - p).ln()
}

impl Monitor {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(bounds: &[(f64, f64)], hidden: &[usize], rng: &mut R) -> Self {
        let mut m = Self::zeros(bounds, hidden);
        let mut offset = 0;
        for shape in &m.shapes {
            let limit = (6.0 / (shape.inputs + shape.outputs) as f64).sqrt();
            let n_w = shape.inputs * shape.outputs;
            for w in &mut m.params[offset..offset + n_w] {
                *w = rng.random_range(-limit..limit);
            }
            offset += shape.num_params();
        }
        m
    }

    /// A network sized for `spec`, normalized by its declared state box.
    pub fn for_env<R: Rng + ?Sized>(spec: &EnvSpec, hidden: &[usize], rng: &mut R) -> Self {
        Self::new(&spec.state_bounds(), hidden, rng)
    }

    pub fn zeros(bounds: &[(f64, f64)], hidden: &[usize]) -> Self {
        assert!(!bounds.is_empty(), "monitor needs at least one input");
        for &(lo, hi) in bounds {
            assert!(hi > lo, "normalization bounds must satisfy lo < hi");
        }
        let mut widths = vec![bounds.len()];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let shapes: Vec<LayerShape> =
            widths.windows(2).map(|w| LayerShape { inputs: w[0], outputs: w[1] }).collect();
        let n = shapes.iter().map(LayerShape::num_params).sum();
        Self {
            shapes,
            params: vec![0.0; n],
            input_lo: bounds.iter().map(|b| b.0).collect(),
            input_hi: bounds.iter().map(|b| b.1).collect(),
        }
    }

    /// Zero the output layer, making the network output exactly 0.5 everywhere.
    pub fn zero_output_layer(&mut self) {
        let last = *self.shapes.last().expect("non-empty");
        let n = self.params.len();
        self.params[n - last.num_params()..].fill(0.0);
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].inputs
    }

    pub fn layer_shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.shapes[..self.shapes.len() - 1].iter().map(|s| s.outputs).collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.input_lo.iter().copied().zip(self.input_hi.iter().copied()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(PrismError::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Estimated stoppability of `x`, strictly inside (0, 1) for finite weights.
    pub fn forward(&self, x: &State) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.value(x))
    }

    /// Forward pass without the dimension check.
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut scratch = Scratch::new(self);
        sigmoid(self.logit_into(x, &mut scratch))
    }

    /// Batch forward pass over states (dimension-checked).
    pub fn values<'a, I>(&self, states: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = &'a State>,
    {
        let mut scratch = Scratch::new(self);
        states
            .into_iter()
            .map(|x| {
                self.check_input(x)?;
                Ok(sigmoid(self.logit_into(x, &mut scratch)))
            })
            .collect()
    }

    fn logit_into(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        let input = &mut scratch.activations[0];
        for (i, (&xi, (&lo, &hi))) in x.iter().zip(self.input_lo.iter().zip(&self.input_hi)).enumerate() {
            input[i] = 2.0 * (xi - lo) / (hi - lo) - 1.0;
        }
        let last = self.shapes.len() - 1;
        let mut offset = 0;
        for (l, shape) in self.shapes.iter().enumerate() {
            let (w, rest) = self.params[offset..].split_at(shape.inputs * shape.outputs);
            let b = &rest[..shape.outputs];
            let (prev, next) = scratch.activations.split_at_mut(l + 1);
            let a_in = &prev[l];
            let a_out = &mut next[0];
            for o in 0..shape.outputs {
                let row = &w[o * shape.inputs..(o + 1) * shape.inputs];
                let z: f64 = row.iter().zip(a_in.iter()).map(|(wi, ai)| wi * ai).sum::<f64>() + b[o];
                a_out[o] = if l == last { z } else { z.tanh() };
            }
            offset += shape.num_params();
        }
        scratch.activations[last + 1][0]
    }

    /// Mean weighted cross-entropy over `batch`.
    pub fn loss(&self, batch: &[TriggerSample], weights: &ClassWeights) -> f64 {
        assert!(!batch.is_empty(), "loss of an empty batch");
        let refs: Vec<&TriggerSample> = batch.iter().collect();
        self.loss_and_grad(&refs, weights, None)
    }

    /// Exact gradient of [`Monitor::loss`] with respect to the flat parameters.
    pub fn grad(&self, batch: &[TriggerSample], weights: &ClassWeights) -> Vec<f64> {
        assert!(!batch.is_empty(), "gradient of an empty batch");
        let refs: Vec<&TriggerSample> = batch.iter().collect();
        let mut g = vec![0.0; self.params.len()];
        self.loss_and_grad(&refs, weights, Some(&mut g));
        g
    }

    /// Returns the batch loss; when `grad` is given it is overwritten with the gradient.
    fn loss_and_grad(&self, batch: &[&TriggerSample], weights: &ClassWeights, mut grad: Option<&mut [f64]>) -> f64 {
        let n = batch.len() as f64;
        let mut scratch = Scratch::new(self);
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut total = 0.0;
        for s in batch {
            let z = self.logit_into(&s.state, &mut scratch);
            let p = sigmoid(z);
            let y = s.label.as_f64();
            let w = weights.for_label(s.label);
            total += w * bce(p, y);
            if let Some(g) = grad.as_deref_mut() {
                // The clamp is flat outside (eps, 1 - eps).
                let dz = if p > PROB_EPS && p < 1.0 - PROB_EPS { w * (p - y) / n } else { 0.0 };
                if dz != 0.0 {
                    self.backprop(dz, &mut scratch, g);
                }
            }
        }
        total / n
    }

    fn backprop(&self, dz_out: f64, scratch: &mut Scratch, grad: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.shapes.len());
        let mut off = 0;
        for s in &self.shapes {
            offsets.push(off);
            off += s.num_params();
        }
        let last = self.shapes.len() - 1;
        scratch.delta[last + 1][0] = dz_out;
        for l in (0..=last).rev() {
            let shape = self.shapes[l];
            let off = offsets[l];
            let (delta_lo, delta_hi) = scratch.delta.split_at_mut(l + 1);
            let dz = &delta_hi[0];
            let a_in = &scratch.activations[l];
            let (gw, gb) = grad[off..off + shape.num_params()].split_at_mut(shape.inputs * shape.outputs);
            for o in 0..shape.outputs {
                let d = dz[o];
                gb[o] += d;
                for (gwi, ai) in gw[o * shape.inputs..(o + 1) * shape.inputs].iter_mut().zip(a_in) {
                    *gwi += d * ai;
                }
            }
            if l == 0 {
                break;
            }
            // Pull the error back through W and the tanh of layer l - 1.
            let w = &self.params[off..off + shape.inputs * shape.outputs];
            let d_prev = &mut delta_lo[l];
            d_prev.fill(0.0);
            for o in 0..shape.outputs {
                let d = dz[o];
                for (dp, wi) in d_prev.iter_mut().zip(&w[o * shape.inputs..(o + 1) * shape.inputs]) {
                    *dp += d * wi;
                }
            }
            for (dp, a) in d_prev.iter_mut().zip(a_in) {
                *dp *= 1.0 - a * a;
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.shapes.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.shapes.len() as u32).to_le_bytes());
        for s in &self.shapes {
            out.extend_from_slice(&(s.inputs as u32).to_le_bytes());
            out.extend_from_slice(&(s.outputs as u32).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], bounds: &[(f64, f64)]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(PrismError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(PrismError::Format(format!("unsupported version {version}")));
        }
        let n_layers = r.u32()? as usize;
        if n_layers == 0 {
            return Err(PrismError::Format("no layers".into()));
        }
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let inputs = r.u32()? as usize;
            let outputs = r.u32()? as usize;
            shapes.push(LayerShape { inputs, outputs });
        }
        let chained = shapes.windows(2).all(|w| w[0].outputs == w[1].inputs);
        if !chained || shapes.last().map(|s| s.outputs) != Some(1) {
            return Err(PrismError::Format("inconsistent layer shapes".into()));
        }
        if shapes[0].inputs != bounds.len() {
            return Err(PrismError::DimensionMismatch { expected: shapes[0].inputs, got: bounds.len() });
        }
        let n: usize = shapes.iter().map(LayerShape::num_params).sum();
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            params.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
        }
        if r.pos != bytes.len() {
            return Err(PrismError::Format("trailing bytes".into()));
        }
        Ok(Self {
            shapes,
            params,
            input_lo: bounds.iter().map(|b| b.0).collect(),
            input_hi: bounds.iter().map(|b| b.1).collect(),
        })
    }

    /// Write the checkpoint to `path` and its sidecar next to it.
    pub fn save(&self, path: &Path, metadata: serde_json::Value) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        let sidecar = Sidecar {
            format: "prism-monitor".into(),
            version: FORMAT_VERSION,
            input_lo: self.input_lo.clone(),
            input_hi: self.input_hi.clone(),
            layer_shapes: self.shapes.clone(),
            hidden_activation: "tanh".into(),
            output_activation: "sigmoid".into(),
            metadata,
        };
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        if sidecar.input_lo.len() != sidecar.input_hi.len() {
            return Err(PrismError::Format("normalization bounds differ in length".into()));
        }
        let bounds: Vec<(f64, f64)> = sidecar.input_lo.into_iter().zip(sidecar.input_hi).collect();
        let m = Self::from_bytes(&fs::read(path)?, &bounds)?;
        if m.shapes != sidecar.layer_shapes {
            return Err(PrismError::Format("sidecar shapes disagree with checkpoint".into()));
        }
        Ok(m)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    input_lo: Vec<f64>,
    input_hi: Vec<f64>,
    layer_shapes: Vec<LayerShape>,
    hidden_activation: String,
    output_activation: String,
    metadata: serde_json::Value,
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| PrismError::Format("truncated".into()))?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

struct Scratch {
    activations: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(m: &Monitor) -> Self {
        let mut widths = vec![m.input_dim()];
        widths.extend(m.shapes.iter().map(|s| s.outputs));
        Self {
            activations: widths.iter().map(|&w| vec![0.0; w]).collect(),
            delta: widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }
}

/// How per-class loss weights are chosen during training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// `n / (2 n_y)` from the training buffer.
    InverseFrequency,
    /// Unit weights; the minimizer is then the empirical label frequency.
    Uniform,
    /// Caller-chosen weights.
    Fixed { unsafe_weight: f64, safe_weight: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub hidden: Vec<usize>,
    pub class_weighting: ClassWeighting,
    /// Continue from the previous monitor instead of re-initializing each round.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 200,
            momentum: 0.9,
            hidden: vec![64, 64],
            class_weighting: ClassWeighting::InverseFrequency,
            warm_start: false,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PrismError::InvalidConfig(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if let ClassWeighting::Fixed { unsafe_weight, safe_weight } = self.class_weighting {
            if !(unsafe_weight > 0.0 && safe_weight > 0.0 && unsafe_weight.is_finite() && safe_weight.is_finite()) {
                return bad("fixed class weights must be finite and > 0".into());
            }
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return bad("hidden layer widths must be >= 1".into());
        }
        Ok(())
    }
}

/// Diagnostics from one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Sample-weighted mean of the mini-batch losses in each epoch.
    pub epoch_losses: Vec<f64>,
    pub weights: ClassWeights,
    pub steps: usize,
}

/// Mini-batch momentum SGD on the weighted cross-entropy, starting from `init`.
///
/// Each epoch visits the data in a fresh permutation drawn from `h.seed`.
pub fn train(init: &Monitor, d: &Dataset, h: &TrainHyper) -> Result<(Monitor, TrainReport)> {
    h.validate()?;
    let weights = match (class_weights(d)?, h.class_weighting) {
        (w, ClassWeighting::InverseFrequency) => w,
        (_, ClassWeighting::Uniform) => ClassWeights::uniform(),
        (_, ClassWeighting::Fixed { unsafe_weight, safe_weight }) => ClassWeights { unsafe_weight, safe_weight },
    };
    if let Some(s) = d.samples().first() {
        if s.state.dim() != init.input_dim() {
            return Err(PrismError::DimensionMismatch { expected: init.input_dim(), got: s.state.dim() });
        }
    }
    let mut m = init.clone();
    let mut velocity = vec![0.0; m.params.len()];
    let mut grad = vec![0.0; m.params.len()];
    let mut order: Vec<usize> = (0..d.len()).collect();
    let mut rng = StreamRng::seed_from_u64(h.seed);
    let mut epoch_losses = Vec::with_capacity(h.epochs);
    let mut steps = 0;
    let mut batch: Vec<&TriggerSample> = Vec::with_capacity(h.batch_size);
    for _ in 0..h.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(h.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &d.samples()[i]));
            let loss = m.loss_and_grad(&batch, &weights, Some(&mut grad));
            epoch_total += loss * chunk.len() as f64;
            for ((p, v), g) in m.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = h.momentum * *v + g;
                *p -= h.learning_rate * *v;
            }
            steps += 1;
        }
        epoch_losses.push(epoch_total / d.len() as f64);
    }
    if !m.is_finite() {
        return Err(PrismError::DegenerateDataset("training diverged to non-finite weights".into()));
    }
    Ok((m, TrainReport { epoch_losses, weights, steps }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvParams;
    use crate::rollout::Label;
    use crate::seed::{SeedTree, Stream};

    fn sample(coords: &[f64], label: Label, key: usize) -> TriggerSample {
        TriggerSample {
            traj_id: 0,
            time_index: key,
            state: State::new(coords),
            label,
            iteration: 0,
            env_params: EnvParams::default(),
        }
    }

    fn small_net(seed: u64) -> Monitor {
        let mut rng = SeedTree::new(seed).rng(Stream::Init, &[0]);
        Monitor::new(&[(-1.0, 1.0); 4], &[2], &mut rng)
    }

    #[test]
    fn decide_threshold_semantics() {
        assert_eq!(decide(0.47, 0.47), Decision::Stoppable);
        assert_eq!(decide(0.60, 0.47), Decision::Stoppable);
        assert_eq!(decide(0.60, 0.70), Decision::Unstoppable);
    }

    #[test]
    fn zero_output_layer_gives_one_half() {
        let mut rng = SeedTree::new(1).rng(Stream::Init, &[0]);
        let mut m = Monitor::new(&[(0.0, 10.0), (-0.5, 3.5)], &[64, 64], &mut rng);
        m.zero_output_layer();
        for x in [[0.0, 0.0], [9.0, 3.0], [-50.0, 100.0]] {
            assert_eq!(m.forward(&State::from(x)).unwrap(), 0.5);
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let m = small_net(0);
        assert!(matches!(
            m.forward(&State::from([1.0, 2.0])),
            Err(PrismError::DimensionMismatch { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn forward_range_and_determinism() {
        let m = small_net(3);
        let mut rng = SeedTree::new(3).rng(Stream::Evaluation, &[0]);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x = State::from(x);
            let v = m.forward(&x).unwrap();
            assert!(v > 0.0 && v < 1.0);
            assert_eq!(v.to_bits(), m.forward(&x).unwrap().to_bits());
        }
    }

    #[test]
    fn loss_examples() {
        let mut m = small_net(0);
        m.zero_output_layer();
        let batch = vec![sample(&[0.1, 0.2, 0.3, 0.4], Label::Safe, 0), sample(&[0.0; 4], Label::Unsafe, 1)];
        assert!((m.loss(&batch, &ClassWeights::uniform()) - std::f64::consts::LN_2).abs() < 1e-12);

        // Output bias alone sets the logit: sigmoid(z) = 0.9.
        let n = m.num_params();
        m.params_mut()[n - 1] = (0.9f64 / 0.1).ln();
        let w = ClassWeights { unsafe_weight: 1.0, safe_weight: 2.0 };
        let l = m.loss(&batch[..1], &w);
        assert!((l - 2.0 * -(0.9f64).ln()).abs() < 1e-12, "{l}");
    }

    #[test]
    fn confident_predictor_loss_is_clamped_near_zero() {
        let mut m = small_net(0);
        m.zero_output_layer();
        let n = m.num_params();
        m.params_mut()[n - 1] = 60.0;
        let batch = vec![sample(&[0.0; 4], Label::Safe, 0)];
        let w = ClassWeights { unsafe_weight: 3.0, safe_weight: 2.0 };
        let l = m.loss(&batch, &w);
        assert!(l <= -(1.0 - PROB_EPS).ln() * 3.0 + 1e-15 && l >= 0.0);
        assert!(m.grad(&batch, &w).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn output_bias_gradient_at_one_half() {
        let mut m = small_net(5);
        m.zero_output_layer();
        let g = m.grad(&[sample(&[0.3, -0.2, 0.9, 0.0], Label::Safe, 0)], &ClassWeights::uniform());
        assert!((g[g.len() - 1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("monitor.bin");
        let mut rng = SeedTree::new(8).rng(Stream::Init, &[0]);
        let m = Monitor::new(&[(0.0, 10.0), (-0.5, 3.5)], &[8, 5], &mut rng);
        m.save(&path, serde_json::json!({"note": "test"})).unwrap();
        let back = Monitor::load(&path).unwrap();
        assert_eq!(back, m);

        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], b"PRISMMON");
        assert_eq!(bytes.len(), 8 + 4 + 4 + 3 * 8 + 8 * m.num_params());
        assert!(Monitor::from_bytes(&bytes[..bytes.len() - 1], &m.bounds()).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Monitor::from_bytes(&bad, &m.bounds()).is_err());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let samples: Vec<_> = (0..60)
            .map(|i| {
                let x = i as f64 / 60.0;
                sample(&[x, 1.0 - x, x * x, 0.5], if x < 0.4 { Label::Unsafe } else { Label::Safe }, i)
            })
            .collect();
        let d = Dataset::from_samples(samples).unwrap();
        let h = TrainHyper { epochs: 20, batch_size: 16, hidden: vec![6], seed: 4, ..Default::default() };
        let init = small_net(2);
        let (a, ra) = train(&init, &d, &h).unwrap();
        let (b, rb) = train(&init, &d, &h).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(ra, rb);
        assert_eq!(ra.steps, 20 * 4);
    }

    #[test]
    fn training_needs_both_classes() {
        let d = Dataset::from_samples((0..10).map(|i| sample(&[0.0; 4], Label::Safe, i)).collect()).unwrap();
        let h = TrainHyper { class_weighting: ClassWeighting::Uniform, ..Default::default() };
        assert!(matches!(train(&small_net(0), &d, &h), Err(PrismError::DegenerateDataset(_))));
    }
}
