//! Scratch 1D convolutional network: layer specs, parameters, forward and
//! backward passes, and a plain SGD training loop.
//!
//! Everything is CPU-only f64 with deterministic, fixed-order arithmetic so
//! that identical seeds reproduce identical models bit for bit.

pub mod gradcheck;
mod network;
mod ops;
mod presets;
mod train;

pub use network::{ForwardTrace, GradSet, LayerGrad, Network};
pub use ops::{
    conv1d_backward, conv1d_forward, cross_entropy, fc_backward, fc_forward, maxpool1d_backward,
    maxpool1d_forward, softmax, softmax_ce_grad,
};
pub use presets::{
    activity_cnn, CnnWidths, ALIGNMENT_LAYER, KERNEL_SIZE, PERSONALIZATION_FROZEN, POOL_STRIDE,
    POOL_WINDOW,
};
pub use train::{evaluate, sgd_step, train, BatchPenalty, LabeledSample, TrainOptions};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use sha2::{Digest, Sha256};
use std::fmt;

/// Probability floor used when taking logs of softmax outputs.
pub const PROB_FLOOR: f64 = 1e-12;

/// What a layer computes. Parameters live separately in [`ModelParams`];
/// the spec only describes structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
    },
    MaxPool1d {
        window: usize,
        stride: usize,
    },
    FullyConnected {
        in_dim: usize,
        out_dim: usize,
    },
    /// Structurally identical to a fully connected layer; exists as a
    /// distinct kind so personalization can locate and regularize it.
    Alignment {
        in_dim: usize,
        out_dim: usize,
    },
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        !matches!(self, LayerKind::MaxPool1d { .. })
    }

    /// Shapes of (weights, bias) for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel_size],
                vec![out_channels],
            )),
            LayerKind::MaxPool1d { .. } => None,
            LayerKind::FullyConnected { in_dim, out_dim }
            | LayerKind::Alignment { in_dim, out_dim } => {
                Some((vec![out_dim, in_dim], vec![out_dim]))
            }
        }
    }

    /// Fan-in / fan-out used by the uniform Xavier initializer.
    fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => Some((in_channels * kernel_size, out_channels * kernel_size)),
            LayerKind::MaxPool1d { .. } => None,
            LayerKind::FullyConnected { in_dim, out_dim }
            | LayerKind::Alignment { in_dim, out_dim } => Some((in_dim, out_dim)),
        }
    }

    /// Output shape given an input shape, or why the two cannot compose.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
            } => {
                if stride == 0 || kernel_size == 0 {
                    return Err(Error::config("conv1d stride and kernel must be positive"));
                }
                if input.len() != 2 {
                    return Err(Error::config(format!(
                        "conv1d expects [channels, time] input, got shape {:?}",
                        input
                    )));
                }
                if input[0] != in_channels {
                    return Err(Error::config(format!(
                        "conv1d expects {} input channels, got {}",
                        in_channels, input[0]
                    )));
                }
                let t = input[1];
                if t < kernel_size {
                    return Err(Error::invalid_input(format!(
                        "sequence length {} shorter than kernel {}",
                        t, kernel_size
                    )));
                }
                Ok(vec![out_channels, (t - kernel_size) / stride + 1])
            }
            LayerKind::MaxPool1d { window, stride } => {
                if stride == 0 || window == 0 {
                    return Err(Error::config("maxpool1d window and stride must be positive"));
                }
                if input.len() != 2 {
                    return Err(Error::config(format!(
                        "maxpool1d expects [channels, time] input, got shape {:?}",
                        input
                    )));
                }
                let t = input[1];
                if t < window {
                    return Err(Error::invalid_input(format!(
                        "sequence length {} shorter than pooling window {}",
                        t, window
                    )));
                }
                Ok(vec![input[0], (t - window) / stride + 1])
            }
            LayerKind::FullyConnected { in_dim, out_dim }
            | LayerKind::Alignment { in_dim, out_dim } => {
                let flat: usize = input.iter().product();
                if flat != in_dim {
                    return Err(Error::config(format!(
                        "dense layer expects {} inputs, got shape {:?} ({} values)",
                        in_dim, input, flat
                    )));
                }
                Ok(vec![out_dim])
            }
        }
    }

    fn describe(&self) -> String {
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
            } => format!(
                "conv1d(in={},out={},k={},s={})",
                in_channels, out_channels, kernel_size, stride
            ),
            LayerKind::MaxPool1d { window, stride } => {
                format!("maxpool1d(w={},s={})", window, stride)
            }
            LayerKind::FullyConnected { in_dim, out_dim } => {
                format!("fc(in={},out={})", in_dim, out_dim)
            }
            LayerKind::Alignment { in_dim, out_dim } => {
                format!("alignment(in={},out={})", in_dim, out_dim)
            }
        }
    }
}

/// One named layer in an architecture. `frozen` is a training-time flag:
/// frozen layers still run forward but their parameters never update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub frozen: bool,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            frozen: false,
        }
    }
}

/// SHA-256 digest of the structural description of an architecture.
///
/// Freeze flags are deliberately excluded: freezing changes how a model is
/// trained, not what shape its parameters have, and two parties must agree
/// on fingerprints to exchange parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArchFingerprint(pub [u8; 32]);

impl ArchFingerprint {
    pub fn hex(&self) -> String {
        self.0.iter().map(|b| format!("{:02x}", b)).collect()
    }

    /// Leading 16 hex characters; enough to tell architectures apart in logs.
    pub fn short(&self) -> String {
        self.hex()[..16].to_string()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 64 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::parse(format!("bad fingerprint string {:?}", s)));
        }
        let mut out = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16).unwrap() as u8;
            let lo = (chunk[1] as char).to_digit(16).unwrap() as u8;
            out[i] = hi << 4 | lo;
        }
        Ok(ArchFingerprint(out))
    }
}

impl fmt::Display for ArchFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.short())
    }
}

/// A full network structure: expected input shape plus an ordered layer
/// stack. The final layer's output is interpreted as class logits; softmax
/// is applied by the network, not listed as a layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let arch = Architecture {
            input_shape,
            layers,
        };
        arch.layer_output_shapes()?;
        if arch.layers.is_empty() {
            return Err(Error::config("architecture needs at least one layer"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &arch.layers {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::config(format!("duplicate layer name {:?}", l.name)));
            }
        }
        Ok(arch)
    }

    /// Output shape after every layer, verifying the whole chain composes.
    pub fn layer_output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape.clone();
        for spec in &self.layers {
            cur = spec.kind.output_shape(&cur).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("layer {:?}: {}", spec.name, m)),
                Error::InvalidInput(m) => {
                    Error::InvalidInput(format!("layer {:?}: {}", spec.name, m))
                }
                other => other,
            })?;
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    pub fn output_dim(&self) -> Result<usize> {
        let shapes = self.layer_output_shapes()?;
        let last = shapes.last().expect("validated non-empty");
        if last.len() != 1 {
            return Err(Error::config(format!(
                "final layer must produce a flat logit vector, got {:?}",
                last
            )));
        }
        Ok(last[0])
    }

    pub fn fingerprint(&self) -> ArchFingerprint {
        let mut hasher = Sha256::new();
        hasher.update(format!("input={:?};", self.input_shape));
        for spec in &self.layers {
            hasher.update(spec.name.as_bytes());
            hasher.update(b":");
            hasher.update(spec.kind.describe().as_bytes());
            hasher.update(b";");
        }
        ArchFingerprint(hasher.finalize().into())
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Indices of layers that carry parameters, in network order.
    pub fn param_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.has_params())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        match self.layers.iter_mut().find(|l| l.name == name) {
            Some(l) => {
                l.frozen = frozen;
                Ok(())
            }
            None => Err(Error::config(format!("no layer named {:?}", name))),
        }
    }
}

/// Parameters for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayer {
    pub name: String,
    pub weights: Tensor,
    pub bias: Tensor,
    pub frozen: bool,
}

/// All trainable state of a model, tied to its architecture fingerprint.
/// Layers appear in network order; pooling layers contribute no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<ParamLayer>,
    fingerprint: ArchFingerprint,
}

impl ModelParams {
    /// Uniform Xavier initialization: weights from U(-a, a) with
    /// a = sqrt(6 / (fan_in + fan_out)), biases zero.
    pub fn init<R: Rng>(arch: &Architecture, rng: &mut R) -> Self {
        let fp = arch.fingerprint();
        let mut layers = Vec::new();
        for spec in &arch.layers {
            let Some((w_shape, b_shape)) = spec.kind.param_shapes() else {
                continue;
            };
            let (fan_in, fan_out) = spec.kind.fans().expect("param layer has fans");
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w_len: usize = w_shape.iter().product();
            let data: Vec<f64> = (0..w_len).map(|_| rng.gen_range(-a..a)).collect();
            layers.push(ParamLayer {
                name: spec.name.clone(),
                weights: Tensor::new(w_shape, data).expect("shape consistent"),
                bias: Tensor::zeros(b_shape),
                frozen: spec.frozen,
            });
        }
        ModelParams {
            layers,
            fingerprint: fp,
        }
    }

    pub fn fingerprint(&self) -> ArchFingerprint {
        self.fingerprint
    }

    pub fn layers(&self) -> &[ParamLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ParamLayer] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&ParamLayer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters as one vector: per layer, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    /// Rebuilds parameters from a flat vector laid out as [`flatten`] does,
    /// using `arch` for shapes and freeze flags.
    pub fn unflatten(arch: &Architecture, flat: &[f64]) -> Result<Self> {
        let mut layers = Vec::new();
        let mut pos = 0usize;
        for spec in &arch.layers {
            let Some((w_shape, b_shape)) = spec.kind.param_shapes() else {
                continue;
            };
            let w_len: usize = w_shape.iter().product();
            let b_len: usize = b_shape.iter().product();
            if pos + w_len + b_len > flat.len() {
                return Err(Error::config(format!(
                    "flat vector too short: {} values for architecture {}",
                    flat.len(),
                    arch.fingerprint()
                )));
            }
            let weights = Tensor::new(w_shape, flat[pos..pos + w_len].to_vec())?;
            pos += w_len;
            let bias = Tensor::new(b_shape, flat[pos..pos + b_len].to_vec())?;
            pos += b_len;
            layers.push(ParamLayer {
                name: spec.name.clone(),
                weights,
                bias,
                frozen: spec.frozen,
            });
        }
        if pos != flat.len() {
            return Err(Error::config(format!(
                "flat vector has {} values but architecture {} needs {}",
                flat.len(),
                arch.fingerprint(),
                pos
            )));
        }
        Ok(ModelParams {
            layers,
            fingerprint: arch.fingerprint(),
        })
    }

    /// Elementwise `self * factor`, used to pre-weight contributions before
    /// encrypted aggregation.
    pub fn scaled(&self, factor: f64) -> ModelParams {
        let mut out = self.clone();
        for l in &mut out.layers {
            for v in l.weights.data_mut() {
                *v *= factor;
            }
            for v in l.bias.data_mut() {
                *v *= factor;
            }
        }
        out
    }

    /// Elementwise sum with another parameter set of the same architecture.
    pub fn add(&self, other: &ModelParams) -> Result<ModelParams> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::protocol(format!(
                "architecture mismatch: {} vs {}",
                self.fingerprint, other.fingerprint
            )));
        }
        let mut out = self.clone();
        for (l, o) in out.layers.iter_mut().zip(&other.layers) {
            for (a, b) in l.weights.data_mut().iter_mut().zip(o.weights.data()) {
                *a += b;
            }
            for (a, b) in l.bias.data_mut().iter_mut().zip(o.bias.data()) {
                *a += b;
            }
        }
        Ok(out)
    }

    /// Largest absolute elementwise difference across all parameters.
    pub fn max_abs_diff(&self, other: &ModelParams) -> Result<f64> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::protocol("architecture mismatch".to_string()));
        }
        let mut worst = 0.0f64;
        for (l, o) in self.layers.iter().zip(&other.layers) {
            worst = worst.max(l.weights.max_abs_diff(&o.weights)?);
            worst = worst.max(l.bias.max_abs_diff(&o.bias)?);
        }
        Ok(worst)
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        match self.layers.iter_mut().find(|l| l.name == name) {
            Some(l) => {
                l.frozen = frozen;
                Ok(())
            }
            None => Err(Error::config(format!("no parameter layer named {:?}", name))),
        }
    }
}
