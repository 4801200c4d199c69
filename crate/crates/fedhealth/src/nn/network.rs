//! A network binds an [`Architecture`] to its [`ModelParams`] and runs the
//! forward and backward passes. The backward pass works off a
//! [`ForwardTrace`] captured during the forward pass, so gradients can only
//! be requested for inputs that were actually propagated.

use crate::error::{Error, Result};
use crate::nn::ops::{self, conv1d_forward, cross_entropy, fc_forward, maxpool1d_forward, softmax};
use crate::nn::{Architecture, LayerKind, ModelParams};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    params: ModelParams,
}

/// Everything the backward pass needs about one forward evaluation:
/// the input to every layer, pooling argmax maps, and final probabilities.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the network input; `activations[i + 1]` is the
    /// output of layer `i`. The last entry holds the logits.
    activations: Vec<Tensor>,
    /// One entry per layer; `Some` only for pooling layers.
    pool_argmax: Vec<Option<Vec<usize>>>,
    probs: Tensor,
}

impl ForwardTrace {
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("trace has activations")
    }
}

/// Gradient of the loss for one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub d_weights: Tensor,
    pub d_bias: Tensor,
}

/// Gradients aligned with the parameter layers of a model; `None` marks a
/// frozen layer that accumulates nothing and must not be updated.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    layers: Vec<Option<LayerGrad>>,
}

impl GradSet {
    /// Zero gradients shaped like `params`, with frozen layers as `None`.
    pub fn zeros_like(params: &ModelParams) -> GradSet {
        let layers = params
            .layers()
            .iter()
            .map(|l| {
                if l.frozen {
                    None
                } else {
                    Some(LayerGrad {
                        d_weights: Tensor::zeros(l.weights.shape().to_vec()),
                        d_bias: Tensor::zeros(l.bias.shape().to_vec()),
                    })
                }
            })
            .collect();
        GradSet { layers }
    }

    pub fn layers(&self) -> &[Option<LayerGrad>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Option<LayerGrad>] {
        &mut self.layers
    }

    pub fn get(&self, idx: usize) -> Option<&LayerGrad> {
        self.layers.get(idx).and_then(|g| g.as_ref())
    }

    /// Multiplies every gradient by `factor` (used to turn accumulated batch
    /// sums into means).
    pub fn scale(&mut self, factor: f64) {
        for g in self.layers.iter_mut().flatten() {
            for v in g.d_weights.data_mut() {
                *v *= factor;
            }
            for v in g.d_bias.data_mut() {
                *v *= factor;
            }
        }
    }
}

impl Network {
    /// Fresh network with seeded Xavier-initialized parameters.
    pub fn new_seeded(arch: Architecture, seed: u64) -> Result<Network> {
        arch.layer_output_shapes()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params = ModelParams::init(&arch, &mut rng);
        Ok(Network { arch, params })
    }

    /// Reassembles a network from an architecture and matching parameters.
    pub fn from_parts(arch: Architecture, params: ModelParams) -> Result<Network> {
        if params.fingerprint() != arch.fingerprint() {
            return Err(Error::protocol(format!(
                "parameters belong to architecture {}, expected {}",
                params.fingerprint(),
                arch.fingerprint()
            )));
        }
        let mut expected = Vec::new();
        for spec in &arch.layers {
            if let Some(shapes) = spec.kind.param_shapes() {
                expected.push((spec.name.clone(), shapes));
            }
        }
        if expected.len() != params.layers().len() {
            return Err(Error::config(format!(
                "architecture has {} parameter layers, got {}",
                expected.len(),
                params.layers().len()
            )));
        }
        for ((name, (w_shape, b_shape)), layer) in expected.iter().zip(params.layers()) {
            if layer.name != *name
                || layer.weights.shape() != w_shape.as_slice()
                || layer.bias.shape() != b_shape.as_slice()
            {
                return Err(Error::config(format!(
                    "parameter layer {:?} does not match spec layer {:?}",
                    layer.name, name
                )));
            }
        }
        Ok(Network { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Replaces the parameters, keeping the current freeze flags.
    pub fn set_params(&mut self, params: ModelParams) -> Result<()> {
        let rebuilt = Network::from_parts(self.arch.clone(), params)?;
        let flags: Vec<bool> = self.params.layers().iter().map(|l| l.frozen).collect();
        self.params = rebuilt.params;
        for (l, f) in self.params.layers_mut().iter_mut().zip(flags) {
            l.frozen = f;
        }
        Ok(())
    }

    /// Freezes or thaws a layer in both the architecture and the parameters.
    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.arch.set_frozen(name, frozen)?;
        if self.arch.layers[self.arch.layer_index(name).unwrap()]
            .kind
            .has_params()
        {
            self.params.set_frozen(name, frozen)?;
        }
        Ok(())
    }

    /// Forward pass returning class probabilities.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(x)?.probs.clone())
    }

    /// Forward pass returning raw logits.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let trace = self.forward_trace(x)?;
        Ok(trace.logits().clone())
    }

    /// Predicted 0-based class index (first maximum wins on ties).
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        let logits = self.logits(x)?;
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &v) in logits.data().iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        Ok(best)
    }

    /// Runs the full forward pass, capturing everything backward needs.
    pub fn forward_trace(&self, x: &Tensor) -> Result<ForwardTrace> {
        if x.shape() != self.arch.input_shape.as_slice() {
            return Err(Error::invalid_input(format!(
                "input shape {:?} does not match expected {:?}",
                x.shape(),
                self.arch.input_shape
            )));
        }
        let mut activations = Vec::with_capacity(self.arch.layers.len() + 1);
        let mut pool_argmax = Vec::with_capacity(self.arch.layers.len());
        activations.push(x.clone());
        let mut param_idx = 0usize;
        for spec in &self.arch.layers {
            let cur = activations.last().expect("non-empty");
            let next = match spec.kind {
                LayerKind::Conv1d { stride, .. } => {
                    let layer = &self.params.layers()[param_idx];
                    param_idx += 1;
                    pool_argmax.push(None);
                    conv1d_forward(cur, &layer.weights, &layer.bias, stride)?
                }
                LayerKind::MaxPool1d { window, stride } => {
                    let (out, arg) = maxpool1d_forward(cur, window, stride)?;
                    pool_argmax.push(Some(arg));
                    out
                }
                LayerKind::FullyConnected { .. } | LayerKind::Alignment { .. } => {
                    let layer = &self.params.layers()[param_idx];
                    param_idx += 1;
                    pool_argmax.push(None);
                    fc_forward(cur, &layer.weights, &layer.bias)?
                }
            };
            activations.push(next);
        }
        let probs = softmax(activations.last().expect("non-empty"))?;
        Ok(ForwardTrace {
            activations,
            pool_argmax,
            probs,
        })
    }

    /// Cross-entropy loss and parameter gradients for one traced sample.
    pub fn backward(&self, trace: &ForwardTrace, class: usize) -> Result<(f64, GradSet)> {
        let loss = cross_entropy(&trace.probs, class)?;
        let mut grads = GradSet::zeros_like(&self.params);
        self.backward_into(trace, class, &mut grads)?;
        Ok((loss, grads))
    }

    /// Accumulates this sample's gradients into `grads` (which must be
    /// shaped by [`GradSet::zeros_like`] for this model). Frozen layers are
    /// skipped, and the downward pass stops once no trainable layer remains
    /// below the current one.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        class: usize,
        grads: &mut GradSet,
    ) -> Result<()> {
        if trace.activations.len() != self.arch.layers.len() + 1 {
            return Err(Error::config(
                "forward trace does not match this architecture".to_string(),
            ));
        }
        if grads.layers.len() != self.params.layers().len() {
            return Err(Error::config(
                "gradient buffers do not match this model".to_string(),
            ));
        }

        // Layer index of the deepest trainable parameter layer; everything
        // below it needs no gradient at all.
        let param_indices = self.arch.param_layer_indices();
        let deepest = param_indices
            .iter()
            .zip(self.params.layers())
            .filter(|(_, p)| !p.frozen)
            .map(|(&li, _)| li)
            .min();
        let Some(deepest) = deepest else {
            return Ok(()); // fully frozen model: nothing to accumulate
        };

        // d loss / d logits for softmax + cross entropy.
        let mut upstream = ops::softmax_ce_grad(&trace.probs, class)?;

        let mut param_idx = self.params.layers().len();
        for (li, spec) in self.arch.layers.iter().enumerate().rev() {
            if li < deepest {
                break;
            }
            let input = &trace.activations[li];
            let need_dx = li > deepest;
            match spec.kind {
                LayerKind::Conv1d { stride, .. } => {
                    param_idx -= 1;
                    let layer = &self.params.layers()[param_idx];
                    let mut dx = if need_dx {
                        Some(Tensor::zeros(input.shape().to_vec()))
                    } else {
                        None
                    };
                    ops::conv1d_backward_acc(
                        input,
                        &layer.weights,
                        stride,
                        &upstream,
                        dx.as_mut(),
                        grads.layers[param_idx].as_mut(),
                    )?;
                    if let Some(dx) = dx {
                        upstream = dx;
                    }
                }
                LayerKind::MaxPool1d { .. } => {
                    let arg = trace.pool_argmax[li]
                        .as_ref()
                        .expect("pool layer recorded argmax");
                    upstream = ops::maxpool1d_backward(input.shape(), arg, &upstream)?;
                }
                LayerKind::FullyConnected { .. } | LayerKind::Alignment { .. } => {
                    param_idx -= 1;
                    let layer = &self.params.layers()[param_idx];
                    let mut dx = if need_dx {
                        Some(Tensor::zeros(vec![input.len()]))
                    } else {
                        None
                    };
                    ops::fc_backward_acc(
                        input,
                        &layer.weights,
                        &upstream,
                        dx.as_mut(),
                        grads.layers[param_idx].as_mut(),
                    )?;
                    if let Some(dx) = dx {
                        // Dense layers flatten their input; restore the
                        // feature-map shape for the layer below.
                        upstream = Tensor::new(input.shape().to_vec(), dx.into_data())?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn small_net(seed: u64) -> Network {
        let arch = Architecture::new(
            vec![2, 12],
            vec![
                LayerSpec::new(
                    "c1",
                    LayerKind::Conv1d {
                        in_channels: 2,
                        out_channels: 3,
                        kernel_size: 3,
                        stride: 1,
                    },
                ),
                LayerSpec::new("p1", LayerKind::MaxPool1d { window: 2, stride: 2 }),
                LayerSpec::new(
                    "f1",
                    LayerKind::FullyConnected {
                        in_dim: 15,
                        out_dim: 8,
                    },
                ),
                LayerSpec::new(
                    "out",
                    LayerKind::FullyConnected {
                        in_dim: 8,
                        out_dim: 4,
                    },
                ),
            ],
        )
        .unwrap();
        Network::new_seeded(arch, seed).unwrap()
    }

    fn ramp_input() -> Tensor {
        let data: Vec<f64> = (0..24).map(|i| (i as f64) * 0.1 - 1.0).collect();
        Tensor::new(vec![2, 12], data).unwrap()
    }

    #[test]
    fn forward_produces_distribution() {
        let net = small_net(1);
        let p = net.forward(&ramp_input()).unwrap();
        assert_eq!(p.shape(), &[4]);
        let sum: f64 = p.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let net = small_net(1);
        let bad = Tensor::zeros(vec![2, 10]);
        assert!(matches!(
            net.forward(&bad).unwrap_err(),
            Error::InvalidInput(_)
        ));
    }

    #[test]
    fn backward_needs_a_matching_trace() {
        let a = small_net(1);
        let b = {
            let arch = Architecture::new(
                vec![2, 12],
                vec![LayerSpec::new(
                    "f1",
                    LayerKind::FullyConnected {
                        in_dim: 24,
                        out_dim: 4,
                    },
                )],
            )
            .unwrap();
            Network::new_seeded(arch, 2).unwrap()
        };
        let trace = a.forward_trace(&ramp_input()).unwrap();
        assert!(b.backward(&trace, 0).is_err());
    }

    #[test]
    fn frozen_layers_get_no_gradient() {
        let mut net = small_net(3);
        net.set_frozen("c1", true).unwrap();
        let trace = net.forward_trace(&ramp_input()).unwrap();
        let (_, grads) = net.backward(&trace, 1).unwrap();
        assert!(grads.get(0).is_none(), "frozen conv has no gradient");
        assert!(grads.get(1).is_some());
        assert!(grads.get(2).is_some());
    }

    #[test]
    fn fully_frozen_model_accumulates_nothing() {
        let mut net = small_net(3);
        for name in ["c1", "f1", "out"] {
            net.set_frozen(name, true).unwrap();
        }
        let trace = net.forward_trace(&ramp_input()).unwrap();
        let (loss, grads) = net.backward(&trace, 1).unwrap();
        assert!(loss > 0.0);
        assert!(grads.layers().iter().all(|g| g.is_none()));
    }

    #[test]
    fn freezing_upper_layer_still_reaches_lower_ones() {
        let mut net = small_net(5);
        net.set_frozen("out", true).unwrap();
        let trace = net.forward_trace(&ramp_input()).unwrap();
        let (_, grads) = net.backward(&trace, 2).unwrap();
        let conv_grad = grads.get(0).unwrap();
        let nonzero = conv_grad
            .d_weights
            .data()
            .iter()
            .filter(|v| v.abs() > 0.0)
            .count();
        assert!(nonzero > 0, "gradient flowed through the frozen top layer");
    }

    #[test]
    fn set_params_keeps_freeze_flags() {
        let mut net = small_net(7);
        net.set_frozen("c1", true).unwrap();
        let other = small_net(8);
        net.set_params(other.params().clone()).unwrap();
        assert!(net.params().layers()[0].frozen);
        assert_eq!(
            net.params().layers()[1].weights,
            other.params().layers()[1].weights
        );
    }

    #[test]
    fn from_parts_rejects_foreign_params() {
        let a = small_net(1);
        let b = {
            let arch = Architecture::new(
                vec![2, 12],
                vec![LayerSpec::new(
                    "f1",
                    LayerKind::FullyConnected {
                        in_dim: 24,
                        out_dim: 4,
                    },
                )],
            )
            .unwrap();
            Network::new_seeded(arch, 2).unwrap()
        };
        let err = Network::from_parts(a.arch().clone(), b.params().clone()).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }
}
