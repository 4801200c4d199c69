//! Minibatch SGD with mean-reduced cross entropy, optional layer freezing
//! and an optional batch-level penalty hook (used for the alignment
//! regularizer during personalization).

use crate::error::{Error, Result};
use crate::nn::network::{GradSet, Network};
use crate::nn::ops::cross_entropy;
use crate::nn::ModelParams;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds the shuffle order; the same seed on the same data reproduces
    /// the exact same sequence of updates.
    pub seed: u64,
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A borrowed training example: input tensor plus 0-based class index.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSample<'a> {
    pub input: &'a Tensor,
    pub class: usize,
}

/// A differentiable term added to each batch objective after the mean
/// cross-entropy gradient has been formed. Implementations add their own
/// gradient contribution into `grads` and return the penalty value.
pub trait BatchPenalty {
    fn apply(&self, params: &ModelParams, grads: &mut GradSet) -> Result<f64>;
}

/// One SGD update: `p -= lr * g` for every unfrozen layer. Frozen layers
/// (gradient `None`) are left bit-identical.
pub fn sgd_step(params: &mut ModelParams, grads: &GradSet, learning_rate: f64) -> Result<()> {
    if !learning_rate.is_finite() {
        return Err(Error::config("learning rate must be finite".to_string()));
    }
    if grads.layers().len() != params.layers().len() {
        return Err(Error::config(
            "gradient set does not match parameter layout".to_string(),
        ));
    }
    for (layer, grad) in params.layers_mut().iter_mut().zip(grads.layers()) {
        let Some(grad) = grad else { continue };
        if layer.frozen {
            return Err(Error::config(format!(
                "layer {:?} is frozen but received a gradient",
                layer.name
            )));
        }
        if grad.d_weights.shape() != layer.weights.shape()
            || grad.d_bias.shape() != layer.bias.shape()
        {
            return Err(Error::config(format!(
                "gradient shape mismatch on layer {:?}",
                layer.name
            )));
        }
        for (w, g) in layer.weights.data_mut().iter_mut().zip(grad.d_weights.data()) {
            *w -= learning_rate * g;
        }
        for (b, g) in layer.bias.data_mut().iter_mut().zip(grad.d_bias.data()) {
            *b -= learning_rate * g;
        }
    }
    Ok(())
}

fn zero_out(grads: &mut GradSet) {
    for g in grads.layers_mut().iter_mut().flatten() {
        g.d_weights.data_mut().fill(0.0);
        g.d_bias.data_mut().fill(0.0);
    }
}

/// Trains `net` in place and returns the per-epoch loss trace (mean batch
/// objective: mean cross entropy plus any penalty value).
///
/// Samples are visited in a freshly shuffled order each epoch; the shuffle
/// stream is seeded by `opts.seed`. Zero epochs leaves the parameters
/// untouched and returns an empty trace.
pub fn train(
    net: &mut Network,
    samples: &[LabeledSample],
    opts: &TrainOptions,
    penalty: Option<&dyn BatchPenalty>,
) -> Result<Vec<f64>> {
    opts.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid_input("cannot train on an empty dataset"));
    }
    let classes = net.arch().output_dim()?;
    for s in samples {
        if s.class >= classes {
            return Err(Error::invalid_input(format!(
                "class index {} out of range for {} classes",
                s.class, classes
            )));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = GradSet::zeros_like(net.params());
    let mut trace = Vec::with_capacity(opts.epochs);

    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            zero_out(&mut grads);
            let mut batch_ce = 0.0;
            for &i in chunk {
                let s = &samples[i];
                let t = net.forward_trace(s.input)?;
                batch_ce += cross_entropy(t.probs(), s.class)?;
                net.backward_into(&t, s.class, &mut grads)?;
            }
            grads.scale(1.0 / chunk.len() as f64);
            let mut objective = batch_ce / chunk.len() as f64;
            if let Some(p) = penalty {
                objective += p.apply(net.params(), &mut grads)?;
            }
            sgd_step(net.params_mut(), &grads, opts.learning_rate)?;
            epoch_loss += objective;
            batches += 1;
        }
        trace.push(epoch_loss / batches as f64);
    }
    Ok(trace)
}

/// Accuracy and mean cross entropy of a model over labeled samples.
pub fn evaluate(net: &Network, samples: &[LabeledSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid_input("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for s in samples {
        let t = net.forward_trace(s.input)?;
        loss += cross_entropy(t.probs(), s.class)?;
        let probs = t.probs().data();
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &v) in probs.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        if best == s.class {
            correct += 1;
        }
    }
    Ok((
        correct as f64 / samples.len() as f64,
        loss / samples.len() as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, LayerKind, LayerSpec};

    fn dense_net(seed: u64) -> Network {
        let arch = Architecture::new(
            vec![4],
            vec![
                LayerSpec::new(
                    "f1",
                    LayerKind::FullyConnected {
                        in_dim: 4,
                        out_dim: 8,
                    },
                ),
                LayerSpec::new(
                    "out",
                    LayerKind::FullyConnected {
                        in_dim: 8,
                        out_dim: 3,
                    },
                ),
            ],
        )
        .unwrap();
        Network::new_seeded(arch, seed).unwrap()
    }

    /// Three linearly separable point clouds on a ring.
    fn toy_data() -> (Vec<Tensor>, Vec<usize>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for c in 0..3usize {
            let angle = c as f64 * 2.0 * std::f64::consts::PI / 3.0;
            for j in 0..20 {
                let jitter = (j as f64 / 20.0 - 0.5) * 0.4;
                let a = angle + jitter;
                xs.push(Tensor::from_vec(vec![
                    a.cos(),
                    a.sin(),
                    a.cos() * 0.5,
                    a.sin() * 0.5,
                ]));
                ys.push(c);
            }
        }
        (xs, ys)
    }

    fn as_samples<'a>(xs: &'a [Tensor], ys: &[usize]) -> Vec<LabeledSample<'a>> {
        xs.iter()
            .zip(ys)
            .map(|(input, &class)| LabeledSample { input, class })
            .collect()
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let (xs, ys) = toy_data();
        let samples = as_samples(&xs, &ys);
        let mut net = dense_net(1);
        let trace = train(
            &mut net,
            &samples,
            &TrainOptions {
                epochs: 40,
                batch_size: 8,
                learning_rate: 0.5,
                seed: 9,
            },
            None,
        )
        .unwrap();
        assert_eq!(trace.len(), 40);
        assert!(
            trace[39] < trace[0] * 0.5,
            "loss should at least halve: {} -> {}",
            trace[0],
            trace[39]
        );
        let (acc, _) = evaluate(&net, &samples).unwrap();
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (xs, ys) = toy_data();
        let samples = as_samples(&xs, &ys);
        let mut net = dense_net(2);
        let before = net.params().clone();
        let trace = train(
            &mut net,
            &samples,
            &TrainOptions {
                epochs: 0,
                batch_size: 8,
                learning_rate: 0.5,
                seed: 9,
            },
            None,
        )
        .unwrap();
        assert!(trace.is_empty());
        assert_eq!(net.params(), &before);
    }

    #[test]
    fn same_seed_same_model() {
        let (xs, ys) = toy_data();
        let samples = as_samples(&xs, &ys);
        let opts = TrainOptions {
            epochs: 5,
            batch_size: 4,
            learning_rate: 0.1,
            seed: 42,
        };
        let mut a = dense_net(3);
        let mut b = dense_net(3);
        let ta = train(&mut a, &samples, &opts, None).unwrap();
        let tb = train(&mut b, &samples, &opts, None).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.params(), b.params());

        let mut c = dense_net(3);
        let tc = train(
            &mut c,
            &samples,
            &TrainOptions { seed: 43, ..opts },
            None,
        )
        .unwrap();
        assert!(ta != tc || a.params() != c.params());
    }

    #[test]
    fn frozen_layer_is_bit_identical_after_training() {
        let (xs, ys) = toy_data();
        let samples = as_samples(&xs, &ys);
        let mut net = dense_net(4);
        net.set_frozen("f1", true).unwrap();
        let before = net.params().layer("f1").unwrap().clone();
        train(
            &mut net,
            &samples,
            &TrainOptions {
                epochs: 3,
                batch_size: 8,
                learning_rate: 0.5,
                seed: 1,
            },
            None,
        )
        .unwrap();
        let after = net.params().layer("f1").unwrap();
        assert_eq!(before.weights, after.weights);
        assert_eq!(before.bias, after.bias);
        // The unfrozen head did move.
        assert_ne!(
            net.params().layer("out").unwrap().weights,
            dense_net(4).params().layer("out").unwrap().weights
        );
    }

    #[test]
    fn rejects_empty_data_and_bad_options() {
        let mut net = dense_net(5);
        let err = train(
            &mut net,
            &[],
            &TrainOptions {
                epochs: 1,
                batch_size: 8,
                learning_rate: 0.1,
                seed: 0,
            },
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));

        let x = Tensor::from_vec(vec![0.0; 4]);
        let samples = [LabeledSample {
            input: &x,
            class: 0,
        }];
        let err = train(
            &mut net,
            &samples,
            &TrainOptions {
                epochs: 1,
                batch_size: 0,
                learning_rate: 0.1,
                seed: 0,
            },
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let bad = [LabeledSample {
            input: &x,
            class: 7,
        }];
        let err = train(
            &mut net,
            &bad,
            &TrainOptions {
                epochs: 1,
                batch_size: 1,
                learning_rate: 0.1,
                seed: 0,
            },
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn penalty_value_shows_up_in_trace() {
        struct Constant;
        impl BatchPenalty for Constant {
            fn apply(&self, _p: &ModelParams, _g: &mut GradSet) -> Result<f64> {
                Ok(2.5)
            }
        }
        let (xs, ys) = toy_data();
        let samples = as_samples(&xs, &ys);
        let opts = TrainOptions {
            epochs: 1,
            batch_size: 60,
            learning_rate: 1e-9,
            seed: 7,
        };
        let mut plain = dense_net(6);
        let t0 = train(&mut plain, &samples, &opts, None).unwrap();
        let mut pen = dense_net(6);
        let t1 = train(&mut pen, &samples, &opts, Some(&Constant)).unwrap();
        assert!((t1[0] - t0[0] - 2.5).abs() < 1e-9);
    }
}
