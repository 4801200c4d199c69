//! Per-wearer personalization: freeze the feature extractor, keep the
//! embedding layer trainable, and regularize it toward the distributed
//! model's embedding weights while training on local data.
//!
//! The regularizer compares weight matrices, not activations: the client
//! has only its own data plus the received model, so second-order
//! alignment is computed between the received embedding weights and the
//! locally updated ones. Rows of the transposed [in, out] matrix act as
//! observations and the embedding width is the feature dimension.

use crate::error::{Error, Result};
use crate::nn::{
    train, BatchPenalty, GradSet, LabeledSample, ModelParams, Network, TrainOptions,
    ALIGNMENT_LAYER, PERSONALIZATION_FROZEN,
};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Which penalty shapes the personalization objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Second-order (covariance) alignment of embedding weights.
    Coral,
    /// First-order (mean) alignment of the same matrices.
    Mmd,
    /// No penalty; plain fine-tuning of the unfrozen layers.
    Finetune,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Coral => "coral",
            Variant::Mmd => "mmd",
            Variant::Finetune => "finetune",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "coral" => Ok(Variant::Coral),
            "mmd" => Ok(Variant::Mmd),
            "finetune" => Ok(Variant::Finetune),
            other => Err(Error::config(format!(
                "unknown variant {other:?}, expected coral, mmd or finetune"
            ))),
        }
    }
}

/// Personalization hyperparameters. `eta` weighs the alignment penalty
/// against the cross-entropy term; `Finetune` ignores it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferConfig {
    pub eta: f64,
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            eta: 0.01,
            variant: Variant::Coral,
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.02,
            seed: 17,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!(
                "eta must be finite and nonnegative, got {}",
                self.eta
            )));
        }
        self.train_options().validate()
    }

    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }
}

/// Sample covariance of `x` ([n, d], rows as observations): centered
/// Gram matrix divided by n - 1. Symmetric by construction.
pub fn covariance(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::invalid_input(format!(
            "covariance expects a matrix, got shape {:?}",
            x.shape()
        )));
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if n < 2 {
        return Err(Error::invalid_input(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = Tensor::zeros(vec![d, d]);
    for r in 0..n {
        let row = x.row(r);
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                let v = di * (row[j] - mean[j]);
                *cov.data_mut().get_mut(i * d + j).unwrap() += v;
            }
        }
    }
    let scale = 1.0 / (n as f64 - 1.0);
    for i in 0..d {
        for j in i..d {
            let v = cov.at2(i, j) * scale;
            cov.set2(i, j, v);
            cov.set2(j, i, v);
        }
    }
    Ok(cov)
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid_input(format!(
            "alignment operands must share a shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Covariance-difference loss between two same-shaped [n, d] matrices:
/// squared Frobenius norm of the covariance gap, scaled by 1/(4 d^2).
pub fn coral_loss(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let ca = covariance(a)?;
    let cb = covariance(b)?;
    let d = a.shape()[1] as f64;
    let mut frob = 0.0;
    for (x, y) in ca.data().iter().zip(cb.data()) {
        let diff = x - y;
        frob += diff * diff;
    }
    Ok(frob / (4.0 * d * d))
}

/// Analytic gradient of [`coral_loss`] with respect to its first
/// argument: X_c (C_a - C_b) / ((n - 1) d^2), with X_c the row-centered
/// first operand.
pub fn coral_grad(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b)?;
    let ca = covariance(a)?;
    let cb = covariance(b)?;
    let (n, d) = (a.shape()[0], a.shape()[1]);
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(a.row(r)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let scale = 1.0 / ((n as f64 - 1.0) * (d * d) as f64);
    let mut grad = Tensor::zeros(vec![n, d]);
    for r in 0..n {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += (a.at2(r, k) - mean[k]) * (ca.at2(k, j) - cb.at2(k, j));
            }
            grad.set2(r, j, acc * scale);
        }
    }
    Ok(grad)
}

fn column_means(x: &Tensor) -> Result<Vec<f64>> {
    if x.rank() != 2 || x.shape()[0] == 0 {
        return Err(Error::invalid_input(format!(
            "mean alignment expects a nonempty matrix, got shape {:?}",
            x.shape()
        )));
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    Ok(mean)
}

/// Squared distance between the column means of two matrices. Row counts
/// may differ; column counts must match.
pub fn mmd_loss(a: &Tensor, b: &Tensor) -> Result<f64> {
    let ma = column_means(a)?;
    let mb = column_means(b)?;
    if ma.len() != mb.len() {
        return Err(Error::invalid_input(format!(
            "mean alignment dimensions differ: {} vs {}",
            ma.len(),
            mb.len()
        )));
    }
    Ok(ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Gradient of [`mmd_loss`] with respect to its first argument: every row
/// receives (2/n) (mean_a - mean_b).
pub fn mmd_grad(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ma = column_means(a)?;
    let mb = column_means(b)?;
    if ma.len() != mb.len() {
        return Err(Error::invalid_input(format!(
            "mean alignment dimensions differ: {} vs {}",
            ma.len(),
            mb.len()
        )));
    }
    let (n, d) = (a.shape()[0], a.shape()[1]);
    let mut grad = Tensor::zeros(vec![n, d]);
    for r in 0..n {
        for j in 0..d {
            grad.set2(r, j, 2.0 / n as f64 * (ma[j] - mb[j]));
        }
    }
    Ok(grad)
}

/// Alignment penalty attached to one dense layer's weights. Holds an
/// immutable copy of the reference weights; the reference never receives
/// updates.
pub struct AlignmentPenalty {
    layer_pos: usize,
    layer_name: String,
    /// Transposed reference weights, [in, out].
    reference_t: Tensor,
    eta: f64,
    variant: Variant,
}

impl AlignmentPenalty {
    /// `layer_name` must be an unfrozen dense layer of `params`; its
    /// current weights become the reference.
    pub fn new(
        params: &ModelParams,
        layer_name: &str,
        eta: f64,
        variant: Variant,
    ) -> Result<AlignmentPenalty> {
        let layer_pos = params
            .layers()
            .iter()
            .position(|l| l.name == layer_name)
            .ok_or_else(|| {
                Error::config(format!("no parameterized layer named {layer_name:?}"))
            })?;
        let layer = &params.layers()[layer_pos];
        if layer.weights.rank() != 2 {
            return Err(Error::config(format!(
                "alignment penalty needs a dense weight matrix, {layer_name:?} has shape {:?}",
                layer.weights.shape()
            )));
        }
        Ok(AlignmentPenalty {
            layer_pos,
            layer_name: layer_name.to_string(),
            reference_t: layer.weights.transposed()?,
            eta,
            variant,
        })
    }

    pub fn reference_t(&self) -> &Tensor {
        &self.reference_t
    }
}

impl BatchPenalty for AlignmentPenalty {
    fn apply(&self, params: &ModelParams, grads: &mut GradSet) -> Result<f64> {
        if self.variant == Variant::Finetune || self.eta == 0.0 {
            return Ok(0.0);
        }
        let layer = &params.layers()[self.layer_pos];
        let current_t = layer.weights.transposed()?;
        let (value, grad_t) = match self.variant {
            Variant::Coral => (
                coral_loss(&current_t, &self.reference_t)?,
                coral_grad(&current_t, &self.reference_t)?,
            ),
            Variant::Mmd => (
                mmd_loss(&current_t, &self.reference_t)?,
                mmd_grad(&current_t, &self.reference_t)?,
            ),
            Variant::Finetune => unreachable!(),
        };
        let slot = grads
            .layers_mut()
            .get_mut(self.layer_pos)
            .and_then(|s| s.as_mut())
            .ok_or_else(|| {
                Error::config(format!(
                    "alignment penalty targets frozen layer {:?}",
                    self.layer_name
                ))
            })?;
        let grad = grad_t.transposed()?;
        for (g, p) in slot.d_weights.data_mut().iter_mut().zip(grad.data()) {
            *g += self.eta * p;
        }
        Ok(self.eta * value)
    }
}

/// Clones the received model and freezes its feature extractor, leaving
/// the embedding and output layers trainable. The clone predicts exactly
/// like the original until trained.
pub fn build_personalized(server: &Network) -> Result<Network> {
    let arch = server.arch();
    if arch.layer_index(ALIGNMENT_LAYER).is_none() {
        return Err(Error::config(format!(
            "model has no {ALIGNMENT_LAYER:?} layer to personalize"
        )));
    }
    for name in PERSONALIZATION_FROZEN {
        if arch.layer_index(name).is_none() {
            return Err(Error::config(format!(
                "model is missing feature layer {name:?}"
            )));
        }
    }
    let mut personalized = server.clone();
    for name in PERSONALIZATION_FROZEN {
        personalized.set_frozen(name, true)?;
    }
    Ok(personalized)
}

/// Personalizes the received model on local data: builds the frozen-
/// feature clone, attaches the configured alignment penalty against the
/// received embedding weights, trains, and returns the model with its
/// loss trace.
pub fn personalize(
    server: &Network,
    data: &[LabeledSample<'_>],
    cfg: &TransferConfig,
) -> Result<(Network, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid_input(
            "personalization needs a nonempty training split",
        ));
    }
    let mut net = build_personalized(server)?;
    let penalty = match cfg.variant {
        Variant::Finetune => None,
        _ if cfg.eta == 0.0 => None,
        variant => Some(AlignmentPenalty::new(
            net.params(),
            ALIGNMENT_LAYER,
            cfg.eta,
            variant,
        )?),
    };
    let trace = train(
        &mut net,
        data,
        &cfg.train_options(),
        penalty.as_ref().map(|p| p as &dyn BatchPenalty),
    )?;
    Ok((net, trace))
}
