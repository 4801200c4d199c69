//! Central-difference gradient verification.
//!
//! Every backward kernel is checked against a numeric derivative of the
//! matching forward kernel, and the full network gradient is checked
//! against a numeric derivative of the loss. The comparison metric is
//! relative error with a floored denominator, so near-zero gradients do
//! not blow the ratio up.

use crate::error::Result;
use crate::nn::network::Network;
use crate::nn::ops;
use crate::nn::{Architecture, LayerKind, LayerSpec, ModelParams};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Maximum allowed relative error between analytic and numeric gradients.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative-error metric.
pub const DENOM_FLOOR: f64 = 1e-6;

/// One comparison between an analytic and a numeric gradient.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckEntry {
    fn from_err(name: impl Into<String>, max_rel_err: f64) -> Self {
        GradCheckEntry {
            name: name.into(),
            max_rel_err,
            tolerance: GRAD_TOLERANCE,
            passed: max_rel_err < GRAD_TOLERANCE,
        }
    }
}

/// Numeric gradient of `f` at `x` by central differences with step `h`.
pub fn numeric_grad(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut work = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + h;
        let up = f(&work)?;
        work[i] = orig - h;
        let down = f(&work)?;
        work[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Worst relative error between two gradient vectors, with the denominator
/// floored at [`DENOM_FLOOR`].
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let denom = a.abs().max(n.abs()).max(DENOM_FLOOR);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}

fn rand_tensor<R: Rng>(shape: Vec<usize>, scale: f64, rng: &mut R) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape, data).expect("consistent shape")
}

/// Projection loss `L = sum_i r[i] * y[i]`; its upstream gradient is `r`,
/// which exercises a backward kernel without involving the loss head.
fn projected(y: &Tensor, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn check_conv(rng: &mut ChaCha20Rng) -> Result<Vec<GradCheckEntry>> {
    let x = rand_tensor(vec![3, 17], 1.0, rng);
    let w = rand_tensor(vec![4, 3, 5], 0.7, rng);
    let b = rand_tensor(vec![4], 0.5, rng);
    let stride = 2;
    let y = ops::conv1d_forward(&x, &w, &b, stride)?;
    let r: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let d_out = Tensor::new(y.shape().to_vec(), r.clone())?;
    let (dx, dw, db) = ops::conv1d_backward(&x, &w, stride, &d_out)?;

    let nw = numeric_grad(
        &mut |v| {
            let w2 = Tensor::new(w.shape().to_vec(), v.to_vec())?;
            Ok(projected(&ops::conv1d_forward(&x, &w2, &b, stride)?, &r))
        },
        w.data(),
        FD_STEP,
    )?;
    let nb = numeric_grad(
        &mut |v| {
            let b2 = Tensor::new(b.shape().to_vec(), v.to_vec())?;
            Ok(projected(&ops::conv1d_forward(&x, &w, &b2, stride)?, &r))
        },
        b.data(),
        FD_STEP,
    )?;
    let nx = numeric_grad(
        &mut |v| {
            let x2 = Tensor::new(x.shape().to_vec(), v.to_vec())?;
            Ok(projected(&ops::conv1d_forward(&x2, &w, &b, stride)?, &r))
        },
        x.data(),
        FD_STEP,
    )?;
    Ok(vec![
        GradCheckEntry::from_err("conv1d/weights", max_rel_err(dw.data(), &nw)),
        GradCheckEntry::from_err("conv1d/bias", max_rel_err(db.data(), &nb)),
        GradCheckEntry::from_err("conv1d/input", max_rel_err(dx.data(), &nx)),
    ])
}

fn check_pool(rng: &mut ChaCha20Rng) -> Result<Vec<GradCheckEntry>> {
    // Well-separated values keep the argmax stable under the FD step.
    let mut x = rand_tensor(vec![2, 12], 1.0, rng);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += (i % 7) as f64 * 0.01;
    }
    let (y, arg) = ops::maxpool1d_forward(&x, 3, 2)?;
    let r: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let d_out = Tensor::new(y.shape().to_vec(), r.clone())?;
    let dx = ops::maxpool1d_backward(x.shape(), &arg, &d_out)?;
    let nx = numeric_grad(
        &mut |v| {
            let x2 = Tensor::new(x.shape().to_vec(), v.to_vec())?;
            let (y2, _) = ops::maxpool1d_forward(&x2, 3, 2)?;
            Ok(projected(&y2, &r))
        },
        x.data(),
        FD_STEP,
    )?;
    Ok(vec![GradCheckEntry::from_err(
        "maxpool1d/input",
        max_rel_err(dx.data(), &nx),
    )])
}

fn check_dense(rng: &mut ChaCha20Rng) -> Result<Vec<GradCheckEntry>> {
    let x = rand_tensor(vec![11], 1.0, rng);
    let w = rand_tensor(vec![6, 11], 0.6, rng);
    let b = rand_tensor(vec![6], 0.4, rng);
    let y = ops::fc_forward(&x, &w, &b)?;
    let r: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let d_out = Tensor::new(vec![y.len()], r.clone())?;
    let (dx, dw, db) = ops::fc_backward(&x, &w, &d_out)?;

    let nw = numeric_grad(
        &mut |v| {
            let w2 = Tensor::new(w.shape().to_vec(), v.to_vec())?;
            Ok(projected(&ops::fc_forward(&x, &w2, &b)?, &r))
        },
        w.data(),
        FD_STEP,
    )?;
    let nb = numeric_grad(
        &mut |v| {
            let b2 = Tensor::new(b.shape().to_vec(), v.to_vec())?;
            Ok(projected(&ops::fc_forward(&x, &w, &b2)?, &r))
        },
        b.data(),
        FD_STEP,
    )?;
    let nx = numeric_grad(
        &mut |v| {
            let x2 = Tensor::new(x.shape().to_vec(), v.to_vec())?;
            Ok(projected(&ops::fc_forward(&x2, &w, &b)?, &r))
        },
        x.data(),
        FD_STEP,
    )?;
    Ok(vec![
        GradCheckEntry::from_err("dense/weights", max_rel_err(dw.data(), &nw)),
        GradCheckEntry::from_err("dense/bias", max_rel_err(db.data(), &nb)),
        GradCheckEntry::from_err("dense/input", max_rel_err(dx.data(), &nx)),
    ])
}

fn check_softmax_xent(rng: &mut ChaCha20Rng) -> Result<Vec<GradCheckEntry>> {
    let logits = rand_tensor(vec![6], 2.0, rng);
    let class = 2usize;
    let probs = ops::softmax(&logits)?;
    let analytic = ops::softmax_ce_grad(&probs, class)?;
    let numeric = numeric_grad(
        &mut |v| {
            let l2 = Tensor::new(vec![v.len()], v.to_vec())?;
            ops::cross_entropy(&ops::softmax(&l2)?, class)
        },
        logits.data(),
        FD_STEP,
    )?;
    Ok(vec![GradCheckEntry::from_err(
        "softmax_xent/logits",
        max_rel_err(analytic.data(), &numeric),
    )])
}

/// A small but structurally complete stack: two conv+pool stages, a dense
/// hidden layer, an alignment layer and a classifier head.
pub fn probe_architecture() -> Architecture {
    Architecture::new(
        vec![3, 24],
        vec![
            LayerSpec::new(
                "c1",
                LayerKind::Conv1d {
                    in_channels: 3,
                    out_channels: 4,
                    kernel_size: 5,
                    stride: 1,
                },
            ),
            LayerSpec::new("p1", LayerKind::MaxPool1d { window: 2, stride: 2 }),
            LayerSpec::new(
                "c2",
                LayerKind::Conv1d {
                    in_channels: 4,
                    out_channels: 5,
                    kernel_size: 3,
                    stride: 1,
                },
            ),
            LayerSpec::new("p2", LayerKind::MaxPool1d { window: 2, stride: 2 }),
            LayerSpec::new(
                "f1",
                LayerKind::FullyConnected {
                    in_dim: 20,
                    out_dim: 10,
                },
            ),
            LayerSpec::new(
                "emb",
                LayerKind::Alignment {
                    in_dim: 10,
                    out_dim: 7,
                },
            ),
            LayerSpec::new(
                "out",
                LayerKind::FullyConnected {
                    in_dim: 7,
                    out_dim: 4,
                },
            ),
        ],
    )
    .expect("probe architecture is well formed")
}

/// Flattens a full gradient set in [`ModelParams::flatten`] order. The
/// model must have no frozen layers.
pub fn flatten_grads(net: &Network, grads: &crate::nn::GradSet) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads.layers() {
        let g = g.as_ref().expect("gradcheck model must be fully trainable");
        out.extend_from_slice(g.d_weights.data());
        out.extend_from_slice(g.d_bias.data());
    }
    debug_assert_eq!(out.len(), net.params().param_count());
    out
}

/// Checks the analytic gradient of the cross-entropy loss of a whole
/// network against a numeric gradient over every parameter.
pub fn check_network_gradient(net: &Network, input: &Tensor, class: usize) -> Result<GradCheckEntry> {
    let trace = net.forward_trace(input)?;
    let (_, grads) = net.backward(&trace, class)?;
    let analytic = flatten_grads(net, &grads);
    let arch = net.arch().clone();
    let numeric = numeric_grad(
        &mut |flat| {
            let params = ModelParams::unflatten(&arch, flat)?;
            let n = Network::from_parts(arch.clone(), params)?;
            ops::cross_entropy(&n.forward(input)?, class)
        },
        &net.params().flatten(),
        FD_STEP,
    )?;
    Ok(GradCheckEntry::from_err(
        "network/all_params",
        max_rel_err(&analytic, &numeric),
    ))
}

/// Runs every kernel-level and whole-network check with a fixed seed.
pub fn run_op_checks() -> Result<Vec<GradCheckEntry>> {
    let mut rng = ChaCha20Rng::seed_from_u64(0x6e6e5f6763);
    let mut entries = Vec::new();
    entries.extend(check_conv(&mut rng)?);
    entries.extend(check_pool(&mut rng)?);
    entries.extend(check_dense(&mut rng)?);
    entries.extend(check_softmax_xent(&mut rng)?);

    let net = Network::new_seeded(probe_architecture(), 0x6d6f64656c)?;
    let input = rand_tensor(vec![3, 24], 1.0, &mut rng);
    entries.push(check_network_gradient(&net, &input, 1)?);
    Ok(entries)
}
