//! Layer kernels: valid-mode 1D convolution, max pooling with argmax
//! tracking, dense layers, softmax and cross entropy, each with its
//! backward counterpart.
//!
//! Inner loops are written as contiguous slice walks (axpy style where
//! possible, manually unrolled dots otherwise) so they vectorize without
//! relying on float reassociation; evaluation order is fixed, which keeps
//! results bit-reproducible.

use crate::error::{Error, Result};
use crate::nn::network::LayerGrad;
use crate::nn::PROB_FLOOR;
use crate::tensor::Tensor;

/// Dot product with four independent accumulators. The lane split gives the
/// compiler ILP to chew on while the summation order stays fixed.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// `out[i] += scale * x[i]`
#[inline]
pub(crate) fn axpy(scale: f64, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += scale * v;
    }
}

fn conv_geometry(x: &Tensor, w: &Tensor, stride: usize) -> Result<(usize, usize, usize, usize, usize)> {
    if stride == 0 {
        return Err(Error::config("conv1d stride must be positive"));
    }
    if x.rank() != 2 {
        return Err(Error::config(format!(
            "conv1d input must be [channels, time], got {:?}",
            x.shape()
        )));
    }
    if w.rank() != 3 {
        return Err(Error::config(format!(
            "conv1d weights must be [out, in, kernel], got {:?}",
            w.shape()
        )));
    }
    let (c_in, t) = (x.shape()[0], x.shape()[1]);
    let (c_out, w_in, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if w_in != c_in {
        return Err(Error::config(format!(
            "conv1d weights expect {} input channels, input has {}",
            w_in, c_in
        )));
    }
    if t < k {
        return Err(Error::invalid_input(format!(
            "sequence length {} shorter than kernel {}",
            t, k
        )));
    }
    let t_out = (t - k) / stride + 1;
    Ok((c_in, t, c_out, k, t_out))
}

/// Valid-mode cross-correlation over the time axis.
///
/// `x`: [c_in, t], `w`: [c_out, c_in, k], `bias`: [c_out].
/// Output [c_out, t_out] with t_out = (t - k) / stride + 1 and
/// `y[o][j] = bias[o] + sum_{i,u} w[o][i][u] * x[i][j*stride + u]`.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (c_in, t, c_out, k, t_out) = conv_geometry(x, w, stride)?;
    if bias.len() != c_out {
        return Err(Error::config(format!(
            "conv1d bias length {} does not match {} output channels",
            bias.len(),
            c_out
        )));
    }
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; c_out * t_out];
    for oc in 0..c_out {
        let y_row = &mut out[oc * t_out..(oc + 1) * t_out];
        y_row.fill(bias.data()[oc]);
        for ic in 0..c_in {
            let x_row = &xd[ic * t..(ic + 1) * t];
            let w_row = &wd[(oc * c_in + ic) * k..(oc * c_in + ic + 1) * k];
            if stride == 1 {
                // Shift-and-accumulate: each kernel tap contributes a scaled
                // contiguous slice of the input, which vectorizes cleanly.
                for (u, &wv) in w_row.iter().enumerate() {
                    axpy(wv, &x_row[u..u + t_out], y_row);
                }
            } else {
                for (j, y) in y_row.iter_mut().enumerate() {
                    *y += dot(w_row, &x_row[j * stride..j * stride + k]);
                }
            }
        }
    }
    Tensor::new(vec![c_out, t_out], out)
}

/// Gradients of [`conv1d_forward`] with respect to input, weights and bias.
///
/// `d_out` must be [c_out, t_out]. Returns `(d_x, d_w, d_bias)`.
pub fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c_in, t, c_out, k, _) = conv_geometry(x, w, stride)?;
    let mut dx = Tensor::zeros(vec![c_in, t]);
    let mut grad = LayerGrad {
        d_weights: Tensor::zeros(vec![c_out, c_in, k]),
        d_bias: Tensor::zeros(vec![c_out]),
    };
    conv1d_backward_acc(x, w, stride, d_out, Some(&mut dx), Some(&mut grad))?;
    Ok((dx, grad.d_weights, grad.d_bias))
}

/// Accumulating form of [`conv1d_backward`]: adds this call's gradients into
/// the provided buffers. Either output may be omitted, which skips the
/// corresponding work (the training loop drops `dx` at the deepest
/// trainable layer and `grad` for frozen ones).
pub(crate) fn conv1d_backward_acc(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    d_out: &Tensor,
    dx: Option<&mut Tensor>,
    grad: Option<&mut LayerGrad>,
) -> Result<()> {
    let (c_in, t, c_out, k, t_out) = conv_geometry(x, w, stride)?;
    if d_out.shape() != [c_out, t_out] {
        return Err(Error::config(format!(
            "conv1d upstream gradient must be [{}, {}], got {:?}",
            c_out,
            t_out,
            d_out.shape()
        )));
    }
    let (mut dw, mut db) = match grad {
        Some(g) => {
            if g.d_weights.shape() != w.shape() || g.d_bias.len() != c_out {
                return Err(Error::config("conv1d gradient buffer shape mismatch"));
            }
            (Some(g.d_weights.data_mut()), Some(g.d_bias.data_mut()))
        }
        None => (None, None),
    };
    let mut dxd = match dx {
        Some(d) => {
            if d.shape() != x.shape() {
                return Err(Error::config("conv1d dx buffer shape mismatch"));
            }
            Some(d.data_mut())
        }
        None => None,
    };
    let xd = x.data();
    let wd = w.data();
    let gd = d_out.data();
    for oc in 0..c_out {
        let g_row = &gd[oc * t_out..(oc + 1) * t_out];
        if let Some(db) = db.as_deref_mut() {
            db[oc] += g_row.iter().sum::<f64>();
        }
        for ic in 0..c_in {
            let x_row = &xd[ic * t..(ic + 1) * t];
            let w_row = &wd[(oc * c_in + ic) * k..(oc * c_in + ic + 1) * k];
            if stride == 1 {
                if let Some(dw) = dw.as_deref_mut() {
                    let dw_row = &mut dw[(oc * c_in + ic) * k..(oc * c_in + ic + 1) * k];
                    for u in 0..k {
                        dw_row[u] += dot(g_row, &x_row[u..u + t_out]);
                    }
                }
                if let Some(dxd) = dxd.as_deref_mut() {
                    let dx_row = &mut dxd[ic * t..(ic + 1) * t];
                    for u in 0..k {
                        axpy(w_row[u], g_row, &mut dx_row[u..u + t_out]);
                    }
                }
            } else {
                for (j, &g) in g_row.iter().enumerate() {
                    let base = j * stride;
                    if let Some(dw) = dw.as_deref_mut() {
                        let dw_row = &mut dw[(oc * c_in + ic) * k..(oc * c_in + ic + 1) * k];
                        for u in 0..k {
                            dw_row[u] += g * x_row[base + u];
                        }
                    }
                    if let Some(dxd) = dxd.as_deref_mut() {
                        let dx_row = &mut dxd[ic * t..(ic + 1) * t];
                        for u in 0..k {
                            dx_row[base + u] += g * w_row[u];
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Max pooling over the time axis. Returns the pooled tensor plus, for each
/// output element, the flat index into `x` of the maximum that produced it
/// (first occurrence wins on ties); the backward pass routes gradients
/// through exactly those positions.
pub fn maxpool1d_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    if window == 0 || stride == 0 {
        return Err(Error::config("maxpool1d window and stride must be positive"));
    }
    if x.rank() != 2 {
        return Err(Error::config(format!(
            "maxpool1d input must be [channels, time], got {:?}",
            x.shape()
        )));
    }
    let (c, t) = (x.shape()[0], x.shape()[1]);
    if t < window {
        return Err(Error::invalid_input(format!(
            "sequence length {} shorter than pooling window {}",
            t, window
        )));
    }
    let t_out = (t - window) / stride + 1;
    let xd = x.data();
    let mut out = vec![0.0; c * t_out];
    let mut argmax = vec![0usize; c * t_out];
    for ch in 0..c {
        let row = &xd[ch * t..(ch + 1) * t];
        for j in 0..t_out {
            let start = j * stride;
            let mut best = row[start];
            let mut best_i = start;
            for u in 1..window {
                let v = row[start + u];
                if v > best {
                    best = v;
                    best_i = start + u;
                }
            }
            out[ch * t_out + j] = best;
            argmax[ch * t_out + j] = ch * t + best_i;
        }
    }
    Ok((Tensor::new(vec![c, t_out], out)?, argmax))
}

/// Scatters the upstream gradient back to the argmax positions recorded by
/// [`maxpool1d_forward`]. `input_shape` is the shape of the pre-pool tensor.
pub fn maxpool1d_backward(
    input_shape: &[usize],
    argmax: &[usize],
    d_out: &Tensor,
) -> Result<Tensor> {
    if argmax.len() != d_out.len() {
        return Err(Error::config(format!(
            "argmax map has {} entries, upstream gradient {}",
            argmax.len(),
            d_out.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let len = dx.len();
    let dxd = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(d_out.data()) {
        if idx >= len {
            return Err(Error::config(format!(
                "argmax index {} out of bounds for input of {} elements",
                idx, len
            )));
        }
        // Overlapping windows can route two outputs to one input, hence +=.
        dxd[idx] += g;
    }
    Ok(dx)
}

/// Dense layer: `y = W x + b` with `W`: [out, in] row-major. The input may
/// have any shape; it is read in row-major order as a flat vector.
pub fn fc_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 {
        return Err(Error::config(format!(
            "dense weights must be [out, in], got {:?}",
            w.shape()
        )));
    }
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    if x.len() != in_dim {
        return Err(Error::config(format!(
            "dense layer expects {} inputs, got {}",
            in_dim,
            x.len()
        )));
    }
    if bias.len() != out_dim {
        return Err(Error::config(format!(
            "dense bias length {} does not match {} outputs",
            bias.len(),
            out_dim
        )));
    }
    let xd = x.data();
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        out.push(bias.data()[o] + dot(w.row(o), xd));
    }
    Tensor::new(vec![out_dim], out)
}

/// Gradients of [`fc_forward`]: returns `(d_x, d_w, d_bias)`. `d_x` has the
/// flat shape [in]; the caller reshapes if the layer consumed a feature map.
pub fn fc_backward(x: &Tensor, w: &Tensor, d_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    if w.rank() != 2 {
        return Err(Error::config(format!(
            "dense weights must be [out, in], got {:?}",
            w.shape()
        )));
    }
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    let mut dx = Tensor::zeros(vec![in_dim]);
    let mut grad = LayerGrad {
        d_weights: Tensor::zeros(vec![out_dim, in_dim]),
        d_bias: Tensor::zeros(vec![out_dim]),
    };
    fc_backward_acc(x, w, d_out, Some(&mut dx), Some(&mut grad))?;
    Ok((dx, grad.d_weights, grad.d_bias))
}

/// Accumulating form of [`fc_backward`]; see [`conv1d_backward_acc`] for the
/// buffer conventions.
pub(crate) fn fc_backward_acc(
    x: &Tensor,
    w: &Tensor,
    d_out: &Tensor,
    dx: Option<&mut Tensor>,
    grad: Option<&mut LayerGrad>,
) -> Result<()> {
    if w.rank() != 2 {
        return Err(Error::config(format!(
            "dense weights must be [out, in], got {:?}",
            w.shape()
        )));
    }
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    if x.len() != in_dim || d_out.len() != out_dim {
        return Err(Error::config(format!(
            "dense backward shapes: x has {} (want {}), d_out has {} (want {})",
            x.len(),
            in_dim,
            d_out.len(),
            out_dim
        )));
    }
    let xd = x.data();
    let gd = d_out.data();
    let mut dw_db = match grad {
        Some(g) => {
            if g.d_weights.shape() != w.shape() || g.d_bias.len() != out_dim {
                return Err(Error::config("dense gradient buffer shape mismatch"));
            }
            Some((g.d_weights.data_mut(), g.d_bias.data_mut()))
        }
        None => None,
    };
    let mut dxd = match dx {
        Some(d) => {
            if d.len() != in_dim {
                return Err(Error::config("dense dx buffer shape mismatch"));
            }
            Some(d.data_mut())
        }
        None => None,
    };
    for o in 0..out_dim {
        let g = gd[o];
        if let Some((dw, db)) = dw_db.as_mut() {
            axpy(g, xd, &mut dw[o * in_dim..(o + 1) * in_dim]);
            db[o] += g;
        }
        if let Some(dxd) = dxd.as_deref_mut() {
            axpy(g, w.row(o), dxd);
        }
    }
    Ok(())
}

/// Numerically stable softmax: subtracts the max logit before
/// exponentiating. Rejects NaN logits and empty input.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.is_empty() {
        return Err(Error::invalid_input("softmax of empty logits"));
    }
    if logits.data().iter().any(|v| v.is_nan()) {
        return Err(Error::invalid_input("softmax input contains NaN"));
    }
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.data().iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= sum;
    }
    Tensor::new(vec![exps.len()], exps)
}

/// Cross entropy of a probability vector against a 0-based class index,
/// with probabilities floored at 1e-12 before the log.
pub fn cross_entropy(probs: &Tensor, class: usize) -> Result<f64> {
    if class >= probs.len() {
        return Err(Error::invalid_input(format!(
            "class index {} out of range for {} classes",
            class,
            probs.len()
        )));
    }
    Ok(-probs.data()[class].max(PROB_FLOOR).ln())
}

/// Gradient of cross entropy with respect to the logits when the
/// probabilities came from [`softmax`]: `p - onehot(class)`.
pub fn softmax_ce_grad(probs: &Tensor, class: usize) -> Result<Tensor> {
    if class >= probs.len() {
        return Err(Error::invalid_input(format!(
            "class index {} out of range for {} classes",
            class,
            probs.len()
        )));
    }
    let mut g = probs.data().to_vec();
    g[class] -= 1.0;
    Tensor::new(vec![g.len()], g)
}
