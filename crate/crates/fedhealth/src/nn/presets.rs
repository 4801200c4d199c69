//! The standard activity-recognition network: two conv+pool stages over
//! the time axis, a dense hidden layer, an alignment (embedding) layer and
//! a softmax classifier head.

use crate::error::{Error, Result};
use crate::nn::{Architecture, LayerKind, LayerSpec};
use serde::{Deserialize, Serialize};

/// Convolution kernel length along the time axis.
pub const KERNEL_SIZE: usize = 9;
/// Max-pooling window and stride.
pub const POOL_WINDOW: usize = 2;
pub const POOL_STRIDE: usize = 2;

/// Channel and unit counts for [`activity_cnn`]. These are capacity knobs,
/// not structure: any positive values produce the same layer stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnWidths {
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub hidden_units: usize,
    pub embedding_dim: usize,
}

impl Default for CnnWidths {
    fn default() -> Self {
        CnnWidths {
            conv1_filters: 12,
            conv2_filters: 20,
            hidden_units: 48,
            embedding_dim: 32,
        }
    }
}

/// Builds the seven-layer stack
/// `conv1 - pool1 - conv2 - pool2 - fc1 - fc2 (alignment) - out`
/// for inputs of shape `[in_channels, window]`. The `fc2` layer is tagged
/// as the alignment layer so personalization can find and regularize it.
pub fn activity_cnn(
    in_channels: usize,
    window: usize,
    num_classes: usize,
    widths: &CnnWidths,
) -> Result<Architecture> {
    if in_channels == 0 || num_classes == 0 {
        return Err(Error::config(
            "input channels and class count must be positive",
        ));
    }
    if widths.conv1_filters == 0
        || widths.conv2_filters == 0
        || widths.hidden_units == 0
        || widths.embedding_dim == 0
    {
        return Err(Error::config("all width settings must be positive"));
    }
    let after = |t: usize, k: usize, s: usize| -> Result<usize> {
        if t < k {
            return Err(Error::config(format!(
                "window of {} samples is too short for this stack",
                window
            )));
        }
        Ok((t - k) / s + 1)
    };
    let t1 = after(window, KERNEL_SIZE, 1)?;
    let t1p = after(t1, POOL_WINDOW, POOL_STRIDE)?;
    let t2 = after(t1p, KERNEL_SIZE, 1)?;
    let t2p = after(t2, POOL_WINDOW, POOL_STRIDE)?;

    Architecture::new(
        vec![in_channels, window],
        vec![
            LayerSpec::new(
                "conv1",
                LayerKind::Conv1d {
                    in_channels,
                    out_channels: widths.conv1_filters,
                    kernel_size: KERNEL_SIZE,
                    stride: 1,
                },
            ),
            LayerSpec::new(
                "pool1",
                LayerKind::MaxPool1d {
                    window: POOL_WINDOW,
                    stride: POOL_STRIDE,
                },
            ),
            LayerSpec::new(
                "conv2",
                LayerKind::Conv1d {
                    in_channels: widths.conv1_filters,
                    out_channels: widths.conv2_filters,
                    kernel_size: KERNEL_SIZE,
                    stride: 1,
                },
            ),
            LayerSpec::new(
                "pool2",
                LayerKind::MaxPool1d {
                    window: POOL_WINDOW,
                    stride: POOL_STRIDE,
                },
            ),
            LayerSpec::new(
                "fc1",
                LayerKind::FullyConnected {
                    in_dim: widths.conv2_filters * t2p,
                    out_dim: widths.hidden_units,
                },
            ),
            LayerSpec::new(
                "fc2",
                LayerKind::Alignment {
                    in_dim: widths.hidden_units,
                    out_dim: widths.embedding_dim,
                },
            ),
            LayerSpec::new(
                "out",
                LayerKind::FullyConnected {
                    in_dim: widths.embedding_dim,
                    out_dim: num_classes,
                },
            ),
        ],
    )
}

/// Layers frozen during personalization: both feature stages and the first
/// dense layer. Only the alignment layer and the classifier head adapt.
pub const PERSONALIZATION_FROZEN: [&str; 5] = ["conv1", "pool1", "conv2", "pool2", "fc1"];

/// Name of the alignment layer in [`activity_cnn`].
pub const ALIGNMENT_LAYER: &str = "fc2";
