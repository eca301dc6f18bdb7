use serde::{Deserialize, Serialize};

use crate::batch::ItemShape;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Layer descriptor. Parameters live in the owning network's flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// Affine map over the flattened item; weights are `(outputs, inputs)` row-major, then bias.
    Dense { inputs: usize, outputs: usize },
    /// 2-D convolution with `same` zero padding (`kernel / 2` on each side).
    /// Weights are `(out_channels, in_channels, kernel, kernel)`, then bias.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Activation(Activation),
    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` in training.
    Dropout { rate: f64 },
    Flatten,
    GlobalAvgPool,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv { .. } => "conv",
            Layer::Activation(_) => "activation",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten => "flatten",
            Layer::GlobalAvgPool => "global_avg_pool",
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Dense { inputs, outputs } => inputs * outputs + outputs,
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            _ => 0,
        }
    }

    pub(crate) fn validate(&self, index: usize) -> Result<()> {
        let bad = |detail: String| Error::LayerShape {
            layer: index,
            kind: self.kind(),
            detail,
        };
        match *self {
            Layer::Dense { inputs, outputs } if inputs == 0 || outputs == 0 => {
                Err(bad("dense dimensions must be positive".into()))
            }
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if in_channels == 0 || out_channels == 0 || stride == 0 {
                    Err(bad("conv channels and stride must be positive".into()))
                } else if kernel % 2 == 0 {
                    Err(bad(format!("kernel {kernel} must be odd for same padding")))
                } else {
                    Ok(())
                }
            }
            Layer::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(bad(format!("dropout rate {rate} outside [0, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// Output item shape for a given input item shape.
    pub fn output_shape(&self, index: usize, input: ItemShape) -> Result<ItemShape> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                if input.len() != inputs {
                    return Err(Error::LayerShape {
                        layer: index,
                        kind: self.kind(),
                        detail: format!("expects {inputs} features, got {input}"),
                    });
                }
                Ok(ItemShape::vector(outputs))
            }
            Layer::Conv {
                in_channels,
                out_channels,
                stride,
                ..
            } => {
                if input.channels != in_channels {
                    return Err(Error::LayerShape {
                        layer: index,
                        kind: self.kind(),
                        detail: format!("expects {in_channels} channels, got {input}"),
                    });
                }
                Ok(ItemShape::new(
                    out_channels,
                    (input.height - 1) / stride + 1,
                    (input.width - 1) / stride + 1,
                ))
            }
            Layer::Activation(_) | Layer::Dropout { .. } => Ok(input),
            Layer::Flatten => Ok(ItemShape::vector(input.len())),
            Layer::GlobalAvgPool => Ok(ItemShape::vector(input.channels)),
        }
    }
}
