use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::pool::{pool_output_shape, PoolKind};

/// One layer of a sequential network.
///
/// Textual form (used by configs and the model manifest):
/// `conv 5x5 4 [stride 2] [pad 1]`, `maxpool 2`, `meanpool 2`, `relu`,
/// `sigmoid`, `fc 64`, `head 10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
    },
    Pool {
        kind: PoolKind,
        window: usize,
    },
    Relu,
    Sigmoid,
    Fc {
        out_features: usize,
    },
    /// Affine output layer whose logits feed a softmax.
    Head {
        classes: usize,
    },
}

impl LayerSpec {
    pub fn conv(kernel: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            kernel,
            out_channels,
            stride: 1,
            padding: 0,
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Fc { .. } | LayerSpec::Head { .. })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                kernel,
                out_channels,
                stride,
                padding,
            } => {
                let [_, h, w] = input else {
                    return Err(Error::Topology(format!("conv needs a [C, H, W] input, got {input:?}")));
                };
                if kernel == 0 || out_channels == 0 || stride == 0 {
                    return Err(Error::Topology(format!("degenerate conv layer {self}")));
                }
                if kernel > h + 2 * padding || kernel > w + 2 * padding {
                    return Err(Error::Topology(format!(
                        "{self} does not fit a {h}x{w} input"
                    )));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::Pool { window, .. } => pool_output_shape(input, window)
                .map(|s| s.to_vec())
                .map_err(|e| Error::Topology(format!("{self}: {e}"))),
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Fc { out_features: n } | LayerSpec::Head { classes: n } => {
                if n == 0 {
                    return Err(Error::Topology(format!("{self} has no outputs")));
                }
                Ok(vec![n])
            }
        }
    }

    /// Shapes of the weight and bias tensors, empty for parameter-free layers.
    pub fn param_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                kernel,
                out_channels,
                ..
            } => vec![vec![out_channels, input[0], kernel, kernel], vec![out_channels]],
            LayerSpec::Fc { out_features: n } | LayerSpec::Head { classes: n } => {
                vec![vec![n, input.iter().product()], vec![n]]
            }
            _ => Vec::new(),
        }
    }

    /// Weights plus biases.
    pub fn param_count(&self, input: &[usize]) -> usize {
        self.param_shapes(input)
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Number of output units (conv maps or neurons) for parametric layers.
    pub fn output_units(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv { out_channels, .. } => Some(out_channels),
            LayerSpec::Fc { out_features } => Some(out_features),
            LayerSpec::Head { classes } => Some(classes),
            _ => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                kernel,
                out_channels,
                stride,
                padding,
            } => {
                write!(f, "conv {kernel}x{kernel} {out_channels}")?;
                if stride != 1 {
                    write!(f, " stride {stride}")?;
                }
                if padding != 0 {
                    write!(f, " pad {padding}")?;
                }
                Ok(())
            }
            LayerSpec::Pool { kind: PoolKind::Max, window } => write!(f, "maxpool {window}"),
            LayerSpec::Pool { kind: PoolKind::Mean, window } => write!(f, "meanpool {window}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Sigmoid => f.write_str("sigmoid"),
            LayerSpec::Fc { out_features } => write!(f, "fc {out_features}"),
            LayerSpec::Head { classes } => write!(f, "head {classes}"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("layer '{s}': {why}"));
        let num = |tok: Option<&str>, what: &str| -> Result<usize> {
            tok.ok_or_else(|| bad(&format!("missing {what}")))?
                .parse::<usize>()
                .map_err(|_| bad(&format!("{what} must be a non-negative integer")))
        };
        let mut toks = s.split_whitespace();
        let kind = toks.next().ok_or_else(|| bad("empty layer"))?;
        let spec = match kind {
            "conv" => {
                let size = toks.next().ok_or_else(|| bad("missing kernel size"))?;
                let kernel = match size.split_once('x') {
                    Some((a, b)) if a == b => num(Some(a), "kernel size")?,
                    Some(_) => return Err(bad("only square kernels are supported")),
                    None => num(Some(size), "kernel size")?,
                };
                let out_channels = num(toks.next(), "output channels")?;
                let (mut stride, mut padding) = (1, 0);
                while let Some(key) = toks.next() {
                    match key {
                        "stride" => stride = num(toks.next(), "stride")?,
                        "pad" => padding = num(toks.next(), "padding")?,
                        other => return Err(bad(&format!("unknown conv option '{other}'"))),
                    }
                }
                LayerSpec::Conv {
                    kernel,
                    out_channels,
                    stride,
                    padding,
                }
            }
            "maxpool" => LayerSpec::Pool {
                kind: PoolKind::Max,
                window: num(toks.next(), "window")?,
            },
            "meanpool" | "avgpool" => LayerSpec::Pool {
                kind: PoolKind::Mean,
                window: num(toks.next(), "window")?,
            },
            "relu" => LayerSpec::Relu,
            "sigmoid" => LayerSpec::Sigmoid,
            "fc" => LayerSpec::Fc {
                out_features: num(toks.next(), "width")?,
            },
            "head" => LayerSpec::Head {
                classes: num(toks.next(), "class count")?,
            },
            other => return Err(bad(&format!("unknown layer kind '{other}'"))),
        };
        if toks.next().is_some() {
            return Err(bad("trailing tokens"));
        }
        Ok(spec)
    }
}
