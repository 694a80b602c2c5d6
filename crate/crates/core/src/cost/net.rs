//! Layer-level descriptions for cost accounting. These carry only shapes and
//! parameter counts, so they also cover layers the trainer does not run
//! (batch norm, residual adds).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LayerSpec, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        out_h: usize,
        out_w: usize,
    },
    Fc {
        fan_in: usize,
        fan_out: usize,
    },
    BatchNorm {
        channels: usize,
    },
    /// Pooling, activations and residual adds: data movement only.
    Elementwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLayer {
    pub name: String,
    pub kind: CostKind,
    pub in_elems: u64,
    pub out_elems: u64,
}

impl CostLayer {
    pub fn conv(name: impl Into<String>, input: [usize; 3], out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let [c, h, w] = input;
        if stride == 0 || kernel == 0 || kernel > h + 2 * padding || kernel > w + 2 * padding {
            return Err(Error::invalid(format!(
                "conv {kernel}x{kernel} stride {stride} pad {padding} does not fit {input:?}"
            )));
        }
        let out_h = (h + 2 * padding - kernel) / stride + 1;
        let out_w = (w + 2 * padding - kernel) / stride + 1;
        Ok(Self {
            name: name.into(),
            kind: CostKind::Conv {
                in_channels: c,
                out_channels,
                kernel,
                out_h,
                out_w,
            },
            in_elems: (c * h * w) as u64,
            out_elems: (out_channels * out_h * out_w) as u64,
        })
    }

    pub fn fc(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            kind: CostKind::Fc { fan_in, fan_out },
            in_elems: fan_in as u64,
            out_elems: fan_out as u64,
        }
    }

    pub fn batch_norm(name: impl Into<String>, shape: [usize; 3]) -> Self {
        let n = shape.iter().product::<usize>() as u64;
        Self {
            name: name.into(),
            kind: CostKind::BatchNorm { channels: shape[0] },
            in_elems: n,
            out_elems: n,
        }
    }

    pub fn elementwise(name: impl Into<String>, in_elems: usize, out_elems: usize) -> Self {
        Self {
            name: name.into(),
            kind: CostKind::Elementwise,
            in_elems: in_elems as u64,
            out_elems: out_elems as u64,
        }
    }

    /// Learned parameters, biases included. Batch norm holds scale and shift.
    pub fn params(&self) -> u64 {
        match self.kind {
            CostKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * (in_channels * kernel * kernel + 1)) as u64,
            CostKind::Fc { fan_in, fan_out } => (fan_out * (fan_in + 1)) as u64,
            CostKind::BatchNorm { channels } => 2 * channels as u64,
            CostKind::Elementwise => 0,
        }
    }

    /// Multiply-accumulates of one forward pass, bias additions excluded.
    pub fn forward_macs(&self) -> u64 {
        match self.kind {
            CostKind::Conv {
                in_channels,
                out_channels,
                kernel,
                out_h,
                out_w,
            } => (out_h * out_w * out_channels * kernel * kernel * in_channels) as u64,
            CostKind::Fc { fan_in, fan_out } => (fan_in * fan_out) as u64,
            CostKind::BatchNorm { .. } | CostKind::Elementwise => 0,
        }
    }

    /// Desk-scale layer as executed by the trainer.
    pub fn from_spec(spec: &LayerSpec, input: &[usize]) -> Result<Self> {
        let name = spec.to_string();
        let in_elems: usize = input.iter().product();
        let out_elems: usize = spec.output_shape(input)?.iter().product();
        Ok(match *spec {
            LayerSpec::Conv {
                kernel,
                out_channels,
                stride,
                padding,
            } => {
                let &[c, h, w] = input else {
                    return Err(Error::shape(format!("conv input must be [C, H, W], got {input:?}")));
                };
                Self::conv(name, [c, h, w], out_channels, kernel, stride, padding)?
            }
            LayerSpec::Fc { out_features } => Self::fc(name, in_elems, out_features),
            LayerSpec::Head { classes } => Self::fc(name, in_elems, classes),
            LayerSpec::Pool { .. } | LayerSpec::Relu | LayerSpec::Sigmoid => {
                Self::elementwise(name, in_elems, out_elems)
            }
        })
    }
}

/// A sequential cost description with the boundaries a trunk may end at.
/// Layers `[0, split)` are shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostNetwork {
    pub name: String,
    pub layers: Vec<CostLayer>,
    pub boundaries: Vec<usize>,
}

impl CostNetwork {
    pub fn new(name: impl Into<String>, layers: Vec<CostLayer>, mut boundaries: Vec<usize>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Topology("cost network has no layers".into()));
        }
        boundaries.sort_unstable();
        boundaries.dedup();
        if let Some(b) = boundaries.iter().find(|&&b| b == 0 || b >= layers.len()) {
            return Err(Error::Topology(format!("boundary {b} is outside (0, {})", layers.len())));
        }
        Ok(Self {
            name: name.into(),
            layers,
            boundaries,
        })
    }

    pub fn from_topology(name: impl Into<String>, topology: &Topology) -> Result<Self> {
        let layers = topology
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| CostLayer::from_spec(l, topology.shape_at(i)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, layers, topology.split_candidates().to_vec())
    }

    pub fn total_params(&self) -> u64 {
        self.layers.iter().map(CostLayer::params).sum()
    }

    pub fn params_below(&self, split: usize) -> u64 {
        self.layers[..split.min(self.layers.len())].iter().map(CostLayer::params).sum()
    }

    pub fn check_split(&self, split: usize) -> Result<()> {
        if split == 0 || self.boundaries.contains(&split) {
            Ok(())
        } else {
            Err(Error::invalid(format!("split {split} is not a boundary of {}", self.name)))
        }
    }

    pub fn shared_fraction(&self, split: usize) -> f64 {
        self.params_below(split) as f64 / self.total_params() as f64
    }

    /// The boundary whose shared fraction is closest to `fraction`; ties go
    /// to the smaller split. Fraction 0 maps to split 0.
    pub fn split_near(&self, fraction: f64) -> Result<usize> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("sharing fraction must lie in [0, 1), got {fraction}")));
        }
        if fraction == 0.0 {
            return Ok(0);
        }
        let mut best = 0;
        let mut best_gap = fraction;
        for &b in &self.boundaries {
            let gap = (self.shared_fraction(b) - fraction).abs();
            if gap < best_gap {
                best = b;
                best_gap = gap;
            }
        }
        Ok(best)
    }
}

struct Builder {
    layers: Vec<CostLayer>,
    boundaries: Vec<usize>,
    shape: [usize; 3],
}

impl Builder {
    fn new(shape: [usize; 3]) -> Self {
        Self {
            layers: Vec::new(),
            boundaries: Vec::new(),
            shape,
        }
    }

    fn elems(&self) -> usize {
        self.shape.iter().product()
    }

    fn conv(&mut self, name: String, out: usize, k: usize, stride: usize) -> Result<()> {
        let l = CostLayer::conv(name, self.shape, out, k, stride, k / 2)?;
        if let CostKind::Conv { out_h, out_w, .. } = l.kind {
            self.shape = [out, out_h, out_w];
        }
        self.layers.push(l);
        Ok(())
    }

    /// Convolution on a side path; the main shape is left alone.
    fn side_conv(&mut self, name: String, input: [usize; 3], out: usize, stride: usize) -> Result<()> {
        self.layers.push(CostLayer::conv(name, input, out, 1, stride, 0)?);
        Ok(())
    }

    fn bn(&mut self, name: String) {
        self.layers.push(CostLayer::batch_norm(name, self.shape));
    }

    fn relu(&mut self, name: String) {
        let n = self.elems();
        self.layers.push(CostLayer::elementwise(name, n, n));
    }

    /// Sum of the block output and its shortcut.
    fn add(&mut self, name: String) {
        let n = self.elems();
        self.layers.push(CostLayer::elementwise(name, 2 * n, n));
    }

    fn pool_to(&mut self, name: String, shape: [usize; 3]) {
        let n = self.elems();
        self.shape = shape;
        self.layers.push(CostLayer::elementwise(name, n, self.elems()));
    }

    fn boundary(&mut self) {
        self.boundaries.push(self.layers.len());
    }
}

/// ResNet-101 for 32x32 inputs: pre-activation bottleneck blocks, 11 per
/// stage at widths 16, 32 and 64 (expanded 4x), global mean pool and a
/// linear classifier. 100 convolutions on the main path, one batch norm and
/// one ReLU in front of each, plus three projection shortcuts.
pub fn resnet101_cifar(classes: usize) -> Result<CostNetwork> {
    let mut b = Builder::new([3, 32, 32]);
    b.conv("stem.conv".into(), 16, 3, 1)?;
    b.boundary();
    for (stage, &width) in [16usize, 32, 64].iter().enumerate() {
        for block in 0..11 {
            let p = format!("s{}.b{}", stage + 1, block + 1);
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let input = b.shape;
            b.bn(format!("{p}.bn1"));
            b.relu(format!("{p}.relu1"));
            b.conv(format!("{p}.conv1"), width, 1, 1)?;
            b.bn(format!("{p}.bn2"));
            b.relu(format!("{p}.relu2"));
            b.conv(format!("{p}.conv2"), width, 3, stride)?;
            b.bn(format!("{p}.bn3"));
            b.relu(format!("{p}.relu3"));
            b.conv(format!("{p}.conv3"), 4 * width, 1, 1)?;
            if block == 0 {
                b.side_conv(format!("{p}.proj"), input, 4 * width, stride)?;
            }
            b.add(format!("{p}.add"));
            b.boundary();
        }
    }
    b.bn("final.bn".into());
    b.relu("final.relu".into());
    let c = b.shape[0];
    b.pool_to("avgpool".into(), [c, 1, 1]);
    b.layers.push(CostLayer::fc("fc", c, classes));
    CostNetwork::new("resnet101-cifar", b.layers, b.boundaries)
}

/// ResNet-34 for 224x224 inputs: 7x7 stem, basic blocks 3-4-6-3 at widths
/// 64 to 512, projection shortcuts where the shape changes.
pub fn resnet34_imagenet(classes: usize) -> Result<CostNetwork> {
    let mut b = Builder::new([3, 224, 224]);
    b.conv("stem.conv".into(), 64, 7, 2)?;
    b.bn("stem.bn".into());
    b.relu("stem.relu".into());
    b.pool_to("stem.maxpool".into(), [64, 56, 56]);
    b.boundary();
    for (stage, (&width, &blocks)) in [64usize, 128, 256, 512].iter().zip(&[3usize, 4, 6, 3]).enumerate() {
        for block in 0..blocks {
            let p = format!("s{}.b{}", stage + 1, block + 1);
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let input = b.shape;
            b.conv(format!("{p}.conv1"), width, 3, stride)?;
            b.bn(format!("{p}.bn1"));
            b.relu(format!("{p}.relu1"));
            b.conv(format!("{p}.conv2"), width, 3, 1)?;
            b.bn(format!("{p}.bn2"));
            if input != b.shape {
                b.side_conv(format!("{p}.proj"), input, width, stride)?;
                b.layers.push(CostLayer::batch_norm(format!("{p}.proj_bn"), b.shape));
            }
            b.add(format!("{p}.add"));
            b.relu(format!("{p}.relu2"));
            b.boundary();
        }
    }
    let c = b.shape[0];
    b.pool_to("avgpool".into(), [c, 1, 1]);
    b.layers.push(CostLayer::fc("fc", c, classes));
    CostNetwork::new("resnet34-imagenet", b.layers, b.boundaries)
}

/// Looks up a built-in encoding by name.
pub fn builtin(name: &str, classes: usize) -> Result<CostNetwork> {
    match name {
        "resnet101" | "resnet101-cifar" => resnet101_cifar(classes),
        "resnet34" | "resnet34-imagenet" => resnet34_imagenet(classes),
        _ => Err(Error::Config(format!(
            "unknown network {name:?}; expected resnet101 or resnet34"
        ))),
    }
}
