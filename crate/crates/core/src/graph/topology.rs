use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LayerSpec;

/// A validated sequential layer stack ending in a softmax head.
///
/// Layer boundary `i` sits between `layers[i - 1]` and `layers[i]`; a split at
/// boundary `i` shares layers `0..i` and retrains `i..`. The head is never
/// shared, so valid boundaries are `0..layers.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct Topology {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    split_candidates: Vec<usize>,
    /// `shapes[i]` is the activation shape at boundary `i`.
    shapes: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    input_shape: Vec<usize>,
    layers: Vec<String>,
    split_candidates: Vec<usize>,
}

impl TryFrom<TopologyRepr> for Topology {
    type Error = Error;

    fn try_from(r: TopologyRepr) -> Result<Self> {
        let layers = r
            .layers
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<LayerSpec>>>()?;
        Topology::new(r.input_shape, layers)?.with_split_candidates(r.split_candidates)
    }
}

impl From<Topology> for TopologyRepr {
    fn from(t: Topology) -> Self {
        TopologyRepr {
            input_shape: t.input_shape,
            layers: t.layers.iter().map(|l| l.to_string()).collect(),
            split_candidates: t.split_candidates,
        }
    }
}

/// How a network grows to take on new classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    /// Only new output neurons are added.
    HeadOnly,
    /// New maps in the last conv layer plus a new head over all maps.
    HeadPlusMaps(usize),
}

impl Topology {
    /// Checks shape compatibility and derives default split candidates: the
    /// input boundary of every parametric layer after the first.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Topology("topology has no layers".into()));
        }
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Topology(format!("bad input shape {input_shape:?}")));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, l) in layers.iter().enumerate() {
            let next = l
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::Topology(format!("layer {i} ({l}): {e}")))?;
            shapes.push(next);
        }
        match layers.last() {
            Some(LayerSpec::Head { .. }) => {}
            _ => return Err(Error::Topology("topology must end in a head layer".into())),
        }
        if layers[..layers.len() - 1]
            .iter()
            .any(|l| matches!(l, LayerSpec::Head { .. }))
        {
            return Err(Error::Topology("only the last layer may be a head".into()));
        }
        let split_candidates = (1..layers.len())
            .filter(|&i| layers[i].is_parametric())
            .collect();
        Ok(Self {
            input_shape,
            layers,
            split_candidates,
            shapes,
        })
    }

    pub fn parse(input_shape: Vec<usize>, layers: &[&str]) -> Result<Self> {
        let specs = layers.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>()?;
        Self::new(input_shape, specs)
    }

    pub fn with_split_candidates(mut self, candidates: Vec<usize>) -> Result<Self> {
        if candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Topology(format!(
                "split candidates {candidates:?} must be strictly increasing"
            )));
        }
        if let Some(&bad) = candidates.iter().find(|&&c| c == 0 || c >= self.layers.len()) {
            return Err(Error::Topology(format!(
                "split candidate {bad} is not an interior boundary of {} layers",
                self.layers.len()
            )));
        }
        self.split_candidates = candidates;
        Ok(self)
    }

    /// The same layers with the head resized to `classes` outputs.
    pub fn with_head(&self, classes: usize) -> Result<Self> {
        let mut layers = self.layers.clone();
        *layers.last_mut().expect("validated on construction") = LayerSpec::Head { classes };
        Topology::new(self.input_shape.clone(), layers)?.with_split_candidates(self.split_candidates.clone())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn split_candidates(&self) -> &[usize] {
        &self.split_candidates
    }

    pub fn shape_at(&self, boundary: usize) -> &[usize] {
        &self.shapes[boundary]
    }

    pub fn output_classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Head { classes }) => *classes,
            _ => unreachable!("validated on construction"),
        }
    }

    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .zip(&self.shapes)
            .map(|(l, s)| l.param_count(s))
            .collect()
    }

    pub fn total_params(&self) -> usize {
        self.layer_param_counts().iter().sum()
    }

    pub fn params_below(&self, boundary: usize) -> usize {
        self.layer_param_counts()[..boundary].iter().sum()
    }

    /// True for boundary 0 (explicit no-sharing) and every split candidate.
    pub fn is_valid_split(&self, boundary: usize) -> bool {
        boundary == 0 || self.split_candidates.contains(&boundary)
    }

    pub fn check_boundary(&self, boundary: usize) -> Result<()> {
        if boundary >= self.layers.len() {
            return Err(Error::invalid(format!(
                "boundary {boundary} would share the head of a {}-layer network",
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Fraction of all trainable parameters (head included) that sit below
    /// `boundary`.
    pub fn sharing_fraction(&self, boundary: usize) -> Result<f64> {
        self.check_boundary(boundary)?;
        Ok(self.params_below(boundary) as f64 / self.total_params() as f64)
    }

    /// New trainable parameters relative to the existing ones when
    /// `new_classes` are added with the given growth.
    pub fn param_increase_ratio(&self, new_classes: usize, growth: Growth) -> Result<f64> {
        if new_classes == 0 {
            return Ok(0.0);
        }
        let head_in: usize = self.shapes[self.layers.len() - 1].iter().product();
        let added = match growth {
            Growth::HeadOnly => (head_in + 1) * new_classes,
            Growth::HeadPlusMaps(extra) => {
                let (idx, conv) = self
                    .layers
                    .iter()
                    .enumerate()
                    .rev()
                    .find(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
                    .ok_or_else(|| Error::Topology("no conv layer to widen".into()))?;
                let LayerSpec::Conv {
                    kernel,
                    out_channels,
                    ..
                } = *conv
                else {
                    unreachable!()
                };
                let in_c = self.shapes[idx][0];
                let per_map = head_in / out_channels;
                let new_maps = extra * (kernel * kernel * in_c + 1);
                let new_head = ((out_channels + extra) * per_map + 1) * new_classes;
                new_maps + new_head
            }
        };
        Ok(added as f64 / self.total_params() as f64)
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.input_shape.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}", dims.join("x"))?;
        for l in &self.layers {
            write!(f, " | {l}")?;
        }
        f.write_str("]")
    }
}

/// A chosen trunk/tail split with its shared fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharingConfig {
    pub split_index: usize,
    pub shared_fraction: f64,
}

impl SharingConfig {
    pub fn new(topology: &Topology, split_index: usize) -> Result<Self> {
        if !topology.is_valid_split(split_index) {
            return Err(Error::invalid(format!(
                "split {split_index} is not one of the candidates {:?}",
                topology.split_candidates()
            )));
        }
        Ok(Self {
            split_index,
            shared_fraction: topology.sharing_fraction(split_index)?,
        })
    }

    pub fn unshared() -> Self {
        Self {
            split_index: 0,
            shared_fraction: 0.0,
        }
    }

    /// The stored fraction must equal the recomputed one bit for bit.
    pub fn validate(&self, topology: &Topology) -> Result<()> {
        let fresh = Self::new(topology, self.split_index)?;
        if fresh.shared_fraction.to_bits() != self.shared_fraction.to_bits() {
            return Err(Error::invalid(format!(
                "stored shared fraction {} disagrees with recomputed {}",
                self.shared_fraction, fresh.shared_fraction
            )));
        }
        Ok(())
    }
}
