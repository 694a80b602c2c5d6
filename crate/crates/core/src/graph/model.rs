use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::network::Layer;
use crate::graph::{LayerSpec, Network, SharingConfig, Topology};
use crate::ops::counters;
use crate::tensor::Tensor;

/// A retrainable tail from `split` to the head, serving `class_map`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchModel {
    pub split: usize,
    pub tail: Network,
    /// Global class id of each head output.
    pub class_map: Vec<u32>,
}

impl BranchModel {
    pub fn new(split: usize, tail: Network, class_map: Vec<u32>) -> Result<Self> {
        let width: usize = tail.output_shape().iter().product();
        if !matches!(tail.layers().last().map(|l| l.spec), Some(LayerSpec::Head { .. })) {
            return Err(Error::Topology("branch tail must end in a head".into()));
        }
        if width != class_map.len() {
            return Err(Error::Topology(format!(
                "head has {width} outputs but the class map lists {} classes",
                class_map.len()
            )));
        }
        let unique: BTreeSet<_> = class_map.iter().collect();
        if unique.len() != class_map.len() {
            return Err(Error::invalid("class map repeats a class id"));
        }
        Ok(Self {
            split,
            tail,
            class_map,
        })
    }

    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.split as u64).to_le_bytes());
        for c in &self.class_map {
            h.update(c.to_le_bytes());
        }
        self.tail.hash_into(&mut h);
        hex::encode(h.finalize())
    }

    /// Local head index of a global class id.
    pub fn local_index(&self, class: u32) -> Option<usize> {
        self.class_map.iter().position(|&c| c == class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub increment: usize,
    pub split: usize,
    pub shared_fraction: f64,
    pub seed: u64,
}

/// How new maps are initialized when the last conv layer is widened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidenInit {
    /// Gaussian with the mean and std of the existing kernels.
    MatchedRandom,
    /// Copies of existing maps, cycling through them in order.
    Cloned,
}

/// A frozen trunk shared by a base branch and any number of attached branches.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalModel {
    pub(crate) topology: Topology,
    pub(crate) selected: Option<SharingConfig>,
    pub(crate) trunk: Network,
    pub(crate) base: BranchModel,
    pub(crate) branches: Vec<BranchModel>,
    pub(crate) provenance: Vec<Provenance>,
    pub(crate) base_seed: u64,
    pub(crate) consumed: Vec<usize>,
}

impl IncrementalModel {
    /// Wraps a trained base network. Nothing is shared until
    /// [`IncrementalModel::set_sharing`] picks a split.
    pub fn new(topology: Topology, base: Network, class_map: Vec<u32>, base_seed: u64) -> Result<Self> {
        if base.specs() != topology.layers() || base.input_shape() != topology.input_shape() {
            return Err(Error::Topology("base network does not match its topology".into()));
        }
        let trunk = Network::from_layers(topology.input_shape().to_vec(), Vec::new())?;
        Ok(Self {
            topology,
            selected: None,
            trunk,
            base: BranchModel::new(0, base, class_map)?,
            branches: Vec::new(),
            provenance: Vec::new(),
            base_seed,
            consumed: Vec::new(),
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn selected(&self) -> Option<SharingConfig> {
        self.selected
    }

    pub fn split(&self) -> usize {
        self.selected.map_or(0, |c| c.split_index)
    }

    pub fn trunk(&self) -> &Network {
        &self.trunk
    }

    pub fn base(&self) -> &BranchModel {
        &self.base
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn branches(&self) -> &[BranchModel] {
        &self.branches
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Increment ordinals whose training data has been used.
    pub fn consumed_increments(&self) -> &[usize] {
        &self.consumed
    }

    pub fn mark_consumed(&mut self, ordinal: usize) -> Result<()> {
        if self.consumed.contains(&ordinal) {
            return Err(crate::error::DataError::AlreadyConsumed(ordinal).into());
        }
        self.consumed.push(ordinal);
        Ok(())
    }

    /// Branch by ordinal: 0 is the base, then attached branches in order.
    pub fn branch(&self, ordinal: usize) -> Result<&BranchModel> {
        match ordinal {
            0 => Ok(&self.base),
            k => self.branches.get(k - 1).ok_or_else(|| {
                Error::invalid(format!(
                    "branch {k} does not exist; the model has {} branches",
                    self.branch_count()
                ))
            }),
        }
    }

    /// Base plus attached branches.
    pub fn branch_count(&self) -> usize {
        1 + self.branches.len()
    }

    pub fn all_branches(&self) -> impl Iterator<Item = &BranchModel> {
        std::iter::once(&self.base).chain(&self.branches)
    }

    pub fn classes(&self) -> BTreeSet<u32> {
        self.all_branches().flat_map(|b| b.class_map.iter().copied()).collect()
    }

    /// Trunk followed by the base tail.
    pub fn base_network(&self) -> Network {
        self.trunk.concat(&self.base.tail).expect("trunk and base tail are compatible")
    }

    /// The first `split` layers of the base network.
    pub fn trunk_view(&self, split: usize) -> Result<Network> {
        self.topology.check_boundary(split)?;
        let base = self.base_network();
        let mut trunk = Network::from_layers(base.input_shape().to_vec(), base.layers()[..split].to_vec())?;
        trunk.freeze_all();
        Ok(trunk)
    }

    /// Splits the base network at the chosen boundary and freezes the trunk.
    pub fn set_sharing(&mut self, config: SharingConfig) -> Result<()> {
        config.validate(&self.topology)?;
        if !self.branches.is_empty() && config.split_index != self.split() {
            return Err(Error::invalid(
                "cannot move the split once branches are attached",
            ));
        }
        let base = self.base_network();
        let (lo, hi) = base.layers().split_at(config.split_index);
        let mut trunk = Network::from_layers(base.input_shape().to_vec(), lo.to_vec())?;
        trunk.freeze_all();
        let tail = Network::from_layers(trunk.output_shape().to_vec(), hi.to_vec())?;
        self.base = BranchModel::new(config.split_index, tail, self.base.class_map.clone())?;
        self.trunk = trunk;
        self.selected = Some(config);
        Ok(())
    }

    /// Trunk activations for one input, counted as a trunk pass.
    pub fn trunk_forward(&self, input: &Tensor) -> Result<Tensor> {
        counters::add_trunk_pass();
        self.trunk.forward(input)
    }

    /// A split-0 network that runs the trunk and then `branch`, with every
    /// parameter unfrozen.
    pub fn full_depth(&self, branch: &BranchModel) -> Result<Network> {
        let trunk = self.trunk_view(branch.split)?;
        let mut net = trunk.concat(&branch.tail)?;
        net.unfreeze_all();
        Ok(net)
    }

    pub fn attach_branch(&mut self, branch: BranchModel, provenance: Provenance) -> Result<()> {
        if branch.split != self.split() {
            return Err(Error::SplitMismatch {
                branch: branch.split,
                model: self.split(),
            });
        }
        if branch.tail.input_shape() != self.trunk.output_shape() {
            return Err(Error::shape(format!(
                "branch takes {:?} but the trunk produces {:?}",
                branch.tail.input_shape(),
                self.trunk.output_shape()
            )));
        }
        let known = self.classes();
        if let Some(&c) = branch.class_map.iter().find(|c| known.contains(c)) {
            return Err(Error::ClassCollision(c));
        }
        self.branches.push(branch);
        self.provenance.push(provenance);
        Ok(())
    }

    pub fn trunk_hash(&self) -> String {
        self.trunk.param_hash()
    }

    pub fn branch_hashes(&self) -> Vec<String> {
        self.all_branches().map(BranchModel::param_hash).collect()
    }

    /// Digest over trunk, every branch and the sharing state.
    pub fn model_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.trunk_hash().as_bytes());
        for b in self.branch_hashes() {
            h.update(b.as_bytes());
        }
        h.update((self.split() as u64).to_le_bytes());
        hex::encode(h.finalize())
    }
}

fn head_layer(in_shape: &[usize], classes: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Layer> {
    let spec = LayerSpec::Head { classes };
    let shapes = spec.param_shapes(in_shape);
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    let w = Tensor::from_fn(&shapes[0], |_| normal.sample(rng));
    Layer::new(spec, in_shape.to_vec(), vec![w, Tensor::zeros(&shapes[1])])
}

fn check_classes(classes: &[u32]) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::invalid("a branch needs at least one class"));
    }
    Ok(())
}

/// Copies the base tail from `config.split_index` onward. A head of the
/// base's width is copied too; any other width gets a fresh head drawn from
/// N(0, std of the base head weights) with zero biases.
pub fn clone_branch(
    model: &IncrementalModel,
    config: &SharingConfig,
    classes: Vec<u32>,
    seed: u64,
) -> Result<BranchModel> {
    config.validate(&model.topology)?;
    check_classes(&classes)?;
    let base = model.base_network();
    let mut layers = base.layers()[config.split_index..].to_vec();
    for l in &mut layers {
        l.frozen_outputs = 0;
    }
    let old_head = layers.pop().expect("tail contains the head");
    let head = if old_head.out_shape == [classes.len()] {
        old_head
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = old_head.params[0].std();
        head_layer(&old_head.in_shape, classes.len(), std, &mut rng)?
    };
    layers.push(head);
    let tail = Network::from_layers(base.layers()[..config.split_index].last().map_or_else(
        || base.input_shape().to_vec(),
        |l| l.out_shape.clone(),
    ), layers)?;
    BranchModel::new(config.split_index, tail, classes)
}

/// Grows the last conv layer of the newest branch (or of the base) by
/// `extra_maps` and puts a fresh head over all maps. Everything inherited is
/// frozen; only the new maps and the head train.
pub fn widen_last_conv(
    model: &IncrementalModel,
    extra_maps: usize,
    classes: Vec<u32>,
    init: WidenInit,
    seed: u64,
) -> Result<BranchModel> {
    if extra_maps == 0 {
        return Err(Error::invalid("extra_maps must be at least 1"));
    }
    check_classes(&classes)?;
    let source = model.branches.last().unwrap_or(&model.base);
    let src = &source.tail;
    let conv_idx = src
        .layers()
        .iter()
        .rposition(|l| matches!(l.spec, LayerSpec::Conv { .. }))
        .ok_or_else(|| Error::Topology("no conv layer in the retrainable tail to widen".into()))?;
    let head_idx = src.layers().len() - 1;
    if src.layers()[conv_idx + 1..head_idx].iter().any(|l| l.spec.is_parametric()) {
        return Err(Error::Topology(
            "layers between the last conv and the head must be parameter-free".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers: Vec<Layer> = src.layers()[..conv_idx].to_vec();
    for l in &mut layers {
        l.frozen_outputs = l.spec.output_units().unwrap_or(0);
    }

    let old = &src.layers()[conv_idx];
    let LayerSpec::Conv {
        kernel,
        out_channels,
        stride,
        padding,
    } = old.spec
    else {
        unreachable!()
    };
    let per_map = old.params[0].len() / out_channels;
    let mut w = old.params[0].data().to_vec();
    let mut b = old.params[1].data().to_vec();
    match init {
        WidenInit::MatchedRandom => {
            let normal = Normal::new(old.params[0].mean(), old.params[0].std())
                .map_err(|e| Error::invalid(e.to_string()))?;
            w.extend((0..extra_maps * per_map).map(|_| normal.sample(&mut rng)));
            b.extend(std::iter::repeat_n(0.0, extra_maps));
        }
        WidenInit::Cloned => {
            for m in 0..extra_maps {
                let j = m % out_channels;
                w.extend_from_slice(&old.params[0].data()[j * per_map..(j + 1) * per_map]);
                b.push(old.params[1].data()[j]);
            }
        }
    }
    let new_out = out_channels + extra_maps;
    let spec = LayerSpec::Conv {
        kernel,
        out_channels: new_out,
        stride,
        padding,
    };
    let mut k_shape = old.params[0].shape().to_vec();
    k_shape[0] = new_out;
    let mut conv = Layer::new(
        spec,
        old.in_shape.clone(),
        vec![Tensor::new(k_shape, w)?, Tensor::vector(b)],
    )?;
    conv.frozen_outputs = out_channels;
    let mut shape = conv.out_shape.clone();
    layers.push(conv);
    for l in &src.layers()[conv_idx + 1..head_idx] {
        let next = Layer::new(l.spec, shape, Vec::new())?;
        shape = next.out_shape.clone();
        layers.push(next);
    }
    let std = src.layers()[head_idx].params[0].std();
    layers.push(head_layer(&shape, classes.len(), std, &mut rng)?);
    let tail = Network::from_layers(src.input_shape().to_vec(), layers)?;
    BranchModel::new(source.split, tail, classes)
}
