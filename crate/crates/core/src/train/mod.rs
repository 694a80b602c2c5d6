//! Mini-batch SGD that leaves frozen parameters untouched, plus the
//! base/branch/unshared training entry points and evaluation.

pub mod baselines;
pub mod sweep;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, TrainHandle};
use crate::error::{Error, Result};
use crate::fusion::{self, branch_probs};
use crate::graph::{
    clone_branch, widen_last_conv, BranchModel, IncrementalModel, Network, Provenance, SharingConfig, Topology,
    WidenInit,
};
use crate::ops::softmax_xent;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

pub use sweep::{
    select_optimal_sharing, sweep_sharing, sweep_sharing_threads, SharingCurve, SharingPoint, SweepEntry, SweepResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub shuffle: bool,
}

fn yes() -> bool {
    true
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            shuffle: true,
        }
    }
}

impl Hyperparams {
    /// Checks ranges. Zero epochs is accepted and means "evaluate only".
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    /// Test accuracy after each epoch, percent.
    pub epoch_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// Wall clock, not reproducible across runs.
    pub seconds_per_iter: f64,
    pub iterations: usize,
    pub params_trained: usize,
    pub params_frozen: usize,
}

/// Network inputs paired with local head indices.
pub(crate) struct Prepared {
    pub inputs: Vec<Tensor>,
    pub targets: Vec<usize>,
}

pub(crate) fn prepare(trunk: &Network, data: &LabeledDataset, class_map: &[u32]) -> Result<Prepared> {
    let mut inputs = Vec::with_capacity(data.len());
    let mut targets = Vec::with_capacity(data.len());
    for s in data.samples() {
        let t = class_map
            .iter()
            .position(|&c| c == s.label)
            .ok_or(Error::UnknownLabel(s.label))?;
        if !trunk.is_empty() {
            crate::ops::counters::add_trunk_pass();
        }
        inputs.push(trunk.forward(&s.input)?);
        targets.push(t);
    }
    Ok(Prepared { inputs, targets })
}

pub(crate) fn accuracy(net: &Network, data: &Prepared) -> Result<f64> {
    if data.inputs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (x, &t) in data.inputs.iter().zip(&data.targets) {
        correct += usize::from(net.forward(x)?.argmax() == t);
    }
    Ok(100.0 * correct as f64 / data.inputs.len() as f64)
}

/// Trains `net` in place on prepared inputs. `frozen_below` counts
/// parameters outside `net` that stay fixed, for the report.
pub(crate) fn fit(
    net: &mut Network,
    train: &Prepared,
    test: Option<&Prepared>,
    hp: &Hyperparams,
    frozen_below: usize,
) -> Result<TrainReport> {
    hp.validate()?;
    if train.inputs.is_empty() {
        return Err(crate::error::DataError::Empty.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hp.seed, "shuffle"));
    let mut order: Vec<usize> = (0..train.inputs.len()).collect();
    let mut velocity = net.zero_like_params();
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(hp.epochs),
        epoch_accuracy: Vec::with_capacity(hp.epochs),
        final_accuracy: 0.0,
        best_accuracy: 0.0,
        seconds_per_iter: 0.0,
        iterations: 0,
        params_trained: net.trainable_param_count(),
        params_frozen: net.frozen_param_count() + frozen_below,
    };
    let started = Instant::now();
    for epoch in 0..hp.epochs {
        if hp.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let mut sum: Option<Vec<Vec<Tensor>>> = None;
            for &i in batch {
                let (logits, caches) = net.forward_cached(&train.inputs[i])?;
                let xent = softmax_xent(&logits, train.targets[i])?;
                loss_sum += xent.loss;
                let (_, grads) = net.backward(&caches, &xent.logit_grad, false)?;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (la, lg) in acc.iter_mut().zip(&grads) {
                            for (a, g) in la.iter_mut().zip(lg) {
                                a.data_mut().iter_mut().zip(g.data()).for_each(|(a, g)| *a += g);
                            }
                        }
                    }
                }
            }
            let mut grads = sum.expect("batches are non-empty");
            let scale = 1.0 / batch.len() as f64;
            for t in grads.iter_mut().flatten() {
                t.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            net.apply_sgd(&grads, &mut velocity, hp.learning_rate, hp.momentum)?;
            report.iterations += 1;
        }
        let mean_loss = loss_sum / train.inputs.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged to {mean_loss} in epoch {epoch}")));
        }
        report.epoch_loss.push(mean_loss);
        if let Some(test) = test {
            report.epoch_accuracy.push(accuracy(net, test)?);
        }
    }
    if report.iterations > 0 {
        report.seconds_per_iter = started.elapsed().as_secs_f64() / report.iterations as f64;
    }
    match test {
        Some(test) => {
            if report.epoch_accuracy.is_empty() {
                report.epoch_accuracy.push(accuracy(net, test)?);
            }
            report.final_accuracy = *report.epoch_accuracy.last().unwrap();
            report.best_accuracy = report.epoch_accuracy.iter().copied().fold(f64::MIN, f64::max);
        }
        None => {
            report.final_accuracy = accuracy(net, train)?;
            report.best_accuracy = report.final_accuracy;
        }
    }
    Ok(report)
}

fn check_labels(data: &LabeledDataset, classes: &[u32]) -> Result<()> {
    match data.class_ids().iter().find(|c| !classes.contains(c)) {
        Some(&c) => Err(Error::UnknownLabel(c)),
        None => Ok(()),
    }
}

fn check_new_classes(model: &IncrementalModel, data: &LabeledDataset) -> Result<()> {
    let known = model.classes();
    match data.class_ids().iter().find(|c| known.contains(c)) {
        Some(&c) => Err(Error::ClassCollision(c)),
        None => Ok(()),
    }
}

/// Trains a fresh network over `classes` (the head order) and wraps it as
/// the base of an incremental model.
pub fn train_base(
    topology: &Topology,
    classes: &[u32],
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    hp: &Hyperparams,
) -> Result<(IncrementalModel, TrainReport)> {
    if classes.len() != topology.output_classes() {
        return Err(Error::Config(format!(
            "head has {} outputs but the base class set has {} classes",
            topology.output_classes(),
            classes.len()
        )));
    }
    if classes.iter().collect::<BTreeSet<_>>().len() != classes.len() {
        return Err(Error::Config("base class set repeats a class".into()));
    }
    check_labels(train, classes)?;
    if let Some(t) = test {
        check_labels(t, classes)?;
    }
    let init_seed = derive_seed(hp.seed, "init");
    let mut net = Network::build(topology.input_shape(), topology.layers(), init_seed)?;
    let empty = Network::from_layers(topology.input_shape().to_vec(), Vec::new())?;
    let train_p = prepare(&empty, train, classes)?;
    let test_p = test.map(|t| prepare(&empty, t, classes)).transpose()?;
    let report = fit(&mut net, &train_p, test_p.as_ref(), hp, 0)?;
    let model = IncrementalModel::new(topology.clone(), net, classes.to_vec(), init_seed)?;
    Ok((model, report))
}

/// Trains `branch` on top of the model's frozen trunk at the branch's split.
/// Only the branch's tail sees gradients.
pub fn train_branch_model(
    model: &IncrementalModel,
    mut branch: BranchModel,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    hp: &Hyperparams,
) -> Result<(BranchModel, TrainReport)> {
    check_new_classes(model, train)?;
    check_labels(train, &branch.class_map)?;
    let trunk = model.trunk_view(branch.split)?;
    let train_p = prepare(&trunk, train, &branch.class_map)?;
    let test_p = test.map(|t| prepare(&trunk, t, &branch.class_map)).transpose()?;
    let report = fit(&mut branch.tail, &train_p, test_p.as_ref(), hp, trunk.param_count())?;
    Ok((branch, report))
}

/// Clones the base tail at `config` with a head over the new classes and
/// trains it.
pub fn train_branch(
    model: &IncrementalModel,
    config: &SharingConfig,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    hp: &Hyperparams,
) -> Result<(BranchModel, TrainReport)> {
    check_new_classes(model, train)?;
    let branch = clone_branch(model, config, train.class_ids().to_vec(), derive_seed(hp.seed, "head"))?;
    train_branch_model(model, branch, train, test, hp)
}

/// Fine-tunes the full depth of `init` (trunk included) on the new data with
/// nothing frozen. The result is a split-0 branch.
pub fn train_unshared_baseline(
    model: &IncrementalModel,
    init: &BranchModel,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    hp: &Hyperparams,
) -> Result<(BranchModel, TrainReport)> {
    check_new_classes(model, train)?;
    check_labels(train, &init.class_map)?;
    let mut net = model.full_depth(init)?;
    let empty = Network::from_layers(net.input_shape().to_vec(), Vec::new())?;
    let train_p = prepare(&empty, train, &init.class_map)?;
    let test_p = test.map(|t| prepare(&empty, t, &init.class_map)).transpose()?;
    let report = fit(&mut net, &train_p, test_p.as_ref(), hp, 0)?;
    Ok((BranchModel::new(0, net, init.class_map.clone())?, report))
}

/// How a new increment's branch is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BranchGrowth {
    /// Copy the base tail below the selected split.
    Clone,
    /// Widen the newest branch's last conv layer.
    Widen { extra_maps: usize, init: WidenInit },
}

/// Consumes one increment's training data, trains a branch at the model's
/// selected split and attaches it.
pub fn add_increment(
    model: &mut IncrementalModel,
    handle: TrainHandle,
    test: Option<&LabeledDataset>,
    growth: BranchGrowth,
    hp: &Hyperparams,
) -> Result<TrainReport> {
    let config = model
        .selected()
        .ok_or_else(|| Error::invalid("select a sharing configuration before adding increments"))?;
    let ordinal = handle.ordinal();
    let train = handle.into_dataset();
    check_new_classes(model, &train)?;
    let classes = train.class_ids().to_vec();
    let seed = derive_seed(hp.seed, "head");
    let branch = match growth {
        BranchGrowth::Clone => clone_branch(model, &config, classes, seed)?,
        BranchGrowth::Widen { extra_maps, init } => widen_last_conv(model, extra_maps, classes, init, seed)?,
    };
    let (branch, report) = train_branch_model(model, branch, &train, test, hp)?;
    model.attach_branch(
        branch,
        Provenance {
            increment: ordinal,
            split: config.split_index,
            shared_fraction: config.shared_fraction,
            seed: hp.seed,
        },
    )?;
    model.mark_consumed(ordinal)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Branch(usize),
    Updated,
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "updated" {
            return Ok(Scope::Updated);
        }
        s.strip_prefix("branch")
            .map(|r| r.trim_start_matches([' ', ':', '=']))
            .and_then(|r| r.parse().ok())
            .map(Scope::Branch)
            .ok_or_else(|| Error::Config(format!("unknown scope '{s}', expected 'updated' or 'branch <k>'")))
    }
}

/// Top-1 accuracy in percent.
pub fn evaluate(model: &IncrementalModel, test: &LabeledDataset, scope: Scope) -> Result<f64> {
    match scope {
        Scope::Updated => Ok(fusion::evaluate_fused(model, test)?.accuracy_percent),
        Scope::Branch(k) => {
            let branch = model.branch(k)?;
            check_labels(test, &branch.class_map)?;
            let mut correct = 0usize;
            for s in test.samples() {
                let probs = branch_probs(branch, &model.trunk_forward(&s.input)?)?;
                let best = Tensor::vector(probs).argmax();
                correct += usize::from(branch.class_map[best] == s.label);
            }
            Ok(100.0 * correct as f64 / test.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sample, Split};

    fn separable(n: usize) -> LabeledDataset {
        let samples = (0..n)
            .map(|i| {
                let label = (i % 2) as u32;
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let jitter = (i as f64 * 0.7).sin() * 0.3;
                Sample {
                    id: i as u64,
                    input: Tensor::vector(vec![sign + jitter, 0.5 * jitter, sign * 0.8]),
                    label,
                }
            })
            .collect();
        LabeledDataset::new(samples, Split::Train).unwrap()
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let topo = Topology::parse(vec![3], &["fc 4", "sigmoid", "head 2"]).unwrap();
        let data = separable(16);
        let hp = Hyperparams { epochs: 50, batch_size: 4, learning_rate: 0.5, ..Default::default() };
        let (model, report) = train_base(&topo, &[0, 1], &data, None, &hp).unwrap();
        assert_eq!(report.final_accuracy, 100.0);
        assert_eq!(evaluate(&model, &data, Scope::Branch(0)).unwrap(), 100.0);
        assert_eq!(report.params_trained + report.params_frozen, topo.total_params());
        assert_eq!(report.iterations, 50 * 4);
    }

    #[test]
    fn training_is_deterministic() {
        let topo = Topology::parse(vec![3], &["fc 4", "relu", "head 2"]).unwrap();
        let hp = Hyperparams { epochs: 5, batch_size: 3, ..Default::default() };
        let (a, ra) = train_base(&topo, &[0, 1], &separable(10), None, &hp).unwrap();
        let (b, rb) = train_base(&topo, &[0, 1], &separable(10), None, &hp).unwrap();
        assert_eq!(a.model_hash(), b.model_hash());
        assert_eq!(ra.epoch_loss, rb.epoch_loss);
    }

    #[test]
    fn label_outside_class_set_is_rejected() {
        let topo = Topology::parse(vec![3], &["head 2"]).unwrap();
        let err = train_base(&topo, &[0, 5], &separable(4), None, &Hyperparams::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel(1)));
    }

    #[test]
    fn scope_parsing() {
        assert_eq!("updated".parse::<Scope>().unwrap(), Scope::Updated);
        assert_eq!("branch 2".parse::<Scope>().unwrap(), Scope::Branch(2));
        assert_eq!("branch:0".parse::<Scope>().unwrap(), Scope::Branch(0));
        assert!("all".parse::<Scope>().is_err());
    }

    #[test]
    fn invalid_hyperparams() {
        assert!(Hyperparams { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(Hyperparams { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(Hyperparams { batch_size: 0, ..Default::default() }.validate().is_err());
    }
}
