//! Reference points without partial sharing: naive fine-tuning on new data
//! only (forgets) and cumulative retraining on everything seen so far (needs
//! old data). Both are desk-scale comparisons, not part of the pipeline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::graph::network::Layer;
use crate::graph::{IncrementalModel, LayerSpec, Network, Topology};
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use crate::train::{fit, prepare, Hyperparams, TrainReport};

/// Appends `extra` fresh output rows to the head of `net`.
pub fn extend_head(net: &Network, extra: usize, seed: u64) -> Result<Network> {
    let mut layers = net.layers().to_vec();
    let head = layers.pop().ok_or_else(|| Error::Topology("empty network".into()))?;
    let LayerSpec::Head { classes } = head.spec else {
        return Err(Error::Topology("network does not end in a head".into()));
    };
    let fan_in: usize = head.in_shape.iter().product();
    let normal = Normal::new(0.0, head.params[0].std()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = head.params[0].data().to_vec();
    w.extend((0..extra * fan_in).map(|_| normal.sample(&mut rng)));
    let mut b = head.params[1].data().to_vec();
    b.extend(std::iter::repeat_n(0.0, extra));
    let n = classes + extra;
    layers.push(Layer::new(
        LayerSpec::Head { classes: n },
        head.in_shape.clone(),
        vec![Tensor::new(vec![n, fan_in], w)?, Tensor::vector(b)],
    )?);
    Network::from_layers(net.input_shape().to_vec(), layers)
}

pub struct BaselineRun {
    pub network: Network,
    pub class_map: Vec<u32>,
    pub report: TrainReport,
}

/// Fine-tunes the whole base network on `new_train` alone after growing its
/// head to the old plus new classes; `test` may cover all of them.
pub fn train_naive(
    model: &IncrementalModel,
    new_train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    hp: &Hyperparams,
) -> Result<BaselineRun> {
    let mut class_map = model.base().class_map.clone();
    let fresh: Vec<u32> = new_train.class_ids().iter().copied().filter(|c| !class_map.contains(c)).collect();
    class_map.extend(fresh);
    let extra = class_map.len() - model.base().class_map.len();
    let mut net = extend_head(&model.base_network(), extra, derive_seed(hp.seed, "naive-head"))?;
    net.unfreeze_all();
    let empty = Network::from_layers(net.input_shape().to_vec(), Vec::new())?;
    let train_p = prepare(&empty, new_train, &class_map)?;
    let test_p = test.map(|t| prepare(&empty, t, &class_map)).transpose()?;
    let report = fit(&mut net, &train_p, test_p.as_ref(), hp, 0)?;
    Ok(BaselineRun {
        network: net,
        class_map,
        report,
    })
}

/// Trains `topology` with its head resized to `classes` from scratch on all
/// training data supplied.
pub fn train_cumulative(
    topology: &Topology,
    classes: &[u32],
    all_train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    hp: &Hyperparams,
) -> Result<BaselineRun> {
    let topo = topology.with_head(classes.len())?;
    let mut net = Network::build(topo.input_shape(), topo.layers(), derive_seed(hp.seed, "cumulative"))?;
    let empty = Network::from_layers(topo.input_shape().to_vec(), Vec::new())?;
    let train_p = prepare(&empty, all_train, classes)?;
    let test_p = test.map(|t| prepare(&empty, t, classes)).transpose()?;
    let report = fit(&mut net, &train_p, test_p.as_ref(), hp, 0)?;
    Ok(BaselineRun {
        network: net,
        class_map: classes.to_vec(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extended_head_keeps_old_rows() {
        let net = Network::build(&[4], &["fc 3".parse().unwrap(), "head 2".parse().unwrap()], 1).unwrap();
        let grown = extend_head(&net, 3, 2).unwrap();
        assert_eq!(grown.output_shape(), &[5]);
        let x = Tensor::vector(vec![0.1, -0.4, 0.3, 0.9]);
        let old = net.forward(&x).unwrap();
        let new = grown.forward(&x).unwrap();
        assert_eq!(&new.data()[..2], old.data());
    }
}
