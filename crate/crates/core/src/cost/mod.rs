//! Analytic operation, traffic and storage accounting for training with and
//! without a shared trunk.
//!
//! Counting conventions (all per sample unless noted):
//! - forward MACs exclude bias additions; pooling, activations and adds are free
//! - backward = input-gradient pass + weight-gradient pass, each equal to the
//!   forward MACs for conv and fc layers
//! - the first trained layer has no input-gradient pass
//! - updates cost `update_macs_per_param` per trained parameter per iteration
//! - traffic: every weight is read once per forward pass and once per
//!   weight-gradient pass; every activation is written once forward and read
//!   once backward; batch norm also reads its running statistics; each
//!   trained parameter costs a gradient read, a weight write and a read plus
//!   a write of every optimizer state word per iteration

mod net;
mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use net::{builtin, resnet101_cifar, resnet34_imagenet, CostKind, CostLayer, CostNetwork};
pub use report::{
    count_network, energy_estimate, mem_access_saving, storage_requirement, time_proxy, CostReport, EnergyEstimate,
    LayerCost, Storage, TimeEstimate,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Inference,
    /// Frozen trunk layer during branch training: forward only.
    TrainShared,
    /// Trained layer with gradient flowing to its input.
    TrainActive,
    /// Trained layer with nothing trainable upstream.
    TrainFirst,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Inference => "inference",
            Phase::TrainShared => "train_shared",
            Phase::TrainActive => "train_active",
            Phase::TrainFirst => "train_first",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inference" => Ok(Phase::Inference),
            "train_shared" => Ok(Phase::TrainShared),
            "train_active" => Ok(Phase::TrainActive),
            "train_first" => Ok(Phase::TrainFirst),
            _ => Err(Error::invalid(format!("unknown phase {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Conventions {
    /// 1 for plain SGD as counted here; 2 matches the momentum kernel.
    pub update_macs_per_param: u64,
    /// MACs per element and pass charged to batch norm; 0 treats it as free.
    pub bn_macs_per_element: u64,
    pub optimizer_state_words: u64,
    pub batch_size: u64,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            update_macs_per_param: 1,
            bn_macs_per_element: 0,
            optimizer_state_words: 1,
            batch_size: 1,
        }
    }
}

impl Conventions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("cost batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub macs_forward: u64,
    pub macs_backward_input: u64,
    pub macs_backward_weight: u64,
    pub macs_update: u64,
    pub mem_reads: u64,
    pub mem_writes: u64,
    pub params: u64,
}

impl OpCounts {
    pub fn macs_backward(&self) -> u64 {
        self.macs_backward_input + self.macs_backward_weight
    }

    pub fn macs_total(&self) -> u64 {
        self.macs_forward + self.macs_backward() + self.macs_update
    }

    pub fn accesses(&self) -> u64 {
        self.mem_reads + self.mem_writes
    }
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;

    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            macs_forward: self.macs_forward + o.macs_forward,
            macs_backward_input: self.macs_backward_input + o.macs_backward_input,
            macs_backward_weight: self.macs_backward_weight + o.macs_backward_weight,
            macs_update: self.macs_update + o.macs_update,
            mem_reads: self.mem_reads + o.mem_reads,
            mem_writes: self.mem_writes + o.mem_writes,
            params: self.params + o.params,
        }
    }
}

impl std::iter::Sum for OpCounts {
    fn sum<I: Iterator<Item = OpCounts>>(iter: I) -> Self {
        iter.fold(OpCounts::default(), |a, b| a + b)
    }
}

/// Counts for one layer over one iteration of `conv.batch_size` samples.
pub fn count_layer(layer: &CostLayer, phase: Phase, conv: &Conventions) -> OpCounts {
    let b = conv.batch_size;
    let params = layer.params();
    let (fwd, bwd_in, bwd_w) = match layer.kind {
        CostKind::BatchNorm { .. } => {
            let m = conv.bn_macs_per_element * layer.out_elems;
            (m, m, m)
        }
        _ => {
            let f = layer.forward_macs();
            (f, f, f)
        }
    };
    let stats = match layer.kind {
        CostKind::BatchNorm { channels } => 2 * channels as u64,
        _ => 0,
    };
    let mut c = OpCounts {
        macs_forward: b * fwd,
        mem_reads: b * (params + stats),
        mem_writes: b * layer.out_elems,
        params,
        ..OpCounts::default()
    };
    match phase {
        Phase::Inference | Phase::TrainShared => return c,
        Phase::TrainActive => c.macs_backward_input = b * bwd_in,
        Phase::TrainFirst => {}
    }
    c.macs_backward_weight = b * bwd_w;
    c.mem_reads += b * (params + layer.out_elems);
    let state = conv.optimizer_state_words;
    c.macs_update = conv.update_macs_per_param * params;
    c.mem_reads += params * (1 + state);
    c.mem_writes += params * (1 + state);
    c
}

/// Phase of every layer of a network trained above `split`.
pub fn phases(layers: usize, split: usize) -> Vec<Phase> {
    (0..layers)
        .map(|i| match i.cmp(&split) {
            std::cmp::Ordering::Less => Phase::TrainShared,
            std::cmp::Ordering::Equal => Phase::TrainFirst,
            std::cmp::Ordering::Greater => Phase::TrainActive,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    pub e_mac: f64,
    pub e_read: f64,
    pub e_write: f64,
    pub word_bytes: u64,
}

impl Default for EnergyTable {
    /// Placeholder ratios 1 : 5 : 5 in arbitrary units.
    fn default() -> Self {
        Self {
            e_mac: 1.0,
            e_read: 5.0,
            e_write: 5.0,
            word_bytes: 4,
        }
    }
}

impl EnergyTable {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.e_mac) && ok(self.e_read) && ok(self.e_write)) || self.word_bytes == 0 {
            return Err(Error::Config(format!("energy table entries must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            e_mac: self.e_mac * k,
            e_read: self.e_read * k,
            e_write: self.e_write * k,
            word_bytes: self.word_bytes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_and_fc_examples() {
        let conv = CostLayer::conv("c", [4, 12, 12], 4, 5, 1, 0).unwrap();
        let c = count_layer(&conv, Phase::Inference, &Conventions::default());
        assert_eq!(c.macs_forward, 25_600);
        let fc = CostLayer::fc("f", 64, 10);
        let c = count_layer(&fc, Phase::TrainActive, &Conventions::default());
        assert_eq!((c.macs_forward, c.macs_update, c.params), (640, 650, 650));
        assert_eq!(c.macs_backward(), 1280);
    }

    #[test]
    fn elementwise_layers_cost_no_macs() {
        let relu = CostLayer::elementwise("r", 50, 50);
        let c = count_layer(&relu, Phase::TrainActive, &Conventions::default());
        assert_eq!((c.macs_total(), c.params), (0, 0));
        assert!(c.accesses() > 0);
    }

    #[test]
    fn shared_phase_keeps_forward_only() {
        let conv = CostLayer::conv("c", [3, 8, 8], 6, 3, 1, 1).unwrap();
        let conv_cfg = Conventions::default();
        let s = count_layer(&conv, Phase::TrainShared, &conv_cfg);
        let a = count_layer(&conv, Phase::TrainActive, &conv_cfg);
        assert_eq!(s.macs_forward, a.macs_forward);
        assert_eq!(s.macs_backward() + s.macs_update, 0);
        assert_eq!(s, count_layer(&conv, Phase::Inference, &conv_cfg));
        let first = count_layer(&conv, Phase::TrainFirst, &conv_cfg);
        assert_eq!(first.macs_backward_input, 0);
        assert_eq!(first.macs_backward_weight, a.macs_backward_weight);
    }

    #[test]
    fn phase_names_round_trip() {
        for p in [Phase::Inference, Phase::TrainShared, Phase::TrainActive, Phase::TrainFirst] {
            assert_eq!(p.to_string().parse::<Phase>().unwrap(), p);
        }
    }
}
