use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cost::{count_layer, phases, Conventions, CostNetwork, EnergyTable, OpCounts, Phase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub phase: Phase,
    pub counts: OpCounts,
}

/// Per-iteration counts for training one new branch above `split`, next to
/// the same network trained without sharing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub network: String,
    pub split: usize,
    pub shared_fraction: f64,
    pub conventions: Conventions,
    pub with_sharing: Vec<LayerCost>,
    pub without_sharing: Vec<LayerCost>,
    pub total_with: OpCounts,
    pub total_without: OpCounts,
}

fn layer_costs(net: &CostNetwork, split: usize, conv: &Conventions) -> Vec<LayerCost> {
    net.layers
        .iter()
        .zip(phases(net.layers.len(), split))
        .map(|(l, phase)| LayerCost {
            name: l.name.clone(),
            phase,
            counts: count_layer(l, phase, conv),
        })
        .collect()
}

pub fn count_network(net: &CostNetwork, split: usize, conv: &Conventions) -> Result<CostReport> {
    net.check_split(split)?;
    conv.validate()?;
    let with_sharing = layer_costs(net, split, conv);
    let without_sharing = layer_costs(net, 0, conv);
    Ok(CostReport {
        network: net.name.clone(),
        split,
        shared_fraction: net.shared_fraction(split),
        conventions: *conv,
        total_with: with_sharing.iter().map(|l| l.counts).sum(),
        total_without: without_sharing.iter().map(|l| l.counts).sum(),
        with_sharing,
        without_sharing,
    })
}

impl CostReport {
    /// `layer,phase,macs_fwd,macs_bwd,macs_upd,mem_reads,mem_writes,params`
    /// for the shared run, closed by a `total` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "phase", "macs_fwd", "macs_bwd", "macs_upd", "mem_reads", "mem_writes", "params"])
            .map_err(csv_err)?;
        let row = |name: &str, phase: &str, c: &OpCounts| {
            vec![
                name.to_string(),
                phase.to_string(),
                c.macs_forward.to_string(),
                c.macs_backward().to_string(),
                c.macs_update.to_string(),
                c.mem_reads.to_string(),
                c.mem_writes.to_string(),
                c.params.to_string(),
            ]
        };
        for l in &self.with_sharing {
            w.write_record(row(&l.name, &l.phase.to_string(), &l.counts)).map_err(csv_err)?;
        }
        w.write_record(row("total", "", &self.total_with)).map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }

    /// Training MACs without sharing over training MACs with sharing.
    pub fn mac_ratio(&self) -> f64 {
        self.total_without.macs_total() as f64 / self.total_with.macs_total() as f64
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub with_sharing: f64,
    pub without_sharing: f64,
    pub ratio: f64,
}

fn energy_of(c: &OpCounts, t: &EnergyTable) -> f64 {
    c.macs_total() as f64 * t.e_mac + c.mem_reads as f64 * t.e_read + c.mem_writes as f64 * t.e_write
}

/// MAC plus memory energy per iteration, and the without/with ratio.
pub fn energy_estimate(report: &CostReport, table: &EnergyTable) -> Result<EnergyEstimate> {
    table.validate()?;
    let with_sharing = energy_of(&report.total_with, table);
    let without_sharing = energy_of(&report.total_without, table);
    Ok(EnergyEstimate {
        with_sharing,
        without_sharing,
        ratio: without_sharing / with_sharing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeEstimate {
    pub with_sharing: f64,
    pub without_sharing: f64,
    pub ratio: f64,
}

/// Roofline time per iteration: the slower of compute and memory.
pub fn time_proxy(report: &CostReport, throughput: f64, bandwidth: f64) -> Result<TimeEstimate> {
    if !(throughput > 0.0) || !(bandwidth > 0.0) {
        return Err(Error::Config(format!(
            "throughput and bandwidth must be positive, got {throughput} and {bandwidth}"
        )));
    }
    let t = |c: &OpCounts| (c.macs_total() as f64 / throughput).max(c.accesses() as f64 / bandwidth);
    let with_sharing = t(&report.total_with);
    let without_sharing = t(&report.total_without);
    Ok(TimeEstimate {
        with_sharing,
        without_sharing,
        ratio: without_sharing / with_sharing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Storage {
    pub full_model_bytes: u64,
    /// New bytes per added branch: every layer at or above the split.
    pub branch_bytes: u64,
    /// Trunk plus `branches` tails.
    pub total_bytes: u64,
    pub reduction_percent: f64,
}

pub fn storage_requirement(net: &CostNetwork, split: usize, branches: u64, table: &EnergyTable) -> Result<Storage> {
    net.check_split(split)?;
    table.validate()?;
    let full = net.total_params();
    let tail = full - net.params_below(split);
    Ok(Storage {
        full_model_bytes: full * table.word_bytes,
        branch_bytes: tail * table.word_bytes,
        total_bytes: (net.params_below(split) + branches * tail) * table.word_bytes,
        reduction_percent: 100.0 * (1.0 - tail as f64 / full as f64),
    })
}

/// Percent fewer memory accesses per iteration than training unshared.
pub fn mem_access_saving(report: &CostReport) -> f64 {
    100.0 * (1.0 - report.total_with.accesses() as f64 / report.total_without.accesses() as f64)
}
