//! Max-probability fusion over the base branch and every attached branch.
//!
//! Branch ordinal 0 is the base; attached branches follow in attach order.
//! Ties on the maximum probability go to the lowest ordinal, then to the
//! lowest global class id.

use crate::error::{Error, Result};
use crate::graph::{BranchModel, IncrementalModel};
use crate::ops::softmax;
use crate::tensor::Tensor;
use crate::data::LabeledDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct FusedPrediction {
    pub global_class: u32,
    pub winning_branch: usize,
    pub per_branch_probs: Vec<Vec<f64>>,
}

/// Softmax of a branch head given trunk activations.
pub fn branch_probs(branch: &BranchModel, features: &Tensor) -> Result<Vec<f64>> {
    Ok(softmax(branch.tail.forward(features)?.data()))
}

pub fn predict_branch(model: &IncrementalModel, ordinal: usize, input: &Tensor) -> Result<Vec<f64>> {
    let branch = model.branch(ordinal)?;
    branch_probs(branch, &model.trunk_forward(input)?)
}

/// Picks the winning `(branch, global class)` from per-branch probabilities.
pub fn fuse_probs(per_branch: &[Vec<f64>], class_maps: &[&[u32]]) -> Result<(usize, u32)> {
    if per_branch.is_empty() || per_branch.len() != class_maps.len() {
        return Err(Error::invalid("fusion needs one class map per probability vector"));
    }
    let mut best: Option<(f64, usize, u32)> = None;
    for (b, (probs, map)) in per_branch.iter().zip(class_maps).enumerate() {
        if probs.len() != map.len() {
            return Err(Error::shape(format!(
                "branch {b} has {} probabilities for {} classes",
                probs.len(),
                map.len()
            )));
        }
        for (&p, &c) in probs.iter().zip(*map) {
            let better = match best {
                None => true,
                Some((bp, bb, bc)) => p > bp || (p == bp && bb == b && c < bc),
            };
            if better {
                best = Some((p, b, c));
            }
        }
    }
    let (_, b, c) = best.ok_or_else(|| Error::invalid("no classes to fuse"))?;
    Ok((b, c))
}

/// Runs the trunk once and every branch on the shared activations.
pub fn fuse_predict(model: &IncrementalModel, input: &Tensor) -> Result<FusedPrediction> {
    let features = model.trunk_forward(input)?;
    fuse_features(model, &features)
}

fn fuse_features(model: &IncrementalModel, features: &Tensor) -> Result<FusedPrediction> {
    let per_branch_probs = model
        .all_branches()
        .map(|b| branch_probs(b, features))
        .collect::<Result<Vec<_>>>()?;
    let maps: Vec<&[u32]> = model.all_branches().map(|b| b.class_map.as_slice()).collect();
    let (winning_branch, global_class) = fuse_probs(&per_branch_probs, &maps)?;
    Ok(FusedPrediction {
        global_class,
        winning_branch,
        per_branch_probs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedEvaluation {
    pub accuracy_percent: f64,
    pub correct: usize,
    pub total: usize,
    /// How many test samples each branch won.
    pub routing: Vec<usize>,
}

pub fn evaluate_fused(model: &IncrementalModel, test: &LabeledDataset) -> Result<FusedEvaluation> {
    let known = model.classes();
    if let Some(&c) = test.class_ids().iter().find(|c| !known.contains(c)) {
        return Err(Error::UnknownLabel(c));
    }
    let mut routing = vec![0; model.branch_count()];
    let mut correct = 0;
    for s in test.samples() {
        let p = fuse_predict(model, &s.input)?;
        routing[p.winning_branch] += 1;
        correct += usize::from(p.global_class == s.label);
    }
    Ok(FusedEvaluation {
        accuracy_percent: 100.0 * correct as f64 / test.len() as f64,
        correct,
        total: test.len(),
        routing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_rule_and_ties() {
        let (b, c) = fuse_probs(&[vec![0.9, 0.1], vec![0.6, 0.4]], &[&[0, 1], &[2, 3]]).unwrap();
        assert_eq!((b, c), (0, 0));
        let (b, c) = fuse_probs(&[vec![0.5, 0.5], vec![0.5, 0.5]], &[&[7, 3], &[1, 2]]).unwrap();
        assert_eq!((b, c), (0, 3));
        let (b, c) = fuse_probs(&[vec![0.2, 0.8]], &[&[4, 5]]).unwrap();
        assert_eq!((b, c), (0, 5));
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        assert!(fuse_probs(&[], &[]).is_err());
        assert!(fuse_probs(&[vec![1.0]], &[&[0, 1]]).is_err());
    }
}
