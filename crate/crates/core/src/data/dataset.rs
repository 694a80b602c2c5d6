use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Unique within the dataset it was loaded from.
    pub id: u64,
    pub input: Tensor,
    pub label: u32,
}

/// Samples sharing one input shape, with the sorted set of labels present.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    class_ids: Vec<u32>,
    split: Split,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Sample>, split: Split) -> Result<Self> {
        let first = samples.first().ok_or(DataError::Empty)?;
        let shape = first.input.shape().to_vec();
        let mut ids = BTreeSet::new();
        for s in &samples {
            if s.input.shape() != shape.as_slice() {
                return Err(DataError::Inconsistent(format!(
                    "sample {} has shape {:?}, expected {shape:?}",
                    s.id,
                    s.input.shape()
                ))
                .into());
            }
            if !ids.insert(s.id) {
                return Err(DataError::Inconsistent(format!("sample id {} repeats", s.id)).into());
            }
        }
        let class_ids = samples
            .iter()
            .map(|s| s.label)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            samples,
            class_ids,
            split,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_shape(&self) -> &[usize] {
        self.samples[0].input.shape()
    }

    /// Samples whose label is in `classes`, keeping their order.
    pub fn restrict(&self, classes: &[u32]) -> Result<Self> {
        let keep: BTreeSet<u32> = classes.iter().copied().collect();
        Self::new(
            self.samples
                .iter()
                .filter(|s| keep.contains(&s.label))
                .cloned()
                .collect(),
            self.split,
        )
    }

    /// Concatenates datasets of the same split and shape.
    pub fn merge(parts: &[&LabeledDataset]) -> Result<Self> {
        let split = parts.first().ok_or(DataError::Empty)?.split;
        let samples = parts.iter().flat_map(|p| p.samples.iter().cloned()).collect();
        Self::new(samples, split)
    }

    pub fn count_per_class(&self) -> Vec<(u32, usize)> {
        self.class_ids
            .iter()
            .map(|&c| (c, self.samples.iter().filter(|s| s.label == c).count()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: u64, label: u32, shape: &[usize]) -> Sample {
        Sample {
            id,
            input: Tensor::zeros(shape),
            label,
        }
    }

    #[test]
    fn classes_are_sorted_and_unique() {
        let d = LabeledDataset::new(vec![s(0, 3, &[2]), s(1, 1, &[2]), s(2, 3, &[2])], Split::Train).unwrap();
        assert_eq!(d.class_ids(), &[1, 3]);
        assert_eq!(d.count_per_class(), vec![(1, 1), (3, 2)]);
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(LabeledDataset::new(vec![], Split::Train).is_err());
        assert!(LabeledDataset::new(vec![s(0, 0, &[2]), s(1, 0, &[3])], Split::Train).is_err());
        assert!(LabeledDataset::new(vec![s(0, 0, &[2]), s(0, 1, &[2])], Split::Train).is_err());
    }

    #[test]
    fn restrict_keeps_order() {
        let d = LabeledDataset::new((0..6).map(|i| s(i, (i % 3) as u32, &[1])).collect(), Split::Test).unwrap();
        let r = d.restrict(&[2, 0]).unwrap();
        let ids: Vec<u64> = r.samples().iter().map(|s| s.id).collect();
        assert_eq!(ids, [0, 2, 3, 5]);
    }
}
