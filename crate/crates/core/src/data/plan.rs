use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{DataError, Result};

/// Ordered, pairwise-disjoint class sets. Set 0 trains the base network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncrementPlan {
    sets: Vec<Vec<u32>>,
}

impl IncrementPlan {
    pub fn new(sets: Vec<Vec<u32>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut sorted = Vec::with_capacity(sets.len());
        for (i, set) in sets.into_iter().enumerate() {
            if set.is_empty() {
                return Err(DataError::EmptyClassSet(i).into());
            }
            let unique: BTreeSet<u32> = set.iter().copied().collect();
            for &c in &set {
                if seen.contains(&c) || unique.len() != set.len() {
                    return Err(DataError::OverlappingClassSets(c).into());
                }
            }
            seen.extend(unique.iter().copied());
            sorted.push(unique.into_iter().collect());
        }
        if sorted.is_empty() {
            return Err(DataError::EmptyClassSet(0).into());
        }
        Ok(Self { sets: sorted })
    }

    /// Shuffles `classes` with `seed` and deals them into sets of `sizes`.
    pub fn random(classes: &[u32], sizes: &[usize], seed: u64) -> Result<Self> {
        let needed: usize = sizes.iter().sum();
        if needed > classes.len() {
            return Err(DataError::Inconsistent(format!(
                "plan needs {needed} classes but only {} are available",
                classes.len()
            ))
            .into());
        }
        let mut pool = classes.to_vec();
        pool.sort_unstable();
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut rest = pool.as_slice();
        let mut sets = Vec::with_capacity(sizes.len());
        for &n in sizes {
            let (head, tail) = rest.split_at(n);
            sets.push(head.to_vec());
            rest = tail;
        }
        Self::new(sets)
    }

    pub fn sets(&self) -> &[Vec<u32>] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn classes(&self, ordinal: usize) -> Result<&[u32]> {
        self.sets
            .get(ordinal)
            .map(Vec::as_slice)
            .ok_or_else(|| DataError::UnknownIncrement(ordinal).into())
    }

    pub fn all_classes(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.sets.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }
}

/// One consumption event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub ordinal: usize,
    pub samples: usize,
}

/// Training data for one increment. It can be opened once.
#[derive(Debug)]
pub struct TrainHandle {
    ordinal: usize,
    data: LabeledDataset,
}

impl TrainHandle {
    pub fn ordinal(&self) -> usize {
        self.ordinal
    }

    pub fn into_dataset(self) -> LabeledDataset {
        self.data
    }
}

/// Per-increment train and test data. Test data stays available; each
/// train split is handed out once, in plan order, and then dropped.
#[derive(Debug)]
pub struct IncrementStore {
    plan: IncrementPlan,
    train: Vec<Option<LabeledDataset>>,
    test: Vec<LabeledDataset>,
    log: Vec<AccessRecord>,
    restored: Vec<usize>,
}

/// Partitions train and test data by the plan's class sets.
pub fn split_by_classes(train: &LabeledDataset, test: &LabeledDataset, plan: IncrementPlan) -> Result<IncrementStore> {
    for &c in &plan.all_classes() {
        if train.class_ids().binary_search(&c).is_err() || test.class_ids().binary_search(&c).is_err() {
            return Err(DataError::UnknownClass(c).into());
        }
    }
    let train_sets = plan
        .sets()
        .iter()
        .map(|s| train.restrict(s).map(Some))
        .collect::<Result<Vec<_>>>()?;
    let test_sets = plan
        .sets()
        .iter()
        .map(|s| test.restrict(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(IncrementStore {
        plan,
        train: train_sets,
        test: test_sets,
        log: Vec::new(),
        restored: Vec::new(),
    })
}

impl IncrementStore {
    pub fn plan(&self) -> &IncrementPlan {
        &self.plan
    }

    fn next_ordinal(&self) -> usize {
        self.train.iter().take_while(|t| t.is_none()).count()
    }

    /// Hands out the train split of `ordinal`, which must be the next
    /// unconsumed increment.
    pub fn consume_increment(&mut self, ordinal: usize) -> Result<TrainHandle> {
        if ordinal >= self.train.len() {
            return Err(DataError::UnknownIncrement(ordinal).into());
        }
        if self.train[ordinal].is_none() {
            return Err(DataError::AlreadyConsumed(ordinal).into());
        }
        let expected = self.next_ordinal();
        if ordinal != expected {
            return Err(DataError::OutOfOrder {
                expected,
                requested: ordinal,
            }
            .into());
        }
        let data = self.train[ordinal].take().expect("checked above");
        self.log.push(AccessRecord {
            ordinal,
            samples: data.len(),
        });
        Ok(TrainHandle { ordinal, data })
    }

    /// Drops the train splits of increments consumed in an earlier run.
    pub fn restore_consumed(&mut self, consumed: &[usize]) -> Result<()> {
        for &o in consumed {
            if o >= self.train.len() {
                return Err(DataError::UnknownIncrement(o).into());
            }
            if self.train[o].take().is_none() {
                return Err(DataError::AlreadyConsumed(o).into());
            }
            self.restored.push(o);
        }
        let n = self.next_ordinal();
        if self.train[n..].iter().any(Option::is_none) {
            return Err(DataError::Inconsistent(format!(
                "consumed increments {consumed:?} skip an earlier one"
            ))
            .into());
        }
        Ok(())
    }

    pub fn is_consumed(&self, ordinal: usize) -> bool {
        self.train.get(ordinal).is_some_and(Option::is_none)
    }

    pub fn test(&self, ordinal: usize) -> Result<&LabeledDataset> {
        self.test
            .get(ordinal)
            .ok_or_else(|| DataError::UnknownIncrement(ordinal).into())
    }

    /// Test samples of increments `0..=ordinal`.
    pub fn test_through(&self, ordinal: usize) -> Result<LabeledDataset> {
        if ordinal >= self.test.len() {
            return Err(DataError::UnknownIncrement(ordinal).into());
        }
        let parts: Vec<&LabeledDataset> = self.test[..=ordinal].iter().collect();
        LabeledDataset::merge(&parts)
    }

    /// Consumptions made through this store, in order.
    pub fn access_log(&self) -> &[AccessRecord] {
        &self.log
    }

    /// Increments consumed before this store was built.
    pub fn restored(&self) -> &[usize] {
        &self.restored
    }

    pub fn write_access_log(&self, path: &Path) -> Result<()> {
        let mut out = String::from("ordinal,samples\n");
        for r in &self.log {
            out.push_str(&format!("{},{}\n", r.ordinal, r.samples));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sample, Split};
    use crate::error::Error;
    use crate::Tensor;

    fn data(split: Split, classes: u32, per: u64) -> LabeledDataset {
        let samples = (0..classes as u64 * per)
            .map(|i| Sample {
                id: i,
                input: Tensor::zeros(&[1]),
                label: (i % classes as u64) as u32,
            })
            .collect();
        LabeledDataset::new(samples, split).unwrap()
    }

    fn store() -> IncrementStore {
        let plan = IncrementPlan::new(vec![(0..5).collect(), (5..10).collect()]).unwrap();
        split_by_classes(&data(Split::Train, 10, 3), &data(Split::Test, 10, 1), plan).unwrap()
    }

    #[test]
    fn partition_covers_everything_once() {
        let mut s = store();
        let a = s.consume_increment(0).unwrap().into_dataset();
        let b = s.consume_increment(1).unwrap().into_dataset();
        assert_eq!(a.len() + b.len(), 30);
        let ids_a: BTreeSet<u64> = a.samples().iter().map(|x| x.id).collect();
        assert!(b.samples().iter().all(|x| !ids_a.contains(&x.id)));
        let log: Vec<usize> = s.access_log().iter().map(|r| r.ordinal).collect();
        assert_eq!(log, [0, 1]);
    }

    #[test]
    fn reconsumption_and_order_errors_differ() {
        let mut s = store();
        assert!(matches!(
            s.consume_increment(1),
            Err(Error::Data(DataError::OutOfOrder { expected: 0, requested: 1 }))
        ));
        s.consume_increment(0).unwrap();
        assert!(matches!(s.consume_increment(0), Err(Error::Data(DataError::AlreadyConsumed(0)))));
        assert!(matches!(s.consume_increment(2), Err(Error::Data(DataError::UnknownIncrement(2)))));
        assert_eq!(s.access_log().len(), 1);
    }

    #[test]
    fn tests_stay_available() {
        let mut s = store();
        s.consume_increment(0).unwrap();
        assert_eq!(s.test(0).unwrap().len(), 5);
        assert_eq!(s.test_through(1).unwrap().len(), 10);
    }

    #[test]
    fn plan_validation() {
        assert!(matches!(
            IncrementPlan::new(vec![vec![0, 1], vec![]]),
            Err(Error::Data(DataError::EmptyClassSet(1)))
        ));
        assert!(matches!(
            IncrementPlan::new(vec![vec![0, 1], vec![1, 2]]),
            Err(Error::Data(DataError::OverlappingClassSets(1)))
        ));
        let plan = IncrementPlan::new(vec![vec![0], vec![42]]).unwrap();
        assert!(matches!(
            split_by_classes(&data(Split::Train, 10, 1), &data(Split::Test, 10, 1), plan),
            Err(Error::Data(DataError::UnknownClass(42)))
        ));
    }

    #[test]
    fn random_plans_are_seeded() {
        let classes: Vec<u32> = (0..100).collect();
        let a = IncrementPlan::random(&classes, &[50, 10, 20, 20], 9).unwrap();
        let b = IncrementPlan::random(&classes, &[50, 10, 20, 20], 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.all_classes(), classes);
        assert_ne!(a, IncrementPlan::random(&classes, &[50, 10, 20, 20], 10).unwrap());
    }

    #[test]
    fn restore_marks_earlier_runs() {
        let mut s = store();
        s.restore_consumed(&[0]).unwrap();
        assert!(s.is_consumed(0));
        assert!(matches!(s.consume_increment(0), Err(Error::Data(DataError::AlreadyConsumed(0)))));
        s.consume_increment(1).unwrap();
        let mut t = store();
        assert!(t.restore_consumed(&[1]).is_err());
    }
}
