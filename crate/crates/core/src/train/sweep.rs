use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::graph::{clone_branch, BranchModel, IncrementalModel, SharingConfig};
use crate::seed::derive_seed;
use crate::train::{train_branch_model, train_unshared_baseline, Hyperparams, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharingPoint {
    pub split_index: usize,
    pub shared_fraction: f64,
    pub accuracy_percent: f64,
    pub params_trained: usize,
}

impl SharingPoint {
    pub fn config(&self) -> SharingConfig {
        SharingConfig {
            split_index: self.split_index,
            shared_fraction: self.shared_fraction,
        }
    }
}

/// Accuracy of a probe increment against the shared fraction. The first
/// point is the unshared baseline at fraction 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingCurve {
    points: Vec<SharingPoint>,
}

impl SharingCurve {
    /// Sorts by fraction; requires a fraction-0 point and distinct fractions.
    pub fn new(mut points: Vec<SharingPoint>) -> Result<Self> {
        points.sort_by(|a, b| a.shared_fraction.total_cmp(&b.shared_fraction));
        if points.first().map(|p| p.shared_fraction) != Some(0.0) {
            return Err(Error::invalid("a sharing curve needs its fraction-0 baseline"));
        }
        if points.windows(2).any(|w| w[0].shared_fraction >= w[1].shared_fraction) {
            return Err(Error::invalid("sharing fractions must be distinct"));
        }
        if let Some(p) = points.iter().find(|p| !(0.0..=100.0).contains(&p.accuracy_percent)) {
            return Err(Error::invalid(format!("accuracy {} is not a percentage", p.accuracy_percent)));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[SharingPoint] {
        &self.points
    }

    pub fn baseline_accuracy(&self) -> f64 {
        self.points[0].accuracy_percent
    }
}

/// The largest shared fraction whose accuracy is within `tolerance_points`
/// of the baseline. The baseline itself always qualifies.
pub fn select_optimal_sharing(curve: &SharingCurve, tolerance_points: f64) -> Result<SharingConfig> {
    if !(tolerance_points >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be non-negative, got {tolerance_points}")));
    }
    let floor = curve.baseline_accuracy() - tolerance_points;
    let best = curve
        .points()
        .iter()
        .rev()
        .find(|p| p.accuracy_percent >= floor)
        .unwrap_or(&curve.points()[0]);
    Ok(best.config())
}

pub struct SweepEntry {
    pub config: SharingConfig,
    pub branch: BranchModel,
    pub report: TrainReport,
}

pub struct SweepResult {
    pub curve: SharingCurve,
    /// One trained branch per curve point, in curve order.
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    pub fn entry(&self, config: &SharingConfig) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.config.split_index == config.split_index)
    }

    pub fn into_entry(self, config: &SharingConfig) -> Option<SweepEntry> {
        self.entries.into_iter().find(|e| e.config.split_index == config.split_index)
    }
}

/// Trains one clone of the base per candidate split on the same probe data
/// and epoch budget, plus the unshared full-depth baseline.
pub fn sweep_sharing(
    model: &IncrementalModel,
    probe_train: &LabeledDataset,
    probe_test: &LabeledDataset,
    candidates: &[usize],
    hp: &Hyperparams,
) -> Result<SweepResult> {
    sweep_sharing_threads(model, probe_train, probe_test, candidates, hp, 1)
}

/// [`sweep_sharing`] with candidates spread over `threads` workers. The
/// result does not depend on the thread count.
pub fn sweep_sharing_threads(
    model: &IncrementalModel,
    probe_train: &LabeledDataset,
    probe_test: &LabeledDataset,
    candidates: &[usize],
    hp: &Hyperparams,
    threads: usize,
) -> Result<SweepResult> {
    let mut splits: Vec<usize> = candidates.to_vec();
    splits.sort_unstable();
    splits.dedup();
    if splits.len() < 2 {
        return Err(Error::Config(format!(
            "a sweep needs at least 2 distinct candidate splits, got {candidates:?}"
        )));
    }
    if splits.contains(&0) {
        return Err(Error::Config("split 0 is the implicit baseline, not a candidate".into()));
    }
    hp.validate()?;
    let configs = std::iter::once(Ok(SharingConfig::unshared()))
        .chain(splits.iter().map(|&s| SharingConfig::new(model.topology(), s)))
        .collect::<Result<Vec<_>>>()?;
    let classes = probe_train.class_ids().to_vec();
    let head_seed = derive_seed(hp.seed, "head");
    let run = |config: &SharingConfig| -> Result<SweepEntry> {
        let split = config.split_index;
        let tag = |e: Error| match e {
            Error::Numeric(m) => Error::Numeric(format!("sweep at split {split}: {m}")),
            other => other,
        };
        let init = clone_branch(model, config, classes.clone(), head_seed)?;
        let (branch, report) = if split == 0 {
            train_unshared_baseline(model, &init, probe_train, Some(probe_test), hp)
        } else {
            train_branch_model(model, init, probe_train, Some(probe_test), hp)
        }
        .map_err(tag)?;
        Ok(SweepEntry {
            config: *config,
            branch,
            report,
        })
    };
    let threads = threads.clamp(1, configs.len());
    let mut slots: Vec<Option<Result<SweepEntry>>> = (0..configs.len()).map(|_| None).collect();
    if threads == 1 {
        for (slot, c) in slots.iter_mut().zip(&configs) {
            *slot = Some(run(c));
        }
    } else {
        std::thread::scope(|scope| {
            let workers: Vec<_> = (0..threads)
                .map(|t| {
                    let (run, configs) = (&run, &configs);
                    scope.spawn(move || {
                        (t..configs.len())
                            .step_by(threads)
                            .map(|i| (i, run(&configs[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for w in workers {
                for (i, r) in w.join().expect("sweep worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
    }
    let mut entries = slots
        .into_iter()
        .map(|s| s.expect("every candidate ran"))
        .collect::<Result<Vec<_>>>()?;
    let curve = SharingCurve::new(
        entries
            .iter()
            .map(|e| SharingPoint {
                split_index: e.config.split_index,
                shared_fraction: e.config.shared_fraction,
                accuracy_percent: e.report.final_accuracy,
                params_trained: e.report.params_trained,
            })
            .collect(),
    )?;
    entries.sort_by(|a, b| a.config.shared_fraction.total_cmp(&b.config.shared_fraction));
    Ok(SweepResult { curve, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(pts: &[(f64, f64)]) -> SharingCurve {
        SharingCurve::new(
            pts.iter()
                .enumerate()
                .map(|(i, &(f, a))| SharingPoint {
                    split_index: i,
                    shared_fraction: f,
                    accuracy_percent: a,
                    params_trained: 100 - i,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn selection_examples() {
        let c = curve(&[(0.0, 90.0), (0.5, 89.5), (0.8, 89.2), (0.9, 85.0)]);
        assert_eq!(select_optimal_sharing(&c, 1.0).unwrap().shared_fraction, 0.8);
        let d = curve(&[(0.0, 90.0), (0.5, 89.0), (0.8, 88.0)]);
        assert_eq!(select_optimal_sharing(&d, 0.0).unwrap().shared_fraction, 0.0);
        assert_eq!(select_optimal_sharing(&c, 100.0).unwrap().shared_fraction, 0.9);
        assert!(select_optimal_sharing(&c, -1.0).is_err());
    }

    #[test]
    fn curve_is_sorted_and_needs_a_baseline() {
        let c = SharingCurve::new(vec![
            SharingPoint { split_index: 6, shared_fraction: 0.4, accuracy_percent: 80.0, params_trained: 1 },
            SharingPoint { split_index: 0, shared_fraction: 0.0, accuracy_percent: 81.0, params_trained: 9 },
        ])
        .unwrap();
        assert_eq!(c.points()[0].split_index, 0);
        assert!(SharingCurve::new(vec![SharingPoint {
            split_index: 3,
            shared_fraction: 0.1,
            accuracy_percent: 50.0,
            params_trained: 1
        }])
        .is_err());
    }
}
