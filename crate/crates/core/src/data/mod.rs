//! Dataset ingestion, class-set increment plans and single-use training data.

pub mod cifar;
pub mod csv;
pub mod dataset;
pub mod idx;
pub mod plan;
pub mod synth;

pub use self::csv::{export_csv, load_csv, CsvSchema};
pub use cifar::load_cifar;
pub use dataset::{LabeledDataset, Sample, Split};
pub use idx::load_idx;
pub use plan::{split_by_classes, AccessRecord, IncrementPlan, IncrementStore, TrainHandle};
