//! Experiment configuration: one TOML file, paths relative to its directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sharenet_core::cost::{Conventions, EnergyTable};
use sharenet_core::data::{self, synth, CsvSchema, IncrementPlan, IncrementStore, LabeledDataset, Split};
use sharenet_core::graph::Topology;
use sharenet_core::seed::derive_seed;
use sharenet_core::train::{BranchGrowth, Hyperparams};
use sharenet_core::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub topology: TopologyConfig,
    pub plan: PlanConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sharing: SharingSection,
    #[serde(default)]
    pub cost: CostConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Procedural handwritten-style digits and letters, 1x28x28.
    Glyphs { train_per_class: usize, test_per_class: usize },
    /// Procedural ten-class coloured scenes, 3x16x16.
    Scenes { train_per_class: usize, test_per_class: usize },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        label_column: usize,
        shape: Vec<usize>,
        scale: Option<f64>,
    },
    Cifar {
        train_batches: Vec<PathBuf>,
        test_batches: Vec<PathBuf>,
        #[serde(default = "default_downsample")]
        downsample: usize,
    },
}

fn default_downsample() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub input: Vec<usize>,
    pub layers: Vec<String>,
    pub split_candidates: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    /// Explicit class sets; the first is the base.
    pub sets: Option<Vec<Vec<u32>>>,
    /// Set sizes drawn at random from `classes`.
    pub sizes: Option<Vec<usize>>,
    pub classes: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle: bool,
    /// Epochs for each branch; defaults to `epochs`.
    pub branch_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        Self {
            learning_rate: hp.learning_rate,
            momentum: hp.momentum,
            batch_size: hp.batch_size,
            epochs: hp.epochs,
            shuffle: hp.shuffle,
            branch_epochs: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharingSection {
    pub candidates: Option<Vec<usize>>,
    pub tolerance_points: f64,
    /// Fixed split used when no sweep is run.
    pub split: Option<usize>,
    pub growth: BranchGrowth,
}

impl Default for SharingSection {
    fn default() -> Self {
        Self {
            candidates: None,
            tolerance_points: 1.0,
            split: None,
            growth: BranchGrowth::Clone,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    /// `topology` for the configured network, or a built-in encoding.
    pub network: String,
    pub classes: Option<usize>,
    pub sharing: Option<f64>,
    pub energy: EnergyTable,
    pub conventions: Conventions,
    /// MACs per second.
    pub throughput: f64,
    /// Memory accesses per second.
    pub bandwidth: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            network: "topology".into(),
            classes: None,
            sharing: None,
            energy: EnergyTable::default(),
            conventions: Conventions::default(),
            throughput: 1e11,
            bandwidth: 1e11,
        }
    }
}

impl ExperimentConfig {
    /// Reads, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        if let Ok(dir) = std::env::var("SHARENET_OUTPUT_DIR") {
            cfg.output_dir = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        match &mut self.data {
            DataConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DataConfig::Csv { train, test, .. } => {
                fix(train);
                fix(test);
            }
            DataConfig::Cifar {
                train_batches,
                test_batches,
                ..
            } => train_batches.iter_mut().chain(test_batches.iter_mut()).for_each(fix),
            DataConfig::Glyphs { .. } | DataConfig::Scenes { .. } => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |field: &str, p: &Path| -> Result<()> {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("data.{field}: no such file {}", p.display())))
            }
        };
        match &self.data {
            DataConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                missing("train_images", train_images)?;
                missing("train_labels", train_labels)?;
                missing("test_images", test_images)?;
                missing("test_labels", test_labels)?;
            }
            DataConfig::Csv { train, test, .. } => {
                missing("train", train)?;
                missing("test", test)?;
            }
            DataConfig::Cifar {
                train_batches,
                test_batches,
                ..
            } => {
                if train_batches.is_empty() || test_batches.is_empty() {
                    return Err(Error::Config("data.train_batches and data.test_batches need a file each".into()));
                }
                for p in train_batches {
                    missing("train_batches", p)?;
                }
                for p in test_batches {
                    missing("test_batches", p)?;
                }
            }
            DataConfig::Glyphs {
                train_per_class,
                test_per_class,
            }
            | DataConfig::Scenes {
                train_per_class,
                test_per_class,
            } => {
                if *train_per_class == 0 || *test_per_class == 0 {
                    return Err(Error::Config("data.train_per_class and data.test_per_class must be positive".into()));
                }
            }
        }
        let topo = self.topology()?;
        self.hyperparams(0).validate().map_err(as_config)?;
        if self.train.epochs == 0 || self.train.branch_epochs == Some(0) {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if !(self.sharing.tolerance_points >= 0.0) {
            return Err(Error::Config("sharing.tolerance_points must be non-negative".into()));
        }
        if let Some(s) = self.sharing.split {
            if !topo.is_valid_split(s) {
                return Err(Error::Config(format!(
                    "sharing.split {s} is not one of {:?}",
                    topo.split_candidates()
                )));
            }
        }
        if let Some(c) = &self.sharing.candidates {
            if let Some(bad) = c.iter().find(|&&s| s == 0 || !topo.is_valid_split(s)) {
                return Err(Error::Config(format!(
                    "sharing.candidates entry {bad} is not a split candidate of {:?}",
                    topo.split_candidates()
                )));
            }
        }
        match (&self.plan.sets, &self.plan.sizes) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("plan needs exactly one of plan.sets and plan.sizes".into())),
        }
        self.cost.energy.validate()?;
        self.cost.conventions.validate()?;
        if !(self.cost.throughput > 0.0 && self.cost.bandwidth > 0.0) {
            return Err(Error::Config("cost.throughput and cost.bandwidth must be positive".into()));
        }
        std::env::var("SHARENET_THREADS").ok().map(|_| threads()).transpose()?;
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology> {
        let layers: Vec<&str> = self.topology.layers.iter().map(String::as_str).collect();
        let topo = Topology::parse(self.topology.input.clone(), &layers).map_err(as_config)?;
        match &self.topology.split_candidates {
            Some(c) => topo.with_split_candidates(c.clone()).map_err(as_config),
            None => Ok(topo),
        }
    }

    /// Hyperparameters for one component, seeded from the root seed.
    pub fn hyperparams(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed,
            shuffle: self.train.shuffle,
        }
    }

    pub fn branch_hyperparams(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            epochs: self.train.branch_epochs.unwrap_or(self.train.epochs),
            ..self.hyperparams(seed)
        }
    }

    pub fn seed_for(&self, component: &str) -> u64 {
        derive_seed(self.seed, component)
    }

    pub fn load_data(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let seed = self.seed_for("data");
        Ok(match &self.data {
            DataConfig::Glyphs {
                train_per_class,
                test_per_class,
            } => {
                let all: Vec<u32> = (0..synth::GLYPH_CLASSES).collect();
                (
                    synth::glyphs(&all, *train_per_class, Split::Train, seed)?,
                    synth::glyphs(&all, *test_per_class, Split::Test, seed)?,
                )
            }
            DataConfig::Scenes {
                train_per_class,
                test_per_class,
            } => {
                let all: Vec<u32> = (0..synth::SCENE_CLASSES).collect();
                (
                    synth::scenes(&all, *train_per_class, Split::Train, seed)?,
                    synth::scenes(&all, *test_per_class, Split::Test, seed)?,
                )
            }
            DataConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (
                data::load_idx(train_images, train_labels, Split::Train)?,
                data::load_idx(test_images, test_labels, Split::Test)?,
            ),
            DataConfig::Csv {
                train,
                test,
                label_column,
                shape,
                scale,
            } => {
                let mut schema = CsvSchema::new(*label_column, shape.clone());
                if let Some(s) = scale {
                    schema.scale = *s;
                }
                (
                    data::load_csv(train, &schema, Split::Train)?,
                    data::load_csv(test, &schema, Split::Test)?,
                )
            }
            DataConfig::Cifar {
                train_batches,
                test_batches,
                downsample,
            } => {
                let tr: Vec<&Path> = train_batches.iter().map(PathBuf::as_path).collect();
                let te: Vec<&Path> = test_batches.iter().map(PathBuf::as_path).collect();
                (
                    data::load_cifar(&tr, *downsample, Split::Train)?,
                    data::load_cifar(&te, *downsample, Split::Test)?,
                )
            }
        })
    }

    pub fn plan(&self, available: &[u32]) -> Result<IncrementPlan> {
        match (&self.plan.sets, &self.plan.sizes) {
            (Some(sets), _) => IncrementPlan::new(sets.clone()),
            (None, Some(sizes)) => {
                let classes = self.plan.classes.clone().unwrap_or_else(|| available.to_vec());
                IncrementPlan::random(&classes, sizes, self.seed_for("plan"))
            }
            (None, None) => Err(Error::Config("plan needs plan.sets or plan.sizes".into())),
        }
    }

    /// Loads the data and splits it by the plan.
    pub fn store(&self) -> Result<IncrementStore> {
        let (train, test) = self.load_data()?;
        let plan = self.plan(train.class_ids())?;
        data::split_by_classes(&train, &test, plan)
    }
}

/// Worker count from `SHARENET_THREADS`, default 1.
pub fn threads() -> Result<usize> {
    match std::env::var("SHARENET_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("SHARENET_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
