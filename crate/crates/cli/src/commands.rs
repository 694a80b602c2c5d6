use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use sharenet_core::cost::{
    self, count_network, energy_estimate, mem_access_saving, storage_requirement, time_proxy, CostNetwork,
};
use sharenet_core::data::{IncrementStore, LabeledDataset};
use sharenet_core::fusion::evaluate_fused;
use sharenet_core::graph::{load_model, save_model, IncrementalModel, Provenance, SharingConfig, Topology};
use sharenet_core::train::{
    self, add_increment, select_optimal_sharing, sweep_sharing_threads, Scope, SharingCurve, TrainReport,
};
use sharenet_core::{Error, Result};

use crate::config::{threads, ExperimentConfig};

pub fn default_model_path(cfg: &ExperimentConfig, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| cfg.output_dir.join("model.incn"))
}

fn prepare_output(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(())
}

fn increment_seed(cfg: &ExperimentConfig, ordinal: usize) -> u64 {
    cfg.seed_for(&format!("increment-{ordinal}"))
}

/// Appends this command's consumptions to the run-wide access log.
fn log_access(cfg: &ExperimentConfig, command: &str, store: &IncrementStore) -> Result<()> {
    let path = cfg.output_dir.join("access_log.csv");
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
    if fresh {
        writeln!(f, "command,ordinal,samples")?;
    }
    for r in store.access_log() {
        writeln!(f, "{command},{},{}", r.ordinal, r.samples)?;
    }
    Ok(())
}

fn write_report(path: &Path, report: &TrainReport) -> Result<()> {
    let mut out = String::from("epoch,loss,test_accuracy_percent\n");
    for (i, (loss, acc)) in report.epoch_loss.iter().zip(&report.epoch_accuracy).enumerate() {
        out.push_str(&format!("{},{loss},{acc}\n", i + 1));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn open_store(cfg: &ExperimentConfig, model: &IncrementalModel) -> Result<IncrementStore> {
    let mut store = cfg.store()?;
    store.restore_consumed(model.consumed_increments())?;
    Ok(store)
}

fn print_hashes(model: &IncrementalModel) {
    println!("trunk_hash {}", model.trunk_hash());
    for (i, h) in model.branch_hashes().iter().enumerate() {
        println!("branch_hash {i} {h}");
    }
    println!("model_hash {}", model.model_hash());
}

pub fn train_base(cfg: &ExperimentConfig, model_path: &Path) -> Result<()> {
    prepare_output(cfg)?;
    let topo = cfg.topology()?;
    let mut store = cfg.store()?;
    let classes = store.plan().classes(0)?.to_vec();
    let handle = store.consume_increment(0)?;
    let test = store.test(0)?.clone();
    let hp = cfg.hyperparams(cfg.seed_for("train-base"));
    let (mut model, report) = train::train_base(&topo, &classes, &handle.into_dataset(), Some(&test), &hp)?;
    model.mark_consumed(0)?;
    if let Some(split) = cfg.sharing.split {
        model.set_sharing(SharingConfig::new(&topo, split)?)?;
    }
    save_model(&model, model_path)?;
    write_report(&cfg.output_dir.join("base_report.csv"), &report)?;
    log_access(cfg, "train-base", &store)?;
    println!("base classes {classes:?}");
    println!("base accuracy {:.2}%", report.final_accuracy);
    print_hashes(&model);
    Ok(())
}

fn proxy_seconds(topo: &Topology, split: usize, cfg: &ExperimentConfig) -> Result<f64> {
    let net = CostNetwork::from_topology("configured", topo)?;
    let conventions = cost::Conventions {
        batch_size: cfg.train.batch_size as u64,
        ..cfg.cost.conventions
    };
    let report = count_network(&net, split, &conventions)?;
    Ok(time_proxy(&report, cfg.cost.throughput, cfg.cost.bandwidth)?.with_sharing)
}

fn write_curve(path: &Path, curve: &SharingCurve, selected: &SharingConfig, topo: &Topology, cfg: &ExperimentConfig) -> Result<()> {
    let mut out = String::from("shared_fraction,accuracy_percent,params_trained,seconds_per_iter,selected\n");
    for p in curve.points() {
        out.push_str(&format!(
            "{},{},{},{:e},{}\n",
            p.shared_fraction,
            p.accuracy_percent,
            p.params_trained,
            proxy_seconds(topo, p.split_index, cfg)?,
            u8::from(p.split_index == selected.split_index)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Trains the next increment once per candidate split, keeps the branch at
/// the selected split and stores the selection in the model.
pub fn sweep(cfg: &ExperimentConfig, model_path: &Path) -> Result<()> {
    prepare_output(cfg)?;
    let mut model = load_model(model_path)?;
    if !model.branches().is_empty() {
        return Err(Error::Config("the model already has branches; sweep runs on the first new increment".into()));
    }
    let topo = model.topology().clone();
    let candidates = cfg
        .sharing
        .candidates
        .clone()
        .unwrap_or_else(|| topo.split_candidates().to_vec());
    let mut store = open_store(cfg, &model)?;
    let ordinal = model.consumed_increments().len();
    let handle = store.consume_increment(ordinal)?;
    let test = store.test(ordinal)?;
    let hp = cfg.branch_hyperparams(increment_seed(cfg, ordinal));
    let result = sweep_sharing_threads(&model, &handle.into_dataset(), test, &candidates, &hp, threads()?);
    log_access(cfg, "sweep", &store)?;
    let result = result?;
    let selected = select_optimal_sharing(&result.curve, cfg.sharing.tolerance_points)?;
    let baseline = result.curve.baseline_accuracy();
    write_curve(&cfg.output_dir.join("sharing_curve.csv"), &result.curve, &selected, &topo, cfg)?;
    let entry = result.into_entry(&selected).expect("selection comes from the curve");
    write_report(&cfg.output_dir.join(format!("increment_{ordinal}_report.csv")), &entry.report)?;
    model.set_sharing(selected)?;
    model.attach_branch(
        entry.branch,
        Provenance {
            increment: ordinal,
            split: selected.split_index,
            shared_fraction: selected.shared_fraction,
            seed: hp.seed,
        },
    )?;
    model.mark_consumed(ordinal)?;
    save_model(&model, model_path)?;
    println!(
        "selected split {} shared_fraction {:.4} accuracy {:.2}% (baseline {:.2}%, tolerance {})",
        selected.split_index,
        selected.shared_fraction,
        entry.report.final_accuracy,
        baseline,
        cfg.sharing.tolerance_points
    );
    print_hashes(&model);
    Ok(())
}

pub fn add(cfg: &ExperimentConfig, model_path: &Path, increment: usize) -> Result<()> {
    prepare_output(cfg)?;
    let mut model = load_model(model_path)?;
    if model.selected().is_none() {
        let split = cfg.sharing.split.ok_or_else(|| {
            Error::Config("no sharing configuration: run `sweep` first or set sharing.split".into())
        })?;
        let config = SharingConfig::new(model.topology(), split)?;
        model.set_sharing(config)?;
    }
    let mut store = open_store(cfg, &model)?;
    let handle = store.consume_increment(increment)?;
    let test = store.test(increment)?.clone();
    let trunk_before = model.trunk_hash();
    let branches_before = model.branch_hashes();
    let hp = cfg.branch_hyperparams(increment_seed(cfg, increment));
    let report = add_increment(&mut model, handle, Some(&test), cfg.sharing.growth, &hp);
    log_access(cfg, "add", &store)?;
    let report = report?;
    let branches_after = model.branch_hashes();
    if model.trunk_hash() != trunk_before || branches_after[..branches_before.len()] != branches_before[..] {
        return Err(Error::Numeric("an existing branch changed while adding an increment".into()));
    }
    save_model(&model, model_path)?;
    write_report(&cfg.output_dir.join(format!("increment_{increment}_report.csv")), &report)?;
    println!("increment {increment} accuracy {:.2}%", report.final_accuracy);
    println!("trunk_hash {trunk_before} unchanged");
    for (i, h) in branches_before.iter().enumerate() {
        println!("branch_hash {i} {h} unchanged");
    }
    println!("branch_hash {} {} new", branches_before.len(), branches_after.last().expect("just attached"));
    println!("model_hash {}", model.model_hash());
    Ok(())
}

fn scope_name(scope: Scope) -> String {
    match scope {
        Scope::Updated => "updated".into(),
        Scope::Branch(k) => format!("branch{k}"),
    }
}

pub fn eval(cfg: &ExperimentConfig, model_path: &Path, scope: &str) -> Result<()> {
    let scope: Scope = scope.parse()?;
    prepare_output(cfg)?;
    let model = load_model(model_path)?;
    let store = cfg.store()?;
    let seen = model.consumed_increments().len();
    if seen == 0 {
        return Err(Error::Config("the model has not learned any increment".into()));
    }
    let test = store.test_through(seen - 1)?;
    let (accuracy, routing, total) = match scope {
        Scope::Updated => {
            let e = evaluate_fused(&model, &test)?;
            (e.accuracy_percent, e.routing, e.total)
        }
        Scope::Branch(k) => {
            let classes = model.branch(k)?.class_map.clone();
            let test: LabeledDataset = test.restrict(&classes)?;
            let acc = train::evaluate(&model, &test, scope)?;
            let mut routing = vec![0; model.branch_count()];
            routing[k] = test.len();
            (acc, routing, test.len())
        }
    };
    let mut out = String::from("branch,classes,samples\n");
    for (i, (b, n)) in model.all_branches().zip(&routing).enumerate() {
        let classes: Vec<String> = b.class_map.iter().map(u32::to_string).collect();
        out.push_str(&format!("{i},{},{n}\n", classes.join(" ")));
    }
    std::fs::write(cfg.output_dir.join(format!("eval_{}.csv", scope_name(scope))), out)?;
    println!("scope {} samples {total} accuracy {accuracy:.4}%", scope_name(scope));
    Ok(())
}

/// Reference values reported for the built-in encodings, as
/// (energy ratio, time ratio range, storage reduction range, memory saving range).
fn reference(network: &str) -> Option<(&'static str, &'static str, &'static str, &'static str)> {
    match network {
        "resnet101-cifar" => Some(("1.89", "2.3-2.6", "66-99%", "32-49%")),
        "resnet34-imagenet" => Some(("1.61", "-", "-", "-")),
        _ => None,
    }
}

pub fn cost(cfg: &ExperimentConfig, network: Option<&str>, sharing: Option<f64>) -> Result<()> {
    prepare_output(cfg)?;
    let name = network.unwrap_or(&cfg.cost.network);
    let net = if name == "topology" {
        CostNetwork::from_topology("configured", &cfg.topology()?)?
    } else {
        let default_classes = if name.starts_with("resnet34") { 1000 } else { 100 };
        cost::builtin(name, cfg.cost.classes.unwrap_or(default_classes))?
    };
    let fraction = sharing.or(cfg.cost.sharing).unwrap_or(0.0);
    let split = net.split_near(fraction)?;
    let conv = cfg.cost.conventions;
    let report = count_network(&net, split, &conv)?;
    let energy = energy_estimate(&report, &cfg.cost.energy)?;
    let time = time_proxy(&report, cfg.cost.throughput, cfg.cost.bandwidth)?;
    let storage = storage_requirement(&net, split, 1, &cfg.cost.energy)?;
    let saving = mem_access_saving(&report);
    let csv = cfg.output_dir.join("cost.csv");
    report.write_csv(std::fs::File::create(&csv)?)?;
    let t = &cfg.cost.energy;
    println!("network {} split {split} shared_fraction {:.4} (requested {fraction})", net.name, report.shared_fraction);
    println!(
        "conventions: backward = input-grad + weight-grad passes, first trained layer without input-grad, \
         update {} MAC/param, batch norm {} MAC/element, batch {}, energy mac:read:write = {}:{}:{}",
        conv.update_macs_per_param, conv.bn_macs_per_element, conv.batch_size, t.e_mac, t.e_read, t.e_write
    );
    let refs = reference(&net.name);
    let r = |i: usize| match refs.map(|v| [v.0, v.1, v.2, v.3][i]) {
        Some(v) if v != "-" => format!("  reference {v}"),
        _ => String::new(),
    };
    println!("energy_ratio {:.4}{}", energy.ratio, r(0));
    println!("mac_ratio {:.4}", report.mac_ratio());
    println!("time_ratio {:.4}{}", time.ratio, r(1));
    println!("storage_reduction {:.2}%{}", storage.reduction_percent, r(2));
    println!("mem_access_saving {:.2}%{}", saving, r(3));
    println!("csv {}", csv.display());
    Ok(())
}
