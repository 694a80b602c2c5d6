use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
output_dir = "out"

[data]
source = "glyphs"
train_per_class = 12
test_per_class = 6

[topology]
input = [1, 28, 28]
layers = ["conv 5x5 2 stride 2", "sigmoid", "conv 3x3 2", "sigmoid", "head 2"]

[plan]
sets = [[0, 1], [2, 3], [4, 5]]

[train]
learning_rate = 0.1
epochs = 1
batch_size = 4
"#;

fn sharenet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sharenet"))
        .args(args)
        .current_dir(dir)
        .env_remove("SHARENET_OUTPUT_DIR")
        .env_remove("SHARENET_THREADS")
        .output()
        .unwrap()
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), format!("{TINY}\n{extra}")).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = setup("");
    let p = dir.path();
    assert_eq!(sharenet(p, &[]).status.code(), Some(2));
    assert_eq!(sharenet(p, &["train-base", "--config", "nope.toml"]).status.code(), Some(2));
    let o = sharenet(p, &["cost", "--config", "run.toml", "--sharing", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[0, 1)"), "{}", stderr(&o));
    std::fs::write(p.join("bad.toml"), format!("{TINY}\nlearning_rates = 1")).unwrap();
    let o = sharenet(p, &["train-base", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rates"));
}

#[test]
fn missing_data_file_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TINY.replace(
        "source = \"glyphs\"\ntrain_per_class = 12\ntest_per_class = 6",
        "source = \"idx\"\ntrain_images = \"a\"\ntrain_labels = \"b\"\ntest_images = \"c\"\ntest_labels = \"d\"",
    );
    std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
    let o = sharenet(dir.path(), &["train-base", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.train_images"), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = setup("");
    let o = Command::new(env!("CARGO_BIN_EXE_sharenet"))
        .args(["cost", "--config", "run.toml"])
        .current_dir(dir.path())
        .env("SHARENET_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn model_file_problems_exit_3() {
    let dir = setup("");
    let p = dir.path();
    assert_eq!(sharenet(p, &["sweep", "--config", "run.toml"]).status.code(), Some(3));
    std::fs::write(p.join("junk.incn"), b"not a model").unwrap();
    let o = sharenet(p, &["eval", "--config", "run.toml", "--model", "junk.incn"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn fixed_split_pipeline_and_routing() {
    let dir = setup("[sharing]\nsplit = 2");
    let p = dir.path();
    let o = sharenet(p, &["train-base", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("model_hash"));
    // Increments must arrive in order.
    assert_eq!(sharenet(p, &["add", "--config", "run.toml", "--increment", "2"]).status.code(), Some(3));
    for k in ["1", "2"] {
        let o = sharenet(p, &["add", "--config", "run.toml", "--increment", k]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("unchanged"));
    }
    let o = sharenet(p, &["eval", "--config", "run.toml", "--scope", "updated"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let routing = std::fs::read_to_string(p.join("out/eval_updated.csv")).unwrap();
    let total: usize = routing.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 6 * 6);
    assert_eq!(routing.lines().count(), 4);
    let o = sharenet(p, &["eval", "--config", "run.toml", "--scope", "branch 2"]);
    assert!(stdout(&o).contains("samples 12"), "{}", stdout(&o));
    assert_eq!(sharenet(p, &["eval", "--config", "run.toml", "--scope", "sideways"]).status.code(), Some(2));
    let log = std::fs::read_to_string(p.join("out/access_log.csv")).unwrap();
    assert_eq!(log, "command,ordinal,samples\ntrain-base,0,24\nadd,1,24\nadd,2,24\n");
}

#[test]
fn add_without_a_split_asks_for_a_sweep() {
    let dir = setup("");
    let p = dir.path();
    assert!(sharenet(p, &["train-base", "--config", "run.toml"]).status.success());
    let o = sharenet(p, &["add", "--config", "run.toml", "--increment", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep"));
}

#[test]
fn cost_report_and_output_override() {
    let dir = setup("");
    let p = dir.path();
    let o = Command::new(env!("CARGO_BIN_EXE_sharenet"))
        .args(["cost", "--config", "run.toml", "--network", "resnet101", "--sharing", "0.8"])
        .current_dir(p)
        .env("SHARENET_OUTPUT_DIR", p.join("elsewhere"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for key in ["energy_ratio", "time_ratio", "storage_reduction", "mem_access_saving", "conventions", "reference 1.89"] {
        assert!(text.contains(key), "missing {key}: {text}");
    }
    let csv = std::fs::read_to_string(p.join("elsewhere/cost.csv")).unwrap();
    assert!(csv.starts_with("layer,phase,macs_fwd,macs_bwd,macs_upd,mem_reads,mem_writes,params\n"));
    assert!(csv.lines().last().unwrap().starts_with("total,"));
    assert!(!p.join("out").exists());
}

fn accuracy_line(o: &Output) -> String {
    stdout(o).lines().find(|l| l.contains("accuracy")).unwrap().split("accuracy ").nth(1).unwrap().to_string()
}

#[test]
fn base_rerun_and_single_branch_eval() {
    let a = setup("");
    let b = setup("");
    let hash = |o: &Output| stdout(o).lines().find(|l| l.starts_with("model_hash")).unwrap().to_string();
    let oa = sharenet(a.path(), &["train-base", "--config", "run.toml"]);
    let ob = sharenet(b.path(), &["train-base", "--config", "run.toml"]);
    assert_eq!(hash(&oa), hash(&ob));
    let updated = sharenet(a.path(), &["eval", "--config", "run.toml", "--scope", "updated"]);
    let branch0 = sharenet(a.path(), &["eval", "--config", "run.toml", "--scope", "branch 0"]);
    assert_eq!(accuracy_line(&updated), accuracy_line(&branch0));
}

#[test]
fn sweep_curve_satisfies_the_tolerance_rule() {
    let dir = setup("[sharing]\ntolerance_points = 2.5");
    let p = dir.path();
    assert!(sharenet(p, &["train-base", "--config", "run.toml"]).status.success());
    let o = sharenet(p, &["sweep", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(p.join("out/sharing_curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("shared_fraction,accuracy_percent,params_trained,seconds_per_iter,selected"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[0][0] < w[1][0]));
    assert_eq!(rows[0][0], 0.0);
    let floor = rows[0][1] - 2.5;
    let expected = rows.iter().rposition(|r| r[1] >= floor).unwrap();
    let flagged: Vec<usize> = (0..rows.len()).filter(|&i| rows[i][4] == 1.0).collect();
    assert_eq!(flagged, vec![expected]);
    // The probe increment is consumed by the sweep, so it cannot be added again.
    assert_eq!(sharenet(p, &["add", "--config", "run.toml", "--increment", "1"]).status.code(), Some(3));
    assert!(sharenet(p, &["add", "--config", "run.toml", "--increment", "2"]).status.success());
}

#[test]
fn zero_sharing_costs_nothing_extra() {
    let dir = setup("");
    let o = sharenet(dir.path(), &["cost", "--config", "run.toml", "--sharing", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for line in ["energy_ratio 1.0000", "mac_ratio 1.0000", "time_ratio 1.0000", "storage_reduction 0.00%", "mem_access_saving 0.00%"] {
        assert!(text.contains(line), "missing {line}: {text}");
    }
}

#[test]
fn shipped_configs_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let out = tempfile::tempdir().unwrap();
    let mut n = 0;
    for entry in std::fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = Command::new(env!("CARGO_BIN_EXE_sharenet"))
                .args(["cost", "--config"])
                .arg(&path)
                .env("SHARENET_OUTPUT_DIR", out.path())
                .output()
                .unwrap();
            assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
            n += 1;
        }
    }
    assert!(n >= 3);
}
