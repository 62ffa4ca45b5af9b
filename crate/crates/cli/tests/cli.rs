use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fedaot");

const SMALL: &str = r#"
num_clients = 6
rounds = 5
metaval_size = 20
aggregator = "fedaot"

[dataset]
kind = "synthetic"
num_classes = 4
samples_per_class = 50
feature_dim = 5

[model]
hidden_layers = [8]

[attack]
kind = "label_flip"
fraction = 0.5

[local]
lr = 0.01

[meta]
eta = 1.0
"#;

fn fedaot(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

#[test]
fn run_writes_bundle_with_contracted_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("runs");
    let dir = run_dir(&fedaot(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert!(dir.starts_with(&out));
    let name = dir.file_name().unwrap().to_str().unwrap();
    assert_eq!(name.split('-').next().unwrap().len(), 12);

    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "round,accuracy,macro_f1,meta_loss");
    assert_eq!(lines.len(), 1 + 5);

    let k = fs::read_to_string(dir.join("k_history.csv")).unwrap();
    let lines: Vec<&str> = k.lines().collect();
    assert_eq!(lines[0], "round,client,k,malicious");
    assert_eq!(lines.len(), 1 + 5 * 6);

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["num_clients"], 6);
    assert_eq!(summary["attackers"].as_array().unwrap().len(), 3);
}

#[test]
fn reruns_and_thread_counts_give_identical_csv_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("runs");
    let out = out.to_str().unwrap();
    let a = run_dir(&fedaot(&["run", "--config", cfg, "--out", out]));
    let b = run_dir(&fedaot(&["run", "--config", cfg, "--out", out]));
    let c = run_dir(&fedaot(&["--threads", "3", "run", "--config", cfg, "--out", out]));
    assert_ne!(a, b);
    for file in ["metrics.csv", "k_history.csv"] {
        let first = fs::read(a.join(file)).unwrap();
        assert_eq!(first, fs::read(b.join(file)).unwrap(), "{file}");
        assert_eq!(first, fs::read(c.join(file)).unwrap(), "{file} with --threads 3");
    }
}

#[test]
fn seed_override_changes_hash_and_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("runs");
    let out = out.to_str().unwrap();
    let a = run_dir(&fedaot(&["run", "--config", cfg, "--out", out]));
    let b = run_dir(&fedaot(&["run", "--config", cfg, "--out", out, "--seed", "7"]));
    let hash = |p: &Path| p.file_name().unwrap().to_str().unwrap()[..12].to_string();
    assert_ne!(hash(&a), hash(&b));
    assert_ne!(fs::read(a.join("k_history.csv")).unwrap(), fs::read(b.join("k_history.csv")).unwrap());
}

#[test]
fn sweep_table_has_one_row_per_fraction_and_aggregator() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("rounds = 5", "rounds = 1"));
    let out = tmp.path().join("sweeps");
    let dir = run_dir(&fedaot(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--fractions",
        "0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
        "--aggregators",
        "fedavg,fedaot",
    ]));
    let table = fs::read_to_string(dir.join("accuracy_vs_attack.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "fraction,aggregator,final_accuracy,final_f1,status");
    assert_eq!(lines.len(), 1 + 8 * 2);
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")));
    assert!(dir.join("fedaot/A90/metrics.csv").exists());

    let plotted = fedaot(&["plot", dir.to_str().unwrap()]);
    assert!(plotted.status.success());
    let svg = fs::read_to_string(dir.join("accuracy_vs_attack.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn failed_sweep_entry_is_recorded_and_exit_is_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("rounds = 5", "rounds = 1"));
    let out = tmp.path().join("sweeps");
    let res = fedaot(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--fractions",
        "0.5",
        "--aggregators",
        "fedavg,krum:2",
    ]);
    assert!(!res.status.success());
    let dir = fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
    let table = fs::read_to_string(dir.join("accuracy_vs_attack.csv")).unwrap();
    assert!(table.contains("0.5,fedavg,") && table.contains(",ok"));
    assert!(table.contains("0.5,krum:2,,,failed"), "{table}");
}

#[test]
fn plot_run_dir_has_one_bar_per_client() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("runs");
    let dir = run_dir(&fedaot(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert!(fedaot(&["plot", dir.to_str().unwrap()]).status.success());
    let svg = fs::read_to_string(dir.join("k_bars.svg")).unwrap();
    assert_eq!(svg.matches("<title>client").count(), 6);
}

#[test]
fn plot_empty_dir_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let res = fedaot(&["plot", tmp.path().to_str().unwrap()]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("metrics.csv") && err.contains("accuracy_vs_attack.csv"), "{err}");
}

#[test]
fn validate_reports_key_and_range() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("fraction = 0.5", "fraction = 1.5"));
    let res = fedaot(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("attack.fraction = 1.5") && err.contains("[0, 1]"), "{err}");

    let ok = write_config(tmp.path(), SMALL);
    assert!(fedaot(&["validate", "--config", ok.to_str().unwrap()]).status.success());
}

#[test]
fn missing_config_file_is_reported() {
    let res = fedaot(&["validate", "--config", "/nonexistent/exp.toml"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("/nonexistent/exp.toml"));
}

#[test]
fn defaults_prints_the_reference() {
    let res = fedaot(&["defaults"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert_eq!(text, fedaot_cli::config::DEFAULTS_REFERENCE);
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config-reference.toml");
    assert_eq!(text, fs::read_to_string(golden).unwrap());
}

#[test]
fn relative_dataset_paths_resolve_against_config_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    let ds = fedaot_core::data::synth_blobs(3, 20, 4, 1);
    fedaot_core::data::write_idx(&ds, (2, 2), &data.join("img.gz"), &data.join("lab.gz")).unwrap();
    let cfg = write_config(
        tmp.path(),
        "num_clients = 3\nrounds = 1\nmetaval_size = 6\naggregator = \"fedavg\"\n[dataset]\nkind = \"idx\"\ntrain_images = \"data/img.gz\"\ntrain_labels = \"data/lab.gz\"\n[model]\nhidden_layers = [4]\n",
    );
    let out = tmp.path().join("runs");
    let elsewhere = tempfile::tempdir().unwrap();
    let res = Command::new(BIN)
        .current_dir(elsewhere.path())
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    run_dir(&res);
}
