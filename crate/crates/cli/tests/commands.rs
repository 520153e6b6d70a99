use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pinode::io::{plot_from_csv, read_dataset, read_model};
use pinode::RunConfig;
use serde_json::Value;

const SMALL: &str = r#"
seed = 4

[generate]
duration = 6.0

[network]
layer_sizes = [5, 8, 8, 1]

[training]
epochs = 2
batch_size = 32

[evaluation]
window = 10
count = 20
rollout_steps = 50
histogram_bins = 5

[paths]
dataset = "data.csv"
model = "model.json"
reports = "reports"
"#;

fn workdir(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn pinode(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinode"))
        .current_dir(dir)
        .arg("--config")
        .arg("run.toml")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pinode(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn without_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn generate_is_seeded_and_prints_stats() {
    let dir = workdir(SMALL);
    let text = ok(dir.path(), &["generate", "--out", "a.csv"]);
    assert!(text.contains("Samples      300"), "{text}");
    assert!(text.contains("Sample rate  50 Hz"));
    ok(dir.path(), &["generate", "--out", "b.csv"]);
    ok(dir.path(), &["--seed", "5", "generate", "--out", "c.csv"]);
    let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
    assert!(read("a.csv").contains("# seed: 4\n"));
    assert!(read("c.csv").contains("# seed: 5\n"));
    let d = read_dataset(&dir.path().join("a.csv")).unwrap();
    assert_eq!(d.len(), 300);
    assert_eq!(d.provenance(), "synthetic rig");
}

#[test]
fn zero_duration_exits_with_2() {
    let dir = workdir(SMALL);
    let out = pinode(dir.path(), &["generate", "--duration", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_with_2() {
    let dir = workdir("[training]\nepoch = 3\n");
    let out = pinode(dir.path(), &["stats"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn missing_dataset_exits_with_2() {
    let dir = workdir(SMALL);
    let out = pinode(dir.path(), &["train", "--dataset", "nowhere.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
}

#[test]
fn empty_dataset_is_a_parse_error() {
    let dir = workdir(SMALL);
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = pinode(dir.path(), &["fit-baseline", "--dataset", "empty.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epochs_persist_the_initial_network() {
    let dir = workdir(SMALL);
    ok(dir.path(), &["generate"]);
    ok(dir.path(), &["train", "--epochs", "0"]);
    let saved = read_model(&dir.path().join("model.json")).unwrap();
    let mut cfg = RunConfig::parse(SMALL).unwrap();
    cfg.training.epochs = 0;
    assert_eq!(saved, pinode::commands::initial_network(&cfg).unwrap());
    let report = json(&dir.path().join("reports/train_report.json"));
    assert_eq!(report["loss_history"], serde_json::json!([]));
    assert_eq!(report["config"]["training"]["epochs"], 0);
}

#[test]
fn train_report_records_config_and_history() {
    let dir = workdir(SMALL);
    ok(dir.path(), &["generate"]);
    ok(dir.path(), &["train"]);
    let report = json(&dir.path().join("reports/train_report.json"));
    assert_eq!(report["loss_history"].as_array().unwrap().len(), 2);
    assert_eq!(report["parameters"], 5 * 8 + 8 + 8 * 8 + 8 + 8 + 1);
    assert_eq!(report["config"]["seed"], 4);
    assert!(report["timing"]["wall_clock_seconds"].is_f64());
}

#[test]
fn baseline_recovers_pure_ode_frictions() {
    let dir = workdir("[generate]\nduration = 60.0\ninitial_state = [0.0, 2.94, 0.0, 0.0]\namplitude = 2.0\n");
    ok(dir.path(), &["simulate", "--out", "ode.csv"]);
    ok(dir.path(), &["fit-baseline", "--dataset", "ode.csv", "--out", "fit.json"]);
    let fit = json(&dir.path().join("fit.json"));
    let (mu_c, mu_p) = (fit["mu_c"].as_f64().unwrap(), fit["mu_p"].as_f64().unwrap());
    assert!((mu_c - 0.0408).abs() / 0.0408 < 0.01, "{mu_c}");
    assert!((mu_p - 0.0020).abs() / 0.0020 < 0.01, "{mu_p}");
}

#[test]
fn baseline_on_frictionless_data_is_near_zero() {
    let dir = workdir("[physics]\nmu_c = 0.0\nmu_p = 0.0\n[generate]\nduration = 30.0\ninitial_state = [0.0, 2.94, 0.0, 0.0]\n");
    ok(dir.path(), &["simulate", "--out", "ode.csv"]);
    ok(dir.path(), &["fit-baseline", "--dataset", "ode.csv", "--out", "fit.json"]);
    let fit = json(&dir.path().join("fit.json"));
    assert!(fit["mu_c"].as_f64().unwrap() < 1e-4);
    assert!(fit["mu_p"].as_f64().unwrap() < 1e-6);
}

#[test]
fn evaluate_on_exact_data_and_determinism() {
    let dir = workdir(SMALL);
    ok(dir.path(), &["simulate", "--out", "ode.csv"]);
    ok(dir.path(), &["train", "--dataset", "ode.csv"]);
    let table = ok(dir.path(), &["evaluate", "--dataset", "ode.csv", "--out", "e1"]);
    assert!(table.contains("pure ODE") && table.contains("PINODE"), "{table}");
    ok(dir.path(), &["evaluate", "--dataset", "ode.csv", "--out", "e2"]);
    let a = json(&dir.path().join("e1/evaluate_report.json"));
    let b = json(&dir.path().join("e2/evaluate_report.json"));
    // the two reports differ only in plot paths and timing
    assert_eq!(a["models"], b["models"]);
    assert_eq!(a["protocol"], b["protocol"]);
    // data from the pure-ODE model itself: the fitted baseline is exact
    let means = a["models"]["pure-ode"]["mean"].as_array().unwrap();
    assert!(means.iter().all(|m| m.as_f64().unwrap() < 1e-6), "{means:?}");
    assert_eq!(
        fs::read_to_string(dir.path().join("e1/window_errors.csv")).unwrap(),
        fs::read_to_string(dir.path().join("e2/window_errors.csv")).unwrap()
    );
}

#[test]
fn evaluate_plot_data_matches_report() {
    let dir = workdir(SMALL);
    ok(dir.path(), &["generate"]);
    ok(dir.path(), &["train"]);
    ok(dir.path(), &["evaluate"]);
    let report = json(&dir.path().join("reports/evaluate_report.json"));
    let errors = plot_from_csv(&fs::read_to_string(dir.path().join("reports/window_errors.csv")).unwrap()).unwrap();
    for (c, name) in ["x", "phi", "x_dot", "phi_dot"].iter().enumerate() {
        for model in ["pure-ode", "pinode"] {
            let fit = errors.series(&format!("{model}/{name}/fit"));
            assert_eq!(fit[0], report["models"][model]["mean"][c].as_f64().unwrap());
            assert_eq!(fit[1], report["models"][model]["std"][c].as_f64().unwrap());
            assert_eq!(errors.series(&format!("{model}/{name}/error")).len(), 20);
        }
    }
    let rollout = plot_from_csv(&fs::read_to_string(dir.path().join("reports/rollout.csv")).unwrap()).unwrap();
    for series in ["truth/x", "pure-ode/x", "pinode/phi_dot"] {
        assert_eq!(rollout.series(series).len(), 51);
    }
}

#[test]
fn plot_data_as_json() {
    let dir = workdir(&SMALL.replace("histogram_bins = 5\n", "histogram_bins = 5\nplot_format = \"json\"\n"));
    ok(dir.path(), &["generate"]);
    ok(dir.path(), &["train", "--epochs", "0"]);
    ok(dir.path(), &["evaluate"]);
    let v = json(&dir.path().join("reports/rollout.json"));
    assert_eq!(v["metadata"]["kind"], "rollout");
    assert!(v["rows"].as_array().unwrap().len() > 0);
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let dir = workdir(SMALL);
    let text = ok(dir.path(), &["gradcheck", "--batches", "2"]);
    assert!(text.contains("\"passed\": true"), "{text}");
    let out = pinode(dir.path(), &["gradcheck", "--batches", "2", "--corrupt", "17"]);
    assert_eq!(out.status.code(), Some(3));
    let report = json(&dir.path().join("reports/gradcheck_report.json"));
    assert_eq!(report["worst_index"], 17);
    assert_eq!(report["passed"], false);
}

#[test]
fn help_documents_precedence() {
    let out = Command::new(env!("CARGO_BIN_EXE_pinode")).arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("A flag wins over the file"));
    for cmd in ["generate", "stats", "train", "fit-baseline", "evaluate", "simulate", "gradcheck"] {
        assert!(text.contains(cmd), "{cmd}");
    }
    assert!(!text.contains("corrupt"));
}

#[test]
fn stats_reads_a_dataset() {
    let dir = workdir(SMALL);
    ok(dir.path(), &["generate"]);
    let text = ok(dir.path(), &["stats", "data.csv", "--out", "stats.txt"]);
    assert!(text.contains("x (m)") && text.contains("u (N)"));
    assert_eq!(fs::read_to_string(dir.path().join("stats.txt")).unwrap(), text);
}

#[test]
fn evaluate_without_timing_is_reproducible() {
    let run = || {
        let dir = workdir(SMALL);
        ok(dir.path(), &["generate"]);
        ok(dir.path(), &["train"]);
        ok(dir.path(), &["evaluate"]);
        without_timing(json(&dir.path().join("reports/evaluate_report.json")))
    };
    assert_eq!(run(), run());
}
