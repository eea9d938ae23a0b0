use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use esr_core::classifier::{build_model, ModelConfig, TrainedModel};
use serde_json::Value;

fn esr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esr")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), String::from_utf8_lossy(&o.stderr));
}

/// A config with `images_per_class` single-image stones per class and view.
fn small_config(dir: &Path, views: &[&str], images_per_class: usize, extra: &str) -> PathBuf {
    let mut text = String::from("schema_version = 1\n");
    text.push_str(extra);
    text.push_str("\n[generator]\nseed = 7\ntip_probability = 0.3\n");
    for view in views {
        for label in ["Ia", "IIb", "IIIb", "Ia+IIb", "Ia+IIIb"] {
            text.push_str(&format!(
                "[[generator.classes]]\nview = \"{view}\"\nlabel = \"{label}\"\nimage_count = {images_per_class}\nunique_stone_count = {images_per_class}\n"
            ));
        }
    }
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn artifacts(run: &Path) -> BTreeMap<String, String> {
    let m: Value = serde_json::from_slice(&std::fs::read(run.join("run_manifest.json")).unwrap()).unwrap();
    serde_json::from_value(m["artifacts"].clone()).unwrap()
}

#[test]
fn synth_prints_the_surface_summary_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = esr(&["synth", "--view", "surface", "--seed", "2021", "--out", path_str(&a)]);
    assert_ok(&first);
    assert!(stdout(&first).starts_with("surface: 347 images / 284 stones"), "{}", stdout(&first));
    assert_ok(&esr(&["synth", "--view", "surface", "--seed", "2021", "--out", path_str(&b)]));
    let corpus = |run: &Path| -> BTreeMap<String, String> {
        artifacts(run).into_iter().filter(|(k, _)| k.starts_with("corpus/")).collect()
    };
    let (ha, hb) = (corpus(&a), corpus(&b));
    assert!(ha.len() > 347 * 3);
    assert_eq!(ha, hb);
    let m: Value = serde_json::from_slice(&std::fs::read(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["stages"][0]["command"], "synth");
    assert_eq!(m["config"]["generator"]["seed"], 2021);
}

#[test]
fn zero_count_spec_writes_an_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "schema_version = 1\n[generator]\nclasses = []\n").unwrap();
    let run = tmp.path().join("run");
    let out = esr(&["synth", "--config", path_str(&cfg), "--out", path_str(&run)]);
    assert_ok(&out);
    let manifest = std::fs::read_to_string(run.join("corpus/manifest.csv")).unwrap();
    assert_eq!(manifest.trim(), "observation_id,stone_id,view,label,image_path");
}

#[test]
fn invalid_input_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let bad = |text: &str| {
        let cfg = tmp.path().join("bad.toml");
        std::fs::write(&cfg, text).unwrap();
        esr(&["synth", "--config", path_str(&cfg), "--out", path_str(&run)]).status.code()
    };
    assert_eq!(bad("schema_version = 99\n"), Some(2));
    assert_eq!(bad("schema_version = 1\n[evaluation]\ntest_fraction = 1.5\n"), Some(2));
    assert_eq!(bad("schema_version = 1\n[train]\nbatch_size = 0\n"), Some(2));
    assert_eq!(bad("schema_version = 1\nno_such_field = true\n"), Some(2));
    assert_eq!(esr(&["synth", "--view", "side", "--out", path_str(&run)]).status.code(), Some(2));
    // No corpus yet.
    assert_eq!(esr(&["train", "--out", path_str(&tmp.path().join("empty"))]).status.code(), Some(2));
    assert_eq!(esr(&["report", "--out", path_str(&tmp.path().join("empty"))]).status.code(), Some(2));
}

#[test]
fn zero_epochs_checkpoint_equals_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), &["surface"], 3, "");
    let run = tmp.path().join("run");
    assert_ok(&esr(&["synth", "--config", path_str(&cfg), "--out", path_str(&run)]));
    assert_ok(&esr(&["train", "--config", path_str(&cfg), "--out", path_str(&run), "--epochs", "0", "--view", "surface"]));
    let saved = TrainedModel::load(&run.join("checkpoints/surface.ckpt")).unwrap();
    assert!(saved.history.is_empty());
    let fresh = build_model(&ModelConfig::default()).unwrap();
    assert_eq!(saved.to_bytes().unwrap(), fresh.to_bytes().unwrap());
    let history = std::fs::read_to_string(run.join("reports/surface_history.csv")).unwrap();
    assert_eq!(history, "epoch,loss,accuracy\n");
}

#[test]
fn desk_training_on_50_images_logs_100_epochs_per_view() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), &["surface", "section"], 5, "");
    let run = tmp.path().join("run");
    let synth = esr(&["synth", "--config", path_str(&cfg), "--out", path_str(&run)]);
    assert_ok(&synth);
    assert!(stdout(&synth).contains("surface: 25 images / 25 stones"));
    assert!(stdout(&synth).contains("section: 25 images / 25 stones"));
    assert_ok(&esr(&["train", "--config", path_str(&cfg), "--out", path_str(&run)]));
    for view in ["surface", "section"] {
        let history = std::fs::read_to_string(run.join(format!("reports/{view}_history.csv"))).unwrap();
        let rows: Vec<&str> = history.lines().skip(1).collect();
        assert_eq!(rows.len(), 100, "{view}");
        assert!(rows[99].starts_with("100,"));
    }
    let a = std::fs::read(run.join("checkpoints/surface.ckpt")).unwrap();
    let b = std::fs::read(run.join("checkpoints/section.ckpt")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn pipeline_composes_from_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let extra = "view = \"surface\"\n[train]\nepochs = 1\n[evaluation]\nn_repeats = 1\ninit_seeds = [1]\n";
    let cfg = small_config(tmp.path(), &["surface"], 4, extra);
    let run = tmp.path().join("run");
    let go = |cmd: &str| {
        let o = esr(&[cmd, "--config", path_str(&cfg), "--out", path_str(&run)]);
        assert_ok(&o);
        stdout(&o)
    };
    go("synth");
    go("train");
    assert!(go("evaluate").contains("surface: 1 folds"));
    let t1 = std::fs::read_to_string(run.join("reports/surface_table1.csv")).unwrap();
    for name in ["accuracy", "AUROC", "sensitivity", "specificity", "PPV", "NPV", "FPR", "FNR"] {
        assert!(t1.lines().next().unwrap().contains(name), "{name}");
    }
    assert_eq!(t1.lines().count(), 4);
    assert_eq!(std::fs::read_to_string(run.join("reports/surface_table2.csv")).unwrap().lines().count(), 7);
    assert!(run.join("reports/surface_confusion.png").is_file());
    assert!(std::fs::read_to_string(run.join("reports/surface_confusion.txt")).unwrap().contains('%'));

    go("explain");
    let hot = std::fs::read_to_string(run.join("reports/surface_hotspots.csv")).unwrap();
    let explained = hot.lines().count() - 1;
    assert!(explained > 0);
    let overlays = |run: &Path| -> BTreeMap<String, String> {
        artifacts(run).into_iter().filter(|(k, _)| k.starts_with("overlays/")).collect()
    };
    let before = overlays(&run);
    assert_eq!(before.len(), explained);
    go("explain");
    assert_eq!(overlays(&run), before);
    let rates = std::fs::read_to_string(run.join("reports/hotspot_rates.csv")).unwrap();
    assert!(rates.contains("surface,true,") || rates.contains("surface,false,"));

    let summary = go("report");
    assert!(summary.contains("== surface (1 folds) =="));
    assert!(summary.contains("at least IIb"));
    assert!(run.join("reports/summary.txt").is_file());

    let m: Value = serde_json::from_slice(&std::fs::read(run.join("run_manifest.json")).unwrap()).unwrap();
    let stages: Vec<&str> = m["stages"].as_array().unwrap().iter().map(|s| s["command"].as_str().unwrap()).collect();
    assert_eq!(stages, ["synth", "train", "evaluate", "explain", "explain", "report"]);
    assert!(m["inputs"].as_object().unwrap().contains_key("corpus/manifest.csv"));

    // Empty subset: still a report, still success.
    let empty_cfg = tmp.path().join("empty.toml");
    let text = std::fs::read_to_string(&cfg).unwrap().replacen("[train]", "[explain]\nmax_images = 0\n[train]", 1);
    std::fs::write(&empty_cfg, text).unwrap();
    let o = esr(&["explain", "--config", path_str(&empty_cfg), "--out", path_str(&run)]);
    assert_ok(&o);
    let hot = std::fs::read_to_string(run.join("reports/surface_hotspots.csv")).unwrap();
    assert_eq!(hot, "observation_id,truth,predicted,correct,location\n");
}
