use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rolecirc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rolecirc"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ROLECIRC_CONFIG_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = rolecirc(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

const TINY: &[&str] = &[
    "--layers",
    "1",
    "--heads",
    "2",
    "--d-model",
    "8",
    "--docs",
    "200",
];

#[test]
fn gen_data_writes_validated_pairs_and_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(
        &[
            "gen-data", "--roles", "location", "--n", "100", "--seed", "7", "-o", "d",
        ],
        tmp.path(),
    );
    let d = tmp.path().join("d");
    let lines = fs::read_to_string(d.join("pairs.jsonl")).unwrap();
    let n = lines.lines().count();
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(n == 100 || stderr.contains("patience"), "{n} pairs");
    let stats = fs::read_to_string(d.join("stats.csv")).unwrap();
    assert!(stats.starts_with("role,pairs,parity_rate,leakage_rate"));
    assert!(stats.contains(&format!("location,{n},1,0,")));
    assert!(!d.join("paraphrase.jsonl").exists());
    let m = manifest(&d);
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["n"], 100);
}

#[test]
fn paraphrase_flag_adds_control_file() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        &[
            "gen-data",
            "--roles",
            "location",
            "--n",
            "20",
            "--paraphrase",
            "-o",
            "d",
        ],
        tmp.path(),
    );
    let text = fs::read_to_string(tmp.path().join("d/paraphrase.jsonl")).unwrap();
    assert!(text.lines().count() > 0);
    assert_eq!(
        manifest(&tmp.path().join("d"))["config"]["paraphrase"],
        true
    );
}

#[test]
fn missing_lexicon_exits_2_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("cfg")).unwrap();
    let out = rolecirc(
        &[
            "gen-data",
            "--config-dir",
            "cfg",
            "--roles",
            "location",
            "-o",
            "d",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lexicons.toml"));
}

#[test]
fn config_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rolecirc"))
        .args(["gen-data", "--roles", "location", "-o", "d"])
        .current_dir(tmp.path())
        .env("ROLECIRC_CONFIG_DIR", tmp.path().join("absent"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent"));
}

#[test]
fn bad_flags_and_settings_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_value = rolecirc(
        &["render", "g.json", "--quantile", "x", "-o", "r"],
        tmp.path(),
    );
    assert_eq!(bad_value.status.code(), Some(2));
    let missing = rolecirc(&["render", "g.json", "-o", "r"], tmp.path());
    assert_eq!(missing.status.code(), Some(2));
    fs::write(tmp.path().join("s.toml"), "[train]\nlayerz = 2\n").unwrap();
    let unknown = rolecirc(&["--config", "s.toml", "train", "-o", "t"], tmp.path());
    assert_eq!(unknown.status.code(), Some(2));
    let enum_value = rolecirc(&["train", "--optimizer", "rmsprop", "-o", "t"], tmp.path());
    assert_eq!(enum_value.status.code(), Some(2));
}

#[test]
fn zero_steps_gives_one_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--steps", "0", "-o", "c"];
    args.extend_from_slice(TINY);
    ok(&args, tmp.path());
    let names: Vec<String> = dir_files(&tmp.path().join("c"))
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    assert_eq!(names, ["ckpt_00000000.json", "manifest.json"]);
}

#[test]
fn default_grid_and_manifest_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["--seed", "3", "train", "--steps", "40", "-o", "a"];
    args.extend_from_slice(TINY);
    ok(&args, tmp.path());
    let a = tmp.path().join("a");
    let m = manifest(&a);
    assert_eq!(
        m["config"]["checkpoints"],
        serde_json::json!([0, 8, 32, 40])
    );
    assert_eq!(m["config"]["d_mlp"], 32);

    ok(
        &["--config", "a/manifest.json", "train", "-o", "b"],
        tmp.path(),
    );
    assert_eq!(dir_files(&a), dir_files(&tmp.path().join("b")));

    fs::write(
        tmp.path().join("s.toml"),
        "seed = 3\n[train]\nsteps = 40\nlayers = 1\nheads = 2\nd_model = 8\ndocs = 200\n",
    )
    .unwrap();
    ok(&["--config", "s.toml", "train", "-o", "c"], tmp.path());
    assert_eq!(dir_files(&a), dir_files(&tmp.path().join("c")));

    ok(
        &[
            "--config",
            "s.toml",
            "train",
            "--n-checkpoints",
            "3",
            "-o",
            "d",
        ],
        tmp.path(),
    );
    assert_eq!(
        manifest(&tmp.path().join("d"))["config"]["checkpoints"],
        serde_json::json!([0, 8, 40])
    );
}

#[test]
fn manifest_for_another_command_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        &["gen-data", "--roles", "location", "--n", "5", "-o", "d"],
        tmp.path(),
    );
    let out = rolecirc(
        &["--config", "d/manifest.json", "train", "-o", "t"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

/// Trains a small model long enough for some pairs to survive the filter.
fn trained(tmp: &Path) {
    ok(
        &[
            "--seed", "1", "gen-data", "--roles", "goal", "--n", "200", "-o", "data",
        ],
        tmp,
    );
    ok(
        &[
            "--seed",
            "1",
            "train",
            "--steps",
            "300",
            "--checkpoints",
            "0,100,200,300",
            "--layers",
            "1",
            "--heads",
            "2",
            "--d-model",
            "16",
            "--docs",
            "1000",
            "--lr",
            "0.01",
            "-o",
            "ckpt",
        ],
        tmp,
    );
}

#[test]
fn attribute_compare_render_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    trained(t);
    ok(
        &[
            "attribute",
            "--checkpoint",
            "ckpt/ckpt_00000300.json",
            "--pairs",
            "data/pairs.jsonl",
            "-o",
            "attr",
        ],
        t,
    );
    let m = manifest(&t.join("attr"));
    assert_eq!(m["config"]["m"], 5);
    assert_eq!(m["config"]["topk"], 200);
    assert_eq!(m["config"]["role"], "goal");
    assert_eq!(m["inputs"][0]["name"], "ckpt_00000300.json");
    let heat = fs::read_to_string(t.join("attr/heatmap.csv")).unwrap();
    assert_eq!(heat.lines().next(), Some("layer,h0,h1,mlp"));
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(t.join("attr/summary.json")).unwrap()).unwrap();
    let graph: Value =
        serde_json::from_str(&fs::read_to_string(t.join("attr/graph.json")).unwrap()).unwrap();
    let n_edges = graph["edges"].as_array().unwrap().len();
    assert_eq!(summary["circuit_edges"], n_edges.min(200));

    ok(
        &[
            "attribute",
            "--checkpoint",
            "ckpt/ckpt_00000300.json",
            "--pairs",
            "data/pairs.jsonl",
            "--topk",
            "5",
            "-o",
            "small",
        ],
        t,
    );
    ok(
        &[
            "compare",
            "attr/graph.json",
            "small/graph.json",
            "-o",
            "cmp",
        ],
        t,
    );
    let m = manifest(&t.join("cmp"));
    assert_eq!(m["config"]["topk_nodes"], 30);
    assert_eq!(m["config"]["topk_edges"], 30);
    assert_eq!(m["config"]["spectral_edges"], 50);
    assert_eq!(m["config"]["eigs"], 20);
    let sim: Value =
        serde_json::from_str(&fs::read_to_string(t.join("cmp/similarity.json")).unwrap()).unwrap();
    assert!(sim["spectral_distance"].as_f64().unwrap() >= 0.0);

    ok(&["render", "small/graph.json", "-o", "r"], t);
    let dot = fs::read_to_string(t.join("r/flow.dot")).unwrap();
    assert_eq!(dot.matches(" -> ").count(), 5);
    let m = manifest(&t.join("r"));
    assert_eq!(m["config"]["quantile"], 0.95);
    assert_eq!(m["config"]["min_edges"], 12);
}

#[test]
fn timeline_and_emerge() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    trained(t);
    ok(
        &[
            "timeline",
            "--checkpoints",
            "ckpt",
            "--pairs",
            "data/pairs.jsonl",
            "--max-pairs",
            "4",
            "-o",
            "tl",
        ],
        t,
    );
    for s in [0, 100, 200, 300] {
        assert!(t.join(format!("tl/graph_{s:08}.json")).exists());
    }
    let csv = fs::read_to_string(t.join("tl/timeline.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    ok(
        &[
            "emerge",
            "--timeline",
            "tl/timeline.json",
            "--boot",
            "50",
            "-o",
            "em",
        ],
        t,
    );
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(t.join("em/emergence.json")).unwrap()).unwrap();
    assert_eq!(rep["steps"], serde_json::json!([0, 100, 200, 300]));
    assert!(rep["changepoint_faithfulness"].is_null());
    let m = manifest(&t.join("em"));
    assert_eq!(m["config"]["min_seg"], 3);
    assert_eq!(m["config"]["threshold"], 0.6);
    assert_eq!(m["config"]["persistence"], 2);
    assert_eq!(m["config"]["mode"], "drop");

    let text = fs::read_to_string(t.join("tl/timeline.json")).unwrap();
    fs::write(
        t.join("old.json"),
        text.replacen("\"version\": 1", "\"version\": 0", 1),
    )
    .unwrap();
    let out = rolecirc(&["emerge", "--timeline", "old.json", "-o", "x"], t);
    assert_eq!(out.status.code(), Some(2));
}
