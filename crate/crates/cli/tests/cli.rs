use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmgraph"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn gen(dir: &Path, name: &str) {
    let out = run(
        dir,
        &["gen-data", "--classes", "2", "--episodes", "3", "--frames", "3", "--seed", "7", "--out", name],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_data_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "a");
    gen(tmp.path(), "b");
    let (a, b) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn train_eval_inspect_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "d");
    let out = run(
        tmp.path(),
        &["train", "--data", "d", "--variant", "visual_only", "--epochs", "1", "--lr", "0", "--out", "r"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("r/metrics.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "visual_only");
    assert_eq!(report["history"].as_array().unwrap().len(), 1);
    assert!(report["train"]["accuracy"].is_number());

    let out = run(tmp.path(), &["eval", "--checkpoint", "r/model.json", "--data", "d", "--out", "e.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(m["samples"], 6);

    assert_eq!(code(&run(tmp.path(), &["inspect", "--path", "r/model.json"])), 0);
    assert_eq!(code(&run(tmp.path(), &["inspect", "--path", "d"])), 0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "d");
    fs::write(tmp.path().join("c.toml"), "epochs = 3\nlr = 0.0\nvariant = \"static_graph\"\n").unwrap();
    let out = run(tmp.path(), &["train", "--config", "c.toml", "--data", "d", "--epochs", "2", "--out", "r"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("r/metrics.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "static_graph");
    assert_eq!(report["history"].as_array().unwrap().len(), 2);
}

#[test]
fn export_graph_writes_dot_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "d");
    let ep = fs::read_dir(tmp.path().join("d"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .find(|n| n.starts_with("ep_") && n.ends_with(".json"))
        .unwrap();
    let ep = format!("d/{ep}");
    let out = run(tmp.path(), &["export-graph", "--episode", &ep]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("digraph"));
    let out = run(tmp.path(), &["export-graph", "--episode", &ep, "--format", "json", "--out", "g.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let _: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("g.json")).unwrap()).unwrap();
    assert_eq!(code(&run(tmp.path(), &["export-graph", "--episode", &ep, "--format", "png"])), 2);
}

#[test]
fn grad_check_passes_and_fails_on_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(tmp.path(), &["grad-check", "--seed", "1"])), 0);
    assert_eq!(code(&run(tmp.path(), &["grad-check", "--seed", "1", "--tolerance", "1e-12"])), 3);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&run(tmp.path(), &["train", "--help"])), 0);
    assert_eq!(code(&run(tmp.path(), &["train", "--bogus"])), 1);
    assert_eq!(code(&run(tmp.path(), &[])), 1);
    fs::write(tmp.path().join("bad.toml"), "nope = 1\n").unwrap();
    assert_eq!(code(&run(tmp.path(), &["train", "--config", "bad.toml"])), 1);
    assert_eq!(code(&run(tmp.path(), &["train", "--config", "absent.toml"])), 2);
    assert_eq!(code(&run(tmp.path(), &["train", "--epochs", "0", "--out", "r"])), 1);
    assert_eq!(code(&run(tmp.path(), &["eval", "--checkpoint", "missing.json"])), 2);
    assert_eq!(code(&run(tmp.path(), &["inspect", "--path", "missing.json"])), 2);
}
