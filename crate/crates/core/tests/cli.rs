use std::fs;
use std::process::{Command, Output};

fn seedvec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seedvec")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(code(&seedvec(&["--help"])), 0);
    assert_eq!(code(&seedvec(&["--version"])), 0);
    assert_eq!(code(&seedvec(&[])), 3);
    assert_eq!(code(&seedvec(&["frobnicate"])), 3);
    assert_eq!(code(&seedvec(&["analyze", "dense:8x8", "--width", "6"])), 3);
    assert_eq!(code(&seedvec(&["run", "dense:8x8", "--repeat", "0"])), 3);
    assert_eq!(code(&seedvec(&["analyze", "/no/such/file.mtx"])), 2);
    assert_eq!(code(&seedvec(&["verify", "random:20x20:4:1"])), 0);
}

#[test]
fn malformed_matrix_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.mtx");
    fs::write(&p, "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n").unwrap();
    let o = seedvec(&["analyze", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn analyze_json_and_csv() {
    let o = seedvec(&["analyze", "dense:32x32", "--width", "8"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["width"], 8);

    let o = seedvec(&["analyze", "dense:32x32", "--format", "csv"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("dataset,site_kind,flag,fraction\n"));
    assert!(text.contains("dense-32x32,gather,1,1\n"));
}

#[test]
fn gen_then_corpus() {
    let dir = tempfile::tempdir().unwrap();
    for (name, spec) in [("a.mtx", "dense:16x16"), ("b.mtx", "random:40x40:5:3")] {
        let out = dir.path().join(name);
        let o = seedvec(&["gen", spec, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    fs::write(dir.path().join("c.mtx"), "not a matrix").unwrap();
    let o = seedvec(&["corpus", dir.path().to_str().unwrap(), "--width", "4"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["datasets"].as_array().unwrap().len(), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("c.mtx"));
}

#[test]
fn run_reports_counters() {
    let o = seedvec(&["run", "dense:16x16", "--data", "int64", "--repeat", "2"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["stats"]["reduction_sequences"], 16);
}

#[test]
fn pagerank_edge_list_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.txt");
    fs::write(&p, "0 1\n1 2\n2 0\n2 1\n").unwrap();
    let o = seedvec(&["verify", p.to_str().unwrap(), "--kernel", "pagerank", "--width", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
