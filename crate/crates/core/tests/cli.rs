use std::path::Path;
use std::process::{Command, Output};

fn ndf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndf"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&ndf(&[])), 1);
    assert_eq!(
        code(&ndf(&["train", "--dataset", "cifar", "--out", "x.json"])),
        1
    );
    assert_eq!(
        code(&ndf(&[
            "train",
            "--dataset",
            "synth",
            "--depth",
            "0",
            "--out",
            "x.json"
        ])),
        1
    );
    assert_eq!(
        code(&ndf(&[
            "hist", "--model", "m.json", "--bins", "1", "--out", "h.csv"
        ])),
        1
    );
    assert_eq!(code(&ndf(&["--help"])), 0);
    assert_eq!(code(&ndf(&["trace", "--help"])), 0);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.json");
    assert_eq!(code(&ndf(&["eval", "--model", path(&missing)])), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"format_version\":99}").unwrap();
    let out = ndf(&["eval", "--model", path(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("format_version 99"));
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = ndf(&[
        "train",
        "--dataset",
        "mnist",
        "--data-dir",
        path(&empty),
        "--out",
        path(&bad),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn diverging_training_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let out = ndf(&[
        "train",
        "--dataset",
        "synth",
        "--samples",
        "16",
        "--depth",
        "1",
        "--epochs",
        "3",
        "--batch-size",
        "8",
        "--lr",
        "1e300",
        "--out",
        path(&model),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!model.exists());
}

#[test]
fn synthetic_forest_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let data = dir.path().join("data");
    let out = ndf(&[
        "train",
        "--dataset",
        "synth",
        "--data-dir",
        path(&data),
        "--samples",
        "40",
        "--depth",
        "2",
        "--trees",
        "2",
        "--epochs",
        "2",
        "--batch-size",
        "16",
        "--lr",
        "0.001",
        "--seed",
        "3",
        "--out",
        path(&model),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 2);
    assert!(data.join("synth_s3_0_40.ndfs").exists());

    let out = ndf(&["eval", "--model", path(&model), "--data-dir", path(&data)]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["mean_error"].as_f64().unwrap().is_finite());

    let trace = dir.path().join("trace");
    let out = ndf(&[
        "trace",
        "--model",
        path(&model),
        "--input-index",
        "4",
        "--out-dir",
        path(&trace),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(trace.join("path.json")).unwrap()).unwrap();
    let maps = record["maps"].as_array().unwrap();
    assert_eq!(maps.len(), 2);
    for m in maps {
        let name = m["file"].as_str().unwrap();
        assert!(name.starts_with("dsm_node") && name.ends_with(".pgm"));
        assert!(trace.join(name).exists());
    }
    assert!(trace.join("input.pgm").exists());
    assert_eq!(
        code(&ndf(&[
            "trace",
            "--model",
            path(&model),
            "--input-index",
            "100000",
            "--out-dir",
            path(&trace)
        ])),
        1
    );

    let csv = dir.path().join("h.csv");
    let out = ndf(&[
        "hist",
        "--model",
        path(&model),
        "--bins",
        "50",
        "--out",
        path(&csv),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 51);
    assert_eq!(
        code(&ndf(&[
            "hist",
            "--model",
            path(&model),
            "--dataset",
            "mnist",
            "--out",
            path(&csv)
        ])),
        1
    );
}

#[test]
fn cascade_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("c.json");
    let out = ndf(&[
        "cascade-train",
        "--samples",
        "30",
        "--stages",
        "2",
        "--trees",
        "1",
        "--depth",
        "2",
        "--seed",
        "1",
        "--epochs",
        "1",
        "--out",
        path(&model),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = ndf(&[
        "cascade-eval",
        "--model",
        path(&model),
        "--samples",
        "10",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["skip"], 30);
    assert_eq!(v["stage_errors"].as_array().unwrap().len(), 3);
    assert_eq!(code(&ndf(&["eval", "--model", path(&model)])), 2);
}
