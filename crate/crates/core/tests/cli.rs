use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn damex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_damex"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice::<Value>(&o.stdout).unwrap()["report"].clone()
}

/// Every file below `root` with its bytes, sorted by relative path.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const SMALL: &[&str] = &["--set", "train_scenes=4", "--set", "val_scenes=2", "--set", "test_scenes=2"];

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

#[test]
fn gen_data_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        let o = damex(dir.path(), &with(&["gen-data", "--seed", "7", "--data-dir", d], SMALL));
        assert_eq!(report(&o)["splits"]["train"]["scenes"], 4);
    }
    let (a, b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn identity_evaluations_are_perfect() {
    let dir = tempfile::tempdir().unwrap();
    report(&damex(dir.path(), &with(&["gen-data"], SMALL)));
    let gt = dir.path().join("data/test");
    let gt = gt.to_str().unwrap();
    let seg = report(&damex(dir.path(), &["eval-seg", "--pred", gt, "--gt", gt]));
    assert_eq!(seg["iou_water"], 1.0);
    assert_eq!(seg["miou"], 1.0);
    let ext = report(&damex(dir.path(), &["eval-extract", "--pred", gt, "--gt", gt]));
    for k in ["iou_d", "miou_dn", "miou_dnb"] {
        assert_eq!(ext[k], 1.0, "{k}");
    }
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "# small run\ntrain_scenes = 3\nval_scenes = 1\ntest_scenes = 1\nseed = 11\n").unwrap();
    let o = damex(dir.path(), &["gen-data", "--config", "run.cfg", "--set", "train_scenes=2"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 11);
    assert_eq!(v["report"]["splits"]["train"]["scenes"], 2);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("train_scenes = 2") && stderr.contains("seed = 11"));
    assert!(fs::read_to_string(dir.path().join("out/gen-data.cfg")).unwrap().contains("seed = 11"));
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| damex(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["gen-data", "--set", "no_such_key=1"]), 2);
    assert_eq!(code(&["gen-data", "--set", "shape_mix_dam=0.9"]), 2);
    assert_eq!(code(&["gen-data", "--config", "missing.cfg"]), 2);
    assert_eq!(code(&["train-seg", "--data-dir", "nowhere"]), 3);
    assert_eq!(code(&["sweep", "--param", "nope", "--values", "1"]), 2);
    let o = damex(dir.path(), &["frobnicate"]);
    assert!(o.stdout.is_empty());
}

#[test]
fn gradcheck_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = damex(dir.path(), &["gradcheck", "--set", "gradcheck_seeds=1"]);
    let r = report(&o);
    assert_eq!(r["passed"], true);
    assert_eq!(r["entries"].as_array().unwrap().len(), 4);
    // an impossible tolerance is a numeric failure
    let o = damex(dir.path(), &["gradcheck", "--objective", "focal", "--set", "gradcheck_seeds=1", "--set", "gradcheck_tolerance=1e-300"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn sweep_writes_one_row_per_value_and_metric() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["--set", "train_scenes=6", "--set", "val_scenes=2", "--set", "test_scenes=2", "--set", "cls_epochs=1"];
    report(&damex(dir.path(), &with(&["gen-data"], &base)));
    let rows = report(&damex(dir.path(), &with(&["sweep", "--param", "Z", "--values", "2,3"], &base)));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let csv = fs::read_to_string(dir.path().join("out/sweep_Z.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("param,value,metric,score"));
    assert!(lines.next().unwrap().starts_with("Z,2,accuracy,"));
    assert!(lines.next().unwrap().starts_with("Z,2,msc,"));
}
