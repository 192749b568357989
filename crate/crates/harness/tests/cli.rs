mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

fn rhm(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_rhm")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = walk(dir)
        .into_iter()
        .filter(|p| p.file_name().unwrap() != "record.json")
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    fs::read_dir(dir)
        .unwrap()
        .flat_map(|e| {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p)
            } else {
                vec![p]
            }
        })
        .collect()
}

#[test]
fn fixate_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::synthetic_dataset(dir.path(), 2, 108, 81, 3);
    let m = manifest.to_str().unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            rhm(&["fixate", "--manifest", m, "--chains", "2000", "--set", "dict_size=120", "--out", out.to_str().unwrap()]);
            out
        })
        .collect();
    let a = read_dir_bytes(&runs[0]);
    assert_eq!(a, read_dir_bytes(&runs[1]));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    for want in ["report.json", "report.csv", "config.txt", "chains/img00.csv", "final/img01.f32", "final/img01.png", "maps/img00_layer2.f32", "maps/img00_layer2.png"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(runs[0].join("record.json")).unwrap()).unwrap();
    assert_eq!(record["config"]["chains"], "2000");
    assert_eq!(record["config"]["dict_size"], "120");
    assert_eq!(record["inputs"].as_object().unwrap().len(), 5);
    assert_eq!(record["outputs"]["report.json"].as_str().unwrap().len(), 64);

    // the stored config regenerates the same outputs
    let again = dir.path().join("c");
    let cfg = runs[0].join("config.txt");
    rhm(&["fixate", "--manifest", m, "--config", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(a, read_dir_bytes(&again));
}

#[test]
fn other_subcommands_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::synthetic_dataset(dir.path(), 2, 108, 81, 4);
    let m = manifest.to_str().unwrap();
    let out = |n: &str| dir.path().join(n).to_str().unwrap().to_owned();
    let quick = ["--chains", "1500", "--set", "dict_size=100"];

    let img = dir.path().join("img00.png");
    rhm(&[&["saliency", "--image", img.to_str().unwrap(), "--method", "bi", "--out", &out("sal")], &quick[..]].concat());
    assert!(dir.path().join("sal/maps/img00_layer0.f32").is_file());

    let text = String::from_utf8(rhm(&[&["eval", "--manifest", m, "--center", "1", "--out", &out("ev")], &quick[..]].concat()).stdout).unwrap();
    assert!(text.starts_with("auc "), "{text}");

    let maps = out("sal2");
    rhm(&[&["saliency", "--manifest", m, "--out", &maps], &quick[..]].concat());
    let text = String::from_utf8(
        rhm(&[&["import-maps", "--manifest", m, "--maps", &format!("{maps}/maps"), "--out", &out("imp")], &quick[..]].concat()).stdout,
    )
    .unwrap();
    assert!(text.starts_with("auc "), "{text}");
    let ev = out("ev2");
    rhm(&[&["eval", "--manifest", m, "--maps", &out("imp/final"), "--out", &ev], &quick[..]].concat());

    let text = String::from_utf8(rhm(&[&["ablate", "--manifest", m, "--methods", "lr", "--out", &out("abl")], &quick[..]].concat()).stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 + 1, "{text}");
    assert!(dir.path().join("abl/ablation.json").is_file());

    rhm(&[&["dict", "build", "--image", img.to_str().unwrap(), "--out", &out("dict")], &quick[..]].concat());
    let text = String::from_utf8(rhm(&["dict", "inspect", &out("dict/dict_layer1.bin")]).stdout).unwrap();
    assert!(text.contains("atoms          100") && text.contains("seed           1"), "{text}");

    let text = String::from_utf8(
        rhm(&[&["tune", "--manifest", m, "--method", "lr", "--eta", "5,10", "--lambda", "0.5", "--out", &out("tune")], &quick[..]].concat()).stdout,
    )
    .unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::synthetic_dataset(dir.path(), 1, 108, 81, 4);
    let run = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_rhm")).args(args).output().unwrap();
    let o = run(&["fixate", "--manifest", manifest.to_str().unwrap(), "--set", "bogus=1", "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown config key `bogus`"));
    let o = run(&["eval", "--manifest", dir.path().join("missing.json").to_str().unwrap()]);
    assert!(!o.status.success());
    let o = run(&["fixate", "--center", "2", "--image", "x.png"]);
    assert!(!o.status.success());
}
