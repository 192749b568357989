mod common;

use std::fs;

use rhm::config::RunConfig;
use rhm::dataset::load_dataset;

#[test]
fn synthetic_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::synthetic_dataset(dir.path(), 4, 90, 60, 1);
    let ds = load_dataset(&manifest).unwrap();
    assert_eq!(ds.name, "synthetic");
    assert_eq!(ds.len(), 4);
    for it in &ds.items {
        assert_eq!((it.width, it.height), (90, 60));
        assert_eq!(it.fixations.points.len(), 15);
        assert_eq!(it.dropped, 0);
        let img = it.load_image().unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (90, 60, 3));
    }
}

#[test]
fn out_of_bounds_points_are_counted() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::synthetic_dataset(dir.path(), 1, 90, 60, 2);
    fs::write(dir.path().join("img00.csv"), "x,y,subject\n10,10,a\n95,10,a\n20.5,30,b\n").unwrap();
    let ds = load_dataset(&manifest).unwrap();
    assert_eq!(ds.items[0].fixations.points.len(), 2);
    assert_eq!(ds.items[0].dropped, 1);
}

#[test]
fn config_files_round_trip_through_text() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.set("factors", "16,4").unwrap();
    cfg.set("lambda", "0.25").unwrap();
    cfg.set("max_images", "7").unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, format!("# comment\n{}", cfg.to_text())).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
}
