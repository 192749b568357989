#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhm::config::RunConfig;
use rhm::dataset::{DatasetManifest, ManifestEntry};

/// Smooth background with one textured blob; returns the blob centre.
pub fn scene(w: u32, h: u32, rng: &mut ChaCha8Rng) -> (image::RgbImage, (f64, f64)) {
    let (bx, by) = (rng.random_range(0.25..0.75) * w as f64, rng.random_range(0.25..0.75) * h as f64);
    let phase: f64 = rng.random_range(0.0..6.0);
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let d2 = (xf - bx).powi(2) + (yf - by).powi(2);
        let blob = (-d2 / (2.0 * (w as f64 / 10.0).powi(2))).exp();
        let tex = ((xf * 1.3 + phase).sin() * (yf * 1.7).cos() + ((x * 7 + y * 3) % 5) as f64 / 5.0 - 0.5) * blob;
        let base = 0.45 + 0.15 * (xf / w as f64) + 0.1 * (yf / 40.0 + phase).sin();
        let px = |off: f64| (((base + off + 0.35 * tex).clamp(0.0, 1.0)) * 255.0).round() as u8;
        image::Rgb([px(0.0), px(0.03), px(-0.03)])
    });
    (img, (bx, by))
}

/// Fixations scattered around `centre`.
pub fn fixations(centre: (f64, f64), w: u32, h: u32, n: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| {
            let dx: f64 = rng.random_range(-1.0..1.0) * w as f64 / 10.0;
            let dy: f64 = rng.random_range(-1.0..1.0) * h as f64 / 10.0;
            ((centre.0 + dx).clamp(0.0, w as f64 - 1.0), (centre.1 + dy).clamp(0.0, h as f64 - 1.0))
        })
        .collect()
}

/// `n` synthetic images with CSV fixations under `root`; returns the manifest path.
pub fn synthetic_dataset(root: &Path, n: usize, w: u32, h: u32, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for i in 0..n {
        let (img, centre) = scene(w, h, &mut rng);
        let name = format!("img{i:02}");
        img.save(root.join(format!("{name}.png"))).unwrap();
        let rows: String = fixations(centre, w, h, 15, &mut rng).iter().map(|(x, y)| format!("{x:.2},{y:.2}\n")).collect();
        fs::write(root.join(format!("{name}.csv")), format!("x,y\n{rows}")).unwrap();
        entries.push(ManifestEntry { image: format!("{name}.png").into(), fixations: format!("{name}.csv").into(), id: None });
    }
    let path = root.join("manifest.json");
    DatasetManifest { name: "synthetic".into(), entries }.save(&path).unwrap();
    path
}

/// Small budgets so whole-pipeline tests stay quick.
pub fn quick_config() -> RunConfig {
    RunConfig { chains: 3000, dict_size: 150, ..RunConfig::default() }
}
