//! Dataset manifests, fixation CSV parsing and layout adapters.
//!
//! A manifest is JSON: `{"name": ..., "entries": [{"image": ..., "fixations": ...}]}`
//! with paths relative to the manifest's directory. Fixation files are CSV
//! rows `x,y[,subject]` in original-image pixels, with an optional header.

use std::fs;
use std::path::{Path, PathBuf};

use rhm_core::eval_metrics::{FixationPoint, FixationRecord};
use rhm_core::image_core::{load_image, ImagePlane};
use rhm_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub fixations: PathBuf,
    /// Defaults to the image file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// One image with its ground truth. Pixels are decoded on demand.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub id: String,
    pub image_path: PathBuf,
    pub fixation_path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub fixations: FixationRecord,
    /// Fixations dropped for lying outside the image.
    pub dropped: usize,
}

impl DatasetItem {
    /// Decoded image, promoted to three channels.
    pub fn load_image(&self) -> Result<ImagePlane> {
        let img = load_image(&self.image_path).map_err(|e| with_context(&self.id, e))?;
        Ok(img.to_rgb())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub root: PathBuf,
    pub items: Vec<DatasetItem>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        self.items.truncate(n);
    }
}

pub(crate) fn with_context(id: &str, e: Error) -> Error {
    match e {
        Error::Data(m) => Error::Data(format!("{id}: {m}")),
        Error::Parameter(m) => Error::Parameter(format!("{id}: {m}")),
        other => Error::Data(format!("{id}: {other}")),
    }
}

/// Loads the manifest, checks that every file exists, reads image
/// dimensions and parses the fixation files.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    if manifest.entries.is_empty() {
        log::warn!("dataset `{}` has no entries", manifest.name);
    }
    let mut items = Vec::with_capacity(manifest.entries.len());
    let mut seen = std::collections::HashSet::new();
    for (n, entry) in manifest.entries.iter().enumerate() {
        let image_path = root.join(&entry.image);
        let fixation_path = root.join(&entry.fixations);
        let id = entry.id.clone().unwrap_or_else(|| {
            entry.image.file_stem().map_or_else(|| format!("entry{n}"), |s| s.to_string_lossy().into_owned())
        });
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!("entry {n}: duplicate image id `{id}`")));
        }
        for p in [&image_path, &fixation_path] {
            if !p.is_file() {
                return Err(Error::Data(format!("entry {n} ({id}): missing file {}", p.display())));
            }
        }
        let (w, h) = image::image_dimensions(&image_path)
            .map_err(|e| Error::Data(format!("entry {n} ({id}): {}: {e}", image_path.display())))?;
        let (fixations, dropped) = read_fixations(&fixation_path, &id, w as usize, h as usize)?;
        if dropped > 0 {
            log::warn!("{id}: dropped {dropped} fixation(s) outside the {w}x{h} image");
        }
        items.push(DatasetItem {
            id,
            image_path,
            fixation_path,
            width: w as usize,
            height: h as usize,
            fixations,
            dropped,
        });
    }
    Ok(Dataset { name: manifest.name, root, items })
}

/// Parses `x,y[,subject]` rows. A first row whose coordinates are not
/// numeric is taken as a header. Returns the record and the number of
/// out-of-bounds points dropped.
pub fn read_fixations(path: &Path, id: &str, width: usize, height: usize) -> Result<(FixationRecord, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut points = Vec::new();
    let mut dropped = 0;
    for (n, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = row.position().map_or(n as u64 + 1, |p| p.line());
        if row.len() < 2 {
            return Err(Error::Data(format!("{} line {line}: expected x,y[,subject]", path.display())));
        }
        let (x, y) = match (row[0].parse::<f64>(), row[1].parse::<f64>()) {
            (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => (x, y),
            _ if n == 0 => continue,
            _ => {
                return Err(Error::Data(format!(
                    "{} line {line}: non-numeric coordinates `{},{}`",
                    path.display(),
                    &row[0],
                    &row[1]
                )))
            }
        };
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            dropped += 1;
            continue;
        }
        let subject = row.get(2).filter(|s| !s.is_empty()).map(str::to_owned);
        points.push(FixationPoint { x, y, subject });
    }
    let record = FixationRecord { image_id: id.to_owned(), image_width: width, image_height: height, points };
    Ok((record, dropped))
}

/// Writes `x,y` rows (with a header).
pub fn write_fixations(path: impl AsRef<Path>, points: &[FixationPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["x", "y", "subject"]).map_err(io)?;
    for p in points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.subject.clone().unwrap_or_default()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// On-disk layouts understood by [`adapt`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    /// `images/<stem>.<ext>` with `fixations/<stem>.csv`.
    Pairs,
    /// `images/<stem>.<ext>` with binary fixation images
    /// `fixations/<stem><suffix>.<ext>` (nonzero pixels are fixations), as
    /// shipped with the MIT benchmark (`_fixPts`).
    Points { suffix: String },
}

const IMAGE_EXTS: [&str; 5] = ["jpg", "jpeg", "png", "bmp", "JPG"];

fn find_with_stem(dir: &Path, stem: &str, exts: &[&str]) -> Option<PathBuf> {
    exts.iter().map(|e| dir.join(format!("{stem}.{e}"))).find(|p| p.is_file())
}

/// Builds `<root>/manifest.json` for a dataset laid out as `layout`.
/// Binary fixation images are converted to CSV under `<root>/fixations_csv`.
pub fn adapt(root: impl AsRef<Path>, name: &str, layout: &Layout) -> Result<PathBuf> {
    let root = root.as_ref();
    let images_dir = root.join("images");
    let fix_dir = root.join("fixations");
    let mut stems: Vec<(String, PathBuf)> = fs::read_dir(&images_dir)
        .map_err(|e| Error::Data(format!("{}: {e}", images_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| IMAGE_EXTS.contains(&e.to_string_lossy().as_ref())))
        .filter_map(|p| p.file_stem().map(|s| (s.to_string_lossy().into_owned(), p.clone())))
        .collect();
    stems.sort();
    let mut entries = Vec::new();
    let mut missing = Vec::new();
    for (stem, image) in stems {
        let rel_image = image.strip_prefix(root).expect("listed under root").to_path_buf();
        match layout {
            Layout::Pairs => match find_with_stem(&fix_dir, &stem, &["csv"]) {
                Some(f) => entries.push(ManifestEntry {
                    image: rel_image,
                    fixations: f.strip_prefix(root).expect("under root").to_path_buf(),
                    id: None,
                }),
                None => missing.push(stem),
            },
            Layout::Points { suffix } => {
                let Some(f) = find_with_stem(&fix_dir, &format!("{stem}{suffix}"), &IMAGE_EXTS) else {
                    missing.push(stem);
                    continue;
                };
                let pts = points_from_image(&f)?;
                let out_dir = root.join("fixations_csv");
                fs::create_dir_all(&out_dir)?;
                let csv_path = out_dir.join(format!("{stem}.csv"));
                write_fixations(&csv_path, &pts)?;
                entries.push(ManifestEntry {
                    image: rel_image,
                    fixations: csv_path.strip_prefix(root).expect("under root").to_path_buf(),
                    id: None,
                });
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("no fixation file for: {}", missing.join(", "))));
    }
    let manifest = DatasetManifest { name: name.to_owned(), entries };
    let path = root.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

/// Pixels brighter than half scale in a fixation-point image.
fn points_from_image(path: &Path) -> Result<Vec<FixationPoint>> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?.to_luma8();
    Ok(img
        .enumerate_pixels()
        .filter(|(_, _, p)| p.0[0] > 127)
        .map(|(x, y, _)| FixationPoint { x: x as f64, y: y as f64, subject: None })
        .collect())
}
