//! Scoring predicted maps against recorded fixations: ROC area, normalised
//! scanpath saliency and histogram-intersection similarity, plus the
//! centre-Gaussian baseline and the map-fusion helpers used for ablations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{data, param, Result};
use crate::fixation_sampler::Coord;
use crate::image_core::blur_plane;
use crate::saliency_map::SaliencyMap;

/// A recorded gaze position in original-image pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixationPoint {
    pub x: f64,
    pub y: f64,
    pub subject: Option<String>,
}

/// Ground-truth fixations for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixationRecord {
    pub image_id: String,
    pub image_width: usize,
    pub image_height: usize,
    pub points: Vec<FixationPoint>,
}

impl FixationRecord {
    pub fn new(image_id: impl Into<String>, image_width: usize, image_height: usize, points: Vec<(f64, f64)>) -> Self {
        Self {
            image_id: image_id.into(),
            image_width,
            image_height,
            points: points.into_iter().map(|(x, y)| FixationPoint { x, y, subject: None }).collect(),
        }
    }

    fn require_points(&self) -> Result<()> {
        if self.points.is_empty() {
            return data(format!("image `{}` has no fixations", self.image_id));
        }
        Ok(())
    }

    /// Pixel cells of a `width x height` map containing each fixation.
    pub fn map_pixels(&self, width: usize, height: usize) -> Vec<Coord> {
        let sx = width as f64 / self.image_width as f64;
        let sy = height as f64 / self.image_height as f64;
        self.points
            .iter()
            .map(|p| {
                let r = ((p.y * sy).floor().max(0.0) as usize).min(height - 1);
                let c = ((p.x * sx).floor().max(0.0) as usize).min(width - 1);
                (r, c)
            })
            .collect()
    }

    /// Continuous `(row, col)` positions in a map frame, pixel-centre aligned.
    fn map_positions(&self, width: usize, height: usize) -> Vec<(f64, f64)> {
        let sx = width as f64 / self.image_width as f64;
        let sy = height as f64 / self.image_height as f64;
        self.points
            .iter()
            .map(|p| ((p.y + 0.5) * sy - 0.5, (p.x + 0.5) * sx - 0.5))
            .collect()
    }
}

/// Bilinear lookup with edge clamping.
fn bilinear(values: &[f64], width: usize, height: usize, row: f64, col: f64) -> f64 {
    let r = row.clamp(0.0, (height - 1) as f64);
    let c = col.clamp(0.0, (width - 1) as f64);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(height - 1), (c0 + 1).min(width - 1));
    let (tr, tc) = (r - r0 as f64, c - c0 as f64);
    let top = values[r0 * width + c0] * (1.0 - tc) + values[r0 * width + c1] * tc;
    let bot = values[r1 * width + c0] * (1.0 - tc) + values[r1 * width + c1] * tc;
    top * (1.0 - tr) + bot * tr
}

/// Area under the ROC curve with thresholds at every distinct value of
/// either set, a sample counted as detected when it is `>=` the threshold.
pub fn auc_from_values(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut pos = positives.to_vec();
    let mut neg = negatives.to_vec();
    pos.sort_by(|a, b| b.total_cmp(a));
    neg.sort_by(|a, b| b.total_cmp(a));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let (mut i, mut j) = (0, 0);
    let (mut tpr, mut fpr) = (0.0, 0.0);
    let mut area = 0.0;
    while i < pos.len() || j < neg.len() {
        let t = match (pos.get(i), neg.get(j)) {
            (Some(&a), Some(&b)) => a.max(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < pos.len() && pos[i] >= t {
            i += 1;
        }
        while j < neg.len() && neg[j] >= t {
            j += 1;
        }
        let (t2, f2) = (i as f64 / np, j as f64 / nn);
        area += (f2 - fpr) * (t2 + tpr) / 2.0;
        tpr = t2;
        fpr = f2;
    }
    area
}

/// ROC area with fixated map pixels as positives and every map pixel as a
/// negative. Fixations are scaled into the map frame.
pub fn auc_score(map: &SaliencyMap, fix: &FixationRecord) -> Result<f64> {
    fix.require_points()?;
    let positives: Vec<f64> = fix
        .map_pixels(map.width, map.height)
        .into_iter()
        .map(|(r, c)| map.get(r, c))
        .collect();
    Ok(auc_from_values(&positives, &map.values))
}

/// Mean of the standardised map at the fixations. A zero-variance map
/// scores 0 (with a warning).
pub fn nss_score(map: &SaliencyMap, fix: &FixationRecord) -> Result<f64> {
    fix.require_points()?;
    let n = map.values.len() as f64;
    let mean = map.values.iter().sum::<f64>() / n;
    let var = if map.values.len() > 1 {
        map.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    if !(var > 0.0) {
        log::warn!("NSS of a constant map for `{}` is defined as 0", fix.image_id);
        return Ok(0.0);
    }
    let sd = var.sqrt();
    let total: f64 = fix
        .map_positions(map.width, map.height)
        .into_iter()
        .map(|(r, c)| (bilinear(&map.values, map.width, map.height, r, c) - mean) / sd)
        .sum();
    Ok(total / fix.points.len() as f64)
}

/// Histogram intersection of the two maps after normalising each to sum 1.
pub fn similarity_score(a: &SaliencyMap, b: &SaliencyMap) -> Result<f64> {
    if a.dims() != b.dims() {
        return param(format!("similarity of {:?} and {:?} maps", a.dims(), b.dims()));
    }
    let (sa, sb): (f64, f64) = (a.values.iter().sum(), b.values.iter().sum());
    if !(sa > 0.0) || !(sb > 0.0) {
        return data("similarity needs maps with positive total mass");
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x / sa).min(y / sb)).sum())
}

/// Rank-based histogram specification of `map` onto `reference`.
///
/// Pixels are ranked by value and given the reference value of the same
/// rank; maps of different sizes use linear interpolation between reference
/// quantiles. Tied pixels share the mean of their rank block, so equal
/// values stay equal and the pixel ordering is preserved.
pub fn histogram_match(map: &SaliencyMap, reference: &SaliencyMap) -> Result<SaliencyMap> {
    let mut sorted_ref = reference.values.clone();
    sorted_ref.sort_by(f64::total_cmp);
    if sorted_ref.first() == sorted_ref.last() {
        return data("histogram matching against a constant reference");
    }
    let mut order: Vec<usize> = (0..map.values.len()).collect();
    order.sort_by(|&a, &b| map.values[a].total_cmp(&map.values[b]).then(a.cmp(&b)));
    let n = order.len();
    let m = sorted_ref.len();
    let at_rank = |rank: usize| {
        if n == m {
            sorted_ref[rank]
        } else {
            let q = if n > 1 { rank as f64 / (n - 1) as f64 } else { 0.0 };
            let pos = q * (m - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(m - 1);
            let t = pos - lo as f64;
            sorted_ref[lo] * (1.0 - t) + sorted_ref[hi] * t
        }
    };
    let mut values = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let v = map.values[order[start]];
        let end = start + order[start..].iter().take_while(|&&i| map.values[i] == v).count();
        let mean = (start..end).map(at_rank).sum::<f64>() / (end - start) as f64;
        for &idx in &order[start..end] {
            values[idx] = mean;
        }
        start = end;
    }
    Ok(SaliencyMap {
        width: map.width,
        height: map.height,
        values,
        layer_index: map.layer_index,
        normalized: reference.normalized,
    })
}

/// Isotropic Gaussian centred on the map with `sigma = width / 4`, scaled
/// so its peak is 1.
pub fn center_model(width: usize, height: usize) -> Result<SaliencyMap> {
    if width == 0 || height == 0 {
        return param("centre model dimensions must be positive");
    }
    let sigma = width as f64 / 4.0;
    let (cr, cc) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let mut values = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
            values.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    scale_to_peak(&mut values);
    SaliencyMap::new(width, height, values, 0)
}

fn scale_to_peak(values: &mut [f64]) {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Pointwise product with the centre model, rescaled to peak 1.
pub fn apply_center_bias(map: &SaliencyMap, center: &SaliencyMap) -> Result<SaliencyMap> {
    if map.dims() != center.dims() {
        return param(format!("centre model {:?} does not match map {:?}", center.dims(), map.dims()));
    }
    let mut values: Vec<f64> = map.values.iter().zip(&center.values).map(|(a, b)| a * b).collect();
    scale_to_peak(&mut values);
    SaliencyMap::new(map.width, map.height, values, map.layer_index)
}

/// Weighted sum of maps resampled to the widest map's size, min-max
/// normalised. `None` weights are uniform.
pub fn linear_fuse(maps: &[SaliencyMap], weights: Option<&[f64]>) -> Result<SaliencyMap> {
    let finest = maps
        .iter()
        .max_by_key(|m| m.width * m.height)
        .ok_or_else(|| crate::Error::Parameter("nothing to fuse".into()))?;
    let uniform = vec![1.0; maps.len()];
    let weights = weights.unwrap_or(&uniform);
    if weights.len() != maps.len() {
        return param("one weight per map is required");
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || !weights.iter().any(|w| *w > 0.0) {
        return param("fusion weights must be non-negative and not all zero");
    }
    let (w, h) = finest.dims();
    let mut acc = vec![0.0; w * h];
    for (m, &wt) in maps.iter().zip(weights) {
        let r = m.resized(w, h);
        for (a, v) in acc.iter_mut().zip(&r.values) {
            *a += wt * v;
        }
    }
    Ok(SaliencyMap::new(w, h, acc, finest.layer_index)?.normalized())
}

/// Ground-truth fixation density: a histogram of fixations in the map frame,
/// blurred with `blur_sigma` and min-max normalised.
pub fn fixation_map(fix: &FixationRecord, width: usize, height: usize, blur_sigma: f64) -> Result<SaliencyMap> {
    fix.require_points()?;
    let mut hist = vec![0.0; width * height];
    for (r, c) in fix.map_pixels(width, height) {
        hist[r * width + c] += 1.0;
    }
    if blur_sigma > 0.0 {
        hist = blur_plane(&hist, width, height, blur_sigma);
    }
    Ok(SaliencyMap::new(width, height, hist, 0)?.normalized())
}

/// Frame in which maps and fixations are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalFrame {
    /// Fixations are scaled into the map's pixel grid.
    Map,
    /// Maps are bilinearly upscaled to the original image size.
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions {
    pub frame: EvalFrame,
    /// Blur applied to the ground-truth fixation histogram, in map pixels.
    pub fixation_blur: f64,
    /// Match the map's histogram to the fixation map before NSS and
    /// similarity. AUC is rank-based and always uses the raw map.
    pub histogram_match: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self { frame: EvalFrame::Map, fixation_blur: 4.0, histogram_match: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub auc: f64,
    pub nss: f64,
    pub similarity: f64,
}

/// All three scores for one prediction.
pub fn evaluate(map: &SaliencyMap, fix: &FixationRecord, opts: &MetricOptions) -> Result<ImageMetrics> {
    let map = match opts.frame {
        EvalFrame::Map => map.clone(),
        EvalFrame::Image => map.resized(fix.image_width, fix.image_height),
    };
    let reference = fixation_map(fix, map.width, map.height, opts.fixation_blur)?;
    let auc = auc_score(&map, fix)?;
    let constant = map.values.iter().all(|&v| v == map.values[0]);
    let reference_constant = reference.values.iter().all(|&v| v == reference.values[0]);
    let matched = if opts.histogram_match && !constant && !reference_constant {
        histogram_match(&map, &reference)?
    } else {
        map
    };
    let nss = nss_score(&matched, fix)?;
    let similarity = if matched.values.iter().any(|&v| v > 0.0) {
        similarity_score(&matched, &reference)?
    } else {
        0.0
    };
    Ok(ImageMetrics { image_id: fix.image_id.clone(), auc, nss, similarity })
}

/// Dataset-level scores: unweighted means over images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub nss: f64,
    pub similarity: f64,
    pub per_image: Vec<ImageMetrics>,
}

impl MetricReport {
    pub fn from_images(per_image: Vec<ImageMetrics>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        Self {
            auc: mean(|m| m.auc),
            nss: mean(|m| m.nss),
            similarity: mean(|m| m.similarity),
            per_image,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per image plus a trailing `mean` row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["image_id", "auc", "nss", "similarity"]).map_err(csv_err)?;
        for m in &self.per_image {
            w.write_record([m.image_id.clone(), m.auc.to_string(), m.nss.to_string(), m.similarity.to_string()])
                .map_err(csv_err)?;
        }
        w.write_record(["mean".to_string(), self.auc.to_string(), self.nss.to_string(), self.similarity.to_string()])
            .map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, v: Vec<f64>) -> SaliencyMap {
        SaliencyMap::new(w, h, v, 0).unwrap()
    }

    #[test]
    fn constant_map_auc_is_half() {
        let m = map(6, 5, vec![0.3; 30]);
        let fix = FixationRecord::new("a", 6, 5, vec![(1.0, 1.0), (4.0, 2.0)]);
        assert_eq!(auc_score(&m, &fix).unwrap(), 0.5);
    }

    #[test]
    fn indicator_map_auc_closed_form() {
        // three fixated pixels on a 10x10 grid carry 1, all others 0;
        // negatives include the 3 positive pixels: FPR at t=1 is 3/100
        let mut v = vec![0.0; 100];
        let pts = [(2.0, 3.0), (7.0, 7.0), (5.0, 1.0)];
        for (x, y) in pts {
            v[y as usize * 10 + x as usize] = 1.0;
        }
        let fix = FixationRecord::new("b", 10, 10, pts.to_vec());
        let auc = auc_score(&map(10, 10, v), &fix).unwrap();
        // curve (0,0) -> (0.03, 1) -> (1, 1)
        let want = 0.03 * 0.5 + 0.97;
        assert!((auc - want).abs() < 1e-12);
    }

    #[test]
    fn auc_requires_fixations() {
        let m = map(2, 2, vec![0.0, 0.1, 0.2, 0.3]);
        let fix = FixationRecord::new("c", 2, 2, vec![]);
        assert!(matches!(auc_score(&m, &fix), Err(crate::Error::Data(_))));
    }

    #[test]
    fn nss_at_unique_maximum() {
        let v: Vec<f64> = vec![
            0.1, 0.4, 0.3, 0.2, //
            0.5, 0.9, 0.6, 0.0, //
            0.2, 0.3, 0.8, 0.1, //
            0.7, 0.2, 0.4, 0.5,
        ];
        let mean = v.iter().sum::<f64>() / 16.0;
        let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 15.0).sqrt();
        let fix = FixationRecord::new("d", 4, 4, vec![(1.0, 1.0)]);
        let nss = nss_score(&map(4, 4, v), &fix).unwrap();
        assert!((nss - (0.9 - mean) / sd).abs() < 1e-12);
    }

    #[test]
    fn nss_over_every_pixel_is_zero_and_constant_map_is_zero() {
        let v: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64).collect();
        let all: Vec<(f64, f64)> = (0..12).map(|i| ((i % 4) as f64, (i / 4) as f64)).collect();
        let fix = FixationRecord::new("e", 4, 3, all);
        assert!(nss_score(&map(4, 3, v), &fix).unwrap().abs() < 1e-12);
        assert_eq!(nss_score(&map(4, 3, vec![0.5; 12]), &fix).unwrap(), 0.0);
    }

    #[test]
    fn similarity_trivia() {
        let a = map(2, 1, vec![0.5, 0.5]);
        let b = map(2, 1, vec![1.0, 0.0]);
        assert!((similarity_score(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert!((similarity_score(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let c = map(2, 1, vec![0.0, 1.0]);
        assert_eq!(similarity_score(&b, &c).unwrap(), 0.0);
        assert!(similarity_score(&a, &map(2, 1, vec![0.0, 0.0])).is_err());
        assert!(similarity_score(&a, &map(1, 2, vec![0.5, 0.5])).is_err());
    }

    #[test]
    fn histogram_match_trivia() {
        let m = map(3, 1, vec![1.0, 3.0, 2.0]);
        let r = map(3, 1, vec![1.0, 0.0, 0.5]);
        assert_eq!(histogram_match(&m, &r).unwrap().values, vec![0.0, 1.0, 0.5]);
        assert_eq!(histogram_match(&m, &m).unwrap().values, m.values);
        assert!(histogram_match(&m, &map(3, 1, vec![0.2; 3])).is_err());
        // quantile interpolation for unequal sizes
        let r5 = map(5, 1, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(histogram_match(&m, &r5).unwrap().values, vec![0.0, 1.0, 0.5]);
        // ties share the mean of their rank block
        let tied = map(4, 1, vec![0.3, 0.1, 0.3, 0.9]);
        let r4 = map(4, 1, vec![0.0, 0.2, 0.4, 1.0]);
        assert_eq!(histogram_match(&tied, &r4).unwrap().values, vec![0.30000000000000004, 0.0, 0.30000000000000004, 1.0]);
    }

    #[test]
    fn center_model_shape() {
        let c = center_model(9, 7).unwrap();
        assert_eq!(c.get(3, 4), 1.0);
        for r in 0..7 {
            for x in 0..9 {
                assert!((c.get(r, x) - c.get(r, 8 - x)).abs() < 1e-15);
            }
        }
        // sigma = 9/4 along a row
        let want = (-(4.0f64 * 4.0) / (2.0 * 2.25 * 2.25)).exp();
        assert!((c.get(3, 0) - want).abs() < 1e-12);
    }

    #[test]
    fn center_bias_trivia() {
        let c = center_model(8, 6).unwrap();
        let uniform = map(8, 6, vec![0.4; 48]);
        let biased = apply_center_bias(&uniform, &c).unwrap();
        for (a, b) in biased.values.iter().zip(&c.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let sq = apply_center_bias(&c, &c).unwrap();
        let peak = c.values.iter().map(|v| v * v).fold(0.0, f64::max);
        for (a, b) in sq.values.iter().zip(&c.values) {
            assert!((a - b * b / peak).abs() < 1e-12);
        }
        let zero = apply_center_bias(&map(8, 6, vec![0.0; 48]), &c).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        assert!(apply_center_bias(&map(6, 8, vec![0.0; 48]), &c).is_err());
    }

    #[test]
    fn linear_fuse_trivia() {
        let m = map(4, 2, vec![0.0, 0.2, 0.4, 1.0, 0.5, 0.6, 0.7, 0.1]);
        assert_eq!(linear_fuse(std::slice::from_ref(&m), Some(&[1.0])).unwrap().values, m.values);
        let two = linear_fuse(&[m.clone(), m.clone()], None).unwrap();
        for (a, b) in two.values.iter().zip(&m.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let coarse = map(2, 1, vec![0.0, 1.0]);
        let fused = linear_fuse(&[coarse, m.clone()], None).unwrap();
        assert_eq!(fused.dims(), (4, 2));
        assert!(linear_fuse(&[m.clone()], Some(&[0.0])).is_err());
        assert!(linear_fuse(&[m.clone()], Some(&[-1.0])).is_err());
        assert!(linear_fuse(&[], None).is_err());
    }

    #[test]
    fn fixations_scale_into_map_frame() {
        let fix = FixationRecord::new("f", 640, 480, vec![(0.0, 0.0), (639.0, 479.0), (320.0, 240.0)]);
        assert_eq!(fix.map_pixels(64, 48), vec![(0, 0), (47, 63), (24, 32)]);
    }

    #[test]
    fn report_means_and_csv() {
        let r = MetricReport::from_images(vec![
            ImageMetrics { image_id: "a".into(), auc: 0.8, nss: 1.0, similarity: 0.4 },
            ImageMetrics { image_id: "b,c".into(), auc: 0.6, nss: 2.0, similarity: 0.6 },
        ]);
        assert!((r.auc - 0.7).abs() < 1e-12);
        assert!((r.nss - 1.5).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        r.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("image_id,auc,nss,similarity\n"));
        assert!(text.contains("\"b,c\""));
        assert!(text.lines().last().unwrap().starts_with("mean,"));
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
