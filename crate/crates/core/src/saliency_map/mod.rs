//! Per-layer saliency: the normalised reconstruction error of every patch,
//! assembled into a map, blurred and scaled to `[0, 1]`.

pub mod io;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{data, param, Error, Result};
use crate::image_core::{blur_plane, resize_bilinear, ImagePlane};
use crate::patch_ops::{extract_patch_into, DegradeOperator};
use crate::sparse_sr::{reconstruct_bi, reconstruct_cs, reconstruct_lr, DictionaryPair, SolveStatus, SolverConfig};

/// A non-negative scalar field at some layer's resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub layer_index: usize,
    pub normalized: bool,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, layer_index: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return param("saliency map dimensions must be positive");
        }
        if values.len() != width * height {
            return param(format!("{} values do not fill a {width}x{height} map", values.len()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return data(format!("saliency value {v} is not finite and non-negative"));
        }
        Ok(Self { width, height, values, layer_index, normalized: false })
    }

    pub fn zeros(width: usize, height: usize, layer_index: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height], layer_index, normalized: false }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Bilinear resampling; a no-op when the size already matches.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let values = resize_bilinear(&self.values, self.width, self.height, width, height)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        Self { width, height, values, layer_index: self.layer_index, normalized: false }
    }

    /// Min-max scaling to `[0, 1]`; constant maps become all zeros.
    pub fn normalized(mut self) -> Self {
        normalize_min_max(&mut self.values);
        self.normalized = true;
        self
    }
}

/// Value spans at or below this are treated as constant.
pub const SPAN_FLOOR: f64 = 1e-12;

pub fn normalize_min_max(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    if !(span > SPAN_FLOOR) {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - lo) / span);
    }
}

/// Coarse-to-fine reconstruction method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Output the blurred patch unchanged.
    Lr,
    /// Bicubic interpolation of the downsampled patch.
    Bi,
    /// Sparse coding over a raw-patch dictionary.
    Cs,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lr, Method::Bi, Method::Cs];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lr => "lr",
            Method::Bi => "bi",
            Method::Cs => "cs",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(Method::Lr),
            "bi" => Ok(Method::Bi),
            "cs" => Ok(Method::Cs),
            other => param(format!("unknown reconstruction method `{other}` (expected lr, bi or cs)")),
        }
    }
}

/// Normalised squared reconstruction error; zero for (near) zero-energy
/// targets.
pub fn nmse(x_hat: &[f64], x: &[f64]) -> Result<f64> {
    if x_hat.len() != x.len() {
        return param(format!("nmse of vectors with lengths {} and {}", x_hat.len(), x.len()));
    }
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy < 1e-12 {
        return Ok(0.0);
    }
    let err: f64 = x_hat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(err / energy)
}

/// Knobs for [`compute_layer_saliency`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSaliencyParams {
    /// Spacing of the evaluated lattice; other pixels are interpolated.
    pub stride: usize,
    pub solver: SolverConfig,
    /// Post-blur sigma in pixels; `None` uses 2.5% of the layer width.
    pub blur_sigma: Option<f64>,
}

impl Default for LayerSaliencyParams {
    fn default() -> Self {
        Self { stride: 3, solver: SolverConfig::default(), blur_sigma: None }
    }
}

impl LayerSaliencyParams {
    pub fn blur_sigma_for(&self, width: usize) -> f64 {
        self.blur_sigma.unwrap_or(0.025 * width as f64)
    }
}

/// Lattice coordinates `0, s, 2s, ...` always including the last index.
fn lattice(len: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..len).step_by(stride).collect();
    if *v.last().expect("len > 0") != len - 1 {
        v.push(len - 1);
    }
    v
}

/// For each position, the bracketing lattice indices and interpolation weight.
fn brackets(len: usize, points: &[usize]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(len);
    let mut k = 0;
    for p in 0..len {
        while k + 1 < points.len() && points[k + 1] <= p {
            k += 1;
        }
        if points[k] == p || k + 1 == points.len() {
            out.push((k, k, 0.0));
        } else {
            let t = (p - points[k]) as f64 / (points[k + 1] - points[k]) as f64;
            out.push((k, k + 1, t));
        }
    }
    out
}

/// Counts of patches whose solver hit its iteration limit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SaliencyStats {
    pub patches: usize,
    pub unconverged: usize,
}

/// Unblurred, unnormalised per-pixel NMSE (the `M~` field).
pub fn raw_layer_saliency(
    layer: &ImagePlane,
    layer_index: usize,
    dict: Option<&DictionaryPair>,
    op: &DegradeOperator,
    method: Method,
    params: &LayerSaliencyParams,
) -> Result<(SaliencyMap, SaliencyStats)> {
    if params.stride == 0 {
        return param("stride must be at least 1");
    }
    if layer.channels() != op.channels() {
        return param(format!(
            "layer has {} channels, degrade operator expects {}",
            layer.channels(),
            op.channels()
        ));
    }
    if op.patch_side() % 2 == 0 {
        return param("patch side must be odd");
    }
    match method {
        Method::Lr if op.down_factor() != 1 => {
            return param("linear reconstruction needs a blur-only operator (downsample factor 1)")
        }
        Method::Cs => {
            let d = dict.ok_or_else(|| Error::Parameter("sparse reconstruction needs a dictionary".into()))?;
            if d.op() != op {
                return param("dictionary was built with a different degrade operator");
            }
            params.solver.validate()?;
        }
        _ => {}
    }

    let (w, h) = (layer.width(), layer.height());
    let rows = lattice(h, params.stride);
    let cols = lattice(w, params.stride);

    let evaluated: Vec<(Vec<f64>, usize)> = rows
        .par_iter()
        .map(|&r| -> Result<(Vec<f64>, usize)> {
            let mut hi = vec![0.0; op.hi_len()];
            let mut lo = vec![0.0; op.lo_len()];
            let mut out = Vec::with_capacity(cols.len());
            let mut unconverged = 0;
            for &c in &cols {
                extract_patch_into(layer, (r, c), op.patch_side(), &mut hi)?;
                op.degrade_into(&hi, &mut lo)?;
                let recon = match method {
                    Method::Lr => reconstruct_lr(&lo, op)?,
                    Method::Bi => reconstruct_bi(&lo, op.patch_side(), op.down_factor())?,
                    Method::Cs => {
                        let d = dict.expect("checked above");
                        let (x, code) = reconstruct_cs(d, &lo, &params.solver)?;
                        if code.status == SolveStatus::IterationLimit {
                            unconverged += 1;
                        }
                        x
                    }
                };
                out.push(nmse(&recon, &hi)?);
            }
            Ok((out, unconverged))
        })
        .collect::<Result<_>>()?;

    let stats = SaliencyStats {
        patches: rows.len() * cols.len(),
        unconverged: evaluated.iter().map(|(_, u)| u).sum(),
    };
    if stats.unconverged > 0 {
        log::debug!(
            "layer {layer_index}: {} of {} patches hit the solver iteration limit",
            stats.unconverged,
            stats.patches
        );
    }

    let grid: Vec<&[f64]> = evaluated.iter().map(|(v, _)| v.as_slice()).collect();
    let rb = brackets(h, &rows);
    let cb = brackets(w, &cols);
    let mut values = Vec::with_capacity(w * h);
    for &(r0, r1, ty) in &rb {
        for &(c0, c1, tx) in &cb {
            let top = grid[r0][c0] * (1.0 - tx) + grid[r0][c1] * tx;
            let bot = grid[r1][c0] * (1.0 - tx) + grid[r1][c1] * tx;
            values.push(top * (1.0 - ty) + bot * ty);
        }
    }
    Ok((SaliencyMap::new(w, h, values, layer_index)?, stats))
}

/// Full per-layer map: raw NMSE field, Gaussian blur, min-max scaling.
pub fn compute_layer_saliency(
    layer: &ImagePlane,
    layer_index: usize,
    dict: Option<&DictionaryPair>,
    op: &DegradeOperator,
    method: Method,
    params: &LayerSaliencyParams,
) -> Result<SaliencyMap> {
    let (raw, _) = raw_layer_saliency(layer, layer_index, dict, op, method, params)?;
    postprocess(&raw, params.blur_sigma_for(layer.width()))
}

/// Gaussian blur (skipped when `blur_sigma == 0`) followed by min-max
/// normalisation.
pub fn postprocess(map: &SaliencyMap, blur_sigma: f64) -> Result<SaliencyMap> {
    if !(blur_sigma >= 0.0) || !blur_sigma.is_finite() {
        return param(format!("blur sigma must be non-negative, got {blur_sigma}"));
    }
    let values = if blur_sigma > 0.0 {
        blur_plane(&map.values, map.width, map.height, blur_sigma)
    } else {
        map.values.clone()
    };
    let out = SaliencyMap {
        width: map.width,
        height: map.height,
        values,
        layer_index: map.layer_index,
        normalized: false,
    };
    Ok(out.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_sr::{build_dictionary, DictionaryOptions};

    #[test]
    fn nmse_trivia() {
        let x = [0.2, -0.4, 0.9];
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        assert_eq!(nmse(&[0.0; 3], &x).unwrap(), 1.0);
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!((nmse(&doubled, &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmse(&[1.0; 3], &[0.0; 3]).unwrap(), 0.0);
        assert!(nmse(&[1.0; 2], &x).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("CS".parse::<Method>().unwrap(), Method::Cs);
        assert_eq!(Method::Bi.to_string(), "bi");
        assert!("xx".parse::<Method>().is_err());
    }

    #[test]
    fn lattice_covers_edges() {
        assert_eq!(lattice(10, 3), vec![0, 3, 6, 9]);
        assert_eq!(lattice(11, 3), vec![0, 3, 6, 9, 10]);
        assert_eq!(lattice(1, 3), vec![0]);
        let b = brackets(11, &lattice(11, 3));
        assert_eq!(b[4], (1, 2, 1.0 / 3.0));
        assert_eq!(b[10], (4, 4, 0.0));
    }

    #[test]
    fn constant_layer_has_zero_saliency_for_every_method() {
        let layer = ImagePlane::constant(30, 24, 3, 0.45).unwrap();
        let op = DegradeOperator::new(9, 3.0, 3, 3).unwrap();
        let dict = build_dictionary(&[&layer], &op, DictionaryOptions { size: 50, ..Default::default() }).unwrap();
        let params = LayerSaliencyParams::default();
        for (method, op) in [(Method::Lr, op.blur_only()), (Method::Bi, op.clone()), (Method::Cs, op.clone())] {
            let d = (method == Method::Cs).then_some(&dict);
            let (raw, _) = raw_layer_saliency(&layer, 0, d, &op, method, &params).unwrap();
            // the l1 penalty leaves a small uniform bias in CS reconstructions
            let mx = raw.values.iter().cloned().fold(0.0, f64::max);
            let mn = raw.values.iter().cloned().fold(f64::INFINITY, f64::min);
            let bound = if method == Method::Cs { 1e-4 } else { 1e-12 };
            assert!(mx < bound && mx - mn < 1e-12, "{method} {mx}");
            let m = compute_layer_saliency(&layer, 0, d, &op, method, &params).unwrap();
            assert!(m.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn method_preconditions() {
        let layer = ImagePlane::constant(12, 12, 1, 0.5).unwrap();
        let op = DegradeOperator::new(9, 3.0, 3, 1).unwrap();
        let p = LayerSaliencyParams::default();
        assert!(raw_layer_saliency(&layer, 0, None, &op, Method::Lr, &p).is_err());
        assert!(raw_layer_saliency(&layer, 0, None, &op, Method::Cs, &p).is_err());
        let rgb = DegradeOperator::new(9, 3.0, 3, 3).unwrap();
        assert!(raw_layer_saliency(&layer, 0, None, &rgb, Method::Bi, &p).is_err());
        let zero_stride = LayerSaliencyParams { stride: 0, ..p };
        assert!(raw_layer_saliency(&layer, 0, None, &op, Method::Bi, &zero_stride).is_err());
    }

    #[test]
    fn postprocess_rules() {
        let flat = SaliencyMap::new(4, 3, vec![0.7; 12], 0).unwrap();
        assert!(postprocess(&flat, 1.0).unwrap().values.iter().all(|&v| v == 0.0));

        let mut v = vec![0.0; 81];
        v[40] = 5.0;
        let impulse = SaliencyMap::new(9, 9, v, 1).unwrap();
        let out = postprocess(&impulse, 1.5).unwrap();
        assert_eq!(out.values[40], 1.0);
        assert!(out.values[41] > 0.0 && out.values[41] < 1.0);
        assert!(out.normalized);

        let ramp = SaliencyMap::new(3, 1, vec![1.0, 2.0, 3.0], 0).unwrap();
        assert_eq!(postprocess(&ramp, 0.0).unwrap().values, vec![0.0, 0.5, 1.0]);
        assert!(postprocess(&ramp, -1.0).is_err());
    }

    #[test]
    fn saliency_map_validation() {
        assert!(SaliencyMap::new(2, 2, vec![0.0; 3], 0).is_err());
        assert!(SaliencyMap::new(2, 1, vec![0.0, -1.0], 0).is_err());
        assert!(SaliencyMap::new(2, 1, vec![0.0, f64::NAN], 0).is_err());
    }
}
