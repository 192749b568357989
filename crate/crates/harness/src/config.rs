//! Run configuration: a flat `key = value` text file whose keys mirror
//! [`RunConfig`]'s fields. Every CLI flag is an override of one key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rhm_core::eval_metrics::{EvalFrame, MetricOptions};
use rhm_core::fixation_sampler::{default_lambda, SamplerParams};
use rhm_core::image_core::PyramidOptions;
use rhm_core::saliency_map::{LayerSaliencyParams, Method};
use rhm_core::sparse_sr::SolverConfig;
use rhm_core::{Error, Result};

/// Where each layer's dictionary is sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictScope {
    /// One dictionary per layer from all images of the dataset.
    Dataset,
    /// One dictionary per layer per image.
    Image,
}

impl fmt::Display for DictScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DictScope::Dataset => "dataset",
            DictScope::Image => "image",
        })
    }
}

impl FromStr for DictScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(DictScope::Dataset),
            "image" => Ok(DictScope::Image),
            _ => Err(Error::Parameter(format!("dict_scope must be `dataset` or `image`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub factors: Vec<usize>,
    pub patch: usize,
    pub degrade_sigma: f64,
    pub degrade_factor: usize,
    pub anti_alias: bool,
    pub dict_size: usize,
    pub dict_scope: DictScope,
    pub mean_center: bool,
    pub solver: SolverConfig,
    pub stride: usize,
    /// `None` is 2.5% of each layer's width.
    pub layer_blur: Option<f64>,
    pub method: Method,
    pub eta: f64,
    /// `None` derives the coherence weight from `eta` and the layer ratio.
    pub lambda: Option<f64>,
    pub theta: f64,
    pub chains: usize,
    pub seed: u64,
    pub fixation_blur: f64,
    pub frame: EvalFrame,
    pub histogram_match: bool,
    pub max_images: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            factors: vec![27, 9, 3],
            patch: 9,
            degrade_sigma: 3.0,
            degrade_factor: 3,
            anti_alias: true,
            dict_size: 1000,
            dict_scope: DictScope::Dataset,
            mean_center: false,
            solver: SolverConfig::default(),
            stride: 3,
            layer_blur: None,
            method: Method::Cs,
            eta: 10.0,
            lambda: None,
            theta: 0.0,
            chains: 20000,
            seed: 0,
            fixation_blur: 4.0,
            frame: EvalFrame::Map,
            histogram_match: true,
            max_images: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parameter(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Parameter(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_auto(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl RunConfig {
    /// Every recognised key, in file order.
    pub const KEYS: &'static [&'static str] = &[
        "factors",
        "patch",
        "degrade_sigma",
        "degrade_factor",
        "anti_alias",
        "dict_size",
        "dict_scope",
        "mean_center",
        "epsilon",
        "lasso_weight",
        "max_iterations",
        "convergence_tol",
        "stride",
        "layer_blur",
        "method",
        "eta",
        "lambda",
        "theta",
        "chains",
        "seed",
        "fixation_blur",
        "frame",
        "histogram_match",
        "max_images",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "factors" => {
                self.factors = value
                    .split(',')
                    .map(|f| parse(key, f.trim()))
                    .collect::<Result<_>>()?
            }
            "patch" => self.patch = parse(key, value)?,
            "degrade_sigma" => self.degrade_sigma = parse(key, value)?,
            "degrade_factor" => self.degrade_factor = parse(key, value)?,
            "anti_alias" => self.anti_alias = parse_bool(key, value)?,
            "dict_size" => self.dict_size = parse(key, value)?,
            "dict_scope" => self.dict_scope = value.parse()?,
            "mean_center" => self.mean_center = parse_bool(key, value)?,
            "epsilon" => self.solver.epsilon = parse(key, value)?,
            "lasso_weight" => self.solver.lasso_weight = parse(key, value)?,
            "max_iterations" => self.solver.max_iterations = parse(key, value)?,
            "convergence_tol" => self.solver.convergence_tol = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "layer_blur" => self.layer_blur = parse_auto(key, value)?,
            "method" => self.method = value.parse()?,
            "eta" => self.eta = parse(key, value)?,
            "lambda" => self.lambda = parse_auto(key, value)?,
            "theta" => self.theta = parse(key, value)?,
            "chains" => self.chains = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "fixation_blur" => self.fixation_blur = parse(key, value)?,
            "frame" => {
                self.frame = match value {
                    "map" => EvalFrame::Map,
                    "image" => EvalFrame::Image,
                    _ => return Err(Error::Parameter(format!("frame must be `map` or `image`, got `{value}`"))),
                }
            }
            "histogram_match" => self.histogram_match = parse_bool(key, value)?,
            "max_images" => {
                self.max_images = if value == "all" { None } else { Some(parse(key, value)?) }
            }
            _ => return Err(Error::Parameter(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "factors" => self.factors.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
            "patch" => self.patch.to_string(),
            "degrade_sigma" => self.degrade_sigma.to_string(),
            "degrade_factor" => self.degrade_factor.to_string(),
            "anti_alias" => self.anti_alias.to_string(),
            "dict_size" => self.dict_size.to_string(),
            "dict_scope" => self.dict_scope.to_string(),
            "mean_center" => self.mean_center.to_string(),
            "epsilon" => self.solver.epsilon.to_string(),
            "lasso_weight" => self.solver.lasso_weight.to_string(),
            "max_iterations" => self.solver.max_iterations.to_string(),
            "convergence_tol" => self.solver.convergence_tol.to_string(),
            "stride" => self.stride.to_string(),
            "layer_blur" => show_auto(self.layer_blur),
            "method" => self.method.to_string(),
            "eta" => self.eta.to_string(),
            "lambda" => show_auto(self.lambda),
            "theta" => self.theta.to_string(),
            "chains" => self.chains.to_string(),
            "seed" => self.seed.to_string(),
            "fixation_blur" => self.fixation_blur.to_string(),
            "frame" => match self.frame {
                EvalFrame::Map => "map".to_string(),
                EvalFrame::Image => "image".to_string(),
            },
            "histogram_match" => self.histogram_match.to_string(),
            "max_images" => self.max_images.map_or_else(|| "all".to_string(), |n| n.to_string()),
            _ => return None,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parameter(format!("config line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| Error::Parameter(format!("config line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    pub fn to_text(&self) -> String {
        self.to_map().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        Self::KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    /// Caps the image count at 30 and the lattice stride at no less than 3.
    pub fn apply_desk_scale(&mut self) {
        self.max_images = Some(self.max_images.map_or(30, |n| n.min(30)));
        self.stride = self.stride.max(3);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.factors.is_empty() || self.factors.contains(&0) || self.factors.windows(2).any(|w| w[0] <= w[1]) {
            return bad(format!("factors must be positive and strictly decreasing, got {:?}", self.factors));
        }
        if self.patch % 2 == 0 || self.degrade_factor == 0 || self.patch % self.degrade_factor != 0 {
            return bad(format!(
                "patch ({}) must be odd and divisible by degrade_factor ({})",
                self.patch, self.degrade_factor
            ));
        }
        if !(self.degrade_sigma > 0.0) {
            return bad("degrade_sigma must be positive".into());
        }
        if self.dict_size == 0 || self.stride == 0 || self.chains == 0 {
            return bad("dict_size, stride and chains must be at least 1".into());
        }
        if self.layer_blur.is_some_and(|s| !(s >= 0.0)) || !(self.fixation_blur >= 0.0) {
            return bad("blur sigmas must be non-negative".into());
        }
        if self.max_images == Some(0) {
            return bad("max_images must be at least 1".into());
        }
        self.solver.validate()?;
        self.sampler(0).validate()
    }

    pub fn pyramid_options(&self) -> PyramidOptions {
        PyramidOptions { anti_alias: self.anti_alias }
    }

    pub fn layer_params(&self) -> LayerSaliencyParams {
        LayerSaliencyParams { stride: self.stride, solver: self.solver, blur_sigma: self.layer_blur }
    }

    /// Ratio between consecutive pyramid factors (3 for a single layer).
    pub fn scale_ratio(&self) -> f64 {
        match self.factors.as_slice() {
            [a, b, ..] => *a as f64 / *b as f64,
            _ => 3.0,
        }
    }

    pub fn sampler(&self, seed: u64) -> SamplerParams {
        SamplerParams {
            eta: self.eta,
            lambda: self.lambda.unwrap_or_else(|| default_lambda(self.eta, self.scale_ratio())),
            theta: self.theta,
            num_chains: self.chains,
            seed,
        }
    }

    pub fn metric_options(&self) -> MetricOptions {
        MetricOptions { frame: self.frame, fixation_blur: self.fixation_blur, histogram_match: self.histogram_match }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("factors", "16, 4").unwrap();
        cfg.set("lambda", "0.25").unwrap();
        cfg.set("method", "bi").unwrap();
        cfg.set("max_images", "5").unwrap();
        let back = RunConfig::parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::parse_text(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }

    #[test]
    fn comments_blank_lines_and_errors() {
        let cfg = RunConfig::parse_text("# defaults\n\nseed = 7  # trailing\nframe=image\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.frame, EvalFrame::Image);
        assert!(RunConfig::parse_text("colour = red").is_err());
        assert!(RunConfig::parse_text("seed").is_err());
        assert!(RunConfig::parse_text("stride = -1").is_err());
        assert!(RunConfig::parse_text("factors = 3,9").is_err());
        assert!(RunConfig::parse_text("patch = 8").is_err());
    }

    #[test]
    fn derived_lambda_and_desk_scale() {
        let mut cfg = RunConfig::default();
        assert!((cfg.sampler(0).lambda - 10.0 * 0.5 / 9.0).abs() < 1e-15);
        cfg.stride = 1;
        cfg.apply_desk_scale();
        assert_eq!((cfg.max_images, cfg.stride), (Some(30), 3));
        cfg.max_images = Some(10);
        cfg.apply_desk_scale();
        assert_eq!(cfg.max_images, Some(10));
    }
}
