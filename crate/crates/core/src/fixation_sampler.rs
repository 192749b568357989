//! Top-down propagation of attention through the saliency-map hierarchy.
//!
//! Attention on the coarsest map is drawn from a softmax of its saliency
//! (plus an optional prior). Each finer layer is then drawn from a softmax
//! of its own saliency plus a coherence term penalising the squared
//! distance to the previous layer's attention point, mapped into the finer
//! frame. Samples on the finest layer form the fixation prediction.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{param, Result};
use crate::image_core::blur_plane;
use crate::saliency_map::SaliencyMap;

/// `(row, col)` in some map's pixel frame.
pub type Coord = (usize, usize);

/// One attention point per layer, index 0 on the coarsest map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionChain {
    pub coords: Vec<Coord>,
}

impl AttentionChain {
    pub fn finest(&self) -> Coord {
        *self.coords.last().expect("chains are never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerParams {
    /// Weight of the saliency value in every softmax.
    pub eta: f64,
    /// Weight of the spatial coherence term.
    pub lambda: f64,
    /// Weight of the prior on the coarsest layer.
    pub theta: f64,
    pub num_chains: usize,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        let eta = 10.0;
        Self { eta, lambda: default_lambda(eta, 3.0), theta: 0.0, num_chains: 20000, seed: 0 }
    }
}

/// Coherence weight at which one inter-layer step of displacement costs as
/// much as a saliency difference of 0.5.
pub fn default_lambda(eta: f64, scale_ratio: f64) -> f64 {
    eta * 0.5 / (scale_ratio * scale_ratio)
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.eta) || !ok(self.lambda) || !ok(self.theta) {
            return param(format!("sampler weights must be finite and non-negative: {self:?}"));
        }
        if self.num_chains == 0 {
            return param("at least one chain is required");
        }
        Ok(())
    }
}

/// Additive log-prior over the coarsest map.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// A normalised distribution over the pixels of a `width x height` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    pub width: usize,
    pub height: usize,
    pub probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl ProbabilityGrid {
    /// Softmax of row-major `logits`.
    pub fn from_logits(width: usize, height: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != width * height || logits.is_empty() {
            return param("logit grid does not match its dimensions");
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return param("non-finite logit in sampling distribution");
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        probs.iter_mut().for_each(|p| *p /= acc);
        cumulative.iter_mut().for_each(|c| *c /= acc);
        Ok(Self { width, height, probs, cumulative })
    }

    pub fn prob(&self, (row, col): Coord) -> f64 {
        self.probs[row * self.width + col]
    }

    /// Inverse-CDF lookup for `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> Coord {
        let idx = self.cumulative.partition_point(|&c| c <= u).min(self.probs.len() - 1);
        (idx / self.width, idx % self.width)
    }
}

/// Negative squared Euclidean distance.
pub fn coherence(a: Coord, b: Coord) -> f64 {
    let dr = a.0 as f64 - b.0 as f64;
    let dc = a.1 as f64 - b.1 as f64;
    -(dr * dr + dc * dc)
}

/// Scales a coordinate between map frames, rounding and clamping.
pub fn map_coordinate_down(a_prev: Coord, from: &SaliencyMap, to: &SaliencyMap) -> Coord {
    map_between((from.width, from.height), (to.width, to.height), a_prev)
}

fn map_between(from: (usize, usize), to: (usize, usize), (row, col): Coord) -> Coord {
    let r = (row as f64 * to.1 as f64 / from.1 as f64).round() as usize;
    let c = (col as f64 * to.0 as f64 / from.0 as f64).round() as usize;
    (r.min(to.1 - 1), c.min(to.0 - 1))
}

/// `Pr[A_0 = (i, j)] ∝ exp(eta M_0[i, j] + theta P[i, j])`.
pub fn top_layer_distribution(
    m0: &SaliencyMap,
    prior: Option<&PriorMap>,
    params: &SamplerParams,
) -> Result<ProbabilityGrid> {
    let mut logits: Vec<f64> = m0.values.iter().map(|v| params.eta * v).collect();
    if let Some(p) = prior {
        if (p.width, p.height) != (m0.width, m0.height) {
            return param(format!(
                "prior is {}x{} but the coarsest map is {}x{}",
                p.width, p.height, m0.width, m0.height
            ));
        }
        for (l, v) in logits.iter_mut().zip(&p.values) {
            *l += params.theta * v;
        }
    }
    ProbabilityGrid::from_logits(m0.width, m0.height, &logits)
}

/// `Pr[A_k = (i, j) | A_{k-1}] ∝ exp(eta M_k[i, j] + lambda L((i, j), (u, v)))`
/// with `(u, v)` the previous attention point in this map's frame.
pub fn conditional_distribution(
    m_k: &SaliencyMap,
    a_prev_mapped: Coord,
    params: &SamplerParams,
) -> Result<ProbabilityGrid> {
    let (u, v) = a_prev_mapped;
    if u >= m_k.height || v >= m_k.width {
        return param(format!(
            "mapped coordinate ({u}, {v}) outside {}x{} map",
            m_k.width, m_k.height
        ));
    }
    let mut logits = Vec::with_capacity(m_k.values.len());
    for i in 0..m_k.height {
        for j in 0..m_k.width {
            logits.push(params.eta * m_k.get(i, j) + params.lambda * coherence((i, j), a_prev_mapped));
        }
    }
    ProbabilityGrid::from_logits(m_k.width, m_k.height, &logits)
}

/// Ancestral sampling of `params.num_chains` chains down `maps`
/// (coarse to fine).
///
/// Chain `i` draws its uniforms from a ChaCha8 stream keyed by
/// `(seed, i)`, one per layer, so the result does not depend on how the
/// work is scheduled. Chains sharing a parent location share one
/// materialised conditional grid.
pub fn sample_chains(
    maps: &[SaliencyMap],
    prior: Option<&PriorMap>,
    params: &SamplerParams,
) -> Result<Vec<AttentionChain>> {
    params.validate()?;
    if maps.is_empty() {
        return param("sampling needs at least one saliency map");
    }
    let n = params.num_chains;
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64);
            rng
        })
        .collect();

    let top = top_layer_distribution(&maps[0], prior, params)?;
    let mut coords: Vec<Vec<Coord>> = rngs
        .iter_mut()
        .map(|rng| {
            let mut v = Vec::with_capacity(maps.len());
            v.push(top.sample(rng.random()));
            v
        })
        .collect();

    for k in 1..maps.len() {
        let uniforms: Vec<f64> = rngs.iter_mut().map(|r| r.random()).collect();
        let mut groups: BTreeMap<Coord, Vec<usize>> = BTreeMap::new();
        for (i, chain) in coords.iter().enumerate() {
            let prev = *chain.last().expect("non-empty");
            groups.entry(map_coordinate_down(prev, &maps[k - 1], &maps[k])).or_default().push(i);
        }
        let groups: Vec<(Coord, Vec<usize>)> = groups.into_iter().collect();
        let draws: Vec<Vec<(usize, Coord)>> = groups
            .par_iter()
            .map(|(anchor, members)| {
                let grid = conditional_distribution(&maps[k], *anchor, params)?;
                Ok(members.iter().map(|&i| (i, grid.sample(uniforms[i]))).collect())
            })
            .collect::<Result<_>>()?;
        for (i, c) in draws.into_iter().flatten() {
            coords[i].push(c);
        }
    }
    Ok(coords.into_iter().map(|coords| AttentionChain { coords }).collect())
}

/// Histogram of the finest-layer samples on an `out_dims = (w, h)` grid,
/// blurred and min-max normalised. `finest_dims` is the frame the chain
/// coordinates live in.
pub fn accumulate_fixations(
    chains: &[AttentionChain],
    finest_dims: (usize, usize),
    out_dims: (usize, usize),
    blur_sigma: f64,
) -> Result<SaliencyMap> {
    if chains.is_empty() {
        return param("no chains to accumulate");
    }
    if !(blur_sigma >= 0.0) {
        return param("blur sigma must be non-negative");
    }
    let (ow, oh) = out_dims;
    let (fw, fh) = finest_dims;
    let mut hist = vec![0.0; ow * oh];
    for chain in chains {
        let (r, c) = chain.finest();
        let (r, c) = if out_dims == finest_dims {
            (r, c)
        } else {
            (
                (((r as f64 + 0.5) * oh as f64 / fh as f64) as usize).min(oh - 1),
                (((c as f64 + 0.5) * ow as f64 / fw as f64) as usize).min(ow - 1),
            )
        };
        hist[r * ow + c] += 1.0;
    }
    if blur_sigma > 0.0 {
        hist = blur_plane(&hist, ow, oh, blur_sigma);
    }
    let layer = chains[0].coords.len().saturating_sub(1);
    Ok(SaliencyMap::new(ow, oh, hist, layer)?.normalized())
}

/// Negative squared distance to the map centre, shifted so its maximum is 0
/// and scaled to unit span.
pub fn center_prior(width: usize, height: usize) -> Result<PriorMap> {
    if width == 0 || height == 0 {
        return param("prior dimensions must be positive");
    }
    let (cr, cc) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let mut values = Vec::with_capacity(width * height);
    for i in 0..height {
        for j in 0..width {
            let (dr, dc) = (i as f64 - cr, j as f64 - cc);
            values.push(-(dr * dr + dc * dc));
        }
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let span = max - min;
    for v in &mut values {
        *v = if span > 0.0 { (*v - max) / span } else { 0.0 };
    }
    Ok(PriorMap { width, height, values })
}

/// CSV with header `chain_id,layer,row,col`.
pub fn write_chains_csv(chains: &[AttentionChain], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "chain_id,layer,row,col")?;
    for (i, chain) in chains.iter().enumerate() {
        for (k, (r, c)) in chain.coords.iter().enumerate() {
            writeln!(w, "{i},{k},{r},{c}")?;
        }
    }
    w.flush()?;
    Ok(())
}
