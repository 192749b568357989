//! Patch extraction and the blur-then-downsample degradation `x_l = G B x_h`.
//!
//! Patch vectors are channel-major: the `H x H` row-major window of channel 0,
//! followed by channel 1, and so on.

use crate::error::{param, Result};
use crate::image_core::{blur_plane, downsample_plane, ImagePlane};

/// Extracts the `side x side` window centred at `(row, col)`, replicating
/// edge pixels where the window leaves the image.
pub fn extract_patch(layer: &ImagePlane, center: (usize, usize), side: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; side * side * layer.channels()];
    extract_patch_into(layer, center, side, &mut out)?;
    Ok(out)
}

pub fn extract_patch_into(
    layer: &ImagePlane,
    center: (usize, usize),
    side: usize,
    out: &mut [f64],
) -> Result<()> {
    if side % 2 == 0 || side == 0 {
        return param(format!("patch side must be odd, got {side}"));
    }
    let (row, col) = center;
    if row >= layer.height() || col >= layer.width() {
        return param(format!(
            "patch centre ({row}, {col}) outside {}x{} image",
            layer.width(),
            layer.height()
        ));
    }
    if out.len() != side * side * layer.channels() {
        return param("patch buffer has the wrong length");
    }
    let half = (side / 2) as isize;
    let mut i = 0;
    for c in 0..layer.channels() {
        for dr in -half..=half {
            for dc in -half..=half {
                out[i] = layer.get_clamped(c, row as isize + dr, col as isize + dc);
                i += 1;
            }
        }
    }
    Ok(())
}

/// The linear map `G B` acting on patch vectors: a per-channel Gaussian blur
/// of the `H x H` patch followed by `g x g` block averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradeOperator {
    patch_side: usize,
    blur_sigma: f64,
    down_factor: usize,
    channels: usize,
    // per-channel (L*L) x (H*H) matrix, row-major
    matrix: Vec<f64>,
}

impl DegradeOperator {
    pub fn new(patch_side: usize, blur_sigma: f64, down_factor: usize, channels: usize) -> Result<Self> {
        if patch_side == 0 {
            return param("patch side must be positive");
        }
        if !(blur_sigma > 0.0) || !blur_sigma.is_finite() {
            return param(format!("degrade blur sigma must be positive, got {blur_sigma}"));
        }
        if down_factor == 0 || patch_side % down_factor != 0 {
            return param(format!(
                "patch side {patch_side} is not divisible by downsample factor {down_factor}"
            ));
        }
        if channels == 0 {
            return param("channel count must be positive");
        }
        let hi = patch_side * patch_side;
        let lo_side = patch_side / down_factor;
        let lo = lo_side * lo_side;
        // Columns are the responses to unit impulses.
        let mut matrix = vec![0.0; lo * hi];
        let mut impulse = vec![0.0; hi];
        for j in 0..hi {
            impulse[j] = 1.0;
            let blurred = blur_plane(&impulse, patch_side, patch_side, blur_sigma);
            let column = downsample_plane(&blurred, patch_side, patch_side, down_factor);
            for (i, v) in column.into_iter().enumerate() {
                matrix[i * hi + j] = v;
            }
            impulse[j] = 0.0;
        }
        Ok(Self { patch_side, blur_sigma, down_factor, channels, matrix })
    }

    /// Same blur, no downsampling (`x_l = B x_h`).
    pub fn blur_only(&self) -> Self {
        Self::new(self.patch_side, self.blur_sigma, 1, self.channels)
            .expect("parameters already validated")
    }

    pub fn patch_side(&self) -> usize {
        self.patch_side
    }

    pub fn blur_sigma(&self) -> f64 {
        self.blur_sigma
    }

    pub fn down_factor(&self) -> usize {
        self.down_factor
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn lo_side(&self) -> usize {
        self.patch_side / self.down_factor
    }

    pub fn hi_len(&self) -> usize {
        self.patch_side * self.patch_side * self.channels
    }

    pub fn lo_len(&self) -> usize {
        self.lo_side() * self.lo_side() * self.channels
    }

    pub fn degrade(&self, hi: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.lo_len()];
        self.degrade_into(hi, &mut out)?;
        Ok(out)
    }

    pub fn degrade_into(&self, hi: &[f64], out: &mut [f64]) -> Result<()> {
        if hi.len() != self.hi_len() {
            return param(format!(
                "patch length {} does not match {} ({}x{}x{})",
                hi.len(),
                self.hi_len(),
                self.patch_side,
                self.patch_side,
                self.channels
            ));
        }
        if out.len() != self.lo_len() {
            return param("low-resolution buffer has the wrong length");
        }
        let h2 = self.patch_side * self.patch_side;
        let l2 = self.lo_side() * self.lo_side();
        for c in 0..self.channels {
            let src = &hi[c * h2..(c + 1) * h2];
            for i in 0..l2 {
                let row = &self.matrix[i * h2..(i + 1) * h2];
                out[c * l2 + i] = row.iter().zip(src).map(|(a, b)| a * b).sum();
            }
        }
        Ok(())
    }
}
