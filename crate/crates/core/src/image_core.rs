//! Float image planes, Gaussian blurring, block-mean downsampling and the
//! coarse-to-fine pyramid.
//!
//! Samples are stored planar: channel `c`, row `r`, column `x` lives at
//! `c * width * height + r * width + x`. Every border access uses edge
//! replication.

use std::path::Path;

use crate::error::{data, param, Result};

/// A float image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    /// Builds a plane from planar samples, validating the sample range.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return param(format!("image dimensions must be positive, got {width}x{height}"));
        }
        if channels != 1 && channels != 3 {
            return param(format!("images have 1 or 3 channels, got {channels}"));
        }
        if data.len() != width * height * channels {
            return param(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                data.len()
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return data_err_sample(*bad);
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds a plane by evaluating `f(channel, row, col)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for r in 0..height {
                for x in 0..width {
                    data.push(f(c, r, x));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[c * self.width * self.height + row * self.width + col]
    }

    /// Three-channel copy; greyscale planes are replicated.
    pub fn to_rgb(&self) -> ImagePlane {
        if self.channels == 3 {
            return self.clone();
        }
        Self { width: self.width, height: self.height, channels: 3, data: self.data.repeat(3) }
    }

    /// Sample lookup with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, c: usize, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let x = col.clamp(0, self.width as isize - 1) as usize;
        self.get(c, r, x)
    }

    // Internal constructor for outputs of range-preserving operations.
    fn from_parts(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Self {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self { width, height, channels, data }
    }
}

fn data_err_sample<T>(v: f64) -> Result<T> {
    data(format!("image sample {v} is not a finite value in [0, 1]"))
}

/// Decodes PNG/JPEG/BMP into a plane; colour images become 3 channels,
/// greyscale images 1 channel. 8-bit samples are divided by 255.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let img = image::open(path.as_ref())?;
    let (channels, raw): (usize, Vec<Vec<f64>>) = if img.color().has_color() {
        let rgb = img.to_rgb8();
        let mut planes = vec![Vec::new(), Vec::new(), Vec::new()];
        for p in rgb.pixels() {
            for (c, plane) in planes.iter_mut().enumerate() {
                plane.push(p.0[c] as f64 / 255.0);
            }
        }
        (3, planes)
    } else {
        let luma = img.to_luma8();
        (1, vec![luma.pixels().map(|p| p.0[0] as f64 / 255.0).collect()])
    };
    ImagePlane::new(
        img.width() as usize,
        img.height() as usize,
        channels,
        raw.concat(),
    )
}

/// Normalised 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur of a single `width x height` plane.
pub fn blur_plane(src: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    debug_assert_eq!(src.len(), width * height);
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (width as isize, height as isize);

    let mut tmp = vec![0.0; src.len()];
    for r in 0..height {
        let row = &src[r * width..(r + 1) * width];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, k) in kernel.iter().enumerate() {
                let sx = (x + t as isize - radius).clamp(0, w - 1) as usize;
                acc += k * row[sx];
            }
            tmp[r * width + x as usize] = acc;
        }
    }

    let mut out = vec![0.0; src.len()];
    for r in 0..h {
        for x in 0..width {
            let mut acc = 0.0;
            for (t, k) in kernel.iter().enumerate() {
                let sr = (r + t as isize - radius).clamp(0, h - 1) as usize;
                acc += k * tmp[sr * width + x];
            }
            out[r as usize * width + x] = acc;
        }
    }
    out
}

/// Block-mean downsampling of a single plane; trailing rows/columns that do
/// not fill a whole block are discarded.
pub fn downsample_plane(src: &[f64], width: usize, height: usize, factor: usize) -> Vec<f64> {
    let (ow, oh) = (width / factor, height / factor);
    let area = (factor * factor) as f64;
    let mut out = Vec::with_capacity(ow * oh);
    for r in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for dr in 0..factor {
                let base = (r * factor + dr) * width + x * factor;
                acc += src[base..base + factor].iter().sum::<f64>();
            }
            out.push(acc / area);
        }
    }
    out
}

/// Bilinear resampling with pixel-centre alignment and edge replication.
pub fn resize_bilinear(
    src: &[f64],
    width: usize,
    height: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<f64> {
    if width == new_width && height == new_height {
        return src.to_vec();
    }
    let sx = width as f64 / new_width as f64;
    let sy = height as f64 / new_height as f64;
    let mut out = Vec::with_capacity(new_width * new_height);
    for r in 0..new_height {
        let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(height - 1);
        let ty = fy - y0 as f64;
        for x in 0..new_width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(width - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * width + x0] * (1.0 - tx) + src[y0 * width + x1] * tx;
            let bot = src[y1 * width + x0] * (1.0 - tx) + src[y1 * width + x1] * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Blurs every channel with a normalised Gaussian of standard deviation `sigma`.
pub fn gaussian_blur(img: &ImagePlane, sigma: f64) -> Result<ImagePlane> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return param(format!("blur sigma must be positive, got {sigma}"));
    }
    let data = (0..img.channels)
        .flat_map(|c| blur_plane(img.channel(c), img.width, img.height, sigma))
        .collect();
    Ok(ImagePlane::from_parts(img.width, img.height, img.channels, data))
}

/// Averages `factor x factor` blocks; output dims are `floor(dim / factor)`.
pub fn downsample(img: &ImagePlane, factor: usize) -> Result<ImagePlane> {
    if factor < 1 {
        return param("downsample factor must be at least 1");
    }
    if img.width < factor || img.height < factor {
        return param(format!(
            "{}x{} image is smaller than downsample factor {factor}",
            img.width, img.height
        ));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let data = (0..img.channels)
        .flat_map(|c| downsample_plane(img.channel(c), img.width, img.height, factor))
        .collect();
    Ok(ImagePlane::from_parts(
        img.width / factor,
        img.height / factor,
        img.channels,
        data,
    ))
}

/// How pyramid layers are produced from the raw image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidOptions {
    /// Blur with `sigma = factor / 2` before downsampling.
    pub anti_alias: bool,
}

impl Default for PyramidOptions {
    fn default() -> Self {
        Self { anti_alias: true }
    }
}

/// Coarse-to-fine stack of downsampled images. Layer 0 is the coarsest.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub layers: Vec<ImagePlane>,
    pub factors: Vec<usize>,
}

impl Pyramid {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn finest(&self) -> &ImagePlane {
        self.layers.last().expect("pyramid has at least one layer")
    }
}

pub fn build_pyramid(img: &ImagePlane, factors: &[usize], opts: PyramidOptions) -> Result<Pyramid> {
    if factors.is_empty() {
        return param("pyramid needs at least one factor");
    }
    if factors.iter().any(|&f| f < 1) {
        return param("pyramid factors must be at least 1");
    }
    if factors.windows(2).any(|w| w[0] <= w[1]) {
        return param(format!("pyramid factors must be strictly decreasing, got {factors:?}"));
    }
    let layers = factors
        .iter()
        .map(|&f| {
            if opts.anti_alias {
                downsample(&gaussian_blur(img, f as f64 / 2.0)?, f)
            } else {
                downsample(img, f)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pyramid { layers, factors: factors.to_vec() })
}
