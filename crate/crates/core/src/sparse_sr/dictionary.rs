use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{data, param, Result};
use crate::image_core::ImagePlane;
use crate::patch_ops::{extract_patch_into, DegradeOperator};
use crate::sparse_sr::solver::SensingMatrix;

const MAGIC: &[u8; 8] = b"RHMDICT1";

/// Paired raw high-resolution patches and their degraded counterparts.
///
/// Both matrices are stored column-major so each atom is contiguous.
#[derive(Debug, Clone)]
pub struct DictionaryPair {
    op: DegradeOperator,
    size: usize,
    seed: u64,
    mean_centered: bool,
    hi: Vec<f64>,
    lo: SensingMatrix,
}

/// Sampling options for [`build_dictionary`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictionaryOptions {
    pub size: usize,
    pub seed: u64,
    /// Subtract each atom's per-channel mean before degrading.
    pub mean_center: bool,
}

impl Default for DictionaryOptions {
    fn default() -> Self {
        Self { size: 1000, seed: 0, mean_center: false }
    }
}

/// Samples `opts.size` patch centres uniformly (with replacement) from every
/// position where a full patch fits, across all `images`. Sources too small
/// for any full patch (coarse layers of small images) fall back to every
/// pixel, with edge-replicated patches.
pub fn build_dictionary(
    images: &[&ImagePlane],
    op: &DegradeOperator,
    opts: DictionaryOptions,
) -> Result<DictionaryPair> {
    if opts.size == 0 {
        return param("dictionary size must be at least 1");
    }
    let side = op.patch_side();
    if side % 2 == 0 {
        return param(format!("patch side must be odd, got {side}"));
    }
    for img in images {
        if img.channels() != op.channels() {
            return param(format!(
                "image has {} channels, degrade operator expects {}",
                img.channels(),
                op.channels()
            ));
        }
    }
    let counts: Vec<usize> = images
        .iter()
        .map(|img| {
            if img.width() >= side && img.height() >= side {
                (img.width() - side + 1) * (img.height() - side + 1)
            } else {
                0
            }
        })
        .collect();
    let mut total: usize = counts.iter().sum();
    let padded = total == 0;
    let counts = if padded {
        log::debug!("no full {side}x{side} patch fits; sampling edge-replicated patches");
        images.iter().map(|img| img.width() * img.height()).collect()
    } else {
        counts
    };
    if padded {
        total = counts.iter().sum();
    }
    if total == 0 {
        return data("dictionary sources are empty");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let half = side / 2;
    let hi_len = op.hi_len();
    let mut hi = vec![0.0; hi_len * opts.size];
    for atom in hi.chunks_exact_mut(hi_len) {
        let mut k = rng.random_range(0..total);
        let mut which = 0;
        while k >= counts[which] {
            k -= counts[which];
            which += 1;
        }
        let img = images[which];
        let center = if padded {
            (k / img.width(), k % img.width())
        } else {
            let span = img.width() - side + 1;
            (k / span + half, k % span + half)
        };
        extract_patch_into(img, center, side, atom)?;
        if opts.mean_center {
            center_channels(atom, op.channels());
        }
    }
    DictionaryPair::from_atoms(op.clone(), hi, opts.size, opts.seed, opts.mean_center)
}

/// Subtracts the per-channel mean from a channel-major patch vector,
/// returning the removed means.
pub fn center_channels(v: &mut [f64], channels: usize) -> Vec<f64> {
    let n = v.len() / channels;
    v.chunks_exact_mut(n)
        .map(|ch| {
            let m = ch.iter().sum::<f64>() / n as f64;
            ch.iter_mut().for_each(|x| *x -= m);
            m
        })
        .collect()
}

impl DictionaryPair {
    /// Builds a pair from column-major high-resolution atoms.
    pub fn from_atoms(
        op: DegradeOperator,
        hi: Vec<f64>,
        size: usize,
        seed: u64,
        mean_centered: bool,
    ) -> Result<Self> {
        let (hi_len, lo_len) = (op.hi_len(), op.lo_len());
        if hi.len() != hi_len * size {
            return param("atom matrix does not match dictionary shape");
        }
        let mut lo = vec![0.0; lo_len * size];
        for (h, l) in hi.chunks_exact(hi_len).zip(lo.chunks_exact_mut(lo_len)) {
            op.degrade_into(h, l)?;
        }
        let lo = SensingMatrix::from_columns(lo_len, size, lo)?;
        Ok(Self { op, size, seed, mean_centered, hi, lo })
    }

    pub fn op(&self) -> &DegradeOperator {
        &self.op
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean_centered(&self) -> bool {
        self.mean_centered
    }

    pub fn hi_atom(&self, i: usize) -> &[f64] {
        let n = self.op.hi_len();
        &self.hi[i * n..(i + 1) * n]
    }

    pub fn lo_atom(&self, i: usize) -> &[f64] {
        self.lo.column(i)
    }

    /// Column-major `D_h`.
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Column-major `D_l`.
    pub fn lo(&self) -> &[f64] {
        self.lo.data()
    }

    /// Per-atom l2 norms of `D_l`.
    pub fn column_norms(&self) -> &[f64] {
        self.lo.column_norms()
    }

    pub fn sensing(&self) -> &SensingMatrix {
        &self.lo
    }

    /// SHA-256 of `D_l` in little-endian row-major order.
    pub fn lo_checksum(&self) -> [u8; 32] {
        let lo_len = self.op.lo_len();
        let mut h = Sha256::new();
        for r in 0..lo_len {
            for c in 0..self.size {
                h.update(self.lo.data()[c * lo_len + r].to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Binary layout (little endian): magic `RHMDICT1`, u32 patch side,
    /// u32 channels, u32 downsample factor, f64 blur sigma, u64 atom count,
    /// u64 seed, u8 mean-centred flag, row-major f64 `D_h`, then the 32-byte
    /// SHA-256 of `D_l`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.op.patch_side() as u32).to_le_bytes())?;
        w.write_all(&(self.op.channels() as u32).to_le_bytes())?;
        w.write_all(&(self.op.down_factor() as u32).to_le_bytes())?;
        w.write_all(&self.op.blur_sigma().to_le_bytes())?;
        w.write_all(&(self.size as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&[self.mean_centered as u8])?;
        let hi_len = self.op.hi_len();
        for r in 0..hi_len {
            for c in 0..self.size {
                w.write_all(&self.hi[c * hi_len + r].to_le_bytes())?;
            }
        }
        w.write_all(&self.lo_checksum())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return data(format!("{} is not a dictionary file", path.display()));
        }
        let side = read_u32(&mut r)? as usize;
        let channels = read_u32(&mut r)? as usize;
        let factor = read_u32(&mut r)? as usize;
        let sigma = f64::from_le_bytes(read_array(&mut r)?);
        let size = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let seed = u64::from_le_bytes(read_array(&mut r)?);
        let [flag] = read_array::<1>(&mut r)?;
        let op = DegradeOperator::new(side, sigma, factor, channels)?;
        let hi_len = op.hi_len();
        let mut hi = vec![0.0; hi_len * size];
        for row in 0..hi_len {
            for c in 0..size {
                hi[c * hi_len + row] = f64::from_le_bytes(read_array(&mut r)?);
            }
        }
        let stored: [u8; 32] = read_array(&mut r)?;
        let dict = Self::from_atoms(op, hi, size, seed, flag != 0)?;
        if dict.lo_checksum() != stored {
            return data(format!(
                "{}: recomputed low-resolution dictionary does not match stored checksum",
                path.display()
            ));
        }
        Ok(dict)
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}
