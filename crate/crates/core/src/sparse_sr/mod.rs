//! Coarse-to-fine patch reconstruction: linear (identity on the blurred
//! patch), bicubic interpolation, and sparse coding over a raw-patch
//! dictionary.

mod dictionary;
pub mod solver;

pub use dictionary::{build_dictionary, center_channels, DictionaryOptions, DictionaryPair};
pub use solver::{SensingMatrix, SolveStatus, SolverConfig, SparseCode, StageTrace};

use crate::error::{param, Result};
use crate::patch_ops::DegradeOperator;

/// Sparse code of `x_l` over the dictionary's degraded atoms.
pub fn solve_l1(dict: &DictionaryPair, x_l: &[f64], cfg: &SolverConfig) -> Result<SparseCode> {
    if x_l.len() != dict.op().lo_len() {
        return param(format!(
            "low-resolution patch has length {}, dictionary expects {}",
            x_l.len(),
            dict.op().lo_len()
        ));
    }
    solver::solve(dict.sensing(), x_l, cfg)
}

/// `D_h * alpha` for the sparse code of `x_l`. Mean-centred dictionaries
/// code the centred patch and add the per-channel means of `x_l` back.
pub fn reconstruct_cs(dict: &DictionaryPair, x_l: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, SparseCode)> {
    let op = dict.op();
    let (code, means) = if dict.mean_centered() {
        let mut centred = x_l.to_vec();
        if centred.len() != op.lo_len() {
            return param("low-resolution patch does not match the dictionary");
        }
        let means = center_channels(&mut centred, op.channels());
        (solve_l1(dict, &centred, cfg)?, Some(means))
    } else {
        (solve_l1(dict, x_l, cfg)?, None)
    };
    let hi_len = op.hi_len();
    let mut out = vec![0.0; hi_len];
    for (j, &a) in code.alpha.iter().enumerate() {
        if a != 0.0 {
            for (o, d) in out.iter_mut().zip(dict.hi_atom(j)) {
                *o += a * d;
            }
        }
    }
    if let Some(means) = means {
        let per = hi_len / op.channels();
        for (ch, m) in out.chunks_exact_mut(per).zip(means) {
            ch.iter_mut().for_each(|v| *v += m);
        }
    }
    Ok((out, code))
}

/// The blurred patch itself; only meaningful for blur-only operators.
pub fn reconstruct_lr(x_l: &[f64], op: &DegradeOperator) -> Result<Vec<f64>> {
    if op.down_factor() != 1 {
        return param("linear reconstruction needs a blur-only operator (downsample factor 1)");
    }
    if x_l.len() != op.hi_len() {
        return param(format!("patch length {} does not match {}", x_l.len(), op.hi_len()));
    }
    Ok(x_l.to_vec())
}

/// Catmull-Rom cubic (a = -0.5).
pub fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four (source index, weight) taps per output sample, pixel-centre aligned
/// and edge-replicated.
fn cubic_taps(src_len: usize, factor: usize) -> Vec<[(usize, f64); 4]> {
    let dst_len = src_len * factor;
    (0..dst_len)
        .map(|p| {
            let s = (p as f64 + 0.5) / factor as f64 - 0.5;
            let base = s.floor() as isize;
            let mut taps = [(0usize, 0.0f64); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let i = base - 1 + k as isize;
                let w = cubic_kernel(s - i as f64);
                *tap = (i.clamp(0, src_len as isize - 1) as usize, w);
            }
            taps
        })
        .collect()
}

/// Bicubic upsampling of each `L x L` channel of `x_l` to `side x side`,
/// `L = side / factor`.
pub fn reconstruct_bi(x_l: &[f64], side: usize, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || side % factor != 0 {
        return param(format!("patch side {side} is not divisible by factor {factor}"));
    }
    let lo = side / factor;
    let lo_area = lo * lo;
    if lo_area == 0 || x_l.is_empty() || x_l.len() % lo_area != 0 {
        return param(format!("patch length {} is not a multiple of {lo}x{lo}", x_l.len()));
    }
    let taps = cubic_taps(lo, factor);
    let mut out = Vec::with_capacity(side * side * (x_l.len() / lo_area));
    let mut rows = vec![0.0; lo * side];
    for ch in x_l.chunks_exact(lo_area) {
        // horizontal pass: lo rows x side cols
        for r in 0..lo {
            for (x, tx) in taps.iter().enumerate() {
                rows[r * side + x] = tx.iter().map(|&(i, w)| w * ch[r * lo + i]).sum();
            }
        }
        for ty in &taps {
            for x in 0..side {
                out.push(ty.iter().map(|&(i, w)| w * rows[i * side + x]).sum());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_core::ImagePlane;

    #[test]
    fn cs_zero_input_gives_zero_patch() {
        let img = ImagePlane::from_fn(30, 30, 1, |_, r, x| ((r * 3 + x * 5) % 7) as f64 / 6.0).unwrap();
        let op = DegradeOperator::new(9, 3.0, 3, 1).unwrap();
        let dict = build_dictionary(&[&img], &op, DictionaryOptions { size: 100, ..Default::default() }).unwrap();
        let (patch, code) = reconstruct_cs(&dict, &[0.0; 9], &SolverConfig::default()).unwrap();
        assert!(patch.iter().all(|&v| v == 0.0));
        assert_eq!(code.nonzeros(), 0);
        assert!(solve_l1(&dict, &[0.0; 8], &SolverConfig::default()).is_err());
    }

    #[test]
    fn lr_is_identity_on_blurred_patch() {
        let op = DegradeOperator::new(9, 3.0, 1, 1).unwrap();
        let x: Vec<f64> = (0..81).map(|i| (i % 9) as f64 / 8.0).collect();
        let lo = op.degrade(&x).unwrap();
        assert_eq!(reconstruct_lr(&lo, &op).unwrap(), lo);
        assert_eq!(reconstruct_lr(&[0.0; 81], &op).unwrap(), vec![0.0; 81]);
        assert!(reconstruct_lr(&[0.0; 80], &op).is_err());
        let down = DegradeOperator::new(9, 3.0, 3, 1).unwrap();
        assert!(reconstruct_lr(&[0.0; 9], &down).is_err());
    }

    #[test]
    fn bicubic_constant_and_shape() {
        let out = reconstruct_bi(&vec![0.6; 27], 9, 3).unwrap();
        assert_eq!(out.len(), 243);
        assert!(out.iter().all(|v| (v - 0.6).abs() < 1e-12));
        assert!(reconstruct_bi(&[0.0; 10], 9, 3).is_err());
        assert!(reconstruct_bi(&[0.0; 9], 9, 2).is_err());
    }

    #[test]
    fn bicubic_reproduces_interior_ramps() {
        // 8x8 grid upsampled by 2; away from the clamped border the
        // Catmull-Rom kernel reproduces affine functions exactly
        let lo = 8;
        let f = |r: f64, c: f64| 0.1 + 0.03 * r + 0.02 * c;
        let x: Vec<f64> = (0..lo * lo).map(|i| f((i / lo) as f64, (i % lo) as f64)).collect();
        let out = reconstruct_bi(&x, 16, 2).unwrap();
        for p in 3..13 {
            for q in 3..13 {
                let sr = (p as f64 + 0.5) / 2.0 - 0.5;
                let sc = (q as f64 + 0.5) / 2.0 - 0.5;
                assert!((out[p * 16 + q] - f(sr, sc)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bicubic_impulse_matches_kernel_weights() {
        let mut x = vec![0.0; 9];
        x[4] = 1.0;
        let out = reconstruct_bi(&x, 9, 3).unwrap();
        // direct evaluation: weight of source (1,1) at output (p,q), with
        // clamped taps accumulating onto the edge samples
        let w1 = |p: usize| -> f64 {
            let s = (p as f64 + 0.5) / 3.0 - 0.5;
            let b = s.floor() as i64;
            (b - 1..=b + 2)
                .filter(|&i| i.clamp(0, 2) == 1)
                .map(|i| {
                    let t = (s - i as f64).abs();
                    let a = -0.5;
                    if t <= 1.0 {
                        (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
                    } else if t < 2.0 {
                        a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
                    } else {
                        0.0
                    }
                })
                .sum()
        };
        for p in 0..9 {
            for q in 0..9 {
                assert!((out[p * 9 + q] - w1(p) * w1(q)).abs() < 1e-12);
            }
        }
        assert!((out[4 * 9 + 4] - 1.0).abs() < 1e-12);
    }
}
