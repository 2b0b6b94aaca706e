//! Probability maps to binary masks and A-scan disruption scores.

use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Number of histogram bins used by Otsu's method.
pub const OTSU_BINS: usize = 256;

/// Binary `[H, W]` mask plus the threshold that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMask {
    pub height: usize,
    pub width: usize,
    /// Row-major, 1 = foreground.
    pub data: Vec<u8>,
    pub threshold: f32,
    /// Set when Otsu's method had fewer than two occupied histogram bins.
    pub degenerate: bool,
}

impl SegmentationMask {
    /// Mask from a `{0, 1}` tensor (ground truth).
    pub fn from_binary(t: &Tensor) -> Result<Self> {
        let (height, width) = t.dims2()?;
        let data = t
            .data()
            .iter()
            .map(|&v| match v {
                0.0 => Ok(0u8),
                1.0 => Ok(1u8),
                other => Err(Error::invalid(format!("mask value {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SegmentationMask {
            height,
            width,
            data,
            threshold: 0.5,
            degenerate: false,
        })
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[self.height, self.width],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("mask geometry")
    }

    pub fn at(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }
}

/// Histogram bin of a probability: bin `k` holds `(k/256, (k+1)/256]`, with
/// 0 in bin 0. Thresholding at `(k+1)/256` with `>` therefore splits bins
/// exactly at `k`.
pub fn otsu_bin(v: f32) -> usize {
    let scaled = (v as f64 * OTSU_BINS as f64).ceil() as i64 - 1;
    scaled.clamp(0, OTSU_BINS as i64 - 1) as usize
}

/// Threshold chosen by Otsu's method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OtsuLevel {
    pub threshold: f32,
    pub degenerate: bool,
}

/// Otsu's threshold over a 256-bin histogram of values in [0, 1].
///
/// Candidate `k` puts bins `0..=k` in the background and uses threshold
/// `(k+1)/256`. The between-class variance is compared in exact integer
/// arithmetic on bin indices; ties go to the lowest `k`. With fewer than two
/// occupied bins there is nothing to split: the threshold is the largest
/// value and the level is flagged degenerate.
pub fn otsu_level(values: &[f32]) -> Result<OtsuLevel> {
    if values.is_empty() {
        return Err(Error::invalid("Otsu threshold of an empty map"));
    }
    let mut hist = [0u64; OTSU_BINS];
    let mut max = f32::NEG_INFINITY;
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
        }
        hist[otsu_bin(v)] += 1;
        max = max.max(v);
    }
    let n = values.len() as u64;
    let total_sum: u64 = hist.iter().enumerate().map(|(k, &c)| k as u64 * c).sum();
    // sigma_B^2 * n^2 = (S0*n1 - S1*n0)^2 / (n0*n1); compare as fractions.
    let mut best: Option<(usize, u128, u128)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for (k, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        n0 += c;
        s0 += k as u64 * c;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_sum - s0;
        let diff = (s0 as i128 * n1 as i128 - s1 as i128 * n0 as i128).unsigned_abs();
        let num = diff * diff;
        let den = n0 as u128 * n1 as u128;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => fraction_greater(num, den, bn, bd),
        };
        if better {
            best = Some((k, num, den));
        }
    }
    Ok(match best {
        Some((k, _, _)) => OtsuLevel {
            threshold: ((k + 1) as f64 / OTSU_BINS as f64) as f32,
            degenerate: false,
        },
        None => OtsuLevel {
            threshold: max,
            degenerate: true,
        },
    })
}

/// Exact `a/b > c/d` for positive denominators, by comparing continued
/// fraction expansions (no overflowing cross products).
fn fraction_greater(mut a: u128, mut b: u128, mut c: u128, mut d: u128) -> bool {
    loop {
        let (qa, qc) = (a / b, c / d);
        if qa != qc {
            return qa > qc;
        }
        let (ra, rc) = (a % b, c % d);
        if ra == 0 || rc == 0 {
            return ra > 0 && rc == 0;
        }
        // ra/b > rc/d  <=>  d/rc > b/ra
        (a, b, c, d) = (d, rc, b, ra);
    }
}

/// Foreground where `prob > threshold`.
pub fn threshold_mask(prob: &Tensor, threshold: f32) -> Result<SegmentationMask> {
    let (height, width) = prob.dims2()?;
    Ok(SegmentationMask {
        height,
        width,
        data: prob.data().iter().map(|&p| (p > threshold) as u8).collect(),
        threshold,
        degenerate: false,
    })
}

/// Otsu binarisation of an `[H, W]` probability map.
pub fn otsu_threshold(prob: &Tensor) -> Result<SegmentationMask> {
    prob.dims2()?;
    let level = otsu_level(prob.data())?;
    let mut mask = threshold_mask(prob, level.threshold)?;
    mask.degenerate = level.degenerate;
    if level.degenerate {
        mask.data.fill(0);
    }
    Ok(mask)
}

/// `1 - max(column)` for every column of an `[H, W]` probability map.
pub fn disruption_scores(prob: &Tensor) -> Result<Vec<f32>> {
    let (h, w) = prob.dims2()?;
    let d = prob.data();
    Ok((0..w)
        .map(|c| {
            let max = (0..h).map(|r| d[r * w + c]).fold(0.0f32, f32::max);
            1.0 - max
        })
        .collect())
}

/// A column is disrupted iff it holds no foreground pixel.
pub fn disruption_labels(mask: &SegmentationMask) -> Vec<bool> {
    (0..mask.width)
        .map(|c| (0..mask.height).all(|r| !mask.at(r, c)))
        .collect()
}
