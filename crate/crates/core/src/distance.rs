//! Point-to-point distances.
//!
//! Euclidean distance is used in its squared form throughout the crate:
//! thresholds, ground truth and quantized distances all live in squared
//! units unless [`DistanceMode::L2`](crate::DistanceMode) converts a
//! threshold at query entry.

use crate::error::{Error, Result};

/// Squared Euclidean distance, `Σ (x_i - y_i)^2`.
///
/// ```
/// use probecard::squared_l2_distance;
/// assert_eq!(squared_l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
/// assert!(squared_l2_distance(&[1.0], &[1.0, 2.0]).is_err());
/// ```
pub fn squared_l2_distance(x: &[f32], y: &[f32]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(squared_l2(x, y))
}

/// Unchecked variant used on hot paths where dimensions were validated once
/// per query. Accumulates left to right in `f64`.
#[inline]
pub fn squared_l2(x: &[f32], y: &[f32]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = 0.0f64;
    for (a, b) in x.iter().zip(y) {
        let d = f64::from(*a) - f64::from(*b);
        acc += d * d;
    }
    acc
}

/// Lane-parallel `f32` squared distance. Faster than [`squared_l2`] but its
/// summation order differs, so it is only used to rank candidates.
#[inline]
pub(crate) fn squared_l2_f32(x: &[f32], y: &[f32]) -> f32 {
    const LANES: usize = 8;
    let mut acc = [0f32; LANES];
    let xs = x.chunks_exact(LANES);
    let ys = y.chunks_exact(LANES);
    let tail: f32 = xs
        .remainder()
        .iter()
        .zip(ys.remainder())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    for (cx, cy) in xs.zip(ys) {
        for l in 0..LANES {
            let d = cx[l] - cy[l];
            acc[l] += d * d;
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Number of positions at which two hash codes carry different tokens.
///
/// ```
/// use probecard::hamming_distance;
/// assert_eq!(hamming_distance(&[0, 2, 1, 3], &[1, 2, 1, 3]).unwrap(), 1);
/// assert_eq!(hamming_distance(&[0, 2, 1, 3], &[1, 1, 2, 2]).unwrap(), 4);
/// ```
pub fn hamming_distance(x: &[i32], y: &[i32]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::CodeLengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(hamming(x, y))
}

#[inline]
pub(crate) fn hamming(x: &[i32], y: &[i32]) -> usize {
    x.iter().zip(y).filter(|(a, b)| a != b).count()
}
