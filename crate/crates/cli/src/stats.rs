//! Channel-outlier statistics over activation matrices.

use bpdq_core::{Error, Result, Tensor2D};

/// Per-matrix outlier metrics: intensity is the max-to-median ratio of
/// per-channel mean magnitudes, quantity counts channels above ten times the
/// median.
pub fn outlier_stats(x: &Tensor2D) -> Result<(f64, u64)> {
    if x.cols() == 0 {
        return Err(Error::DimensionMismatch {
            detail: "activations need at least one sample column".into(),
        });
    }
    let magnitudes: Vec<f64> = (0..x.rows())
        .map(|r| x.row(r).iter().map(|v| v.abs()).sum::<f64>() / x.cols() as f64)
        .collect();
    let med = lower_median(&magnitudes);
    if med == 0.0 {
        return Err(Error::Precondition {
            detail: "median channel magnitude is zero (all-zero activations)".into(),
        });
    }
    let max = magnitudes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cnt10 = magnitudes.iter().filter(|&&m| m > 10.0 * med).count() as u64;
    Ok((max / med, cnt10))
}

/// Median with the lower-middle element on even counts.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted[(sorted.len() - 1) / 2]
}

/// Nearest-rank 95th percentile.
pub fn p95(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let idx = ((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_channels_are_flat() {
        let x = Tensor2D::from_fn(6, 10, |_, c| if c % 2 == 0 { 1.0 } else { -1.0 });
        let (diagr, cnt10) = outlier_stats(&x).unwrap();
        assert!((diagr - 1.0).abs() < 1e-12);
        assert_eq!(cnt10, 0);
    }

    #[test]
    fn single_hot_channel_is_counted() {
        let x = Tensor2D::from_fn(33, 4, |r, _| if r == 7 { 100.0 } else { 1.0 });
        let (diagr, cnt10) = outlier_stats(&x).unwrap();
        assert!((diagr - 100.0).abs() < 1e-9);
        assert_eq!(cnt10, 1);
    }

    #[test]
    fn all_zero_activations_error() {
        let x = Tensor2D::zeros(4, 4);
        assert!(outlier_stats(&x).is_err());
    }

    #[test]
    fn median_uses_lower_middle() {
        assert_eq!(lower_median(&[1.0, 2.0, 3.0, 4.0]), 2.0);
        assert_eq!(lower_median(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(lower_median(&[5.0]), 5.0);
    }

    #[test]
    fn p95_nearest_rank() {
        assert_eq!(p95(&[1.0]), 1.0);
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(p95(&v), 19.0);
    }
}
