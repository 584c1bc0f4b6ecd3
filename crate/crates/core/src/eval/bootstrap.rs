use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub half_width: f64,
    pub resamples: usize,
    /// Two-sided paired test against the second matrix, when given.
    pub p_value: Option<f64>,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn shape(m: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = m.len();
    let s = m.first().map_or(0, Vec::len);
    if n == 0 || s == 0 {
        return Err(Error::Empty("bootstrap needs at least one record and one seed".into()));
    }
    if m.iter().any(|row| row.len() != s) {
        return Err(Error::Invalid("bootstrap matrix rows differ in length".into()));
    }
    Ok((n, s))
}

fn mean(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().sum::<f64>() / (m.len() * m[0].len()) as f64
}

/// Resamples rows (records) and columns (seeds) with replacement.
///
/// Each resample draws its `n` row indices, then its `s` column indices, from
/// one ChaCha8 stream seeded with `seed`. A paired matrix reuses the same
/// indices, and its p-value is twice the smaller tail mass of the resampled
/// mean differences around zero, capped at one.
pub fn block_bootstrap(
    matrix: &[Vec<f64>],
    resamples: usize,
    seed: u64,
    paired_with: Option<&[Vec<f64>]>,
) -> Result<BootstrapResult> {
    let (n, s) = shape(matrix)?;
    if resamples == 0 {
        return Err(Error::config("resamples", "must be positive"));
    }
    if let Some(other) = paired_with {
        if shape(other)? != (n, s) {
            return Err(Error::Invalid("paired matrices differ in shape".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    let mut diffs = Vec::with_capacity(if paired_with.is_some() { resamples } else { 0 });
    let mut rows = vec![0usize; n];
    let mut cols = vec![0usize; s];
    for _ in 0..resamples {
        rows.iter_mut().for_each(|r| *r = rng.random_range(0..n));
        cols.iter_mut().for_each(|c| *c = rng.random_range(0..s));
        let mut total = 0.0;
        let mut total_other = 0.0;
        for &r in &rows {
            for &c in &cols {
                total += matrix[r][c];
                if let Some(o) = paired_with {
                    total_other += o[r][c];
                }
            }
        }
        let denom = (n * s) as f64;
        means.push(total / denom);
        if paired_with.is_some() {
            diffs.push((total - total_other) / denom);
        }
    }
    means.sort_by(f64::total_cmp);
    let lo = percentile(&means, 0.025);
    let hi = percentile(&means, 0.975);
    let p_value = paired_with.map(|_| {
        let b = diffs.len() as f64;
        let le = diffs.iter().filter(|&&d| d <= 0.0).count() as f64 / b;
        let ge = diffs.iter().filter(|&&d| d >= 0.0).count() as f64 / b;
        (2.0 * le.min(ge)).min(1.0)
    });
    Ok(BootstrapResult {
        estimate: mean(matrix),
        ci_low: lo,
        ci_high: hi,
        half_width: ((hi - lo) / 2.0).max(0.0),
        resamples,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_matrix_has_zero_width() {
        let m = vec![vec![0.7; 3]; 10];
        let r = block_bootstrap(&m, 500, 1, None).unwrap();
        assert!((r.estimate - 0.7).abs() < 1e-12);
        assert!(r.half_width < 1e-12);
    }

    #[test]
    fn self_paired_test_has_p_one() {
        let m: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0, 0.3]).collect();
        let r = block_bootstrap(&m, 300, 2, Some(&m)).unwrap();
        assert_eq!(r.p_value, Some(1.0));
    }

    #[test]
    fn empty_matrix_errors() {
        assert!(block_bootstrap(&[], 10, 0, None).is_err());
        assert!(block_bootstrap(&[vec![]], 10, 0, None).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[0.0, 1.0, 2.0, 3.0], 0.5), 1.5);
        assert_eq!(percentile(&[5.0], 0.975), 5.0);
    }
}
