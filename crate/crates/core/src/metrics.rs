//! Validation statistics.

use std::time::Instant;

use crate::error::{Error, Result};

/// Distribution summary. Quartiles interpolate linearly between order
/// statistics at positions `(n-1)·p`; `std` uses the `n-1` denominator
/// (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Argument("need at least two values".into()));
    }
    Ok(())
}

/// Coefficient of determination of `predicted` against `measured`.
pub fn r_squared(measured: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(measured, predicted)?;
    let mean = measured.iter().sum::<f64>() / measured.len() as f64;
    let ss_tot: f64 = measured.iter().map(|y| (mean - y).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R² of constant measurements".into()));
    }
    let ss_res: f64 = measured.iter().zip(predicted).map(|(y, p)| (p - y).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("correlation with a zero-variance input".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Linear-interpolation quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(Error::Argument("cannot summarize an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(SummaryStats {
        n,
        mean,
        std,
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
    })
}

/// Pearson r between the sorted versions of two equally sized samples
/// (a Q-Q correlation).
pub fn sorted_quantile_r(a: &[f64], b: &[f64]) -> Result<f64> {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    pearson_r(&sa, &sb)
}

/// Runs `op` and returns its result with the elapsed wall-clock seconds.
pub fn timed<T>(op: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = op();
    (out, start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(r_squared(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r_squared(&y, &[1.0, 2.0, 4.0]).unwrap(), 0.5);
        assert!(r_squared(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() < 0.0);
        assert!(matches!(r_squared(&[2.0, 2.0], &[1.0, 3.0]), Err(Error::UndefinedMetric(_))));
        assert!(r_squared(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_examples() {
        let a = [0.0, 1.0, 2.0];
        assert_eq!(pearson_r(&a, &a).unwrap(), 1.0);
        assert_eq!(pearson_r(&a, &[0.0, -1.0, -2.0]).unwrap(), -1.0);
        // sab = 3, saa = 2, sbb = 14/3  ->  3 / sqrt(28/3)
        let r = pearson_r(&a, &[0.0, 2.0, 3.0]).unwrap();
        assert!((r - 3.0 / (28.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((r - 0.982).abs() < 0.001);
        assert!(matches!(pearson_r(&a, &[1.0; 3]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[5.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max, s.mean, s.std), (5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 0.0));
        assert_eq!(summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap().median, 2.5);
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(s.q1, 2.75);
        assert_eq!(s.q3, 6.25);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn timing() {
        let ((), secs) = timed(|| ());
        assert!(secs >= 0.0);
        let work = || (0..1_000_000u64).map(|i| (i as f64).sqrt()).sum::<f64>();
        let (a, t) = timed(work);
        let (b, _) = timed(work);
        assert_eq!(a, b);
        assert!(t.is_finite());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn r_squared_is_permutation_invariant(
                pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..30),
                rot in 0usize..30,
            ) {
                let (y, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
                prop_assume!(y.iter().any(|v| *v != y[0]));
                prop_assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
                let k = rot % y.len();
                let (mut y2, mut p2) = (y.clone(), p.clone());
                y2.rotate_left(k);
                p2.rotate_left(k);
                let a = r_squared(&y, &p).unwrap();
                let b = r_squared(&y2, &p2).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }

            #[test]
            fn pearson_is_affine_invariant(
                pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30),
                scale in 0.1f64..10.0,
                shift in -50.0f64..50.0,
            ) {
                let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                prop_assume!(a.iter().any(|v| (v - a[0]).abs() > 1e-3) && b.iter().any(|v| (v - b[0]).abs() > 1e-3));
                let r = pearson_r(&a, &b).unwrap();
                let t: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
                prop_assert!((pearson_r(&t, &b).unwrap() - r).abs() <= 1e-12);
            }

            #[test]
            fn summary_is_ordered_and_permutation_invariant(mut v in prop::collection::vec(-1e3f64..1e3, 1..50)) {
                let s = summarize(&v).unwrap();
                prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
                v.reverse();
                let r = summarize(&v).unwrap();
                prop_assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (r.min, r.q1, r.median, r.q3, r.max));
            }
        }
    }
}
