use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A correlation coefficient, or a flag saying it is undefined because one
/// of the inputs has no variation. Degenerate results carry `value = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

impl Correlation {
    fn degenerate() -> Self {
        Correlation {
            value: 0.0,
            degenerate: true,
        }
    }
}

fn check_inputs(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "correlation inputs differ in length ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Input(format!(
            "correlation needs at least 2 points, got {}",
            pred.len()
        )));
    }
    if !pred.iter().chain(truth).all(|v| v.is_finite()) {
        return Err(Error::Input("correlation inputs must be finite".into()));
    }
    Ok(())
}

/// Pearson sample correlation, accumulated with running co-moments.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<Correlation> {
    check_inputs(pred, truth)?;
    let (mut mean_x, mut mean_y) = (0.0, 0.0);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (k, (&x, &y)) in pred.iter().zip(truth).enumerate() {
        let n = (k + 1) as f64;
        let dx = x - mean_x;
        let dy = y - mean_y;
        mean_x += dx / n;
        mean_y += dy / n;
        sxx += dx * (x - mean_x);
        syy += dy * (y - mean_y);
        sxy += dx * (y - mean_y);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(Correlation::degenerate());
    }
    Ok(Correlation {
        value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Number of pairs inside runs of equal values of a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * run.saturating_sub(1) / 2;
            run = 1;
        }
        prev = Some(v);
    }
    total + run * run.saturating_sub(1) / 2
}

/// Sort `v` ascending and return the number of strict inversions removed.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k = k + mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b in `O(n log n)` (sort by the first variable, then count
/// inversions of the second with a merge sort).
pub fn kendall_tau(pred: &[f64], truth: &[f64]) -> Result<Correlation> {
    check_inputs(pred, truth)?;
    let n = pred.len() as u64;
    let total_pairs = n * (n - 1) / 2;

    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]).then(truth[a].total_cmp(&truth[b])));
    let ties_x = tied_pairs(order.iter().map(|&i| pred[i].to_bits()));
    let ties_xy = tied_pairs(order.iter().map(|&i| (pred[i].to_bits(), truth[i].to_bits())));

    let mut ys: Vec<f64> = order.iter().map(|&i| truth[i] + 0.0).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = merge_count(&mut ys, &mut buf);
    let ties_y = tied_pairs(ys.iter().map(|v| v.to_bits()));

    let left = (total_pairs - ties_x) as f64;
    let right = (total_pairs - ties_y) as f64;
    if left == 0.0 || right == 0.0 {
        return Ok(Correlation::degenerate());
    }
    let numerator = total_pairs as f64 - ties_x as f64 - ties_y as f64 + ties_xy as f64 - 2.0 * discordant as f64;
    Ok(Correlation {
        value: (numerator / (left * right).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for i in 0..x.len() {
            sxy += (x[i] - mx) * (y[i] - my);
            sxx += (x[i] - mx) * (x[i] - mx);
            syy += (y[i] - my) * (y[i] - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let sx = (x[i] - x[j]).signum() * f64::from(x[i] != x[j]);
                let sy = (y[i] - y[j]).signum() * f64::from(y[i] != y[j]);
                if sx == 0.0 && sy == 0.0 {
                    continue;
                } else if sx == 0.0 {
                    tx += 1;
                } else if sy == 0.0 {
                    ty += 1;
                } else if sx == sy {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
        (c - d) as f64 / (((c + d + tx) * (c + d + ty)) as f64).sqrt()
    }

    #[test]
    fn pearson_perfect() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().value - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().value + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_degenerate_and_errors() {
        let r = pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.degenerate && r.value == 0.0);
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_matches_two_pass() {
        let mut rng = crate::seed::rng(21);
        for _ in 0..100 {
            let n = rng.random_range(2..60);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.random_range(-5.0..5.0)).collect();
            assert!((pearson(&x, &y).unwrap().value - two_pass_pearson(&x, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn kendall_small_cases() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap().value, 1.0);
        let r = kendall_tau(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r.value + 1.0 / 3.0).abs() < 1e-15);
        let r = kendall_tau(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn kendall_matches_brute_force_with_ties() {
        let mut rng = crate::seed::rng(22);
        for _ in 0..100 {
            let x: Vec<f64> = (0..20).map(|_| rng.random_range(0..6) as f64).collect();
            let y: Vec<f64> = (0..20).map(|_| rng.random_range(0..6) as f64).collect();
            let fast = kendall_tau(&x, &y).unwrap().value;
            assert!((fast - brute_tau_b(&x, &y)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn kendall_invariant_under_monotone_transform(
            x in proptest::collection::vec(-50i32..50, 2..40),
            noise in proptest::collection::vec(-50i32..50, 40),
        ) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| a + f64::from(*b)).collect();
            let base = kendall_tau(&x, &y).unwrap();
            let warped: Vec<f64> = x.iter().map(|v| (v / 10.0).exp() + 3.0 * v).collect();
            let after = kendall_tau(&warped, &y).unwrap();
            prop_assert_eq!(base.degenerate, after.degenerate);
            prop_assert!((base.value - after.value).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base.value));
            if !base.degenerate {
                prop_assert!((base.value - brute_tau_b(&x, &y)).abs() < 1e-12);
            }
        }
    }
}
