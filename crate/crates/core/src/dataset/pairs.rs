use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// A labelled pair of sample positions. `t == 1` iff sample `i` has the
/// higher privileged score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    pub t: u8,
}

/// All pairs among `members` whose score gap strictly exceeds `threshold`.
///
/// Each qualifying pair is emitted once, as `(hi, lo, 1)` or `(lo, hi, 0)`
/// with equal probability. When `max_pairs` is set and exceeded, a uniform
/// subset of that size is kept (original order preserved).
pub fn make_pairs(
    dataset: &Dataset,
    members: &[usize],
    threshold: f64,
    max_pairs: Option<usize>,
    seed: u64,
) -> Result<Vec<PairSample>> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Config(format!("pair threshold must be >= 0, got {threshold}")));
    }
    let mut seen = vec![false; dataset.len()];
    for &m in members {
        if m >= dataset.len() {
            return Err(Error::Input(format!(
                "sample index {m} out of range ({} samples)",
                dataset.len()
            )));
        }
        if std::mem::replace(&mut seen[m], true) {
            return Err(Error::Input(format!("sample index {m} listed twice")));
        }
    }

    let mut rng = crate::seed::rng(seed);
    let mut pairs = Vec::new();
    for (k, &a) in members.iter().enumerate() {
        let sa = dataset.score(a);
        for &b in &members[k + 1..] {
            let sb = dataset.score(b);
            if (sa - sb).abs() > threshold {
                let (hi, lo) = if sa > sb { (a, b) } else { (b, a) };
                let pair = if rng.random::<bool>() {
                    PairSample { i: hi, j: lo, t: 1 }
                } else {
                    PairSample { i: lo, j: hi, t: 0 }
                };
                pairs.push(pair);
            }
        }
    }

    match max_pairs {
        Some(cap) if pairs.len() > cap => {
            let mut keep = index::sample(&mut rng, pairs.len(), cap).into_vec();
            keep.sort_unstable();
            Ok(keep.into_iter().map(|k| pairs[k]).collect())
        }
        _ => Ok(pairs),
    }
}
