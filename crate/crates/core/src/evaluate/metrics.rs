use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Frame-overlap precision, recall and F1. Empty masks give zero ratios.
pub fn fscore(pred: &[bool], user: &[bool]) -> Result<FScore> {
    if pred.len() != user.len() {
        return Err(Error::shape("user summary", pred.len(), user.len()));
    }
    let overlap = pred.iter().zip(user).filter(|(p, u)| **p && **u).count() as f64;
    let n_pred = pred.iter().filter(|p| **p).count() as f64;
    let n_user = user.iter().filter(|u| **u).count() as f64;
    let precision = if n_pred > 0.0 { overlap / n_pred } else { 0.0 };
    let recall = if n_user > 0.0 { overlap / n_user } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore { precision, recall, f1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FScoreMode {
    /// Best match over users; the usual choice for SumMe-style data.
    Max,
    /// Mean over users; the usual choice for TVSum-style data.
    #[default]
    Avg,
}

impl FromStr for FScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" | "max_over_users" => Ok(FScoreMode::Max),
            "avg" | "avg_over_users" => Ok(FScoreMode::Avg),
            other => Err(Error::Config(format!("unknown F-score mode `{other}` (expected max or avg)"))),
        }
    }
}

impl fmt::Display for FScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FScoreMode::Max => "max",
            FScoreMode::Avg => "avg",
        })
    }
}

pub fn fscore_protocol(pred: &[bool], users: &[Vec<bool>], mode: FScoreMode) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::Parameter("F-score needs at least one user summary".into()));
    }
    let scores = users
        .iter()
        .map(|u| fscore(pred, u).map(|s| s.f1))
        .collect::<Result<Vec<f64>>>()?;
    Ok(match mode {
        FScoreMode::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        FScoreMode::Avg => scores.iter().sum::<f64>() / scores.len() as f64,
    })
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape("correlation input", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::Parameter(format!(
            "correlation needs at least 2 values, got {}",
            a.len()
        )));
    }
    Ok(())
}

/// Number of pairs inside runs of equal values of an already sorted sequence.
fn tied_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts in place and returns the number of strictly inverted pairs.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Tie-corrected Kendall τ-b in `O(n log n)`. NaN when either input is all ties
/// or contains non-finite values.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Ok(f64::NAN);
    }
    let n = a.len() as u64;
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let ties_a = tied_pairs(&pairs, |x, y| x.0 == y.0);
    let ties_joint = tied_pairs(&pairs, |x, y| x.0 == y.0 && x.1 == y.1);
    let mut bs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(bs.len());
    let swaps = merge_count(&mut bs, &mut buf);
    let ties_b = tied_pairs(&bs, |x, y| x == y);

    let n0 = n * (n - 1) / 2;
    let denom = ((n0 - ties_a) as f64) * ((n0 - ties_b) as f64);
    if denom == 0.0 {
        return Ok(f64::NAN);
    }
    let numer = n0 as f64 - ties_a as f64 - ties_b as f64 + ties_joint as f64 - 2.0 * swaps as f64;
    Ok((numer / denom.sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]].total_cmp(&values[order[start]]) == Ordering::Equal {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
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
        return Ok(f64::NAN);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman ρ: Pearson correlation of average ranks. NaN for zero rank variance.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Ok(f64::NAN);
    }
    pearson(&average_ranks(a), &average_ranks(b))
}
