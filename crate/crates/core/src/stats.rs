//! Descriptive summaries and the paired and independent two-sample tests
//! used to compare contour sets.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

/// Largest effective sample size for which `Auto` picks the exact
/// signed-rank distribution.
pub const SIGNED_RANK_EXACT_MAX_N: usize = 20;
/// Largest combined size for which the rank-sum test enumerates exactly.
pub const RANK_SUM_EXACT_MAX_N: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    Empty,
    #[error("paired sample lengths differ: {0} ids, {1} x values, {2} y values")]
    LengthMismatch(usize, usize, usize),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("need at least {needed} pairs, got {got}")]
    TooFew { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn descriptive(values: &[f64]) -> Result<Descriptive, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Descriptive {
        n: values.len(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile_sorted(&sorted, 0.5),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
    })
}

impl std::fmt::Display for Descriptive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:.2} ({:.2}, IQR {:.2} – {:.2})",
            self.mean, self.median, self.q1, self.q3
        )
    }
}

/// Values measured twice on the same cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub case_ids: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PairedSample {
    pub fn new(case_ids: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        if case_ids.len() != x.len() || x.len() != y.len() {
            return Err(StatsError::LengthMismatch(case_ids.len(), x.len(), y.len()));
        }
        if x.is_empty() {
            return Err(StatsError::Empty);
        }
        if let Some(i) = x.iter().zip(&y).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(StatsError::NonFinite(i));
        }
        Ok(Self { case_ids, x, y })
    }

    /// Pairs numbered 1..=n.
    pub fn unnamed(x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        let ids = (1..=x.len()).map(|n| n.to_string()).collect();
        Self::new(ids, x, y)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn swapped(&self) -> Self {
        Self {
            case_ids: self.case_ids.clone(),
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: String,
    pub n_effective: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Approx,
    #[default]
    Auto,
}

/// Mid-ranks (1-based) and the tie sizes.
pub fn mid_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &o in &order[start..end] {
            ranks[o] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid normal")
}

/// Two-sided normal p-value with continuity correction.
fn normal_p(statistic: f64, mean: f64, variance: f64) -> f64 {
    if variance <= 0.0 {
        return 1.0;
    }
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / variance.sqrt();
    (2.0 * standard_normal().sf(z)).min(1.0)
}

/// Exact null distribution of the signed-rank sum with doubled ranks:
/// `counts[s]` is the number of sign assignments with doubled sum `s`.
fn signed_rank_counts(doubled: &[usize]) -> Vec<u128> {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u128; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Paired Wilcoxon signed-rank test on `x - y`. Zero differences are
/// dropped; ties get mid-ranks. The statistic is the positive-rank sum.
pub fn wilcoxon_signed_rank(sample: &PairedSample, mode: Mode) -> TestResult {
    let diffs: Vec<f64> = sample
        .x
        .iter()
        .zip(&sample.y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let dropped = sample.len() - diffs.len();
    let mut notes = Vec::new();
    if dropped > 0 {
        notes.push(format!("{dropped} zero difference(s) dropped"));
    }
    let n = diffs.len();
    if n == 0 {
        notes.push("all differences zero".into());
        return TestResult {
            statistic: 0.0,
            p_value: 1.0,
            method: "wilcoxon signed-rank".into(),
            n_effective: 0,
            notes,
        };
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = mid_ranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let exact = match mode {
        Mode::Exact => n <= 127,
        Mode::Approx => false,
        Mode::Auto => n <= SIGNED_RANK_EXACT_MAX_N,
    };
    if !ties.is_empty() {
        notes.push(format!("{} tie group(s) mid-ranked", ties.len()));
    }
    if exact {
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let counts = signed_rank_counts(&doubled);
        let t = (w_plus * 2.0).round() as usize;
        let lower: u128 = counts[..=t].iter().sum();
        let upper: u128 = counts[t..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / 2f64.powi(n as i32)).min(1.0);
        TestResult {
            statistic: w_plus,
            p_value: p,
            method: "wilcoxon signed-rank (exact)".into(),
            n_effective: n,
            notes,
        }
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
        TestResult {
            statistic: w_plus,
            p_value: normal_p(w_plus, mean, var),
            method: "wilcoxon signed-rank (normal approximation)".into(),
            n_effective: n,
            notes,
        }
    }
}

/// Wilcoxon rank-sum (Mann-Whitney) test of two independent groups. The
/// statistic is U for `x`: its rank sum minus m(m+1)/2.
pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::Empty);
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    if let Some(i) = pooled.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let (m, n) = (x.len(), y.len());
    let big_n = m + n;
    let (ranks, ties) = mid_ranks(&pooled);
    let r_x: f64 = ranks[..m].iter().sum();
    let u = r_x - (m * (m + 1)) as f64 / 2.0;
    let mut notes = Vec::new();
    if big_n <= RANK_SUM_EXACT_MAX_N && ties.is_empty() {
        // ranks are 1..=N; count subsets of size m by their U value
        let u_obs = u.round() as usize;
        let (mut lower, mut upper, mut total) = (0u64, 0u64, 0u64);
        for set in 0u32..(1u32 << big_n) {
            if set.count_ones() as usize != m {
                continue;
            }
            let rank_sum: usize = (0..big_n).filter(|b| set >> b & 1 == 1).map(|b| b + 1).sum();
            let us = rank_sum - m * (m + 1) / 2;
            total += 1;
            lower += (us <= u_obs) as u64;
            upper += (us >= u_obs) as u64;
        }
        let p = (2.0 * lower.min(upper) as f64 / total as f64).min(1.0);
        return Ok(TestResult {
            statistic: u,
            p_value: p,
            method: "wilcoxon rank-sum (exact)".into(),
            n_effective: big_n,
            notes,
        });
    }
    if !ties.is_empty() {
        notes.push(format!("{} tie group(s) mid-ranked", ties.len()));
    }
    let (mf, nf, nn) = (m as f64, n as f64, big_n as f64);
    let mean = mf * nf / 2.0;
    let var = mf * nf / 12.0 * ((nn + 1.0) - tie_term(&ties) / (nn * (nn - 1.0)));
    Ok(TestResult {
        statistic: u,
        p_value: normal_p(u, mean, var),
        method: "wilcoxon rank-sum (normal approximation)".into(),
        n_effective: big_n,
        notes,
    })
}

/// Paired dispersion test: absolute deviations from each arm's median,
/// compared with a paired t-test on n-1 degrees of freedom.
pub fn paired_levene(sample: &PairedSample) -> Result<TestResult, StatsError> {
    let n = sample.len();
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    let median = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        quantile_sorted(&s, 0.5)
    };
    let (mx, my) = (median(&sample.x), median(&sample.y));
    let d: Vec<f64> = sample
        .x
        .iter()
        .zip(&sample.y)
        .map(|(a, b)| (a - mx).abs() - (b - my).abs())
        .collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let method = "paired levene (median-centered, paired t)".to_string();
    let mut notes = Vec::new();
    let (t, p) = if var == 0.0 {
        notes.push("absolute-deviation differences are constant".into());
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (var / nf).sqrt();
        let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("valid t distribution");
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(TestResult {
        statistic: t,
        p_value: p,
        method,
        n_effective: n,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptive_examples() {
        let d = descriptive(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((d.mean, d.median, d.q1, d.q3), (5.0, 5.0, 5.0, 5.0));
        let d = descriptive(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((d.median, d.q1, d.q3), (2.5, 1.75, 3.25));
        let d = descriptive(&[0.7]).unwrap();
        assert_eq!((d.mean, d.median, d.q1, d.q3), (0.7, 0.7, 0.7, 0.7));
        assert_eq!(descriptive(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn mid_ranks_average_ties() {
        let (r, t) = mid_ranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, vec![2]);
    }

    #[test]
    fn identical_pairs_give_p_one() {
        let s = PairedSample::unnamed(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).unwrap();
        let r = wilcoxon_signed_rank(&s, Mode::Auto);
        assert_eq!(r.p_value, 1.0);
        assert!(r.notes.iter().any(|n| n == "all differences zero"));
    }

    #[test]
    fn smallest_exact_signed_rank_p() {
        let x: Vec<f64> = (1..=6).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 10.0).collect();
        let r = wilcoxon_signed_rank(&PairedSample::unnamed(x, y).unwrap(), Mode::Exact);
        assert_eq!(r.p_value, 0.03125);
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn exact_rank_sum_two_by_two() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0], &[10.0, 11.0]).unwrap();
        assert!((r.p_value - 1.0 / 3.0).abs() < 1e-15);
        assert!(r.method.contains("exact"));
    }

    #[test]
    fn identical_multisets_rank_sum() {
        let v = vec![1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let r = wilcoxon_rank_sum(&v, &v).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(r.method.contains("approximation"));
    }

    #[test]
    fn levene_identical_and_symmetric() {
        let x = vec![0.7, 0.8, 0.75, 0.9, 0.65];
        let s = PairedSample::unnamed(x.clone(), x).unwrap();
        assert_eq!(paired_levene(&s).unwrap().p_value, 1.0);
        let s = PairedSample::unnamed(vec![1.0, 2.0, 4.0, 8.0], vec![1.0, 1.5, 1.0, 2.5]).unwrap();
        let a = paired_levene(&s).unwrap();
        let b = paired_levene(&s.swapped()).unwrap();
        assert_eq!(a.statistic, -b.statistic);
        assert_eq!(a.p_value, b.p_value);
        let tiny = PairedSample::unnamed(vec![1.0, 2.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(
            paired_levene(&tiny),
            Err(StatsError::TooFew { needed: 3, got: 2 })
        );
    }

    #[test]
    fn paired_sample_validation() {
        assert!(matches!(
            PairedSample::new(vec!["a".into()], vec![1.0, 2.0], vec![1.0]),
            Err(StatsError::LengthMismatch(1, 2, 1))
        ));
        assert_eq!(
            PairedSample::unnamed(vec![1.0, f64::NAN], vec![1.0, 2.0]),
            Err(StatsError::NonFinite(1))
        );
    }
}
