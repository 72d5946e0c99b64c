//! Rank-based comparison of several methods over several datasets.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, FisherSnedecor};

use crate::error::{Error, Result};

/// Ranks starting at 1 for the smallest value; tied values share the mean
/// of the ranks they occupy.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Row-wise mid-ranks of a dataset-by-method table of errors.
pub fn rank_rows(table: &[Vec<f64>]) -> Vec<Vec<f64>> {
    table.iter().map(|row| mid_ranks(row)).collect()
}

/// Column means of a rank table.
pub fn average_ranks(ranks: &[Vec<f64>]) -> Vec<f64> {
    let k = ranks.first().map_or(0, Vec::len);
    let n = ranks.len() as f64;
    (0..k).map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Friedman {
    pub chi2: f64,
    pub f_statistic: f64,
    pub df1: f64,
    pub df2: f64,
    pub p_value: f64,
}

/// Friedman statistic with the Iman–Davenport F correction, from a
/// dataset-by-method rank table.
pub fn friedman_iman_davenport(ranks: &[Vec<f64>]) -> Result<Friedman> {
    let k = ranks.first().map_or(0, Vec::len);
    if ranks.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("ragged rank table"));
    }
    friedman_from_average_ranks(&average_ranks(ranks), ranks.len())
}

pub fn friedman_from_average_ranks(avg: &[f64], datasets: usize) -> Result<Friedman> {
    let k = avg.len();
    if datasets < 2 || k < 2 {
        return Err(Error::invalid("need at least two datasets and two methods"));
    }
    let n = datasets as f64;
    let kf = k as f64;
    let centre = (kf + 1.0) / 2.0;
    let chi2 = 12.0 * n / (kf * (kf + 1.0)) * avg.iter().map(|r| (r - centre).powi(2)).sum::<f64>();
    let denom = n * (kf - 1.0) - chi2;
    if denom.abs() <= 1e-12 * n * kf {
        return Err(Error::invalid("Iman-Davenport denominator vanishes (identical rankings on every dataset)"));
    }
    let f_statistic = (n - 1.0) * chi2 / denom;
    let df1 = kf - 1.0;
    let df2 = (kf - 1.0) * (n - 1.0);
    let dist = FisherSnedecor::new(df1, df2).map_err(|e| Error::invalid(e.to_string()))?;
    let p_value = if f_statistic <= 0.0 { 1.0 } else { dist.sf(f_statistic) };
    Ok(Friedman {
        chi2,
        f_statistic,
        df1,
        df2,
        p_value,
    })
}

/// Two-sided exact sign test of `wins` against `losses` (ties already
/// removed) under success probability one half.
pub fn sign_test(wins: u64, losses: u64) -> Result<f64> {
    let n = wins + losses;
    if n == 0 {
        return Err(Error::invalid("sign test without any decided comparisons"));
    }
    let dist = Binomial::new(0.5, n).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((2.0 * dist.cdf(wins.min(losses))).min(1.0))
}

/// Holm step-down adjustment for a family of `m >= p.len()` hypotheses,
/// returned in input order.
pub fn holm(p: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < p.len() {
        return Err(Error::invalid("family size smaller than the number of p-values"));
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; p.len()];
    let mut running: f64 = 0.0;
    for (j, &i) in order.iter().enumerate() {
        running = running.max(((m - j) as f64 * p[i]).min(1.0));
        out[i] = running;
    }
    Ok(out)
}

/// Sign tests for each `(wins, losses)` pair, Holm-adjusted over a family
/// of `m_comparisons` hypotheses.
pub fn sign_test_holm(wins_losses: &[(u64, u64)], m_comparisons: usize) -> Result<Vec<f64>> {
    let raw = wins_losses
        .iter()
        .map(|&(w, l)| sign_test(w, l))
        .collect::<Result<Vec<_>>>()?;
    holm(&raw, m_comparisons)
}

/// Wins and losses of method `a` against `b` on per-dataset errors (lower
/// is better); exact ties are dropped.
pub fn wins_losses(a: &[f64], b: &[f64]) -> (u64, u64) {
    let wins = a.iter().zip(b).filter(|(x, y)| x < y).count() as u64;
    let losses = a.iter().zip(b).filter(|(x, y)| x > y).count() as u64;
    (wins, losses)
}
