//! Order statistics and the Friedman rank test used by the experiment
//! harness. Everything here is deterministic: confidence intervals come from
//! distribution-free order statistics, not resampling.

use crate::engine::Fitness;
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::gamma::gamma_ur;

/// Median and distribution-free 95% confidence interval of the median.
///
/// The CI bounds are the order statistics at the binomial(n, 1/2) 2.5% and
/// 97.5% quantile ranks (the latter shifted up by one), clamped to the
/// sample; for small n the interval degenerates to the extremes. Invalid
/// entries sort after all finite values, so they only reach the median or CI
/// when they dominate the sample.
pub fn median_ci95(samples: &[Fitness]) -> (Fitness, Fitness, Fitness) {
    assert!(!samples.is_empty(), "median of an empty sample");
    let mut s = samples.to_vec();
    s.sort();
    let n = s.len();
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        match (s[n / 2 - 1], s[n / 2]) {
            (Fitness::Finite(a), Fitness::Finite(b)) => Fitness::Finite((a + b) / 2.0),
            _ => Fitness::Invalid,
        }
    };
    let (lo_rank, hi_rank) = ci95_ranks(n);
    (median, s[lo_rank - 1], s[hi_rank - 1])
}

/// 1-based order-statistic ranks of the 95% median CI for a sample of `n`.
pub fn ci95_ranks(n: usize) -> (usize, usize) {
    let b = Binomial::new(0.5, n as u64).expect("valid binomial");
    let lo = (b.inverse_cdf(0.025) as usize).max(1);
    let hi = (b.inverse_cdf(0.975) as usize + 1).min(n);
    (lo, hi)
}

/// [`median_ci95`] over plain finite values (proportions, sizes).
pub fn median_ci95_f64(samples: &[f64]) -> (f64, f64, f64) {
    let wrapped: Vec<Fitness> = samples
        .iter()
        .map(|&v| {
            assert!(v.is_finite(), "median_ci95_f64 needs finite samples");
            Fitness::Finite(v)
        })
        .collect();
    let (m, lo, hi) = median_ci95(&wrapped);
    (
        m.value().expect("finite"),
        lo.value().expect("finite"),
        hi.value().expect("finite"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FriedmanTest {
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("friedman test needs at least 2 blocks and 2 methods, got {blocks}x{methods}")]
    TooSmall { blocks: usize, methods: usize },
    #[error("block {block} has {got} values, expected {want}")]
    Ragged { block: usize, got: usize, want: usize },
    #[error("block {block} contains NaN")]
    NotComparable { block: usize },
}

/// Friedman rank test over a blocks-by-methods matrix (one row per block).
///
/// Values are ranked within each block (ties get average ranks; infinities
/// are allowed and rank after every finite value). With rank sums R_j,
/// chi2 = 12 sum(R_j^2) / (B k (k+1)) - 3 B (k+1), df = k - 1, and p is the
/// chi-squared survival probability. An all-tied matrix gives chi2 = 0,
/// p = 1.
pub fn friedman_rank_test(values: &[Vec<f64>]) -> Result<FriedmanTest, StatsError> {
    let b = values.len();
    let k = values.first().map_or(0, Vec::len);
    if b < 2 || k < 2 {
        return Err(StatsError::TooSmall { blocks: b, methods: k });
    }
    for (i, row) in values.iter().enumerate() {
        if row.len() != k {
            return Err(StatsError::Ragged {
                block: i + 1,
                got: row.len(),
                want: k,
            });
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(StatsError::NotComparable { block: i + 1 });
        }
    }
    let mut rank_sums = vec![0.0f64; k];
    for row in values {
        for (j, r) in average_ranks(row).into_iter().enumerate() {
            rank_sums[j] += r;
        }
    }
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let (bf, kf) = (b as f64, k as f64);
    let chi2 = ((12.0 * sum_sq) / (bf * kf * (kf + 1.0)) - 3.0 * bf * (kf + 1.0)).max(0.0);
    let df = k - 1;
    Ok(FriedmanTest {
        chi2,
        df,
        p: chi_square_survival(chi2, df),
    })
}

/// Within-row ranks starting at 1; tied values share the average of the
/// ranks they span.
fn average_ranks(row: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    let mut ranks = vec![0.0; row.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && row[order[j + 1]] == row[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// P(X >= chi2) for X chi-squared with `df` degrees of freedom, via the
/// regularized upper incomplete gamma function Q(df/2, chi2/2).
pub fn chi_square_survival(chi2: f64, df: usize) -> f64 {
    assert!(df >= 1, "chi-squared needs at least one degree of freedom");
    assert!(chi2 >= 0.0 && chi2.is_finite(), "chi2 must be finite and non-negative");
    if chi2 == 0.0 {
        return 1.0;
    }
    gamma_ur(df as f64 / 2.0, chi2 / 2.0)
}
