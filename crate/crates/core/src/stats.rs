//! Chi-square machinery: regularized incomplete gamma, distribution function
//! and critical values, Pearson independence and goodness-of-fit statistics,
//! and alignment of run histograms onto a shared category axis.

use std::collections::BTreeSet;

use crate::error::StatsError;
use crate::run::Histogram;
use crate::scalar::Scalar;

const MAX_ITER: usize = 100_000;

/// Label of the pooled bucket produced by [`align`].
pub const RARE_BUCKET: &str = "~rare";

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = T::lit(0.5);
    if x < half {
        // reflection
        let pi = T::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(COEF[0]);
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc = acc + T::lit(c) / (x + T::from_size(i));
    }
    let t = x + T::lit(7.5);
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

/// Series for P(a, x), valid for x < a + 1.
fn gamma_p_series<T: Scalar>(a: T, x: T) -> T {
    let mut term = T::one() / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap = ap + T::one();
        term = term * x / ap;
        sum = sum + term;
        if term.abs() < sum.abs() * T::series_eps() {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

/// Continued fraction for Q(a, x) (modified Lentz), valid for x ≥ a + 1.
fn gamma_q_fraction<T: Scalar>(a: T, x: T) -> T {
    let tiny = T::min_positive_value() / T::series_eps();
    let two = T::lit(2.0);
    let mut b = x + T::one() - a;
    let mut c = T::one() / tiny;
    let mut d = T::one() / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let i = T::from_size(i);
        let an = -i * (i - a);
        b = b + two;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let delta = d * c;
        h = h * delta;
        if (delta - T::one()).abs() < T::series_eps() {
            break;
        }
    }
    (a * x.ln() - x - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p<T: Scalar>(a: T, x: T) -> T {
    if x <= T::zero() {
        T::zero()
    } else if x < a + T::one() {
        gamma_p_series(a, x)
    } else {
        T::one() - gamma_q_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 − P(a, x).
pub fn gamma_q<T: Scalar>(a: T, x: T) -> T {
    if x <= T::zero() {
        T::one()
    } else if x < a + T::one() {
        T::one() - gamma_p_series(a, x)
    } else {
        gamma_q_fraction(a, x)
    }
}

/// Chi-square distribution function with `df` degrees of freedom.
pub fn chi2_cdf<T: Scalar>(x: T, df: usize) -> T {
    assert!(df >= 1, "degrees of freedom must be positive");
    let two = T::lit(2.0);
    gamma_p(T::from_size(df) / two, x / two)
}

/// Survival function 1 − CDF, evaluated directly to keep tail precision.
pub fn chi2_sf<T: Scalar>(x: T, df: usize) -> T {
    assert!(df >= 1, "degrees of freedom must be positive");
    let two = T::lit(2.0);
    gamma_q(T::from_size(df) / two, x / two)
}

/// The point whose upper tail probability is `alpha`, found by bisection.
pub fn chi2_critical<T: Scalar>(alpha: T, df: usize) -> T {
    assert!(
        alpha > T::zero() && alpha < T::one(),
        "alpha must lie in (0, 1)"
    );
    let mut lo = T::zero();
    let mut hi = T::from_size(df) + T::lit(10.0);
    while chi2_sf(hi, df) > alpha {
        lo = hi;
        hi = hi + hi;
    }
    let tol = T::lit(1e-9);
    for _ in 0..400 {
        let mid = (lo + hi) / T::lit(2.0);
        if hi - lo <= tol.max(mid * T::epsilon() * T::lit(4.0)) {
            break;
        }
        if chi2_sf(mid, df) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / T::lit(2.0)
}

/// Frequencies of each distinct run in the reference and detection windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub categories: Vec<String>,
    pub ref_counts: Vec<u64>,
    pub det_counts: Vec<u64>,
}

impl ContingencyTable {
    pub fn new(
        categories: Vec<String>,
        ref_counts: Vec<u64>,
        det_counts: Vec<u64>,
    ) -> Result<Self, StatsError> {
        if categories.len() != ref_counts.len() {
            return Err(StatsError::LengthMismatch(categories.len(), ref_counts.len()));
        }
        if ref_counts.len() != det_counts.len() {
            return Err(StatsError::LengthMismatch(ref_counts.len(), det_counts.len()));
        }
        Ok(ContingencyTable {
            categories,
            ref_counts,
            det_counts,
        })
    }

    /// Table over the union of two histograms' keys.
    pub fn from_histograms(reference: &Histogram, detection: &Histogram) -> Self {
        let categories: Vec<String> = reference
            .counts
            .keys()
            .chain(detection.counts.keys())
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let ref_counts = categories.iter().map(|k| reference.get(k)).collect();
        let det_counts = categories.iter().map(|k| detection.get(k)).collect();
        ContingencyTable {
            categories,
            ref_counts,
            det_counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome<T> {
    pub statistic: T,
    pub df: usize,
    pub p_value: T,
}

/// Pearson test of independence over a 2×k table given as (ref, det) rows.
/// Rows with zero total are dropped; no continuity correction.
pub fn chi2_independence_counts<T: Scalar>(
    rows: impl IntoIterator<Item = (u64, u64)>,
) -> Result<TestOutcome<T>, StatsError> {
    let rows: Vec<(u64, u64)> = rows.into_iter().filter(|&(r, d)| r + d > 0).collect();
    if rows.len() < 2 {
        return Err(StatsError::Inapplicable("fewer than two categories"));
    }
    let col_ref: u64 = rows.iter().map(|r| r.0).sum();
    let col_det: u64 = rows.iter().map(|r| r.1).sum();
    if col_ref == 0 || col_det == 0 {
        return Err(StatsError::Inapplicable("empty window"));
    }
    let n = T::from_count(col_ref + col_det);
    let (cr, cd) = (T::from_count(col_ref), T::from_count(col_det));
    let mut statistic = T::zero();
    for (r, d) in rows.iter().copied() {
        let total = T::from_count(r + d);
        let (er, ed) = (total * cr / n, total * cd / n);
        let (dr, dd) = (T::from_count(r) - er, T::from_count(d) - ed);
        statistic = statistic + dr * dr / er + dd * dd / ed;
    }
    let df = rows.len() - 1;
    Ok(TestOutcome {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
    })
}

pub fn chi2_independence<T: Scalar>(table: &ContingencyTable) -> Result<TestOutcome<T>, StatsError> {
    chi2_independence_counts(
        table
            .ref_counts
            .iter()
            .copied()
            .zip(table.det_counts.iter().copied()),
    )
}

/// Pearson goodness-of-fit sum Σ (o − e)² / e.
pub fn gof_statistic<T: Scalar>(observed: &[u64], expected: &[T]) -> Result<T, StatsError> {
    if observed.len() != expected.len() {
        return Err(StatsError::LengthMismatch(observed.len(), expected.len()));
    }
    let mut sum = T::zero();
    for (index, (&o, &e)) in observed.iter().zip(expected).enumerate() {
        if !(e > T::zero()) {
            return Err(StatsError::DegenerateCategory { index });
        }
        let diff = T::from_count(o) - e;
        sum = sum + diff * diff / e;
    }
    Ok(sum)
}

/// Three histograms on a shared, pooled category axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedHistograms {
    /// Sorted surviving keys, followed by [`RARE_BUCKET`] when pooling occurred.
    pub categories: Vec<String>,
    pub h_before: Vec<u64>,
    pub h_in: Vec<u64>,
    pub h_after: Vec<u64>,
    /// Keys merged into the rare bucket.
    pub pooled: Vec<String>,
    pub df: usize,
}

impl AlignedHistograms {
    /// A test needs at least one degree of freedom.
    pub fn is_degenerate(&self) -> bool {
        self.df < 1
    }

    /// Mass of `h_in` that landed in the rare bucket.
    pub fn pooled_mass(&self) -> u64 {
        if self.pooled.is_empty() {
            0
        } else {
            *self.h_in.last().expect("rare bucket present")
        }
    }
}

/// Aligns the three histograms on the sorted union of their keys.
///
/// A category is pooled into the rare bucket when even a pure mixture
/// component could not expect one occurrence of it inside `h_in`, i.e. when
/// `h_in.total · max(before_i / before.total, after_i / after.total) < 1`.
/// The rule does not depend on mixture weights, so the category axis and the
/// degrees of freedom are fixed before any search.
pub fn align(h_before: &Histogram, h_in: &Histogram, h_after: &Histogram) -> AlignedHistograms {
    let keys: BTreeSet<&String> = h_before
        .counts
        .keys()
        .chain(h_in.counts.keys())
        .chain(h_after.counts.keys())
        .collect();
    let n_in = h_in.total as f64;
    let share = |h: &Histogram, k: &str| {
        if h.total == 0 {
            0.0
        } else {
            h.get(k) as f64 / h.total as f64
        }
    };

    let mut out = AlignedHistograms {
        categories: Vec::new(),
        h_before: Vec::new(),
        h_in: Vec::new(),
        h_after: Vec::new(),
        pooled: Vec::new(),
        df: 0,
    };
    let mut rare = (0u64, 0u64, 0u64);
    for k in keys {
        let reach = n_in * share(h_before, k).max(share(h_after, k));
        if reach < 1.0 {
            out.pooled.push(k.clone());
            rare.0 += h_before.get(k);
            rare.1 += h_in.get(k);
            rare.2 += h_after.get(k);
        } else {
            out.categories.push(k.clone());
            out.h_before.push(h_before.get(k));
            out.h_in.push(h_in.get(k));
            out.h_after.push(h_after.get(k));
        }
    }
    if !out.pooled.is_empty() {
        out.categories.push(RARE_BUCKET.to_string());
        out.h_before.push(rare.0);
        out.h_in.push(rare.1);
        out.h_after.push(rare.2);
    }
    out.df = out.categories.len().saturating_sub(1);
    out
}

/// Smallest window size for which at most 5% of the contingency cells are
/// expected to hold fewer than five observations, given a run sample.
pub fn min_window_for_test(run_counts: &[u64]) -> usize {
    let counts: Vec<u64> = run_counts.iter().copied().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 5;
    }
    let cells = counts.len() as u64;
    // every category reaches 5 once w·min/total ≥ 5, so the search is bounded
    let min = *counts.iter().min().expect("non-empty");
    let bound = (5 * total).div_ceil(min);
    (1..=bound)
        .find(|&w| {
            let sparse = counts.iter().filter(|&&c| w * c < 5 * total).count() as u64;
            sparse * 20 <= cells
        })
        .unwrap_or(bound) as usize
}
