//! Holdout confidence widths, minimum sample-size solving, and multi-run
//! aggregation (mean ± standard deviation).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the holdout confidence bound: `n` holdout samples, `k`
/// models compared, failure probability `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSpec {
    pub n: u64,
    pub k: u64,
    pub delta: f64,
}

impl ConfidenceSpec {
    pub fn new(n: u64, k: u64, delta: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::validation("sample count n must be at least 1"));
        }
        if k < 1 {
            return Err(Error::validation("model count k must be at least 1"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::validation(format!(
                "delta must lie strictly between 0 and 1, got {delta}"
            )));
        }
        Ok(ConfidenceSpec { n, k, delta })
    }
}

/// Half-width of the holdout estimate: `sqrt(ln(k / delta) / n)`.
/// A loss estimated on `n` samples is within `±` this of its expectation
/// with probability `1 - delta`, simultaneously for `k` models.
pub fn confidence_width(spec: &ConfidenceSpec) -> f64 {
    ((spec.k as f64 / spec.delta).ln() / spec.n as f64).sqrt()
}

/// Whether holdout sets of sizes `n_a` and `n_b` can resolve a true gap of
/// `gap`: the two confidence widths must sum to at most the gap.
pub fn gap_resolvable(n_a: u64, n_b: u64, k: u64, delta: f64, gap: f64) -> Result<bool> {
    if gap <= 0.0 || !gap.is_finite() {
        return Err(Error::validation(format!(
            "gap must be positive, got {gap}"
        )));
    }
    let width_a = confidence_width(&ConfidenceSpec::new(n_a, k, delta)?);
    let width_b = confidence_width(&ConfidenceSpec::new(n_b, k, delta)?);
    Ok(width_a + width_b <= gap)
}

/// Smallest `(n_a, n_b)` with `n_a = ceil(ratio * n_b)` that resolves `gap`.
/// Monotone non-increasing in `gap`.
pub fn min_samples(ratio: f64, k: u64, delta: f64, gap: f64) -> Result<(u64, u64)> {
    if ratio < 1.0 || !ratio.is_finite() {
        return Err(Error::validation(format!(
            "ratio must be at least 1, got {ratio}"
        )));
    }
    if gap <= 0.0 || !gap.is_finite() {
        return Err(Error::validation(format!(
            "gap must be positive, got {gap}"
        )));
    }
    ConfidenceSpec::new(1, k, delta)?;

    let n_a_for = |n_b: u64| (ratio * n_b as f64).ceil() as u64;
    let resolvable = |n_b: u64| {
        gap_resolvable(n_a_for(n_b), n_b, k, delta, gap).expect("inputs validated above")
    };

    // Widths decrease in n, so the predicate is monotone in n_b: find an
    // upper bound by doubling, then binary search for the boundary.
    let mut hi = 1u64;
    while !resolvable(hi) {
        hi = hi.saturating_mul(2);
    }
    let mut lo = 1u64;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if resolvable(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok((n_a_for(lo), lo))
}

/// Mean and sample standard deviation over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single run.
    pub std: f64,
    pub run_count: usize,
}

/// Aggregates run results into mean ± sample standard deviation.
pub fn aggregate_runs(values: &[f64]) -> Result<RunAggregate> {
    if values.is_empty() {
        return Err(Error::validation("cannot aggregate zero runs"));
    }
    // Welford's online recurrence.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &value) in values.iter().enumerate() {
        let delta = value - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (value - mean);
    }
    let std = if values.len() > 1 {
        (m2 / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(RunAggregate {
        mean,
        std,
        run_count: values.len(),
    })
}
