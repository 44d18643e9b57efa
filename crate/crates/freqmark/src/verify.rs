//! Black-box ownership verification.
//!
//! The owner queries a suspect model with the held-out verification set and
//! counts how often it answers the target class. Under the null hypothesis
//! — the model never saw the watermark and guesses the target at the chance
//! rate — the hit count is binomial, so the decision threshold is the
//! smallest success fraction whose tail probability falls below the chosen
//! significance level. The tail is summed exactly in log space; no normal
//! approximation is involved.

use serde::Serialize;

use crate::data::Dataset;
use crate::oracle::PredictionOracle;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("need at least one query, got {0}")]
    NoQueries(usize),
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("significance must lie strictly between 0 and 1, got {0}")]
    BadAlpha(f64),
    #[error("null rate must lie strictly between 0 and 1, got {0}")]
    BadNullRate(f64),
    #[error(
        "significance {alpha} is unreachable with {n} queries (even {n}/{n} hits has p-value {best:.3e}); need at least {min_queries} queries"
    )]
    InsufficientQueries { n: usize, alpha: f64, best: f64, min_queries: usize },
    #[error("verification set is empty")]
    EmptySet,
    #[error("target class {target} out of range for {num_classes} classes")]
    TargetOutOfRange { target: usize, num_classes: usize },
    #[error("{failed} of {total} queries failed (over the 5% tolerance); decision withheld")]
    TooManyFailures { failed: usize, total: usize },
}

/// Exact upper-tail probability `P[Binomial(n, p) ≥ m]`, summed in log
/// space so it stays meaningful down to vanishing probabilities. The
/// binomial coefficients come from a running table of `ln k!`, not an
/// asymptotic series.
pub fn binomial_tail(n: usize, p: f64, m: usize) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if m > n {
        return 0.0;
    }
    let mut lnf = vec![0.0f64; n + 1];
    for k in 1..=n {
        lnf[k] = lnf[k - 1] + (k as f64).ln();
    }
    let (ln_p, ln_q) = (p.ln(), (1.0 - p).ln());
    // sum exp(ln terms) stably: factor out the largest term
    let ln_terms: Vec<f64> = (m..=n)
        .map(|k| lnf[n] - lnf[k] - lnf[n - k] + k as f64 * ln_p + (n - k) as f64 * ln_q)
        .collect();
    let peak = ln_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return 0.0;
    }
    let sum: f64 = ln_terms.iter().map(|&t| (t - peak).exp()).sum();
    (peak + sum.ln()).exp().min(1.0)
}

/// The decision rule: how many queries, which null, which significance.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdSpec {
    pub queries: usize,
    pub num_classes: usize,
    pub alpha: f64,
    /// Probability that a non-watermarked model hits the target by chance.
    /// `None` means uniform guessing at `1/num_classes`; a measured
    /// clean-model rate can be supplied for a stricter null.
    pub null_rate: Option<f64>,
}

impl ThresholdSpec {
    pub fn new(queries: usize, num_classes: usize, alpha: f64) -> Self {
        Self { queries, num_classes, alpha, null_rate: None }
    }

    pub fn null_rate(&self) -> f64 {
        self.null_rate.unwrap_or(1.0 / self.num_classes as f64)
    }
}

/// The computed decision threshold: the smallest hit fraction that is
/// statistically inconsistent with chance-level guessing.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Threshold {
    /// Minimum number of target hits out of `queries`.
    pub min_hits: usize,
    /// `min_hits / queries`.
    pub tau: f64,
    /// Exact tail probability at `min_hits` — the guarantee actually
    /// achieved, always below the requested significance.
    pub achieved_alpha: f64,
}

/// Smallest `m/n` with `P[Binomial(n, null) ≥ m] < alpha`, by exact tail
/// summation. Errors when even `n` hits out of `n` would not be significant,
/// reporting the minimum query count that would be.
pub fn compute_threshold(spec: &ThresholdSpec) -> Result<Threshold, VerifyError> {
    let n = spec.queries;
    if n == 0 {
        return Err(VerifyError::NoQueries(n));
    }
    if spec.num_classes < 2 {
        return Err(VerifyError::TooFewClasses(spec.num_classes));
    }
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(VerifyError::BadAlpha(spec.alpha));
    }
    let p = spec.null_rate();
    if !(p > 0.0 && p < 1.0) {
        return Err(VerifyError::BadNullRate(p));
    }

    let best = binomial_tail(n, p, n); // = p^n, the most extreme outcome
    if best >= spec.alpha {
        // p^min < alpha  ⇔  min > ln(alpha)/ln(p); take the next integer
        let min_queries = (spec.alpha.ln() / p.ln()).floor() as usize + 1;
        return Err(VerifyError::InsufficientQueries { n, alpha: spec.alpha, best, min_queries });
    }
    // the tail is nonincreasing in m, so binary search for the first m
    // with tail(m) < alpha
    let (mut lo, mut hi) = (1usize, n); // tail(hi) < alpha holds
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if binomial_tail(n, p, mid) < spec.alpha {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(Threshold {
        min_hits: lo,
        tau: lo as f64 / n as f64,
        achieved_alpha: binomial_tail(n, p, lo),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Decision {
    Owned,
    NotOwned,
}

/// Outcome of querying a suspect model with the verification set.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    /// Queries answered (failures excluded).
    pub queries: usize,
    pub failed_queries: usize,
    pub target: usize,
    pub hits: usize,
    pub wsr: f64,
    pub tau: f64,
    pub alpha: f64,
    pub null_rate: f64,
    /// Exact probability of at least `hits` target answers under the null.
    pub p_value: f64,
    pub decision: Decision,
}

/// Query every verification sample against the oracle and decide ownership
/// at threshold `tau`. Individual query failures are tolerated up to 5% of
/// the set; beyond that no decision is issued.
pub fn verify_ownership(
    oracle: &dyn PredictionOracle,
    verification: &Dataset,
    target: usize,
    spec: &ThresholdSpec,
) -> Result<VerificationReport, VerifyError> {
    if verification.is_empty() {
        return Err(VerifyError::EmptySet);
    }
    let num_classes = oracle.num_classes();
    if target >= num_classes {
        return Err(VerifyError::TargetOutOfRange { target, num_classes });
    }
    let p = spec.null_rate();
    if !(p > 0.0 && p < 1.0) {
        return Err(VerifyError::BadNullRate(p));
    }

    let total = verification.len();
    let mut hits = 0usize;
    let mut failed = 0usize;
    for sample in verification.samples() {
        match oracle.predict(&sample.image) {
            Ok(label) => {
                if label == target {
                    hits += 1;
                }
            }
            Err(e) => {
                log::warn!("verification query failed: {e}");
                failed += 1;
            }
        }
    }
    if failed * 20 > total {
        return Err(VerifyError::TooManyFailures { failed, total });
    }
    let answered = total - failed;
    // the threshold fraction comes from `spec`; the p-value uses the count
    // of queries actually answered
    let threshold = compute_threshold(&ThresholdSpec { queries: answered, ..spec.clone() })?;
    let wsr = hits as f64 / answered as f64;
    let decision = if wsr >= threshold.tau { Decision::Owned } else { Decision::NotOwned };
    Ok(VerificationReport {
        queries: answered,
        failed_queries: failed,
        target,
        hits,
        wsr,
        tau: threshold.tau,
        alpha: spec.alpha,
        null_rate: p,
        p_value: binomial_tail(answered, p, hits),
        decision,
    })
}
