//! Metric estimation from the surrogate posterior.
//!
//! Each posterior sample j induces a composite label vector: labeled points
//! keep their revealed truth, unlabeled points take sample j's hard label.
//! A metric's estimate is the average of its value over those M composite
//! confusion matrices; with everything labeled the samples coincide and the
//! estimate is exact.

use ndarray::Array1;

use crate::datapool::{LabelState, TestPool};
use crate::metrics::{ConfusionCounts, MetricSpec, ZeroDivision};
use crate::surrogate::PosteriorSamples;
use crate::{Error, Result};

/// Floor for the denominator of [`relative_error`], guarding metrics whose
/// true value is zero.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// One metric's estimate next to its ground-truth value.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricEstimate {
    pub name: String,
    pub estimate: f64,
    pub truth: f64,
    pub relative_error: f64,
    pub absolute_error: f64,
}

pub fn relative_error(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs() / truth.max(RELATIVE_ERROR_FLOOR)
}

/// Composite confusion counts, one per posterior sample: the model-under-test
/// predictions tallied against revealed labels where available and sample j's
/// labels elsewhere.
pub fn composite_counts(
    ps: &PosteriorSamples,
    pool: &TestPool,
    state: &LabelState,
) -> Result<Vec<ConfusionCounts>> {
    if ps.num_points() != pool.len() {
        return Err(Error::LengthMismatch {
            left: ps.num_points(),
            right: pool.len(),
        });
    }
    if ps.num_classes() != pool.classes() {
        return Err(Error::DimensionMismatch {
            data: ps.num_classes(),
            expected: pool.classes(),
        });
    }
    let preds = pool.predictions();
    let mut base = ConfusionCounts::new(pool.classes());
    for (i, y) in state.labeled_pairs() {
        base.record(preds[i], y);
    }
    let unlabeled: Vec<usize> = state.unlabeled().iter().copied().collect();
    let mut counts = Vec::with_capacity(ps.num_samples());
    for j in 0..ps.num_samples() {
        let mut cc = base.clone();
        for &i in &unlabeled {
            cc.record(preds[i], ps.label(j, i));
        }
        counts.push(cc);
    }
    Ok(counts)
}

/// Mean of the metric over composite counts. When every sample evaluates to
/// the same value the mean short-circuits to that value, so a posterior that
/// pins all labels reproduces the direct evaluation bit for bit; otherwise
/// the mean is clamped into the sample range.
fn mean_over_counts(
    spec: &MetricSpec,
    counts: &[ConfusionCounts],
    zero: ZeroDivision,
) -> Result<f64> {
    let mut values = Vec::with_capacity(counts.len());
    for cc in counts {
        values.push(spec.evaluate_with(cc, zero)?);
    }
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Ok(first);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in &values {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
    }
    Ok((sum / values.len() as f64).clamp(lo, hi))
}

/// Posterior-mean estimate of one metric.
pub fn estimate_metric(
    spec: &MetricSpec,
    ps: &PosteriorSamples,
    pool: &TestPool,
    state: &LabelState,
    zero: ZeroDivision,
) -> Result<f64> {
    let counts = composite_counts(ps, pool, state)?;
    mean_over_counts(spec, &counts, zero)
}

/// Estimates every requested metric and pairs it with its ground-truth value
/// over the full pool. The composite counts are built once and shared.
pub fn estimate_all(
    specs: &[MetricSpec],
    ps: &PosteriorSamples,
    pool: &TestPool,
    state: &LabelState,
    zero: ZeroDivision,
) -> Result<Vec<MetricEstimate>> {
    let counts = composite_counts(ps, pool, state)?;
    let truth_counts =
        ConfusionCounts::from_labels(pool.predictions(), pool.ground_truth(), pool.classes())?;
    specs
        .iter()
        .map(|spec| {
            let estimate = mean_over_counts(spec, &counts, zero)?;
            let truth = spec.evaluate_with(&truth_counts, zero)?;
            Ok(MetricEstimate {
                name: spec.name(),
                estimate,
                truth,
                relative_error: relative_error(estimate, truth),
                absolute_error: (estimate - truth).abs(),
            })
        })
        .collect()
}

/// Fraction of pool points whose majority-vote label over the posterior
/// samples matches the ground truth (ties vote for the lowest class).
pub fn surrogate_accuracy(ps: &PosteriorSamples, pool: &TestPool) -> Result<f64> {
    if ps.num_points() != pool.len() {
        return Err(Error::LengthMismatch {
            left: ps.num_points(),
            right: pool.len(),
        });
    }
    let mut correct = 0usize;
    let mut votes = Array1::<usize>::zeros(ps.num_classes());
    for i in 0..pool.len() {
        votes.fill(0);
        for j in 0..ps.num_samples() {
            votes[ps.label(j, i)] += 1;
        }
        let mut winner = 0;
        for c in 1..votes.len() {
            if votes[c] > votes[winner] {
                winner = c;
            }
        }
        if pool.ground_truth()[i] < ps.num_classes() && winner == pool.ground_truth()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / pool.len() as f64)
}
