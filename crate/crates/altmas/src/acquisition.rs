//! Acquisition scores for choosing the next oracle queries.
//!
//! The metric-aware score of an unlabeled point is the mutual information
//! between its unknown label and the *metric*, not the label itself: for each
//! candidate label we price the metric under the posterior samples
//! ([`crate::metrics::candidate_metric_values`]), fuse candidates whose
//! values agree within a tolerance into groups, and measure how much the
//! group membership's entropy drops when the posterior sample is revealed.
//! Labels the metric cannot distinguish therefore contribute nothing. Plain
//! predictive-label information ([`bald_scores`]) and uniform random
//! selection are the baselines.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datapool::{LabelState, TestPool};
use crate::estimation::composite_counts;
use crate::metrics::{candidate_metric_values, group_values, MetricSpec, ZeroDivision};
use crate::surrogate::PosteriorSamples;
use crate::{Error, Result};

/// Shannon entropy in nats, with 0 ln 0 = 0. Masses may be any non-negative
/// weights summing to one.
pub fn entropy(masses: &[f64]) -> f64 {
    masses
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Scores for a set of candidate indices, ordered by index.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionScores {
    scores: BTreeMap<usize, f64>,
}

impl AcquisitionScores {
    pub fn from_map(scores: BTreeMap<usize, f64>) -> Self {
        AcquisitionScores { scores }
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.scores.get(&index).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.scores.iter().map(|(&i, &s)| (i, s))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Predictive-label information per unlabeled point: entropy of the mean
/// class distribution minus the mean per-pass entropy, before clamping.
pub fn bald_scores_raw(
    ps: &PosteriorSamples,
    unlabeled: &BTreeSet<usize>,
) -> Result<BTreeMap<usize, f64>> {
    check_indices(ps, unlabeled)?;
    let m = ps.num_samples();
    let c = ps.num_classes();
    let mut scores = BTreeMap::new();
    let mut row = vec![0.0; c];
    for &x in unlabeled {
        let mean = ps.mean_probs(x);
        let marginal = entropy(mean.as_slice().expect("contiguous"));
        let mut conditional = 0.0;
        for j in 0..m {
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = ps.prob(j, x, k);
            }
            conditional += entropy(&row);
        }
        conditional /= m as f64;
        scores.insert(x, marginal - conditional);
    }
    Ok(scores)
}

/// [`bald_scores_raw`] clamped at zero.
pub fn bald_scores(
    ps: &PosteriorSamples,
    unlabeled: &BTreeSet<usize>,
) -> Result<AcquisitionScores> {
    let raw = bald_scores_raw(ps, unlabeled)?;
    Ok(AcquisitionScores::from_map(
        raw.into_iter().map(|(i, s)| (i, s.max(0.0))).collect(),
    ))
}

fn check_indices(ps: &PosteriorSamples, unlabeled: &BTreeSet<usize>) -> Result<()> {
    if let Some(&out) = unlabeled.iter().find(|&&i| i >= ps.num_points()) {
        return Err(Error::IndexOutOfRange(out));
    }
    Ok(())
}

/// Metric-aware information per unlabeled point, before clamping.
///
/// For point x the candidate metric values are grouped with tolerance `eps`;
/// the score is the entropy of the group masses under the posterior-mean
/// distribution minus the mean of the per-pass group-mass entropies, both
/// over the same grouping. A point every candidate of which lands in one
/// group scores exactly zero.
pub fn metric_mi_scores_raw(
    spec: &MetricSpec,
    ps: &PosteriorSamples,
    pool: &TestPool,
    state: &LabelState,
    eps: f64,
    zero: ZeroDivision,
) -> Result<BTreeMap<usize, f64>> {
    check_indices(ps, state.unlabeled())?;
    let counts = composite_counts(ps, pool, state)?;
    let m = ps.num_samples();
    let mut scores = BTreeMap::new();
    let mut sampled = vec![0usize; m];
    for &x in state.unlabeled() {
        let pred = pool.predictions()[x];
        for (j, slot) in sampled.iter_mut().enumerate() {
            *slot = ps.label(j, x);
        }
        let q = candidate_metric_values(spec, &counts, pred, &sampled, zero)?;
        let groups = group_values(&q, eps);
        if groups.len() == 1 {
            scores.insert(x, 0.0);
            continue;
        }
        let mean = ps.mean_probs(x);
        let mut mean_masses = Vec::with_capacity(groups.len());
        for g in &groups {
            mean_masses.push(g.members.iter().map(|&h| mean[h]).sum::<f64>());
        }
        let marginal = entropy(&mean_masses);
        let mut conditional = 0.0;
        let mut masses = vec![0.0; groups.len()];
        for j in 0..m {
            for (g, slot) in groups.iter().zip(masses.iter_mut()) {
                *slot = g.members.iter().map(|&h| ps.prob(j, x, h)).sum::<f64>();
            }
            conditional += entropy(&masses);
        }
        conditional /= m as f64;
        scores.insert(x, marginal - conditional);
    }
    Ok(scores)
}

/// [`metric_mi_scores_raw`] clamped at zero.
pub fn metric_mi_scores(
    spec: &MetricSpec,
    ps: &PosteriorSamples,
    pool: &TestPool,
    state: &LabelState,
    eps: f64,
    zero: ZeroDivision,
) -> Result<AcquisitionScores> {
    let raw = metric_mi_scores_raw(spec, ps, pool, state, eps, zero)?;
    Ok(AcquisitionScores::from_map(
        raw.into_iter().map(|(i, s)| (i, s.max(0.0))).collect(),
    ))
}

/// Elementwise sum of the clamped single-metric scores, so a point is worth
/// what it teaches about the whole requested metric set.
pub fn multi_metric_scores(
    specs: &[MetricSpec],
    ps: &PosteriorSamples,
    pool: &TestPool,
    state: &LabelState,
    eps: f64,
    zero: ZeroDivision,
) -> Result<AcquisitionScores> {
    if specs.is_empty() {
        return Err(Error::Config("no metrics to score against".into()));
    }
    let mut total: BTreeMap<usize, f64> = BTreeMap::new();
    for spec in specs {
        for (i, s) in metric_mi_scores(spec, ps, pool, state, eps, zero)?.iter() {
            *total.entry(i).or_insert(0.0) += s;
        }
    }
    Ok(AcquisitionScores::from_map(total))
}

/// Index with the highest score; ties break toward the lowest index.
pub fn select_next(scores: &AcquisitionScores) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter() {
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyScores)
}

/// The `count` highest-scoring indices, ordered by descending score with
/// ties toward lower indices.
pub fn select_top(scores: &AcquisitionScores, count: usize) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut ranked: Vec<(usize, f64)> = scores.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.iter().take(count).map(|&(i, _)| i).collect())
}

/// One index drawn uniformly from the unlabeled set.
pub fn random_select(unlabeled: &BTreeSet<usize>, seed: u64) -> Result<usize> {
    Ok(random_select_batch(unlabeled, 1, seed)?[0])
}

/// `count` distinct indices drawn uniformly without replacement.
pub fn random_select_batch(
    unlabeled: &BTreeSet<usize>,
    count: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if unlabeled.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = unlabeled.iter().copied().collect();
    let take = count.min(pool.len());
    // Partial Fisher-Yates: draw the first `take` positions.
    for k in 0..take {
        let j = rng.random_range(k..pool.len());
        pool.swap(k, j);
    }
    pool.truncate(take);
    Ok(pool)
}
