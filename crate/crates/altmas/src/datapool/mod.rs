//! Evaluation pool and labeled/unlabeled bookkeeping.
//!
//! A [`TestPool`] carries the features, the frozen predictions of the
//! model-under-test and the hidden ground truth. During an experiment the
//! truth is only reachable through [`LabelState::oracle_query`], which
//! enforces the labeling budget; direct access exists for computing reference
//! values in reports.

pub mod io;

pub use io::{
    load_csv_pool, load_idx, load_predictions, write_csv_pool, write_idx_images, write_idx_labels,
    write_predictions,
};

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// An evaluation pool: N feature rows, the model-under-test's prediction for
/// each row, and the true label for each row.
#[derive(Debug, Clone)]
pub struct TestPool {
    features: Array2<f64>,
    predictions: Vec<usize>,
    truth: Vec<usize>,
    classes: usize,
}

impl TestPool {
    pub fn new(
        features: Array2<f64>,
        predictions: Vec<usize>,
        truth: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if predictions.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: predictions.len(),
            });
        }
        if truth.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: truth.len(),
            });
        }
        for &v in predictions.iter().chain(&truth) {
            if v >= classes {
                return Err(Error::LabelRange {
                    value: v as i64,
                    classes,
                });
            }
        }
        Ok(TestPool {
            features,
            predictions,
            truth,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn feature_row(&self, index: usize) -> ArrayView1<'_, f64> {
        self.features.row(index)
    }

    /// Frozen predictions of the model-under-test.
    pub fn predictions(&self) -> &[usize] {
        &self.predictions
    }

    /// Ground-truth labels. Reporting only — the testing loop must go through
    /// [`LabelState::oracle_query`].
    pub fn ground_truth(&self) -> &[usize] {
        &self.truth
    }

    /// New pool keeping only the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<TestPool> {
        let d = self.num_features();
        let mut features = Array2::zeros((indices.len(), d));
        let mut predictions = Vec::with_capacity(indices.len());
        let mut truth = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange(i));
            }
            features.row_mut(row).assign(&self.features.row(i));
            predictions.push(self.predictions[i]);
            truth.push(self.truth[i]);
        }
        TestPool::new(features, predictions, truth, self.classes)
    }

    /// Shifts and scales every feature column to zero mean and unit variance
    /// (constant columns are left centered).
    pub fn standardize_features(&mut self) {
        let n = self.len() as f64;
        if n == 0.0 {
            return;
        }
        for mut col in self.features.columns_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 0.0 {
                col.mapv_inplace(|v| (v - mean) / sd);
            } else {
                col.mapv_inplace(|v| v - mean);
            }
        }
    }
}

/// Which pool points have been labeled, in what order, and how much budget
/// has been spent. The seed set drawn by [`LabelState::init`] does not count
/// against the budget.
#[derive(Debug, Clone)]
pub struct LabelState {
    revealed: Vec<Option<usize>>,
    labeled_order: Vec<usize>,
    unlabeled: BTreeSet<usize>,
    seed_count: usize,
    budget_total: usize,
    budget_used: usize,
}

impl LabelState {
    /// Draws `n0` seed points uniformly without replacement, labels them for
    /// free and arms the budget for everything after.
    pub fn init(pool: &TestPool, n0: usize, budget_total: usize, seed: u64) -> Result<Self> {
        if n0 == 0 {
            return Err(Error::Config("seed set size must be positive".into()));
        }
        if n0 > pool.len() {
            return Err(Error::TooFew {
                what: "pool points for the seed set",
                need: n0,
                got: pool.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        let mut state = LabelState {
            revealed: vec![None; pool.len()],
            labeled_order: Vec::with_capacity(n0),
            unlabeled: (0..pool.len()).collect(),
            seed_count: n0,
            budget_total,
            budget_used: 0,
        };
        for &i in order.iter().take(n0) {
            state.reveal(pool, i)?;
        }
        Ok(state)
    }

    fn reveal(&mut self, pool: &TestPool, index: usize) -> Result<usize> {
        if index >= self.revealed.len() {
            return Err(Error::IndexOutOfRange(index));
        }
        if self.revealed[index].is_some() {
            return Err(Error::AlreadyLabeled(index));
        }
        let label = pool.ground_truth()[index];
        self.revealed[index] = Some(label);
        self.labeled_order.push(index);
        self.unlabeled.remove(&index);
        Ok(label)
    }

    /// Reveals the true label of one unlabeled point, spending one unit of
    /// budget. Fails on labeled or out-of-range indices and when the budget
    /// is gone.
    pub fn oracle_query(&mut self, pool: &TestPool, index: usize) -> Result<usize> {
        if self.budget_used >= self.budget_total {
            return Err(Error::BudgetExhausted(self.budget_used));
        }
        let label = self.reveal(pool, index)?;
        self.budget_used += 1;
        Ok(label)
    }

    pub fn is_labeled(&self, index: usize) -> bool {
        self.revealed.get(index).is_some_and(Option::is_some)
    }

    pub fn revealed_label(&self, index: usize) -> Option<usize> {
        self.revealed.get(index).copied().flatten()
    }

    /// (pool index, revealed label) pairs in the order they were labeled,
    /// seed set first.
    pub fn labeled_pairs(&self) -> Vec<(usize, usize)> {
        self.labeled_order
            .iter()
            .map(|&i| (i, self.revealed[i].expect("labeled index holds a label")))
            .collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled_order.len()
    }

    /// Total labels revealed so far, seed set included.
    pub fn labels_spent(&self) -> usize {
        self.labeled_count()
    }

    pub fn unlabeled(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn seed_count(&self) -> usize {
        self.seed_count
    }

    pub fn budget_used(&self) -> usize {
        self.budget_used
    }

    pub fn budget_total(&self) -> usize {
        self.budget_total
    }

    pub fn budget_left(&self) -> usize {
        self.budget_total - self.budget_used
    }
}

/// Splits `(index, class)` pairs into (train, validation) parts.
///
/// The validation part gets `round(fraction * n)` items, clamped to leave at
/// least one item on each side. When every class present has at least two
/// members the split is stratified (largest-remainder quotas per class);
/// otherwise it falls back to a plain shuffled split.
#[allow(clippy::type_complexity)]
pub fn split_validation(
    pairs: &[(usize, usize)],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::TooFew {
            what: "pairs to split",
            need: 2,
            got: n,
        });
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "validation fraction {fraction} outside [0, 1]"
        )));
    }
    let target = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_class: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for &pair in pairs {
        match by_class.iter_mut().find(|(c, _)| *c == pair.1) {
            Some((_, bucket)) => bucket.push(pair),
            None => by_class.push((pair.1, vec![pair])),
        }
    }
    by_class.sort_by_key(|(c, _)| *c);
    let stratify = by_class.len() >= 2 && by_class.iter().all(|(_, b)| b.len() >= 2);

    let mut valid = Vec::with_capacity(target);
    let mut train = Vec::with_capacity(n - target);
    if stratify {
        // Largest-remainder quotas: every class gets floor(share), the
        // classes with the biggest fractional parts absorb the remainder.
        let mut quotas: Vec<(usize, f64)> = by_class
            .iter()
            .map(|(_, b)| {
                let share = target as f64 * b.len() as f64 / n as f64;
                (share.floor() as usize, share - share.floor())
            })
            .collect();
        let mut assigned: usize = quotas.iter().map(|(q, _)| *q).sum();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
        let mut cursor = 0;
        while assigned < target {
            quotas[order[cursor % order.len()]].0 += 1;
            assigned += 1;
            cursor += 1;
        }
        for ((_, mut bucket), (quota, _)) in by_class.into_iter().zip(quotas) {
            let quota = quota.min(bucket.len().saturating_sub(1));
            bucket.shuffle(&mut rng);
            valid.extend(bucket.drain(..quota));
            train.extend(bucket);
        }
    } else {
        let mut shuffled = pairs.to_vec();
        shuffled.shuffle(&mut rng);
        valid.extend(shuffled.drain(..target));
        train.extend(shuffled);
    }
    // Quota clamping can leave the validation part short; top it up from the
    // largest remaining surplus to honor the target.
    while valid.len() < target {
        if train.len() <= 1 {
            break;
        }
        valid.push(train.pop().expect("train part non-empty"));
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}
