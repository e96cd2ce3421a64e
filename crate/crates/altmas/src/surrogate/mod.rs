//! Label-distribution surrogate and training-set augmentation.
//!
//! The surrogate is an MLP trained on the labeled part of the pool; Monte
//! Carlo dropout turns it into an approximate posterior by running `m`
//! stochastic forward passes, each through one shared thinned network
//! ([`mc_forward`]). A separate binary "agreement" classifier of the same
//! architecture predicts where the model-under-test is right, and the points
//! it is most confident about are folded back into surrogate training with
//! the model-under-test's own outputs as labels ([`build_augmented_set`]).

mod mlp;

pub use mlp::{gradient_check, train_mlp, Mlp, MlpConfig, GRADIENT_CHECK_STEP};

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datapool::{split_validation, TestPool};
use crate::{Error, Result};

/// Probabilities and hard labels from `m` stochastic forward passes over the
/// whole pool: `probs[j, i, c]` is pass j's class-c probability for point i,
/// `label(j, i)` its argmax (lowest index on ties).
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    probs: Array3<f64>,
    labels: Array2<usize>,
}

impl PosteriorSamples {
    /// Validates that every row is a distribution (entries non-negative,
    /// sums within 1e-6 of one) and derives the per-pass hard labels.
    pub fn from_probs(probs: Array3<f64>) -> Result<Self> {
        let (m, n, c) = probs.dim();
        if m == 0 || n == 0 || c == 0 {
            return Err(Error::Numeric("posterior samples are empty".into()));
        }
        let mut labels = Array2::zeros((m, n));
        for j in 0..m {
            for i in 0..n {
                let row = probs.slice(ndarray::s![j, i, ..]);
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
                    return Err(Error::Numeric(format!(
                        "pass {j}, point {i}: probabilities sum to {sum}"
                    )));
                }
                labels[[j, i]] = argmax(row.iter().copied());
            }
        }
        Ok(PosteriorSamples { probs, labels })
    }

    pub fn num_samples(&self) -> usize {
        self.probs.dim().0
    }

    pub fn num_points(&self) -> usize {
        self.probs.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.probs.dim().2
    }

    pub fn probs(&self) -> ArrayView3<'_, f64> {
        self.probs.view()
    }

    pub fn prob(&self, sample: usize, point: usize, class: usize) -> f64 {
        self.probs[[sample, point, class]]
    }

    pub fn label(&self, sample: usize, point: usize) -> usize {
        self.labels[[sample, point]]
    }

    /// Posterior-mean class distribution for one point.
    pub fn mean_probs(&self, point: usize) -> Array1<f64> {
        self.probs
            .slice(ndarray::s![.., point, ..])
            .mean_axis(Axis(0))
            .expect("at least one sample")
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Runs `m` stochastic forward passes over `features`. Pass j draws its
/// dropout masks from stream j of the seeded generator and applies the same
/// thinned network to every row, so results are reproducible and independent
/// of batch order. With dropout disabled all passes coincide.
pub fn mc_forward(
    mlp: &Mlp,
    features: ArrayView2<f64>,
    m: usize,
    seed: u64,
) -> Result<PosteriorSamples> {
    if m == 0 {
        return Err(Error::TooFew {
            what: "stochastic forward passes",
            need: 1,
            got: 0,
        });
    }
    let n = features.nrows();
    let c = mlp.output_dim();
    let mut probs = Array3::zeros((m, n, c));
    for j in 0..m {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64 + 1);
        let masks = mlp.sample_unit_masks(&mut rng);
        let pass = mlp.forward_masked_units(features, &masks)?;
        probs.index_axis_mut(Axis(0), j).assign(&pass);
    }
    PosteriorSamples::from_probs(probs)
}

/// Knobs for the agreement classifier and the size of the augmented set.
#[derive(Debug, Clone)]
pub struct AgreementConfig {
    /// Architecture and training settings; mirrors the surrogate's config.
    pub mlp: MlpConfig,
    /// Share of labeled pairs held out to tune the decision threshold.
    pub validation_fraction: f64,
    /// The augmented set keeps `floor(precision^exponent * candidates)`
    /// points.
    pub precision_exponent: f64,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        AgreementConfig {
            mlp: MlpConfig::default(),
            validation_fraction: 0.3,
            precision_exponent: 2.0,
        }
    }
}

/// Binary classifier for "the model-under-test is correct here".
#[derive(Debug, Clone)]
pub enum AgreementClassifier {
    /// Degenerate case: the training part held a single class.
    Constant(usize),
    Net(Box<Mlp>),
}

/// Trained agreement classifier with its tuned threshold and the precision
/// it reached on the validation part.
#[derive(Debug, Clone)]
pub struct AgreementModel {
    pub classifier: AgreementClassifier,
    pub threshold: f64,
    pub validation_precision: f64,
}

impl AgreementModel {
    /// P(model-under-test is correct) per row.
    pub fn agree_probabilities(&self, features: ArrayView2<f64>) -> Result<Vec<f64>> {
        match &self.classifier {
            AgreementClassifier::Constant(c) => Ok(vec![*c as f64; features.nrows()]),
            AgreementClassifier::Net(mlp) => {
                let p = mlp.predict_proba(features)?;
                Ok(p.column(1).to_vec())
            }
        }
    }
}

/// Duplicates uniformly drawn members of the minority class until both
/// classes have equal cardinality. Original pairs keep their order; the
/// duplicates are appended.
fn oversample_balance(pairs: &[(usize, usize)], rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let ones: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(_, t)| t == 1).collect();
    let zeros: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(_, t)| t == 0).collect();
    let mut out = pairs.to_vec();
    if ones.is_empty() || zeros.is_empty() {
        return out;
    }
    let minority = if ones.len() < zeros.len() {
        &ones
    } else {
        &zeros
    };
    let deficit = ones.len().abs_diff(zeros.len());
    for _ in 0..deficit {
        out.push(minority[rng.random_range(0..minority.len())]);
    }
    out
}

fn gather_rows(pool: &TestPool, indices: &[usize]) -> Array2<f64> {
    let mut rows = Array2::zeros((indices.len(), pool.num_features()));
    for (r, &i) in indices.iter().enumerate() {
        rows.row_mut(r).assign(&pool.feature_row(i));
    }
    rows
}

const THRESHOLD_GRID_STEPS: usize = 100;

fn threshold_grid() -> impl Iterator<Item = f64> {
    (0..=THRESHOLD_GRID_STEPS).map(|k| 0.5 + k as f64 * (0.5 / THRESHOLD_GRID_STEPS as f64))
}

/// Trains the binary agreement classifier on the labeled pairs and tunes its
/// threshold for the highest precision on a held-out validation part (ties
/// go to the higher threshold). Needs at least 10 labeled pairs. When the
/// training part degenerates to one class, a constant classifier comes back
/// with that class's validation frequency as its precision.
pub fn train_agreement_classifier(
    pool: &TestPool,
    labeled: &[(usize, usize)],
    cfg: &AgreementConfig,
    seed: u64,
) -> Result<AgreementModel> {
    if labeled.len() < 10 {
        return Err(Error::TooFew {
            what: "labeled pairs for agreement training",
            need: 10,
            got: labeled.len(),
        });
    }
    let pairs: Vec<(usize, usize)> = labeled
        .iter()
        .map(|&(i, y)| (i, (pool.predictions()[i] == y) as usize))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split_seed: u64 = rng.random();
    let net_seed: u64 = rng.random();
    let (train_part, valid_part) = split_validation(&pairs, cfg.validation_fraction, split_seed)?;

    let first = train_part[0].1;
    if train_part.iter().all(|&(_, t)| t == first) {
        let freq = valid_part.iter().filter(|&&(_, t)| t == first).count() as f64
            / valid_part.len() as f64;
        return Ok(AgreementModel {
            classifier: AgreementClassifier::Constant(first),
            threshold: 0.5,
            validation_precision: freq,
        });
    }

    let balanced = oversample_balance(&train_part, &mut rng);
    let features = gather_rows(pool, &balanced.iter().map(|&(i, _)| i).collect::<Vec<_>>());
    let targets: Vec<usize> = balanced.iter().map(|&(_, t)| t).collect();
    let net = train_mlp(
        &cfg.mlp.clone().with_seed(net_seed),
        features.view(),
        &targets,
        2,
    )?;

    let valid_features = gather_rows(
        pool,
        &valid_part.iter().map(|&(i, _)| i).collect::<Vec<_>>(),
    );
    let model = AgreementModel {
        classifier: AgreementClassifier::Net(Box::new(net)),
        threshold: 0.5,
        validation_precision: 0.0,
    };
    let probs = model.agree_probabilities(valid_features.view())?;
    let mut best_tau = 0.5;
    let mut best_precision = -1.0;
    for tau in threshold_grid() {
        let mut marked = 0usize;
        let mut correct = 0usize;
        for (&p, &(_, t)) in probs.iter().zip(&valid_part) {
            if p >= tau {
                marked += 1;
                correct += t;
            }
        }
        let precision = if marked == 0 {
            0.0
        } else {
            correct as f64 / marked as f64
        };
        if precision >= best_precision {
            best_precision = precision;
            best_tau = tau;
        }
    }
    Ok(AgreementModel {
        threshold: best_tau,
        validation_precision: best_precision,
        ..model
    })
}

/// Unlabeled points judged reliable enough to train on, labeled with the
/// model-under-test's own outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSet {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub validation_precision: f64,
}

impl AugmentedSet {
    pub fn empty() -> Self {
        AugmentedSet {
            indices: Vec::new(),
            labels: Vec::new(),
            validation_precision: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Ranks unlabeled points by agreement probability, keeps those at or above
/// the tuned threshold, and returns the top
/// `floor(validation_precision^exponent * candidates)` of them with the
/// model-under-test's predictions as labels. An empty result is fine.
pub fn build_augmented_set(
    model: &AgreementModel,
    pool: &TestPool,
    unlabeled: &BTreeSet<usize>,
    precision_exponent: f64,
) -> Result<AugmentedSet> {
    let idx: Vec<usize> = unlabeled.iter().copied().collect();
    if let Some(&out) = idx.iter().find(|&&i| i >= pool.len()) {
        return Err(Error::IndexOutOfRange(out));
    }
    if idx.is_empty() {
        return Ok(AugmentedSet {
            validation_precision: model.validation_precision,
            ..AugmentedSet::empty()
        });
    }
    let probs = model.agree_probabilities(gather_rows(pool, &idx).view())?;
    let mut candidates: Vec<(usize, f64)> = idx
        .into_iter()
        .zip(probs)
        .filter(|&(_, p)| p >= model.threshold)
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let keep = (model.validation_precision.powf(precision_exponent) * candidates.len() as f64)
        .floor() as usize;
    candidates.truncate(keep);
    let indices: Vec<usize> = candidates.iter().map(|&(i, _)| i).collect();
    let labels: Vec<usize> = indices.iter().map(|&i| pool.predictions()[i]).collect();
    Ok(AugmentedSet {
        indices,
        labels,
        validation_precision: model.validation_precision,
    })
}

/// Feature rows and labels ready for [`train_mlp`].
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Concatenates the labeled pairs (true labels) with the augmented set
/// (model-under-test labels). The two index sets must be disjoint.
pub fn assemble_training_set(
    pool: &TestPool,
    labeled: &[(usize, usize)],
    augmented: &AugmentedSet,
) -> Result<TrainSet> {
    if labeled.is_empty() && augmented.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let taken: BTreeSet<usize> = labeled.iter().map(|&(i, _)| i).collect();
    for &i in &augmented.indices {
        if taken.contains(&i) {
            return Err(Error::IndexCollision(i));
        }
    }
    let mut indices: Vec<usize> = labeled.iter().map(|&(i, _)| i).collect();
    indices.extend(&augmented.indices);
    if let Some(&out) = indices.iter().find(|&&i| i >= pool.len()) {
        return Err(Error::IndexOutOfRange(out));
    }
    let mut labels: Vec<usize> = labeled.iter().map(|&(_, y)| y).collect();
    labels.extend(&augmented.labels);
    Ok(TrainSet {
        features: gather_rows(pool, &indices),
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapool::TestPool;
    use ndarray::arr3;

    fn pool_with(preds: Vec<usize>, truth: Vec<usize>, classes: usize) -> TestPool {
        let n = preds.len();
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
        TestPool::new(features, preds, truth, classes).unwrap()
    }

    /// Pool where agreement is a clean function of the features: the
    /// model-under-test is right exactly when f0 > 0, with a margin.
    fn margin_pool(n: usize, seed: u64) -> TestPool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Array2::zeros((n, 2));
        let mut truth = Vec::with_capacity(n);
        let mut preds = Vec::with_capacity(n);
        for i in 0..n {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            features[[i, 0]] = side * rng.random_range(0.3..1.0);
            features[[i, 1]] = rng.random_range(-1.0..1.0);
            let y = (i / 2) % 2;
            truth.push(y);
            preds.push(if side > 0.0 { y } else { 1 - y });
        }
        TestPool::new(features, preds, truth, 2).unwrap()
    }

    fn quick_mlp() -> MlpConfig {
        MlpConfig {
            hidden_sizes: vec![8],
            dropout_rate: 0.1,
            learning_rate: 0.2,
            epochs: 80,
            batch_size: 16,
            seed: 0,
        }
    }

    #[test]
    fn posterior_rows_must_normalize() {
        let ok = arr3(&[[[0.25, 0.75], [1.0, 0.0]]]);
        assert!(PosteriorSamples::from_probs(ok).is_ok());
        let bad = arr3(&[[[0.4, 0.4], [1.0, 0.0]]]);
        assert!(matches!(
            PosteriorSamples::from_probs(bad),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn hard_labels_break_ties_low() {
        let ps = PosteriorSamples::from_probs(arr3(&[[[0.5, 0.5], [0.2, 0.8]]])).unwrap();
        assert_eq!(ps.label(0, 0), 0);
        assert_eq!(ps.label(0, 1), 1);
    }

    #[test]
    fn mean_probs_average_over_passes() {
        let ps = PosteriorSamples::from_probs(arr3(&[[[1.0, 0.0]], [[0.0, 1.0]], [[0.5, 0.5]]]))
            .unwrap();
        let mean = ps.mean_probs(0);
        assert!((mean[0] - 0.5).abs() < 1e-15);
        assert!((mean[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mc_forward_shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::init(vec![2, 6, 3], 0.4, &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 2), |(i, j)| (i + j) as f64 * 0.3 - 0.5);
        let a = mc_forward(&mlp, x.view(), 4, 9).unwrap();
        assert_eq!(a.num_samples(), 4);
        assert_eq!(a.num_points(), 5);
        assert_eq!(a.num_classes(), 3);
        let b = mc_forward(&mlp, x.view(), 4, 9).unwrap();
        assert_eq!(a.probs(), b.probs());
        let c = mc_forward(&mlp, x.view(), 4, 10).unwrap();
        assert_ne!(a.probs(), c.probs());
        // Passes differ from each other under active dropout.
        assert_ne!(
            a.probs().index_axis(Axis(0), 0),
            a.probs().index_axis(Axis(0), 1)
        );
    }

    #[test]
    fn mc_forward_without_dropout_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mlp = Mlp::init(vec![2, 6, 3], 0.0, &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f64 * 0.2);
        let ps = mc_forward(&mlp, x.view(), 5, 1).unwrap();
        let first = ps.probs().index_axis(Axis(0), 0).to_owned();
        for j in 1..5 {
            assert_eq!(ps.probs().index_axis(Axis(0), j), first.view());
        }
    }

    #[test]
    fn oversampling_balances_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<(usize, usize)> = (0..100).map(|i| (i, (i < 90) as usize)).collect();
        let balanced = oversample_balance(&pairs, &mut rng);
        let ones = balanced.iter().filter(|&&(_, t)| t == 1).count();
        let zeros = balanced.iter().filter(|&&(_, t)| t == 0).count();
        assert_eq!(ones, 90);
        assert_eq!(zeros, 90);
        assert_eq!(&balanced[..100], &pairs[..]);
        // Duplicates come from the minority class only.
        assert!(balanced[100..].iter().all(|&(_, t)| t == 0));
    }

    #[test]
    fn agreement_needs_ten_pairs() {
        let pool = margin_pool(40, 0);
        let labeled: Vec<(usize, usize)> = (0..9).map(|i| (i, pool.ground_truth()[i])).collect();
        assert!(matches!(
            train_agreement_classifier(&pool, &labeled, &AgreementConfig::default(), 0),
            Err(Error::TooFew { need: 10, .. })
        ));
    }

    #[test]
    fn predictable_agreement_reaches_full_precision() {
        let pool = margin_pool(300, 7);
        let labeled: Vec<(usize, usize)> = (0..200).map(|i| (i, pool.ground_truth()[i])).collect();
        let cfg = AgreementConfig {
            mlp: quick_mlp(),
            ..AgreementConfig::default()
        };
        let model = train_agreement_classifier(&pool, &labeled, &cfg, 3).unwrap();
        assert!(
            model.validation_precision == 1.0,
            "validation precision {}",
            model.validation_precision
        );
        assert!(model.threshold >= 0.5 && model.threshold <= 1.0);
    }

    #[test]
    fn single_class_training_part_degenerates() {
        // The model-under-test is always right -> every target is 1.
        let pool = pool_with(
            vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
            vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
            2,
        );
        let labeled: Vec<(usize, usize)> = (0..12).map(|i| (i, pool.ground_truth()[i])).collect();
        let model =
            train_agreement_classifier(&pool, &labeled, &AgreementConfig::default(), 1).unwrap();
        assert!(matches!(model.classifier, AgreementClassifier::Constant(1)));
        assert_eq!(model.validation_precision, 1.0);
        let p = model
            .agree_probabilities(pool.features().slice(ndarray::s![..3, ..]))
            .unwrap();
        assert_eq!(p, vec![1.0; 3]);
    }

    #[test]
    fn augmented_size_follows_the_precision_rule() {
        let pool = margin_pool(120, 2);
        let unlabeled: BTreeSet<usize> = (20..120).collect();
        let model = AgreementModel {
            classifier: AgreementClassifier::Constant(1),
            threshold: 0.5,
            validation_precision: 0.5,
        };
        let set = build_augmented_set(&model, &pool, &unlabeled, 2.0).unwrap();
        // 100 candidates at precision 0.5 -> floor(0.25 * 100) = 25 points.
        assert_eq!(set.len(), 25);
        for (&i, &y) in set.indices.iter().zip(&set.labels) {
            assert_eq!(y, pool.predictions()[i]);
            assert!(unlabeled.contains(&i));
        }

        let full = AgreementModel {
            validation_precision: 1.0,
            ..model.clone()
        };
        assert_eq!(
            build_augmented_set(&full, &pool, &unlabeled, 2.0)
                .unwrap()
                .len(),
            100
        );
        let zero = AgreementModel {
            validation_precision: 0.0,
            ..model.clone()
        };
        assert!(build_augmented_set(&zero, &pool, &unlabeled, 2.0)
            .unwrap()
            .is_empty());
        // The exponent is adjustable: exponent 1 keeps half the candidates.
        assert_eq!(
            build_augmented_set(&model, &pool, &unlabeled, 1.0)
                .unwrap()
                .len(),
            50
        );
    }

    #[test]
    fn constant_disagree_yields_no_augmentation() {
        let pool = margin_pool(40, 3);
        let unlabeled: BTreeSet<usize> = (0..40).collect();
        let model = AgreementModel {
            classifier: AgreementClassifier::Constant(0),
            threshold: 0.5,
            validation_precision: 0.9,
        };
        let set = build_augmented_set(&model, &pool, &unlabeled, 2.0).unwrap();
        assert!(set.is_empty(), "probability 0 never clears the threshold");
    }

    #[test]
    fn assemble_concatenates_and_guards_collisions() {
        let pool = pool_with(vec![0, 1, 1, 0], vec![0, 1, 0, 0], 2);
        let labeled = vec![(0, 0), (2, 0)];
        let aug = AugmentedSet {
            indices: vec![1, 3],
            labels: vec![1, 0],
            validation_precision: 1.0,
        };
        let train = assemble_training_set(&pool, &labeled, &aug).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(train.labels, vec![0, 0, 1, 0]);
        assert_eq!(train.features.row(2), pool.feature_row(1));

        let clash = AugmentedSet {
            indices: vec![2],
            labels: vec![1],
            validation_precision: 1.0,
        };
        assert!(matches!(
            assemble_training_set(&pool, &labeled, &clash),
            Err(Error::IndexCollision(2))
        ));
        assert!(matches!(
            assemble_training_set(&pool, &[], &AugmentedSet::empty()),
            Err(Error::EmptyTrainingSet)
        ));
    }
}
