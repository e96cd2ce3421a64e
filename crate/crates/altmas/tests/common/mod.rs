//! Shared helpers for the integration suites: reference implementations
//! built from first principles (no incremental bookkeeping, no shared code
//! paths with the library) and random-instance generators.

#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use altmas::datapool::{LabelState, TestPool};
use altmas::metrics::MetricSpec;
use altmas::surrogate::PosteriorSamples;

/// Metric definitions restated from scratch by direct counting over label
/// slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefMetric {
    Accuracy,
    Precision(usize),
    Recall(usize),
    MacroPrecision,
    MacroRecall,
}

impl RefMetric {
    pub fn to_spec(self, classes: usize) -> MetricSpec {
        let name = match self {
            RefMetric::Accuracy => "accuracy".to_string(),
            RefMetric::Precision(k) => format!("precision:{k}"),
            RefMetric::Recall(k) => format!("recall:{k}"),
            RefMetric::MacroPrecision => "macro_precision".to_string(),
            RefMetric::MacroRecall => "macro_recall".to_string(),
        };
        MetricSpec::parse(&name, classes).expect("reference metric parses")
    }
}

/// Evaluates a metric by scanning the prediction/label pairs directly.
pub fn ref_metric(
    metric: RefMetric,
    preds: &[usize],
    labels: &[usize],
    classes: usize,
    zero_one: bool,
) -> f64 {
    assert_eq!(preds.len(), labels.len());
    assert!(!preds.is_empty());
    let frac = |num: usize, den: usize| {
        if den == 0 {
            if zero_one {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    let pairs = || preds.iter().zip(labels.iter());
    let precision = |k: usize| {
        frac(
            pairs().filter(|&(&p, &y)| p == k && y == k).count(),
            pairs().filter(|&(&p, _)| p == k).count(),
        )
    };
    let recall = |k: usize| {
        frac(
            pairs().filter(|&(&p, &y)| p == k && y == k).count(),
            pairs().filter(|&(_, &y)| y == k).count(),
        )
    };
    match metric {
        RefMetric::Accuracy => {
            pairs().filter(|&(&p, &y)| p == y).count() as f64 / preds.len() as f64
        }
        RefMetric::Precision(k) => precision(k),
        RefMetric::Recall(k) => recall(k),
        RefMetric::MacroPrecision => (0..classes).map(precision).sum::<f64>() / classes as f64,
        RefMetric::MacroRecall => (0..classes).map(recall).sum::<f64>() / classes as f64,
    }
}

/// Shannon entropy in nats with the 0 ln 0 = 0 convention.
pub fn ref_entropy(masses: &[f64]) -> f64 {
    masses
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Groups indices whose values chain within `eps`, via union-find over all
/// pairs rather than a sorted sweep. Groups come back sorted by value.
pub fn ref_union_groups(values: &[f64], eps: f64) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for a in 0..n {
        for b in a + 1..n {
            if (values[a] - values[b]).abs() <= eps {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> =
        std::collections::BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by(|a, b| {
        let va = a.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
        let vb = b.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
        va.partial_cmp(&vb).unwrap()
    });
    out
}

/// Metric-aware information score for unlabeled point `x`, computed the
/// slow definitional way: every candidate label and posterior sample gets a
/// full composite relabeling and a from-scratch metric evaluation.
pub fn oracle_metric_mi(
    metric: RefMetric,
    ps: &PosteriorSamples,
    pool: &TestPool,
    state: &LabelState,
    x: usize,
    eps: f64,
    zero_one: bool,
) -> f64 {
    let n = pool.len();
    let c = pool.classes();
    let m = ps.num_samples();
    assert!(!state.is_labeled(x));

    let mut q = vec![0.0; c];
    for (h, slot) in q.iter_mut().enumerate() {
        let mut total = 0.0;
        for j in 0..m {
            let labels: Vec<usize> = (0..n)
                .map(|i| {
                    if i == x {
                        h
                    } else if let Some(y) = state.revealed_label(i) {
                        y
                    } else {
                        ps.label(j, i)
                    }
                })
                .collect();
            total += ref_metric(metric, pool.predictions(), &labels, c, zero_one);
        }
        *slot = total / m as f64;
    }

    let groups = ref_union_groups(&q, eps);
    if groups.len() <= 1 {
        return 0.0;
    }
    let masses = |prob_of: &dyn Fn(usize) -> f64| -> Vec<f64> {
        groups
            .iter()
            .map(|members| members.iter().map(|&h| prob_of(h)).sum())
            .collect()
    };
    let mean = ps.mean_probs(x);
    let marginal = ref_entropy(&masses(&|h| mean[h]));
    let conditional = (0..m)
        .map(|j| ref_entropy(&masses(&|h| ps.prob(j, x, h))))
        .sum::<f64>()
        / m as f64;
    marginal - conditional
}

/// A random pool mid-run: some free seed labels, part of the budget spent,
/// at least one point still unlabeled, and a random posterior.
pub struct Instance {
    pub pool: TestPool,
    pub state: LabelState,
    pub ps: PosteriorSamples,
}

pub fn random_instance(seed: u64, max_n: usize, max_c: usize, max_m: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(2..=max_c);
    let n = rng.random_range((c + 2).max(4)..=max_n.max(c + 3));
    let m = rng.random_range(1..=max_m);
    let d = rng.random_range(1..=3);

    let features = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let predictions: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let pool = TestPool::new(features, predictions, truth, c).unwrap();

    let n0 = rng.random_range(1..n);
    let budget = rng.random_range(0..=(n - n0));
    let mut state = LabelState::init(&pool, n0, budget, rng.random()).unwrap();
    let spare = state.unlabeled().len().saturating_sub(1);
    let spend = rng.random_range(0..=budget.min(spare));
    for _ in 0..spend {
        let &i = state.unlabeled().iter().next().unwrap();
        state.oracle_query(&pool, i).unwrap();
    }

    let mut probs = Array3::zeros((m, n, c));
    for j in 0..m {
        for i in 0..n {
            let weights: Vec<f64> = (0..c)
                .map(|_| -(rng.random::<f64>().max(1e-12)).ln())
                .collect();
            let sum: f64 = weights.iter().sum();
            for (h, w) in weights.iter().enumerate() {
                probs[[j, i, h]] = w / sum;
            }
        }
    }
    let ps = PosteriorSamples::from_probs(probs).unwrap();
    Instance { pool, state, ps }
}

pub fn random_metric(rng: &mut ChaCha8Rng, classes: usize) -> RefMetric {
    match rng.random_range(0..5) {
        0 => RefMetric::Accuracy,
        1 => RefMetric::Precision(rng.random_range(0..classes)),
        2 => RefMetric::Recall(rng.random_range(0..classes)),
        3 => RefMetric::MacroPrecision,
        _ => RefMetric::MacroRecall,
    }
}
