//! Confusion counts and the metric family evaluated on them.
//!
//! The whole acquisition loop reduces to re-evaluating metrics on confusion
//! matrices that differ from a base matrix by a single relabeled point, so
//! [`ConfusionCounts`] caches row sums, column sums and the diagonal total.
//! That makes a label swap O(1) and lets [`MetricSpec::evaluate_swapped`]
//! price a hypothetical swap without touching the matrix at all.

use crate::{Error, Result};

/// What to return when a precision or recall denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroDivision {
    /// Undefined ratios count as 0 (the default).
    #[default]
    Zero,
    /// Undefined ratios count as 1.
    One,
}

impl ZeroDivision {
    fn value(self) -> f64 {
        match self {
            ZeroDivision::Zero => 0.0,
            ZeroDivision::One => 1.0,
        }
    }
}

/// C x C confusion counts, indexed `[predicted][true]`, with cached
/// aggregates so single-label updates and metric reads stay cheap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    classes: usize,
    counts: Vec<u64>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    diag_sum: u64,
    total: u64,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        ConfusionCounts {
            classes,
            counts: vec![0; classes * classes],
            row_sums: vec![0; classes],
            col_sums: vec![0; classes],
            diag_sum: 0,
            total: 0,
        }
    }

    /// Tallies predicted/true label pairs. Both slices must have equal length
    /// and every value must be `< classes`.
    pub fn from_labels(preds: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: preds.len(),
                right: labels.len(),
            });
        }
        let mut cc = ConfusionCounts::new(classes);
        for (&p, &y) in preds.iter().zip(labels) {
            cc.check_class(p)?;
            cc.check_class(y)?;
            cc.record(p, y);
        }
        Ok(cc)
    }

    fn check_class(&self, c: usize) -> Result<()> {
        if c < self.classes {
            Ok(())
        } else {
            Err(Error::LabelRange {
                value: c as i64,
                classes: self.classes,
            })
        }
    }

    /// Adds one observation with predicted class `pred` and true class `label`.
    pub fn record(&mut self, pred: usize, label: usize) {
        debug_assert!(pred < self.classes && label < self.classes);
        self.counts[pred * self.classes + label] += 1;
        self.row_sums[pred] += 1;
        self.col_sums[label] += 1;
        if pred == label {
            self.diag_sum += 1;
        }
        self.total += 1;
    }

    /// Moves one observation predicted as `pred` from true class `old` to
    /// true class `new`. Row sums and the grand total are unchanged; applying
    /// the reverse swap restores the original counts exactly.
    pub fn swap_label(&mut self, pred: usize, old: usize, new: usize) -> Result<()> {
        self.check_class(pred)?;
        self.check_class(old)?;
        self.check_class(new)?;
        if self.counts[pred * self.classes + old] == 0 {
            return Err(Error::SwapUnderflow { pred, label: old });
        }
        if old == new {
            return Ok(());
        }
        self.counts[pred * self.classes + old] -= 1;
        self.counts[pred * self.classes + new] += 1;
        self.col_sums[old] -= 1;
        self.col_sums[new] += 1;
        if pred == old {
            self.diag_sum -= 1;
        }
        if pred == new {
            self.diag_sum += 1;
        }
        Ok(())
    }

    pub fn count(&self, pred: usize, label: usize) -> u64 {
        self.counts[pred * self.classes + label]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn row_sum(&self, pred: usize) -> u64 {
        self.row_sums[pred]
    }

    pub fn col_sum(&self, label: usize) -> u64 {
        self.col_sums[label]
    }

    pub fn diag_sum(&self) -> u64 {
        self.diag_sum
    }
}

/// Hypothetical single-point relabel used by [`MetricSpec::evaluate_swapped`].
#[derive(Debug, Clone, Copy)]
struct Swap {
    pred: usize,
    old: usize,
    new: usize,
}

impl Swap {
    fn cell_delta(&self, pred: usize, label: usize) -> i64 {
        let mut d = 0;
        if pred == self.pred && label == self.new {
            d += 1;
        }
        if pred == self.pred && label == self.old {
            d -= 1;
        }
        d
    }

    fn col_delta(&self, label: usize) -> i64 {
        (label == self.new) as i64 - (label == self.old) as i64
    }

    fn diag_delta(&self) -> i64 {
        (self.pred == self.new) as i64 - (self.pred == self.old) as i64
    }
}

/// The metric family: accuracy, one-vs-rest precision/recall for a fixed
/// class, and their unweighted macro averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Accuracy,
    Precision(usize),
    Recall(usize),
    MacroPrecision,
    MacroRecall,
}

/// A single requested metric, parsed from names like `accuracy`,
/// `precision:2`, `recall:0`, `macro_precision` or `macro_recall`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSpec {
    kind: MetricKind,
}

impl MetricSpec {
    pub fn new(kind: MetricKind) -> Self {
        MetricSpec { kind }
    }

    pub fn accuracy() -> Self {
        MetricSpec::new(MetricKind::Accuracy)
    }

    pub fn precision(class: usize) -> Self {
        MetricSpec::new(MetricKind::Precision(class))
    }

    pub fn recall(class: usize) -> Self {
        MetricSpec::new(MetricKind::Recall(class))
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    /// Parses one metric name. `classes` bounds the class argument of
    /// per-class metrics.
    pub fn parse(name: &str, classes: usize) -> Result<Self> {
        let bad = |msg: String| Error::Config(msg);
        let parse_class = |arg: &str, what: &str| -> Result<usize> {
            let c: usize = arg
                .parse()
                .map_err(|_| bad(format!("bad class index `{arg}` in `{what}:{arg}`")))?;
            if c >= classes {
                return Err(bad(format!(
                    "class {c} out of range for {classes} classes in `{what}:{arg}`"
                )));
            }
            Ok(c)
        };
        match name.trim() {
            "accuracy" => Ok(MetricSpec::accuracy()),
            "macro_precision" => Ok(MetricSpec::new(MetricKind::MacroPrecision)),
            "macro_recall" => Ok(MetricSpec::new(MetricKind::MacroRecall)),
            other => {
                if let Some(arg) = other.strip_prefix("precision:") {
                    Ok(MetricSpec::precision(parse_class(arg, "precision")?))
                } else if let Some(arg) = other.strip_prefix("recall:") {
                    Ok(MetricSpec::recall(parse_class(arg, "recall")?))
                } else {
                    Err(bad(format!("unknown metric `{other}`")))
                }
            }
        }
    }

    /// Parses a list of metric names. The shorthand `full21` expands to
    /// accuracy plus precision and recall for every class (21 metrics when
    /// C = 10). Duplicates are kept as given.
    pub fn parse_set(names: &[String], classes: usize) -> Result<Vec<Self>> {
        let mut specs = Vec::new();
        for name in names {
            if name.trim() == "full21" {
                specs.push(MetricSpec::accuracy());
                for c in 0..classes {
                    specs.push(MetricSpec::precision(c));
                }
                for c in 0..classes {
                    specs.push(MetricSpec::recall(c));
                }
            } else {
                specs.push(MetricSpec::parse(name, classes)?);
            }
        }
        if specs.is_empty() {
            return Err(Error::Config("no metrics requested".into()));
        }
        Ok(specs)
    }

    /// Canonical display name, also used in log files.
    pub fn name(&self) -> String {
        match self.kind {
            MetricKind::Accuracy => "accuracy".into(),
            MetricKind::Precision(c) => format!("precision:{c}"),
            MetricKind::Recall(c) => format!("recall:{c}"),
            MetricKind::MacroPrecision => "macro_precision".into(),
            MetricKind::MacroRecall => "macro_recall".into(),
        }
    }

    /// Evaluates the metric with the default zero-denominator convention.
    pub fn evaluate(&self, cc: &ConfusionCounts) -> Result<f64> {
        self.evaluate_with(cc, ZeroDivision::Zero)
    }

    pub fn evaluate_with(&self, cc: &ConfusionCounts, zero: ZeroDivision) -> Result<f64> {
        self.evaluate_inner(cc, zero, None)
    }

    /// Evaluates the metric as if `swap_label(pred, old, new)` had been
    /// applied, without mutating `cc`. The cell `(pred, old)` must be
    /// non-empty.
    pub fn evaluate_swapped(
        &self,
        cc: &ConfusionCounts,
        pred: usize,
        old: usize,
        new: usize,
        zero: ZeroDivision,
    ) -> Result<f64> {
        if cc.count(pred, old) == 0 {
            return Err(Error::SwapUnderflow { pred, label: old });
        }
        self.evaluate_inner(cc, zero, Some(Swap { pred, old, new }))
    }

    fn evaluate_inner(
        &self,
        cc: &ConfusionCounts,
        zero: ZeroDivision,
        swap: Option<Swap>,
    ) -> Result<f64> {
        if cc.total == 0 {
            return Err(Error::EmptyCounts);
        }
        let check = |c: usize| cc.check_class(c);
        let cell = |p: usize, y: usize| -> f64 {
            let base = cc.count(p, y) as i64;
            let adj = swap.map_or(0, |s| s.cell_delta(p, y));
            (base + adj) as f64
        };
        let col = |y: usize| -> f64 {
            let base = cc.col_sum(y) as i64;
            let adj = swap.map_or(0, |s| s.col_delta(y));
            (base + adj) as f64
        };
        let precision_of = |c: usize| -> f64 {
            let den = cc.row_sum(c) as f64;
            if den == 0.0 {
                zero.value()
            } else {
                cell(c, c) / den
            }
        };
        let recall_of = |c: usize| -> f64 {
            let den = col(c);
            if den == 0.0 {
                zero.value()
            } else {
                cell(c, c) / den
            }
        };
        match self.kind {
            MetricKind::Accuracy => {
                let diag = cc.diag_sum as i64 + swap.map_or(0, |s| s.diag_delta());
                Ok(diag as f64 / cc.total as f64)
            }
            MetricKind::Precision(c) => {
                check(c)?;
                Ok(precision_of(c))
            }
            MetricKind::Recall(c) => {
                check(c)?;
                Ok(recall_of(c))
            }
            MetricKind::MacroPrecision => {
                let sum: f64 = (0..cc.classes).map(precision_of).sum();
                Ok(sum / cc.classes as f64)
            }
            MetricKind::MacroRecall => {
                let sum: f64 = (0..cc.classes).map(recall_of).sum();
                Ok(sum / cc.classes as f64)
            }
        }
    }
}

/// For one unlabeled point with prediction `pred_x`, the metric value that
/// would result from fixing its true label to each candidate class, averaged
/// over the posterior samples.
///
/// `per_sample_counts[j]` must already include point x with the label
/// `sampled_labels_x[j]`; candidate h is priced by swapping that label to h.
/// The input counts are left untouched.
pub fn candidate_metric_values(
    spec: &MetricSpec,
    per_sample_counts: &[ConfusionCounts],
    pred_x: usize,
    sampled_labels_x: &[usize],
    zero: ZeroDivision,
) -> Result<Vec<f64>> {
    if per_sample_counts.is_empty() {
        return Err(Error::TooFew {
            what: "posterior samples",
            need: 1,
            got: 0,
        });
    }
    if per_sample_counts.len() != sampled_labels_x.len() {
        return Err(Error::LengthMismatch {
            left: per_sample_counts.len(),
            right: sampled_labels_x.len(),
        });
    }
    let classes = per_sample_counts[0].classes();
    let m = per_sample_counts.len() as f64;
    let mut values = vec![0.0; classes];
    for (cc, &old) in per_sample_counts.iter().zip(sampled_labels_x) {
        for (h, v) in values.iter_mut().enumerate() {
            *v += spec.evaluate_swapped(cc, pred_x, old, h, zero)?;
        }
    }
    for v in &mut values {
        *v /= m;
    }
    Ok(values)
}

/// One group of candidate classes whose metric values agree within the
/// grouping tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGroup {
    /// Class indices in the group, ascending.
    pub members: Vec<usize>,
    /// Mean metric value of the members.
    pub value: f64,
}

/// Single-linkage grouping of candidate metric values: sort, then split
/// wherever the gap between neighbors exceeds `eps`. Classes whose values
/// chain together within `eps` land in one group. Groups come back ordered by
/// value; every class appears exactly once.
pub fn group_values(values: &[f64], eps: f64) -> Vec<LabelGroup> {
    assert!(eps >= 0.0, "grouping tolerance must be non-negative");
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut groups: Vec<LabelGroup> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut prev = f64::NAN;
    for &idx in &order {
        let v = values[idx];
        if !current.is_empty() && v - prev > eps {
            groups.push(finish_group(current, values));
            current = Vec::new();
        }
        current.push(idx);
        prev = v;
    }
    if !current.is_empty() {
        groups.push(finish_group(current, values));
    }
    groups
}

fn finish_group(mut members: Vec<usize>, values: &[f64]) -> LabelGroup {
    let value = members.iter().map(|&i| values[i]).sum::<f64>() / members.len() as f64;
    members.sort_unstable();
    LabelGroup { members, value }
}
