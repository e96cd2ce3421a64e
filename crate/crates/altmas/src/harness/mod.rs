//! Experiment harness: configuration, the active-testing loop and the
//! randomly-labeled baseline, plus CSV/SVG reporting and a synthetic pool
//! generator.
//!
//! Each repetition seeds its own generator with `seed + repetition`, and all
//! further randomness (seed set, training, dropout passes, tie-free random
//! picks) flows from it, so a config reruns to identical logs when timing
//! capture is off.

pub mod doubles;
mod log;
mod report;
mod synth;

pub use log::{read_csv, write_csv, ExperimentLog, IterationRecord, CSV_HEADER};
pub use report::emit_svg;
pub use synth::{generate_blobs, write_blob_files, BlobSpec};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{
    bald_scores, metric_mi_scores, multi_metric_scores, random_select_batch, select_top,
    AcquisitionScores,
};
use crate::datapool::{LabelState, TestPool};
use crate::estimation::{estimate_all, surrogate_accuracy};
use crate::metrics::{ConfusionCounts, MetricSpec, ZeroDivision};
use crate::surrogate::{
    assemble_training_set, build_augmented_set, mc_forward, train_agreement_classifier, train_mlp,
    AgreementConfig, MlpConfig, PosteriorSamples,
};
use crate::{Error, Result};

/// How the next points to label are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    /// Uniform random queries, estimates from the surrogate posterior.
    Random,
    /// Predictive-label information queries.
    Bald,
    /// Metric-aware information queries.
    Altmas,
    /// Random queries, metrics computed directly on the labeled subset —
    /// no surrogate at all.
    Tradition,
}

impl StrategyKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "random" => Ok(StrategyKind::Random),
            "bald" => Ok(StrategyKind::Bald),
            "altmas" => Ok(StrategyKind::Altmas),
            "tradition" => Ok(StrategyKind::Tradition),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected random, bald, altmas or tradition)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Bald => "bald",
            StrategyKind::Altmas => "altmas",
            StrategyKind::Tradition => "tradition",
        }
    }
}

/// Everything a run needs. Paths are only consulted by the CLI loader; the
/// run functions take an already-loaded pool.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub pool_csv: Option<PathBuf>,
    pub pool_idx: Option<(PathBuf, PathBuf)>,
    pub predictions: Option<PathBuf>,
    /// Metric names; `full21` expands against the pool's class count.
    pub metrics: Vec<String>,
    pub strategy: StrategyKind,
    /// Oracle queries allowed after the free seed set.
    pub budget: usize,
    /// Size of the free seed set.
    pub seed_size: usize,
    /// Stochastic forward passes per posterior.
    pub mc_samples: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Points queried per iteration (greedy top-B above 1).
    pub acquisition_batch: usize,
    /// Tolerance for fusing candidate metric values into groups.
    pub group_epsilon: f64,
    /// Master switch for training-set augmentation (metric-aware runs).
    pub augmentation: bool,
    /// Extends augmentation to the random/bald baselines for ablations.
    pub augment_baselines: bool,
    /// Retrain the surrogate every k-th iteration (1 = every iteration).
    pub retrain_every: usize,
    /// Score undefined precision/recall as 1 instead of 0.
    pub zero_division_one: bool,
    /// Held-out share when tuning the agreement threshold.
    pub validation_fraction: f64,
    /// Exponent in the augmented-set size rule.
    pub precision_exponent: f64,
    /// Capture wall-clock times; off, the column logs 0 so reruns are
    /// byte-identical.
    pub record_timing: bool,
    pub standardize_features: bool,
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub train_batch_size: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            pool_csv: None,
            pool_idx: None,
            predictions: None,
            metrics: vec!["accuracy".into()],
            strategy: StrategyKind::Altmas,
            budget: 100,
            seed_size: 100,
            mc_samples: 50,
            repetitions: 3,
            seed: 0,
            acquisition_batch: 1,
            group_epsilon: 1e-9,
            augmentation: true,
            augment_baselines: false,
            retrain_every: 1,
            zero_division_one: false,
            validation_fraction: 0.3,
            precision_exponent: 2.0,
            record_timing: true,
            standardize_features: false,
            hidden_sizes: vec![256, 256],
            dropout_rate: 0.2,
            learning_rate: 1e-3,
            epochs: 50,
            train_batch_size: 32,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn mlp_config(&self, seed: u64) -> MlpConfig {
        MlpConfig {
            hidden_sizes: self.hidden_sizes.clone(),
            dropout_rate: self.dropout_rate,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.train_batch_size,
            seed,
        }
    }

    pub fn agreement_config(&self) -> AgreementConfig {
        AgreementConfig {
            mlp: self.mlp_config(0),
            validation_fraction: self.validation_fraction,
            precision_exponent: self.precision_exponent,
        }
    }

    pub fn zero_division(&self) -> ZeroDivision {
        if self.zero_division_one {
            ZeroDivision::One
        } else {
            ZeroDivision::Zero
        }
    }

    /// Whether runs of the given strategy fold augmented points into
    /// surrogate training.
    pub fn augment_for(&self, strategy: StrategyKind) -> bool {
        self.augmentation
            && match strategy {
                StrategyKind::Altmas => true,
                StrategyKind::Random | StrategyKind::Bald => self.augment_baselines,
                StrategyKind::Tradition => false,
            }
    }

    /// Checks the config against itself and the pool it will run on.
    pub fn validate(&self, pool: &TestPool) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.repetitions == 0 {
            return bad("repetitions must be positive".into());
        }
        if self.seed_size == 0 {
            return bad("seed set size must be positive".into());
        }
        if self.acquisition_batch == 0 {
            return bad("acquisition batch must be positive".into());
        }
        if self.retrain_every == 0 {
            return bad("retrain interval must be positive".into());
        }
        if self.mc_samples == 0 {
            return bad("need at least one posterior sample".into());
        }
        if !(self.group_epsilon.is_finite() && self.group_epsilon >= 0.0) {
            return bad(format!("grouping tolerance {} invalid", self.group_epsilon));
        }
        if !(0.0 < self.validation_fraction && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            ));
        }
        if !self.precision_exponent.is_finite() || self.precision_exponent < 0.0 {
            return bad(format!(
                "precision exponent {} invalid",
                self.precision_exponent
            ));
        }
        if self.seed_size + self.budget > pool.len() {
            return bad(format!(
                "seed set {} plus budget {} exceeds the pool size {}",
                self.seed_size,
                self.budget,
                pool.len()
            ));
        }
        if self.augment_for(self.strategy) && self.seed_size < 10 {
            return bad(format!(
                "augmentation needs a seed set of at least 10 labels, got {}",
                self.seed_size
            ));
        }
        self.mlp_config(0).validate()?;
        MetricSpec::parse_set(&self.metrics, pool.classes())?;
        Ok(())
    }

    /// Loads a config from a flat `key = value` file (`#` starts a comment).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut config = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    idx + 1
                ))
            })?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        }
        Ok(config)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn int<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for {key}")))
        }
        fn boolean(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::Config(format!(
                    "bad value `{value}` for {key} (expected true or false)"
                ))),
            }
        }
        fn int_list(key: &str, value: &str) -> Result<Vec<usize>> {
            if value.is_empty() {
                return Ok(Vec::new());
            }
            value.split(',').map(|v| int(key, v.trim())).collect()
        }
        match key {
            "pool_csv" => self.pool_csv = Some(PathBuf::from(value)),
            "pool_idx_images" => {
                let labels = self.pool_idx.take().map(|(_, l)| l).unwrap_or_default();
                self.pool_idx = Some((PathBuf::from(value), labels));
            }
            "pool_idx_labels" => {
                let images = self.pool_idx.take().map(|(i, _)| i).unwrap_or_default();
                self.pool_idx = Some((images, PathBuf::from(value)));
            }
            "predictions" => self.predictions = Some(PathBuf::from(value)),
            "metrics" => self.metrics = value.split(',').map(|s| s.trim().to_string()).collect(),
            "strategy" => self.strategy = StrategyKind::parse(value)?,
            "budget" => self.budget = int(key, value)?,
            "seed_size" | "n0" => self.seed_size = int(key, value)?,
            "mc_samples" => self.mc_samples = int(key, value)?,
            "repetitions" => self.repetitions = int(key, value)?,
            "seed" => self.seed = int(key, value)?,
            "acquisition_batch" | "batch_size" => self.acquisition_batch = int(key, value)?,
            "group_epsilon" => self.group_epsilon = int(key, value)?,
            "augmentation" => self.augmentation = boolean(key, value)?,
            "augment_baselines" => self.augment_baselines = boolean(key, value)?,
            "retrain_every" => self.retrain_every = int(key, value)?,
            "zero_division_one" => self.zero_division_one = boolean(key, value)?,
            "validation_fraction" => self.validation_fraction = int(key, value)?,
            "precision_exponent" => self.precision_exponent = int(key, value)?,
            "record_timing" => self.record_timing = boolean(key, value)?,
            "standardize_features" => self.standardize_features = boolean(key, value)?,
            "hidden_sizes" => self.hidden_sizes = int_list(key, value)?,
            "dropout_rate" => self.dropout_rate = int(key, value)?,
            "learning_rate" => self.learning_rate = int(key, value)?,
            "epochs" => self.epochs = int(key, value)?,
            "train_batch_size" => self.train_batch_size = int(key, value)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            other => {
                return Err(Error::Config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }
}

/// Seeds handed to the surrogate provider for one retrain.
#[derive(Debug, Clone, Copy)]
pub struct ProviderSeeds {
    pub train: u64,
    pub mc: u64,
    pub agreement: u64,
}

/// Source of posterior samples for the active-testing loop. The default
/// implementation trains an MC-dropout MLP; tests substitute doubles.
pub trait SurrogateProvider {
    /// Returns the posterior over the whole pool and, when augmentation ran,
    /// the number of augmented points folded into training.
    fn posterior(
        &mut self,
        pool: &TestPool,
        state: &LabelState,
        config: &ExperimentConfig,
        seeds: ProviderSeeds,
        augment: bool,
    ) -> Result<(PosteriorSamples, Option<usize>)>;
}

/// Retrains an MC-dropout MLP from scratch on the labeled (and possibly
/// augmented) points.
pub struct McDropoutProvider;

impl SurrogateProvider for McDropoutProvider {
    fn posterior(
        &mut self,
        pool: &TestPool,
        state: &LabelState,
        config: &ExperimentConfig,
        seeds: ProviderSeeds,
        augment: bool,
    ) -> Result<(PosteriorSamples, Option<usize>)> {
        let labeled = state.labeled_pairs();
        let mut augmented_size = None;
        let train = if augment {
            let model = train_agreement_classifier(
                pool,
                &labeled,
                &config.agreement_config(),
                seeds.agreement,
            )?;
            let augmented =
                build_augmented_set(&model, pool, state.unlabeled(), config.precision_exponent)?;
            augmented_size = Some(augmented.len());
            assemble_training_set(pool, &labeled, &augmented)?
        } else {
            assemble_training_set(pool, &labeled, &crate::surrogate::AugmentedSet::empty())?
        };
        let mlp = train_mlp(
            &config.mlp_config(seeds.train),
            train.features.view(),
            &train.labels,
            pool.classes(),
        )?;
        let ps = mc_forward(&mlp, pool.features(), config.mc_samples, seeds.mc)?;
        Ok((ps, augmented_size))
    }
}

fn iteration_count(budget: usize, batch: usize) -> usize {
    if budget == 0 {
        1
    } else {
        budget.div_ceil(batch)
    }
}

/// Active testing with a surrogate: estimate, log, score, query, repeat.
pub fn run_active_testing(config: &ExperimentConfig, pool: &TestPool) -> Result<ExperimentLog> {
    run_active_testing_with(config, pool, &mut McDropoutProvider)
}

/// [`run_active_testing`] with a caller-chosen posterior source.
pub fn run_active_testing_with(
    config: &ExperimentConfig,
    pool: &TestPool,
    provider: &mut dyn SurrogateProvider,
) -> Result<ExperimentLog> {
    if config.strategy == StrategyKind::Tradition {
        return Err(Error::Config(
            "the tradition baseline runs through run_tradition".into(),
        ));
    }
    config.validate(pool)?;
    let specs = MetricSpec::parse_set(&config.metrics, pool.classes())?;
    let zero = config.zero_division();
    let augment = config.augment_for(config.strategy);
    let mut log = ExperimentLog::new(config.strategy.name());

    for rep in 0..config.repetitions {
        let mut master = ChaCha8Rng::seed_from_u64(config.seed + rep as u64);
        let init_seed: u64 = master.random();
        let mut state = LabelState::init(pool, config.seed_size, config.budget, init_seed)?;
        let iterations = iteration_count(config.budget, config.acquisition_batch);
        let mut posterior: Option<PosteriorSamples> = None;
        let mut augmented_size: Option<usize> = None;

        for iteration in 0..iterations {
            let start = Instant::now();
            if posterior.is_none() || iteration % config.retrain_every == 0 {
                let seeds = ProviderSeeds {
                    train: master.random(),
                    mc: master.random(),
                    agreement: master.random(),
                };
                let (ps, aug) = provider.posterior(pool, &state, config, seeds, augment)?;
                posterior = Some(ps);
                augmented_size = aug;
            }
            let ps = posterior.as_ref().expect("posterior just ensured");

            let estimates = estimate_all(&specs, ps, pool, &state, zero)?;
            let sacc = surrogate_accuracy(ps, pool)?;
            let labels_spent = state.labels_spent();

            let take = state
                .budget_left()
                .min(config.acquisition_batch)
                .min(state.unlabeled().len());
            let chosen = if take == 0 {
                Vec::new()
            } else {
                match config.strategy {
                    StrategyKind::Random => {
                        random_select_batch(state.unlabeled(), take, master.random())?
                    }
                    StrategyKind::Bald => select_top(&bald_scores(ps, state.unlabeled())?, take)?,
                    StrategyKind::Altmas => {
                        let scores: AcquisitionScores = if specs.len() == 1 {
                            metric_mi_scores(
                                &specs[0],
                                ps,
                                pool,
                                &state,
                                config.group_epsilon,
                                zero,
                            )?
                        } else {
                            multi_metric_scores(
                                &specs,
                                ps,
                                pool,
                                &state,
                                config.group_epsilon,
                                zero,
                            )?
                        };
                        select_top(&scores, take)?
                    }
                    StrategyKind::Tradition => unreachable!("rejected above"),
                }
            };
            for &i in &chosen {
                state.oracle_query(pool, i)?;
            }

            let wall_time_ms = if config.record_timing {
                start.elapsed().as_millis() as u64
            } else {
                0
            };
            log.records.push(IterationRecord {
                rep,
                iteration,
                labels_spent,
                estimates,
                surrogate_accuracy: Some(sacc),
                chosen,
                wall_time_ms,
                augmented_size,
            });
        }
    }
    Ok(log)
}

/// The classical baseline: label random points and evaluate each metric
/// directly on the labeled subset. No surrogate is involved.
pub fn run_tradition(config: &ExperimentConfig, pool: &TestPool) -> Result<ExperimentLog> {
    let mut config = config.clone();
    config.strategy = StrategyKind::Tradition;
    config.validate(pool)?;
    let specs = MetricSpec::parse_set(&config.metrics, pool.classes())?;
    let zero = config.zero_division();
    let truth_counts =
        ConfusionCounts::from_labels(pool.predictions(), pool.ground_truth(), pool.classes())?;
    let mut log = ExperimentLog::new(config.strategy.name());

    for rep in 0..config.repetitions {
        let mut master = ChaCha8Rng::seed_from_u64(config.seed + rep as u64);
        let init_seed: u64 = master.random();
        let mut state = LabelState::init(pool, config.seed_size, config.budget, init_seed)?;
        let iterations = iteration_count(config.budget, config.acquisition_batch);

        for iteration in 0..iterations {
            let start = Instant::now();
            let mut subset = ConfusionCounts::new(pool.classes());
            for (i, y) in state.labeled_pairs() {
                subset.record(pool.predictions()[i], y);
            }
            let estimates = specs
                .iter()
                .map(|spec| {
                    let estimate = spec.evaluate_with(&subset, zero)?;
                    let truth = spec.evaluate_with(&truth_counts, zero)?;
                    Ok(crate::estimation::MetricEstimate {
                        name: spec.name(),
                        estimate,
                        truth,
                        relative_error: crate::estimation::relative_error(estimate, truth),
                        absolute_error: (estimate - truth).abs(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let labels_spent = state.labels_spent();

            let take = state
                .budget_left()
                .min(config.acquisition_batch)
                .min(state.unlabeled().len());
            let chosen = if take == 0 {
                Vec::new()
            } else {
                random_select_batch(state.unlabeled(), take, master.random())?
            };
            for &i in &chosen {
                state.oracle_query(pool, i)?;
            }

            let wall_time_ms = if config.record_timing {
                start.elapsed().as_millis() as u64
            } else {
                0
            };
            log.records.push(IterationRecord {
                rep,
                iteration,
                labels_spent,
                estimates,
                surrogate_accuracy: None,
                chosen,
                wall_time_ms,
                augmented_size: None,
            });
        }
    }
    Ok(log)
}

/// Runs whatever strategy the config names.
pub fn run_experiment(config: &ExperimentConfig, pool: &TestPool) -> Result<ExperimentLog> {
    match config.strategy {
        StrategyKind::Tradition => run_tradition(config, pool),
        _ => run_active_testing(config, pool),
    }
}
