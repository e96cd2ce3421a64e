//! Substitute posterior sources for exercising the loop without training.

use ndarray::Array3;

use crate::datapool::{LabelState, TestPool};
use crate::harness::{ExperimentConfig, ProviderSeeds, SurrogateProvider};
use crate::surrogate::PosteriorSamples;
use crate::Result;

/// A provider whose every pass puts probability one on the true label.
/// Composite estimates under it reproduce the ground-truth metric exactly,
/// which makes it the reference point for loop bookkeeping tests.
pub struct TruthEcho;

impl SurrogateProvider for TruthEcho {
    fn posterior(
        &mut self,
        pool: &TestPool,
        _state: &LabelState,
        config: &ExperimentConfig,
        _seeds: ProviderSeeds,
        _augment: bool,
    ) -> Result<(PosteriorSamples, Option<usize>)> {
        let (m, n, c) = (config.mc_samples, pool.len(), pool.classes());
        let mut probs = Array3::zeros((m, n, c));
        for j in 0..m {
            for (i, &y) in pool.ground_truth().iter().enumerate() {
                probs[[j, i, y]] = 1.0;
            }
        }
        Ok((PosteriorSamples::from_probs(probs)?, None))
    }
}
