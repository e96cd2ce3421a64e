//! Synthetic Gaussian-blob pools with an exactly controlled share of
//! model-under-test mistakes.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datapool::io::{write_csv_pool, write_predictions};
use crate::datapool::TestPool;
use crate::{Error, Result};

/// Shape of a synthetic pool.
#[derive(Debug, Clone)]
pub struct BlobSpec {
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    /// Pool accuracy the simulated model under test hits exactly
    /// (to rounding by one point).
    pub mut_accuracy: f64,
    /// Distance scale between class centers.
    pub separation: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            n: 2000,
            classes: 2,
            dim: 2,
            mut_accuracy: 0.7,
            separation: 4.0,
            seed: 0,
        }
    }
}

/// Samples unit-variance Gaussian blobs around class centers spaced on a
/// circle (a line for one dimension), assigns balanced true labels, and
/// flips exactly `round((1 - mut_accuracy) * n)` predictions to wrong
/// classes.
pub fn generate_blobs(spec: &BlobSpec) -> Result<TestPool> {
    if spec.n < 2 {
        return Err(Error::Config(format!("pool size {} too small", spec.n)));
    }
    if spec.classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if spec.dim == 0 {
        return Err(Error::Config("need at least one feature".into()));
    }
    if !(0.0..=1.0).contains(&spec.mut_accuracy) {
        return Err(Error::Config(format!(
            "model accuracy {} outside [0, 1]",
            spec.mut_accuracy
        )));
    }
    if !(spec.separation.is_finite() && spec.separation > 0.0) {
        return Err(Error::Config(format!(
            "separation {} must be positive",
            spec.separation
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let radius = spec.separation / 2.0;
    let mut centers = Array2::<f64>::zeros((spec.classes, spec.dim));
    for c in 0..spec.classes {
        if spec.dim == 1 {
            centers[[c, 0]] = (c as f64 - (spec.classes - 1) as f64 / 2.0) * spec.separation;
        } else {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / spec.classes as f64;
            centers[[c, 0]] = radius * angle.cos();
            centers[[c, 1]] = radius * angle.sin();
        }
    }

    let truth: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    let mut features = Array2::<f64>::zeros((spec.n, spec.dim));
    for (i, &y) in truth.iter().enumerate() {
        for d in 0..spec.dim {
            let noise: f64 = rng.sample(StandardNormal);
            features[[i, d]] = centers[[y, d]] + noise;
        }
    }

    let mut predictions = truth.clone();
    let flips = ((1.0 - spec.mut_accuracy) * spec.n as f64).round() as usize;
    let mut order: Vec<usize> = (0..spec.n).collect();
    order.shuffle(&mut rng);
    for &i in order.iter().take(flips.min(spec.n)) {
        let offset = rng.random_range(1..spec.classes);
        predictions[i] = (truth[i] + offset) % spec.classes;
    }

    TestPool::new(features, predictions, truth, spec.classes)
}

/// Writes `pool.csv` and `predictions.txt` for a pool into `dir`.
pub fn write_blob_files(pool: &TestPool, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let pool_path = dir.join("pool.csv");
    let pred_path = dir.join("predictions.txt");
    write_csv_pool(pool, &pool_path)?;
    write_predictions(pool.predictions(), &pred_path)?;
    Ok((pool_path, pred_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_is_hit_exactly_up_to_rounding() {
        for &acc in &[0.0, 0.3, 0.5, 0.7, 0.95, 1.0] {
            let spec = BlobSpec {
                n: 500,
                mut_accuracy: acc,
                seed: 3,
                ..BlobSpec::default()
            };
            let pool = generate_blobs(&spec).unwrap();
            let correct = pool
                .predictions()
                .iter()
                .zip(pool.ground_truth())
                .filter(|(p, t)| p == t)
                .count();
            let achieved = correct as f64 / 500.0;
            assert!(
                (achieved - acc).abs() <= 0.5 / 500.0 + 1e-12,
                "acc {acc}: achieved {achieved}"
            );
        }
    }

    #[test]
    fn flipped_predictions_are_always_wrong() {
        let pool = generate_blobs(&BlobSpec {
            n: 300,
            classes: 4,
            mut_accuracy: 0.4,
            seed: 11,
            ..BlobSpec::default()
        })
        .unwrap();
        for (i, (&p, &t)) in pool
            .predictions()
            .iter()
            .zip(pool.ground_truth())
            .enumerate()
        {
            assert!(p < 4, "class range at {i}");
            // A flip never lands back on the truth.
            if p != t {
                assert_ne!(p, t);
            }
        }
        let wrong = pool
            .predictions()
            .iter()
            .zip(pool.ground_truth())
            .filter(|(p, t)| p != t)
            .count();
        assert_eq!(wrong, 180);
    }

    #[test]
    fn truth_is_balanced_and_features_cluster() {
        let pool = generate_blobs(&BlobSpec {
            n: 900,
            classes: 3,
            separation: 10.0,
            seed: 1,
            ..BlobSpec::default()
        })
        .unwrap();
        for c in 0..3 {
            assert_eq!(pool.ground_truth().iter().filter(|&&y| y == c).count(), 300);
        }
        // With huge separation the nearest center recovers the label.
        let radius = 5.0_f64;
        let centers: Vec<(f64, f64)> = (0..3)
            .map(|c| {
                let a = 2.0 * std::f64::consts::PI * c as f64 / 3.0;
                (radius * a.cos(), radius * a.sin())
            })
            .collect();
        let mut hits = 0;
        for i in 0..900 {
            let row = pool.feature_row(i);
            let nearest = (0..3)
                .min_by(|&a, &b| {
                    let da = (row[0] - centers[a].0).powi(2) + (row[1] - centers[a].1).powi(2);
                    let db = (row[0] - centers[b].0).powi(2) + (row[1] - centers[b].1).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if nearest == pool.ground_truth()[i] {
                hits += 1;
            }
        }
        assert!(hits >= 880, "only {hits}/900 recovered");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = BlobSpec {
            n: 120,
            seed: 77,
            ..BlobSpec::default()
        };
        let a = generate_blobs(&spec).unwrap();
        let b = generate_blobs(&spec).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.predictions(), b.predictions());
        assert_eq!(a.ground_truth(), b.ground_truth());
    }

    #[test]
    fn one_dimensional_pools_line_up_centers() {
        let pool = generate_blobs(&BlobSpec {
            n: 200,
            dim: 1,
            separation: 8.0,
            seed: 5,
            ..BlobSpec::default()
        })
        .unwrap();
        assert_eq!(pool.num_features(), 1);
        let mean0: f64 = (0..200)
            .filter(|i| pool.ground_truth()[*i] == 0)
            .map(|i| pool.feature_row(i)[0])
            .sum::<f64>()
            / 100.0;
        assert!(
            (mean0 + 4.0).abs() < 0.5,
            "class 0 center near -4, got {mean0}"
        );
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(generate_blobs(&BlobSpec {
            n: 1,
            ..BlobSpec::default()
        })
        .is_err());
        assert!(generate_blobs(&BlobSpec {
            classes: 1,
            ..BlobSpec::default()
        })
        .is_err());
        assert!(generate_blobs(&BlobSpec {
            dim: 0,
            ..BlobSpec::default()
        })
        .is_err());
        assert!(generate_blobs(&BlobSpec {
            mut_accuracy: 1.2,
            ..BlobSpec::default()
        })
        .is_err());
        assert!(generate_blobs(&BlobSpec {
            separation: 0.0,
            ..BlobSpec::default()
        })
        .is_err());
    }

    #[test]
    fn files_round_trip_through_the_pool_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let pool = generate_blobs(&BlobSpec {
            n: 50,
            seed: 2,
            ..BlobSpec::default()
        })
        .unwrap();
        let (pool_path, pred_path) = write_blob_files(&pool, dir.path()).unwrap();
        let back = crate::datapool::io::load_csv_pool(&pool_path).unwrap();
        assert_eq!(back.predictions(), pool.predictions());
        assert_eq!(back.ground_truth(), pool.ground_truth());
        let preds = crate::datapool::io::load_predictions(&pred_path, 50, pool.classes()).unwrap();
        assert_eq!(&preds, pool.predictions());
    }
}
