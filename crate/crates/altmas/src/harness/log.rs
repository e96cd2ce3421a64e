//! Long-format CSV logs: one row per (repetition, iteration, metric).

use std::fs;
use std::path::Path;

use crate::estimation::MetricEstimate;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "rep,iteration,labels_spent,metric,estimate,truth,rel_err,abs_err,\
                              surrogate_acc,chosen_index,wall_time_ms";

/// Everything observed in one loop iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub rep: usize,
    pub iteration: usize,
    /// Seed labels plus oracle queries spent *before* this iteration's
    /// acquisitions.
    pub labels_spent: usize,
    pub estimates: Vec<MetricEstimate>,
    /// Absent on the surrogate-free baseline.
    pub surrogate_accuracy: Option<f64>,
    /// Indices queried at the end of the iteration.
    pub chosen: Vec<usize>,
    pub wall_time_ms: u64,
    /// How many pseudo-labeled points entered surrogate training, when
    /// augmentation ran (not persisted to CSV).
    pub augmented_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLog {
    /// Series label, also used as the output file stem.
    pub strategy: String,
    pub records: Vec<IterationRecord>,
}

impl ExperimentLog {
    pub fn new(strategy: impl Into<String>) -> Self {
        ExperimentLog {
            strategy: strategy.into(),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The last record of each repetition.
    pub fn final_records(&self) -> Vec<&IterationRecord> {
        let mut last: std::collections::BTreeMap<usize, &IterationRecord> =
            std::collections::BTreeMap::new();
        for record in &self.records {
            let slot = last.entry(record.rep).or_insert(record);
            if record.iteration >= slot.iteration {
                *slot = record;
            }
        }
        last.into_values().collect()
    }

    /// Mean relative error over every metric in the final record of each
    /// repetition. `None` when the log is empty.
    pub fn final_mean_relative_error(&self) -> Option<f64> {
        let values: Vec<f64> = self
            .final_records()
            .iter()
            .flat_map(|r| r.estimates.iter().map(|e| e.relative_error))
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

/// Writes the log in long format; an empty log yields only the header line.
pub fn write_csv(log: &ExperimentLog, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(64 * (1 + log.records.len()));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for record in &log.records {
        let sacc = record
            .surrogate_accuracy
            .map(|v| v.to_string())
            .unwrap_or_default();
        let chosen = record
            .chosen
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(";");
        for est in &record.estimates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                record.rep,
                record.iteration,
                record.labels_spent,
                est.name,
                est.estimate,
                est.truth,
                est.relative_error,
                est.absolute_error,
                sacc,
                chosen,
                record.wall_time_ms,
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a log written by [`write_csv`]. The series label is taken from the
/// caller (usually the file stem) since rows don't carry it.
pub fn read_csv(path: &Path, strategy: impl Into<String>) -> Result<ExperimentLog> {
    let parse_field = |line: usize, what: &str, value: &str| -> Result<f64> {
        value.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("bad {what} `{value}`"),
        })
    };
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("unexpected header `{header}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "missing header".into(),
            })
        }
    }

    let mut log = ExperimentLog::new(strategy);
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("expected 11 fields, found {}", fields.len()),
            });
        }
        let rep = parse_field(lineno, "rep", fields[0])? as usize;
        let iteration = parse_field(lineno, "iteration", fields[1])? as usize;
        let labels_spent = parse_field(lineno, "labels_spent", fields[2])? as usize;
        let estimate = MetricEstimate {
            name: fields[3].to_string(),
            estimate: parse_field(lineno, "estimate", fields[4])?,
            truth: parse_field(lineno, "truth", fields[5])?,
            relative_error: parse_field(lineno, "rel_err", fields[6])?,
            absolute_error: parse_field(lineno, "abs_err", fields[7])?,
        };
        let surrogate_accuracy = if fields[8].is_empty() {
            None
        } else {
            Some(parse_field(lineno, "surrogate_acc", fields[8])?)
        };
        let chosen = if fields[9].is_empty() {
            Vec::new()
        } else {
            fields[9]
                .split(';')
                .map(|v| Ok(parse_field(lineno, "chosen_index", v)? as usize))
                .collect::<Result<Vec<usize>>>()?
        };
        let wall_time_ms = parse_field(lineno, "wall_time_ms", fields[10])? as u64;

        let same_group = log
            .records
            .last()
            .is_some_and(|r: &IterationRecord| r.rep == rep && r.iteration == iteration);
        if same_group {
            let record = log.records.last_mut().expect("just checked");
            record.estimates.push(estimate);
        } else {
            log.records.push(IterationRecord {
                rep,
                iteration,
                labels_spent,
                estimates: vec![estimate],
                surrogate_accuracy,
                chosen,
                wall_time_ms,
                augmented_size: None,
            });
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> ExperimentLog {
        let mut log = ExperimentLog::new("altmas");
        for rep in 0..2 {
            for iteration in 0..3 {
                log.records.push(IterationRecord {
                    rep,
                    iteration,
                    labels_spent: 10 + iteration,
                    estimates: vec![
                        MetricEstimate {
                            name: "accuracy".into(),
                            estimate: 0.5 + 0.01 * iteration as f64,
                            truth: 0.6,
                            relative_error: 0.1 * (3 - iteration) as f64,
                            absolute_error: 0.06,
                        },
                        MetricEstimate {
                            name: "precision:1".into(),
                            estimate: 0.25,
                            truth: 0.5,
                            relative_error: 0.5,
                            absolute_error: 0.25,
                        },
                    ],
                    surrogate_accuracy: Some(0.75),
                    chosen: vec![rep + iteration, 40 + iteration],
                    wall_time_ms: 12,
                    augmented_size: Some(3),
                });
            }
        }
        log
    }

    #[test]
    fn round_trip_preserves_every_field_but_augmentation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let log = sample_log();
        write_csv(&log, &path).unwrap();
        let back = read_csv(&path, "altmas").unwrap();
        assert_eq!(back.strategy, "altmas");
        assert_eq!(back.records.len(), log.records.len());
        for (a, b) in log.records.iter().zip(&back.records) {
            assert_eq!(a.rep, b.rep);
            assert_eq!(a.iteration, b.iteration);
            assert_eq!(a.labels_spent, b.labels_spent);
            assert_eq!(a.estimates, b.estimates);
            assert_eq!(a.surrogate_accuracy, b.surrogate_accuracy);
            assert_eq!(a.chosen, b.chosen);
            assert_eq!(a.wall_time_ms, b.wall_time_ms);
            assert_eq!(b.augmented_size, None);
        }
    }

    #[test]
    fn empty_log_writes_just_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_csv(&ExperimentLog::new("random"), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
        let back = read_csv(&path, "random").unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn missing_surrogate_column_survives_the_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trad.csv");
        let mut log = sample_log();
        for record in &mut log.records {
            record.surrogate_accuracy = None;
            record.chosen.clear();
        }
        write_csv(&log, &path).unwrap();
        let back = read_csv(&path, "tradition").unwrap();
        assert!(back.records.iter().all(|r| r.surrogate_accuracy.is_none()));
        assert!(back.records.iter().all(|r| r.chosen.is_empty()));
    }

    #[test]
    fn header_mismatch_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "rep,iteration\n").unwrap();
        assert!(matches!(
            read_csv(&path, "x"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn short_rows_are_rejected_with_their_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.csv");
        std::fs::write(&path, format!("{CSV_HEADER}\n0,0,10,accuracy,0.5\n")).unwrap();
        assert!(matches!(
            read_csv(&path, "x"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn final_summary_averages_the_last_iteration_of_each_rep() {
        let log = sample_log();
        let finals = log.final_records();
        assert_eq!(finals.len(), 2);
        assert!(finals.iter().all(|r| r.iteration == 2));
        // rel errs at iteration 2: accuracy 0.1, precision 0.5 per rep.
        let expected = (0.1 + 0.5) / 2.0;
        assert!((log.final_mean_relative_error().unwrap() - expected).abs() < 1e-12);
        assert_eq!(ExperimentLog::new("x").final_mean_relative_error(), None);
    }
}
