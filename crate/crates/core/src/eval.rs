//! Evaluation metrics and report files: normalized confusion matrices,
//! error CDFs, and summary statistics.
//!
//! For classification the error samples are absolute class-index
//! distances; for regression predictions are additionally binned through
//! the configured class edges so a confusion matrix is always available.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::BinEdges;

/// Metrics for one weather metric (head).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadReport {
    pub name: String,
    /// Row-normalized confusion matrix, rows = true class.
    pub confusion: Vec<Vec<f64>>,
    /// Samples per true class.
    pub support: Vec<usize>,
    /// Fraction of correctly classified samples.
    pub accuracy: f64,
    /// Absolute errors, one per sample.
    pub error_samples: Vec<f64>,
    pub mean_error: f64,
    pub p90_error: f64,
}

/// Full evaluation result over all heads.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub heads: Vec<HeadReport>,
}

/// Confusion counts; rows = true class, columns = predicted.
pub fn confusion_counts(
    true_classes: &[usize],
    predicted: &[usize],
    classes: usize,
) -> Result<Vec<Vec<usize>>> {
    if true_classes.len() != predicted.len() {
        return Err(Error::DimMismatch {
            context: "confusion inputs".into(),
            left: vec![true_classes.len()],
            right: vec![predicted.len()],
        });
    }
    let mut counts = vec![vec![0usize; classes]; classes];
    for (&t, &p) in true_classes.iter().zip(predicted) {
        if t >= classes {
            return Err(Error::ClassOutOfRange { index: t, classes });
        }
        if p >= classes {
            return Err(Error::ClassOutOfRange { index: p, classes });
        }
        counts[t][p] += 1;
    }
    Ok(counts)
}

/// Row-normalize counts; empty classes keep all-zero rows.
pub fn normalize_rows(counts: &[Vec<usize>]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let support: Vec<usize> = counts.iter().map(|row| row.iter().sum()).collect();
    let normalized = counts
        .iter()
        .zip(&support)
        .map(|(row, &n)| {
            row.iter()
                .map(|&c| if n > 0 { c as f64 / n as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    (normalized, support)
}

/// Overall accuracy: trace over total.
pub fn accuracy_from_counts(counts: &[Vec<usize>]) -> f64 {
    let total: usize = counts.iter().map(|r| r.iter().sum::<usize>()).sum();
    if total == 0 {
        return 0.0;
    }
    let trace: usize = counts.iter().enumerate().map(|(i, r)| r[i]).sum();
    trace as f64 / total as f64
}

/// The 90-percentile as the smallest sample value x with
/// `Pr[X <= x] >= 0.9`.
pub fn percentile_90(samples: &[f64]) -> f64 {
    percentile(samples, 0.9)
}

pub fn percentile(samples: &[f64], q: f64) -> f64 {
    assert!(!samples.is_empty(), "percentile of empty sample set");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.saturating_sub(1)]
}

fn head_report(
    name: &str,
    true_classes: &[usize],
    predicted_classes: &[usize],
    classes: usize,
    error_samples: Vec<f64>,
) -> Result<HeadReport> {
    let counts = confusion_counts(true_classes, predicted_classes, classes)?;
    let (confusion, support) = normalize_rows(&counts);
    let accuracy = accuracy_from_counts(&counts);
    let mean_error = error_samples.iter().sum::<f64>() / error_samples.len().max(1) as f64;
    let p90_error = if error_samples.is_empty() {
        0.0
    } else {
        percentile_90(&error_samples)
    };
    Ok(HeadReport {
        name: name.to_string(),
        confusion,
        support,
        accuracy,
        error_samples,
        mean_error,
        p90_error,
    })
}

pub const HEAD_NAMES: [&str; 2] = ["precipitation", "wind"];

/// Report for a classification run: `true_classes` and `predicted` are
/// `[sample][head]`.
pub fn classification_report(
    true_classes: &[Vec<usize>],
    predicted: &[Vec<usize>],
    class_counts: &[usize],
) -> Result<EvalReport> {
    let mut heads = Vec::new();
    for (h, &classes) in class_counts.iter().enumerate() {
        let t: Vec<usize> = true_classes.iter().map(|s| s[h]).collect();
        let p: Vec<usize> = predicted.iter().map(|s| s[h]).collect();
        let errors: Vec<f64> = t
            .iter()
            .zip(&p)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .collect();
        heads.push(head_report(
            HEAD_NAMES.get(h).copied().unwrap_or("head"),
            &t,
            &p,
            classes,
            errors,
        )?);
    }
    Ok(EvalReport { heads })
}

/// Report for a regression run: `true_values` and `predicted` are
/// `[sample][head]` physical values; binning provides the confusion view.
pub fn regression_report(
    true_values: &[Vec<f64>],
    predicted: &[Vec<f64>],
    bins: &BinEdges,
) -> Result<EvalReport> {
    let class_counts = bins.class_counts();
    let mut heads = Vec::new();
    for h in 0..2 {
        let class_of = |v: f64| -> usize {
            if h == 0 {
                bins.precipitation_class(v)
            } else {
                bins.wind_class(v)
            }
        };
        let t: Vec<usize> = true_values.iter().map(|s| class_of(s[h])).collect();
        let p: Vec<usize> = predicted.iter().map(|s| class_of(s[h])).collect();
        let errors: Vec<f64> = true_values
            .iter()
            .zip(predicted)
            .map(|(tv, pv)| (tv[h] - pv[h]).abs())
            .collect();
        heads.push(head_report(HEAD_NAMES[h], &t, &p, class_counts[h], errors)?);
    }
    Ok(EvalReport { heads })
}

impl HeadReport {
    /// Row sums of non-empty classes must be 1 (within 1e-9).
    pub fn check_row_sums(&self) -> Result<()> {
        for (row, &n) in self.confusion.iter().zip(&self.support) {
            if n == 0 {
                continue;
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Other(format!(
                    "confusion row sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Write a normalized confusion matrix as CSV. The trailing `support`
/// column carries the per-class sample counts so the overall accuracy can
/// be recomputed exactly from the file.
pub fn write_confusion_csv(path: &Path, head: &HeadReport) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let classes = head.confusion.len();
    write!(w, "true\\pred").map_err(io)?;
    for c in 0..classes {
        write!(w, ",{c}").map_err(io)?;
    }
    writeln!(w, ",support").map_err(io)?;
    for (r, row) in head.confusion.iter().enumerate() {
        write!(w, "{r}").map_err(io)?;
        for v in row {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w, ",{}", head.support[r]).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Recompute the overall accuracy from a confusion CSV written by
/// [`write_confusion_csv`]: the support-weighted trace.
pub fn accuracy_from_confusion_csv(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut weighted_trace = 0.0;
    let mut total = 0usize;
    for (r, line) in text.lines().skip(1).enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let support: usize = fields
            .last()
            .unwrap()
            .parse()
            .map_err(|_| Error::Other(format!("bad support in {}", path.display())))?;
        let diag: f64 = fields[r + 1]
            .parse()
            .map_err(|_| Error::Other(format!("bad value in {}", path.display())))?;
        weighted_trace += diag * support as f64;
        total += support;
    }
    Ok(weighted_trace / total.max(1) as f64)
}

/// Write the empirical CDF of the absolute errors: one `error,cdf` row per
/// sample, sorted ascending, so the cdf column is non-decreasing.
pub fn write_error_cdf_csv(path: &Path, errors: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "error,cdf").map_err(io)?;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    for (i, e) in sorted.iter().enumerate() {
        writeln!(w, "{},{}", e, (i + 1) as f64 / n).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Human-readable summary: accuracy, mean error, and 90-percentile error
/// per head, one `key: value` line each.
pub fn write_summary(path: &Path, report: &EvalReport) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for head in &report.heads {
        writeln!(w, "{}.accuracy_percent: {}", head.name, head.accuracy * 100.0).map_err(io)?;
        writeln!(w, "{}.mean_error: {}", head.name, head.mean_error).map_err(io)?;
        writeln!(w, "{}.p90_error: {}", head.name, head.p90_error).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor_gives_identity_confusion() {
        let truth: Vec<Vec<usize>> = (0..12).map(|i| vec![i % 4, (i + 1) % 4]).collect();
        let report = classification_report(&truth, &truth, &[4, 4]).unwrap();
        for head in &report.heads {
            assert_eq!(head.accuracy, 1.0);
            head.check_row_sums().unwrap();
            for (r, row) in head.confusion.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    assert_eq!(v, if r == c { 1.0 } else { 0.0 });
                }
            }
            assert_eq!(head.mean_error, 0.0);
            assert_eq!(head.p90_error, 0.0);
        }
    }

    #[test]
    fn constant_predictor_accuracy_is_prevalence() {
        // 3 of 10 samples are class 0; predicting 0 always scores 0.3.
        let truth: Vec<Vec<usize>> = (0..10).map(|i| vec![usize::from(i >= 3)]).collect();
        let pred: Vec<Vec<usize>> = (0..10).map(|_| vec![0]).collect();
        let report = classification_report(&truth, &pred, &[2]).unwrap();
        assert!((report.heads[0].accuracy - 0.3).abs() < 1e-12);
    }

    #[test]
    fn percentile_is_smallest_x_reaching_mass() {
        let samples: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        // P[X <= 9] = 0.9 exactly; 9 is the smallest such sample.
        assert_eq!(percentile_90(&samples), 9.0);
        let three = [3.0, 1.0, 2.0];
        // ceil(0.9 * 3) = 3 -> the maximum.
        assert_eq!(percentile_90(&three), 3.0);
        assert_eq!(percentile(&three, 0.5), 2.0);
    }

    #[test]
    fn empty_class_rows_stay_zero() {
        let counts = confusion_counts(&[0, 0, 2], &[0, 2, 2], 3).unwrap();
        let (normalized, support) = normalize_rows(&counts);
        assert_eq!(support, vec![2, 0, 1]);
        assert!(normalized[1].iter().all(|&v| v == 0.0));
        assert!((accuracy_from_counts(&counts) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn regression_report_bins_and_measures_errors() {
        let bins = BinEdges::default();
        let truth = vec![vec![0.0, 1.0], vec![20.0, 35.0]];
        let pred = vec![vec![0.5, 2.0], vec![18.0, 20.0]];
        let report = regression_report(&truth, &pred, &bins).unwrap();
        assert_eq!(report.heads[0].name, "precipitation");
        // 0.0 and 0.5 both bin to class 0; 20 and 18 both to class 2.
        assert_eq!(report.heads[0].accuracy, 1.0);
        // wind: 35 -> class 3 but 20 -> class 2.
        assert_eq!(report.heads[1].accuracy, 0.5);
        assert!((report.heads[0].mean_error - (0.5 + 2.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn summary_accuracy_matches_csv_recomputation() {
        let truth: Vec<Vec<usize>> = (0..20).map(|i| vec![i % 3]).collect();
        let pred: Vec<Vec<usize>> = (0..20).map(|i| vec![if i % 4 == 0 { 0 } else { i % 3 }]).collect();
        let report = classification_report(&truth, &pred, &[3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("confusion.csv");
        write_confusion_csv(&path, &report.heads[0]).unwrap();
        let recomputed = accuracy_from_confusion_csv(&path).unwrap();
        assert!(
            (recomputed - report.heads[0].accuracy).abs() < 1e-12,
            "{recomputed} vs {}",
            report.heads[0].accuracy
        );
    }

    #[test]
    fn cdf_file_is_monotone() {
        let errors = [3.0, 1.0, 2.0, 2.0, 0.5];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cdf.csv");
        write_error_cdf_csv(&path, &errors).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut last = (f64::MIN, 0.0);
        for line in text.lines().skip(1) {
            let (e, c) = line.split_once(',').unwrap();
            let e: f64 = e.parse().unwrap();
            let c: f64 = c.parse().unwrap();
            assert!(e >= last.0 && c >= last.1, "not monotone at {line}");
            last = (e, c);
        }
        assert_eq!(last.1, 1.0);
    }
}
