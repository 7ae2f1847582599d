//! Training/evaluation metrics: JSONL epoch records, a final summary, and
//! the confusion matrix as CSV.
//!
//! Wall-clock fields are carried in memory but never serialized, so two
//! fixed-seed runs produce byte-identical metrics files.

use std::io::Write;

use super::{Result, TrainError};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub lr_last: f64,
    #[serde(skip)]
    pub wall_secs: f64,
}

/// Emitted when a step produces a non-finite loss; training stops and the
/// report names where.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DivergenceReport {
    pub epoch: usize,
    pub step: u64,
    /// Text because JSON cannot carry NaN/inf.
    pub loss: String,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub epochs: Vec<EpochRecord>,
    /// Per-step learning rates, for schedule verification.
    pub lr_trace: Vec<f64>,
    pub eval_accuracy: Option<f64>,
    pub confusion: Option<Vec<Vec<usize>>>,
    pub diverged: Option<DivergenceReport>,
    #[serde(skip)]
    pub total_wall_secs: f64,
}

/// Streams epoch records as JSON lines the moment they complete, so a crash
/// loses at most the current epoch.
pub struct MetricsSink<'a> {
    out: Option<&'a mut dyn Write>,
}

impl<'a> MetricsSink<'a> {
    pub fn new(out: Option<&'a mut dyn Write>) -> Self {
        MetricsSink { out }
    }

    pub fn epoch(&mut self, record: &EpochRecord) -> Result<()> {
        if let Some(out) = self.out.as_deref_mut() {
            serde_json::to_writer(&mut *out, record)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        Ok(())
    }

    pub fn summary(&mut self, metrics: &Metrics) -> Result<()> {
        if let Some(out) = self.out.as_deref_mut() {
            let summary = serde_json::json!({
                "summary": true,
                "epochs": metrics.epochs.len(),
                "final_loss": metrics.epochs.last().map(|e| e.mean_loss),
                "final_train_accuracy": metrics.epochs.last().map(|e| e.train_accuracy),
                "eval_accuracy": metrics.eval_accuracy,
                "diverged": metrics.diverged,
            });
            serde_json::to_writer(&mut *out, &summary)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        Ok(())
    }
}

/// Evaluation result over one split.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true_label][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let total: usize = confusion.iter().map(|r| r.iter().sum::<usize>()).sum();
        if total == 0 {
            return Err(TrainError::Config("empty confusion matrix".into()));
        }
        let trace: usize = confusion.iter().enumerate().map(|(i, r)| r[i]).sum();
        Ok(EvalReport {
            accuracy: trace as f64 / total as f64,
            confusion,
            total,
        })
    }

    /// Per-true-class row sums (the eval counts).
    pub fn row_sums(&self) -> Vec<usize> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn confusion_csv(&self, labels: &[String]) -> String {
        let mut csv = String::from("true\\pred");
        for l in labels {
            csv.push(',');
            csv.push_str(l);
        }
        csv.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            csv.push_str(&labels[i]);
            for v in row {
                csv.push(',');
                csv.push_str(&v.to_string());
            }
            csv.push('\n');
        }
        csv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_is_trace_over_total() {
        let report = EvalReport::from_confusion(vec![
            vec![3, 1, 0],
            vec![0, 4, 0],
            vec![1, 1, 2],
        ])
        .unwrap();
        assert_eq!(report.total, 12);
        assert!((report.accuracy - 9.0 / 12.0).abs() < 1e-12);
        assert_eq!(report.row_sums(), vec![4, 4, 4]);
    }

    #[test]
    fn csv_layout() {
        let report = EvalReport::from_confusion(vec![vec![2, 0], vec![1, 3]]).unwrap();
        let labels = vec!["a".to_string(), "b".to_string()];
        let csv = report.confusion_csv(&labels);
        assert_eq!(csv, "true\\pred,a,b\na,2,0\nb,1,3\n");
    }

    #[test]
    fn epoch_records_serialize_without_wall_clock() {
        let rec = EpochRecord {
            epoch: 1,
            steps: 15,
            mean_loss: 0.5,
            train_accuracy: 0.9,
            lr_last: 1e-4,
            wall_secs: 123.0,
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert!(!line.contains("wall"));
    }
}
