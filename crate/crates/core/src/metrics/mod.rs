//! Incremental-accuracy metrics and report emission.

mod report;
mod svg;

use ndarray::{Axis, Slice};

use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::task_stream::Normalizer;
use crate::autograd::Array;

pub use report::{emit_report, summarize, write_sample_grid, MetricRecord, ReportFiles, SummaryRow, METRIC_SCHEMA_VERSION};
pub use svg::{accuracy_curves_svg, Curve};

const EVAL_CHUNK: usize = 128;

/// Argmax predictions as global class ids.
pub fn predict(classifier: &Classifier, images: &Array, normalizer: &Normalizer) -> Result<Vec<usize>> {
    let n = images.shape()[0];
    let mut out = Vec::with_capacity(n);
    let seen = classifier.seen_classes();
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let chunk = images.slice_axis(Axis(0), Slice::from(start..end)).to_owned();
        let logits = classifier.logits(&normalizer.normalize(&chunk)?)?;
        for row in logits.outer_iter() {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            out.push(seen[best]);
        }
    }
    Ok(out)
}

/// Fraction of argmax-correct predictions over the joint softmax of every
/// seen class.
pub fn overall_accuracy(classifier: &Classifier, images: &Array, labels: &[usize], normalizer: &Normalizer) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Contract("accuracy over an empty test set".into()));
    }
    if images.shape()[0] != labels.len() {
        return Err(Error::Shape(format!("{} images, {} labels", images.shape()[0], labels.len())));
    }
    let pred = predict(classifier, images, normalizer)?;
    Ok(accuracy_of(&pred, labels))
}

/// Fraction of positions where `pred` equals `labels`.
pub fn accuracy_of(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len().max(1) as f64
}

/// `α_all = (1/(T−1)) Σ_{t=2..T} α_all,t`.
pub fn average_incremental_accuracy(trace: &[f64]) -> Result<f64> {
    if trace.len() < 2 {
        return Err(Error::Contract(format!(
            "average incremental accuracy needs at least 2 tasks, got {}",
            trace.len()
        )));
    }
    if let Some(a) = trace.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Range(format!("accuracy {a} outside [0, 1]")));
    }
    Ok(trace[1..].iter().sum::<f64>() / (trace.len() - 1) as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incremental_average() {
        assert!((average_incremental_accuracy(&[0.9, 0.8, 0.6]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(average_incremental_accuracy(&[0.4; 5]).unwrap(), 0.4);
        assert!(matches!(average_incremental_accuracy(&[0.9]), Err(Error::Contract(_))));
        assert!(matches!(average_incremental_accuracy(&[0.9, 1.2]), Err(Error::Range(_))));
    }

    #[test]
    fn counting() {
        assert_eq!(accuracy_of(&[1, 2, 3, 4], &[1, 2, 3, 0]), 0.75);
        assert_eq!(accuracy_of(&[5, 5], &[5, 5]), 1.0);
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
