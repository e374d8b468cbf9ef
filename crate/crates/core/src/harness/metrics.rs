//! Accuracy bookkeeping with exact integer counts.
//!
//! Accuracies are kept as fractions derived from integer confusion counts,
//! so they are independent of evaluation order and thread count. Reported
//! aggregates (performance drop, averages) work in percentage points at the
//! two-decimal precision used in writeups: subtracting raw binary floats
//! like `75.85 - 52.28` yields `23.569999999999993`, so the drop is rounded
//! to two decimals to land on the number a reader would compute.

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Round to two decimals, the reporting precision for percentages.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Performance drop in percentage points: first session minus last session,
/// rounded to reporting precision. Input accuracies are percentages.
pub fn compute_pd(percent_accuracies: &[f64]) -> Result<f64, HarnessError> {
    if percent_accuracies.is_empty() {
        return Err(HarnessError::Config(
            "performance drop needs at least one session accuracy".into(),
        ));
    }
    if percent_accuracies.iter().any(|a| !a.is_finite()) {
        return Err(HarnessError::Config(
            "session accuracies must be finite".into(),
        ));
    }
    let first = percent_accuracies[0];
    let last = percent_accuracies[percent_accuracies.len() - 1];
    Ok(round2(first - last))
}

/// Mean of percentage accuracies (unrounded).
pub fn mean_percent(percent_accuracies: &[f64]) -> Result<f64, HarnessError> {
    if percent_accuracies.is_empty() {
        return Err(HarnessError::Config(
            "mean accuracy needs at least one session".into(),
        ));
    }
    if percent_accuracies.iter().any(|a| !a.is_finite()) {
        return Err(HarnessError::Config(
            "session accuracies must be finite".into(),
        ));
    }
    Ok(percent_accuracies.iter().sum::<f64>() / percent_accuracies.len() as f64)
}

/// Square table of integer prediction counts over a fixed class set.
/// Rows are true classes, columns are predicted classes, both in ascending
/// class-id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_ids: Vec<usize>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(mut class_ids: Vec<usize>) -> Result<Self, HarnessError> {
        if class_ids.is_empty() {
            return Err(HarnessError::Config(
                "confusion matrix needs at least one class".into(),
            ));
        }
        class_ids.sort_unstable();
        if class_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::Config(
                "confusion matrix class ids must be distinct".into(),
            ));
        }
        let n = class_ids.len();
        Ok(Self {
            class_ids,
            counts: vec![0; n * n],
        })
    }

    fn index_of(&self, class: usize) -> Result<usize, HarnessError> {
        self.class_ids
            .binary_search(&class)
            .map_err(|_| HarnessError::UnknownLabel(class))
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) -> Result<(), HarnessError> {
        let r = self.index_of(true_class)?;
        let c = self.index_of(predicted)?;
        let n = self.class_ids.len();
        self.counts[r * n + c] += 1;
        Ok(())
    }

    /// Add another matrix's counts into this one. Both must cover the same
    /// class set; integer addition makes the merge order irrelevant.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), HarnessError> {
        if self.class_ids != other.class_ids {
            return Err(HarnessError::Config(
                "cannot merge confusion matrices over different class sets".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> Result<u64, HarnessError> {
        let r = self.index_of(true_class)?;
        let c = self.index_of(predicted)?;
        Ok(self.counts[r * self.class_ids.len() + c])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Correct predictions: the diagonal sum.
    pub fn correct(&self) -> u64 {
        let n = self.class_ids.len();
        (0..n).map(|i| self.counts[i * n + i]).sum()
    }

    /// Top-1 accuracy as a fraction; an empty matrix scores 0.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }

    /// Per-class recall (diagonal over row sum) for the given class.
    pub fn recall(&self, class: usize) -> Result<f64, HarnessError> {
        let r = self.index_of(class)?;
        let n = self.class_ids.len();
        let row: u64 = self.counts[r * n..(r + 1) * n].iter().sum();
        if row == 0 {
            Ok(0.0)
        } else {
            Ok(self.counts[r * n + r] as f64 / row as f64)
        }
    }
}

/// Per-session accuracies (fractions), their percentage aggregates, and the
/// full confusion tables they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub accuracies: Vec<f64>,
    pub pd: f64,
    pub average_percent: f64,
    pub confusions: Vec<ConfusionMatrix>,
}

impl SessionMetrics {
    pub fn from_confusions(confusions: Vec<ConfusionMatrix>) -> Result<Self, HarnessError> {
        if confusions.is_empty() {
            return Err(HarnessError::Config(
                "metrics need at least one session".into(),
            ));
        }
        let accuracies: Vec<f64> = confusions.iter().map(|c| c.accuracy()).collect();
        let percents: Vec<f64> = accuracies.iter().map(|a| a * 100.0).collect();
        let pd = compute_pd(&percents)?;
        let average_percent = mean_percent(&percents)?;
        Ok(Self {
            accuracies,
            pd,
            average_percent,
            confusions,
        })
    }

    pub fn session_count(&self) -> usize {
        self.accuracies.len()
    }

    /// Session accuracies as percentages.
    pub fn percents(&self) -> Vec<f64> {
        self.accuracies.iter().map(|a| a * 100.0).collect()
    }
}
