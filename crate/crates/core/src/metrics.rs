//! Confusion matrices for evaluation reports.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Counts indexed `[true][predicted]`. Rejected predictions are tallied
/// separately and count as errors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub rejected: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(labels: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
            rejected: vec![0; n],
        }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    /// Records one outcome; `predicted = None` is a rejection.
    pub fn record(&mut self, truth: usize, predicted: Option<usize>) {
        match predicted {
            Some(p) => self.counts[truth][p] += 1,
            None => self.rejected[truth] += 1,
        }
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum::<u64>() + self.rejected[i]
    }

    pub fn total(&self) -> u64 {
        (0..self.size()).map(|i| self.row_total(i)).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    /// Overall fraction correct.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }

    /// Row-normalised matrix: entry `[i][j]` is the fraction of class `i`
    /// predicted as `j`. Rows without samples are all zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        (0..self.size())
            .map(|i| {
                let total = self.row_total(i);
                self.counts[i]
                    .iter()
                    .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect()
            })
            .collect()
    }

    /// Mean of the normalised diagonal over classes.
    pub fn diagonal_mean(&self) -> f64 {
        let n = self.normalized();
        if n.is_empty() {
            return 0.0;
        }
        (0..n.len()).map(|i| n[i][i]).sum::<f64>() / n.len() as f64
    }
}

/// Row-normalised percentages with true classes down the side and
/// predictions across the top.
impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(6);
        write!(f, "{:>width$} |", "true\\pred")?;
        for l in &self.labels {
            write!(f, " {l:>width$}")?;
        }
        writeln!(f, " {:>width$}", "reject")?;
        for (i, row) in self.normalized().iter().enumerate() {
            write!(f, "{:>width$} |", self.labels[i])?;
            for v in row {
                write!(f, " {:>width$.1}", v * 100.0)?;
            }
            let total = self.row_total(i);
            let rej = if total == 0 { 0.0 } else { self.rejected[i] as f64 / total as f64 };
            writeln!(f, " {:>width$.1}", rej * 100.0)?;
        }
        write!(f, "accuracy {:.2}%", self.accuracy() * 100.0)
    }
}
