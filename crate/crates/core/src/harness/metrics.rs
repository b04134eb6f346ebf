use serde::{Deserialize, Serialize};

use crate::error::{DeltaError, Result};

/// Evaluation checkpoint: the context being trained and the epoch after
/// which it was taken (`None` for end-of-context checkpoints).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub context: usize,
    pub epoch: Option<usize>,
}

/// `acc[t][e]`: accuracy on context `t`'s test set at checkpoint `e`;
/// `None` before context `t` was first trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyHistory {
    pub checkpoints: Vec<Checkpoint>,
    pub acc: Vec<Vec<Option<f64>>>,
}

impl AccuracyHistory {
    pub fn new(contexts: usize) -> Self {
        AccuracyHistory {
            checkpoints: Vec::new(),
            acc: vec![Vec::new(); contexts],
        }
    }

    /// Builds a per-context history from rows `rows[t]` holding the
    /// accuracies of context `t` at checkpoints `t..T`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let t_count = rows.len();
        let mut h = AccuracyHistory::new(t_count);
        for e in 0..t_count {
            h.checkpoints.push(Checkpoint {
                context: e,
                epoch: None,
            });
        }
        for (t, row) in rows.iter().enumerate() {
            h.acc[t] = (0..t_count)
                .map(|e| if e >= t { row.get(e - t).copied() } else { None })
                .collect();
        }
        h
    }

    pub fn push_checkpoint(&mut self, cp: Checkpoint, values: &[f64]) {
        self.checkpoints.push(cp);
        for (t, row) in self.acc.iter_mut().enumerate() {
            row.push(values.get(t).copied());
        }
    }

    fn validate(&self) -> Result<()> {
        if self.acc.is_empty() {
            return Err(DeltaError::IncompleteHistory("no contexts".into()));
        }
        for (t, row) in self.acc.iter().enumerate() {
            if row.len() != self.checkpoints.len() {
                return Err(DeltaError::IncompleteHistory(format!(
                    "context {} has {} values for {} checkpoints",
                    t + 1,
                    row.len(),
                    self.checkpoints.len()
                )));
            }
            match row.last() {
                Some(Some(v)) if (0.0..=1.0).contains(v) => {}
                Some(Some(v)) => {
                    return Err(DeltaError::IncompleteHistory(format!(
                        "context {} accuracy {v} outside [0, 1]",
                        t + 1
                    )))
                }
                _ => {
                    return Err(DeltaError::IncompleteHistory(format!(
                        "context {} has no final accuracy",
                        t + 1
                    )))
                }
            }
        }
        Ok(())
    }

    fn final_of(&self, t: usize) -> f64 {
        self.acc[t].last().copied().flatten().expect("validated")
    }

    fn peak_of(&self, t: usize) -> f64 {
        self.acc[t].iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Mean final accuracy over contexts.
pub fn metric_overall(history: &AccuracyHistory) -> Result<f64> {
    history.validate()?;
    let n = history.acc.len();
    Ok((0..n).map(|t| history.final_of(t)).sum::<f64>() / n as f64)
}

/// Mean over contexts of the best accuracy ever reached.
pub fn metric_plasticity(history: &AccuracyHistory) -> Result<f64> {
    history.validate()?;
    let n = history.acc.len();
    Ok((0..n).map(|t| history.peak_of(t)).sum::<f64>() / n as f64)
}

/// Mean over contexts of final / peak accuracy, with 0/0 counted as 1.
pub fn metric_stability(history: &AccuracyHistory) -> Result<f64> {
    history.validate()?;
    let n = history.acc.len();
    let total: f64 = (0..n)
        .map(|t| {
            let peak = history.peak_of(t);
            if peak == 0.0 {
                1.0
            } else {
                history.final_of(t) / peak
            }
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: f64,
    pub plasticity: f64,
    pub stability: f64,
    pub per_context_final: Vec<f64>,
    pub bytes_uploaded: usize,
    pub bytes_downloaded: usize,
}

impl MetricsReport {
    pub fn from_history(history: &AccuracyHistory, bytes_uploaded: usize, bytes_downloaded: usize) -> Result<Self> {
        Ok(MetricsReport {
            overall: metric_overall(history)?,
            plasticity: metric_plasticity(history)?,
            stability: metric_stability(history)?,
            per_context_final: (0..history.acc.len()).map(|t| history.final_of(t)).collect(),
            bytes_uploaded,
            bytes_downloaded,
        })
    }
}
