use serde::Serialize;

/// Confusion matrix (rows: true class, columns: predicted class) and derived
/// accuracies. Classes absent from the evaluated set have no recall and are
/// left out of the mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<usize>>,
    pub recall: Vec<Option<f64>>,
    pub mean_accuracy: f64,
    pub overall_accuracy: f64,
}

impl MetricsReport {
    pub fn from_predictions(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (truth, pred) in pairs {
            confusion[truth][pred] += 1;
        }
        let recall: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[c] as f64 / total as f64)
            })
            .collect();
        let present: Vec<f64> = recall.iter().flatten().copied().collect();
        let mean_accuracy = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let overall_accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        Self {
            confusion,
            recall,
            mean_accuracy,
            overall_accuracy,
        }
    }

    pub fn samples(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Index of the largest logit; the first one wins ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = MetricsReport::from_predictions(3, [(0, 0), (1, 1), (2, 2), (2, 2)]);
        assert_eq!(m.mean_accuracy, 1.0);
        assert_eq!(m.confusion, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn constant_prediction_on_balanced_pair() {
        let m = MetricsReport::from_predictions(2, [(0, 0), (0, 0), (1, 0), (1, 0)]);
        assert_eq!(m.mean_accuracy, 0.5);
    }

    #[test]
    fn imbalance_separates_mean_and_overall() {
        let pairs = std::iter::repeat_n((0, 0), 9).chain([(1, 0)]);
        let m = MetricsReport::from_predictions(2, pairs);
        assert_eq!(m.recall, vec![Some(1.0), Some(0.0)]);
        assert_eq!(m.mean_accuracy, 0.5);
        assert_eq!(m.overall_accuracy, 0.9);
        assert_eq!(m.samples(), 10);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
