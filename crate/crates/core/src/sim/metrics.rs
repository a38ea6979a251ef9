use serde::{Deserialize, Serialize};

/// One client's numbers for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client: usize,
    /// Mean batch loss over this epoch's local steps (before aggregation).
    pub train_loss: f64,
    /// Test accuracy after aggregation.
    pub test_acc: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    pub clients: Vec<ClientRecord>,
    /// Client with the lowest training loss (lowest id on ties).
    pub best_client: usize,
    /// Test accuracy of `best_client` (of the server model under FedAvg).
    pub best_acc: f64,
    pub mean_acc: f64,
    pub dist_min: f64,
    pub dist_max: f64,
    pub consensus_iters: usize,
    pub floats_shared: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMeta {
    pub name: String,
    pub seed: u64,
    pub clients: usize,
    pub param_count: usize,
    pub client_sizes: Vec<usize>,
    pub local_steps: Vec<usize>,
    /// Pairwise distance range of the initial models.
    pub initial_distance: (f64, f64),
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsLog {
    pub meta: RunMeta,
    pub epochs: Vec<EpochRecord>,
    /// Epoch at which a non-finite value appeared; training stopped there.
    pub diverged_at: Option<usize>,
}

impl MetricsLog {
    pub fn best_accuracies(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.best_acc).collect()
    }

    pub fn mean_accuracies(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_acc).collect()
    }

    pub fn max_best_acc(&self) -> f64 {
        self.best_accuracies().into_iter().fold(0.0, f64::max)
    }

    pub fn max_mean_acc(&self) -> f64 {
        self.mean_accuracies().into_iter().fold(0.0, f64::max)
    }

    pub fn total_floats_shared(&self) -> u64 {
        self.epochs.iter().map(|e| e.floats_shared).sum()
    }

    pub fn total_consensus_iters(&self) -> usize {
        self.epochs.iter().map(|e| e.consensus_iters).sum()
    }
}

/// First 1-based position whose accuracy exceeds `p` percent.
pub fn first_exceeding(accuracies: &[f64], p: f64) -> Option<usize> {
    accuracies.iter().position(|&a| a > p / 100.0).map(|i| i + 1)
}

/// First epoch whose best-client accuracy exceeds `p` percent.
pub fn epoch_threshold(log: &MetricsLog, p: f64) -> Option<usize> {
    log.epochs.iter().find(|e| e.best_acc > p / 100.0).map(|e| e.epoch)
}

/// Lowest training loss wins; NaN losses never win; lowest id on ties.
pub fn best_client(losses: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] || losses[best].is_nan() && !l.is_nan() {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        let a = [0.85, 0.91, 0.95];
        assert_eq!(first_exceeding(&a, 90.0), Some(2));
        assert_eq!(first_exceeding(&a, 99.0), None);
        assert_eq!(first_exceeding(&a, 95.0), None);
    }

    #[test]
    fn best_client_ties_and_nan() {
        assert_eq!(best_client(&[0.5, 0.2, 0.2]), 1);
        assert_eq!(best_client(&[f64::NAN, 0.3]), 1);
        assert_eq!(best_client(&[0.1, f64::NAN]), 0);
    }
}
