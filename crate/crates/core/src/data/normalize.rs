//! Per-client normalization and the normalized views clients train on.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::partition::{Normalization, PartitionPlan};
use crate::error::{DflError, Result};

/// How each client chooses its normalization mean.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum NormalizationScheme {
    /// Every client uses the training set's mean and std.
    #[default]
    Global,
    /// Means stepped around the global mean: the first 40% of clients use
    /// `mean - delta`, the next 40% `mean + delta`, the rest `mean + 3 delta`.
    Shifted { delta: f64 },
    /// Each client uses the mean and std of its own pixels.
    Local,
    /// Explicit per-client means with the global std.
    Means(Vec<f64>),
}

/// Stepped offsets `[-delta; 40%] ++ [+delta; 40%] ++ [+3 delta; rest]`.
pub fn stepped_offsets(clients: usize, delta: f64) -> Vec<f64> {
    let first = (0.4 * clients as f64).round() as usize;
    let second = (0.8 * clients as f64).round() as usize;
    (0..clients)
        .map(|i| {
            if i < first {
                -delta
            } else if i < second {
                delta
            } else {
                3.0 * delta
            }
        })
        .collect()
}

/// Per-client `(mean, std)` under a scheme. `global` is the training set's
/// pixel mean and std.
pub fn client_normalization(
    dataset: &Dataset,
    plan: &PartitionPlan,
    scheme: &NormalizationScheme,
) -> Result<Vec<Normalization>> {
    let (mean, std) = dataset.pixel_stats(0..dataset.len());
    let k = plan.clients();
    let out: Vec<Normalization> = match scheme {
        NormalizationScheme::Global => vec![Normalization { mean, std }; k],
        NormalizationScheme::Shifted { delta } => stepped_offsets(k, *delta)
            .into_iter()
            .map(|o| Normalization { mean: mean + o, std })
            .collect(),
        NormalizationScheme::Local => plan
            .parts
            .iter()
            .map(|p| {
                let (mean, std) = dataset.pixel_stats(p.iter().copied());
                Normalization { mean, std }
            })
            .collect(),
        NormalizationScheme::Means(means) => {
            if means.len() != k {
                return Err(DflError::config(format!(
                    "{} normalization means for {k} clients",
                    means.len()
                )));
            }
            means.iter().map(|&m| Normalization { mean: m, std }).collect()
        }
    };
    for n in &out {
        check(n)?;
    }
    Ok(out)
}

fn check(n: &Normalization) -> Result<()> {
    if !n.mean.is_finite() {
        return Err(DflError::config(format!("normalization mean {} is not finite", n.mean)));
    }
    if !(n.std > 0.0) || !n.std.is_finite() {
        return Err(DflError::config(format!("normalization std {} must be > 0", n.std)));
    }
    Ok(())
}

/// A client's read-only window onto a shared dataset.
#[derive(Debug, Clone)]
pub struct ClientView {
    data: Arc<Dataset>,
    indices: Vec<usize>,
    norm: Normalization,
}

impl ClientView {
    pub fn new(data: Arc<Dataset>, indices: Vec<usize>, norm: Normalization) -> Result<Self> {
        check(&norm)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(DflError::data(format!("sample index {bad} outside dataset of {}", data.len())));
        }
        Ok(ClientView { data, indices, norm })
    }

    /// Whole dataset under one normalization (used for test sets).
    pub fn full(data: Arc<Dataset>, norm: Normalization) -> Result<Self> {
        let indices = (0..data.len()).collect();
        ClientView::new(data, indices, norm)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    /// Normalized pixels and labels of the samples at the given view positions.
    pub fn batch(&self, positions: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(positions.len() * self.data.image_len());
        let mut y = Vec::with_capacity(positions.len());
        let inv = 1.0 / self.norm.std;
        for &p in positions {
            let s = self.indices[p];
            x.extend(self.data.image(s).iter().map(|&v| (v as f64 - self.norm.mean) * inv));
            y.push(self.data.label(s));
        }
        (x, y)
    }
}

/// Build each client's view with explicit means and a shared std.
pub fn apply_normalization(
    data: &Arc<Dataset>,
    plan: &PartitionPlan,
    means: &[f64],
    std: f64,
) -> Result<Vec<ClientView>> {
    if means.len() != plan.clients() {
        return Err(DflError::config(format!(
            "{} normalization means for {} clients",
            means.len(),
            plan.clients()
        )));
    }
    plan.parts
        .iter()
        .zip(means)
        .map(|(part, &mean)| ClientView::new(Arc::clone(data), part.clone(), Normalization { mean, std }))
        .collect()
}

/// Build each client's view using the normalization stored in the plan.
pub fn client_views(data: &Arc<Dataset>, plan: &PartitionPlan) -> Result<Vec<ClientView>> {
    plan.parts
        .iter()
        .zip(&plan.normalization)
        .map(|(part, &n)| ClientView::new(Arc::clone(data), part.clone(), n))
        .collect()
}
