use serde::{Deserialize, Serialize};

use crate::error::{DflError, Result};
use crate::model::{model_distance, ModelParams};
use crate::topology::Graph;

/// Mixing weight `alpha_ij` used by every edge of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum AlphaRule {
    /// `1 / (1 + max degree)`: stable, symmetric.
    #[default]
    MaxDegree,
    Constant(f64),
}

impl AlphaRule {
    pub fn alpha(self, g: &Graph) -> f64 {
        match self {
            AlphaRule::MaxDegree => 1.0 / (1.0 + g.max_degree() as f64),
            AlphaRule::Constant(a) => a,
        }
    }
}

/// Per-element consensus update `own + sum_j alpha (w_j - own)`, neighbors in
/// ascending id order. Shared by every consensus path so results agree bitwise.
#[inline]
pub(crate) fn mix(own: f64, neighbors: impl Iterator<Item = f64>, alpha: f64) -> f64 {
    let mut acc = 0.0;
    for w in neighbors {
        acc += alpha * (w - own);
    }
    own + acc
}

/// Size-weighted mean `(n_j own + sum_m n_m w_m) / (n_j + sum_m n_m)`.
#[inline]
pub(crate) fn weighted(own: f64, own_size: f64, neighbors: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut acc = own_size * own;
    let mut total = own_size;
    for (w, n) in neighbors {
        acc += n * w;
        total += n;
    }
    acc / total
}

fn check_models(models: &[ModelParams], g: &Graph) -> Result<()> {
    if models.len() != g.nodes() {
        return Err(DflError::config(format!(
            "{} models for a graph with {} nodes",
            models.len(),
            g.nodes()
        )));
    }
    if let Some(first) = models.first() {
        if models.iter().any(|m| !m.same_arch(first)) {
            return Err(DflError::shape("models have different architectures"));
        }
    }
    Ok(())
}

/// One synchronous consensus iteration: every client reads the
/// iteration-start models of its neighbors.
///
/// On a disconnected graph each component converges on its own.
pub fn consensus_step(models: &[ModelParams], g: &Graph, rule: AlphaRule) -> Result<Vec<ModelParams>> {
    check_models(models, g)?;
    let alpha = rule.alpha(g);
    let mut out = models.to_vec();
    for (i, new) in out.iter_mut().enumerate() {
        let nb = g.neighbors(i);
        if nb.is_empty() {
            continue;
        }
        for (l, lp) in new.layers_mut().iter_mut().enumerate() {
            let own = models[i].layer(l);
            for (e, w) in lp.weights.iter_mut().enumerate() {
                *w = mix(own.weights[e], nb.iter().map(|&j| models[j].layer(l).weights[e]), alpha);
            }
            for (e, b) in lp.bias.iter_mut().enumerate() {
                *b = mix(own.bias[e], nb.iter().map(|&j| models[j].layer(l).bias[e]), alpha);
            }
        }
    }
    Ok(out)
}

/// Replace every model by the mean of itself and its neighbors.
pub fn direct_average(models: &[ModelParams], g: &Graph) -> Result<Vec<ModelParams>> {
    check_models(models, g)?;
    let mut out = Vec::with_capacity(models.len());
    for i in 0..models.len() {
        let mut group: Vec<usize> = g.neighbors(i).to_vec();
        group.push(i);
        group.sort_unstable();
        let members: Vec<ModelParams> = group.iter().map(|&j| models[j].clone()).collect();
        out.push(ModelParams::mean(&members)?);
    }
    Ok(out)
}

/// Largest whole-model distance over all client pairs (0 for fewer than two).
pub fn max_pairwise_distance(models: &[ModelParams]) -> Result<f64> {
    let mut max: f64 = 0.0;
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            max = max.max(model_distance(&models[i], &models[j])?);
        }
    }
    Ok(max)
}

/// `(min, max)` whole-model distance over all client pairs.
pub fn distance_range(models: &[ModelParams]) -> Result<(f64, f64)> {
    if models.len() < 2 {
        return Err(DflError::config("distance range needs at least two models"));
    }
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let d = model_distance(&models[i], &models[j])?;
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    Ok((lo, hi))
}

/// Iterate [`consensus_step`] until every pairwise distance is at most `eps`
/// or `s_max` iterations have run. Returns the models and iterations used.
pub fn run_consensus(
    models: Vec<ModelParams>,
    g: &Graph,
    eps: f64,
    s_max: usize,
    rule: AlphaRule,
) -> Result<(Vec<ModelParams>, usize)> {
    if !(eps > 0.0) {
        return Err(DflError::config(format!("consensus tolerance {eps} must be > 0")));
    }
    check_models(&models, g)?;
    let mut models = models;
    let mut iterations = 0;
    while iterations < s_max && max_pairwise_distance(&models)? > eps {
        models = consensus_step(&models, g, rule)?;
        iterations += 1;
    }
    Ok((models, iterations))
}

/// Size-weighted mean of one segment and its neighbors' copies.
///
/// `neighbors` holds `(values, dataset size)` pairs. An empty neighbor set
/// returns `own` unchanged.
pub fn segmented_aggregate(own: &[f64], own_size: usize, neighbors: &[(&[f64], usize)]) -> Result<Vec<f64>> {
    if own_size == 0 || neighbors.iter().any(|&(_, n)| n == 0) {
        return Err(DflError::config("dataset sizes must be > 0"));
    }
    if let Some((v, _)) = neighbors.iter().find(|(v, _)| v.len() != own.len()) {
        return Err(DflError::shape(format!(
            "neighbor segment has {} values, own has {}",
            v.len(),
            own.len()
        )));
    }
    Ok(own
        .iter()
        .enumerate()
        .map(|(e, &w)| weighted(w, own_size as f64, neighbors.iter().map(|(v, n)| (v[e], *n as f64))))
        .collect())
}
