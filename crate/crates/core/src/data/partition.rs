//! Splitting a dataset across clients.
//!
//! All partitioners return disjoint index lists; [`share_data`] is the only
//! operation that makes lists overlap, by copying samples between clients.

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{DflError, Result};
use crate::rng::{self, domain};

/// Normalization constants one client applies to raw pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

/// Which client gets which samples, and how it normalizes them.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    /// Per-client indices into the parent dataset.
    pub parts: Vec<Vec<usize>>,
    pub normalization: Vec<Normalization>,
    /// Configured skewedness `U`, for label-skewed plans.
    pub skew: Option<f64>,
    /// Fraction `S` of each part copied to the other clients.
    pub share: f64,
    /// Variance used to draw client sizes, for Gaussian-size plans.
    pub size_variance: Option<f64>,
}

impl PartitionPlan {
    fn new(dataset: &Dataset, parts: Vec<Vec<usize>>) -> Self {
        let (mean, std) = dataset.pixel_stats(0..dataset.len());
        let k = parts.len();
        PartitionPlan {
            parts,
            normalization: vec![Normalization { mean, std }; k],
            skew: None,
            share: 0.0,
            size_variance: None,
        }
    }

    pub fn clients(&self) -> usize {
        self.parts.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.parts.iter().map(Vec::len).collect()
    }

    /// True when no sample index appears in two parts.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.parts.iter().flatten().all(|&i| seen.insert(i))
    }

    /// Fraction of client `i`'s samples that carry label `i`.
    pub fn measured_skewedness(&self, dataset: &Dataset, client: usize) -> f64 {
        let part = &self.parts[client];
        if part.is_empty() {
            return 0.0;
        }
        let own = part.iter().filter(|&&s| dataset.label(s) == client).count();
        own as f64 / part.len() as f64
    }
}

fn check_clients(dataset: &Dataset, clients: usize) -> Result<()> {
    if clients == 0 {
        return Err(DflError::config("need at least one client"));
    }
    if clients > dataset.len() {
        return Err(DflError::config(format!(
            "{clients} clients for only {} samples",
            dataset.len()
        )));
    }
    Ok(())
}

fn shuffled_indices(n: usize, seed: u64, tag: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[domain::PARTITION, tag]));
    idx
}

/// Random disjoint split into `clients` parts whose sizes differ by at most one.
pub fn partition_iid(dataset: &Dataset, clients: usize, seed: u64) -> Result<PartitionPlan> {
    check_clients(dataset, clients)?;
    let idx = shuffled_indices(dataset.len(), seed, 0);
    let (q, r) = (dataset.len() / clients, dataset.len() % clients);
    let mut parts = Vec::with_capacity(clients);
    let mut start = 0;
    for c in 0..clients {
        let len = q + usize::from(c < r);
        parts.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(PartitionPlan::new(dataset, parts))
}

/// Every client sees the whole dataset (overlapping access, for experiments
/// that isolate the aggregation step from data heterogeneity).
pub fn partition_full(dataset: &Dataset, clients: usize) -> Result<PartitionPlan> {
    if clients == 0 {
        return Err(DflError::config("need at least one client"));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    Ok(PartitionPlan::new(dataset, vec![all; clients]))
}

/// How the proportional size is combined with the batch size `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SizeRule {
    /// `N_i = max(share_i, B)`: every client keeps at least one batch.
    #[default]
    Floor,
    /// `N_i = min(share_i, B)`: the formula exactly as printed.
    Literal,
}

/// Client sizes proportional to `|x_i|`.
///
/// With [`SizeRule::Floor`] clients whose proportional share falls below
/// `batch` are pinned at `batch` and the rest of the samples are shared
/// proportionally among the others, repeating until stable; this keeps
/// `sum N_i <= total`. Rounding is to nearest; leftover samples stay unassigned.
pub fn gaussian_sizes(abs_draws: &[f64], total: usize, batch: usize, rule: SizeRule) -> Vec<usize> {
    let k = abs_draws.len();
    let sum: f64 = abs_draws.iter().sum();
    let proportional = |w: f64, pool: f64, mass: usize| -> usize {
        if sum == 0.0 {
            mass / k
        } else {
            (w * mass as f64 / pool).round() as usize
        }
    };
    match rule {
        SizeRule::Literal => abs_draws
            .iter()
            .map(|&w| proportional(w, sum, total).min(batch))
            .collect(),
        SizeRule::Floor => {
            if sum == 0.0 {
                return vec![(total / k).max(batch); k];
            }
            let mut pinned = vec![false; k];
            loop {
                let free_mass = total - batch * pinned.iter().filter(|&&p| p).count();
                let pool: f64 = (0..k).filter(|&i| !pinned[i]).map(|i| abs_draws[i]).sum();
                let mut changed = false;
                for i in 0..k {
                    if !pinned[i] && (pool == 0.0 || abs_draws[i] * free_mass as f64 / pool < batch as f64) {
                        pinned[i] = true;
                        changed = true;
                    }
                }
                if !changed {
                    let mut sizes: Vec<usize> = (0..k)
                        .map(|i| {
                            if pinned[i] {
                                batch
                            } else {
                                (abs_draws[i] * free_mass as f64 / pool).floor() as usize
                            }
                        })
                        .collect();
                    // largest remainders first, so the sum never exceeds total
                    let assigned: usize = sizes.iter().sum();
                    let mut rem: Vec<(f64, usize)> = (0..k)
                        .filter(|&i| !pinned[i])
                        .map(|i| {
                            let exact = abs_draws[i] * free_mass as f64 / pool;
                            (exact - exact.floor(), i)
                        })
                        .filter(|(frac, _)| *frac >= 0.5)
                        .collect();
                    rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                    for (_, i) in rem.into_iter().take(total - assigned) {
                        sizes[i] += 1;
                    }
                    return sizes;
                }
            }
        }
    }
}

/// IID parts whose sizes follow `|x_i|`, `x_i ~ N(0, sigma2)`.
///
/// If every draw is exactly zero the draws are taken once more, and if they
/// are zero again the split falls back to equal sizes.
pub fn partition_gaussian_sizes(
    dataset: &Dataset,
    clients: usize,
    sigma2: f64,
    batch: usize,
    seed: u64,
    rule: SizeRule,
) -> Result<PartitionPlan> {
    check_clients(dataset, clients)?;
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(DflError::config(format!("size variance {sigma2} must be >= 0")));
    }
    if batch == 0 || clients * batch > dataset.len() {
        return Err(DflError::config(format!(
            "K*B = {} exceeds the {} available samples",
            clients * batch,
            dataset.len()
        )));
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).map_err(|e| DflError::config(e.to_string()))?;
    let mut draws = vec![0.0; clients];
    for attempt in 0..2u64 {
        let mut r = rng::stream(seed, &[domain::SIZES, attempt]);
        draws = (0..clients).map(|_| normal.sample(&mut r).abs()).collect();
        if draws.iter().any(|&d| d > 0.0) {
            break;
        }
    }
    let sizes = gaussian_sizes(&draws, dataset.len(), batch, rule);
    let idx = shuffled_indices(dataset.len(), seed, 1);
    let mut parts = Vec::with_capacity(clients);
    let mut start = 0;
    for &len in &sizes {
        parts.push(idx[start..start + len].to_vec());
        start += len;
    }
    let mut plan = PartitionPlan::new(dataset, parts);
    plan.size_variance = Some(sigma2);
    Ok(plan)
}

/// Label-skewed split: client `i` gets `round(U * n)` samples of label `i`
/// and fills the rest of its `n` samples evenly from the other labels.
///
/// `n` defaults to the smallest class count, which lets a balanced dataset be
/// used completely. The non-own remainder is spread over the other classes in
/// equal shares; the left-over units are rotated across clients so every
/// class is asked for exactly `n` samples in total.
pub fn partition_skewed(
    dataset: &Dataset,
    clients: usize,
    skew: f64,
    per_client: Option<usize>,
    seed: u64,
) -> Result<PartitionPlan> {
    let classes = dataset.classes();
    if clients != classes {
        return Err(DflError::config(format!(
            "label-skewed partition pairs client i with label i: need K = {classes}, got {clients}"
        )));
    }
    if !(0.0..=1.0).contains(&skew) {
        return Err(DflError::config(format!("skewedness {skew} outside [0, 1]")));
    }
    let mut pools: Vec<Vec<usize>> = (0..classes).map(|c| dataset.indices_of(c)).collect();
    let min_count = pools.iter().map(Vec::len).min().unwrap_or(0);
    let n = per_client.unwrap_or(min_count);
    if n == 0 || n > min_count {
        return Err(DflError::data(format!(
            "need {n} samples of every class, smallest class has {min_count}"
        )));
    }
    for (c, pool) in pools.iter_mut().enumerate() {
        pool.shuffle(&mut rng::stream(seed, &[domain::PARTITION, 2, c as u64]));
    }
    let own = (skew * n as f64).round() as usize;
    let other = n - own;
    let (q, r) = (other / (classes - 1), other % (classes - 1));
    let mut cursor = vec![0usize; classes];
    let mut take = |c: usize, count: usize, out: &mut Vec<usize>| {
        out.extend_from_slice(&pools[c][cursor[c]..cursor[c] + count]);
        cursor[c] += count;
    };
    let mut parts = vec![Vec::with_capacity(n); clients];
    for (i, part) in parts.iter_mut().enumerate() {
        take(i, own, part);
        for step in 1..classes {
            let c = (i + step) % classes;
            take(c, q + usize::from(step <= r), part);
        }
    }
    for (i, part) in parts.iter_mut().enumerate() {
        part.shuffle(&mut rng::stream(seed, &[domain::PARTITION, 3, i as u64]));
    }
    let mut plan = PartitionPlan::new(dataset, parts);
    plan.skew = Some(skew);
    Ok(plan)
}

/// Pairwise data sharing.
///
/// Each donor `j` picks `round(S * |D_j|)` of its own samples uniformly
/// without replacement and splits them into `K - 1` equal chunks, one per
/// other client; when the count does not divide evenly, lower-indexed
/// recipients get one extra. Donors keep what they share. Client `i` ends
/// with `|D_i| + sum_{j != i} S |D_j| / (K - 1)` samples up to rounding.
pub fn share_data(plan: &PartitionPlan, share: f64, seed: u64) -> Result<PartitionPlan> {
    if !(0.0..=1.0).contains(&share) {
        return Err(DflError::config(format!("share fraction {share} outside [0, 1]")));
    }
    let k = plan.clients();
    let mut out = plan.clone();
    out.share = share;
    if share == 0.0 || k < 2 {
        return Ok(out);
    }
    let mut received: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (donor, part) in plan.parts.iter().enumerate() {
        let count = ((share * part.len() as f64).round() as usize).min(part.len());
        let mut r = rng::stream(seed, &[domain::SHARE, donor as u64]);
        let picked = index::sample(&mut r, part.len(), count);
        let picked: Vec<usize> = picked.iter().map(|p| part[p]).collect();
        let (q, rem) = (count / (k - 1), count % (k - 1));
        let mut start = 0;
        for (slot, recipient) in (0..k).filter(|&c| c != donor).enumerate() {
            let len = q + usize::from(slot < rem);
            received[recipient].extend_from_slice(&picked[start..start + len]);
            start += len;
        }
    }
    for (part, extra) in out.parts.iter_mut().zip(received) {
        let mut present: std::collections::HashSet<usize> = part.iter().copied().collect();
        part.extend(extra.into_iter().filter(|s| present.insert(*s)));
    }
    Ok(out)
}

/// Expected fraction of label-`i` samples in client `i`'s data after sharing.
///
/// Client `i` starts with `U |D_i|` own-label samples. Each donor `j` holds
/// `(1 - U) |D_j| / (K - 1)` samples of label `i` and sends a uniform
/// `S / (K - 1)` fraction of its data to `i`, so
///
/// ```text
///            U |D_i| + sum_{j != i} S (1 - U) |D_j| / (K - 1)^2
/// E[U'_i] = ----------------------------------------------------
///               |D_i| + sum_{j != i} S |D_j| / (K - 1)
/// ```
///
/// With equal sizes the denominator is `(1 + S) |D_i|`.
pub fn expected_skewedness(skew: f64, share: f64, sizes: &[usize], client: usize) -> f64 {
    let k = sizes.len();
    let own = sizes[client] as f64;
    if k < 2 {
        return skew;
    }
    let km1 = (k - 1) as f64;
    let others: f64 = sizes
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != client)
        .map(|(_, &s)| s as f64)
        .sum();
    let numer = skew * own + share * (1.0 - skew) * others / (km1 * km1);
    let denom = own + share * others / km1;
    numer / denom
}
