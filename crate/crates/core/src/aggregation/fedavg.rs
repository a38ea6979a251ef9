use rand::seq::index;

use crate::error::{DflError, Result};
use crate::model::ModelParams;
use crate::rng::{self, domain};

/// Number of clients taking part in each round: `round(C * K)`.
pub fn fedavg_participants(clients: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DflError::config(format!("client fraction {fraction} outside (0, 1]")));
    }
    let n = (fraction * clients as f64).round() as usize;
    if n == 0 {
        return Err(DflError::config(format!(
            "client fraction {fraction} selects nobody out of {clients}"
        )));
    }
    Ok(n)
}

/// The ascending set of clients participating in `round`.
pub fn fedavg_select(clients: usize, fraction: f64, seed: u64, round: u64) -> Result<Vec<usize>> {
    let n = fedavg_participants(clients, fraction)?;
    let mut r = rng::stream(seed, &[domain::FEDAVG, round]);
    let mut picked = index::sample(&mut r, clients, n).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// One server round.
///
/// The server model becomes the unweighted mean of the `selected` clients.
/// Then the participants of `round + 1` are drawn and each of them is reset
/// to the server model. Returns the server model and the new selection.
pub fn fedavg_round(
    clients: &mut [ModelParams],
    selected: &[usize],
    fraction: f64,
    seed: u64,
    round: u64,
) -> Result<(ModelParams, Vec<usize>)> {
    if let Some(&bad) = selected.iter().find(|&&c| c >= clients.len()) {
        return Err(DflError::config(format!("selected client {bad} does not exist")));
    }
    let picked: Vec<ModelParams> = selected.iter().map(|&c| clients[c].clone()).collect();
    let server = ModelParams::mean(&picked)?;
    let next = fedavg_select(clients.len(), fraction, seed, round + 1)?;
    for &c in &next {
        clients[c] = server.clone();
    }
    Ok((server, next))
}
