//! Ranking metrics over full-catalog orderings.

use std::collections::BTreeSet;

use super::EvalError;

/// Fraction of the ground truth captured in the top k of the ranking.
pub fn recall_at_k(ranked: &[usize], truth: &BTreeSet<usize>, k: usize) -> Result<f64, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let hits = ranked.iter().take(k).filter(|i| truth.contains(i)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Average precision of one ranking: the mean over ground-truth items of
/// the precision at each hit's rank. `catalog` is the number of items
/// the ranking must cover; `cutoff` ignores hits deeper than that rank
/// while keeping the full truth count in the denominator.
pub fn average_precision(
    ranked: &[usize],
    truth: &BTreeSet<usize>,
    catalog: usize,
    cutoff: Option<usize>,
) -> Result<f64, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    if ranked.len() < catalog {
        return Err(EvalError::ShortRanking {
            have: ranked.len(),
            need: catalog,
        });
    }
    let horizon = cutoff.unwrap_or(ranked.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, item) in ranked.iter().take(horizon).enumerate() {
        if truth.contains(item) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Ok(sum / truth.len() as f64)
}

/// Mean of per-user average precision.
pub fn mean_average_precision(
    rankings: &[Vec<usize>],
    truths: &[BTreeSet<usize>],
    catalog: usize,
    cutoff: Option<usize>,
) -> Result<f64, EvalError> {
    if rankings.len() != truths.len() {
        return Err(EvalError::Config(format!(
            "{} rankings for {} truth sets",
            rankings.len(),
            truths.len()
        )));
    }
    if rankings.is_empty() {
        return Err(EvalError::Config("no users to evaluate".into()));
    }
    let mut total = 0.0;
    for (ranked, truth) in rankings.iter().zip(truths) {
        total += average_precision(ranked, truth, catalog, cutoff)?;
    }
    Ok(total / rankings.len() as f64)
}
