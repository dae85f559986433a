//! Serving a loaded checkpoint: resolve a new user's raw home check-ins
//! against the saved vocabulary, run the cold-start forward pass, and
//! return the top-k out-of-town POIs.

use std::collections::HashMap;

use crate::dataio::{build_session_graph, CheckIn};

use super::{cold_scores, rank_descending, Checkpoint, PipelineError};

/// Top-k out-of-town POIs for one user, scores non-increasing, raw ids.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedRecommendation {
    pub user: u64,
    pub items: Vec<(u64, f64)>,
}

/// Recommend for a user known only by a raw home check-in sequence.
/// POIs missing from the checkpoint's vocabulary are dropped; an empty
/// resolved sequence is an input error.
pub fn recommend(
    ckpt: &Checkpoint,
    user: u64,
    home_raw: &[u64],
    k: usize,
) -> Result<RankedRecommendation, PipelineError> {
    if k == 0 {
        return Err(PipelineError::Input("k must be at least 1".into()));
    }
    let index: HashMap<u64, usize> = ckpt
        .home_ids
        .iter()
        .enumerate()
        .map(|(i, &raw)| (raw, i))
        .collect();
    let seq: Vec<CheckIn> = home_raw
        .iter()
        .filter_map(|raw| index.get(raw))
        .enumerate()
        .map(|(t, &poi)| CheckIn {
            user,
            time: t as i64,
            poi,
        })
        .collect();
    if seq.is_empty() {
        return Err(PipelineError::Input(
            "no provided home check-in matches the model's vocabulary".into(),
        ));
    }
    let session = build_session_graph(&seq)?;
    let store = ckpt.to_store();
    let geo = ckpt.geo_graph();
    let scores = cold_scores(&store, &ckpt.cfg, geo.normalized(), &session)?;
    let items = rank_descending(&scores)
        .into_iter()
        .take(k)
        .map(|i| (ckpt.out_ids[i], scores[i]))
        .collect();
    Ok(RankedRecommendation { user, items })
}
