//! The joint training loop: per epoch, shuffle training users, and for
//! each batch build one graph computing the topic loss, the pairwise
//! ranking loss, and the preference-transfer loss, then take an Adam
//! step on their weighted sum.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataio::{
    build_geo_graph, build_session_graph, to_bag_of_words, BagOfWords, Dataset, SessionGraph,
    TravelBehavior,
};
use crate::intention;
use crate::numkit::{adam_step, AdamConfig, Array, Graph, ParamStore};
use crate::outoftown::{self, sample_triples};
use rand::SeedableRng;

use super::model::intention_cfg;
use super::{
    fuse_user, home_and_intention, joint_loss, poi_table, rank_descending, register_all,
    squared_distance, transfer_map, Checkpoint, ColdScorer, LossParts, ModelDims, PipelineError,
    TrainConfig, TransferWeights,
};

/// One line of the training log.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossParts,
    pub val_rec10: f64,
    pub seconds: f64,
}

impl EpochStats {
    /// Tab-separated log line: epoch, L, L_N, L_P, L_T, val Rec@10, s.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.2}",
            self.epoch,
            self.loss.total,
            self.loss.ntm,
            self.loss.rank,
            self.loss.transfer,
            self.val_rec10,
            self.seconds
        )
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochStats>,
}

/// Mean Recall@k over users scored through the cold-start path (their
/// collaborative rows are never consulted, matching how validation and
/// test users must be served).
pub fn validation_recall(
    store: &ParamStore,
    cfg: &TrainConfig,
    a_geo: &Array,
    users: &[TravelBehavior],
    k: usize,
) -> Result<f64, PipelineError> {
    if users.is_empty() {
        return Ok(0.0);
    }
    let mut scorer = ColdScorer::new(store, cfg, a_geo)?;
    let mut total = 0.0;
    for user in users {
        let session = build_session_graph(&user.home_seq)?;
        let scores = scorer.scores(&session)?;
        let ranked = rank_descending(&scores);
        let truth: BTreeSet<usize> = user.out_set.iter().map(|c| c.poi).collect();
        let hits = ranked.iter().take(k).filter(|i| truth.contains(i)).count();
        total += hits as f64 / truth.len() as f64;
    }
    Ok(total / users.len() as f64)
}

pub fn train(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutput, PipelineError> {
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(PipelineError::Input("dataset has no training users".into()));
    }
    let dims = ModelDims {
        d1: ds.catalog.home_vocab(),
        d2: ds.catalog.out_vocab(),
        n_users: ds.train.len(),
    };
    let mut store = ParamStore::new(cfg.seed);
    register_all(&mut store, cfg, &dims);

    let sessions: Vec<SessionGraph> = ds
        .train
        .iter()
        .map(|u| build_session_graph(&u.home_seq))
        .collect::<Result<_, _>>()?;
    let bows: Vec<BagOfWords> = ds
        .train
        .iter()
        .map(|u| to_bag_of_words(&u.out_set, dims.d2))
        .collect::<Result<_, _>>()?;
    let geo = build_geo_graph(ds.catalog.out());
    let a_geo = geo.normalized().clone();

    let adam = AdamConfig {
        lr: cfg.lr,
        l2: cfg.l2,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = 0;
    let mut last_good = Checkpoint::capture(
        &store,
        cfg,
        &dims,
        &ds.catalog,
        0,
        LossParts::default(),
        0.0,
    );
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();

        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let table = poi_table(&mut g, &store, cfg, &a_geo)?;
            let phi = if cfg.disable_intention {
                None
            } else {
                Some(intention::intention_poi_distribution(
                    &mut g,
                    &store,
                    &intention_cfg(cfg),
                )?)
            };
            let transfer = TransferWeights::load(&mut g, &store)?;
            let u_table = g.param(&store, "outoftown.u_o")?;

            let mut ntm_terms = Vec::new();
            let mut rank_terms = Vec::new();
            let mut transfer_terms = Vec::new();
            for &ui in batch {
                let user = &ds.train[ui];
                let fwd = home_and_intention(&mut g, &store, cfg, &sessions[ui])?;

                if let Some(phi) = phi {
                    let eps: Vec<f64> = (0..cfg.k_topics)
                        .map(|_| rng.sample(StandardNormal))
                        .collect();
                    ntm_terms.push(intention::ntm_user_loss(
                        &mut g, &store, &bows[ui], phi, &eps,
                    )?);
                }

                let u_hat = transfer_map(&mut g, fwd.u_h, &transfer)?;
                let u_row = g.gather(u_table, &[ui])?;
                let target = if cfg.stop_grad_transfer_target {
                    g.detach(u_row)
                } else {
                    u_row
                };
                transfer_terms.push(squared_distance(&mut g, u_hat, target)?);

                let fused = fuse_user(&mut g, &store, u_row, fwd.u_int)?;
                let triples = sample_triples(
                    ui,
                    &user.out_set,
                    dims.d2,
                    cfg.n_neg,
                    cfg.positive_cap,
                    &mut rng,
                )?;
                let (pos, neg) = outoftown::triple_scores(&mut g, table, fused, &triples)?;
                rank_terms.push(outoftown::bpr_loss(&mut g, pos, neg)?);
            }

            let l_n = g.sum_scalars(&ntm_terms)?;
            let l_p = g.sum_scalars(&rank_terms)?;
            let l_t = g.sum_scalars(&transfer_terms)?;
            let joint = joint_loss(&mut g, l_n, l_p, l_t, cfg)?;
            for (component, node) in [
                ("topic", l_n),
                ("ranking", l_p),
                ("transfer", l_t),
                ("joint", joint),
            ] {
                if !g.value(node).item().is_finite() {
                    return Err(PipelineError::Diverged {
                        component,
                        epoch,
                        last_good: Box::new(last_good),
                    });
                }
            }
            sums.ntm += g.value(l_n).item();
            sums.rank += g.value(l_p).item();
            sums.transfer += g.value(l_t).item();
            sums.total += g.value(joint).item();

            g.backward(joint, &mut store)?;
            step += 1;
            adam_step(&mut store, &adam, step)?;
        }

        let val_rec10 = validation_recall(&store, cfg, &a_geo, &ds.valid, 10)?;
        let stats = EpochStats {
            epoch,
            loss: sums,
            val_rec10,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        epochs.push(stats);
        last_good = Checkpoint::capture(&store, cfg, &dims, &ds.catalog, epoch, sums, val_rec10);
    }

    Ok(TrainOutput {
        checkpoint: last_good,
        epochs,
    })
}
