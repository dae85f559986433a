//! Parameter registration and the forward-pass pieces shared by the
//! training loop and cold-start recommendation, so both rank POIs
//! through literally the same code.

use crate::dataio::SessionGraph;
use crate::encoder::{self, EncoderConfig};
use crate::intention::{self, IntentionConfig};
use crate::numkit::{Array, Graph, NodeId, NumError, ParamStore};
use crate::outoftown::{self, FuseWeights, GeoConvWeights};

use super::{PipelineError, TrainConfig};

/// Corpus-derived sizes the parameter shapes depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Home vocabulary size.
    pub d1: usize,
    /// Out-of-town vocabulary size.
    pub d2: usize,
    /// Number of training users (rows of the collaborative table).
    pub n_users: usize,
}

pub(crate) fn encoder_cfg(cfg: &TrainConfig) -> EncoderConfig {
    EncoderConfig {
        d: cfg.d,
        steps: cfg.ggnn_steps,
        attn_softmax: cfg.attn_softmax,
    }
}

pub(crate) fn intention_cfg(cfg: &TrainConfig) -> IntentionConfig {
    IntentionConfig {
        d: cfg.d,
        k: cfg.k_topics,
        ntm_hidden: cfg.ntm_hidden,
        share_e_vo: cfg.share_e_vo,
    }
}

/// Register every trainable tensor of the full model.
pub fn register_all(store: &mut ParamStore, cfg: &TrainConfig, dims: &ModelDims) {
    encoder::register(store, &encoder_cfg(cfg), dims.d1);
    intention::register(store, &intention_cfg(cfg), dims.d2);
    outoftown::register(store, cfg.d, dims.d2, dims.n_users);
    let bound = 1.0 / (cfg.d as f64).sqrt();
    store.init_uniform("transfer.w1", &[cfg.d, cfg.d], bound);
    store.init_zeros("transfer.b1", &[cfg.d]);
    store.init_uniform("transfer.w2", &[cfg.d, cfg.d], bound);
    store.init_zeros("transfer.b2", &[cfg.d]);
}

/// Two affine layers with a ReLU between: the map from home-town
/// preference space into the out-of-town embedding space.
pub struct TransferWeights {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl TransferWeights {
    pub fn load(g: &mut Graph, store: &ParamStore) -> Result<Self, NumError> {
        Ok(TransferWeights {
            w1: g.param(store, "transfer.w1")?,
            b1: g.param(store, "transfer.b1")?,
            w2: g.param(store, "transfer.w2")?,
            b2: g.param(store, "transfer.b2")?,
        })
    }
}

/// `u_hat = W2 ReLU(W1 u_h + b1) + b2`, shapes `[1, d]` throughout.
pub fn transfer_map(g: &mut Graph, u_h: NodeId, w: &TransferWeights) -> Result<NodeId, NumError> {
    let pre = g.matmul_nt(u_h, w.w1)?;
    let pre = g.add_row(pre, w.b1)?;
    let h = g.relu(pre);
    let out = g.matmul_nt(h, w.w2)?;
    g.add_row(out, w.b2)
}

/// Squared Euclidean distance between two same-shape rows, as a scalar.
pub fn squared_distance(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
    let diff = g.sub(a, b)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.sum(sq))
}

/// `L = lambda1 L_N + lambda2 L_P + lambda3 L_T`.
pub fn joint_loss(
    g: &mut Graph,
    l_n: NodeId,
    l_p: NodeId,
    l_t: NodeId,
    cfg: &TrainConfig,
) -> Result<NodeId, NumError> {
    let a = g.scale(l_n, cfg.lambda1);
    let b = g.scale(l_p, cfg.lambda2);
    let c = g.scale(l_t, cfg.lambda3);
    g.sum_scalars(&[a, b, c])
}

/// The per-user home-side state: preference vector and, unless ablated,
/// the intention summary derived from it.
pub struct UserForward {
    pub u_h: NodeId,
    pub u_int: NodeId,
}

pub fn home_and_intention(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &TrainConfig,
    session: &SessionGraph,
) -> Result<UserForward, NumError> {
    let u_h = encoder::home_preference(g, store, &encoder_cfg(cfg), session)?;
    let u_int = if cfg.disable_intention {
        g.constant(Array::zeros(&[1, cfg.d]))
    } else {
        intention::user_intention(g, store, u_h)?
    };
    Ok(UserForward { u_h, u_int })
}

/// The table recommendations are scored against: the geographically
/// convolved POI embeddings, or the raw table when ablated.
pub fn poi_table(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &TrainConfig,
    a_geo: &Array,
) -> Result<NodeId, NumError> {
    let v_o = g.param(store, "outoftown.v_o")?;
    if cfg.disable_geoconv {
        return Ok(v_o);
    }
    let a = g.constant(a_geo.clone());
    let w = GeoConvWeights::load(g, store)?;
    outoftown::geo_conv(g, a, v_o, &w)
}

/// Fusion entry point used by both training (collaborative row) and
/// recommendation (transferred row).
pub fn fuse_user(
    g: &mut Graph,
    store: &ParamStore,
    u_first: NodeId,
    u_int: NodeId,
) -> Result<NodeId, NumError> {
    let w = FuseWeights::load(g, store)?;
    outoftown::fuse(g, u_first, u_int, &w)
}

/// Catalog scorer for users known only by their home check-in sequence:
/// encode, transfer, fuse, score. The POI table and all weights are
/// materialized once; each call rolls the graph back to that point, so
/// scoring thousands of users stays flat in memory.
pub struct ColdScorer<'a> {
    g: Graph,
    store: &'a ParamStore,
    cfg: &'a TrainConfig,
    table: NodeId,
    transfer: TransferWeights,
    mark: usize,
}

impl<'a> ColdScorer<'a> {
    pub fn new(
        store: &'a ParamStore,
        cfg: &'a TrainConfig,
        a_geo: &Array,
    ) -> Result<Self, PipelineError> {
        let mut g = Graph::new();
        let table = poi_table(&mut g, store, cfg, a_geo)?;
        let transfer = TransferWeights::load(&mut g, store)?;
        // preload everything the per-user pass touches, so truncation
        // never drops a registered parameter
        FuseWeights::load(&mut g, store)?;
        g.param(store, "encoder.emb")?;
        encoder::GgnnWeights::load(&mut g, store, cfg.ggnn_steps)?;
        encoder::AttentionWeights::load(&mut g, store, cfg.attn_softmax)?;
        if !cfg.disable_intention {
            g.param(store, "intention.t")?;
            g.param(store, "intention.attn.w_t")?;
        }
        let mark = g.len();
        Ok(ColdScorer {
            g,
            store,
            cfg,
            table,
            transfer,
            mark,
        })
    }

    pub fn scores(&mut self, session: &SessionGraph) -> Result<Vec<f64>, PipelineError> {
        let g = &mut self.g;
        let fwd = home_and_intention(g, self.store, self.cfg, session)?;
        let u_hat = transfer_map(g, fwd.u_h, &self.transfer)?;
        let fused = fuse_user(g, self.store, u_hat, fwd.u_int)?;
        let scores = outoftown::score_catalog(g, fused, self.table)?;
        let out = g.value(scores).data().to_vec();
        g.truncate(self.mark);
        Ok(out)
    }
}

/// One-shot convenience over [`ColdScorer`].
pub fn cold_scores(
    store: &ParamStore,
    cfg: &TrainConfig,
    a_geo: &Array,
    session: &SessionGraph,
) -> Result<Vec<f64>, PipelineError> {
    ColdScorer::new(store, cfg, a_geo)?.scores(session)
}

/// Catalog indices sorted by descending score, ties by ascending index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{build_session_graph, CheckIn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            d: 4,
            k_topics: 3,
            ntm_hidden: 5,
            ..TrainConfig::default()
        }
    }

    fn set_eye(store: &mut ParamStore, name: &str, d: usize) {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        store.insert(name, Array::matrix(d, d, m).unwrap());
    }

    fn seq(pois: &[usize]) -> Vec<CheckIn> {
        pois.iter()
            .enumerate()
            .map(|(t, &poi)| CheckIn {
                user: 0,
                time: t as i64,
                poi,
            })
            .collect()
    }

    #[test]
    fn identity_transfer_passes_nonnegative_rows_through() {
        let d = 4;
        let mut store = ParamStore::new(0);
        register_all(
            &mut store,
            &tiny_cfg(),
            &ModelDims {
                d1: 5,
                d2: 6,
                n_users: 2,
            },
        );
        set_eye(&mut store, "transfer.w1", d);
        set_eye(&mut store, "transfer.w2", d);
        store.insert("transfer.b1", Array::zeros(&[d]));
        store.insert("transfer.b2", Array::zeros(&[d]));

        let mut g = Graph::new();
        let u = g.constant(Array::matrix(1, d, vec![0.5, 0.0, 2.0, 1.25]).unwrap());
        let w = TransferWeights::load(&mut g, &store).unwrap();
        let out = transfer_map(&mut g, u, &w).unwrap();
        assert_eq!(g.value(out).data(), &[0.5, 0.0, 2.0, 1.25]);
    }

    #[test]
    fn zero_transfer_weights_give_zero_output() {
        let d = 4;
        let mut store = ParamStore::new(0);
        register_all(
            &mut store,
            &tiny_cfg(),
            &ModelDims {
                d1: 5,
                d2: 6,
                n_users: 2,
            },
        );
        for name in ["transfer.w1", "transfer.w2"] {
            store.insert(name, Array::zeros(&[d, d]));
        }
        let mut g = Graph::new();
        let u = g.constant(Array::matrix(1, d, vec![-3.0, 7.0, 0.1, 2.0]).unwrap());
        let w = TransferWeights::load(&mut g, &store).unwrap();
        let out = transfer_map(&mut g, u, &w).unwrap();
        assert!(g.value(out).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn transfer_output_is_finite_on_wide_inputs() {
        let d = 4;
        let mut store = ParamStore::new(3);
        register_all(
            &mut store,
            &tiny_cfg(),
            &ModelDims {
                d1: 5,
                d2: 6,
                n_users: 2,
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let mut g = Graph::new();
            let u = g.constant(
                Array::matrix(1, d, (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect()).unwrap(),
            );
            let w = TransferWeights::load(&mut g, &store).unwrap();
            let out = transfer_map(&mut g, u, &w).unwrap();
            assert!(g.value(out).data().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn squared_distance_is_the_squared_norm() {
        let mut g = Graph::new();
        let a = g.constant(Array::matrix(1, 4, vec![3.0, 4.0, 0.0, 0.0]).unwrap());
        let b = g.constant(Array::zeros(&[1, 4]));
        let l = squared_distance(&mut g, a, b).unwrap();
        assert_eq!(g.value(l).item(), 25.0);

        let same = squared_distance(&mut g, a, a).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
    }

    #[test]
    fn joint_loss_weights_the_components() {
        let cfg = TrainConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            ..TrainConfig::default()
        };
        let mut g = Graph::new();
        let (a, b, c) = (g.scalar(2.0), g.scalar(3.0), g.scalar(4.0));
        let l = joint_loss(&mut g, a, b, c, &cfg).unwrap();
        assert_eq!(g.value(l).item(), 9.0);

        let weighted = TrainConfig {
            lambda1: 0.2,
            lambda2: 0.4,
            lambda3: 0.4,
            ..TrainConfig::default()
        };
        let mut g = Graph::new();
        let (a, b, c) = (g.scalar(1.0), g.scalar(1.0), g.scalar(1.0));
        let l = joint_loss(&mut g, a, b, c, &weighted).unwrap();
        assert!((g.value(l).item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_lambda1_ignores_the_first_component() {
        let cfg = TrainConfig {
            lambda1: 0.0,
            ..TrainConfig::default()
        };
        let eval = |l_n: f64| {
            let mut g = Graph::new();
            let (a, b, c) = (g.scalar(l_n), g.scalar(3.0), g.scalar(4.0));
            let l = joint_loss(&mut g, a, b, c, &cfg).unwrap();
            g.value(l).item()
        };
        assert_eq!(eval(123.0), eval(-55.0));
    }

    #[test]
    fn ranking_orders_by_score_then_index() {
        let ranked = rank_descending(&[0.5, 2.0, 0.5, -1.0, 2.0]);
        assert_eq!(ranked, vec![1, 4, 0, 2, 3]);
    }

    #[test]
    fn disabled_intention_feeds_zeros_to_fusion() {
        let cfg = TrainConfig {
            disable_intention: true,
            ..tiny_cfg()
        };
        let mut store = ParamStore::new(5);
        register_all(
            &mut store,
            &cfg,
            &ModelDims {
                d1: 5,
                d2: 6,
                n_users: 2,
            },
        );
        let session = build_session_graph(&seq(&[0, 1, 2])).unwrap();
        let mut g = Graph::new();
        let fwd = home_and_intention(&mut g, &store, &cfg, &session).unwrap();
        assert!(g.value(fwd.u_int).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reused_scorer_matches_fresh_single_shot_scoring() {
        let cfg = tiny_cfg();
        let dims = ModelDims {
            d1: 5,
            d2: 6,
            n_users: 3,
        };
        let mut store = ParamStore::new(12);
        register_all(&mut store, &cfg, &dims);
        let a_geo = {
            // any row-stochastic matrix works as the spread operator here
            let mut m = vec![0.1; dims.d2 * dims.d2];
            for i in 0..dims.d2 {
                m[i * dims.d2 + i] = 0.5;
            }
            Array::matrix(dims.d2, dims.d2, m).unwrap()
        };
        let sessions = [
            build_session_graph(&seq(&[0, 1, 2, 1])).unwrap(),
            build_session_graph(&seq(&[3, 4])).unwrap(),
            build_session_graph(&seq(&[2])).unwrap(),
        ];
        let mut scorer = ColdScorer::new(&store, &cfg, &a_geo).unwrap();
        let before = scorer.g.len();
        for session in &sessions {
            let reused = scorer.scores(session).unwrap();
            let fresh = cold_scores(&store, &cfg, &a_geo, session).unwrap();
            assert_eq!(reused, fresh);
        }
        assert_eq!(scorer.g.len(), before, "graph must not grow across users");
    }

    #[test]
    fn disabled_geoconv_returns_the_raw_table() {
        let cfg = TrainConfig {
            disable_geoconv: true,
            ..tiny_cfg()
        };
        let dims = ModelDims {
            d1: 5,
            d2: 6,
            n_users: 2,
        };
        let mut store = ParamStore::new(6);
        register_all(&mut store, &cfg, &dims);
        let a_geo = Array::matrix(dims.d2, dims.d2, vec![1.0 / 6.0; 36]).unwrap();
        let mut g = Graph::new();
        let table = poi_table(&mut g, &store, &cfg, &a_geo).unwrap();
        assert_eq!(
            g.value(table).data(),
            store.get("outoftown.v_o").unwrap().data()
        );
    }
}
