//! Sanity baselines: global visit frequency and a plain matrix
//! factorization trained with the same pairwise loss, no graphs, no
//! intentions, no transfer.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::TravelBehavior;
use crate::numkit::{adam_step, AdamConfig, Array, Graph, ParamStore};
use crate::outoftown::{bpr_loss, sample_triples, triple_scores};
use crate::pipeline::rank_descending;

use super::EvalError;

/// The non-personalized frequency baseline: one static ranking of the
/// out-of-town catalog by training check-in count, ties by ascending id.
#[derive(Clone, Debug)]
pub struct TopRanker {
    ranking: Vec<usize>,
}

impl TopRanker {
    pub fn build(train: &[TravelBehavior], d2: usize) -> Self {
        let mut counts = vec![0usize; d2];
        for user in train {
            for c in &user.out_set {
                counts[c.poi] += 1;
            }
        }
        let mut ranking: Vec<usize> = (0..d2).collect();
        ranking.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        TopRanker { ranking }
    }

    /// The same list for every user.
    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MfConfig {
    pub d: usize,
    pub epochs: usize,
    pub lr: f64,
    pub n_neg: usize,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            d: 16,
            epochs: 15,
            lr: 0.01,
            n_neg: 4,
            seed: 0,
        }
    }
}

/// Trained user/item tables. Users absent from training are served with
/// the mean training-user embedding.
#[derive(Clone, Debug)]
pub struct MfRanker {
    rows: HashMap<u64, usize>,
    users: Array,
    items: Array,
    mean_user: Vec<f64>,
}

impl MfRanker {
    pub fn scores_for(&self, user: u64) -> Vec<f64> {
        let d = self.mean_user.len();
        let emb: &[f64] = match self.rows.get(&user) {
            Some(&row) => &self.users.data()[row * d..(row + 1) * d],
            None => &self.mean_user,
        };
        (0..self.items.rows())
            .map(|i| {
                let row = &self.items.data()[i * d..(i + 1) * d];
                row.iter().zip(emb).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    pub fn ranking_for(&self, user: u64) -> Vec<usize> {
        rank_descending(&self.scores_for(user))
    }
}

pub fn train_bpr_mf(
    train: &[TravelBehavior],
    d2: usize,
    cfg: &MfConfig,
) -> Result<MfRanker, EvalError> {
    if train.is_empty() {
        return Err(EvalError::Config("no training users".into()));
    }
    let n = train.len();
    let bound = 1.0 / (cfg.d as f64).sqrt();
    let mut store = ParamStore::new(cfg.seed);
    store.init_uniform("mf.u", &[n, cfg.d], bound);
    store.init_uniform("mf.v", &[d2, cfg.d], bound);

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for ui in order {
            let triples = sample_triples(ui, &train[ui].out_set, d2, cfg.n_neg, None, &mut rng)?;
            let mut g = Graph::new();
            let users = g.param(&store, "mf.u")?;
            let items = g.param(&store, "mf.v")?;
            let u_row = g.gather(users, &[ui])?;
            let (pos, neg) = triple_scores(&mut g, items, u_row, &triples)?;
            let loss = bpr_loss(&mut g, pos, neg)?;
            g.backward(loss, &mut store)?;
            step += 1;
            adam_step(&mut store, &adam, step)?;
        }
    }

    let users = store.get("mf.u")?.clone();
    let items = store.get("mf.v")?.clone();
    let mean_user = (0..cfg.d)
        .map(|j| (0..n).map(|i| users.at(i, j)).sum::<f64>() / n as f64)
        .collect();
    Ok(MfRanker {
        rows: train.iter().enumerate().map(|(i, u)| (u.user, i)).collect(),
        users,
        items,
        mean_user,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{CheckIn, Region};

    fn behavior(user: u64, out: &[usize]) -> TravelBehavior {
        TravelBehavior {
            user,
            home_seq: Vec::new(),
            out_set: out
                .iter()
                .enumerate()
                .map(|(t, &poi)| CheckIn {
                    user,
                    time: t as i64,
                    poi,
                })
                .collect(),
            home_region: Region::Home,
            out_region: Region::Out,
        }
    }

    #[test]
    fn frequency_ranking_orders_by_count_then_id() {
        let train = vec![
            behavior(0, &[0, 0, 0, 0, 0, 2, 2]),
            behavior(1, &[2, 3]),
            behavior(2, &[0, 0, 0]), // poi 0: 8, poi 2: 3, poi 3: 1, poi 1: 0
        ];
        let top = TopRanker::build(&train, 5);
        assert_eq!(top.ranking(), &[0, 2, 3, 1, 4]);
    }

    #[test]
    fn frequency_ranking_is_a_catalog_permutation() {
        let train = vec![behavior(0, &[4, 4, 1])];
        let top = TopRanker::build(&train, 6);
        let mut sorted = top.ranking().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn single_user_learns_to_rank_the_positive_first() {
        let train = vec![behavior(7, &[0, 0, 0])];
        let mf = train_bpr_mf(
            &train,
            2,
            &MfConfig {
                d: 4,
                epochs: 40,
                ..MfConfig::default()
            },
        )
        .unwrap();
        assert_eq!(
            mf.ranking_for(7)[0],
            0,
            "visited POI must outrank the other"
        );
    }

    #[test]
    fn training_is_deterministic_under_a_seed() {
        let train = vec![behavior(0, &[1, 2]), behavior(1, &[0, 3, 0])];
        let cfg = MfConfig {
            d: 4,
            epochs: 3,
            seed: 5,
            ..MfConfig::default()
        };
        let a = train_bpr_mf(&train, 5, &cfg).unwrap();
        let b = train_bpr_mf(&train, 5, &cfg).unwrap();
        assert_eq!(a.users.data(), b.users.data());
        assert_eq!(a.items.data(), b.items.data());
    }

    #[test]
    fn unseen_users_get_the_mean_embedding_ranking() {
        let train = vec![behavior(0, &[1, 2]), behavior(1, &[0, 3, 0])];
        let mf = train_bpr_mf(&train, 5, &MfConfig::default()).unwrap();
        let cold = mf.scores_for(999);
        let d = mf.mean_user.len();
        for (i, &score) in cold.iter().enumerate() {
            let want: f64 = (0..d).map(|j| mf.items.at(i, j) * mf.mean_user[j]).sum();
            assert_eq!(score, want);
        }
        assert_eq!(mf.ranking_for(999), mf.ranking_for(998));
    }
}
