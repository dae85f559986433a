//! Out-of-town preference modeling: a geographic graph convolution
//! spreads POI embeddings along distance-decay edges, the user's
//! collaborative embedding is fused with their intention vector, and
//! ranked pairs of visited/unvisited POIs feed a pairwise logistic loss.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataio::CheckIn;
use crate::numkit::{Graph, NodeId, NumError, ParamStore};

#[derive(Debug, Error)]
pub enum TripleError {
    #[error("user visited all {d2} catalog POIs; no negatives exist")]
    NoNegatives { d2: usize },
    #[error("user has no out-of-town check-ins to rank")]
    NoPositives,
}

/// One pairwise ranking constraint: `user` (dense training row) should
/// score `pos` above `neg`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Register the out-of-town tables and weights. `n_users` is the number
/// of training users (rows of the user table).
pub fn register(store: &mut ParamStore, d: usize, d2: usize, n_users: usize) {
    let bound = 1.0 / (d as f64).sqrt();
    store.init_uniform("outoftown.v_o", &[d2, d], bound);
    store.init_uniform("outoftown.u_o", &[n_users, d], bound);
    store.init_uniform("outoftown.conv.w_c", &[d, d], bound);
    store.init_zeros("outoftown.conv.b_c", &[d]);
    store.init_uniform("outoftown.fuse.w_f", &[d, 2 * d], bound);
    store.init_zeros("outoftown.fuse.b_f", &[d]);
}

pub struct GeoConvWeights {
    pub w_c: NodeId,
    pub b_c: NodeId,
}

impl GeoConvWeights {
    pub fn load(g: &mut Graph, store: &ParamStore) -> Result<Self, NumError> {
        Ok(GeoConvWeights {
            w_c: g.param(store, "outoftown.conv.w_c")?,
            b_c: g.param(store, "outoftown.conv.b_c")?,
        })
    }
}

pub struct FuseWeights {
    pub w_f: NodeId,
    pub b_f: NodeId,
}

impl FuseWeights {
    pub fn load(g: &mut Graph, store: &ParamStore) -> Result<Self, NumError> {
        Ok(FuseWeights {
            w_f: g.param(store, "outoftown.fuse.w_f")?,
            b_f: g.param(store, "outoftown.fuse.b_f")?,
        })
    }
}

/// Spread POI embeddings along the geographic graph:
/// `ReLU(A V W_c + b_c)`, shape-preserving on `[D2, d]`.
pub fn geo_conv(
    g: &mut Graph,
    a_geo: NodeId,
    v_o: NodeId,
    w: &GeoConvWeights,
) -> Result<NodeId, NumError> {
    let spread = g.matmul(a_geo, v_o)?;
    let mixed = g.matmul(spread, w.w_c)?;
    let shifted = g.add_row(mixed, w.b_c)?;
    Ok(g.relu(shifted))
}

/// Combine the user's collaborative embedding with their intention
/// vector: `ReLU(W_f [u_o ; u_int] + b_f)`, inputs and output `[1, d]`.
pub fn fuse(
    g: &mut Graph,
    u_o: NodeId,
    u_int: NodeId,
    w: &FuseWeights,
) -> Result<NodeId, NumError> {
    let cat = g.concat_cols(u_o, u_int)?;
    let mixed = g.matmul_nt(cat, w.w_f)?;
    let shifted = g.add_row(mixed, w.b_f)?;
    Ok(g.relu(shifted))
}

/// Inner-product affinity between one user row and one POI row.
pub fn score(g: &mut Graph, u: NodeId, v: NodeId) -> Result<NodeId, NumError> {
    g.dot(u, v)
}

/// Affinity of one user row `[1, d]` against every row of a POI table
/// `[D2, d]`, returned as `[1, D2]`.
pub fn score_catalog(g: &mut Graph, u: NodeId, v_table: NodeId) -> Result<NodeId, NumError> {
    let scores = g.matmul_nt(v_table, u)?; // [D2, 1]
    g.transpose(scores)
}

/// Pair every distinct visited POI with `n_neg` uniformly drawn
/// unvisited ones (rejection sampling). Distinct positives are taken in
/// ascending id order; `positive_cap` truncates that list.
pub fn sample_triples(
    user_row: usize,
    out_set: &[CheckIn],
    d2: usize,
    n_neg: usize,
    positive_cap: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BprTriple>, TripleError> {
    let mut positives: Vec<usize> = out_set.iter().map(|c| c.poi).collect();
    positives.sort_unstable();
    positives.dedup();
    if positives.is_empty() {
        return Err(TripleError::NoPositives);
    }
    if positives.len() >= d2 {
        return Err(TripleError::NoNegatives { d2 });
    }
    let visited: Vec<bool> = {
        let mut v = vec![false; d2];
        for &p in &positives {
            v[p] = true;
        }
        v
    };
    let used = match positive_cap {
        Some(cap) => &positives[..cap.min(positives.len())],
        None => &positives[..],
    };
    let mut triples = Vec::with_capacity(used.len() * n_neg);
    for &pos in used {
        for _ in 0..n_neg {
            let neg = loop {
                let cand = rng.gen_range(0..d2);
                if !visited[cand] {
                    break cand;
                }
            };
            triples.push(BprTriple {
                user: user_row,
                pos,
                neg,
            });
        }
    }
    Ok(triples)
}

/// Score the positive and negative POIs of each triple against one
/// user's fused embedding `[1, d]`; returns `([T,1], [T,1])` columns.
pub fn triple_scores(
    g: &mut Graph,
    v_table: NodeId,
    u_fused: NodeId,
    triples: &[BprTriple],
) -> Result<(NodeId, NodeId), NumError> {
    let pos_ids: Vec<usize> = triples.iter().map(|t| t.pos).collect();
    let neg_ids: Vec<usize> = triples.iter().map(|t| t.neg).collect();
    let pos_rows = g.gather(v_table, &pos_ids)?;
    let neg_rows = g.gather(v_table, &neg_ids)?;
    let pos = g.matmul_nt(pos_rows, u_fused)?;
    let neg = g.matmul_nt(neg_rows, u_fused)?;
    Ok((pos, neg))
}

/// Pairwise logistic ranking loss `-sum log sigmoid(pos - neg)` over
/// matching score columns, computed as `sum softplus(neg - pos)` so
/// extreme margins stay finite.
pub fn bpr_loss(g: &mut Graph, pos: NodeId, neg: NodeId) -> Result<NodeId, NumError> {
    let margin = g.sub(pos, neg)?;
    let flipped = g.scale(margin, -1.0);
    let per_triple = g.softplus(flipped);
    Ok(g.sum(per_triple))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{build_geo_graph, Poi, Region};
    use crate::numkit::{grad_check, Array};
    use rand::SeedableRng;

    fn set(store: &mut ParamStore, name: &str, shape: &[usize], data: Vec<f64>) {
        store.insert(name, Array::new(shape.to_vec(), data).unwrap());
    }

    fn eye(n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        m
    }

    fn checkins(pois: &[usize]) -> Vec<CheckIn> {
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
    fn identity_graph_and_weights_reduce_to_relu() {
        let (d2, d) = (3, 2);
        let mut store = ParamStore::new(0);
        register(&mut store, d, d2, 1);
        set(&mut store, "outoftown.conv.w_c", &[d, d], eye(d));
        let v_data = vec![0.5, -1.0, 2.0, -0.25, 0.0, 1.5];
        set(&mut store, "outoftown.v_o", &[d2, d], v_data.clone());

        let mut g = Graph::new();
        let a = g.constant(Array::matrix(d2, d2, eye(d2)).unwrap());
        let v = g.param(&store, "outoftown.v_o").unwrap();
        let w = GeoConvWeights::load(&mut g, &store).unwrap();
        let out = geo_conv(&mut g, a, v, &w).unwrap();
        let want: Vec<f64> = v_data.iter().map(|&x| x.max(0.0)).collect();
        assert_eq!(g.value(out).data(), &want[..]);
    }

    #[test]
    fn large_negative_bias_zeroes_the_convolution() {
        let (d2, d) = (4, 3);
        let mut store = ParamStore::new(1);
        register(&mut store, d, d2, 1);
        set(&mut store, "outoftown.conv.b_c", &[d], vec![-100.0; d]);
        let mut g = Graph::new();
        let a = g.constant(Array::matrix(d2, d2, eye(d2)).unwrap());
        let v = g.param(&store, "outoftown.v_o").unwrap();
        let w = GeoConvWeights::load(&mut g, &store).unwrap();
        let out = geo_conv(&mut g, a, v, &w).unwrap();
        assert!(g.value(out).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn three_poi_convolution_matches_hand_product() {
        let pois: Vec<Poi> = [(10.0, 20.0), (10.05, 20.0), (10.0, 20.08)]
            .iter()
            .enumerate()
            .map(|(i, &(lat, lon))| Poi {
                id: i,
                raw: i as u64,
                region: Region::Out,
                lat,
                lon,
            })
            .collect();
        let geo = build_geo_graph(&pois);
        let a = geo.normalized().clone();

        let (d2, d) = (3, 2);
        let mut store = ParamStore::new(2);
        register(&mut store, d, d2, 1);
        let v = store.get("outoftown.v_o").unwrap().clone();
        let wc = store.get("outoftown.conv.w_c").unwrap().clone();
        let bc = store.get("outoftown.conv.b_c").unwrap().clone();

        let mut g = Graph::new();
        let an = g.constant(a.clone());
        let vn = g.param(&store, "outoftown.v_o").unwrap();
        let w = GeoConvWeights::load(&mut g, &store).unwrap();
        let out = geo_conv(&mut g, an, vn, &w).unwrap();

        // hand computation with scalar loops
        for i in 0..d2 {
            for j in 0..d {
                let mut acc = 0.0;
                for t in 0..d {
                    let mut av = 0.0;
                    for s in 0..d2 {
                        av += a.at(i, s) * v.at(s, t);
                    }
                    acc += av * wc.at(t, j);
                }
                acc += bc.data()[j];
                let want = acc.max(0.0);
                assert!((g.value(out).at(i, j) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fuse_block_identities_select_each_input() {
        let d = 3;
        let mut store = ParamStore::new(3);
        register(&mut store, d, 4, 1);
        let u_o_data = vec![0.5, -0.8, 1.2];
        let u_int_data = vec![-0.3, 0.9, -2.0];

        let mut left = vec![0.0; d * 2 * d];
        let mut right = vec![0.0; d * 2 * d];
        for i in 0..d {
            left[i * 2 * d + i] = 1.0;
            right[i * 2 * d + d + i] = 1.0;
        }
        for (w_f, src) in [(left, &u_o_data), (right, &u_int_data)] {
            set(&mut store, "outoftown.fuse.w_f", &[d, 2 * d], w_f);
            let mut g = Graph::new();
            let u_o = g.constant(Array::matrix(1, d, u_o_data.clone()).unwrap());
            let u_int = g.constant(Array::matrix(1, d, u_int_data.clone()).unwrap());
            let w = FuseWeights::load(&mut g, &store).unwrap();
            let out = fuse(&mut g, u_o, u_int, &w).unwrap();
            let want: Vec<f64> = src.iter().map(|&x| x.max(0.0)).collect();
            assert_eq!(g.value(out).data(), &want[..]);
        }
    }

    #[test]
    fn fused_output_is_nonnegative() {
        let d = 5;
        for seed in 0..10 {
            let mut store = ParamStore::new(seed);
            register(&mut store, d, 4, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let mut g = Graph::new();
            let u_o = g.constant(
                Array::matrix(1, d, (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap(),
            );
            let u_int = g.constant(
                Array::matrix(1, d, (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap(),
            );
            let w = FuseWeights::load(&mut g, &store).unwrap();
            let out = fuse(&mut g, u_o, u_int, &w).unwrap();
            assert!(g.value(out).data().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn fusing_reacts_to_the_intention_input() {
        let d = 4;
        let mut store = ParamStore::new(4);
        register(&mut store, d, 4, 1);
        let run = |u_int_data: Vec<f64>| {
            let mut g = Graph::new();
            let u_o = g.constant(Array::matrix(1, d, vec![0.4, 0.6, -0.2, 1.0]).unwrap());
            let u_int = g.constant(Array::matrix(1, d, u_int_data).unwrap());
            let w = FuseWeights::load(&mut g, &store).unwrap();
            let out = fuse(&mut g, u_o, u_int, &w).unwrap();
            g.value(out).clone()
        };
        let base = run(vec![0.5, 0.5, 0.5, 0.5]);
        let poked = run(vec![0.5, 0.5, 0.5, 1.5]);
        assert!(
            base.max_abs_diff(&poked) > 1e-9,
            "intention input must reach the fused embedding"
        );
    }

    #[test]
    fn score_cases() {
        let mut g = Graph::new();
        let a = g.constant(Array::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let b = g.constant(Array::matrix(1, 2, vec![0.0, 3.0]).unwrap());
        let orth = score(&mut g, a, b).unwrap();
        assert_eq!(g.value(orth).item(), 0.0);

        let ones = g.constant(Array::matrix(1, 4, vec![1.0; 4]).unwrap());
        let self_dot = score(&mut g, ones, ones).unwrap();
        assert_eq!(g.value(self_dot).item(), 4.0);

        let x = g.constant(Array::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        let y = g.constant(Array::matrix(1, 3, vec![1.5, 0.25, -0.5]).unwrap());
        let xy = score(&mut g, x, y).unwrap();
        let yx = score(&mut g, y, x).unwrap();
        assert_eq!(g.value(xy).item(), g.value(yx).item());
    }

    #[test]
    fn catalog_scores_match_per_row_dots() {
        let (d2, d) = (4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let table: Vec<f64> = (0..d2 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let user: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let v = g.constant(Array::matrix(d2, d, table.clone()).unwrap());
        let u = g.constant(Array::matrix(1, d, user.clone()).unwrap());
        let all = score_catalog(&mut g, u, v).unwrap();
        for j in 0..d2 {
            let want: f64 = (0..d).map(|t| table[j * d + t] * user[t]).sum();
            assert!((g.value(all).data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn two_poi_catalog_forces_the_single_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let triples = sample_triples(7, &checkins(&[0]), 2, 1, None, &mut rng).unwrap();
        assert_eq!(
            triples,
            vec![BprTriple {
                user: 7,
                pos: 0,
                neg: 1
            }]
        );
    }

    #[test]
    fn triple_count_is_positives_times_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let triples =
            sample_triples(0, &checkins(&[0, 3, 5, 3, 0]), 10, 4, None, &mut rng).unwrap();
        assert_eq!(triples.len(), 3 * 4); // 3 distinct positives
    }

    #[test]
    fn positive_cap_truncates_the_positive_list() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let triples =
            sample_triples(0, &checkins(&[4, 1, 2, 3]), 10, 2, Some(2), &mut rng).unwrap();
        assert_eq!(triples.len(), 2 * 2);
        assert!(triples.iter().all(|t| t.pos == 1 || t.pos == 2));
    }

    #[test]
    fn negatives_never_collide_with_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let positives = [1usize, 4, 7, 8];
        let out = checkins(&positives);
        let mut seen = 0;
        while seen < 10_000 {
            let triples = sample_triples(0, &out, 10, 5, None, &mut rng).unwrap();
            for t in &triples {
                assert!(!positives.contains(&t.neg), "negative {} is visited", t.neg);
                assert!(positives.contains(&t.pos));
            }
            seen += triples.len();
        }
    }

    #[test]
    fn sampling_replays_bitwise_under_a_fixed_seed() {
        let out = checkins(&[2, 5, 9, 2]);
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            sample_triples(3, &out, 12, 4, None, &mut rng).unwrap()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn full_catalog_positives_cannot_be_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = sample_triples(0, &checkins(&[0, 1, 2]), 3, 1, None, &mut rng).unwrap_err();
        assert!(matches!(err, TripleError::NoNegatives { d2: 3 }));
    }

    #[test]
    fn equal_scores_cost_ln_two_per_triple() {
        let mut g = Graph::new();
        let pos = g.constant(Array::matrix(3, 1, vec![0.7, -0.2, 1.4]).unwrap());
        let neg = g.constant(Array::matrix(3, 1, vec![0.7, -0.2, 1.4]).unwrap());
        let loss = bpr_loss(&mut g, pos, neg).unwrap();
        assert!((g.value(loss).item() - 3.0 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn wide_margin_saturates_toward_zero_loss() {
        let mut g = Graph::new();
        let pos = g.constant(Array::matrix(1, 1, vec![10.0]).unwrap());
        let neg = g.constant(Array::matrix(1, 1, vec![0.0]).unwrap());
        let loss = bpr_loss(&mut g, pos, neg).unwrap();
        let v = g.value(loss).item();
        assert!(v > 0.0 && v < 1e-4, "got {v}");
    }

    #[test]
    fn loss_decreases_monotonically_in_the_margin() {
        let mut prev = f64::INFINITY;
        let mut m = -3.0;
        while m <= 3.0 {
            let mut g = Graph::new();
            let pos = g.constant(Array::matrix(1, 1, vec![m]).unwrap());
            let neg = g.constant(Array::matrix(1, 1, vec![0.0]).unwrap());
            let loss = bpr_loss(&mut g, pos, neg).unwrap();
            let v = g.value(loss).item();
            assert!(v < prev, "not decreasing at margin {m}");
            prev = v;
            m += 0.25;
        }
    }

    #[test]
    fn extreme_margins_stay_finite_and_positive() {
        for m in [-50.0, 50.0] {
            let mut g = Graph::new();
            let pos = g.constant(Array::matrix(1, 1, vec![m]).unwrap());
            let neg = g.constant(Array::matrix(1, 1, vec![0.0]).unwrap());
            let loss = bpr_loss(&mut g, pos, neg).unwrap();
            let v = g.value(loss).item();
            assert!(v.is_finite() && v > 0.0, "margin {m} gave {v}");
        }
    }

    #[test]
    fn ranking_pipeline_gradients_match_finite_differences() {
        // geo_conv -> fuse -> triple scoring -> pairwise loss, all
        // trainable tensors checked at once
        let (d2, d) = (4, 3);
        let mut store = ParamStore::new(11);
        register(&mut store, d, d2, 2);
        // bias nudges keep every ReLU comfortably away from its kink
        set(&mut store, "outoftown.conv.b_c", &[d], vec![0.3; d]);
        set(&mut store, "outoftown.fuse.b_f", &[d], vec![0.3; d]);
        let pois: Vec<Poi> = (0..d2)
            .map(|i| Poi {
                id: i,
                raw: i as u64,
                region: Region::Out,
                lat: 10.0 + 0.02 * i as f64,
                lon: 20.0 - 0.03 * i as f64,
            })
            .collect();
        let a = build_geo_graph(&pois).normalized().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let triples = sample_triples(1, &checkins(&[0, 2]), d2, 2, None, &mut rng).unwrap();

        let res = grad_check(
            |g, s| {
                let an = g.constant(a.clone());
                let v = g.param(s, "outoftown.v_o")?;
                let cw = GeoConvWeights::load(g, s)?;
                let v_prime = geo_conv(g, an, v, &cw)?;

                let users = g.param(s, "outoftown.u_o")?;
                let u_o = g.gather(users, &[1])?;
                // stand-in intention vector; the real one comes from
                // the intention module
                let u_int = g.constant(Array::matrix(1, d, vec![0.2, -0.4, 0.6]).unwrap());
                let fw = FuseWeights::load(g, s)?;
                let u_fused = fuse(g, u_o, u_int, &fw)?;

                let (pos, neg) = triple_scores(g, v_prime, u_fused, &triples)?;
                bpr_loss(g, pos, neg)
            },
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(res.within(1e-4), "max rel err {}", res.max_rel_err());
    }
}
