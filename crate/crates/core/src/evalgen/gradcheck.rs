//! Finite-difference validation of the whole training computation on a
//! hand-sized instance: every loss component and the weighted joint
//! loss, checked against central differences for every parameter entry.

use crate::dataio::{
    build_geo_graph, build_session_graph, to_bag_of_words, BagOfWords, CheckIn, Poi, Region,
    SessionGraph,
};
use crate::intention;
use crate::numkit::{grad_check, Graph, NodeId, NumError, ParamStore};
use crate::outoftown::{self, BprTriple};
use crate::pipeline::{
    fuse_user, home_and_intention, joint_loss, poi_table, register_all, squared_distance,
    transfer_map, ModelDims, TrainConfig, TransferWeights,
};

use super::EvalError;

/// Worst relative error observed for one loss.
#[derive(Clone, Debug)]
pub struct LossCheck {
    pub loss: &'static str,
    pub max_rel_err: f64,
    /// Parameter holding the worst entry.
    pub worst_param: String,
}

#[derive(Clone, Debug)]
pub struct GradcheckSummary {
    pub checks: Vec<LossCheck>,
    pub eps: f64,
}

impl GradcheckSummary {
    pub fn max_rel_err(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_rel_err() <= tol
    }

    pub fn render(&self, tol: f64) -> String {
        let mut out = String::from("loss\tmax_rel_err\tworst_param\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{}\t{:.3e}\t{}\n",
                c.loss, c.max_rel_err, c.worst_param
            ));
        }
        out.push_str(&format!(
            "max {:.3e} vs tolerance {tol:.0e}: {}\n",
            self.max_rel_err(),
            if self.within(tol) { "ok" } else { "EXCEEDED" }
        ));
        out
    }
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

/// Check analytic gradients of all three component losses and the joint
/// loss against central finite differences on a 3-user instance with
/// d = 4, K = 3, five home POIs, and six out-of-town POIs. All noise
/// (posterior samples, negative triples) is fixed up front so every
/// rebuild of the loss is bitwise identical.
pub fn run_tiny_gradcheck(eps: f64) -> Result<GradcheckSummary, EvalError> {
    let cfg = TrainConfig {
        d: 4,
        k_topics: 3,
        ntm_hidden: 5,
        seed: 7,
        ..TrainConfig::default()
    };
    let dims = ModelDims {
        d1: 5,
        d2: 6,
        n_users: 3,
    };

    let out_pois: Vec<Poi> = (0..dims.d2)
        .map(|i| Poi {
            id: i,
            raw: 100 + i as u64,
            region: Region::Out,
            lat: 10.0 + 0.05 * i as f64,
            lon: 100.0 + 0.03 * (i % 3) as f64,
        })
        .collect();
    let geo = build_geo_graph(&out_pois);
    let a_geo = geo.normalized().clone();

    let homes: [&[usize]; 3] = [&[0, 1, 2, 1, 0], &[2, 3, 4, 3], &[0, 2, 4, 2, 0]];
    let outs: [&[usize]; 3] = [&[0, 1, 2], &[3, 4, 5], &[0, 3, 5]];
    let sessions: Vec<SessionGraph> = homes
        .iter()
        .map(|h| build_session_graph(&seq(h)))
        .collect::<Result<_, _>>()?;
    let bows: Vec<BagOfWords> = outs
        .iter()
        .map(|o| to_bag_of_words(&seq(o), dims.d2))
        .collect::<Result<_, _>>()?;
    let noise: [[f64; 3]; 3] = [[0.3, -0.7, 0.2], [-0.1, 0.4, 0.8], [0.5, -0.2, -0.6]];
    let triples: [Vec<BprTriple>; 3] = [
        vec![
            BprTriple {
                user: 0,
                pos: 0,
                neg: 3,
            },
            BprTriple {
                user: 0,
                pos: 1,
                neg: 4,
            },
            BprTriple {
                user: 0,
                pos: 2,
                neg: 5,
            },
        ],
        vec![
            BprTriple {
                user: 1,
                pos: 3,
                neg: 0,
            },
            BprTriple {
                user: 1,
                pos: 4,
                neg: 2,
            },
        ],
        vec![
            BprTriple {
                user: 2,
                pos: 0,
                neg: 1,
            },
            BprTriple {
                user: 2,
                pos: 5,
                neg: 4,
            },
        ],
    ];

    let mut store = ParamStore::new(cfg.seed);
    register_all(&mut store, &cfg, &dims);
    // push every bias off zero so no ReLU sits on its kink, where
    // central differences straddle the non-differentiable point
    let biases: Vec<String> = store
        .names()
        .filter(|n| n.contains(".b"))
        .map(str::to_string)
        .collect();
    for name in &biases {
        store.get_mut(name)?.data_mut().fill(0.3);
    }

    let build = |g: &mut Graph, store: &ParamStore, which: usize| -> Result<NodeId, NumError> {
        let table = poi_table(g, store, &cfg, &a_geo)?;
        let icfg = intention::IntentionConfig {
            d: cfg.d,
            k: cfg.k_topics,
            ntm_hidden: cfg.ntm_hidden,
            share_e_vo: cfg.share_e_vo,
        };
        let phi = intention::intention_poi_distribution(g, store, &icfg)?;
        let transfer = TransferWeights::load(g, store)?;
        let u_table = g.param(store, "outoftown.u_o")?;

        let mut ntm_terms = Vec::new();
        let mut rank_terms = Vec::new();
        let mut transfer_terms = Vec::new();
        for ui in 0..3 {
            let fwd = home_and_intention(g, store, &cfg, &sessions[ui])?;
            ntm_terms.push(intention::ntm_user_loss(
                g, store, &bows[ui], phi, &noise[ui],
            )?);
            let u_hat = transfer_map(g, fwd.u_h, &transfer)?;
            let u_row = g.gather(u_table, &[ui])?;
            transfer_terms.push(squared_distance(g, u_hat, u_row)?);
            let fused = fuse_user(g, store, u_row, fwd.u_int)?;
            let (pos, neg) = outoftown::triple_scores(g, table, fused, &triples[ui])?;
            rank_terms.push(outoftown::bpr_loss(g, pos, neg)?);
        }
        let l_n = g.sum_scalars(&ntm_terms)?;
        let l_p = g.sum_scalars(&rank_terms)?;
        let l_t = g.sum_scalars(&transfer_terms)?;
        let joint = joint_loss(g, l_n, l_p, l_t, &cfg)?;
        Ok([l_n, l_p, l_t, joint][which])
    };

    let mut checks = Vec::with_capacity(4);
    for (which, loss) in ["topic", "ranking", "transfer", "joint"]
        .into_iter()
        .enumerate()
    {
        let result = grad_check(|g, s| build(g, s, which), &mut store, eps)?;
        let worst = result
            .reports
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .map(|r| r.name.clone())
            .unwrap_or_default();
        checks.push(LossCheck {
            loss,
            max_rel_err: result.max_rel_err(),
            worst_param: worst,
        });
    }
    Ok(GradcheckSummary { checks, eps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_four_losses_pass_at_standard_tolerance() {
        let summary = run_tiny_gradcheck(1e-5).unwrap();
        assert_eq!(summary.checks.len(), 4);
        let names: Vec<&str> = summary.checks.iter().map(|c| c.loss).collect();
        assert_eq!(names, ["topic", "ranking", "transfer", "joint"]);
        for check in &summary.checks {
            assert!(
                check.max_rel_err < 1e-4,
                "{} gradient error {:.3e} (worst at {})",
                check.loss,
                check.max_rel_err,
                check.worst_param
            );
        }
        let rendered = summary.render(1e-4);
        assert!(rendered.contains("joint"));
        assert!(rendered.trim_end().ends_with("ok"));
    }
}
