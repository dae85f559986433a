//! The experiment runner: train each requested model variant on the same
//! split, score every held-out test user through the cold-start path,
//! and tabulate Recall@k and MAP — optionally averaged over repeated
//! runs with fresh split and initialization seeds.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataio::{build_session_graph, load_dataset, Dataset};
use crate::pipeline::{rank_descending, train, ColdScorer, TrainConfig};

use super::baselines::{train_bpr_mf, MfConfig, TopRanker};
use super::metrics::{average_precision, recall_at_k};
use super::EvalError;

/// A model variant the runner knows how to train and score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelSpec {
    /// The full model: intention module and geographical convolution on.
    Full,
    /// Full model minus the intention module.
    AblateIntention,
    /// Full model minus the geographical convolution.
    AblateGeoconv,
    /// Both ablations at once.
    AblateBoth,
    /// Visit-count popularity ranking.
    Top,
    /// Pairwise-ranking matrix factorization.
    BprMf,
}

impl ModelSpec {
    pub const ALL: [ModelSpec; 6] = [
        ModelSpec::Full,
        ModelSpec::AblateIntention,
        ModelSpec::AblateGeoconv,
        ModelSpec::AblateBoth,
        ModelSpec::Top,
        ModelSpec::BprMf,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelSpec::Full => "full",
            ModelSpec::AblateIntention => "ablate-intention",
            ModelSpec::AblateGeoconv => "ablate-geoconv",
            ModelSpec::AblateBoth => "ablate-both",
            ModelSpec::Top => "top",
            ModelSpec::BprMf => "bpr-mf",
        }
    }

    pub fn parse(s: &str) -> Option<ModelSpec> {
        ModelSpec::ALL.into_iter().find(|m| m.label() == s)
    }

    /// `(disable_intention, disable_geoconv)` for trained variants,
    /// `None` for the baselines.
    fn ablation_flags(self) -> Option<(bool, bool)> {
        match self {
            ModelSpec::Full => Some((false, false)),
            ModelSpec::AblateIntention => Some((true, false)),
            ModelSpec::AblateGeoconv => Some((false, true)),
            ModelSpec::AblateBoth => Some((true, true)),
            ModelSpec::Top | ModelSpec::BprMf => None,
        }
    }
}

/// One model's test-set metrics: `recall[i]` pairs with `ks[i]` of the
/// options that produced it.
#[derive(Clone, Debug)]
pub struct ModelScores {
    pub name: &'static str,
    pub recall: Vec<f64>,
    pub map: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOptions {
    /// Recall cutoffs, one column per entry.
    pub ks: Vec<usize>,
    /// How many independent runs to average; each run re-splits the
    /// corpus and re-initializes every model with a shifted seed.
    pub repeats: usize,
    /// Rank horizon for MAP; `None` scores the whole catalog.
    pub map_cutoff: Option<usize>,
    /// Settings for the matrix-factorization baseline.
    pub mf: MfConfig,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            ks: vec![10, 20, 30],
            repeats: 1,
            map_cutoff: None,
            mf: MfConfig::default(),
        }
    }
}

impl ExperimentOptions {
    fn validate(&self) -> Result<(), EvalError> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(EvalError::Config(
                "recall cutoffs must be positive and non-empty".into(),
            ));
        }
        if self.repeats == 0 {
            return Err(EvalError::Config("repeats must be at least 1".into()));
        }
        Ok(())
    }
}

/// Rank the whole catalog for every test user under one model.
fn test_rankings(
    ds: &Dataset,
    model: ModelSpec,
    cfg: &TrainConfig,
    opts: &ExperimentOptions,
) -> Result<Vec<Vec<usize>>, EvalError> {
    let d2 = ds.catalog.out_vocab();
    match model.ablation_flags() {
        None => match model {
            ModelSpec::Top => {
                let top = TopRanker::build(&ds.train, d2);
                Ok(ds.test.iter().map(|_| top.ranking().to_vec()).collect())
            }
            ModelSpec::BprMf => {
                let mf = train_bpr_mf(&ds.train, d2, &opts.mf)?;
                Ok(ds.test.iter().map(|u| mf.ranking_for(u.user)).collect())
            }
            _ => unreachable!("only baselines lack ablation flags"),
        },
        Some((disable_intention, disable_geoconv)) => {
            let cfg = TrainConfig {
                disable_intention,
                disable_geoconv,
                ..cfg.clone()
            };
            let ckpt = train(ds, &cfg, |_| {})?.checkpoint;
            let store = ckpt.to_store();
            let geo = ckpt.geo_graph();
            let mut scorer = ColdScorer::new(&store, &ckpt.cfg, geo.normalized())?;
            ds.test
                .iter()
                .map(|u| {
                    let session = build_session_graph(&u.home_seq)?;
                    Ok(rank_descending(&scorer.scores(&session)?))
                })
                .collect()
        }
    }
}

/// Train and score each model on the given split. Every model sees the
/// same train users and is measured on the same test users.
pub fn evaluate_models(
    ds: &Dataset,
    models: &[ModelSpec],
    cfg: &TrainConfig,
    opts: &ExperimentOptions,
) -> Result<Vec<ModelScores>, EvalError> {
    opts.validate()?;
    if ds.test.is_empty() {
        return Err(EvalError::Config("split has no test users".into()));
    }
    let d2 = ds.catalog.out_vocab();
    let truths: Vec<BTreeSet<usize>> = ds
        .test
        .iter()
        .map(|u| u.out_set.iter().map(|c| c.poi).collect())
        .collect();

    let mut results = Vec::with_capacity(models.len());
    for &model in models {
        let rankings = test_rankings(ds, model, cfg, opts)?;
        let mut recall = vec![0.0; opts.ks.len()];
        let mut map = 0.0;
        for (ranked, truth) in rankings.iter().zip(&truths) {
            for (col, &k) in opts.ks.iter().enumerate() {
                recall[col] += recall_at_k(ranked, truth, k)?;
            }
            map += average_precision(ranked, truth, d2, opts.map_cutoff)?;
        }
        let n = ds.test.len() as f64;
        recall.iter_mut().for_each(|r| *r /= n);
        results.push(ModelScores {
            name: model.label(),
            recall,
            map: map / n,
        });
    }
    Ok(results)
}

/// Full comparison table, means over `opts.repeats` runs.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    /// Mean metrics per model, in request order.
    pub rows: Vec<ModelScores>,
    /// The individual runs behind the means.
    pub per_repeat: Vec<Vec<ModelScores>>,
}

impl EvalReport {
    /// Tab-separated table; per-run blocks follow when more than one
    /// repeat was averaged.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let table = |out: &mut String, rows: &[ModelScores]| {
            out.push_str("model");
            for k in &self.ks {
                write!(out, "\tRec@{k}").expect("string io");
            }
            out.push_str("\tMAP\n");
            for row in rows {
                out.push_str(row.name);
                for r in &row.recall {
                    write!(out, "\t{r:.4}").expect("string io");
                }
                writeln!(out, "\t{:.4}", row.map).expect("string io");
            }
        };
        table(&mut out, &self.rows);
        if self.per_repeat.len() > 1 {
            for (r, rows) in self.per_repeat.iter().enumerate() {
                writeln!(out, "\nrepeat {r}").expect("string io");
                table(&mut out, rows);
            }
        }
        out
    }
}

/// Load the corpus at `dir` and compare the requested models,
/// averaging over `opts.repeats` runs. Run `r` splits users with seed
/// `cfg.seed + r` and trains with the same shifted seed, so repeats
/// vary both the partition and the initialization together.
pub fn run_experiment(
    dir: &Path,
    models: &[ModelSpec],
    cfg: &TrainConfig,
    opts: &ExperimentOptions,
) -> Result<EvalReport, EvalError> {
    opts.validate()?;
    if models.is_empty() {
        return Err(EvalError::Config("no models requested".into()));
    }
    let mut per_repeat = Vec::with_capacity(opts.repeats);
    for r in 0..opts.repeats {
        let run_seed = cfg.seed + r as u64;
        let ds = load_dataset(dir, run_seed)?;
        let run_cfg = TrainConfig {
            seed: run_seed,
            ..cfg.clone()
        };
        let run_opts = ExperimentOptions {
            mf: MfConfig {
                seed: run_seed,
                ..opts.mf
            },
            ..opts.clone()
        };
        per_repeat.push(evaluate_models(&ds, models, &run_cfg, &run_opts)?);
    }

    let n = per_repeat.len() as f64;
    let rows = (0..models.len())
        .map(|m| {
            let recall = (0..opts.ks.len())
                .map(|col| per_repeat.iter().map(|run| run[m].recall[col]).sum::<f64>() / n)
                .collect();
            let map = per_repeat.iter().map(|run| run[m].map).sum::<f64>() / n;
            ModelScores {
                name: models[m].label(),
                recall,
                map,
            }
        })
        .collect();

    Ok(EvalReport {
        ks: opts.ks.clone(),
        rows,
        per_repeat,
    })
}
