//! End-to-end wiring: the preference-transfer map between regions, the
//! joint training loop over all three losses, cold-start recommendation
//! from a home-town history alone, and checkpoint persistence.

mod checkpoint;
mod kv;
mod model;
mod recommend;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LossParts};
pub use kv::{parse_kv, render_kv};
pub use model::{
    cold_scores, fuse_user, home_and_intention, joint_loss, poi_table, rank_descending,
    register_all, squared_distance, transfer_map, ColdScorer, ModelDims, TransferWeights,
    UserForward,
};
pub use recommend::{recommend, RankedRecommendation};
pub use train::{train, validation_recall, EpochStats, TrainOutput};

use thiserror::Error;

use crate::dataio::DataError;
use crate::numkit::NumError;
use crate::outoftown::TripleError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sampling(#[from] TripleError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("{component} loss became non-finite during epoch {epoch}")]
    Diverged {
        component: &'static str,
        epoch: usize,
        /// Parameters as of the end of the previous epoch.
        last_good: Box<Checkpoint>,
    },
    #[error("checkpoint {section}: {msg}")]
    Malformed { section: String, msg: String },
    #[error("checkpoint version {found} unsupported (this build reads {expected})")]
    Version { found: u32, expected: u32 },
}

/// Everything the training loop needs to know, plus the ablation
/// switches. All fields can be set from a config file or CLI flags.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Hidden size shared by every embedding and weight matrix.
    pub d: usize,
    /// Number of generic travel intentions.
    pub k_topics: usize,
    /// Width of the topic model's encoder layer.
    pub ntm_hidden: usize,
    /// Gated propagation rounds in the session encoder.
    pub ggnn_steps: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lr: f64,
    pub l2: f64,
    pub epochs: usize,
    /// Users per optimizer step.
    pub batch_size: usize,
    /// Negatives sampled per positive in the ranking loss.
    pub n_neg: usize,
    /// Optional limit on ranked positives per user per epoch.
    pub positive_cap: Option<usize>,
    pub seed: u64,
    /// Drop the intention pathway: zero vector into the fusion layer and
    /// no topic loss.
    pub disable_intention: bool,
    /// Score against the raw POI table instead of the geographically
    /// convolved one.
    pub disable_geoconv: bool,
    /// Treat the collaborative embedding as a fixed regression target in
    /// the transfer loss instead of letting gradients reach it.
    pub stop_grad_transfer_target: bool,
    /// Normalize session attention scores.
    pub attn_softmax: bool,
    /// Tie the topic model's POI embeddings to the out-of-town table.
    pub share_e_vo: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 128,
            k_topics: 15,
            ntm_hidden: 256,
            ggnn_steps: 1,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lr: 0.001,
            l2: 0.0,
            epochs: 30,
            batch_size: 64,
            n_neg: 4,
            positive_cap: None,
            seed: 0,
            disable_intention: false,
            disable_geoconv: false,
            stop_grad_transfer_target: false,
            attn_softmax: false,
            share_e_vo: false,
        }
    }
}

fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [
            ("d", self.d),
            ("k_topics", self.k_topics),
            ("ntm_hidden", self.ntm_hidden),
            ("ggnn_steps", self.ggnn_steps),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("n_neg", self.n_neg),
        ] {
            if v == 0 {
                return Err(PipelineError::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(PipelineError::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(PipelineError::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// Apply one `key=value` setting. Returns false when the key is not a
    /// training field, leaving the config untouched.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, PipelineError> {
        match key {
            "d" => self.d = parse_field(key, value)?,
            "k_topics" => self.k_topics = parse_field(key, value)?,
            "ntm_hidden" => self.ntm_hidden = parse_field(key, value)?,
            "ggnn_steps" => self.ggnn_steps = parse_field(key, value)?,
            "lambda1" => self.lambda1 = parse_field(key, value)?,
            "lambda2" => self.lambda2 = parse_field(key, value)?,
            "lambda3" => self.lambda3 = parse_field(key, value)?,
            "lr" => self.lr = parse_field(key, value)?,
            "l2" => self.l2 = parse_field(key, value)?,
            "epochs" => self.epochs = parse_field(key, value)?,
            "batch_size" => self.batch_size = parse_field(key, value)?,
            "n_neg" => self.n_neg = parse_field(key, value)?,
            "positive_cap" => {
                self.positive_cap = match value {
                    "none" => None,
                    v => Some(parse_field(key, v)?),
                }
            }
            "seed" => self.seed = parse_field(key, value)?,
            "disable_intention" => self.disable_intention = parse_field(key, value)?,
            "disable_geoconv" => self.disable_geoconv = parse_field(key, value)?,
            "stop_grad_transfer_target" => {
                self.stop_grad_transfer_target = parse_field(key, value)?
            }
            "attn_softmax" => self.attn_softmax = parse_field(key, value)?,
            "share_e_vo" => self.share_e_vo = parse_field(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// All fields as canonical `key=value` pairs.
    pub fn to_kv(&self) -> std::collections::BTreeMap<String, String> {
        let mut kv = std::collections::BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("d", self.d.to_string());
        put("k_topics", self.k_topics.to_string());
        put("ntm_hidden", self.ntm_hidden.to_string());
        put("ggnn_steps", self.ggnn_steps.to_string());
        put("lambda1", self.lambda1.to_string());
        put("lambda2", self.lambda2.to_string());
        put("lambda3", self.lambda3.to_string());
        put("lr", self.lr.to_string());
        put("l2", self.l2.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("n_neg", self.n_neg.to_string());
        put(
            "positive_cap",
            self.positive_cap
                .map_or_else(|| "none".to_string(), |c| c.to_string()),
        );
        put("seed", self.seed.to_string());
        put("disable_intention", self.disable_intention.to_string());
        put("disable_geoconv", self.disable_geoconv.to_string());
        put(
            "stop_grad_transfer_target",
            self.stop_grad_transfer_target.to_string(),
        );
        put("attn_softmax", self.attn_softmax.to_string());
        put("share_e_vo", self.share_e_vo.to_string());
        kv
    }
}
