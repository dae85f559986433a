//! Travel intention discovery. A neural topic model ties K latent
//! intentions to the out-of-town catalog: each intention embedding
//! induces a distribution over POIs, a Gaussian-softmax encoder infers a
//! per-user intention mixture from the bag of out-of-town visits, and
//! the variational loss scores reconstruction plus KL to the standard
//! normal prior. A small attention map then grounds a user's intention
//! mixture in their home-town preference vector for cold-start use.

use crate::dataio::BagOfWords;
use crate::numkit::{Array, Graph, NodeId, NumError, ParamStore};

/// Floor added inside the reconstruction log so zero-probability POIs
/// cannot produce -inf.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug)]
pub struct IntentionConfig {
    /// Embedding width shared with the rest of the model.
    pub d: usize,
    /// Number of latent intentions K (the latent Gaussian has the same
    /// dimension, one coordinate per intention).
    pub k: usize,
    /// Width of the bag-of-words encoder's hidden layer.
    pub ntm_hidden: usize,
    /// Reuse the recommendation POI table as the topic table E instead
    /// of keeping a separate one.
    pub share_e_vo: bool,
}

impl Default for IntentionConfig {
    fn default() -> Self {
        IntentionConfig {
            d: 128,
            k: 15,
            ntm_hidden: 256,
            share_e_vo: false,
        }
    }
}

/// Name of the POI embedding table used as E when sharing is enabled
/// (registered by the out-of-town module).
const SHARED_TABLE: &str = "outoftown.v_o";

/// Register intention parameters. `d2` is the out-of-town vocabulary
/// size. When `share_e_vo` is set the E table is not registered here;
/// the scoring module owns it.
pub fn register(store: &mut ParamStore, cfg: &IntentionConfig, d2: usize) {
    let d_bound = 1.0 / (cfg.d as f64).sqrt();
    store.init_uniform("intention.t", &[cfg.k, cfg.d], d_bound);
    if !cfg.share_e_vo {
        store.init_uniform("intention.e", &[d2, cfg.d], d_bound);
    }
    let enc_bound = 1.0 / (d2 as f64).sqrt();
    store.init_uniform("intention.enc.w", &[cfg.ntm_hidden, d2], enc_bound);
    store.init_zeros("intention.enc.b", &[cfg.ntm_hidden]);
    let lat_bound = 1.0 / (cfg.ntm_hidden as f64).sqrt();
    store.init_uniform("intention.mu.w", &[cfg.k, cfg.ntm_hidden], lat_bound);
    store.init_zeros("intention.mu.b", &[cfg.k]);
    store.init_uniform("intention.sigma.w", &[cfg.k, cfg.ntm_hidden], lat_bound);
    store.init_zeros("intention.sigma.b", &[cfg.k]);
    let k_bound = 1.0 / (cfg.k as f64).sqrt();
    store.init_uniform("intention.theta.w", &[cfg.k, cfg.k], k_bound);
    store.init_zeros("intention.theta.b", &[cfg.k]);
    store.init_uniform("intention.attn.w_t", &[cfg.d, cfg.d], d_bound);
}

/// Variational posterior parameters for one user, as graph nodes.
pub struct PosteriorParams {
    pub mu: NodeId,
    pub log_var: NodeId,
}

/// Distribution over out-of-town POIs per intention: row i is
/// `softmax(E t_i)`, shape `[K, D2]`.
pub fn intention_poi_distribution(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &IntentionConfig,
) -> Result<NodeId, NumError> {
    let table = if cfg.share_e_vo {
        SHARED_TABLE
    } else {
        "intention.e"
    };
    let e = g.param(store, table)?;
    let t = g.param(store, "intention.t")?;
    let logits = g.matmul_nt(t, e)?; // [K, D2]
    Ok(g.softmax_rows(logits))
}

/// Infer the Gaussian posterior over the latent intention vector from a
/// user's bag of out-of-town visits (normalized to proportions).
pub fn encode_posterior(
    g: &mut Graph,
    store: &ParamStore,
    bow: &BagOfWords,
) -> Result<PosteriorParams, NumError> {
    let x = g.constant(Array::matrix(1, bow.len(), bow.frequencies())?);
    let enc_w = g.param(store, "intention.enc.w")?;
    let enc_b = g.param(store, "intention.enc.b")?;
    let pre = g.matmul_nt(x, enc_w)?;
    let pre = g.add_row(pre, enc_b)?;
    let h = g.relu(pre);

    let mu_w = g.param(store, "intention.mu.w")?;
    let mu_b = g.param(store, "intention.mu.b")?;
    let mu_pre = g.matmul_nt(h, mu_w)?;
    let mu = g.add_row(mu_pre, mu_b)?;

    let sg_w = g.param(store, "intention.sigma.w")?;
    let sg_b = g.param(store, "intention.sigma.b")?;
    let lv_pre = g.matmul_nt(h, sg_w)?;
    let lv_raw = g.add_row(lv_pre, sg_b)?;
    let log_var = g.clamp(lv_raw, -8.0, 8.0);

    Ok(PosteriorParams { mu, log_var })
}

/// Draw the intention mixture: `z = mu + sigma .* eps`, then
/// `softmax(F_theta(z))`, shape `[1, K]`. The noise is injected by the
/// caller so training stays replayable.
pub fn sample_theta(
    g: &mut Graph,
    store: &ParamStore,
    post: &PosteriorParams,
    eps: &[f64],
) -> Result<NodeId, NumError> {
    let half_lv = g.scale(post.log_var, 0.5);
    let sigma = g.exp(half_lv);
    let noise = g.constant(Array::matrix(1, eps.len(), eps.to_vec())?);
    let scaled = g.mul(sigma, noise)?;
    let z = g.add(post.mu, scaled)?;
    let th_w = g.param(store, "intention.theta.w")?;
    let th_b = g.param(store, "intention.theta.b")?;
    let logits = g.matmul_nt(z, th_w)?;
    let logits = g.add_row(logits, th_b)?;
    Ok(g.softmax_rows(logits))
}

/// Closed-form KL between the diagonal Gaussian posterior and the
/// standard normal prior: `0.5 * sum(sigma^2 + mu^2 - 1 - log sigma^2)`.
pub fn kl_divergence(g: &mut Graph, post: &PosteriorParams) -> Result<NodeId, NumError> {
    let var = g.exp(post.log_var);
    let mu_sq = g.mul(post.mu, post.mu)?;
    let sum = g.add(var, mu_sq)?;
    let shifted = g.add_scalar(sum, -1.0);
    let term = g.sub(shifted, post.log_var)?;
    let total = g.sum(term);
    Ok(g.scale(total, 0.5))
}

/// Negative evidence lower bound for one user: reconstruction of the
/// visit counts under the mixed POI distribution, plus the posterior's
/// KL to the prior. The expectation over the posterior is a single
/// reparameterized sample (the theta passed in).
pub fn ntm_loss(
    g: &mut Graph,
    bow: &BagOfWords,
    phi: NodeId,
    theta: NodeId,
    post: &PosteriorParams,
) -> Result<NodeId, NumError> {
    for (name, node) in [("phi", phi), ("theta", theta)] {
        if g.value(node).data().iter().any(|&x| x < 0.0) {
            return Err(NumError::Config(format!(
                "{name} contains negative entries; expected a distribution"
            )));
        }
    }
    let p = g.matmul(theta, phi)?; // [1, D2] mixed POI distribution
    let floored = g.add_scalar(p, LOG_FLOOR);
    let logp = g.ln(floored);
    let counts = g.constant(Array::matrix(1, bow.len(), bow.to_f64())?);
    let ll = g.dot(counts, logp)?;
    let recon = g.scale(ll, -1.0);
    let kl = kl_divergence(g, post)?;
    g.add(recon, kl)
}

/// Posterior, sample, and loss in one call; the per-user training path.
pub fn ntm_user_loss(
    g: &mut Graph,
    store: &ParamStore,
    bow: &BagOfWords,
    phi: NodeId,
    eps: &[f64],
) -> Result<NodeId, NumError> {
    let post = encode_posterior(g, store, bow)?;
    let theta = sample_theta(g, store, &post, eps)?;
    ntm_loss(g, bow, phi, theta, &post)
}

/// Ground the intention table in a home preference vector: score each
/// intention embedding against `W^t u_h`, softmax the K scores, and
/// return both the convex combination `[1, d]` and the weights `[1, K]`.
pub fn user_intention_with_weights(
    g: &mut Graph,
    store: &ParamStore,
    u_h: NodeId,
) -> Result<(NodeId, NodeId), NumError> {
    let t = g.param(store, "intention.t")?;
    let w_t = g.param(store, "intention.attn.w_t")?;
    let u_col = g.transpose(u_h)?; // [d, 1]
    let wu = g.matmul(w_t, u_col)?; // [d, 1]
    let scores = g.matmul(t, wu)?; // [K, 1]
    let scores_row = g.transpose(scores)?;
    let beta = g.softmax_rows(scores_row); // [1, K]
    let u_int = g.matmul(beta, t)?; // [1, d]
    Ok((u_int, beta))
}

/// The intention summary vector alone.
pub fn user_intention(g: &mut Graph, store: &ParamStore, u_h: NodeId) -> Result<NodeId, NumError> {
    user_intention_with_weights(g, store, u_h).map(|(u, _)| u)
}
