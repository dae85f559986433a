//! Home-town preference modeling: gated graph propagation over a user's
//! session graph, followed by an attention readout that collapses the
//! refined node states into a single preference vector.

use crate::dataio::SessionGraph;
use crate::numkit::{Graph, NodeId, NumError, ParamStore};

/// Hidden size and propagation settings shared by both stages.
#[derive(Clone, Copy, Debug)]
pub struct EncoderConfig {
    pub d: usize,
    /// Gated propagation rounds over the session graph.
    pub steps: usize,
    /// Normalize attention scores before the weighted sum. Off by
    /// default: raw scores act as both selection and magnitude signal.
    pub attn_softmax: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d: 128,
            steps: 1,
            attn_softmax: false,
        }
    }
}

/// Register the home-POI embedding table and all encoder weights.
pub fn register(store: &mut ParamStore, cfg: &EncoderConfig, home_vocab: usize) {
    let d = cfg.d;
    let bound = 1.0 / (d as f64).sqrt();
    store.init_uniform("encoder.emb", &[home_vocab, d], bound);
    store.init_uniform("encoder.gg.w_z", &[d, 2 * d], bound);
    store.init_uniform("encoder.gg.u_z", &[d, d], bound);
    store.init_uniform("encoder.gg.w_r", &[d, 2 * d], bound);
    store.init_uniform("encoder.gg.u_r", &[d, d], bound);
    store.init_uniform("encoder.gg.w_c", &[d, 2 * d], bound);
    store.init_uniform("encoder.gg.u_c", &[d, d], bound);
    store.init_zeros("encoder.gg.b_g", &[2 * d]);
    store.init_uniform("encoder.attn.q", &[1, d], bound);
    store.init_uniform("encoder.attn.w_p", &[d, d], bound);
    store.init_zeros("encoder.attn.b_p", &[d]);
}

/// Gate and candidate weights for the graph recurrence. The `w_*`
/// matrices are `d x 2d` (they consume the concatenated out/in message),
/// the `u_*` matrices `d x d`; all are shared across steps.
pub struct GgnnWeights {
    pub w_z: NodeId,
    pub u_z: NodeId,
    pub w_r: NodeId,
    pub u_r: NodeId,
    pub w_c: NodeId,
    pub u_c: NodeId,
    pub b_g: NodeId,
    pub steps: usize,
}

impl GgnnWeights {
    pub fn load(g: &mut Graph, store: &ParamStore, steps: usize) -> Result<Self, NumError> {
        Ok(GgnnWeights {
            w_z: g.param(store, "encoder.gg.w_z")?,
            u_z: g.param(store, "encoder.gg.u_z")?,
            w_r: g.param(store, "encoder.gg.w_r")?,
            u_r: g.param(store, "encoder.gg.u_r")?,
            w_c: g.param(store, "encoder.gg.w_c")?,
            u_c: g.param(store, "encoder.gg.u_c")?,
            b_g: g.param(store, "encoder.gg.b_g")?,
            steps,
        })
    }
}

/// Readout weights: score vector `q`, projection `w_p`, bias `b_p`.
pub struct AttentionWeights {
    pub q: NodeId,
    pub w_p: NodeId,
    pub b_p: NodeId,
    pub softmax: bool,
}

impl AttentionWeights {
    pub fn load(g: &mut Graph, store: &ParamStore, softmax: bool) -> Result<Self, NumError> {
        Ok(AttentionWeights {
            q: g.param(store, "encoder.attn.q")?,
            w_p: g.param(store, "encoder.attn.w_p")?,
            b_p: g.param(store, "encoder.attn.b_p")?,
            softmax,
        })
    }
}

/// Run `w.steps` rounds of gated propagation over the session graph.
///
/// Each round aggregates neighbor states through the normalized out- and
/// in-adjacency blocks, concatenates the two aggregates into a `2d`
/// message, and applies a GRU-style update: update gate z, reset gate r,
/// candidate state from the reset-gated previous state, then a
/// per-coordinate convex combination of old state and candidate.
pub fn ggnn_propagate(
    g: &mut Graph,
    session: &SessionGraph,
    v_init: NodeId,
    w: &GgnnWeights,
) -> Result<NodeId, NumError> {
    let d1 = session.len();
    let shape = g.value(v_init).shape().to_vec();
    if shape.len() != 2 || shape[0] != d1 {
        return Err(NumError::DimensionMismatch {
            op: "ggnn_propagate",
            lhs: vec![d1, if shape.len() == 2 { shape[1] } else { 0 }],
            rhs: shape,
        });
    }
    let a_out = g.constant(session.a_out.clone());
    let a_in = g.constant(session.a_in.clone());

    let mut v = v_init;
    for _ in 0..w.steps {
        let msg_out = g.matmul(a_out, v)?;
        let msg_in = g.matmul(a_in, v)?;
        let msg = g.concat_cols(msg_out, msg_in)?;
        let a = g.add_row(msg, w.b_g)?;

        let za = g.matmul_nt(a, w.w_z)?;
        let zv = g.matmul_nt(v, w.u_z)?;
        let z_pre = g.add(za, zv)?;
        let z = g.sigmoid(z_pre);

        let ra = g.matmul_nt(a, w.w_r)?;
        let rv = g.matmul_nt(v, w.u_r)?;
        let r_pre = g.add(ra, rv)?;
        let r = g.sigmoid(r_pre);

        let ca = g.matmul_nt(a, w.w_c)?;
        let gated = g.mul(r, v)?;
        let cv = g.matmul_nt(gated, w.u_c)?;
        let c_pre = g.add(ca, cv)?;
        let cand = g.tanh(c_pre);

        let neg_z = g.scale(z, -1.0);
        let one_minus_z = g.add_scalar(neg_z, 1.0);
        let keep = g.mul(one_minus_z, v)?;
        let take = g.mul(z, cand)?;
        v = g.add(keep, take)?;
    }
    Ok(v)
}

/// Collapse refined node states `[D1, d]` into one preference row
/// `[1, d]`: score each node with `q^T sigmoid(W^p v + b^p)` and sum the
/// score-weighted states. Scores are left unnormalized unless the
/// softmax variant is enabled.
pub fn attend_preference(
    g: &mut Graph,
    v_prime: NodeId,
    w: &AttentionWeights,
) -> Result<NodeId, NumError> {
    let proj = g.matmul_nt(v_prime, w.w_p)?;
    let shifted = g.add_row(proj, w.b_p)?;
    let hidden = g.sigmoid(shifted);
    let scores = g.matmul_nt(hidden, w.q)?; // [D1, 1]
    let mut alpha_t = g.transpose(scores)?; // [1, D1]
    if w.softmax {
        alpha_t = g.softmax_rows(alpha_t);
    }
    g.matmul(alpha_t, v_prime)
}

/// Full home-side forward pass for one user: gather session-node
/// embeddings, propagate, and read out the `[1, d]` preference vector.
pub fn home_preference(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &EncoderConfig,
    session: &SessionGraph,
) -> Result<NodeId, NumError> {
    let table = g.param(store, "encoder.emb")?;
    let v0 = g.gather(table, &session.nodes)?;
    let gg = GgnnWeights::load(g, store, cfg.steps)?;
    let v_prime = ggnn_propagate(g, session, v0, &gg)?;
    let attn = AttentionWeights::load(g, store, cfg.attn_softmax)?;
    attend_preference(g, v_prime, &attn)
}
