//! Out-of-town POI recommendation.
//!
//! Users who travel to a city they have never visited before leave no
//! check-in history there, so the recommender has to work cold-start: it
//! encodes the home-town check-in sequence with a gated graph network,
//! discovers latent travel intentions with a neural topic model, transfers
//! the home preference into the target city through an MLP, and scores
//! geography-aware POI embeddings learned by BPR matrix factorization.
//! All five components are trained jointly on a composite loss.
//!
//! Crate layout:
//! - [`numkit`]: dense f64 arrays with a reverse-mode tape and
//!   finite-difference gradient checking.
//! - [`dataio`]: check-in records, dataset files, session graphs, the
//!   geographic proximity graph, bag-of-words vectors.
//! - [`encoder`]: gated graph propagation over session graphs plus the
//!   attention readout to a single home preference vector.
//! - [`intention`]: the neural topic model (variational posterior,
//!   Gaussian-softmax mixture, ELBO loss) and intention attention.
//! - [`outoftown`]: geographic graph convolution, preference fusion,
//!   inner-product scoring and the BPR pairwise loss.
//! - [`pipeline`]: preference transfer, joint training loop, cold-start
//!   recommendation and checkpoint persistence.
//! - [`evalgen`]: metrics, sanity baselines, the synthetic data generator
//!   and the experiment runner.

pub mod dataio;
pub mod encoder;
pub mod evalgen;
pub mod intention;
pub mod numkit;
pub mod outoftown;
pub mod pipeline;
