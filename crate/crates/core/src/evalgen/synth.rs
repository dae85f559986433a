//! Synthetic travel-behavior corpus with planted structure: each user
//! belongs to a home-town POI cluster that determines their dominant
//! travel intention, intentions are sparse distributions over spatially
//! clustered out-of-town POIs, and visit counts respect the loader's
//! activity filter so no generated user is dropped.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_home_pois: usize,
    pub n_out_pois: usize,
    /// Planted intention count.
    pub k_true: usize,
    /// Sharpness of both the intention-over-POI distributions and each
    /// user's intention mixture; higher means more concentrated.
    pub concentration: f64,
    pub home_clusters: usize,
    /// Side length, in degrees, of the square each region's POIs live in.
    pub geo_extent: f64,
    /// Inclusive bounds on home check-ins per user; the low end must
    /// clear the loader's filter.
    pub home_len: (usize, usize),
    /// Inclusive bounds on out-of-town check-ins per user.
    pub out_len: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 2000,
            n_home_pois: 300,
            n_out_pois: 150,
            k_true: 5,
            concentration: 6.0,
            home_clusters: 5,
            geo_extent: 2.0,
            home_len: (8, 20),
            out_len: (3, 8),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(EvalError::Config(msg.to_string()))
            }
        };
        check(self.k_true >= 2, "k_true must be at least 2")?;
        check(
            self.k_true <= self.n_out_pois,
            "more intentions than out-of-town POIs",
        )?;
        check(
            self.home_clusters >= 1 && self.home_clusters <= self.n_home_pois,
            "more home clusters than home POIs",
        )?;
        check(self.n_users >= 1, "need at least one user")?;
        check(
            self.home_len.0 >= 5 && self.home_len.0 <= self.home_len.1,
            "home check-in range must start at 5 or the loader drops users",
        )?;
        check(
            self.out_len.0 >= 3 && self.out_len.0 <= self.out_len.1,
            "out check-in range must start at 3 or the loader drops users",
        )?;
        check(self.geo_extent > 0.0, "geo_extent must be positive")?;
        check(
            self.concentration.is_finite() && self.concentration >= 0.0,
            "concentration must be a non-negative finite number",
        )
    }

    /// Apply one `key=value` setting; false when the key is unknown.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, EvalError> {
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| EvalError::Config(format!("bad value {v:?} for {key}")))
        };
        let parse_f64 = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| EvalError::Config(format!("bad value {v:?} for {key}")))
        };
        match key {
            "n_users" => self.n_users = parse_usize(value)?,
            "n_home_pois" => self.n_home_pois = parse_usize(value)?,
            "n_out_pois" => self.n_out_pois = parse_usize(value)?,
            "k_true" => self.k_true = parse_usize(value)?,
            "concentration" => self.concentration = parse_f64(value)?,
            "home_clusters" => self.home_clusters = parse_usize(value)?,
            "geo_extent" => self.geo_extent = parse_f64(value)?,
            "home_len_min" => self.home_len.0 = parse_usize(value)?,
            "home_len_max" => self.home_len.1 = parse_usize(value)?,
            "out_len_min" => self.out_len.0 = parse_usize(value)?,
            "out_len_max" => self.out_len.1 = parse_usize(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| EvalError::Config(format!("bad value {value:?} for {key}")))?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// The planted assignments, for measuring whether models recover them.
#[derive(Clone, Debug)]
pub struct SynthTruth {
    /// Intention owning each out-of-town POI.
    pub poi_intention: Vec<usize>,
    /// Each user's dominant intention.
    pub user_intention: Vec<usize>,
    /// Each user's home-town cluster.
    pub user_cluster: Vec<usize>,
}

/// Normalize log-weights into a distribution without overflowing, so
/// arbitrarily sharp concentrations stay representable.
fn softmax(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = log_w.iter().map(|&w| (w - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

const HOME_RAW_BASE: u64 = 10_000;
const OUT_RAW_BASE: u64 = 1_000_000;

/// Generate `pois.tsv` and `checkins.tsv` under `dir`. Byte-identical
/// output for identical configs.
pub fn generate_synthetic(cfg: &SynthConfig, dir: &Path) -> Result<SynthTruth, EvalError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // ── out-of-town catalog: spatial clusters aligned with intentions ──
    let out_centers: Vec<(f64, f64)> = (0..cfg.k_true)
        .map(|_| {
            (
                10.0 + rng.gen::<f64>() * cfg.geo_extent,
                100.0 + rng.gen::<f64>() * cfg.geo_extent,
            )
        })
        .collect();
    let poi_intention: Vec<usize> = (0..cfg.n_out_pois).map(|i| i % cfg.k_true).collect();
    let jitter = 0.01 * cfg.geo_extent;
    let out_coords: Vec<(f64, f64)> = poi_intention
        .iter()
        .map(|&c| {
            let (lat, lon) = out_centers[c];
            (
                lat + rng.gen_range(-jitter..=jitter),
                lon + rng.gen_range(-jitter..=jitter),
            )
        })
        .collect();

    // global popularity: a shuffled Zipf profile shared by all intentions
    let mut pop_order: Vec<usize> = (0..cfg.n_out_pois).collect();
    {
        use rand::seq::SliceRandom;
        pop_order.shuffle(&mut rng);
    }
    let mut log_pop = vec![0.0; cfg.n_out_pois];
    for (rank, &poi) in pop_order.iter().enumerate() {
        log_pop[poi] = -(1.0 + rank as f64).ln();
    }

    // intention -> POI distributions: popularity boosted on owned POIs
    let phi_true: Vec<Vec<f64>> = (0..cfg.k_true)
        .map(|k| {
            let log_w: Vec<f64> = (0..cfg.n_out_pois)
                .map(|p| {
                    log_pop[p]
                        + if poi_intention[p] == k {
                            cfg.concentration
                        } else {
                            0.0
                        }
                })
                .collect();
            softmax(&log_w)
        })
        .collect();

    // ── home catalog: clusters of POIs in a separate box ──
    let home_centers: Vec<(f64, f64)> = (0..cfg.home_clusters)
        .map(|_| {
            (
                40.0 + rng.gen::<f64>() * cfg.geo_extent,
                5.0 + rng.gen::<f64>() * cfg.geo_extent,
            )
        })
        .collect();
    let home_cluster: Vec<usize> = (0..cfg.n_home_pois)
        .map(|j| j % cfg.home_clusters)
        .collect();
    let home_coords: Vec<(f64, f64)> = home_cluster
        .iter()
        .map(|&c| {
            let (lat, lon) = home_centers[c];
            (
                lat + rng.gen_range(-jitter..=jitter),
                lon + rng.gen_range(-jitter..=jitter),
            )
        })
        .collect();
    let cluster_members: Vec<Vec<usize>> = (0..cfg.home_clusters)
        .map(|c| {
            (0..cfg.n_home_pois)
                .filter(|&j| home_cluster[j] == c)
                .collect()
        })
        .collect();

    // ── users: cluster drives the dominant intention ──
    let mut user_cluster = Vec::with_capacity(cfg.n_users);
    let mut user_intention = Vec::with_capacity(cfg.n_users);
    let mut checkins = String::new();
    for user in 0..cfg.n_users {
        let cluster = rng.gen_range(0..cfg.home_clusters);
        let dominant = cluster % cfg.k_true;
        user_cluster.push(cluster);
        user_intention.push(dominant);

        // home sequence: a sticky walk over the cluster's POIs
        let len = rng.gen_range(cfg.home_len.0..=cfg.home_len.1);
        let members = &cluster_members[cluster];
        for t in 0..len {
            let poi = if rng.gen::<f64>() < 0.9 {
                members[rng.gen_range(0..members.len())]
            } else {
                rng.gen_range(0..cfg.n_home_pois)
            };
            writeln!(checkins, "{user}\t{t}\t{}", HOME_RAW_BASE + poi as u64).expect("string io");
        }

        // out-of-town set: mixture of intentions, sharply favoring the
        // dominant one
        let log_mix: Vec<f64> = (0..cfg.k_true)
            .map(|k| {
                if k == dominant {
                    cfg.concentration
                } else {
                    0.0
                }
            })
            .collect();
        let mixture = softmax(&log_mix);
        let count = rng.gen_range(cfg.out_len.0..=cfg.out_len.1);
        for t in 0..count {
            let k = sample_index(&mixture, &mut rng);
            let poi = sample_index(&phi_true[k], &mut rng);
            writeln!(checkins, "{user}\t{t}\t{}", OUT_RAW_BASE + poi as u64).expect("string io");
        }
    }

    let mut pois = String::new();
    for (j, &(lat, lon)) in home_coords.iter().enumerate() {
        writeln!(
            pois,
            "{}\thome\t{lat:.6}\t{lon:.6}",
            HOME_RAW_BASE + j as u64
        )
        .expect("string io");
    }
    for (i, &(lat, lon)) in out_coords.iter().enumerate() {
        writeln!(pois, "{}\tout\t{lat:.6}\t{lon:.6}", OUT_RAW_BASE + i as u64).expect("string io");
    }

    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("pois.tsv"), pois)?;
    std::fs::write(dir.join("checkins.tsv"), checkins)?;

    Ok(SynthTruth {
        poi_intention,
        user_intention,
        user_cluster,
    })
}
