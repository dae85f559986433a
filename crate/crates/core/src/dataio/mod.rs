//! Check-in records, dataset files, user splits, and the derived
//! structures the model consumes: per-user session graphs over home
//! check-ins, a distance-decay graph over the out-of-town catalog, and
//! bag-of-words vectors of out-of-town visits.

mod derive;
mod load;

pub use derive::{build_geo_graph, build_session_graph, haversine_km, to_bag_of_words};
pub use load::{load_dataset, load_dataset_with, LoadOptions};

use thiserror::Error;

use crate::numkit::Array;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("schema: {0}")]
    Schema(String),
    #[error("empty check-in sequence")]
    EmptySequence,
    #[error("poi index {index} outside vocabulary of size {vocab}")]
    PoiOutOfRange { index: usize, vocab: usize },
}

/// Which side of a user's travel a POI belongs to. The two sides are
/// separate vocabularies with independent dense index spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Home,
    Out,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Home => "home",
            Region::Out => "out",
        }
    }
}

/// A point of interest. `id` is the dense index within its region's
/// vocabulary; `raw` is the identifier used in the input files.
#[derive(Clone, Debug, PartialEq)]
pub struct Poi {
    pub id: usize,
    pub raw: u64,
    pub region: Region,
    pub lat: f64,
    pub lon: f64,
}

/// One visit event. `poi` is a dense index into the vocabulary of the
/// region the containing list belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckIn {
    pub user: u64,
    pub time: i64,
    pub poi: usize,
}

/// Everything known about one user's travel: the time-ordered home
/// check-in sequence and the set of out-of-town check-ins.
#[derive(Clone, Debug)]
pub struct TravelBehavior {
    pub user: u64,
    pub home_seq: Vec<CheckIn>,
    pub out_set: Vec<CheckIn>,
    pub home_region: Region,
    pub out_region: Region,
}

/// POI catalogs for both regions, with raw-id lookup in both directions.
#[derive(Clone, Debug, Default)]
pub struct Catalog {
    home: Vec<Poi>,
    out: Vec<Poi>,
}

impl Catalog {
    pub fn new(home: Vec<Poi>, out: Vec<Poi>) -> Self {
        debug_assert!(home.iter().enumerate().all(|(i, p)| p.id == i));
        debug_assert!(out.iter().enumerate().all(|(i, p)| p.id == i));
        Catalog { home, out }
    }

    pub fn home(&self) -> &[Poi] {
        &self.home
    }

    pub fn out(&self) -> &[Poi] {
        &self.out
    }

    /// Home vocabulary size.
    pub fn home_vocab(&self) -> usize {
        self.home.len()
    }

    /// Out-of-town vocabulary size (the recommendation catalog).
    pub fn out_vocab(&self) -> usize {
        self.out.len()
    }

    pub fn resolve_raw(&self, raw: u64) -> Option<(Region, usize)> {
        self.home
            .iter()
            .find(|p| p.raw == raw)
            .map(|p| (Region::Home, p.id))
            .or_else(|| {
                self.out
                    .iter()
                    .find(|p| p.raw == raw)
                    .map(|p| (Region::Out, p.id))
            })
    }
}

/// A loaded corpus: catalogs plus the user partition.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub catalog: Catalog,
    pub train: Vec<TravelBehavior>,
    pub valid: Vec<TravelBehavior>,
    pub test: Vec<TravelBehavior>,
    pub report: LoadReport,
}

impl Dataset {
    pub fn all_users(&self) -> impl Iterator<Item = &TravelBehavior> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

/// Counts gathered while loading, for the dataset-description summary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub users_seen: usize,
    pub users_kept: usize,
    pub users_filtered: usize,
    pub home_pois: usize,
    pub out_pois: usize,
    pub home_checkins: usize,
    pub out_checkins: usize,
}

impl std::fmt::Display for LoadReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "users kept      {}", self.users_kept)?;
        writeln!(
            f,
            "users filtered  {} (of {} seen)",
            self.users_filtered, self.users_seen
        )?;
        writeln!(f, "home POIs       {}", self.home_pois)?;
        writeln!(f, "out POIs        {}", self.out_pois)?;
        writeln!(f, "home check-ins  {}", self.home_checkins)?;
        write!(f, "out check-ins   {}", self.out_checkins)
    }
}

/// Directed transition graph over one user's home check-ins. `nodes`
/// lists the distinct POIs in first-occurrence order; `a_out[r]` holds
/// node r's outgoing transition frequencies, `a_in[r]` its incoming
/// ones. Rows are count-normalized, so each sums to 1 or 0.
#[derive(Clone, Debug)]
pub struct SessionGraph {
    pub nodes: Vec<usize>,
    pub a_out: Array,
    pub a_in: Array,
}

impl SessionGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// How the distance graph is scaled before convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeoNorm {
    Row,
    None,
}

/// Pairwise distance-decay weights over the out-of-town catalog:
/// `raw[i][j] = exp(-km(i,j))`, symmetric with unit diagonal. The
/// row-normalized variant keeps convolution outputs bounded as the
/// catalog grows.
#[derive(Clone, Debug)]
pub struct GeoGraph {
    raw: Array,
    normalized: Array,
}

impl GeoGraph {
    pub(crate) fn from_raw(raw: Array) -> Self {
        let (n, cols) = (raw.rows(), raw.cols());
        debug_assert_eq!(n, cols);
        let mut data = raw.data().to_vec();
        for r in 0..n {
            let sum: f64 = data[r * n..(r + 1) * n].iter().sum();
            for x in &mut data[r * n..(r + 1) * n] {
                *x /= sum;
            }
        }
        let normalized = Array::matrix(n, n, data).expect("geo shape");
        GeoGraph { raw, normalized }
    }

    pub fn raw(&self) -> &Array {
        &self.raw
    }

    pub fn normalized(&self) -> &Array {
        &self.normalized
    }

    pub fn select(&self, norm: GeoNorm) -> &Array {
        match norm {
            GeoNorm::Row => &self.normalized,
            GeoNorm::None => &self.raw,
        }
    }

    pub fn len(&self) -> usize {
        self.raw.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.numel() == 0
    }
}

/// Out-of-town visit counts per catalog POI.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BagOfWords {
    pub counts: Vec<u32>,
}

impl BagOfWords {
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Counts as f64, divided by the total (zeros stay zeros).
    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}
