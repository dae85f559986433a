use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Catalog, CheckIn, DataError, Dataset, LoadReport, Poi, Region, TravelBehavior};

/// Raw POI id -> (region, dense index), built while parsing the catalog.
type RawIndex = HashMap<u64, (Region, usize)>;

/// Split proportions and the minimum-activity filter.
#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Percent of users assigned to training.
    pub train_pct: u32,
    /// Percent assigned to validation; test receives the remainder.
    pub valid_pct: u32,
    /// Users with fewer home check-ins than this are dropped.
    pub min_home: usize,
    /// Users with fewer out-of-town check-ins than this are dropped.
    pub min_out: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            train_pct: 80,
            valid_pct: 10,
            min_home: 5,
            min_out: 3,
        }
    }
}

/// Load `pois.tsv` and `checkins.tsv` from `dir`, apply the activity
/// filter, and partition users deterministically by `split_seed`.
pub fn load_dataset(dir: &Path, split_seed: u64) -> Result<Dataset, DataError> {
    load_dataset_with(dir, split_seed, &LoadOptions::default())
}

pub fn load_dataset_with(
    dir: &Path,
    split_seed: u64,
    opts: &LoadOptions,
) -> Result<Dataset, DataError> {
    if opts.train_pct + opts.valid_pct > 100 {
        return Err(DataError::Schema(format!(
            "split percentages {}+{} exceed 100",
            opts.train_pct, opts.valid_pct
        )));
    }
    let pois_path = dir.join("pois.tsv");
    let checkins_path = dir.join("checkins.tsv");
    let (catalog, raw_map) = parse_pois(&pois_path, &std::fs::read_to_string(&pois_path)?)?;
    let per_user = parse_checkins(
        &checkins_path,
        &std::fs::read_to_string(&checkins_path)?,
        &raw_map,
    )?;

    let mut report = LoadReport {
        users_seen: per_user.len(),
        home_pois: catalog.home_vocab(),
        out_pois: catalog.out_vocab(),
        ..LoadReport::default()
    };

    let mut users: Vec<TravelBehavior> = Vec::new();
    let mut ids: Vec<u64> = per_user.keys().copied().collect();
    ids.sort_unstable();
    for id in ids {
        let (mut home_seq, out_set) = per_user[&id].clone();
        if home_seq.len() < opts.min_home || out_set.len() < opts.min_out {
            report.users_filtered += 1;
            continue;
        }
        home_seq.sort_by_key(|c| c.time); // stable: ties keep file order
        report.users_kept += 1;
        report.home_checkins += home_seq.len();
        report.out_checkins += out_set.len();
        users.push(TravelBehavior {
            user: id,
            home_seq,
            out_set,
            home_region: Region::Home,
            out_region: Region::Out,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    users.shuffle(&mut rng);
    let n = users.len();
    let n_train = n * opts.train_pct as usize / 100;
    let n_valid = n * opts.valid_pct as usize / 100;
    let test = users.split_off(n_train + n_valid.min(n - n_train));
    let valid = users.split_off(n_train);
    let train = users;

    Ok(Dataset {
        catalog,
        train,
        valid,
        test,
        report,
    })
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_pois(path: &Path, text: &str) -> Result<(Catalog, RawIndex), DataError> {
    let mut home = Vec::new();
    let mut out = Vec::new();
    let mut raw_map = RawIndex::new();
    for (ix, line) in text.lines().enumerate() {
        let lineno = ix + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let raw: u64 = fields[0]
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("poi id: {e}")))?;
        let region = match fields[1] {
            "home" => Region::Home,
            "out" => Region::Out,
            other => return Err(parse_err(path, lineno, format!("unknown region {other:?}"))),
        };
        let lat: f64 = fields[2]
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("lat: {e}")))?;
        let lon: f64 = fields[3]
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("lon: {e}")))?;
        if !(-90.0..=90.0).contains(&lat) {
            return Err(parse_err(
                path,
                lineno,
                format!("lat {lat} outside [-90, 90]"),
            ));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(parse_err(
                path,
                lineno,
                format!("lon {lon} outside [-180, 180]"),
            ));
        }
        if raw_map.contains_key(&raw) {
            return Err(parse_err(path, lineno, format!("duplicate poi id {raw}")));
        }
        let bucket = match region {
            Region::Home => &mut home,
            Region::Out => &mut out,
        };
        let id = bucket.len();
        bucket.push(Poi {
            id,
            raw,
            region,
            lat,
            lon,
        });
        raw_map.insert(raw, (region, id));
    }
    Ok((Catalog::new(home, out), raw_map))
}

type PerUser = HashMap<u64, (Vec<CheckIn>, Vec<CheckIn>)>;

fn parse_checkins(path: &Path, text: &str, raw_map: &RawIndex) -> Result<PerUser, DataError> {
    let mut per_user: PerUser = HashMap::new();
    for (ix, line) in text.lines().enumerate() {
        let lineno = ix + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let user: u64 = fields[0]
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("user id: {e}")))?;
        let time: i64 = fields[1]
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("timestamp: {e}")))?;
        if time < 0 {
            return Err(parse_err(
                path,
                lineno,
                format!("negative timestamp {time}"),
            ));
        }
        let raw_poi: u64 = fields[2]
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("poi id: {e}")))?;
        let &(region, poi) = raw_map.get(&raw_poi).ok_or_else(|| {
            DataError::Schema(format!(
                "{}:{lineno}: check-in references poi {raw_poi} absent from the catalog",
                path.display()
            ))
        })?;
        let entry = per_user.entry(user).or_default();
        let checkin = CheckIn { user, time, poi };
        match region {
            Region::Home => entry.0.push(checkin),
            Region::Out => entry.1.push(checkin),
        }
    }
    Ok(per_user)
}
