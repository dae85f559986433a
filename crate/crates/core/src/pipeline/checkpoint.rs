//! Versioned binary snapshots of a trained model. The file is
//! self-contained: besides the parameters it carries the training
//! config, catalog identifiers, and out-of-town coordinates, so a loaded
//! checkpoint can serve recommendations without the original dataset.
//!
//! Layout: magic `TRNR`, format version (u32 LE), a length-prefixed
//! canonical `key=value` config block, the parameter count, then one
//! record per parameter (name, rank, dims, little-endian f64 values),
//! and a trailing CRC32 of everything before it.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::dataio::{build_geo_graph, Catalog, GeoGraph, Poi, Region};
use crate::numkit::{Array, ParamStore};

use super::{parse_kv, render_kv, ModelDims, PipelineError, TrainConfig};

const MAGIC: [u8; 4] = *b"TRNR";
const VERSION: u32 = 1;

/// The weighted total and its three parts, as last summed over an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ntm: f64,
    pub rank: f64,
    pub transfer: f64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub cfg: TrainConfig,
    pub dims: ModelDims,
    /// Raw home-POI ids in dense-index order.
    pub home_ids: Vec<u64>,
    /// Raw out-POI ids in dense-index order.
    pub out_ids: Vec<u64>,
    pub out_lat: Vec<f64>,
    pub out_lon: Vec<f64>,
    /// Last completed training epoch.
    pub epoch: usize,
    pub loss: LossParts,
    pub val_rec10: f64,
    pub params: BTreeMap<String, Array>,
}

impl Checkpoint {
    pub fn capture(
        store: &ParamStore,
        cfg: &TrainConfig,
        dims: &ModelDims,
        catalog: &Catalog,
        epoch: usize,
        loss: LossParts,
        val_rec10: f64,
    ) -> Self {
        let params = store
            .names()
            .map(|n| (n.to_string(), store.get(n).expect("listed name").clone()))
            .collect();
        Checkpoint {
            cfg: cfg.clone(),
            dims: *dims,
            home_ids: catalog.home().iter().map(|p| p.raw).collect(),
            out_ids: catalog.out().iter().map(|p| p.raw).collect(),
            out_lat: catalog.out().iter().map(|p| p.lat).collect(),
            out_lon: catalog.out().iter().map(|p| p.lon).collect(),
            epoch,
            loss,
            val_rec10,
            params,
        }
    }

    /// Rebuild a parameter store holding exactly the saved tensors.
    pub fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new(self.cfg.seed);
        for (name, value) in &self.params {
            store.insert(name, value.clone());
        }
        store
    }

    /// The out-of-town catalog as saved, in dense-index order.
    pub fn out_pois(&self) -> Vec<Poi> {
        self.out_ids
            .iter()
            .zip(self.out_lat.iter().zip(&self.out_lon))
            .enumerate()
            .map(|(id, (&raw, (&lat, &lon)))| Poi {
                id,
                raw,
                region: Region::Out,
                lat,
                lon,
            })
            .collect()
    }

    /// Distance-decay graph over the saved out-of-town coordinates.
    pub fn geo_graph(&self) -> GeoGraph {
        build_geo_graph(&self.out_pois())
    }

    fn config_block(&self) -> String {
        let mut kv = self.cfg.to_kv();
        kv.insert("dim_home_vocab".into(), self.dims.d1.to_string());
        kv.insert("dim_out_vocab".into(), self.dims.d2.to_string());
        kv.insert("dim_train_users".into(), self.dims.n_users.to_string());
        kv.insert("epoch".into(), self.epoch.to_string());
        kv.insert("loss_total".into(), self.loss.total.to_string());
        kv.insert("loss_ntm".into(), self.loss.ntm.to_string());
        kv.insert("loss_rank".into(), self.loss.rank.to_string());
        kv.insert("loss_transfer".into(), self.loss.transfer.to_string());
        kv.insert("val_rec10".into(), self.val_rec10.to_string());
        kv.insert("home_poi_ids".into(), join(&self.home_ids));
        kv.insert("out_poi_ids".into(), join(&self.out_ids));
        kv.insert("out_poi_lat".into(), join(&self.out_lat));
        kv.insert("out_poi_lon".into(), join(&self.out_lon));
        render_kv(&kv)
    }
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn split_list<T: FromStr>(key: &str, s: &str) -> Result<Vec<T>, PipelineError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|tok| {
            tok.parse().map_err(|_| PipelineError::Malformed {
                section: "config".into(),
                msg: format!("bad list entry {tok:?} under {key}"),
            })
        })
        .collect()
}

fn meta_field<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T, PipelineError> {
    let raw = kv.get(key).ok_or_else(|| PipelineError::Malformed {
        section: "config".into(),
        msg: format!("missing key {key}"),
    })?;
    raw.parse().map_err(|_| PipelineError::Malformed {
        section: "config".into(),
        msg: format!("bad value {raw:?} for {key}"),
    })
}

const META_KEYS: [&str; 13] = [
    "dim_home_vocab",
    "dim_out_vocab",
    "dim_train_users",
    "epoch",
    "loss_total",
    "loss_ntm",
    "loss_rank",
    "loss_transfer",
    "val_rec10",
    "home_poi_ids",
    "out_poi_ids",
    "out_poi_lat",
    "out_poi_lon",
];

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), PipelineError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    let config = ckpt.config_block();
    buf.extend_from_slice(&(config.len() as u64).to_le_bytes());
    buf.extend_from_slice(config.as_bytes());

    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for (name, value) in &ckpt.params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
        for &dim in value.shape() {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &x in value.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    buf.extend_from_slice(&crc32fast::hash(&buf).to_le_bytes());
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8], PipelineError> {
        if self.pos + n > self.buf.len() {
            return Err(PipelineError::Malformed {
                section: section.into(),
                msg: format!(
                    "file ends after {} bytes, needed {} more",
                    self.buf.len(),
                    self.pos + n - self.buf.len()
                ),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, section: &str) -> Result<u32, PipelineError> {
        Ok(u32::from_le_bytes(
            self.take(4, section)?.try_into().unwrap(),
        ))
    }

    fn u64(&mut self, section: &str) -> Result<u64, PipelineError> {
        Ok(u64::from_le_bytes(
            self.take(8, section)?.try_into().unwrap(),
        ))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PipelineError> {
    let buf = std::fs::read(path)?;
    if buf.len() < MAGIC.len() + 8 {
        return Err(PipelineError::Malformed {
            section: "header".into(),
            msg: format!("file holds only {} bytes", buf.len()),
        });
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored_crc = u32::from_le_bytes(tail.try_into().unwrap());
    let actual_crc = crc32fast::hash(body);
    if stored_crc != actual_crc {
        return Err(PipelineError::Malformed {
            section: "checksum".into(),
            msg: format!("crc32 {actual_crc:08x} does not match stored {stored_crc:08x}"),
        });
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4, "header")? != MAGIC {
        return Err(PipelineError::Malformed {
            section: "header".into(),
            msg: "bad magic bytes".into(),
        });
    }
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(PipelineError::Version {
            found: version,
            expected: VERSION,
        });
    }

    let config_len = r.u64("config")? as usize;
    let config_text = std::str::from_utf8(r.take(config_len, "config")?).map_err(|e| {
        PipelineError::Malformed {
            section: "config".into(),
            msg: e.to_string(),
        }
    })?;
    let kv = parse_kv(config_text).map_err(|e| PipelineError::Malformed {
        section: "config".into(),
        msg: e.to_string(),
    })?;

    let mut cfg = TrainConfig::default();
    for (key, value) in &kv {
        if !cfg.set(key, value)? && !META_KEYS.contains(&key.as_str()) {
            return Err(PipelineError::Malformed {
                section: "config".into(),
                msg: format!("unknown key {key}"),
            });
        }
    }
    let dims = ModelDims {
        d1: meta_field(&kv, "dim_home_vocab")?,
        d2: meta_field(&kv, "dim_out_vocab")?,
        n_users: meta_field(&kv, "dim_train_users")?,
    };
    let loss = LossParts {
        total: meta_field(&kv, "loss_total")?,
        ntm: meta_field(&kv, "loss_ntm")?,
        rank: meta_field(&kv, "loss_rank")?,
        transfer: meta_field(&kv, "loss_transfer")?,
    };
    let home_ids = split_list("home_poi_ids", &kv["home_poi_ids"])?;
    let out_ids: Vec<u64> = split_list("out_poi_ids", &kv["out_poi_ids"])?;
    let out_lat: Vec<f64> = split_list("out_poi_lat", &kv["out_poi_lat"])?;
    let out_lon: Vec<f64> = split_list("out_poi_lon", &kv["out_poi_lon"])?;
    if out_lat.len() != out_ids.len() || out_lon.len() != out_ids.len() {
        return Err(PipelineError::Malformed {
            section: "config".into(),
            msg: format!(
                "out catalog lists disagree: {} ids, {} lats, {} lons",
                out_ids.len(),
                out_lat.len(),
                out_lon.len()
            ),
        });
    }

    let n_params = r.u32("params")? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..n_params {
        let name_len = r.u32("params")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "params")?)
            .map_err(|e| PipelineError::Malformed {
                section: "params".into(),
                msg: e.to_string(),
            })?
            .to_string();
        let rank = r.u32("params")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("params")? as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel * 8, "params")?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let value = Array::new(shape, data).map_err(|e| PipelineError::Malformed {
            section: "params".into(),
            msg: format!("{name}: {e}"),
        })?;
        params.insert(name, value);
    }
    if r.pos != body.len() {
        return Err(PipelineError::Malformed {
            section: "params".into(),
            msg: format!("{} unexpected trailing bytes", body.len() - r.pos),
        });
    }

    Ok(Checkpoint {
        cfg,
        dims,
        home_ids,
        out_ids,
        out_lat,
        out_lon,
        epoch: meta_field(&kv, "epoch")?,
        loss,
        val_rec10: meta_field(&kv, "val_rec10")?,
        params,
    })
}
