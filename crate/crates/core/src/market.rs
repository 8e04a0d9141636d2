//! On-disk model market.
//!
//! Each record is a directory `<root>/<id>/` holding `manifest.json` and one
//! little-endian `f64` blob per layer. `<root>/index.json` caches the id
//! list; the directory scan is authoritative.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::training::{Arch, Layer, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub id: String,
    pub params: ModelParams,
    pub n_train: usize,
    pub score: f64,
    pub party: usize,
    pub partition: String,
}

impl ModelRecord {
    pub fn validate(&self) -> Result<()> {
        validate_id(&self.id)?;
        if self.n_train == 0 {
            return Err(Error::invalid(format!("record `{}` has n_train = 0", self.id)));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid(format!("record `{}` score {} outside [0, 1]", self.id, self.score)));
        }
        self.params.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
    checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleManifest {
    id: String,
    party: usize,
    n_train: usize,
    score: f64,
    arch: Arch,
    #[serde(default)]
    partition: String,
    layers: Vec<LayerEntry>,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("invalid record id `{id}`")))
    }
}

const INDEX: &str = "index.json";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct MarketStore {
    root: PathBuf,
}

impl MarketStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::storage(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.record_dir(id).join(MANIFEST).is_file()
    }

    /// Ids of every complete bundle, lexicographically sorted.
    pub fn list_ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        let entries = fs::read_dir(&self.root).map_err(|e| Error::storage(&self.root, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::storage(&self.root, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || !entry.path().join(MANIFEST).is_file() {
                continue;
            }
            ids.push(name);
        }
        ids.sort();
        Ok(ids)
    }

    fn write_index(&self) -> Result<()> {
        let ids = self.list_ids()?;
        let path = self.root.join(INDEX);
        let tmp = self.root.join(".index.json.tmp");
        let body = serde_json::to_vec_pretty(&ids).expect("ids serialize");
        fs::write(&tmp, body).map_err(|e| Error::storage(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::storage(&path, e))
    }

    /// Cached id list from `index.json`; rebuilt from a scan when missing.
    pub fn cached_ids(&self) -> Result<Vec<String>> {
        let path = self.root.join(INDEX);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::Integrity {
                id: INDEX.into(),
                layer: "-".into(),
                msg: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => self.list_ids(),
            Err(e) => Err(Error::storage(path, e)),
        }
    }

    /// Write a record bundle into a temporary directory, then rename it
    /// into place.
    pub fn save_record(&self, rec: &ModelRecord) -> Result<String> {
        rec.validate()?;
        let dest = self.record_dir(&rec.id);
        if dest.exists() {
            return Err(Error::Conflict(rec.id.clone()));
        }
        let tmp = self
            .root
            .join(format!(".tmp-{}-{}", rec.id, std::process::id()));
        if tmp.exists() {
            return Err(Error::Conflict(rec.id.clone()));
        }
        let result = self.write_bundle(&tmp, rec).and_then(|()| {
            if dest.exists() {
                return Err(Error::Conflict(rec.id.clone()));
            }
            fs::rename(&tmp, &dest).map_err(|e| Error::storage(&dest, e))
        });
        if let Err(e) = result {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        self.write_index()?;
        Ok(rec.id.clone())
    }

    fn write_bundle(&self, dir: &Path, rec: &ModelRecord) -> Result<()> {
        fs::create_dir(dir).map_err(|e| Error::storage(dir, e))?;
        let mut layers = Vec::with_capacity(rec.params.layers.len());
        for layer in &rec.params.layers {
            let bytes: Vec<u8> = layer.values.iter().flat_map(|v| v.to_le_bytes()).collect();
            let file = format!("{}.bin", layer.name);
            let path = dir.join(&file);
            fs::write(&path, &bytes).map_err(|e| Error::storage(&path, e))?;
            layers.push(LayerEntry {
                name: layer.name.clone(),
                shape: layer.shape.clone(),
                file,
                checksum: format!("{:016x}", fnv1a64(&bytes)),
            });
        }
        let manifest = BundleManifest {
            id: rec.id.clone(),
            party: rec.party,
            n_train: rec.n_train,
            score: rec.score,
            arch: rec.params.arch,
            partition: rec.partition.clone(),
            layers,
        };
        let path = dir.join(MANIFEST);
        let body = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, body).map_err(|e| Error::storage(&path, e))
    }

    pub fn load_record(&self, id: &str) -> Result<ModelRecord> {
        validate_id(id)?;
        let dir = self.record_dir(id);
        let path = dir.join(MANIFEST);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("record `{id}`")))
            }
            Err(e) => return Err(Error::storage(path, e)),
        };
        let integrity = |layer: &str, msg: String| Error::Integrity {
            id: id.to_string(),
            layer: layer.to_string(),
            msg,
        };
        let manifest: BundleManifest =
            serde_json::from_slice(&bytes).map_err(|e| integrity(MANIFEST, e.to_string()))?;
        if manifest.id != id {
            return Err(integrity(MANIFEST, format!("manifest names `{}`", manifest.id)));
        }
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for entry in &manifest.layers {
            let path = dir.join(&entry.file);
            let blob = fs::read(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => integrity(&entry.name, format!("missing blob {}", entry.file)),
                _ => Error::storage(&path, e),
            })?;
            let expected = entry.shape.iter().product::<usize>() * 8;
            if blob.len() != expected {
                return Err(integrity(
                    &entry.name,
                    format!("blob has {} bytes, shape {:?} needs {expected}", blob.len(), entry.shape),
                ));
            }
            let sum = format!("{:016x}", fnv1a64(&blob));
            if sum != entry.checksum {
                return Err(integrity(&entry.name, format!("checksum {sum} != {}", entry.checksum)));
            }
            let values = blob
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            layers.push(Layer {
                name: entry.name.clone(),
                shape: entry.shape.clone(),
                values,
            });
        }
        let input_dim = layers.first().and_then(|l| l.shape.first().copied()).unwrap_or(0);
        let classes = layers
            .iter()
            .find(|l| l.name == "out")
            .and_then(|l| l.shape.get(1).copied())
            .unwrap_or(0);
        let rec = ModelRecord {
            id: manifest.id,
            params: ModelParams {
                arch: manifest.arch,
                input_dim,
                classes,
                layers,
            },
            n_train: manifest.n_train,
            score: manifest.score,
            party: manifest.party,
            partition: manifest.partition,
        };
        rec.validate().map_err(|e| integrity(MANIFEST, e.to_string()))?;
        Ok(rec)
    }

    /// Load the given ids in order, or every record when `ids` is `None`.
    pub fn load_records(&self, ids: Option<&[String]>) -> Result<Vec<ModelRecord>> {
        let all;
        let ids = match ids {
            Some(ids) => ids,
            None => {
                all = self.list_ids()?;
                &all
            }
        };
        ids.iter().map(|id| self.load_record(id)).collect()
    }

    pub fn delete_record(&self, id: &str) -> Result<()> {
        validate_id(id)?;
        let dir = self.record_dir(id);
        if !dir.exists() {
            return Err(Error::NotFound(format!("record `{id}`")));
        }
        fs::remove_dir_all(&dir).map_err(|e| Error::storage(&dir, e))?;
        self.write_index()
    }
}
