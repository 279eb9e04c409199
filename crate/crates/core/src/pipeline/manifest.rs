use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::{read_json, sha256_bytes, sha256_file, write_json};

/// Provenance of one stage run. Paths are relative to the workdir, except
/// external inputs of `ingest`, which are kept as given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub info: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Value,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            read_json(path)
        } else {
            Ok(Manifest::default())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.get(name)
    }
}

pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_bytes(&serde_json::to_vec(value)?))
}

/// Hashes `rel` under `root` and checks it against what `producer` recorded.
pub fn verified_hash(manifest: &Manifest, root: &Path, rel: &str, producer: &str) -> Result<String> {
    let path = root.join(rel);
    if !path.exists() {
        return Err(Error::MissingArtifact(producer.to_string()));
    }
    let hash = sha256_file(&path)?;
    let stale = |reason: String| Error::StaleArtifact { stage: producer.to_string(), reason };
    let record = manifest
        .stage(producer)
        .ok_or_else(|| stale(format!("{rel} exists but the manifest has no record of `{producer}`")))?;
    match record.outputs.get(rel) {
        Some(h) if *h == hash => Ok(hash),
        Some(_) => Err(stale(format!("{rel} changed since `{producer}` wrote it"))),
        None => Err(stale(format!("`{producer}` did not record {rel}"))),
    }
}

/// True when every recorded output still exists with its recorded hash.
pub fn outputs_intact(record: &StageRecord, root: &Path) -> bool {
    record.outputs.iter().all(|(rel, h)| {
        let path = root.join(rel);
        path.exists() && sha256_file(&path).is_ok_and(|x| x == *h)
    })
}
