//! Expert pools on disk: a directory holding `manifest.json` and one JSON
//! parameter vector per expert.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POOL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolManifest {
    pub format_version: u32,
    /// Parameter-vector length shared by every expert.
    pub dim: usize,
    /// File names relative to the pool directory, in expert order.
    pub experts: Vec<String>,
}

pub fn save_pool(dir: &Path, experts: &[Vec<f64>]) -> Result<()> {
    let dim = experts.first().map_or(0, Vec::len);
    if experts.iter().any(|e| e.len() != dim) {
        return Err(Error::contract("experts differ in parameter length"));
    }
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(experts.len());
    for (i, e) in experts.iter().enumerate() {
        let name = format!("expert_{i:03}.json");
        std::fs::write(dir.join(&name), serde_json::to_vec(e)?)?;
        names.push(name);
    }
    let manifest = PoolManifest { format_version: POOL_FORMAT_VERSION, dim, experts: names };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_pool(dir: &Path) -> Result<Vec<Vec<f64>>> {
    let manifest: PoolManifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
    if manifest.format_version != POOL_FORMAT_VERSION {
        return Err(Error::config("format_version", format!("unsupported pool version {}", manifest.format_version)));
    }
    manifest
        .experts
        .iter()
        .map(|name| {
            let e: Vec<f64> = serde_json::from_slice(&std::fs::read(dir.join(name))?)?;
            if e.len() != manifest.dim {
                return Err(Error::config(
                    "dim",
                    format!("{name} has {} parameters, manifest says {}", e.len(), manifest.dim),
                ));
            }
            Ok(e)
        })
        .collect()
}
