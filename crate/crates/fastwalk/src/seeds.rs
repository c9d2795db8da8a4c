//! Seed files: a JSON list of `{"index": <flat voxel index>, "label": <k>}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub index: usize,
    pub label: usize,
}

pub fn parse_seeds(text: &str) -> serde_json::Result<Vec<(usize, usize)>> {
    let list: Vec<Seed> = serde_json::from_str(text)?;
    Ok(list.into_iter().map(|s| (s.index, s.label)).collect())
}

pub fn load_seeds(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_seeds(&text).map_err(|e| Error::format(path, format!("bad seed list: {e}")))
}

pub fn save_seeds(seeds: &[(usize, usize)], path: &Path) -> Result<()> {
    let list: Vec<Seed> = seeds.iter().map(|&(index, label)| Seed { index, label }).collect();
    let text = serde_json::to_string(&list).expect("serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
