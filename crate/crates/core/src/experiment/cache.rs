use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const STAGE_MARKER: &str = "stage.json";

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn content_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Marker {
    stage: String,
    key: String,
    version: String,
}

/// Outcome of one cached stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub key: String,
    pub dir: PathBuf,
    pub cache_hit: bool,
}

pub fn stage_dir(root: &Path, stage: &str, key: &str) -> PathBuf {
    root.join(stage).join(&key[..16])
}

/// Runs `build` into the stage directory unless a completed run with the
/// same key is already there. The marker is written last, so an
/// interrupted stage is rebuilt from scratch.
pub fn run_stage(root: &Path, stage: &str, key: &str, build: impl FnOnce(&Path) -> Result<()>) -> Result<StageStatus> {
    let dir = stage_dir(root, stage, key);
    let marker_path = dir.join(STAGE_MARKER);
    let done = fs::read_to_string(&marker_path)
        .ok()
        .and_then(|t| serde_json::from_str::<Marker>(&t).ok())
        .is_some_and(|m| m.key == key && m.stage == stage);
    if done {
        log::info!("{stage}: cache hit {}", &key[..16]);
        return Ok(StageStatus {
            stage: stage.into(),
            key: key.into(),
            dir,
            cache_hit: true,
        });
    }
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    log::info!("{stage}: building {}", &key[..16]);
    build(&dir)?;
    let marker = Marker {
        stage: stage.into(),
        key: key.into(),
        version: super::VERSION.into(),
    };
    let tmp = dir.join(format!("{STAGE_MARKER}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(&marker)? + "\n").map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &marker_path).map_err(|e| Error::io(&marker_path, e))?;
    Ok(StageStatus {
        stage: stage.into(),
        key: key.into(),
        dir,
        cache_hit: false,
    })
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
