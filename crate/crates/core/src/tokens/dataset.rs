use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Schedule, TokenSequence};
use crate::error::{ensure, Error, Result};

pub const TOKEN_INDEX_FILE: &str = "index.jsonl";
pub const TOKEN_DATA_FILE: &str = "tokens.u16";

/// One tokenized clip: encoder input (empty for decoder-only data) and target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedExample {
    pub clip_id: String,
    pub featurization: String,
    pub input: TokenSequence,
    pub target: TokenSequence,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizedDataset {
    pub examples: Vec<TokenizedExample>,
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    clip_id: String,
    featurization: String,
    input_offset: usize,
    input_schedule: Schedule,
    target_offset: usize,
    target_schedule: Schedule,
}

impl TokenizedDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Writes `index.jsonl` and the concatenated little-endian `u16` ids.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut data = Vec::new();
        let mut index = String::new();
        let mut offset = 0;
        for ex in &self.examples {
            let rec = IndexRecord {
                clip_id: ex.clip_id.clone(),
                featurization: ex.featurization.clone(),
                input_offset: offset,
                input_schedule: ex.input.schedule.clone(),
                target_offset: offset + ex.input.len(),
                target_schedule: ex.target.schedule.clone(),
            };
            for id in ex.input.ids.iter().chain(&ex.target.ids) {
                data.extend_from_slice(&id.to_le_bytes());
            }
            offset += ex.input.len() + ex.target.len();
            index.push_str(&serde_json::to_string(&rec)?);
            index.push('\n');
        }
        let p = dir.join(TOKEN_DATA_FILE);
        fs::write(&p, data).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(TOKEN_INDEX_FILE);
        fs::write(&p, index).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(TOKEN_DATA_FILE);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        ensure!(bytes.len() % 2 == 0, Format, "{} has an odd byte count", p.display());
        let ids: Vec<u16> = bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
        let p = dir.join(TOKEN_INDEX_FILE);
        let f = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
        let mut examples = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&p, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: IndexRecord = serde_json::from_str(&line)?;
            let slice = |start: usize, sched: &Schedule| -> Result<TokenSequence> {
                let end = start + sched.len();
                ensure!(end <= ids.len(), Format, "record {} overruns the token file", rec.clip_id);
                TokenSequence::new(ids[start..end].to_vec(), sched.clone())
            };
            examples.push(TokenizedExample {
                input: slice(rec.input_offset, &rec.input_schedule)?,
                target: slice(rec.target_offset, &rec.target_schedule)?,
                clip_id: rec.clip_id,
                featurization: rec.featurization,
            });
        }
        Ok(Self { examples })
    }
}
