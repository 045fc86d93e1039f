use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{COARSE_LEVELS, N_LEVELS};
use crate::error::{ensure, Error, Result};

pub const SEMANTIC_RATE: f64 = 25.0;
pub const ACOUSTIC_FRAME_RATE: f64 = 50.0;
pub const COARSE_RATE: f64 = ACOUSTIC_FRAME_RATE * COARSE_LEVELS as f64;
pub const FINE_RATE: f64 = ACOUSTIC_FRAME_RATE * (N_LEVELS - COARSE_LEVELS) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    Semantic,
    CoarseAcoustic,
    FineAcoustic,
}

impl CodeKind {
    pub fn codes_per_second(self) -> f64 {
        match self {
            CodeKind::Semantic => SEMANTIC_RATE,
            CodeKind::CoarseAcoustic => COARSE_RATE,
            CodeKind::FineAcoustic => FINE_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSequence {
    pub codes: Vec<u16>,
    pub kind: CodeKind,
    pub codes_per_second: f64,
    pub source_duration_s: f64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: CodeKind,
    codes_per_second: f64,
    source_duration_s: f64,
    len: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl CodeSequence {
    pub fn new(codes: Vec<u16>, kind: CodeKind, source_duration_s: f64) -> Self {
        Self {
            codes,
            kind,
            codes_per_second: kind.codes_per_second(),
            source_duration_s,
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Length implied by the rate and source duration.
    pub fn expected_len(&self) -> usize {
        (self.codes_per_second * self.source_duration_s).round() as usize
    }

    /// Writes the codes as little-endian `u16` to `path` and the metadata to
    /// `path` + `.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.codes.iter().flat_map(|c| c.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let side = Sidecar {
            kind: self.kind,
            codes_per_second: self.codes_per_second,
            source_duration_s: self.source_duration_s,
            len: self.codes.len(),
        };
        let sp = sidecar_path(path);
        fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let sp = sidecar_path(path);
        let side: Sidecar =
            serde_json::from_str(&fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?)?;
        ensure!(
            bytes.len() == 2 * side.len,
            Format,
            "{} holds {} bytes, sidecar promises {} codes",
            path.display(),
            bytes.len(),
            side.len
        );
        Ok(Self {
            codes: bytes
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect(),
            kind: side.kind,
            codes_per_second: side.codes_per_second,
            source_duration_s: side.source_duration_s,
        })
    }
}

/// Acoustic codes as a frame-major `n_frames x 12` matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    pub n_frames: usize,
    pub data: Vec<u16>,
}

impl CodeMatrix {
    pub fn new(n_frames: usize, data: Vec<u16>) -> Result<Self> {
        ensure!(
            data.len() == n_frames * N_LEVELS,
            Shape,
            "{} codes do not form {n_frames} frames of {N_LEVELS} levels",
            data.len()
        );
        Ok(Self { n_frames, data })
    }

    pub fn frame(&self, i: usize) -> &[u16] {
        &self.data[i * N_LEVELS..(i + 1) * N_LEVELS]
    }

    pub fn get(&self, frame: usize, level: usize) -> u16 {
        self.data[frame * N_LEVELS + level]
    }
}

/// Flattens levels `1..=4` and `5..=12` of every frame, level-major within
/// each frame.
pub fn split_codes(m: &CodeMatrix, source_duration_s: f64) -> (CodeSequence, CodeSequence) {
    let mut coarse = Vec::with_capacity(m.n_frames * COARSE_LEVELS);
    let mut fine = Vec::with_capacity(m.n_frames * (N_LEVELS - COARSE_LEVELS));
    for f in m.data.chunks_exact(N_LEVELS) {
        coarse.extend_from_slice(&f[..COARSE_LEVELS]);
        fine.extend_from_slice(&f[COARSE_LEVELS..]);
    }
    (
        CodeSequence::new(coarse, CodeKind::CoarseAcoustic, source_duration_s),
        CodeSequence::new(fine, CodeKind::FineAcoustic, source_duration_s),
    )
}

/// Inverse of [`split_codes`].
pub fn combine_codes(coarse: &CodeSequence, fine: &CodeSequence) -> Result<CodeMatrix> {
    let fine_levels = N_LEVELS - COARSE_LEVELS;
    ensure!(
        coarse.kind == CodeKind::CoarseAcoustic && fine.kind == CodeKind::FineAcoustic,
        Shape,
        "expected coarse and fine sequences, got {:?} and {:?}",
        coarse.kind,
        fine.kind
    );
    ensure!(
        coarse.len() % COARSE_LEVELS == 0 && fine.len() % fine_levels == 0,
        Shape,
        "partial frames in coarse ({}) or fine ({}) codes",
        coarse.len(),
        fine.len()
    );
    let n = coarse.len() / COARSE_LEVELS;
    ensure!(
        fine.len() / fine_levels == n,
        Shape,
        "coarse has {n} frames, fine has {}",
        fine.len() / fine_levels
    );
    let mut data = Vec::with_capacity(n * N_LEVELS);
    for (c, f) in coarse
        .codes
        .chunks_exact(COARSE_LEVELS)
        .zip(fine.codes.chunks_exact(fine_levels))
    {
        data.extend_from_slice(c);
        data.extend_from_slice(f);
    }
    CodeMatrix::new(n, data)
}

/// Number of frames covered by a coarse sequence.
pub(crate) fn coarse_frames(coarse: &CodeSequence) -> Result<usize> {
    ensure!(
        coarse.kind == CodeKind::CoarseAcoustic,
        Shape,
        "expected coarse codes, got {:?}",
        coarse.kind
    );
    ensure!(
        coarse.len() % COARSE_LEVELS == 0,
        Shape,
        "{} coarse codes is not a whole number of frames",
        coarse.len()
    );
    Ok(coarse.len() / COARSE_LEVELS)
}
