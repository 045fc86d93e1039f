use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::{Model, StepRule};
use crate::tokens::semantic_range;

/// Prefix lengths probed on 250 semantic positions.
pub const PROBE_K_GRID: [usize; 5] = [0, 25, 50, 125, 225];

/// [`PROBE_K_GRID`] rescaled to `n_semantic` positions.
pub fn scaled_k_grid(n_semantic: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = PROBE_K_GRID
        .iter()
        .map(|&k| ((k * n_semantic) as f64 / 250.0).round() as usize)
        .collect();
    ks.dedup();
    ks
}

/// A training clip's encoder input and ground-truth semantic target codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeClip {
    pub clip_id: String,
    pub input: Vec<u16>,
    pub semantic: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub k: usize,
    pub trials: usize,
    pub exact_matches: usize,
    pub match_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub results: Vec<ProbeResult>,
}

/// Prompts the decoder with the first `k` ground-truth semantic codes,
/// decodes the remaining semantic positions greedily and counts clips whose
/// continuation matches the ground truth exactly. Decoding is restricted to
/// the first `semantic_k` semantic ids.
pub fn memorization_probe(model: &Model, clips: &[ProbeClip], k_grid: &[usize], semantic_k: usize) -> Result<MemorizationReport> {
    let full = semantic_range();
    let sem = full.start..full.start + semantic_k.min(full.len()) as u32;
    let mut results = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let mut matches = 0;
        for clip in clips {
            let n = clip.semantic.len();
            ensure!(k <= n, Precondition, "k = {k} exceeds the {n} semantic positions of {}", clip.clip_id);
            ensure!(clip.semantic.iter().all(|&c| sem.contains(&(c as u32))), Precondition, "semantic code out of range");
            model.check_lengths(clip.input.len(), n)?;
            let ranges = vec![sem.clone(); n];
            // greedy decoding never consumes randomness
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = model.net.generate(&model.params, &clip.input, &ranges, 1.0, &mut rng, |pos| {
                if pos < k {
                    StepRule::Force(clip.semantic[pos])
                } else {
                    StepRule::Greedy
                }
            });
            if out[k..] == clip.semantic[k..] {
                matches += 1;
            }
        }
        let trials = clips.len();
        results.push(ProbeResult {
            k,
            trials,
            exact_matches: matches,
            match_rate: if trials == 0 { 0.0 } else { matches as f64 / trials as f64 },
        });
    }
    Ok(MemorizationReport { results })
}
