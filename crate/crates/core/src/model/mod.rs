//! A small transformer with hand-written backpropagation: the
//! encoder-decoder that maps vocal tokens to semantic and coarse acoustic
//! targets, and the decoder-only model that expands coarse codes to fine
//! codes.

mod config;
mod decode;
pub mod layers;
mod net;
mod optim;
mod params;
mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{ModelConfig, ModelKind, Positional};
pub use decode::{masked_distribution, sample_from, DecodeState, StepRule};
pub use net::{Dropout, Example, Forward, LossMode, Net};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use params::{analytic_param_count, ParamLayout, TensorSpec};
pub use train::{train, EvalMetrics, TrainConfig, TrainExample, TrainLogRecord, TrainOutcome};

use crate::error::{ensure, Error, Result};

const MAGIC: &[u8; 4] = b"ACM1";

/// Configuration, parameters and step counter of a trained or fresh model.
pub struct Model {
    pub net: Net,
    pub params: Vec<f32>,
    pub step: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: usize,
    tensors: Vec<TensorSpec>,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let net = Net::new(cfg);
        let params = net.layout.init(seed);
        Ok(Self { net, params, step: 0 })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Mean NLL over the loss positions of `ex` (dropout off).
    pub fn nll(&self, ex: &Example, mode: LossMode) -> Result<f64> {
        self.check_lengths(ex.input.len(), ex.target.len())?;
        let nll = self.net.nll(&self.params, ex, mode);
        let n = ex.target.len().saturating_sub(ex.loss_from);
        Ok(nll[ex.loss_from..].iter().sum::<f64>() / n.max(1) as f64)
    }

    /// Per-position NLL (zero before `loss_from`).
    pub fn nll_per_position(&self, ex: &Example, mode: LossMode) -> Result<Vec<f64>> {
        self.check_lengths(ex.input.len(), ex.target.len())?;
        Ok(self.net.nll(&self.params, ex, mode))
    }

    pub fn check_lengths(&self, input: usize, target: usize) -> Result<()> {
        let max = self.net.cfg.max_len;
        ensure!(
            input <= max && target <= max,
            Precondition,
            "sequence lengths {input}/{target} exceed max_len {max}"
        );
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_vec(&Header {
            config: self.net.cfg.clone(),
            step: self.step,
            tensors: self.net.layout.tensors.clone(),
        })?;
        let mut bytes = Vec::with_capacity(8 + header.len() + 4 * self.params.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&header);
        for p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ensure!(bytes.len() >= 8 && &bytes[..4] == MAGIC, Checkpoint, "{} is not a model checkpoint", path.display());
        let hlen = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        ensure!(bytes.len() >= 8 + hlen, Checkpoint, "truncated header");
        let header: Header = serde_json::from_slice(&bytes[8..8 + hlen])?;
        header.config.validate()?;
        let net = Net::new(header.config);
        let declared: Vec<(&str, &[usize])> = header.tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice())).collect();
        let expected: Vec<(&str, &[usize])> = net.layout.tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice())).collect();
        ensure!(declared == expected, Checkpoint, "tensor table does not match the configuration");
        let body = &bytes[8 + hlen..];
        ensure!(body.len() == 4 * net.layout.total, Checkpoint, "parameter payload has the wrong size");
        let params: Vec<f32> = body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        ensure!(params.iter().all(|p| p.is_finite()), Checkpoint, "non-finite parameter");
        Ok(Self {
            net,
            params,
            step: header.step,
        })
    }
}

#[cfg(test)]
mod tests;
