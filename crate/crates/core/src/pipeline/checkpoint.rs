use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{write_file, ByteReader};
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::model::GazeModel;

const MAGIC: &[u8; 8] = b"GZCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    epoch: usize,
    config: TrainConfig,
    rng: RngState,
    optimizer_step: u64,
    shapes: Vec<Vec<usize>>,
}

/// A resumable snapshot of a training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: RngState,
    pub model: GazeModel,
    pub optimizer: Optimizer,
}

impl Checkpoint {
    /// Layout: 8-byte magic, `u32` version, `u64` header length, JSON header
    /// (config, epoch, rng state, optimizer step, parameter shapes), then
    /// little-endian `f64` parameters followed by both optimizer moment
    /// buffers in parameter order. Written atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            epoch: self.epoch,
            config: self.config.clone(),
            rng: self.rng,
            optimizer_step: self.optimizer.steps(),
            shapes: self.model.params().iter().map(|p| p.shape().to_vec()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(json.len() + 24 + 24 * self.model.num_parameters());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        let (m, v) = self.optimizer.moments();
        let arrays = self.model.params().iter().map(Tensor::data).chain(m.iter().map(Vec::as_slice)).chain(v.iter().map(Vec::as_slice));
        for a in arrays {
            for x in a {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        write_file(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
        let mut r = ByteReader::new(&bytes);
        if r.take(8).ok() != Some(&MAGIC[..]) {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)?;
        let mut read = |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| r.f64()).collect() };
        let mut params = Vec::new();
        for s in &header.shapes {
            params.push(Tensor::new(s.clone(), read(s.iter().product())?));
        }
        let sizes: Vec<usize> = header.shapes.iter().map(|s| s.iter().product()).collect();
        let m = sizes.iter().map(|&n| read(n)).collect::<Result<Vec<_>>>()?;
        let v = sizes.iter().map(|&n| read(n)).collect::<Result<Vec<_>>>()?;
        if !r.is_done() {
            return Err(bad("trailing bytes"));
        }
        let model = GazeModel::from_params(header.config.model.clone(), params)?;
        let optimizer = Optimizer::restore(header.config.optimizer, header.optimizer_step, m, v);
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            rng: header.rng,
            model,
            optimizer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::train::TrainState;

    #[test]
    fn round_trip_preserves_everything() {
        let mut config = TrainConfig::desk();
        config.seed = 11;
        let mut state = TrainState::new(&config).unwrap();
        state.epoch = 3;
        state.rng.normal();
        let c = state.checkpoint(&config);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.config, config);
        assert_eq!(back.epoch, 3);
        assert_eq!(back.rng, c.rng);
        assert_eq!(back.model.params(), c.model.params());
        assert_eq!(back.optimizer.moments(), c.optimizer.moments());
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
        let config = TrainConfig::desk();
        TrainState::new(&config).unwrap().checkpoint(&config).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
