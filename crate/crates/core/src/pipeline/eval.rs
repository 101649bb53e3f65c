use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_error_deg, GazeDirection};

use super::checkpoint::Checkpoint;
use super::dataset::GazeDataset;
use super::model::GazeModel;

const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: String,
    pub target: String,
    pub mean_deg: f64,
    pub errors_deg: Vec<f64>,
    pub count: usize,
}

impl EvalReport {
    pub fn from_errors(source: impl Into<String>, target: impl Into<String>, errors_deg: Vec<f64>) -> Result<Self> {
        if errors_deg.is_empty() {
            return Err(Error::Config("no samples to evaluate".into()));
        }
        let mean_deg = errors_deg.iter().sum::<f64>() / errors_deg.len() as f64;
        Ok(Self {
            source: source.into(),
            target: target.into(),
            mean_deg,
            count: errors_deg.len(),
            errors_deg,
        })
    }

    /// `| Task | Mean (deg) |` header and a `source->target` row with two
    /// decimals.
    pub fn table(&self) -> String {
        format!(
            "| Task | Mean (deg) |\n|------|-----------:|\n| {}->{} | {:.2} |\n",
            self.source, self.target, self.mean_deg
        )
    }
}

/// Angular errors of `predictions` (any nonzero 3-vectors) against unit
/// labels.
pub fn angular_errors(predictions: &[[f64; 3]], labels: &[GazeDirection]) -> Result<Vec<f64>> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("prediction count", labels.len(), predictions.len()));
    }
    predictions
        .iter()
        .zip(labels)
        .map(|(p, g)| Ok(angular_error_deg(&GazeDirection::new(*p)?, g)))
        .collect()
}

/// Unnormalized predictions `g_hat` for every sample.
pub fn predict(model: &GazeModel, dataset: &GazeDataset) -> Result<Vec<[f64; 3]>> {
    dataset.expect_shape(model.config().image_shape)?;
    let images: Vec<_> = dataset.samples.iter().map(|s| &s.image).collect();
    let out = model.forward_all(&images, EVAL_CHUNK)?;
    Ok((0..out.g_hat.rows())
        .map(|i| {
            let r = out.g_hat.row(i);
            [r[0], r[1], r[2]]
        })
        .collect())
}

/// Mean angular error of `model` on `dataset`; no parameters change.
pub fn evaluate(model: &GazeModel, dataset: &GazeDataset, source: &str) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let preds = predict(model, dataset)?;
    EvalReport::from_errors(source, dataset.name.clone(), angular_errors(&preds, &dataset.labels())?)
}

pub fn evaluate_checkpoint(path: &Path, dataset: &GazeDataset, source: &str) -> Result<EvalReport> {
    let c = Checkpoint::load(path)?;
    evaluate(&c.model, dataset, source)
}
