use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::{FeatureVector, GazeDirection};
use crate::losses::{self, LossComponents};
use crate::optim::Optimizer;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::dataset::{BankSet, GazeDataset, GazeSample};
use super::model::GazeModel;

/// Banks stacked into one matrix, with each subject's row block.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBanks {
    rows: Tensor,
    blocks: BTreeMap<String, (usize, usize)>,
}

impl PreparedBanks {
    /// Stacks the banks of `subjects`; identical banks are stored once, so
    /// a per-identity set whose entries are all equal stacks exactly like
    /// the shared bank.
    pub fn new(banks: &BankSet, subjects: &[String]) -> Result<Self> {
        let s = banks.stacked(subjects)?;
        Ok(Self {
            rows: s.rows,
            blocks: s.blocks,
        })
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn block(&self, subject: &str) -> Result<(usize, usize)> {
        self.blocks
            .get(subject)
            .copied()
            .ok_or_else(|| Error::MissingSubject(subject.to_string()))
    }

    /// `[B, K_total]` correlation weights: each row is the softmax of
    /// `cos(f_b, bank rows)` over the sample's own block, zero elsewhere.
    pub fn weights(&self, f: &Tensor, subjects: &[&str]) -> Result<Tensor> {
        let k_total = self.rows.rows();
        let mut data = vec![0.0; subjects.len() * k_total];
        for (b, subject) in subjects.iter().enumerate() {
            let (offset, len) = self.block(subject)?;
            let scores = (offset..offset + len)
                .map(|k| crate::geometry::cosine_similarity(f.row(b), self.rows.row(k)))
                .collect::<Result<Vec<_>>>()?;
            let w = losses::CorrelationWeights::from_scores(&scores)?;
            data[b * k_total + offset..b * k_total + offset + len].copy_from_slice(w.as_slice());
        }
        Ok(Tensor::new(vec![subjects.len(), k_total], data))
    }
}

/// Mutable state of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: GazeModel,
    pub optimizer: Optimizer,
    /// Stream for the rank-loss pair draws.
    pub rng: SeededRng,
    pub steps: usize,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = GazeModel::new(config.model.clone(), &mut SeededRng::derive(config.seed, "model-init"))?;
        let optimizer = Optimizer::new(config.optimizer, model.params());
        Ok(Self {
            model,
            optimizer,
            rng: SeededRng::derive(config.seed, "rank-draws"),
            steps: 0,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(c: Checkpoint) -> Self {
        Self {
            steps: c.optimizer.steps() as usize,
            model: c.model,
            optimizer: c.optimizer,
            rng: SeededRng::from_state(c.rng),
            epoch: c.epoch,
        }
    }

    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            epoch: self.epoch,
            rng: self.rng.state(),
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
        }
    }
}

/// A batch of samples with their frozen-encoder targets.
pub struct Batch<'a> {
    pub samples: Vec<&'a GazeSample>,
    pub targets: Vec<&'a FeatureVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub components: LossComponents,
    pub total: f64,
}

/// Loss terms of one batch on a graph.
pub struct BatchLoss {
    pub components: LossComponents,
    pub vars: [Var; 4],
    pub total: Var,
}

/// Builds all loss terms for `batch` on `g`. The total only includes terms
/// whose weight is positive; the others are still evaluated for reporting.
pub fn batch_loss(
    g: &mut Graph,
    model: &GazeModel,
    vars: &[Var],
    batch: &Batch<'_>,
    banks: &PreparedBanks,
    config: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<BatchLoss> {
    let images: Vec<_> = batch.samples.iter().map(|s| &s.image).collect();
    let x = g.leaf(model.input_tensor(&images)?);
    let out = model.forward_graph(g, vars, x);
    let labels: Vec<GazeDirection> = batch.samples.iter().map(|s| s.gaze).collect();
    let l_g = losses::gaze_loss_graph(g, out.g_hat, &losses::label_matrix(&labels));

    let mut fv = Vec::with_capacity(batch.targets.len() * model.config().feature_dim);
    for t in &batch.targets {
        if t.dim() != model.config().feature_dim {
            return Err(Error::shape("distillation target", model.config().feature_dim, t.dim()));
        }
        fv.extend(t.normalized()?.into_vec());
    }
    let fv = Tensor::new(vec![batch.targets.len(), model.config().feature_dim], fv);
    let l_d = losses::distill_loss_graph(g, out.f, &fv);

    let subjects: Vec<&str> = batch.samples.iter().map(|s| s.subject.as_str()).collect();
    if banks.rows().cols() != model.config().filtered_dim {
        return Err(Error::shape("bank width", model.config().filtered_dim, banks.rows().cols()));
    }
    let weights = banks.weights(g.value(out.f), &subjects)?;
    let l_ir = losses::irrelevant_loss_graph(g, out.f_re, banks.rows(), &weights);

    let l_re = match config.rank_objective.variant() {
        None => losses::rank_loss_graph(g, out.f_re, &labels, rng)?,
        Some(kind) => losses::rank_variant_graph(g, kind, out.f_re, &labels, &config.rank_params)?,
    };

    let components = LossComponents {
        l_g: g.value(l_g).item(),
        l_d: g.value(l_d).item(),
        l_ir: g.value(l_ir).item(),
        l_re: g.value(l_re).item(),
    };
    let w = &config.weights;
    let mut total = l_g;
    for (lambda, term) in [(w.lambda1, l_d), (w.lambda2, l_ir), (w.lambda3, l_re)] {
        if lambda > 0.0 {
            let scaled = g.scale(term, lambda);
            total = g.add(total, scaled);
        }
    }
    Ok(BatchLoss {
        components,
        vars: [l_g, l_d, l_ir, l_re],
        total,
    })
}

/// One optimizer update on `batch`.
pub fn train_step(state: &mut TrainState, batch: &Batch<'_>, banks: &PreparedBanks, config: &TrainConfig) -> Result<StepMetrics> {
    state.steps += 1;
    let lr = config.optimizer.lr();
    let mut g = Graph::new();
    let vars = state.model.bind(&mut g);
    let loss = batch_loss(&mut g, &state.model, &vars, batch, banks, config, &mut state.rng)?;
    let step = state.steps;
    let non_finite = |component: &str| Error::NonFinite {
        component: component.to_string(),
        step,
        lr,
    };
    if let Some(name) = loss.components.first_non_finite() {
        return Err(non_finite(name));
    }
    let total = g.value(loss.total).item();
    if !total.is_finite() {
        return Err(non_finite("total"));
    }
    let mut grads = g.backward(loss.total);
    let grads: Vec<Option<Tensor>> = vars.iter().map(|v| grads.take(*v)).collect();
    state.optimizer.step(state.model.params_mut(), &grads);
    if !state.model.all_finite() {
        return Err(non_finite("parameters"));
    }
    Ok(StepMetrics {
        components: loss.components,
        total,
    })
}

/// Per-epoch means of the step metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub components: LossComponents,
    pub total: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,l_g,l_d,l_ir,l_re,total,wall_seconds";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let c = &self.components;
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch, c.l_g, c.l_d, c.l_ir, c.l_re, self.total, self.wall_seconds
        )
    }
}

/// Sample indices of each batch in `epoch` (1-based). Depends only on the
/// seed, the epoch and the dataset size; trailing batches too small for the
/// rank objective are dropped.
pub fn epoch_batches(config: &TrainConfig, n: usize, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SeededRng::derive(config.seed.wrapping_add(epoch as u64), "batch-order");
    rng.shuffle(&mut order);
    let min = config.rank_objective.min_batch();
    order
        .chunks(config.batch_size)
        .filter(|c| c.len() >= min)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Borrowed training data.
pub struct TrainInputs<'a> {
    pub dataset: &'a GazeDataset,
    /// `f_v` per sample, in dataset order.
    pub targets: &'a [FeatureVector],
    pub banks: &'a BankSet,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<EpochRecord>,
    /// Last checkpoint written, when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";

fn validate_inputs(inputs: &TrainInputs<'_>, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    let ds = inputs.dataset;
    if ds.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if ds.len() < config.rank_objective.min_batch() {
        return Err(Error::Config(format!(
            "training set has {} samples, the rank objective needs batches of at least {}",
            ds.len(),
            config.rank_objective.min_batch()
        )));
    }
    if inputs.targets.len() != ds.len() {
        return Err(Error::shape("distillation targets", ds.len(), inputs.targets.len()));
    }
    ds.expect_shape(config.model.image_shape)
}

/// Runs `config.epochs` epochs from a fresh initialization. With `out_dir`,
/// writes `metrics.csv` as epochs finish and replaces `checkpoint.bin`
/// atomically after each epoch.
pub fn train(inputs: &TrainInputs<'_>, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_from(inputs, config, TrainState::new(config)?, out_dir)
}

/// Continues `state` until `config.epochs` epochs are complete.
pub fn train_from(inputs: &TrainInputs<'_>, config: &TrainConfig, mut state: TrainState, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    validate_inputs(inputs, config)?;
    let banks = PreparedBanks::new(inputs.banks, &inputs.dataset.subjects())?;
    let mut metrics = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if state.epoch == 0 {
                f.set_len(0).map_err(|e| Error::io(&path, e))?;
                writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
            }
            Some((f, path))
        }
        None => None,
    };
    let mut log = Vec::new();
    let mut checkpoint = None;
    while state.epoch < config.epochs {
        let epoch = state.epoch + 1;
        let started = Instant::now();
        let mut sums = LossComponents::default();
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in epoch_batches(config, inputs.dataset.len(), epoch) {
            let batch = Batch {
                samples: idx.iter().map(|&i| &inputs.dataset.samples[i]).collect(),
                targets: idx.iter().map(|&i| &inputs.targets[i]).collect(),
            };
            let m = train_step(&mut state, &batch, &banks, config)?;
            let n = idx.len() as f64;
            sums.l_g += m.components.l_g * n;
            sums.l_d += m.components.l_d * n;
            sums.l_ir += m.components.l_ir * n;
            sums.l_re += m.components.l_re * n;
            total += m.total * n;
            count += idx.len();
        }
        let n = count.max(1) as f64;
        state.epoch = epoch;
        let record = EpochRecord {
            epoch,
            components: LossComponents {
                l_g: sums.l_g / n,
                l_d: sums.l_d / n,
                l_ir: sums.l_ir / n,
                l_re: sums.l_re / n,
            },
            total: total / n,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: l_g {:.4} l_d {:.4} l_ir {:.4} l_re {:.4} total {:.4}",
            record.components.l_g,
            record.components.l_d,
            record.components.l_ir,
            record.components.l_re,
            record.total
        );
        if let Some(dir) = out_dir {
            let path = dir.join(CHECKPOINT_FILE);
            state.checkpoint(config).save(&path)?;
            checkpoint = Some(path);
        }
        if let Some((f, path)) = metrics.as_mut() {
            writeln!(f, "{}", record.csv_row())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        log.push(record);
    }
    Ok(TrainOutcome { state, log, checkpoint })
}

/// Renders a metrics log as CSV text.
pub fn metrics_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in log {
        writeln!(out, "{}", r.csv_row()).expect("string write");
    }
    out
}
