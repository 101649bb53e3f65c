use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::{MockTextConfig, MockVisionConfig};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, RankParams, RankVariant};
use crate::optim::OptimizerConfig;
use crate::taxonomy::FactorGroup;

/// Which pairwise objective fills the `lambda3` slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankObjective {
    /// Sampled pairwise hinge on similarity order.
    Rank,
    Cr,
    L1,
    L2,
    Kl,
}

impl RankObjective {
    pub fn variant(&self) -> Option<RankVariant> {
        match self {
            RankObjective::Rank => None,
            RankObjective::Cr => Some(RankVariant::Cr),
            RankObjective::L1 => Some(RankVariant::L1),
            RankObjective::L2 => Some(RankVariant::L2),
            RankObjective::Kl => Some(RankVariant::Kl),
        }
    }

    /// Smallest batch the objective is defined on.
    pub fn min_batch(&self) -> usize {
        match self {
            RankObjective::Rank => 3,
            _ => 2,
        }
    }
}

impl std::str::FromStr for RankObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rank" => Ok(RankObjective::Rank),
            other => Ok(match other.parse::<RankVariant>()? {
                RankVariant::Cr => RankObjective::Cr,
                RankVariant::L1 => RankObjective::L1,
                RankVariant::L2 => RankObjective::L2,
                RankVariant::Kl => RankObjective::Kl,
            }),
        }
    }
}

/// Reference convolutional backbone, filter and head dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `[H, W, C]` of input images.
    pub image_shape: [usize; 3],
    /// Output channels of the stride-2 3x3 convolution blocks.
    pub channels: Vec<usize>,
    /// Backbone feature width `D`.
    pub feature_dim: usize,
    /// Filtered feature width `D_re`.
    pub filtered_dim: usize,
    /// Hidden width of the filter.
    pub filter_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_shape: [224, 224, 3],
            channels: vec![8, 16, 32, 32],
            feature_dim: 512,
            filtered_dim: 512,
            filter_hidden: 512,
        }
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            image_shape: [32, 32, 3],
            channels: vec![8, 16, 32, 32],
            feature_dim: 128,
            filtered_dim: 128,
            filter_hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.image_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("backbone needs at least one block with positive channels".into()));
        }
        if self.feature_dim == 0 || self.filtered_dim == 0 || self.filter_hidden == 0 {
            return Err(Error::Config("feature, filtered and hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Where the gaze-irrelevant feature bank comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BankSource {
    /// Fixed prompt template through the text encoder.
    Template,
    /// Tuned prompts conditioned on identity coefficients.
    Pco { prompt_state: PathBuf, identities: PathBuf },
    /// A saved bank file.
    File { path: PathBuf },
}

/// Frozen encoder selection. Mock encoders take their width from the model
/// config and their input shape from the image shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub text_seed: u64,
    pub vision_seed: u64,
    pub token_dim: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    /// Precomputed prompt embeddings (`prompt<TAB>v1,v2,...`) used instead of
    /// the mock text encoder.
    pub text_table: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let text = MockTextConfig::default();
        Self {
            text_seed: text.seed,
            vision_seed: MockVisionConfig::default().seed,
            token_dim: text.token_dim,
            max_tokens: text.max_tokens,
            temperature: text.temperature,
            text_table: None,
        }
    }
}

impl EncoderConfig {
    pub fn mock_text(&self, dim: usize) -> MockTextConfig {
        MockTextConfig {
            dim,
            token_dim: self.token_dim,
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            seed: self.text_seed,
        }
    }

    pub fn mock_vision(&self, dim: usize, image_shape: [usize; 3]) -> MockVisionConfig {
        MockVisionConfig {
            dim,
            height: image_shape[0],
            width: image_shape[1],
            channels: image_shape[2],
            seed: self.vision_seed,
        }
    }
}

/// Everything a training run needs besides data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub rank_objective: RankObjective,
    pub rank_params: RankParams,
    pub model: ModelConfig,
    /// Adam at `1e-3` unless overridden.
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub bank: BankSource,
    /// One bank per subject instead of a shared bank.
    pub per_identity_banks: bool,
    pub encoders: EncoderConfig,
    /// Taxonomy file; the shipped default when absent.
    pub taxonomy: Option<PathBuf>,
    /// Restricts the bank to these factor groups.
    pub groups: Option<Vec<FactorGroup>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 30,
            weights: LossWeights::default(),
            rank_objective: RankObjective::Rank,
            rank_params: RankParams::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            bank: BankSource::Template,
            per_identity_banks: false,
            encoders: EncoderConfig::default(),
            taxonomy: None,
            groups: None,
        }
    }
}

impl TrainConfig {
    /// Small images, narrow features and a smaller batch for CPU runs.
    pub fn desk() -> Self {
        Self {
            batch_size: 32,
            epochs: 30,
            model: ModelConfig::desk(),
            optimizer: OptimizerConfig::adam(3e-3),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.weights.lambda3 > 0.0 && self.batch_size < self.rank_objective.min_batch() {
            return Err(Error::Config(format!(
                "batch_size {} is below the {} needed by the rank objective",
                self.batch_size,
                self.rank_objective.min_batch()
            )));
        }
        if !(self.optimizer.lr() > 0.0) || !self.optimizer.lr().is_finite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.encoders.temperature > 0.0) {
            return Err(Error::Config("encoder temperature must be positive".into()));
        }
        if !self.rank_params.threshold_deg.is_finite() || !self.rank_params.margin.is_finite() {
            return Err(Error::Config("rank parameters must be finite".into()));
        }
        if let Some(groups) = &self.groups {
            if groups.is_empty() {
                return Err(Error::Config("groups must not be empty".into()));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
