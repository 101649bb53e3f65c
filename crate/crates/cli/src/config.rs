//! Config resolution: command-line flags over the config file over the
//! built-in preset.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gazesep::losses::LossWeights;
use gazesep::optim::OptimizerConfig;
use gazesep::pipeline::{BankSource, RankObjective, TrainConfig};
use gazesep::taxonomy::parse_groups;

use crate::failure::{Failure, Outcome};

/// Starting point before the config file and flags are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 32x32 images and 128-wide features; runs in seconds on a CPU.
    Desk,
    /// 224x224 images, 512-wide features and batch 128.
    Reference,
}

impl Preset {
    pub fn config(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Reference => TrainConfig::default(),
        }
    }
}

/// Named loss-weight settings for ablation grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Gaze loss only, `lambda = (0, 0, 0)`.
    Baseline,
    /// Adds distillation, `(1, 0, 0)`.
    Distill,
    /// Adds the irrelevant-feature loss, `(1, 1, 0)`.
    DistillIrrelevant,
    /// All terms with the rank loss, `(1, 1, 1)`.
    Full,
    Cr,
    L1,
    L2,
    Kl,
}

impl Ablation {
    pub fn apply(self, config: &mut TrainConfig) {
        let (w, objective) = match self {
            Ablation::Baseline => ((0.0, 0.0, 0.0), RankObjective::Rank),
            Ablation::Distill => ((1.0, 0.0, 0.0), RankObjective::Rank),
            Ablation::DistillIrrelevant => ((1.0, 1.0, 0.0), RankObjective::Rank),
            Ablation::Full => ((1.0, 1.0, 1.0), RankObjective::Rank),
            Ablation::Cr => ((1.0, 1.0, 1.0), RankObjective::Cr),
            Ablation::L1 => ((1.0, 1.0, 1.0), RankObjective::L1),
            Ablation::L2 => ((1.0, 1.0, 1.0), RankObjective::L2),
            Ablation::Kl => ((1.0, 1.0, 1.0), RankObjective::Kl),
        };
        config.weights = LossWeights {
            lambda1: w.0,
            lambda2: w.1,
            lambda3: w.2,
        };
        config.rank_objective = objective;
    }
}

/// Flags that override training config fields.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// Built-in defaults the config file and flags are layered on.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Loss-weight preset; individual --lambda flags still win.
    #[arg(long, value_enum)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate of the configured optimizer.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    /// rank, cr, l1, l2 or kl.
    #[arg(long)]
    pub rank_objective: Option<String>,
    /// Taxonomy file, or `default` for the shipped one.
    #[arg(long)]
    pub taxonomy: Option<String>,
    /// Comma-separated factor groups (appearance, wearable, quality).
    #[arg(long)]
    pub groups: Option<String>,
    /// Saved bank file to use instead of building one from templates.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Tuned prompt state; builds per-identity banks with --identities.
    #[arg(long, requires = "identities")]
    pub prompt_state: Option<PathBuf>,
    /// Identity coefficient table (`subject_id,c_1,...`).
    #[arg(long)]
    pub identities: Option<PathBuf>,
    /// One bank copy per subject.
    #[arg(long)]
    pub per_identity_banks: bool,
    /// Prompt embedding table used instead of the mock text encoder.
    #[arg(long)]
    pub text_table: Option<PathBuf>,
}

/// Overlays `overlay` onto `base` key by key. Tables carrying a `kind` tag
/// select an enum variant and replace the base value whole.
fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) if !o.contains_key("kind") => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, o) => *slot = o,
    }
}

pub fn require_file(flag: &str, path: &Path) -> Outcome<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{flag}: no such file: {}", path.display())))
    }
}

/// Resolves `default` or a path given to `--taxonomy`.
pub fn taxonomy_path(value: &str) -> Outcome<Option<PathBuf>> {
    if value == "default" {
        return Ok(None);
    }
    let path = PathBuf::from(value);
    require_file("--taxonomy", &path)?;
    Ok(Some(path))
}

pub fn resolve(config_file: Option<&Path>, seed: Option<u64>, flags: &ConfigFlags) -> Outcome<TrainConfig> {
    let preset = flags.preset.unwrap_or(Preset::Desk).config();
    let mut config = match config_file {
        Some(path) => {
            require_file("--config", path)?;
            let text = std::fs::read_to_string(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
            let overlay: toml::Table =
                toml::from_str(&text).map_err(|e| Failure::usage(format!("--config {}: {e}", path.display())))?;
            let mut value = toml::Value::try_from(&preset).expect("config serializes");
            merge(&mut value, toml::Value::Table(overlay));
            value
                .try_into::<TrainConfig>()
                .map_err(|e| Failure::usage(format!("--config {}: {e}", path.display())))?
        }
        None => preset,
    };
    if let Some(a) = flags.ablation {
        a.apply(&mut config);
    }
    if let Some(v) = flags.epochs {
        config.epochs = v;
    }
    if let Some(v) = flags.batch_size {
        config.batch_size = v;
    }
    if let Some(lr) = flags.lr {
        config.optimizer = match config.optimizer {
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => OptimizerConfig::Adam { lr, beta1, beta2, eps },
            OptimizerConfig::Sgd { momentum, .. } => OptimizerConfig::Sgd { lr, momentum },
        };
    }
    if let Some(v) = flags.lambda1 {
        config.weights.lambda1 = v;
    }
    if let Some(v) = flags.lambda2 {
        config.weights.lambda2 = v;
    }
    if let Some(v) = flags.lambda3 {
        config.weights.lambda3 = v;
    }
    if let Some(s) = &flags.rank_objective {
        config.rank_objective = s.parse().map_err(|e| Failure::usage(format!("--rank-objective: {e}")))?;
    }
    if let Some(t) = &flags.taxonomy {
        config.taxonomy = taxonomy_path(t)?;
    }
    if let Some(g) = &flags.groups {
        config.groups = Some(parse_groups(g).map_err(|e| Failure::usage(format!("--groups: {e}")))?);
    }
    if let Some(path) = &flags.bank {
        require_file("--bank", path)?;
        config.bank = BankSource::File { path: path.clone() };
    }
    if let Some(state) = &flags.prompt_state {
        let ids = flags.identities.clone().expect("clap enforces --identities");
        require_file("--prompt-state", state)?;
        require_file("--identities", &ids)?;
        config.bank = BankSource::Pco {
            prompt_state: state.clone(),
            identities: ids,
        };
    }
    if flags.per_identity_banks {
        config.per_identity_banks = true;
    }
    if let Some(path) = &flags.text_table {
        require_file("--text-table", path)?;
        config.encoders.text_table = Some(path.clone());
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(config)
}
