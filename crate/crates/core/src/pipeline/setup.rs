//! Builds encoders, factor sets and banks from a [`TrainConfig`].

use std::collections::BTreeMap;

use crate::encoders::{build_feature_bank, BankPrompts, EmbeddingTableTextEncoder, FeatureBank, MockTextEncoder, MockVisionEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::pco::{load_identity_coefficients, lookup_identity, PromptState};
use crate::taxonomy::FactorSet;

use super::config::{BankSource, TrainConfig};
use super::dataset::BankSet;

/// The frozen text and image encoders of a run.
pub struct FrozenEncoders {
    pub text: Box<dyn TextEncoder>,
    pub vision: MockVisionEncoder,
}

/// Mock encoders sized to the model, or the embedding table when one is
/// configured.
pub fn frozen_encoders(config: &TrainConfig) -> Result<FrozenEncoders> {
    let d = config.model.feature_dim;
    let text: Box<dyn TextEncoder> = match &config.encoders.text_table {
        Some(path) => {
            let t = EmbeddingTableTextEncoder::load(path, config.encoders.temperature)?;
            if t.dim() != d {
                return Err(Error::shape(format!("embedding table {}", path.display()), d, t.dim()));
            }
            Box::new(t)
        }
        None => Box::new(MockTextEncoder::new(config.encoders.mock_text(d))),
    };
    let vision = MockVisionEncoder::new(config.encoders.mock_vision(d, config.model.image_shape));
    Ok(FrozenEncoders { text, vision })
}

/// The configured taxonomy restricted to the configured groups.
pub fn load_factors(config: &TrainConfig) -> Result<FactorSet> {
    let all = match &config.taxonomy {
        Some(path) => FactorSet::load(path)?,
        None => FactorSet::default_set(),
    };
    match &config.groups {
        Some(groups) => all.filter_by_groups(groups),
        None => Ok(all),
    }
}

/// Banks for `subjects` according to `config.bank`. Prompt-tuned banks are
/// always per identity.
pub fn build_banks(config: &TrainConfig, factors: &FactorSet, text: &dyn TextEncoder, subjects: &[String]) -> Result<BankSet> {
    let shared = |bank: FeatureBank| -> BankSet {
        if config.per_identity_banks {
            BankSet::PerIdentity(subjects.iter().map(|s| (s.clone(), bank.clone().with_identity(s.clone()))).collect())
        } else {
            BankSet::Shared(bank)
        }
    };
    let banks = match &config.bank {
        BankSource::Template => shared(build_feature_bank(factors, text, BankPrompts::Template)?),
        BankSource::File { path } => shared(FeatureBank::load(path, factors)?),
        BankSource::Pco { prompt_state, identities } => {
            let state = PromptState::load(prompt_state)?;
            let ids = load_identity_coefficients(identities)?;
            let mut map = BTreeMap::new();
            for s in subjects {
                let identity = lookup_identity(&ids, s)?;
                let bank = build_feature_bank(factors, text, BankPrompts::Pco { state: &state, identity })?;
                map.insert(s.clone(), bank.with_identity(s.clone()));
            }
            BankSet::PerIdentity(map)
        }
    };
    if banks.dim() != Some(config.model.filtered_dim) {
        return Err(Error::shape("bank width", config.model.filtered_dim, banks.dim().unwrap_or(0)));
    }
    Ok(banks)
}
