//! Registry of gaze-irrelevant factors and the prompts built from them.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash;

/// The shipped default taxonomy file.
pub const DEFAULT_TAXONOMY: &str = include_str!("../data/default_taxonomy.txt");

pub const PROMPT_PREFIX: &str = "An image of a face with";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorGroup {
    Appearance,
    Wearable,
    Quality,
}

impl FactorGroup {
    pub const ALL: [FactorGroup; 3] = [FactorGroup::Appearance, FactorGroup::Wearable, FactorGroup::Quality];

    pub fn as_str(&self) -> &'static str {
        match self {
            FactorGroup::Appearance => "appearance",
            FactorGroup::Wearable => "wearable",
            FactorGroup::Quality => "quality",
        }
    }
}

impl fmt::Display for FactorGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FactorGroup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "appearance" | "a" => Ok(FactorGroup::Appearance),
            "wearable" | "w" => Ok(FactorGroup::Wearable),
            "quality" | "q" | "image quality" => Ok(FactorGroup::Quality),
            other => Err(format!("unknown factor group `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrrelevantFactor {
    pub id: usize,
    pub group: FactorGroup,
    pub description: String,
    pub negative_description: String,
}

impl IrrelevantFactor {
    pub fn new(
        id: usize,
        group: FactorGroup,
        description: impl Into<String>,
        negative_description: impl Into<String>,
    ) -> Result<Self> {
        let factor = Self {
            id,
            group,
            description: description.into(),
            negative_description: negative_description.into(),
        };
        factor.validate().map_err(Error::Config)?;
        Ok(factor)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.description.trim().is_empty() {
            return Err(format!("factor {} has an empty description", self.id));
        }
        if self.negative_description.trim().is_empty() {
            return Err(format!("factor {} has an empty negative description", self.id));
        }
        if self.description == self.negative_description {
            return Err(format!("factor {}: negative description equals the description", self.id));
        }
        Ok(())
    }

    /// Phrase for the given polarity.
    pub fn phrase(&self, polarity: Polarity) -> &str {
        match polarity {
            Polarity::Positive => &self.description,
            Polarity::Negative => &self.negative_description,
        }
    }
}

/// `"An image of a face with {phrase}."`
pub fn prompt_text(factor: &IrrelevantFactor, polarity: Polarity) -> String {
    format!("{PROMPT_PREFIX} {}.", factor.phrase(polarity))
}

/// Ordered, validated set of factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSet {
    factors: Vec<IrrelevantFactor>,
}

impl FactorSet {
    /// Checks for unique ids and valid descriptions; ids may have gaps.
    fn from_factors(factors: Vec<IrrelevantFactor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Config("factor set is empty".into()));
        }
        let mut seen = HashSet::new();
        for f in &factors {
            if !seen.insert(f.id) {
                return Err(Error::Config(format!("duplicate factor id {}", f.id)));
            }
            f.validate().map_err(Error::Config)?;
        }
        Ok(Self { factors })
    }

    /// Builds a full taxonomy; ids must be exactly `1..=K` in order.
    pub fn new(factors: Vec<IrrelevantFactor>) -> Result<Self> {
        for (i, f) in factors.iter().enumerate() {
            if f.id != i + 1 {
                return Err(Error::Config(format!(
                    "factor ids must be contiguous from 1; position {} has id {}",
                    i + 1,
                    f.id
                )));
            }
        }
        Self::from_factors(factors)
    }

    pub fn default_set() -> Self {
        Self::parse(DEFAULT_TAXONOMY, "<default taxonomy>").expect("shipped taxonomy is valid")
    }

    /// Parses the line-oriented `id | group | description | negative` format.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut factors = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('|').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::parse(origin, lineno, format!("expected 4 fields, found {}", fields.len())));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(origin, lineno, format!("invalid id `{}`", fields[0])))?;
            if !seen.insert(id) {
                return Err(Error::parse(origin, lineno, format!("duplicate id {id}")));
            }
            if id != factors.len() + 1 {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("id {id} breaks contiguous numbering (expected {})", factors.len() + 1),
                ));
            }
            let group: FactorGroup = fields[1].parse().map_err(|e: String| Error::parse(origin, lineno, e))?;
            let factor = IrrelevantFactor {
                id,
                group,
                description: fields[2].to_string(),
                negative_description: fields[3].to_string(),
            };
            factor.validate().map_err(|e| Error::parse(origin, lineno, e))?;
            factors.push(factor);
        }
        if factors.is_empty() {
            return Err(Error::parse(origin, 0, "no factors defined"));
        }
        Ok(Self { factors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factors(&self) -> &[IrrelevantFactor] {
        &self.factors
    }

    pub fn get(&self, id: usize) -> Option<&IrrelevantFactor> {
        self.factors.iter().find(|f| f.id == id)
    }

    pub fn ids(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.id).collect()
    }

    pub fn count_in(&self, group: FactorGroup) -> usize {
        self.factors.iter().filter(|f| f.group == group).count()
    }

    /// Keeps factors whose group is in `groups`, preserving order and ids.
    pub fn filter_by_groups(&self, groups: &[FactorGroup]) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Config("no factor groups selected".into()));
        }
        let kept: Vec<IrrelevantFactor> = self
            .factors
            .iter()
            .filter(|f| groups.contains(&f.group))
            .cloned()
            .collect();
        if kept.is_empty() {
            return Err(Error::Config(format!("no factors in groups {groups:?}")));
        }
        Self::from_factors(kept)
    }

    /// Keeps the listed ids in the given order.
    pub fn select_ids(&self, ids: &[usize]) -> Result<Self> {
        let kept = ids
            .iter()
            .map(|id| {
                self.get(*id)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("factor id {id} not in taxonomy")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_factors(kept)
    }

    /// Canonical text form; the checksum is computed over it.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.factors {
            out.push_str(&format!("{} | {} | {} | {}\n", f.id, f.group, f.description, f.negative_description));
        }
        out
    }

    /// SHA-256 of [`FactorSet::to_text`].
    pub fn checksum(&self) -> [u8; 32] {
        hash::sha256(self.to_text().as_bytes())
    }
}

/// Parses a comma-separated group list such as `appearance,quality`.
pub fn parse_groups(s: &str) -> Result<Vec<FactorGroup>> {
    let mut groups = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let g: FactorGroup = part.parse().map_err(Error::Config)?;
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    if groups.is_empty() {
        return Err(Error::Config("empty group list".into()));
    }
    Ok(groups)
}
