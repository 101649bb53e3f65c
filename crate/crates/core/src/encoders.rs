//! Text and vision encoders into the shared embedding space, and the
//! gaze-irrelevant feature bank built from them.
//!
//! The frozen encoders are abstracted by [`TextEncoder`] and
//! [`VisionEncoder`]. Desk-scale runs use the seeded mocks defined here;
//! real runs plug in precomputed embeddings through
//! [`EmbeddingTableTextEncoder`] or a bank file.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::FeatureVector;
use crate::hash::{self, stable_hash64};
use crate::imaging::Image;
use crate::pco::{self, IdentityCoefficients, PromptState};
use crate::rng::SeededRng;
use crate::taxonomy::{prompt_text, FactorSet, Polarity};
use crate::tensor::Tensor;

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Frozen text encoder.
///
/// Implementations accept raw text and, when they support prompt tuning,
/// sequences of token embeddings of width [`TextEncoder::token_dim`].
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Maximum number of tokens accepted on either input path.
    fn max_tokens(&self) -> usize;

    /// Softmax temperature that ships with the encoder.
    fn temperature(&self) -> f64;

    fn encode_text(&self, text: &str) -> Result<FeatureVector>;

    /// Token-embedding width, or `None` when the token path is unsupported.
    fn token_dim(&self) -> Option<usize>;

    /// Word embeddings `[n, E]` for a phrase.
    fn embed_words(&self, phrase: &str) -> Result<Tensor>;

    /// Differentiable encoding of token embeddings `[n, E]` into a unit
    /// `[1, D]` feature.
    fn encode_tokens_graph(&self, g: &mut Graph, tokens: Var) -> Result<Var>;

    fn encode_tokens(&self, tokens: &Tensor) -> Result<FeatureVector> {
        let mut g = Graph::new();
        let t = g.leaf(tokens.clone());
        let out = self.encode_tokens_graph(&mut g, t)?;
        FeatureVector::new(g.value(out).data().to_vec())
    }
}

/// Frozen image encoder.
pub trait VisionEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Expected `(H, W, C)`.
    fn input_shape(&self) -> (usize, usize, usize);

    fn encode_image(&self, image: &Image) -> Result<FeatureVector>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockTextConfig {
    pub dim: usize,
    pub token_dim: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for MockTextConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            token_dim: 64,
            max_tokens: 32,
            temperature: 0.07,
            seed: 0x7e47,
        }
    }
}

/// Deterministic stand-in for a pretrained text encoder.
///
/// Raw text is tokenized, hashed, and used to seed a standard-normal draw
/// that is then normalized. Token embeddings are zero-padded to
/// `max_tokens` rows, flattened, multiplied by a fixed seeded matrix,
/// passed through `tanh`, and normalized.
#[derive(Debug, Clone)]
pub struct MockTextEncoder {
    config: MockTextConfig,
    projection: Tensor,
}

impl MockTextEncoder {
    pub fn new(config: MockTextConfig) -> Self {
        let fan_in = config.max_tokens * config.token_dim;
        let mut rng = SeededRng::derive(config.seed, "mock-text-projection");
        let projection = Tensor::randn(&[fan_in, config.dim], 1.0 / (fan_in as f64).sqrt(), &mut rng);
        Self { config, projection }
    }

    pub fn config(&self) -> &MockTextConfig {
        &self.config
    }

    fn word_embedding(&self, word: &str) -> Vec<f64> {
        let mut key = self.config.seed.to_le_bytes().to_vec();
        key.extend_from_slice(b"word:");
        key.extend_from_slice(word.as_bytes());
        SeededRng::new(stable_hash64(&key)).normal_vec(self.config.token_dim, 1.0)
    }
}

impl TextEncoder for MockTextEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn max_tokens(&self) -> usize {
        self.config.max_tokens
    }

    fn temperature(&self) -> f64 {
        self.config.temperature
    }

    fn encode_text(&self, text: &str) -> Result<FeatureVector> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::domain("cannot encode empty text"));
        }
        if tokens.len() > self.config.max_tokens {
            return Err(Error::TokenLimit {
                len: tokens.len(),
                limit: self.config.max_tokens,
            });
        }
        let mut key = self.config.seed.to_le_bytes().to_vec();
        key.extend_from_slice(tokens.join(" ").as_bytes());
        let v = SeededRng::new(stable_hash64(&key)).normal_vec(self.config.dim, 1.0);
        FeatureVector::new(v)?.normalized()
    }

    fn token_dim(&self) -> Option<usize> {
        Some(self.config.token_dim)
    }

    fn embed_words(&self, phrase: &str) -> Result<Tensor> {
        let words = tokenize(phrase);
        if words.is_empty() {
            return Err(Error::domain(format!("phrase `{phrase}` has no tokens")));
        }
        let rows: Vec<Vec<f64>> = words.iter().map(|w| self.word_embedding(w)).collect();
        Ok(Tensor::from_rows(&rows))
    }

    fn encode_tokens_graph(&self, g: &mut Graph, tokens: Var) -> Result<Var> {
        let (n, e) = {
            let t = g.value(tokens);
            (t.rows(), t.cols())
        };
        if e != self.config.token_dim {
            return Err(Error::shape("token embedding width", self.config.token_dim, e));
        }
        if n == 0 {
            return Err(Error::domain("empty token sequence"));
        }
        if n > self.config.max_tokens {
            return Err(Error::TokenLimit {
                len: n,
                limit: self.config.max_tokens,
            });
        }
        let padded = if n < self.config.max_tokens {
            let pad = g.leaf(Tensor::zeros(&[self.config.max_tokens - n, e]));
            g.concat_rows(&[tokens, pad])
        } else {
            tokens
        };
        let flat = g.reshape(padded, &[1, self.config.max_tokens * e]);
        let w = g.leaf(self.projection.clone());
        let h = g.matmul(flat, w);
        let h = g.tanh(h);
        Ok(g.row_normalize(h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockVisionConfig {
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for MockVisionConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            height: 224,
            width: 224,
            channels: 3,
            seed: 0x5153,
        }
    }
}

/// Deterministic stand-in for a pretrained image encoder: a fixed seeded
/// affine map from flattened pixels followed by normalization.
#[derive(Debug, Clone)]
pub struct MockVisionEncoder {
    config: MockVisionConfig,
    /// `[D, H*W*C]`
    projection: Tensor,
    bias: Vec<f64>,
}

impl MockVisionEncoder {
    pub fn new(config: MockVisionConfig) -> Self {
        let pixels = config.height * config.width * config.channels;
        let mut rng = SeededRng::derive(config.seed, "mock-vision-projection");
        let projection = Tensor::randn(&[config.dim, pixels], 1.0 / (pixels as f64).sqrt(), &mut rng);
        let bias = rng.normal_vec(config.dim, 0.1);
        Self {
            config,
            projection,
            bias,
        }
    }

    pub fn config(&self) -> &MockVisionConfig {
        &self.config
    }

    /// Affine output before normalization.
    pub fn project(&self, image: &Image) -> Result<Vec<f64>> {
        image.expect_shape(self.input_shape())?;
        Ok((0..self.config.dim)
            .map(|d| {
                self.bias[d]
                    + self
                        .projection
                        .row(d)
                        .iter()
                        .zip(&image.data)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect())
    }

    /// Linear part only, applied to a pixel-space vector.
    pub fn project_linear(&self, pixels: &[f64]) -> Vec<f64> {
        (0..self.config.dim)
            .map(|d| self.projection.row(d).iter().zip(pixels).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// Transposed linear map, embedding space to pixel space.
    pub fn back_project(&self, feature: &[f64]) -> Vec<f64> {
        let pixels = self.projection.cols();
        let mut out = vec![0.0; pixels];
        for (d, f) in feature.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.projection.row(d)) {
                *o += f * w;
            }
        }
        out
    }
}

impl VisionEncoder for MockVisionEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (self.config.height, self.config.width, self.config.channels)
    }

    fn encode_image(&self, image: &Image) -> Result<FeatureVector> {
        FeatureVector::new(self.project(image)?)?.normalized()
    }
}

/// Text encoder backed by a table of externally computed prompt embeddings.
///
/// File format: one prompt per line, `prompt<TAB>v1,v2,...,vD`.
#[derive(Debug, Clone)]
pub struct EmbeddingTableTextEncoder {
    dim: usize,
    temperature: f64,
    table: HashMap<String, FeatureVector>,
}

impl EmbeddingTableTextEncoder {
    pub fn load(path: &Path, temperature: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let origin = path.display().to_string();
        let mut table = HashMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (prompt, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&origin, i + 1, "expected `prompt<TAB>values`"))?;
            let v = values
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?;
            if *dim.get_or_insert(v.len()) != v.len() {
                return Err(Error::parse(&origin, i + 1, "inconsistent embedding width"));
            }
            let f = FeatureVector::new(v).map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?;
            table.insert(prompt.to_string(), f);
        }
        let dim = dim.ok_or_else(|| Error::parse(&origin, 0, "no embeddings"))?;
        Ok(Self {
            dim,
            temperature,
            table,
        })
    }
}

impl TextEncoder for EmbeddingTableTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_tokens(&self) -> usize {
        77
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn encode_text(&self, text: &str) -> Result<FeatureVector> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no precomputed embedding for `{text}`")))
    }

    fn token_dim(&self) -> Option<usize> {
        None
    }

    fn embed_words(&self, _phrase: &str) -> Result<Tensor> {
        Err(Error::Config("precomputed text embeddings do not support prompt tuning".into()))
    }

    fn encode_tokens_graph(&self, _g: &mut Graph, _tokens: Var) -> Result<Var> {
        Err(Error::Config("precomputed text embeddings do not support prompt tuning".into()))
    }
}

/// How the bank prompts are formed.
#[derive(Clone, Copy)]
pub enum BankPrompts<'a> {
    /// Fixed text template.
    Template,
    /// Tuned context vectors conditioned on one identity.
    Pco {
        state: &'a PromptState,
        identity: &'a IdentityCoefficients,
    },
}

/// Unit-norm gaze-irrelevant features, one row per factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    vectors: Tensor,
    factor_ids: Vec<usize>,
    identity_key: Option<String>,
    taxonomy_checksum: [u8; 32],
}

impl FeatureBank {
    /// Normalizes each row; rejects non-finite or zero rows.
    pub fn new(
        rows: Vec<Vec<f64>>,
        factor_ids: Vec<usize>,
        identity_key: Option<String>,
        taxonomy_checksum: [u8; 32],
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("feature bank needs at least one row".into()));
        }
        if rows.len() != factor_ids.len() {
            return Err(Error::shape("bank factor ids", rows.len(), factor_ids.len()));
        }
        let dim = rows[0].len();
        let mut normalized = Vec::with_capacity(rows.len());
        for (k, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::shape(format!("bank row {k}"), dim, row.len()));
            }
            let f = FeatureVector::new(row)
                .and_then(|f| f.normalized())
                .map_err(|e| Error::domain(format!("bank row {k}: {e}")))?;
            normalized.push(f.into_vec());
        }
        Ok(Self {
            vectors: Tensor::from_rows(&normalized),
            factor_ids,
            identity_key,
            taxonomy_checksum,
        })
    }

    pub fn len(&self) -> usize {
        self.factor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factor_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.vectors.row(k)
    }

    /// `[K, D]` matrix of unit rows.
    pub fn matrix(&self) -> &Tensor {
        &self.vectors
    }

    pub fn factor_ids(&self) -> &[usize] {
        &self.factor_ids
    }

    pub fn identity_key(&self) -> Option<&str> {
        self.identity_key.as_deref()
    }

    pub fn taxonomy_checksum(&self) -> &[u8; 32] {
        &self.taxonomy_checksum
    }

    pub fn with_identity(mut self, key: impl Into<String>) -> Self {
        self.identity_key = Some(key.into());
        self
    }

    /// Writes the binary bank and its `.rows.txt` manifest.
    ///
    /// Layout (little endian): `b"GZBANK01"`, `u32 D`, `u32 K`,
    /// `u32 key_len`, key bytes (UTF-8, empty when absent), 32-byte taxonomy
    /// checksum, then `K * D` `f32` values row by row.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(BANK_MAGIC);
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        let key = self.identity_key.as_deref().unwrap_or("");
        buf.extend_from_slice(&(key.len() as u32).to_le_bytes());
        buf.extend_from_slice(key.as_bytes());
        buf.extend_from_slice(&self.taxonomy_checksum);
        for v in self.vectors.data() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        write_file(path, &buf)?;
        let mut manifest = String::from("# row\tfactor_id\n");
        for (row, id) in self.factor_ids.iter().enumerate() {
            manifest.push_str(&format!("{row}\t{id}\n"));
        }
        let mpath = bank_manifest_path(path);
        std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
    }

    /// Reads a bank written by [`FeatureBank::save`] and checks that it was
    /// built against `factors`.
    pub fn load(path: &Path, factors: &FactorSet) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes);
        if r.take(8)? != BANK_MAGIC {
            return Err(Error::Format(format!("{}: not a feature bank file", path.display())));
        }
        let dim = r.u32()? as usize;
        let k = r.u32()? as usize;
        let key_len = r.u32()? as usize;
        let key = String::from_utf8(r.take(key_len)?.to_vec())
            .map_err(|_| Error::Format("identity key is not UTF-8".into()))?;
        let mut checksum = [0u8; 32];
        checksum.copy_from_slice(r.take(32)?);
        if checksum != factors.checksum() {
            return Err(Error::Format(format!(
                "{}: taxonomy checksum {} does not match loaded taxonomy {}",
                path.display(),
                hash::to_hex(&checksum),
                hash::to_hex(&factors.checksum())
            )));
        }
        let mut rows = Vec::with_capacity(k);
        for _ in 0..k {
            rows.push((0..dim).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?);
        }
        if !r.is_done() {
            return Err(Error::Format("trailing bytes in bank file".into()));
        }
        let ids = read_bank_manifest(&bank_manifest_path(path))?;
        if ids != factors.ids() {
            return Err(Error::Format("bank manifest rows do not match the taxonomy order".into()));
        }
        let identity = if key.is_empty() { None } else { Some(key) };
        FeatureBank::new(rows, ids, identity, checksum)
    }
}

const BANK_MAGIC: &[u8; 8] = b"GZBANK01";

pub fn bank_manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".rows.txt");
    PathBuf::from(s)
}

fn read_bank_manifest(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let row: usize = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(&origin, i + 1, "bad row index"))?;
        let id: usize = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(&origin, i + 1, "bad factor id"))?;
        if row != ids.len() {
            return Err(Error::parse(&origin, i + 1, "rows out of order"));
        }
        ids.push(id);
    }
    Ok(ids)
}

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| Error::io(path, e))
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Encodes the positive prompt of every factor into a bank.
pub fn build_feature_bank(factors: &FactorSet, encoder: &dyn TextEncoder, prompts: BankPrompts<'_>) -> Result<FeatureBank> {
    let mut rows = Vec::with_capacity(factors.len());
    for factor in factors.factors() {
        let f = match prompts {
            BankPrompts::Template => encoder.encode_text(&prompt_text(factor, Polarity::Positive))?,
            BankPrompts::Pco { state, identity } => {
                let tokens = pco::conditional_prompt(state, identity, factor, Polarity::Positive, encoder)?;
                encoder.encode_tokens(&tokens)?
            }
        };
        rows.push(f.into_vec());
    }
    FeatureBank::new(rows, factors.ids(), None, factors.checksum())
}

/// Like [`build_feature_bank`], but selects the mode from optional PCO
/// inputs and reports a configuration error when PCO mode lacks them.
pub fn build_feature_bank_checked(
    factors: &FactorSet,
    encoder: &dyn TextEncoder,
    use_pco: bool,
    state: Option<&PromptState>,
    identity: Option<&IdentityCoefficients>,
) -> Result<FeatureBank> {
    if !use_pco {
        return build_feature_bank(factors, encoder, BankPrompts::Template);
    }
    match (state, identity) {
        (Some(state), Some(identity)) => build_feature_bank(factors, encoder, BankPrompts::Pco { state, identity }),
        (None, _) => Err(Error::Config("pco bank requires a prompt state".into())),
        (_, None) => Err(Error::Config("pco bank requires identity coefficients".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cosine_similarity;
    use crate::taxonomy::{FactorGroup, IrrelevantFactor};

    fn small_text() -> MockTextEncoder {
        MockTextEncoder::new(MockTextConfig {
            dim: 32,
            token_dim: 16,
            max_tokens: 12,
            temperature: 0.07,
            seed: 3,
        })
    }

    /// Independent re-derivation of the mock's raw-text construction.
    fn reference_text_vector(seed: u64, dim: usize, tokens: &[&str]) -> Vec<f64> {
        let mut key = seed.to_le_bytes().to_vec();
        key.extend_from_slice(tokens.join(" ").as_bytes());
        let mut rng = SeededRng::new(stable_hash64(&key));
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn mock_text_matches_hash_construction() {
        let enc = small_text();
        let got = enc.encode_text("An image of a face with a beard.").unwrap();
        let want = reference_text_vector(3, 32, &["an", "image", "of", "a", "face", "with", "a", "beard"]);
        assert_eq!(got.as_slice(), want.as_slice());
        assert_eq!(enc.encode_text("An image of a face with a beard.").unwrap(), got);
    }

    #[test]
    fn mock_text_token_limit() {
        let enc = small_text();
        let long = "word ".repeat(13);
        assert!(matches!(enc.encode_text(&long), Err(Error::TokenLimit { len: 13, limit: 12 })));
        let tokens = Tensor::zeros(&[13, 16]);
        assert!(matches!(enc.encode_tokens(&tokens), Err(Error::TokenLimit { .. })));
        assert!(enc.encode_text("  ... ").is_err());
    }

    #[test]
    fn distinct_default_prompts_are_not_parallel() {
        let enc = MockTextEncoder::new(MockTextConfig::default());
        let set = FactorSet::default_set();
        let bank = build_feature_bank(&set, &enc, BankPrompts::Template).unwrap();
        let mut max_sim = f64::NEG_INFINITY;
        for i in 0..bank.len() {
            for j in i + 1..bank.len() {
                let s = cosine_similarity(bank.row(i), bank.row(j)).unwrap();
                assert!(s > -1.0 && s < 1.0);
                max_sim = max_sim.max(s);
            }
        }
        // Regression value for D = 512 on the shipped taxonomy; independent
        // Gaussian directions in 512 dims stay well below 0.25.
        assert!(max_sim < 0.25, "max pairwise similarity {max_sim}");
    }

    #[test]
    fn vision_mock_is_affine_in_pixels() {
        let enc = MockVisionEncoder::new(MockVisionConfig {
            dim: 8,
            height: 4,
            width: 4,
            channels: 3,
            seed: 1,
        });
        let zero = Image::zeros(4, 4, 3);
        assert_eq!(enc.project(&zero).unwrap(), enc.bias);
        assert_eq!(enc.encode_image(&zero).unwrap(), enc.encode_image(&zero).unwrap());
        let mut bumped = zero.clone();
        let p = bumped.index(2, 1, 0);
        bumped.data[p] = 0.5;
        let a = enc.project(&zero).unwrap();
        let b = enc.project(&bumped).unwrap();
        for d in 0..8 {
            let expect = 0.5 * enc.projection.row(d)[p];
            assert!((b[d] - a[d] - expect).abs() < 1e-15);
        }
        let diff_norm = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let mut delta = vec![0.0; 48];
        delta[p] = 0.5;
        let proj_norm = enc.project_linear(&delta).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((diff_norm - proj_norm).abs() < 1e-14);
        let wrong = Image::zeros(5, 4, 3);
        assert!(matches!(enc.encode_image(&wrong), Err(Error::Shape { .. })));
    }

    #[test]
    fn back_projection_is_the_transpose() {
        let enc = MockVisionEncoder::new(MockVisionConfig {
            dim: 5,
            height: 2,
            width: 3,
            channels: 1,
            seed: 9,
        });
        let mut rng = SeededRng::new(4);
        let f = rng.normal_vec(5, 1.0);
        let x = rng.normal_vec(6, 1.0);
        let lhs: f64 = enc.project_linear(&x).iter().zip(&f).map(|(a, b)| a * b).sum();
        let rhs: f64 = enc.back_project(&f).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn single_factor_bank_equals_normalized_prompt() {
        let enc = small_text();
        let f = IrrelevantFactor::new(1, FactorGroup::Wearable, "a hat", "no hat").unwrap();
        let set = FactorSet::new(vec![f.clone()]).unwrap();
        let bank = build_feature_bank(&set, &enc, BankPrompts::Template).unwrap();
        assert_eq!(bank.len(), 1);
        let direct = enc.encode_text(&prompt_text(&f, Polarity::Positive)).unwrap().normalized().unwrap();
        assert_eq!(bank.row(0), direct.as_slice());
        assert_eq!(bank, build_feature_bank(&set, &enc, BankPrompts::Template).unwrap());
    }

    #[test]
    fn bank_rows_unit_norm_and_checked_mode() {
        let enc = small_text();
        let set = FactorSet::default_set();
        let bank = build_feature_bank(&set, &enc, BankPrompts::Template).unwrap();
        for k in 0..bank.len() {
            let n: f64 = bank.row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let err = build_feature_bank_checked(&set, &enc, true, None, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn bank_file_round_trip_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        let enc = small_text();
        let set = FactorSet::default_set();
        let bank = build_feature_bank(&set, &enc, BankPrompts::Template).unwrap().with_identity("s01");
        bank.save(&path).unwrap();
        let back = FeatureBank::load(&path, &set).unwrap();
        assert_eq!(back.len(), bank.len());
        assert_eq!(back.identity_key(), Some("s01"));
        for k in 0..bank.len() {
            for (a, b) in back.row(k).iter().zip(bank.row(k)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        let other = set.filter_by_groups(&[FactorGroup::Quality]).unwrap();
        assert!(matches!(FeatureBank::load(&path, &other), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_degenerate_rows() {
        assert!(FeatureBank::new(vec![vec![0.0, 0.0]], vec![1], None, [0; 32]).is_err());
        assert!(FeatureBank::new(vec![vec![1.0, f64::NAN]], vec![1], None, [0; 32]).is_err());
        assert!(FeatureBank::new(vec![vec![1.0, 0.0], vec![1.0]], vec![1, 2], None, [0; 32]).is_err());
    }
}
