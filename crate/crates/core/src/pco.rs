//! Personalized context optimization.
//!
//! A shared set of `L` learnable context vectors is shifted by an
//! identity-conditioned token `pi = meta_net(f_m)` and prepended to the word
//! embeddings of a factor phrase. The context and the Meta-Net are tuned on a
//! binary attribute task: for each example the tuned positive and negative
//! prompts compete through a temperature softmax against the image feature.
//!
//! Both polarities receive the same conditioned context.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Graph, Var};
use crate::encoders::{write_file, ByteReader, TextEncoder};
use crate::error::{Error, Result};
use crate::geometry::{cosine_similarity, FeatureVector};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::SeededRng;
use crate::taxonomy::{FactorSet, IrrelevantFactor, Polarity};
use crate::tensor::Tensor;

pub const DEFAULT_CONTEXT_LEN: usize = 16;
pub const DEFAULT_IDENTITY_DIM: usize = 80;
const CONTEXT_INIT_STD: f64 = 0.02;

/// Identity-shape coefficients of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCoefficients(Vec<f64>);

impl IdentityCoefficients {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("identity coefficients must be finite and nonempty"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Learnable prompt parameters: context `[L, E]` and a two-layer Meta-Net
/// `f_m -> tanh(f_m W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptState {
    pub context: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub taxonomy_checksum: Option<[u8; 32]>,
}

impl PromptState {
    /// Gaussian context, Gaussian first layer, zero final layer (so the
    /// initial token is zero for every identity).
    pub fn init(context_len: usize, token_dim: usize, identity_dim: usize, rng: &mut SeededRng) -> Self {
        assert!(context_len >= 1 && token_dim >= 1 && identity_dim >= 1);
        let hidden = (token_dim / 2).max(1);
        Self {
            context: Tensor::randn(&[context_len, token_dim], CONTEXT_INIT_STD, rng),
            w1: Tensor::randn(&[identity_dim, hidden], 1.0 / (identity_dim as f64).sqrt(), rng),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, token_dim]),
            b2: Tensor::zeros(&[token_dim]),
            taxonomy_checksum: None,
        }
    }

    pub fn context_len(&self) -> usize {
        self.context.rows()
    }

    pub fn token_dim(&self) -> usize {
        self.context.cols()
    }

    pub fn identity_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    /// Parameters in a fixed order: context, w1, b1, w2, b2.
    pub fn params(&self) -> Vec<Tensor> {
        vec![
            self.context.clone(),
            self.w1.clone(),
            self.b1.clone(),
            self.w2.clone(),
            self.b2.clone(),
        ]
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) {
        let [c, w1, b1, w2, b2]: [Tensor; 5] = params.try_into().expect("five prompt parameters");
        self.context = c;
        self.w1 = w1;
        self.b1 = b1;
        self.w2 = w2;
        self.b2 = b2;
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(Tensor::all_finite)
    }

    fn bind(&self, g: &mut Graph) -> PromptVars {
        PromptVars {
            context: g.leaf(self.context.clone()),
            w1: g.leaf(self.w1.clone()),
            b1: g.leaf(self.b1.clone()),
            w2: g.leaf(self.w2.clone()),
            b2: g.leaf(self.b2.clone()),
        }
    }

    /// Versioned binary checkpoint.
    ///
    /// Layout (little endian): `b"GZPROMPT"`, `u32 version = 1`, `u32 L`,
    /// `u32 E`, `u32 M` (identity dim), `u32 H` (hidden), `u8` checksum flag,
    /// 32 checksum bytes, then `f64` arrays context, w1, b1, w2, b2.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(PROMPT_MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        for d in [self.context_len(), self.token_dim(), self.identity_dim(), self.hidden_dim()] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.push(self.taxonomy_checksum.is_some() as u8);
        buf.extend_from_slice(&self.taxonomy_checksum.unwrap_or([0; 32]));
        for p in self.params() {
            for v in p.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_file(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes);
        if r.take(8)? != PROMPT_MAGIC {
            return Err(Error::Format(format!("{}: not a prompt-state file", path.display())));
        }
        let version = r.u32()?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported prompt-state version {version}")));
        }
        let l = r.u32()? as usize;
        let e = r.u32()? as usize;
        let m = r.u32()? as usize;
        let h = r.u32()? as usize;
        let has_checksum = r.take(1)?[0] == 1;
        let mut checksum = [0u8; 32];
        checksum.copy_from_slice(r.take(32)?);
        let mut read = |shape: &[usize]| -> Result<Tensor> {
            let n = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            Ok(Tensor::new(shape.to_vec(), data))
        };
        let state = Self {
            context: read(&[l, e])?,
            w1: read(&[m, h])?,
            b1: read(&[h])?,
            w2: read(&[h, e])?,
            b2: read(&[e])?,
            taxonomy_checksum: has_checksum.then_some(checksum),
        };
        if !r.is_done() {
            return Err(Error::Format("trailing bytes in prompt-state file".into()));
        }
        Ok(state)
    }
}

const PROMPT_MAGIC: &[u8; 8] = b"GZPROMPT";

struct PromptVars {
    context: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl PromptVars {
    fn vars(&self) -> [Var; 5] {
        [self.context, self.w1, self.b1, self.w2, self.b2]
    }
}

fn check_identity(state: &PromptState, identity: &IdentityCoefficients) -> Result<()> {
    if identity.dim() != state.identity_dim() {
        return Err(Error::shape("identity coefficients", state.identity_dim(), identity.dim()));
    }
    Ok(())
}

fn meta_token_graph(g: &mut Graph, p: &PromptVars, identity: &IdentityCoefficients) -> Var {
    let x = g.leaf(Tensor::new(vec![1, identity.dim()], identity.as_slice().to_vec()));
    let h = g.matmul(x, p.w1);
    let h = g.add_row_bias(h, p.b1);
    let h = g.tanh(h);
    let o = g.matmul(h, p.w2);
    g.add_row_bias(o, p.b2)
}

/// Identity-conditioned token `pi` of width `E`.
pub fn meta_token(state: &PromptState, identity: &IdentityCoefficients) -> Result<Vec<f64>> {
    check_identity(state, identity)?;
    let mut g = Graph::new();
    let p = state.bind(&mut g);
    let pi = meta_token_graph(&mut g, &p, identity);
    Ok(g.value(pi).data().to_vec())
}

fn word_embeddings(encoder: &dyn TextEncoder, factor: &IrrelevantFactor, polarity: Polarity, width: usize) -> Result<Tensor> {
    match encoder.token_dim() {
        Some(e) if e == width => encoder.embed_words(factor.phrase(polarity)),
        Some(e) => Err(Error::shape("prompt token width", e, width)),
        None => Err(Error::Config("text encoder does not accept token embeddings".into())),
    }
}

/// `[v_1 + pi, ..., v_L + pi, embed(phrase)]`, shape `[L + n, E]`.
pub fn conditional_prompt(
    state: &PromptState,
    identity: &IdentityCoefficients,
    factor: &IrrelevantFactor,
    polarity: Polarity,
    encoder: &dyn TextEncoder,
) -> Result<Tensor> {
    check_identity(state, identity)?;
    let words = word_embeddings(encoder, factor, polarity, state.token_dim())?;
    let pi = meta_token(state, identity)?;
    let mut rows: Vec<Vec<f64>> = (0..state.context_len())
        .map(|i| state.context.row(i).iter().zip(&pi).map(|(v, p)| v + p).collect())
        .collect();
    rows.extend((0..words.rows()).map(|i| words.row(i).to_vec()));
    Ok(Tensor::from_rows(&rows))
}

/// `exp(s_pos / tau) / (exp(s_pos / tau) + exp(s_neg / tau))` with cosine
/// similarities `s`, i.e. `sigmoid((s_pos - s_neg) / tau)`.
pub fn attribute_probability(f_v: &[f64], f_t_pos: &[f64], f_t_neg: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::domain(format!("temperature must be positive, got {tau}")));
    }
    let s_pos = cosine_similarity(f_v, f_t_pos)?;
    let s_neg = cosine_similarity(f_v, f_t_neg)?;
    Ok(sigmoid((s_pos - s_neg) / tau))
}

/// One proxy-task example.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeExample {
    pub image_id: String,
    pub subject_id: String,
    pub factor_id: usize,
    pub label: bool,
    /// Frozen image feature `f_v`.
    pub features: FeatureVector,
}

pub type IdentityMap = BTreeMap<String, IdentityCoefficients>;

pub fn lookup_identity<'a>(map: &'a IdentityMap, subject: &str) -> Result<&'a IdentityCoefficients> {
    map.get(subject).ok_or_else(|| Error::MissingSubject(subject.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerConfig::adam(1e-2),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub state: PromptState,
    pub log: Vec<TuneEpoch>,
}

/// Borrowed inputs to the proxy objective.
pub struct ProxyTask<'a> {
    pub examples: &'a [AttributeExample],
    pub identities: &'a IdentityMap,
    pub factors: &'a FactorSet,
    pub encoder: &'a dyn TextEncoder,
}

impl ProxyTask<'_> {
    fn validate(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::Config("attribute dataset is empty".into()));
        }
        for ex in self.examples {
            if self.factors.get(ex.factor_id).is_none() {
                return Err(Error::Config(format!(
                    "example {} references unknown factor {}",
                    ex.image_id, ex.factor_id
                )));
            }
            lookup_identity(self.identities, &ex.subject_id)?;
            if ex.features.dim() != self.encoder.dim() {
                return Err(Error::shape(format!("features of {}", ex.image_id), self.encoder.dim(), ex.features.dim()));
            }
        }
        Ok(())
    }

    /// Builds the mean binary cross-entropy over `batch` on `g` and returns
    /// `(loss, logits)`; logit `i` is `(s_pos - s_neg) / tau`.
    fn loss_graph(&self, g: &mut Graph, p: &PromptVars, batch: &[&AttributeExample]) -> Result<(Var, Var)> {
        let tau = self.encoder.temperature();
        let width = g.value(p.context).cols();
        let mut tokens_for: HashMap<&str, Var> = HashMap::new();
        let mut text_feature: HashMap<(&str, usize, bool), Var> = HashMap::new();
        let mut logits = Vec::with_capacity(batch.len());
        for ex in batch {
            let subject = ex.subject_id.as_str();
            let context = match tokens_for.get(subject) {
                Some(v) => *v,
                None => {
                    let identity = lookup_identity(self.identities, subject)?;
                    let pi = meta_token_graph(g, p, identity);
                    let pi = g.reshape(pi, &[width]);
                    let v = g.add_row_bias(p.context, pi);
                    tokens_for.insert(subject, v);
                    v
                }
            };
            let factor = self.factors.get(ex.factor_id).expect("validated");
            let mut feature = |polarity: Polarity, g: &mut Graph| -> Result<Var> {
                let key = (subject, ex.factor_id, polarity == Polarity::Positive);
                if let Some(v) = text_feature.get(&key) {
                    return Ok(*v);
                }
                let words = g.leaf(word_embeddings(self.encoder, factor, polarity, width)?);
                let seq = g.concat_rows(&[context, words]);
                let f = self.encoder.encode_tokens_graph(g, seq)?;
                text_feature.insert(key, f);
                Ok(f)
            };
            let pos = feature(Polarity::Positive, g)?;
            let neg = feature(Polarity::Negative, g)?;
            let fv = ex.features.normalized()?;
            let fv = g.leaf(Tensor::new(vec![1, fv.dim()], fv.into_vec()));
            let s_pos = g.row_dot(fv, pos);
            let s_neg = g.row_dot(fv, neg);
            let diff = g.sub(s_pos, s_neg);
            logits.push(g.scale(diff, 1.0 / tau));
        }
        let z = g.concat_rows(&logits);
        let y = g.leaf(Tensor::new(
            vec![batch.len(), 1],
            batch.iter().map(|e| if e.label { 1.0 } else { 0.0 }).collect(),
        ));
        // BCE with logits: softplus(z) - y z.
        let sp = g.softplus(z);
        let yz = g.mul(y, z);
        let per = g.sub(sp, yz);
        Ok((g.mean(per), z))
    }

    /// Mean binary cross-entropy over all examples.
    pub fn loss(&self, state: &PromptState) -> Result<f64> {
        self.validate()?;
        let mut g = Graph::new();
        let p = state.bind(&mut g);
        let batch: Vec<&AttributeExample> = self.examples.iter().collect();
        let (loss, _) = self.loss_graph(&mut g, &p, &batch)?;
        Ok(g.value(loss).item())
    }

    /// Loss and its gradient with respect to the prompt parameters (in the
    /// order of [`PromptState::params`]).
    pub fn loss_and_grad(&self, state: &PromptState) -> Result<(f64, Vec<Tensor>)> {
        self.validate()?;
        let mut g = Graph::new();
        let p = state.bind(&mut g);
        let batch: Vec<&AttributeExample> = self.examples.iter().collect();
        let (loss, _) = self.loss_graph(&mut g, &p, &batch)?;
        let mut grads = g.backward(loss);
        let gs = p
            .vars()
            .iter()
            .zip(state.params())
            .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((g.value(loss).item(), gs))
    }

    /// Probability `p_k` for every example under `state`.
    pub fn probabilities(&self, state: &PromptState) -> Result<Vec<f64>> {
        self.validate()?;
        let mut g = Graph::new();
        let p = state.bind(&mut g);
        let batch: Vec<&AttributeExample> = self.examples.iter().collect();
        let (_, z) = self.loss_graph(&mut g, &p, &batch)?;
        Ok(g.value(z).data().iter().map(|&z| sigmoid(z)).collect())
    }

    /// Fraction of examples where `p_k > 0.5` agrees with the label.
    pub fn accuracy(&self, state: &PromptState) -> Result<f64> {
        let probs = self.probabilities(state)?;
        let hits = probs
            .iter()
            .zip(self.examples)
            .filter(|(p, ex)| (**p > 0.5) == ex.label)
            .count();
        Ok(hits as f64 / self.examples.len() as f64)
    }
}

/// Tunes context vectors and Meta-Net on the proxy task. The encoder is
/// never modified.
pub fn tune_prompts(task: &ProxyTask<'_>, state: PromptState, config: &TuneConfig) -> Result<TuneOutcome> {
    task.validate()?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut state = state;
    state.taxonomy_checksum = Some(task.factors.checksum());
    let mut params = state.params();
    let mut opt = Optimizer::new(config.optimizer, &params);
    let mut rng = SeededRng::derive(config.seed, "pco-shuffle");
    let mut order: Vec<usize> = (0..task.examples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch: Vec<&AttributeExample> = chunk.iter().map(|&i| &task.examples[i]).collect();
            let mut g = Graph::new();
            let vars: Vec<Var> = params.iter().map(|t| g.leaf(t.clone())).collect();
            let p = PromptVars {
                context: vars[0],
                w1: vars[1],
                b1: vars[2],
                w2: vars[3],
                b2: vars[4],
            };
            let (loss, _) = task.loss_graph(&mut g, &p, &batch)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    component: "prompt-tuning cross-entropy".into(),
                    step,
                    lr: config.optimizer.lr(),
                });
            }
            total += value * batch.len() as f64;
            let mut grads = g.backward(loss);
            let gs: Vec<Option<Tensor>> = vars.iter().map(|v| grads.take(*v)).collect();
            opt.step(&mut params, &gs);
            if !params.iter().all(Tensor::all_finite) {
                return Err(Error::NonFinite {
                    component: "prompt parameters".into(),
                    step,
                    lr: config.optimizer.lr(),
                });
            }
        }
        state.set_params(params.clone());
        let accuracy = task.accuracy(&state)?;
        let record = TuneEpoch {
            epoch,
            loss: total / task.examples.len() as f64,
            accuracy,
        };
        log::info!("prompt tuning epoch {epoch}: loss {:.5} accuracy {:.4}", record.loss, record.accuracy);
        log.push(record);
    }
    state.set_params(params);
    Ok(TuneOutcome { state, log })
}

/// Index of the pose with the smallest `|(yaw, pitch)|`; ties go to the
/// earliest entry.
pub fn select_frontal_index(poses: &[(f64, f64)]) -> Result<usize> {
    if poses.is_empty() {
        return Err(Error::Config("no images to select a frontal face from".into()));
    }
    let mut best = 0;
    let mut best_norm = f64::INFINITY;
    for (i, (yaw, pitch)) in poses.iter().enumerate() {
        let n = yaw.hypot(*pitch);
        if n < best_norm {
            best = i;
            best_norm = n;
        }
    }
    Ok(best)
}

/// Picks the most frontal of `(image, (yaw, pitch))` entries.
pub fn select_frontal_image<T>(subject_images: &[(T, (f64, f64))]) -> Result<&T> {
    let poses: Vec<(f64, f64)> = subject_images.iter().map(|(_, p)| *p).collect();
    Ok(&subject_images[select_frontal_index(&poses)?].0)
}

/// Reads `subject_id,c_1,...,c_N` rows; a header row starting with
/// `subject_id` is skipped.
pub fn load_identity_coefficients(path: &Path) -> Result<IdentityMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_identity_coefficients(&text, &path.display().to_string())
}

pub fn parse_identity_coefficients(text: &str, origin: &str) -> Result<IdentityMap> {
    let mut map = IdentityMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("subject_id") {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let subject = fields.next().unwrap_or_default().to_string();
        if subject.is_empty() {
            return Err(Error::parse(origin, i + 1, "missing subject id"));
        }
        let values = fields
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        if *dim.get_or_insert(values.len()) != values.len() {
            return Err(Error::parse(
                origin,
                i + 1,
                format!("subject {subject} has {} coefficients, expected {}", values.len(), dim.unwrap()),
            ));
        }
        let coeffs = IdentityCoefficients::new(values).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        if map.insert(subject.clone(), coeffs).is_some() {
            return Err(Error::parse(origin, i + 1, format!("duplicate subject {subject}")));
        }
    }
    Ok(map)
}

pub fn save_identity_coefficients(map: &IdentityMap, path: &Path) -> Result<()> {
    let dim = map.values().next().map_or(0, IdentityCoefficients::dim);
    let mut out = String::from("subject_id");
    for i in 1..=dim {
        out.push_str(&format!(",c_{i}"));
    }
    out.push('\n');
    for (subject, c) in map {
        out.push_str(subject);
        for v in c.as_slice() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads `image_id,subject_id,factor_id,label` rows and joins them with a
/// feature table (`image_id,f_1,...`).
pub fn load_attribute_examples(labels: &Path, features: &HashMap<String, FeatureVector>) -> Result<Vec<AttributeExample>> {
    let text = std::fs::read_to_string(labels).map_err(|e| Error::io(labels, e))?;
    let origin = labels.display().to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("image_id") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse(&origin, i + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let factor_id = fields[2]
            .parse()
            .map_err(|_| Error::parse(&origin, i + 1, format!("invalid factor id `{}`", fields[2])))?;
        let label = match fields[3] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(&origin, i + 1, format!("label must be 0 or 1, got `{other}`"))),
        };
        let feats = features
            .get(fields[0])
            .ok_or_else(|| Error::parse(&origin, i + 1, format!("no features for image `{}`", fields[0])))?;
        out.push(AttributeExample {
            image_id: fields[0].to_string(),
            subject_id: fields[1].to_string(),
            factor_id,
            label,
            features: feats.clone(),
        });
    }
    Ok(out)
}

pub fn save_attribute_labels(examples: &[AttributeExample], path: &Path) -> Result<()> {
    let mut out = String::from("image_id,subject_id,factor_id,label\n");
    for ex in examples {
        out.push_str(&format!("{},{},{},{}\n", ex.image_id, ex.subject_id, ex.factor_id, ex.label as u8));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Settings for [`make_synthetic_attributes`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAttributeSpec {
    pub factors: usize,
    pub examples_per_factor: usize,
    pub subjects: usize,
    pub identity_dim: usize,
    pub context_len: usize,
    /// Weight of the planted label direction in `f_v`.
    pub signal: f64,
    /// Standard deviation of isotropic noise, per unit of `1/sqrt(D)`.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticAttributeSpec {
    fn default() -> Self {
        Self {
            factors: 2,
            examples_per_factor: 200,
            subjects: 2,
            identity_dim: DEFAULT_IDENTITY_DIM,
            context_len: 4,
            signal: 1.0,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Generates a proxy-task dataset with a linear signal a prompt can recover.
///
/// A hidden prompt state (larger context, nonzero Meta-Net) defines, per
/// subject and factor, the direction `u = f_t_pos - f_t_neg`. Image features
/// are `normalize(base_s + y * signal * u_hat + noise)` with `y = +-1`.
pub fn make_synthetic_attributes(
    spec: &SyntheticAttributeSpec,
    factors: &FactorSet,
    encoder: &dyn TextEncoder,
) -> Result<(Vec<AttributeExample>, IdentityMap)> {
    let width = encoder
        .token_dim()
        .ok_or_else(|| Error::Config("synthetic attributes need a token-embedding encoder".into()))?;
    if spec.factors == 0 || spec.factors > factors.len() || spec.subjects == 0 {
        return Err(Error::Config("invalid synthetic attribute spec".into()));
    }
    let mut rng = SeededRng::derive(spec.seed, "synthetic-attributes");
    let mut hidden = PromptState::init(spec.context_len, width, spec.identity_dim, &mut rng);
    hidden.context = Tensor::randn(hidden.context.shape(), 0.5, &mut rng);
    hidden.w2 = Tensor::randn(hidden.w2.shape(), 0.5, &mut rng);
    let dim = encoder.dim();
    let mut identities = IdentityMap::new();
    let mut bases = Vec::new();
    for s in 0..spec.subjects {
        let coeffs = IdentityCoefficients::new(rng.normal_vec(spec.identity_dim, 1.0))?;
        identities.insert(subject_name(s), coeffs);
        bases.push(FeatureVector::new(rng.normal_vec(dim, 1.0))?.normalized()?);
    }
    let chosen = &factors.factors()[..spec.factors];
    let mut directions = HashMap::new();
    for (s, coeffs) in identities.values().enumerate() {
        for f in chosen {
            let pos = encoder.encode_tokens(&conditional_prompt(&hidden, coeffs, f, Polarity::Positive, encoder)?)?;
            let neg = encoder.encode_tokens(&conditional_prompt(&hidden, coeffs, f, Polarity::Negative, encoder)?)?;
            let u: Vec<f64> = pos.as_slice().iter().zip(neg.as_slice()).map(|(a, b)| a - b).collect();
            directions.insert((s, f.id), FeatureVector::new(u)?.normalized()?);
        }
    }
    let mut examples = Vec::new();
    for f in chosen {
        for i in 0..spec.examples_per_factor {
            let s = rng.index(spec.subjects);
            let label = rng.bernoulli(0.5);
            let sign = if label { 1.0 } else { -1.0 };
            let u = &directions[&(s, f.id)];
            let v: Vec<f64> = bases[s]
                .as_slice()
                .iter()
                .zip(u.as_slice())
                .map(|(b, u)| b + sign * spec.signal * u + spec.noise * rng.normal() / (dim as f64).sqrt())
                .collect();
            examples.push(AttributeExample {
                image_id: format!("f{}_{i:04}", f.id),
                subject_id: subject_name(s),
                factor_id: f.id,
                label,
                features: FeatureVector::new(v)?.normalized()?,
            });
        }
    }
    Ok((examples, identities))
}

pub fn subject_name(i: usize) -> String {
    format!("s{i:02}")
}
