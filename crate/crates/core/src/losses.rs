//! Training objectives.
//!
//! Each loss exists twice: a plain scalar function over slices, used for
//! reporting and as a reference, and a `*_graph` builder on an autodiff
//! [`Graph`] that averages the same quantity over a batch and is used for
//! training. The two are written independently; the test suites check them
//! against each other and against finite differences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{log_sum_exp, Graph, Var};
use crate::encoders::FeatureBank;
use crate::error::{Error, Result};
use crate::geometry::{cosine_similarity, dot, norm, GazeDirection};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Clamp applied to `acos` inputs inside the training graph.
pub const ACOS_EPS: f64 = 1e-7;

/// `(1 - cos(f, f_v)) / 2`, in `[0, 1]`.
pub fn distill_loss(f: &[f64], f_v: &[f64]) -> Result<f64> {
    Ok(1.0 - (cosine_similarity(f, f_v)? + 1.0) * 0.5)
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// Softmax-normalized bank correlations `w_tilde`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationWeights(Vec<f64>);

impl CorrelationWeights {
    /// Softmax of raw correlations `w_1..w_K`.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::domain("correlation weights need at least one score"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::domain("non-finite correlation score"));
        }
        Ok(Self(softmax(scores)))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_bank_dim(what: &str, v: &[f64], bank: &FeatureBank) -> Result<()> {
    if v.len() != bank.dim() {
        return Err(Error::shape(what, bank.dim(), v.len()));
    }
    Ok(())
}

/// `softmax_k cos(f, f^ir_k)` over the bank rows, computed from the backbone
/// feature `f`.
pub fn correlation_weights(f: &[f64], bank: &FeatureBank) -> Result<CorrelationWeights> {
    check_bank_dim("feature for correlation weights", f, bank)?;
    let scores = (0..bank.len())
        .map(|k| cosine_similarity(f, bank.row(k)))
        .collect::<Result<Vec<_>>>()?;
    CorrelationWeights::from_scores(&scores)
}

/// `sum_k w_tilde_k cos(f_re, f^ir_k)`, in `[-1, 1]`.
pub fn irrelevant_loss(f_re: &[f64], bank: &FeatureBank, weights: &CorrelationWeights) -> Result<f64> {
    check_bank_dim("filtered feature", f_re, bank)?;
    if weights.len() != bank.len() {
        return Err(Error::shape("correlation weights", bank.len(), weights.len()));
    }
    let mut total = 0.0;
    for (k, w) in weights.as_slice().iter().enumerate() {
        total += w * cosine_similarity(f_re, bank.row(k))?;
    }
    Ok(total.clamp(-1.0, 1.0))
}

/// Angle in radians between an unnormalized prediction and a label.
pub fn gaze_loss(g_hat: &[f64], g: &GazeDirection) -> Result<f64> {
    if g_hat.len() != 3 {
        return Err(Error::shape("gaze prediction", 3, g_hat.len()));
    }
    let n = norm(g_hat);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::domain("gaze prediction has zero or non-finite norm"));
    }
    Ok((dot(g_hat, g.as_slice()) / n).clamp(-1.0, 1.0).acos())
}

/// Label and feature cosine similarities of one sample pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSimilarity {
    pub i: usize,
    pub j: usize,
    pub s_g: f64,
    pub s_f: f64,
}

/// `+1`, `-1` or `0` (tie) from the label similarities of two pairs.
pub fn rank_sign(s1_g: f64, s2_g: f64) -> f64 {
    if s1_g > s2_g {
        1.0
    } else if s1_g < s2_g {
        -1.0
    } else {
        0.0
    }
}

/// `max(0, -S_12 (s1_f - s2_f))`.
pub fn rank_loss_pair(p1: &PairSimilarity, p2: &PairSimilarity) -> f64 {
    let s = rank_sign(p1.s_g, p2.s_g);
    (-s * (p1.s_f - p2.s_f)).max(0.0)
}

/// All `(i, j)` with `i < j < b`, in lexicographic order.
pub fn enumerate_pairs(b: usize) -> Vec<(usize, usize)> {
    (0..b).flat_map(|i| (i + 1..b).map(move |j| (i, j))).collect()
}

/// `draws` pairs of distinct pair indices in `0..num_pairs`, each uniform.
///
/// Per draw: `p1 = index(O)`, `p2 = index(O - 1)`, and `p2` is shifted up by
/// one when `p2 >= p1`.
pub fn sample_pair_draws(num_pairs: usize, draws: usize, rng: &mut SeededRng) -> Result<Vec<(usize, usize)>> {
    if num_pairs < 2 {
        return Err(Error::domain(format!("need at least two pairs to draw from, have {num_pairs}")));
    }
    Ok((0..draws)
        .map(|_| {
            let p1 = rng.index(num_pairs);
            let mut p2 = rng.index(num_pairs - 1);
            if p2 >= p1 {
                p2 += 1;
            }
            (p1, p2)
        })
        .collect())
}

fn check_batch(features: &Tensor, labels: &[GazeDirection], min: usize) -> Result<usize> {
    let b = features.rows();
    if features.shape().len() != 2 {
        return Err(Error::shape("feature batch rank", 2, features.shape().len()));
    }
    if labels.len() != b {
        return Err(Error::shape("label count", b, labels.len()));
    }
    if b < min {
        return Err(Error::domain(format!("batch of {b} is too small, need at least {min}")));
    }
    Ok(b)
}

/// Similarities of every pair from [`enumerate_pairs`].
pub fn pair_similarities(features: &Tensor, labels: &[GazeDirection]) -> Result<Vec<PairSimilarity>> {
    let b = check_batch(features, labels, 2)?;
    enumerate_pairs(b)
        .into_iter()
        .map(|(i, j)| {
            Ok(PairSimilarity {
                i,
                j,
                s_g: labels[i].dot(&labels[j]),
                s_f: cosine_similarity(features.row(i), features.row(j))?,
            })
        })
        .collect()
}

/// Mean of [`rank_loss_pair`] over `O = B(B-1)/2` random draws of two
/// distinct pairs.
pub fn rank_loss_batch(features: &Tensor, labels: &[GazeDirection], rng: &mut SeededRng) -> Result<f64> {
    check_batch(features, labels, 3)?;
    let pairs = pair_similarities(features, labels)?;
    let draws = sample_pair_draws(pairs.len(), pairs.len(), rng)?;
    let total: f64 = draws.iter().map(|&(a, b)| rank_loss_pair(&pairs[a], &pairs[b])).sum();
    Ok(total / draws.len() as f64)
}

/// Rank-loss replacements compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankVariant {
    /// Thresholded contrastive pull/push.
    Cr,
    L1,
    L2,
    /// `KL(softmax(s^g) || softmax(s^f))`.
    Kl,
}

impl RankVariant {
    pub const ALL: [RankVariant; 4] = [RankVariant::Cr, RankVariant::L1, RankVariant::L2, RankVariant::Kl];

    pub fn as_str(&self) -> &'static str {
        match self {
            RankVariant::Cr => "cr",
            RankVariant::L1 => "l1",
            RankVariant::L2 => "l2",
            RankVariant::Kl => "kl",
        }
    }
}

impl fmt::Display for RankVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RankVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cr" | "crloss" => Ok(RankVariant::Cr),
            "l1" => Ok(RankVariant::L1),
            "l2" => Ok(RankVariant::L2),
            "kl" => Ok(RankVariant::Kl),
            other => Err(Error::Config(format!("unknown rank variant `{other}` (expected cr, l1, l2 or kl)"))),
        }
    }
}

/// Parameters of the contrastive variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankParams {
    /// Angular threshold in degrees separating "close" from "far" pairs.
    pub threshold_deg: f64,
    pub margin: f64,
}

impl Default for RankParams {
    fn default() -> Self {
        Self {
            threshold_deg: 10.0,
            margin: 0.0,
        }
    }
}

fn cr_term(s_g: f64, s_f: f64, params: &RankParams) -> f64 {
    if is_close_pair(s_g, params) {
        1.0 - s_f
    } else {
        (s_f - params.margin).max(0.0)
    }
}

fn is_close_pair(s_g: f64, params: &RankParams) -> bool {
    s_g.clamp(-1.0, 1.0).acos().to_degrees() < params.threshold_deg
}

/// Ablation variant evaluated over all pairs of the batch (`B >= 2`).
pub fn rank_variant_loss(kind: RankVariant, features: &Tensor, labels: &[GazeDirection], params: &RankParams) -> Result<f64> {
    let pairs = pair_similarities(features, labels)?;
    let n = pairs.len() as f64;
    Ok(match kind {
        RankVariant::L1 => pairs.iter().map(|p| (p.s_f - p.s_g).abs()).sum::<f64>() / n,
        RankVariant::L2 => pairs.iter().map(|p| (p.s_f - p.s_g).powi(2)).sum::<f64>() / n,
        RankVariant::Cr => pairs.iter().map(|p| cr_term(p.s_g, p.s_f, params)).sum::<f64>() / n,
        RankVariant::Kl => {
            let sg: Vec<f64> = pairs.iter().map(|p| p.s_g).collect();
            let sf: Vec<f64> = pairs.iter().map(|p| p.s_f).collect();
            let (lse_g, lse_f) = (log_sum_exp(&sg), log_sum_exp(&sf));
            let kl: f64 = sg
                .iter()
                .zip(&sf)
                .map(|(g, f)| {
                    let log_p = g - lse_g;
                    log_p.exp() * (log_p - (f - lse_f))
                })
                .sum();
            kl.max(0.0)
        }
    })
}

/// `lambda1` weights `L_d`, `lambda2` weights `L_ir`, `lambda3` weights the
/// rank term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
        }
    }
}

impl LossWeights {
    /// Gaze loss only.
    pub fn baseline() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub l_g: f64,
    pub l_d: f64,
    pub l_ir: f64,
    pub l_re: f64,
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 4] {
        [("l_g", self.l_g), ("l_d", self.l_d), ("l_ir", self.l_ir), ("l_re", self.l_re)]
    }

    /// Name of the first non-finite component.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.named().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}

/// `l_g + lambda1 l_d + lambda2 l_ir + lambda3 l_re`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    if let Some(name) = c.first_non_finite() {
        return Err(Error::domain(format!("loss component {name} is not finite")));
    }
    Ok(c.l_g + w.lambda1 * c.l_d + w.lambda2 * c.l_ir + w.lambda3 * c.l_re)
}

/// Batch-mean distillation loss. `f_v` rows must be unit length.
pub fn distill_loss_graph(g: &mut Graph, f: Var, f_v: &Tensor) -> Var {
    let fv = g.leaf(f_v.clone());
    let nf = g.row_normalize(f);
    let cos = g.row_dot(nf, fv);
    let m = g.mean(cos);
    let neg = g.scale(m, -0.5);
    g.add_scalar(neg, 0.5)
}

/// Correlation weights of every row of `f` against `bank`, as a constant
/// `[B, K]` tensor.
pub fn correlation_weight_matrix(f: &Tensor, bank: &FeatureBank) -> Result<Tensor> {
    let mut data = Vec::with_capacity(f.rows() * bank.len());
    for i in 0..f.rows() {
        data.extend_from_slice(correlation_weights(f.row(i), bank)?.as_slice());
    }
    Ok(Tensor::new(vec![f.rows(), bank.len()], data))
}

/// Batch-mean irrelevant loss against a `[K, D]` matrix of unit rows with
/// constant `[B, K]` weights. Rows of `weights` may be zero outside the
/// block belonging to a sample's own bank.
pub fn irrelevant_loss_graph(g: &mut Graph, f_re: Var, bank_rows: &Tensor, weights: &Tensor) -> Var {
    let bank = g.leaf(bank_rows.clone());
    let w = g.leaf(weights.clone());
    let n = g.row_normalize(f_re);
    let cos = g.matmul_nt(n, bank);
    let weighted = g.mul(cos, w);
    let per_sample = g.sum_rows(weighted);
    g.mean(per_sample)
}

/// Batch-mean angular loss; `labels` is `[B, 3]` of unit rows.
pub fn gaze_loss_graph(g: &mut Graph, g_hat: Var, labels: &Tensor) -> Var {
    let y = g.leaf(labels.clone());
    let n = g.row_normalize(g_hat);
    let c = g.row_dot(n, y);
    let a = g.acos(c, ACOS_EPS);
    g.mean(a)
}

/// Stacks unit labels into a `[B, 3]` tensor.
pub fn label_matrix(labels: &[GazeDirection]) -> Tensor {
    let rows: Vec<[f64; 3]> = labels.iter().map(GazeDirection::as_array).collect();
    Tensor::from_rows(&rows)
}

/// `[B, B]` feature cosine matrix and the flat index of each pair in it.
fn pair_feature_similarities(g: &mut Graph, f_re: Var, pairs: &[(usize, usize)]) -> Var {
    let b = g.value(f_re).rows();
    let n = g.row_normalize(f_re);
    let sims = g.matmul_nt(n, n);
    g.gather(sims, pairs.iter().map(|&(i, j)| i * b + j).collect())
}

fn label_pair_similarities(labels: &[GazeDirection], pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs.iter().map(|&(i, j)| labels[i].dot(&labels[j])).collect()
}

/// Batch rank loss with the pair draws taken from `rng` exactly as in
/// [`rank_loss_batch`].
pub fn rank_loss_graph(g: &mut Graph, f_re: Var, labels: &[GazeDirection], rng: &mut SeededRng) -> Result<Var> {
    let b = g.value(f_re).rows();
    if labels.len() != b {
        return Err(Error::shape("label count", b, labels.len()));
    }
    if b < 3 {
        return Err(Error::domain(format!("batch of {b} is too small, need at least 3")));
    }
    let pairs = enumerate_pairs(b);
    let draws = sample_pair_draws(pairs.len(), pairs.len(), rng)?;
    let sg = label_pair_similarities(labels, &pairs);
    let sf = pair_feature_similarities(g, f_re, &pairs);
    let first = g.gather(sf, draws.iter().map(|d| d.0).collect());
    let second = g.gather(sf, draws.iter().map(|d| d.1).collect());
    let diff = g.sub(first, second);
    let signs = g.leaf(Tensor::vector(draws.iter().map(|&(a, c)| -rank_sign(sg[a], sg[c])).collect()));
    let arg = g.mul(signs, diff);
    let hinge = g.relu(arg);
    Ok(g.mean(hinge))
}

/// Ablation variant on the graph; see [`rank_variant_loss`].
pub fn rank_variant_graph(g: &mut Graph, kind: RankVariant, f_re: Var, labels: &[GazeDirection], params: &RankParams) -> Result<Var> {
    let b = g.value(f_re).rows();
    if labels.len() != b {
        return Err(Error::shape("label count", b, labels.len()));
    }
    if b < 2 {
        return Err(Error::domain("rank variants need at least two samples"));
    }
    let pairs = enumerate_pairs(b);
    let sg = label_pair_similarities(labels, &pairs);
    let sf = pair_feature_similarities(g, f_re, &pairs);
    Ok(match kind {
        RankVariant::L1 | RankVariant::L2 => {
            let target = g.leaf(Tensor::vector(sg));
            let d = g.sub(sf, target);
            let e = if kind == RankVariant::L1 { g.abs(d) } else { g.square(d) };
            g.mean(e)
        }
        RankVariant::Cr => {
            let near: Vec<f64> = sg.iter().map(|&s| is_close_pair(s, params) as u8 as f64).collect();
            let far: Vec<f64> = near.iter().map(|m| 1.0 - m).collect();
            let near = g.leaf(Tensor::vector(near));
            let far = g.leaf(Tensor::vector(far));
            let pull = g.scale(sf, -1.0);
            let pull = g.add_scalar(pull, 1.0);
            let pull = g.mul(near, pull);
            let push = g.add_scalar(sf, -params.margin);
            let push = g.relu(push);
            let push = g.mul(far, push);
            let both = g.add(pull, push);
            g.mean(both)
        }
        RankVariant::Kl => {
            let lse = log_sum_exp(&sg);
            let p: Vec<f64> = sg.iter().map(|s| (s - lse).exp()).collect();
            let entropy_term: f64 = p.iter().zip(&sg).map(|(p, s)| p * (s - lse)).sum();
            let p = g.leaf(Tensor::vector(p));
            let log_q = g.log_softmax(sf);
            let cross = g.mul(p, log_q);
            let cross = g.sum(cross);
            let neg = g.scale(cross, -1.0);
            g.add_scalar(neg, entropy_term)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bank(rows: Vec<Vec<f64>>) -> FeatureBank {
        let ids = (1..=rows.len()).collect();
        FeatureBank::new(rows, ids, None, [0; 32]).unwrap()
    }

    #[test]
    fn distill_examples() {
        let f = [0.3, -1.2, 2.0];
        assert!(distill_loss(&f, &f).unwrap().abs() < 1e-15);
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        assert!((distill_loss(&f, &neg).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(distill_loss(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.5);
        assert!(distill_loss(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn weight_examples() {
        let w = CorrelationWeights::from_scores(&[2f64.ln(), 0.0, 0.0]).unwrap();
        for (got, want) in w.as_slice().iter().zip([0.5, 0.25, 0.25]) {
            assert!((got - want).abs() < 1e-15);
        }
        let one = bank(vec![vec![0.0, 1.0]]);
        assert_eq!(correlation_weights(&[1.0, 0.3], &one).unwrap().as_slice(), &[1.0]);
        let sym = bank(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let w = correlation_weights(&[1.0, 1.0], &sym).unwrap();
        assert!((w.as_slice()[0] - 0.5).abs() < 1e-15 && (w.as_slice()[1] - 0.5).abs() < 1e-15);
        assert!(correlation_weights(&[0.0, 0.0], &sym).is_err());
    }

    #[test]
    fn irrelevant_examples() {
        let b = bank(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let w = CorrelationWeights::from_scores(&[0.3, -0.2]).unwrap();
        assert_eq!(irrelevant_loss(&[0.0, 0.0, 4.0], &b, &w).unwrap(), 0.0);
        let one = bank(vec![vec![0.6, 0.8]]);
        let w1 = CorrelationWeights::from_scores(&[0.0]).unwrap();
        assert!((irrelevant_loss(&[0.6, 0.8], &one, &w1).unwrap() - 1.0).abs() < 1e-15);
        let pm = bank(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let half = CorrelationWeights::from_scores(&[0.0, 0.0]).unwrap();
        assert_eq!(irrelevant_loss(&[2.0, 0.0], &pm, &half).unwrap(), 0.0);
        assert!(irrelevant_loss(&[0.0, 0.0], &pm, &half).is_err());
        assert!(irrelevant_loss(&[1.0, 0.0], &pm, &w1).is_err());
    }

    #[test]
    fn gaze_examples() {
        let g = GazeDirection::from_yaw_pitch(0.2, -0.1).unwrap();
        let a = g.as_array();
        assert_eq!(gaze_loss(&a, &g).unwrap(), 0.0);
        assert_eq!(gaze_loss(&[-a[0], -a[1], -a[2]], &g).unwrap(), PI);
        let e = GazeDirection::new([0.0, 0.0, -1.0]).unwrap();
        assert!((gaze_loss(&[0.0, 3.0, 0.0], &e).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!(gaze_loss(&[0.0; 3], &e).is_err());
    }

    fn pair(s_g: f64, s_f: f64) -> PairSimilarity {
        PairSimilarity { i: 0, j: 1, s_g, s_f }
    }

    #[test]
    fn rank_pair_examples() {
        assert_eq!(rank_loss_pair(&pair(0.9, 0.8), &pair(0.5, 0.3)), 0.0);
        assert!((rank_loss_pair(&pair(0.9, 0.3), &pair(0.5, 0.8)) - 0.5).abs() < 1e-15);
        assert_eq!(rank_loss_pair(&pair(0.5, 0.1), &pair(0.5, 0.9)), 0.0);
    }

    #[test]
    fn pair_counts() {
        assert_eq!(enumerate_pairs(4), vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        for b in 2..10 {
            assert_eq!(enumerate_pairs(b).len(), b * (b - 1) / 2);
        }
        let draws = sample_pair_draws(6, 6, &mut SeededRng::new(1)).unwrap();
        assert_eq!(draws.len(), 6);
        assert!(draws.iter().all(|(a, b)| a != b && *a < 6 && *b < 6));
        assert!(sample_pair_draws(1, 1, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn identical_features_have_zero_rank_loss() {
        let f = Tensor::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]);
        let labels: Vec<GazeDirection> = (0..4)
            .map(|i| GazeDirection::from_yaw_pitch(0.1 * i as f64, 0.05).unwrap())
            .collect();
        assert_eq!(rank_loss_batch(&f, &labels, &mut SeededRng::new(3)).unwrap(), 0.0);
        let two = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(rank_loss_batch(&two, &labels[..2], &mut SeededRng::new(3)).is_err());
    }

    #[test]
    fn variant_examples() {
        let labels: Vec<GazeDirection> = (0..4)
            .map(|i| GazeDirection::from_yaw_pitch(0.3 * i as f64, 0.0).unwrap())
            .collect();
        // Features equal to labels give s^f = s^g on every pair.
        let f = label_matrix(&labels);
        let p = RankParams::default();
        assert!(rank_variant_loss(RankVariant::L1, &f, &labels, &p).unwrap() < 1e-15);
        assert!(rank_variant_loss(RankVariant::Kl, &f, &labels, &p).unwrap() < 1e-15);
        // One pair: s^g = 0.9 via labels at acos(0.9) apart, s^f = 0.4.
        let a = 0.9f64.acos();
        let l2 = [GazeDirection::from_yaw_pitch(0.0, 0.0).unwrap(), GazeDirection::from_yaw_pitch(a, 0.0).unwrap()];
        let b = 0.4f64.acos();
        let f2 = Tensor::from_rows(&[[1.0, 0.0], [b.cos(), b.sin()]]);
        assert!((rank_variant_loss(RankVariant::L2, &f2, &l2, &p).unwrap() - 0.25).abs() < 1e-12);
        assert!("dtw".parse::<RankVariant>().is_err());
        assert_eq!("KL".parse::<RankVariant>().unwrap(), RankVariant::Kl);
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossComponents::default(), &w).unwrap(), 0.0);
        let ones = LossComponents {
            l_g: 1.0,
            l_d: 1.0,
            l_ir: 1.0,
            l_re: 1.0,
        };
        assert_eq!(total_loss(&ones, &w).unwrap(), 4.0);
        let c = LossComponents {
            l_g: 0.7,
            l_d: 0.2,
            l_ir: -0.1,
            l_re: 0.05,
        };
        assert_eq!(total_loss(&c, &LossWeights::baseline()).unwrap(), 0.7);
        let bad = LossComponents { l_ir: f64::NAN, ..c };
        let err = total_loss(&bad, &w).unwrap_err().to_string();
        assert!(err.contains("l_ir"), "{err}");
        assert!(LossWeights { lambda2: -1.0, ..w }.validate().is_err());
    }
}
