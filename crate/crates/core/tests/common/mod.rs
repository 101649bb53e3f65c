//! Check suites shared by the integration tests and the acceptance report.
#![allow(dead_code)]

use gazesep::autograd::{Graph, Var};
use gazesep::encoders::{MockTextConfig, MockTextEncoder, TextEncoder};
use gazesep::losses::{self, PairSimilarity, RankParams, RankVariant};
use gazesep::pco::{make_synthetic_attributes, PromptState, ProxyTask, SyntheticAttributeSpec};
use gazesep::{FactorSet, GazeDirection, SeededRng, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const DIMS: [usize; 3] = [8, 16, 64];
pub const POINTS: usize = 50;

/// Outcome of one finite-difference suite.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub dim: usize,
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checked >= POINTS && self.worst < FD_TOL
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - n| / max(|a|, |n|)` over the checked coordinates, zero when both
/// vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

type Build<'a> = dyn Fn(&mut Graph, Var) -> Var + 'a;

fn value_of(x: &Tensor, build: &Build<'_>) -> f64 {
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = build(&mut g, v);
    g.value(out).item()
}

/// Compares the tape gradient of `build` at `x` against central differences.
pub fn fd_check(x: &Tensor, build: &Build<'_>) -> f64 {
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = build(&mut g, v);
    let grads = g.backward(out);
    let analytic = grads.get(v).map_or_else(|| vec![0.0; x.numel()], |t| t.data().to_vec());
    let numeric: Vec<f64> = (0..x.numel())
        .map(|i| {
            let mut up = x.clone();
            up.data_mut()[i] += FD_STEP;
            let mut down = x.clone();
            down.data_mut()[i] -= FD_STEP;
            (value_of(&up, build) - value_of(&down, build)) / (2.0 * FD_STEP)
        })
        .collect();
    relative_error(&analytic, &numeric)
}

fn unit_rows(rows: usize, dim: usize, rng: &mut SeededRng) -> Tensor {
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let v = rng.normal_vec(dim, 1.0);
        let n = norm(&v);
        data.extend(v.into_iter().map(|x| x / n));
    }
    Tensor::new(vec![rows, dim], data)
}

pub fn random_gaze(rng: &mut SeededRng) -> GazeDirection {
    loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        if let Ok(g) = GazeDirection::new(v) {
            return g;
        }
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b))
}

/// Runs `point` until `POINTS` points were checked; `point` returns `None`
/// for a draw inside an excluded neighborhood.
fn run_suite(name: &str, dim: usize, seed: u64, mut point: impl FnMut(&mut SeededRng) -> Option<f64>) -> GradReport {
    let mut rng = SeededRng::derive(seed ^ dim as u64, name);
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    while checked < POINTS && skipped < 10 * POINTS {
        match point(&mut rng) {
            Some(e) => {
                checked += 1;
                worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
            }
            None => skipped += 1,
        }
    }
    GradReport {
        name: name.to_string(),
        dim,
        checked,
        skipped,
        worst,
    }
}

const BATCH: usize = 4;
/// Draws whose hinge or absolute-value argument lies this close to its kink
/// are excluded.
const KINK_MARGIN: f64 = 1e-3;

pub fn distill_suite(dim: usize) -> GradReport {
    run_suite("distill", dim, 1, |rng| {
        let f = Tensor::randn(&[BATCH, dim], 1.0, rng);
        let fv = unit_rows(BATCH, dim, rng);
        Some(fd_check(&f, &|g, x| losses::distill_loss_graph(g, x, &fv)))
    })
}

pub fn irrelevant_suite(dim: usize) -> GradReport {
    run_suite("irrelevant", dim, 2, |rng| {
        let k = 6;
        let bank = unit_rows(k, dim, rng);
        let f_re = Tensor::randn(&[BATCH, dim], 1.0, rng);
        let mut w = Vec::new();
        for _ in 0..BATCH {
            w.extend(losses::softmax(&rng.normal_vec(k, 1.0)));
        }
        let w = Tensor::new(vec![BATCH, k], w);
        Some(fd_check(&f_re, &|g, x| losses::irrelevant_loss_graph(g, x, &bank, &w)))
    })
}

pub fn gaze_suite(dim: usize) -> GradReport {
    run_suite("gaze", dim, 3, |rng| {
        let g_hat = Tensor::randn(&[BATCH, 3], 1.0, rng);
        let labels: Vec<GazeDirection> = (0..BATCH).map(|_| random_gaze(rng)).collect();
        if (0..BATCH).any(|b| cos(g_hat.row(b), labels[b].as_slice()).abs() > 1.0 - 1e-3) {
            return None;
        }
        let y = losses::label_matrix(&labels);
        Some(fd_check(&g_hat, &|g, x| losses::gaze_loss_graph(g, x, &y)))
    })
}

fn batch_pairs(f: &Tensor, labels: &[GazeDirection]) -> Vec<PairSimilarity> {
    losses::pair_similarities(f, labels).unwrap()
}

pub fn rank_suite(dim: usize) -> GradReport {
    run_suite("rank", dim, 4, |rng| {
        let f = Tensor::randn(&[BATCH, dim], 1.0, rng);
        let labels: Vec<GazeDirection> = (0..BATCH).map(|_| random_gaze(rng)).collect();
        let draw_seed = rng.next_u64();
        let pairs = batch_pairs(&f, &labels);
        let draws = losses::sample_pair_draws(pairs.len(), pairs.len(), &mut SeededRng::new(draw_seed)).unwrap();
        if draws.iter().any(|&(a, b)| (pairs[a].s_f - pairs[b].s_f).abs() < KINK_MARGIN) {
            return None;
        }
        Some(fd_check(&f, &|g, x| {
            losses::rank_loss_graph(g, x, &labels, &mut SeededRng::new(draw_seed)).unwrap()
        }))
    })
}

pub fn variant_suite(kind: RankVariant, dim: usize) -> GradReport {
    let params = RankParams::default();
    run_suite(&format!("rank-{kind}"), dim, 5, |rng| {
        let f = Tensor::randn(&[BATCH, dim], 1.0, rng);
        let labels: Vec<GazeDirection> = (0..BATCH).map(|_| random_gaze(rng)).collect();
        let pairs = batch_pairs(&f, &labels);
        let near_kink = pairs.iter().any(|p| match kind {
            RankVariant::L1 => (p.s_f - p.s_g).abs() < KINK_MARGIN,
            RankVariant::Cr => (p.s_f - params.margin).abs() < KINK_MARGIN,
            RankVariant::L2 | RankVariant::Kl => false,
        });
        if near_kink {
            return None;
        }
        Some(fd_check(&f, &|g, x| losses::rank_variant_graph(g, kind, x, &labels, &params).unwrap()))
    })
}

fn small_text(dim: usize, seed: u64) -> MockTextEncoder {
    MockTextEncoder::new(MockTextConfig {
        dim,
        token_dim: 8,
        max_tokens: 12,
        temperature: 0.07,
        seed,
    })
}

/// The mock encoder's token path: `d . encode(tokens)` for a random `d`.
pub fn mock_encoder_suite(dim: usize) -> GradReport {
    let enc = small_text(dim, 17);
    run_suite("mock-text-tokens", dim, 6, |rng| {
        let n = 1 + rng.index(enc.config().max_tokens);
        let tokens = Tensor::randn(&[n, enc.config().token_dim], 1.0, rng);
        let d = Tensor::new(vec![1, dim], rng.normal_vec(dim, 1.0));
        Some(fd_check(&tokens, &|g, x| {
            let f = enc.encode_tokens_graph(g, x).unwrap();
            let d = g.leaf(d.clone());
            let p = g.row_dot(f, d);
            g.sum(p)
        }))
    })
}

/// Proxy-task objective with respect to every prompt parameter, on a
/// random subset of coordinates per point.
pub fn pco_suite(dim: usize) -> GradReport {
    let enc = small_text(dim, 23);
    let factors = FactorSet::default_set();
    let spec = SyntheticAttributeSpec {
        factors: 2,
        examples_per_factor: 6,
        subjects: 2,
        identity_dim: 5,
        context_len: 3,
        seed: 7,
        ..SyntheticAttributeSpec::default()
    };
    let (examples, identities) = make_synthetic_attributes(&spec, &factors, &enc).unwrap();
    let task = ProxyTask {
        examples: &examples,
        identities: &identities,
        factors: &factors,
        encoder: &enc,
    };
    run_suite("pco-objective", dim, 8, |rng| {
        let mut state = PromptState::init(2, 8, 5, rng);
        let shapes: Vec<Vec<usize>> = state.params().iter().map(|t| t.shape().to_vec()).collect();
        state.set_params(shapes.iter().map(|s| Tensor::randn(s, 0.5, rng)).collect());
        let (_, grads) = task.loss_and_grad(&state).unwrap();
        let flat_grad: Vec<f64> = grads.iter().flat_map(|t| t.data().to_vec()).collect();
        let flat: Vec<f64> = state.params().iter().flat_map(|t| t.data().to_vec()).collect();
        let unflatten = |v: &[f64]| -> Vec<Tensor> {
            let mut off = 0;
            shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    let t = Tensor::new(s.clone(), v[off..off + n].to_vec());
                    off += n;
                    t
                })
                .collect()
        };
        let mut coords: Vec<usize> = (0..flat.len()).collect();
        rng.shuffle(&mut coords);
        coords.truncate(24);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &i in &coords {
            let eval = |delta: f64| {
                let mut v = flat.clone();
                v[i] += delta;
                let mut s = state.clone();
                s.set_params(unflatten(&v));
                task.loss(&s).unwrap()
            };
            numeric.push((eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP));
            analytic.push(flat_grad[i]);
        }
        Some(relative_error(&analytic, &numeric))
    })
}

/// Every gradient suite at every width.
pub fn all_gradient_reports() -> Vec<GradReport> {
    let mut out = Vec::new();
    for &d in &DIMS {
        out.push(distill_suite(d));
        out.push(irrelevant_suite(d));
        out.push(gaze_suite(d));
        out.push(rank_suite(d));
        for kind in RankVariant::ALL {
            out.push(variant_suite(kind, d));
        }
        out.push(mock_encoder_suite(d));
        out.push(pco_suite(d));
    }
    out
}

/// Outcome of the range and normalization checks.
#[derive(Debug, Clone, Default)]
pub struct RangeReport {
    pub violations: Vec<String>,
    pub samples: usize,
}

pub const RANGE_SAMPLES: usize = 1000;

pub fn range_suite() -> RangeReport {
    let mut rng = SeededRng::new(2024);
    let mut report = RangeReport::default();
    let mut fail = |what: String| report.violations.push(what);
    let params = RankParams::default();
    for i in 0..RANGE_SAMPLES {
        let dim = DIMS[i % DIMS.len()];
        let f = rng.normal_vec(dim, 1.0);
        let fv = rng.normal_vec(dim, 1.0);
        let ld = losses::distill_loss(&f, &fv).unwrap();
        if !(0.0..=1.0).contains(&ld) {
            fail(format!("distill {ld}"));
        }
        let g_hat: Vec<f64> = rng.normal_vec(3, 1.0);
        let lg = losses::gaze_loss(&g_hat, &random_gaze(&mut rng)).unwrap();
        if !(0.0..=std::f64::consts::PI).contains(&lg) {
            fail(format!("gaze {lg}"));
        }
        let k = 1 + rng.index(12);
        let rows: Vec<Vec<f64>> = (0..k).map(|_| rng.normal_vec(dim, 1.0)).collect();
        let bank = gazesep::FeatureBank::new(rows, (1..=k).collect(), None, [0; 32]).unwrap();
        let w = losses::correlation_weights(&f, &bank).unwrap();
        let sum: f64 = w.as_slice().iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            fail(format!("weights sum {sum}"));
        }
        let lir = losses::irrelevant_loss(&fv, &bank, &w).unwrap();
        if !(-1.0..=1.0).contains(&lir) {
            fail(format!("irrelevant {lir}"));
        }
        let scores = rng.normal_vec(k, 3.0);
        let shift = rng.uniform_range(-50.0, 50.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let (a, b) = (losses::softmax(&scores), losses::softmax(&shifted));
        let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if gap > 1e-9 {
            fail(format!("softmax shift gap {gap}"));
        }
        let b = 3 + rng.index(4);
        let feats = Tensor::randn(&[b, dim], 1.0, &mut rng);
        let labels: Vec<GazeDirection> = (0..b).map(|_| random_gaze(&mut rng)).collect();
        let lre = losses::rank_loss_batch(&feats, &labels, &mut rng).unwrap();
        if !(lre >= 0.0) {
            fail(format!("rank {lre}"));
        }
        for kind in RankVariant::ALL {
            let v = losses::rank_variant_loss(kind, &feats, &labels, &params).unwrap();
            if !(v >= 0.0) {
                fail(format!("{kind} {v}"));
            }
        }
        report.samples += 1;
    }
    report
}

/// Independent re-implementation of the batch rank loss: explicit loops over
/// pairs, its own cosine, and the documented draw procedure.
pub fn brute_force_rank_loss(features: &Tensor, labels: &[GazeDirection], rng: &mut SeededRng) -> f64 {
    let b = labels.len();
    let mut sg = Vec::new();
    let mut sf = Vec::new();
    for i in 0..b {
        for j in 0..b {
            if i < j {
                sg.push(labels[i].dot(&labels[j]));
                sf.push(cos(features.row(i), features.row(j)));
            }
        }
    }
    let o = sg.len();
    let mut total = 0.0;
    for _ in 0..o {
        let p1 = rng.index(o);
        let mut p2 = rng.index(o - 1);
        if p2 >= p1 {
            p2 += 1;
        }
        let s = if sg[p1] > sg[p2] {
            1.0
        } else if sg[p1] < sg[p2] {
            -1.0
        } else {
            0.0
        };
        total += (-s * (sf[p1] - sf[p2])).max(0.0);
    }
    total / o as f64
}

/// Mismatches between `rank_loss_batch` and the oracle over 100 seeds per
/// batch size, plus pair-count mismatches.
pub fn combinatorics_suite() -> Vec<String> {
    let mut failures = Vec::new();
    for b in 3..=5 {
        if losses::enumerate_pairs(b).len() != b * (b - 1) / 2 {
            failures.push(format!("pair count for B={b}"));
        }
        for seed in 0..100u64 {
            let mut data_rng = SeededRng::new(seed * 31 + b as u64);
            let feats = Tensor::randn(&[b, 16], 1.0, &mut data_rng);
            let labels: Vec<GazeDirection> = (0..b).map(|_| random_gaze(&mut data_rng)).collect();
            let got = losses::rank_loss_batch(&feats, &labels, &mut SeededRng::new(seed)).unwrap();
            let want = brute_force_rank_loss(&feats, &labels, &mut SeededRng::new(seed));
            if got.to_bits() != want.to_bits() {
                failures.push(format!("B={b} seed={seed}: {got} vs {want}"));
            }
        }
    }
    failures
}

/// Mean angle in degrees between `n` pairs of random unit vectors.
pub fn random_direction_baseline(n: usize, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let total: f64 = (0..n)
        .map(|_| gazesep::angular_error_deg(&random_gaze(&mut rng), &random_gaze(&mut rng)))
        .sum();
    total / n as f64
}
