use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::config::ModelConfig;

/// Backbone `E` (stride-2 convolutions and a linear layer), filter `M`
/// (two-layer `tanh` MLP, residual when `D_re == D`) and affine head `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeModel {
    config: ModelConfig,
    params: Vec<Tensor>,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub f: Var,
    pub f_re: Var,
    pub g_hat: Var,
}

/// Batch outputs of [`GazeModel::forward`]: `f` is `[B, D]`, `f_re` is
/// `[B, D_re]` and `g_hat` is `[B, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub f: Tensor,
    pub f_re: Tensor,
    pub g_hat: Tensor,
}

const KERNEL: usize = 3;

fn conv_out(n: usize) -> usize {
    (n + 2 - KERNEL) / 2 + 1
}

impl GazeModel {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let [_, _, c] = config.image_shape;
        let mut params = Vec::new();
        let mut in_ch = c;
        for &out in &config.channels {
            let fan_in = in_ch * KERNEL * KERNEL;
            params.push(Tensor::randn(&[out, in_ch, KERNEL, KERNEL], (2.0 / fan_in as f64).sqrt(), rng));
            params.push(Tensor::zeros(&[out]));
            in_ch = out;
        }
        let flat = Self::flat_width(&config);
        let (d, d_re, h) = (config.feature_dim, config.filtered_dim, config.filter_hidden);
        params.push(Tensor::randn(&[flat, d], (1.0 / flat as f64).sqrt(), rng));
        params.push(Tensor::zeros(&[d]));
        params.push(Tensor::randn(&[d, h], (1.0 / d as f64).sqrt(), rng));
        params.push(Tensor::zeros(&[h]));
        let w2 = if d_re == d {
            Tensor::zeros(&[h, d_re])
        } else {
            Tensor::randn(&[h, d_re], (1.0 / h as f64).sqrt(), rng)
        };
        params.push(w2);
        params.push(Tensor::zeros(&[d_re]));
        params.push(Tensor::randn(&[d_re, 3], (1.0 / d_re as f64).sqrt(), rng));
        params.push(Tensor::zeros(&[3]));
        Ok(Self { config, params })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        let reference = Self::new(config.clone(), &mut SeededRng::new(0))?;
        if reference.params.len() != params.len() {
            return Err(Error::shape("model parameter count", reference.params.len(), params.len()));
        }
        for (i, (a, b)) in reference.params.iter().zip(&params).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::shape(format!("model parameter {i}"), format!("{:?}", a.shape()), format!("{:?}", b.shape())));
            }
        }
        Ok(Self { config, params })
    }

    fn flat_width(config: &ModelConfig) -> usize {
        let [mut h, mut w, _] = config.image_shape;
        for _ in &config.channels {
            h = conv_out(h);
            w = conv_out(w);
        }
        h * w * config.channels.last().copied().unwrap_or(0)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone())).collect()
    }

    /// Stacks images into an `[N, C, H, W]` tensor.
    pub fn input_tensor(&self, images: &[&Image]) -> Result<Tensor> {
        let [h, w, c] = self.config.image_shape;
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            img.expect_shape((h, w, c))?;
            data.extend(img.to_chw());
        }
        Ok(Tensor::new(vec![images.len(), c, h, w], data))
    }

    /// Builds `E`, `M` and `F` on `g` for the `[N, C, H, W]` input `x`.
    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> ForwardVars {
        let n = g.value(x).shape()[0];
        let blocks = self.config.channels.len();
        let mut h = x;
        for b in 0..blocks {
            h = g.conv2d(h, vars[2 * b], vars[2 * b + 1], 2, 1);
            h = g.relu(h);
        }
        let flat = g.value(h).numel() / n;
        let h = g.reshape(h, &[n, flat]);
        let rest = &vars[2 * blocks..];
        let f = g.matmul(h, rest[0]);
        let f = g.add_row_bias(f, rest[1]);
        let z = g.matmul(f, rest[2]);
        let z = g.add_row_bias(z, rest[3]);
        let z = g.tanh(z);
        let z = g.matmul(z, rest[4]);
        let z = g.add_row_bias(z, rest[5]);
        let f_re = if self.config.filtered_dim == self.config.feature_dim {
            g.add(f, z)
        } else {
            z
        };
        let out = g.matmul(f_re, rest[6]);
        let g_hat = g.add_row_bias(out, rest[7]);
        ForwardVars { f, f_re, g_hat }
    }

    /// Evaluation-mode forward pass over a batch of images.
    pub fn forward(&self, images: &[&Image]) -> Result<ForwardOutput> {
        if images.is_empty() {
            return Err(Error::Config("forward needs at least one image".into()));
        }
        let x = self.input_tensor(images)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let x = g.leaf(x);
        let out = self.forward_graph(&mut g, &vars, x);
        Ok(ForwardOutput {
            f: g.value(out.f).clone(),
            f_re: g.value(out.f_re).clone(),
            g_hat: g.value(out.g_hat).clone(),
        })
    }

    /// `forward` in chunks, concatenating the outputs.
    pub fn forward_all(&self, images: &[&Image], chunk: usize) -> Result<ForwardOutput> {
        let mut parts = Vec::new();
        for c in images.chunks(chunk.max(1)) {
            parts.push(self.forward(c)?);
        }
        let cat = |get: fn(&ForwardOutput) -> &Tensor| {
            let cols = get(&parts[0]).cols();
            let data: Vec<f64> = parts.iter().flat_map(|p| get(p).data().iter().copied()).collect();
            Tensor::new(vec![data.len() / cols, cols], data)
        };
        Ok(ForwardOutput {
            f: cat(|p| &p.f),
            f_re: cat(|p| &p.f_re),
            g_hat: cat(|p| &p.g_hat),
        })
    }
}
