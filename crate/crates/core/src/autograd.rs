//! A small reverse-mode automatic differentiation tape.
//!
//! Every training objective in the crate is built on a [`Graph`]: leaves are
//! pushed with [`Graph::leaf`], operations append nodes, and
//! [`Graph::backward`] walks the tape in reverse to produce gradients for
//! every node. The graph is rebuilt per step; nothing is retained between
//! steps.

use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRowBias(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Relu(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Square(Var),
    Abs(Var),
    Acos(Var, f64),
    RowNormalize(Var),
    RowDot(Var, Var),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    LogSoftmax(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node.
pub struct Grads(Vec<Option<Tensor>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }

    /// Gradient of `v`, or `None` when the root does not depend on it.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0[v.0].take()
    }
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], f: impl FnOnce(&mut [f64])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(t.data_mut());
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(t.shape().to_vec(), data);
        self.push(out, op)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.numel(), tb.numel(), "elementwise op on {:?} and {:?}", ta.shape(), tb.shape());
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    /// `x[n, :] + b` for `x: [N, M]`, `b: [M]`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(b));
        let m = tx.cols();
        assert_eq!(tb.numel(), m, "bias length");
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(m) {
            for (v, bias) in row.iter_mut().zip(tb.data()) {
                *v += bias;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data);
        self.push(out, Op::AddRowBias(x, b))
    }

    /// `[N, K] x [K, M] -> [N, M]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = (ta.rows(), ta.cols());
        let m = tb.cols();
        assert_eq!(tb.rows(), k, "matmul inner dims {:?} x {:?}", ta.shape(), tb.shape());
        let mut out = vec![0.0; n * m];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, bv) in orow.iter_mut().zip(&bd[p * m..(p + 1) * m]) {
                    *o += av * bv;
                }
            }
        }
        self.push(Tensor::new(vec![n, m], out), Op::MatMul(a, b))
    }

    /// `[N, K] x [M, K]^T -> [N, M]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = (ta.rows(), ta.cols());
        let m = tb.rows();
        assert_eq!(tb.cols(), k, "matmul_nt inner dims {:?} x {:?}", ta.shape(), tb.shape());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ar = ta.row(i);
            for j in 0..m {
                out[i * m + j] = ar.iter().zip(tb.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        self.push(Tensor::new(vec![n, m], out), Op::MatMulNT(a, b))
    }

    /// 2D convolution, `x: [N, C, H, W]`, `w: [O, C, K, K]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (n, c, h, wd) = dims4(tx.shape());
        let (o, c2, k, k2) = dims4(tw.shape());
        assert_eq!(c, c2, "conv2d channel mismatch");
        assert_eq!(k, k2, "conv2d expects square kernels");
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * o * oh * ow];
        let (xd, wdat, bd) = (tx.data(), tw.data(), tb.data());
        for ni in 0..n {
            for oi in 0..o {
                let obase = (ni * o + oi) * oh * ow;
                out[obase..obase + oh * ow].fill(bd[oi]);
                for ci in 0..c {
                    let xbase = (ni * c + ci) * h * wd;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = wdat[((oi * c + ci) * k + ky) * k + kx];
                            for oy in 0..oh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = xbase + iy as usize * wd;
                                let orow = obase + oy * ow;
                                for ox in 0..ow {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    out[orow + ox] += wv * xd[xrow + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, o, oh, ow], out);
        self.push(value, Op::Conv2d { x, w, b, stride, pad })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a), f64::abs)
    }

    /// `acos(clamp(x, -1 + eps, 1 - eps))`. The gradient is zero where the
    /// clamp is active.
    pub fn acos(&mut self, a: Var, eps: f64) -> Var {
        self.map(a, Op::Acos(a, eps), |x| x.clamp(-1.0 + eps, 1.0 - eps).acos())
    }

    /// Scales every row of `[N, M]` to unit L2 norm.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(m) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data);
        self.push(out, Op::RowNormalize(a))
    }

    /// Row-wise dot product `[N, M] . [N, M] -> [N]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "row_dot shapes");
        let out: Vec<f64> = (0..ta.rows())
            .map(|i| ta.row(i).iter().zip(tb.row(i)).map(|(x, y)| x * y).sum())
            .collect();
        self.push(Tensor::vector(out), Op::RowDot(a, b))
    }

    /// `[N, M] -> [N]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
        self.push(Tensor::vector(out), Op::SumRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshape(shape);
        self.push(out, Op::Reshape(a))
    }

    /// Flat gather: `out[i] = a.data[idx[i]]`.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = idx.iter().map(|&i| t.data()[i]).collect();
        self.push(Tensor::vector(out), Op::Gather(a, idx))
    }

    /// Concatenates along the leading axis; trailing dims must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows trailing dims");
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(Tensor::new(vec![rows, cols], data), Op::ConcatRows(parts.to_vec()))
    }

    /// Log-softmax over all elements.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let lse = log_sum_exp(t.data());
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x - lse).collect());
        self.push(out, Op::LogSoftmax(a))
    }

    /// Reverse pass from a single-element `root`.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.value(root).numel(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads(grads)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_to(d, gd));
                self.acc(grads, *b, |d| add_to(d, gd));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_to(d, gd));
                self.acc(grads, *b, |d| d.iter_mut().zip(gd).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(gd.iter().zip(bv)).for_each(|(d, (g, b))| *d += g * b)
                });
                self.acc(grads, *b, |d| {
                    d.iter_mut().zip(gd.iter().zip(av)).for_each(|(d, (g, a))| *d += g * a)
                });
            }
            Op::Scale(a, c) => self.acc(grads, *a, |d| d.iter_mut().zip(gd).for_each(|(d, g)| *d += c * g)),
            Op::AddScalar(a) => self.acc(grads, *a, |d| add_to(d, gd)),
            Op::AddRowBias(x, b) => {
                self.acc(grads, *x, |d| add_to(d, gd));
                let m = self.value(*b).numel();
                self.acc(grads, *b, |d| {
                    for row in gd.chunks(m) {
                        add_to(d, row);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                self.acc(grads, *a, |d| {
                    for r in 0..n {
                        for p in 0..k {
                            d[r * k + p] += (0..m).map(|j| gd[r * m + j] * tb.data()[p * m + j]).sum::<f64>();
                        }
                    }
                });
                self.acc(grads, *b, |d| {
                    for r in 0..n {
                        for p in 0..k {
                            let av = ta.data()[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..m {
                                d[p * m + j] += av * gd[r * m + j];
                            }
                        }
                    }
                });
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.rows());
                self.acc(grads, *a, |d| {
                    for r in 0..n {
                        for j in 0..m {
                            let gv = gd[r * m + j];
                            for p in 0..k {
                                d[r * k + p] += gv * tb.data()[j * k + p];
                            }
                        }
                    }
                });
                self.acc(grads, *b, |d| {
                    for r in 0..n {
                        for j in 0..m {
                            let gv = gd[r * m + j];
                            for p in 0..k {
                                d[j * k + p] += gv * ta.data()[r * k + p];
                            }
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                self.conv2d_backward(*x, *w, *b, *stride, *pad, g, grads);
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(gd.iter().zip(av)).for_each(|(d, (g, x))| {
                        if *x > 0.0 {
                            *d += g
                        }
                    })
                });
            }
            Op::Tanh(a) => self.acc(grads, *a, |d| {
                d.iter_mut().zip(gd.iter().zip(y.data())).for_each(|(d, (g, t))| *d += g * (1.0 - t * t))
            }),
            Op::Softplus(a) => {
                let av = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(gd.iter().zip(av)).for_each(|(d, (g, x))| *d += g * sigmoid(*x))
                });
            }
            Op::Exp(a) => self.acc(grads, *a, |d| {
                d.iter_mut().zip(gd.iter().zip(y.data())).for_each(|(d, (g, e))| *d += g * e)
            }),
            Op::Square(a) => {
                let av = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(gd.iter().zip(av)).for_each(|(d, (g, x))| *d += 2.0 * g * x)
                });
            }
            Op::Abs(a) => {
                let av = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(gd.iter().zip(av)).for_each(|(d, (g, x))| {
                        if *x > 0.0 {
                            *d += g
                        } else if *x < 0.0 {
                            *d -= g
                        }
                    })
                });
            }
            Op::Acos(a, eps) => {
                let av = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(gd.iter().zip(av)).for_each(|(d, (g, x))| {
                        if *x > -1.0 + eps && *x < 1.0 - eps {
                            *d -= g / (1.0 - x * x).sqrt();
                        }
                    })
                });
            }
            Op::RowNormalize(a) => {
                let ta = self.value(*a);
                let m = ta.cols();
                self.acc(grads, *a, |d| {
                    for r in 0..ta.rows() {
                        let xr = ta.row(r);
                        let yr = &y.data()[r * m..(r + 1) * m];
                        let gr = &gd[r * m..(r + 1) * m];
                        let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let yg: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..m {
                            d[r * m + j] += (gr[j] - yr[j] * yg) / n;
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let m = ta.cols();
                self.acc(grads, *a, |d| {
                    for (r, gv) in gd.iter().enumerate() {
                        for j in 0..m {
                            d[r * m + j] += gv * tb.data()[r * m + j];
                        }
                    }
                });
                self.acc(grads, *b, |d| {
                    for (r, gv) in gd.iter().enumerate() {
                        for j in 0..m {
                            d[r * m + j] += gv * ta.data()[r * m + j];
                        }
                    }
                });
            }
            Op::SumRows(a) => {
                let m = self.value(*a).cols();
                self.acc(grads, *a, |d| {
                    for (r, gv) in gd.iter().enumerate() {
                        d[r * m..(r + 1) * m].iter_mut().for_each(|d| *d += gv);
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |d| d.iter_mut().for_each(|d| *d += gd[0])),
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                self.acc(grads, *a, |d| d.iter_mut().for_each(|d| *d += gd[0] / n));
            }
            Op::Reshape(a) => self.acc(grads, *a, |d| add_to(d, gd)),
            Op::Gather(a, idx) => self.acc(grads, *a, |d| {
                for (k, &i) in idx.iter().enumerate() {
                    d[i] += gd[k];
                }
            }),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.acc(grads, p, |d| add_to(d, &gd[offset..offset + n]));
                    offset += n;
                }
            }
            Op::LogSoftmax(a) => {
                let total: f64 = gd.iter().sum();
                self.acc(grads, *a, |d| {
                    d.iter_mut()
                        .zip(gd.iter().zip(y.data()))
                        .for_each(|(d, (g, ly))| *d += g - ly.exp() * total)
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        let shape = self.shape(v);
        accumulate(&mut grads[v.0], &shape, f);
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (tx, tw) = (self.value(x), self.value(w));
        let (n, c, h, wd) = dims4(tx.shape());
        let (o, _, k, _) = dims4(tw.shape());
        let (_, _, oh, ow) = dims4(g.shape());
        let gd = g.data();
        let mut gx = vec![0.0; tx.numel()];
        let mut gw = vec![0.0; tw.numel()];
        let mut gb = vec![0.0; o];
        let (xd, wdat) = (tx.data(), tw.data());
        for ni in 0..n {
            for oi in 0..o {
                let obase = (ni * o + oi) * oh * ow;
                gb[oi] += gd[obase..obase + oh * ow].iter().sum::<f64>();
                for ci in 0..c {
                    let xbase = (ni * c + ci) * h * wd;
                    for ky in 0..k {
                        for kx in 0..k {
                            let widx = ((oi * c + ci) * k + ky) * k + kx;
                            let wv = wdat[widx];
                            let mut acc_w = 0.0;
                            for oy in 0..oh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = xbase + iy as usize * wd;
                                let orow = obase + oy * ow;
                                for ox in 0..ow {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    let gv = gd[orow + ox];
                                    acc_w += gv * xd[xrow + ix as usize];
                                    gx[xrow + ix as usize] += wv * gv;
                                }
                            }
                            gw[widx] += acc_w;
                        }
                    }
                }
            }
        }
        self.acc(grads, x, |d| add_to(d, &gx));
        self.acc(grads, w, |d| add_to(d, &gw));
        self.acc(grads, b, |d| add_to(d, &gb));
    }
}

fn add_to(d: &mut [f64], g: &[f64]) {
    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
}

fn dims4(s: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(s.len(), 4, "expected a 4-d tensor, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    /// Central-difference check of `build` (which maps leaf values to a scalar
    /// root) at `inputs`, for every element of every input.
    fn check(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let root = build(&mut g, &vars);
        let grads = g.backward(root);
        let eval = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let vs: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone())).collect();
            let r = build(&mut g, &vs);
            g.value(r).item()
        };
        let h = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
            for i in 0..t.numel() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[i];
                let err = (a - fd).abs() / (a.abs().max(fd.abs()).max(1e-6));
                assert!(err < 1e-5, "input {k} elem {i}: analytic {a} vs fd {fd}");
            }
        }
    }

    fn rand(shape: &[usize], rng: &mut SeededRng) -> Tensor {
        Tensor::randn(shape, 1.0, rng)
    }

    #[test]
    fn matmul_variants() {
        let mut r = SeededRng::new(1);
        check(vec![rand(&[3, 4], &mut r), rand(&[4, 2], &mut r)], |g, v| {
            let m = g.matmul(v[0], v[1]);
            let s = g.square(m);
            g.sum(s)
        });
        check(vec![rand(&[3, 4], &mut r), rand(&[5, 4], &mut r)], |g, v| {
            let m = g.matmul_nt(v[0], v[1]);
            let t = g.tanh(m);
            g.sum(t)
        });
    }

    #[test]
    fn conv2d_gradient() {
        let mut r = SeededRng::new(2);
        let inputs = vec![rand(&[2, 2, 5, 5], &mut r), rand(&[3, 2, 3, 3], &mut r), rand(&[3], &mut r)];
        check(inputs.clone(), |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 2, 1);
            let t = g.tanh(y);
            g.mean(t)
        });
        check(inputs, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 1, 0);
            let s = g.square(y);
            g.sum(s)
        });
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let mut r = SeededRng::new(3);
        let x = rand(&[1, 1, 3, 3], &mut r);
        let w = rand(&[1, 1, 3, 3], &mut r);
        let b = Tensor::vector(vec![0.25]);
        let mut g = Graph::new();
        let (vx, vw, vb) = (g.leaf(x.clone()), g.leaf(w.clone()), g.leaf(b));
        let y = g.conv2d(vx, vw, vb, 1, 0);
        let expect: f64 = 0.25 + x.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert!((g.value(y).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn normalization_and_reductions() {
        let mut r = SeededRng::new(4);
        check(vec![rand(&[3, 5], &mut r), rand(&[3, 5], &mut r)], |g, v| {
            let a = g.row_normalize(v[0]);
            let b = g.row_normalize(v[1]);
            let d = g.row_dot(a, b);
            let e = g.acos(d, 1e-7);
            g.mean(e)
        });
        check(vec![rand(&[4, 3], &mut r), rand(&[3], &mut r)], |g, v| {
            let y = g.add_row_bias(v[0], v[1]);
            let s = g.softplus(y);
            let rows = g.sum_rows(s);
            let l = g.log_softmax(rows);
            let gathered = g.gather(l, vec![0, 2, 2]);
            g.sum(gathered)
        });
    }

    #[test]
    fn elementwise_and_concat() {
        let mut r = SeededRng::new(5);
        check(vec![rand(&[2, 3], &mut r), rand(&[2, 3], &mut r), rand(&[1, 3], &mut r)], |g, v| {
            let a = g.mul(v[0], v[1]);
            let b = g.sub(a, v[1]);
            let c = g.concat_rows(&[b, v[2]]);
            let e = g.exp(c);
            let f = g.scale(e, 0.3);
            let h = g.add_scalar(f, 2.0);
            let k = g.abs(h);
            let rs = g.reshape(k, &[9]);
            let rl = g.add(rs, rs);
            g.sum(rl)
        });
    }

    #[test]
    fn relu_and_gradient_of_unused_leaf() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![-1.0, 2.0]));
        let unused = g.leaf(Tensor::scalar(3.0));
        let y = g.relu(a);
        let s = g.sum(y);
        let grads = g.backward(s);
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 1.0]);
        assert!(grads.get(unused).is_none());
    }
}
