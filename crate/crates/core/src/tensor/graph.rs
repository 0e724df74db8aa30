//! Reverse-mode differentiation tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! creation order, and an operation can only refer to nodes created before
//! it, so walking the node list backwards is a valid topological order and
//! visits each operation exactly once.

use super::kernels::{self, ConvGeom, GruCache, GruDims};
use super::{ParamId, ParamStore, Real, Tensor};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<R> {
    pub mean: Vec<R>,
    pub var: Vec<R>,
    pub initialized: bool,
    pub momentum: R,
    pub eps: R,
}

impl<R: Real> BnStats<R> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![R::zero(); channels],
            var: vec![R::one(); channels],
            initialized: false,
            momentum: R::lit(0.99),
            eps: R::lit(1e-5),
        }
    }

    fn update(&mut self, batch_mean: &[R], batch_var: &[R], rows: usize) {
        let m = self.momentum;
        let unbias = R::from_usize(rows).unwrap() / R::from_usize(rows - 1).unwrap();
        for c in 0..self.mean.len() {
            self.mean[c] = m * self.mean[c] + (R::one() - m) * batch_mean[c];
            self.var[c] = m * self.var[c] + (R::one() - m) * batch_var[c] * unbias;
        }
        self.initialized = true;
    }
}

enum Op<R> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, R),
    Sum(Var),
    Reshape(Var),
    LeakyRelu {
        input: Var,
        slope: R,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<R>,
        inv_std: Vec<R>,
    },
    BatchNormEval {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<R>,
        inv_std: Vec<R>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
        n: usize,
    },
    GlobalAvgPool {
        input: Var,
        n: usize,
        t: usize,
        c: usize,
    },
    Gru {
        input: Var,
        kernel: Var,
        recurrent: Var,
        bias: Var,
        mask: Option<Vec<R>>,
        cache: GruCache<R>,
        n: usize,
        t: usize,
    },
    /// Fused scalar losses whose input gradient is computed during the
    /// forward pass and scaled by the upstream gradient on the way back.
    Loss {
        input: Var,
        grad: Vec<R>,
    },
}

struct Node<R> {
    value: Tensor<R>,
    grad: Option<Vec<R>>,
    requires_grad: bool,
    op: Op<R>,
}

pub struct Graph<R> {
    nodes: Vec<Node<R>>,
    bindings: Vec<(ParamId, Var)>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

/// Collapse leading axes so `[.., T, C]` becomes `(N, T, C)`; rank 2 is a
/// single sample.
fn ntc(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, c] => Ok((1, t, c)),
        [n, t, c] => Ok((n, t, c)),
        _ => Err(Error::dim(format!("{what}: expected [T, C] or [N, T, C], got {shape:?}"))),
    }
}

fn with_time(shape: &[usize], t: usize, c: usize) -> Vec<usize> {
    match shape.len() {
        2 => vec![t, c],
        _ => vec![shape[0], t, c],
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<R>, requires_grad: bool, op: Op<R>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Leaf that collects a gradient.
    pub fn leaf(&mut self, value: Tensor<R>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Bind a parameter of `store` as a gradient-collecting leaf.
    pub fn param(&mut self, store: &ParamStore<R>, id: ParamId) -> Var {
        let v = self.leaf(store.get(id).value.clone());
        self.bindings.push((id, v));
        v
    }

    pub fn bindings(&self) -> &[(ParamId, Var)] {
        &self.bindings
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[R]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, what: &str, f: impl Fn(R, R) -> R) -> Result<Tensor<R>> {
        self.same_shape(a, b, what)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "add", |p, q| p + q)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "sub", |p, q| p - q)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "mul", |p, q| p * q)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: R) -> Var {
        let x = self.value(a);
        let v = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&p| p * k).collect()).unwrap();
        let rg = self.rg(&[a]);
        self.push(v, rg, Op::Scale(a, k))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: R = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, rg, Op::Reshape(a)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: R) -> Var {
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .map(|&p| if p >= R::zero() { p } else { slope * p })
            .collect();
        let v = Tensor::new(x.shape().to_vec(), data).unwrap();
        let rg = self.rg(&[a]);
        self.push(v, rg, Op::LeakyRelu { input: a, slope })
    }

    /// 1-D cross-correlation of `input [T, C_in]` or `[N, T, C_in]` with
    /// `weight [K, C_in, C_out]`. Stride 1 keeps the length ("same"
    /// padding, odd `K`); stride `s > 1` requires `T % s == 0` and yields
    /// `T / s` frames without padding.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let (n, t, c_in) = ntc(self.shape(input), "conv1d")?;
        let (k, wc_in, c_out) = match *self.shape(weight) {
            [k, ci, co] => (k, ci, co),
            ref s => return Err(Error::dim(format!("conv1d: weight must be [K, C_in, C_out], got {s:?}"))),
        };
        if wc_in != c_in {
            return Err(Error::dim(format!(
                "conv1d: input has {c_in} channels but weight expects {wc_in}"
            )));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::dim(format!(
                "conv1d: bias must be [{c_out}], got {:?}",
                self.shape(bias)
            )));
        }
        let geom = ConvGeom::new(n, t, c_in, k, c_out, stride)?;
        let out = kernels::conv1d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let shape = with_time(self.shape(input), geom.t_out, c_out);
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Non-overlapping max pooling over the time axis.
    pub fn maxpool1d(&mut self, input: Var, size: usize) -> Result<Var> {
        let (n, t, c) = ntc(self.shape(input), "maxpool1d")?;
        if size == 0 || t % size != 0 {
            return Err(Error::len(format!(
                "maxpool1d: length {t} is not divisible by pool size {size}"
            )));
        }
        let (out, argmax) = kernels::maxpool_forward(self.value(input).data(), n, t, c, size);
        let shape = with_time(self.shape(input), t / size, c);
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::MaxPool { input, argmax }))
    }

    /// Batch normalisation over every axis but the last (channels).
    ///
    /// Train mode normalises with batch statistics and folds them into
    /// `stats`; eval mode uses `stats` as is.
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats<R>,
        mode: BnMode,
    ) -> Result<Var> {
        match mode {
            BnMode::Train => self.batchnorm_train(input, gamma, beta, stats),
            BnMode::Eval => self.batchnorm_eval(input, gamma, beta, stats),
        }
    }

    fn bn_check(&self, input: Var, gamma: Var, beta: Var, stats: &BnStats<R>) -> Result<(Vec<usize>, usize, usize)> {
        let shape = self.shape(input).to_vec();
        let c = *shape.last().ok_or_else(|| Error::dim("batchnorm: scalar input"))?;
        let rows = self.value(input).numel() / c.max(1);
        for (v, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.shape(v) != [c] {
                return Err(Error::dim(format!(
                    "batchnorm: {what} must be [{c}], got {:?}",
                    self.shape(v)
                )));
            }
        }
        if stats.mean.len() != c {
            return Err(Error::dim(format!(
                "batchnorm: running statistics have {} channels, input has {c}",
                stats.mean.len()
            )));
        }
        Ok((shape, rows, c))
    }

    pub fn batchnorm_train(&mut self, input: Var, gamma: Var, beta: Var, stats: &mut BnStats<R>) -> Result<Var> {
        let (shape, rows, c) = self.bn_check(input, gamma, beta, stats)?;
        if rows < 2 {
            return Err(Error::arg("batchnorm: train mode needs at least 2 rows per channel"));
        }
        let f = kernels::batchnorm_train_forward(
            self.value(input).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            rows,
            c,
            stats.eps,
        );
        stats.update(&f.mean, &f.var, rows);
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, f.y)?,
            rg,
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat: f.xhat,
                inv_std: f.inv_std,
            },
        ))
    }

    pub fn batchnorm_eval(&mut self, input: Var, gamma: Var, beta: Var, stats: &BnStats<R>) -> Result<Var> {
        let (shape, _, c) = self.bn_check(input, gamma, beta, stats)?;
        if !stats.initialized {
            log::warn!("batchnorm: evaluating with uninitialised running statistics (mean 0, var 1)");
        }
        let inv_std: Vec<R> = stats.var.iter().map(|&v| R::one() / (v + stats.eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let x = self.value(input).data();
        let y = x
            .iter()
            .enumerate()
            .map(|(i, &xv)| {
                let ci = i % c;
                g[ci] * (xv - stats.mean[ci]) * inv_std[ci] + b[ci]
            })
            .collect();
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, y)?,
            rg,
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                mean: stats.mean.clone(),
                inv_std,
            },
        ))
    }

    /// Affine map of `[D_in]` or `[N, D_in]` by `weight [D_in, D_out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let (n, d_in) = match *in_shape {
            [d] => (1, d),
            [n, d] => (n, d),
            _ => return Err(Error::dim(format!("linear: expected [D] or [N, D], got {in_shape:?}"))),
        };
        let (w_in, d_out) = match *self.shape(weight) {
            [a, b] => (a, b),
            ref s => return Err(Error::dim(format!("linear: weight must be rank 2, got {s:?}"))),
        };
        if w_in != d_in {
            return Err(Error::dim(format!(
                "linear: input dimension {d_in} does not match weight {:?}",
                self.shape(weight)
            )));
        }
        if self.shape(bias) != [d_out] {
            return Err(Error::dim(format!(
                "linear: bias must be [{d_out}], got {:?}",
                self.shape(bias)
            )));
        }
        let out = kernels::linear_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            n,
            d_in,
            d_out,
        );
        let shape = if in_shape.len() == 1 { vec![d_out] } else { vec![n, d_out] };
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::Linear {
                input,
                weight,
                bias,
                n,
            },
        ))
    }

    /// Mean over the time axis: `[T, C] -> [C]`, `[N, T, C] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (n, t, c) = ntc(&shape, "global_avg_pool")?;
        if t == 0 {
            return Err(Error::len("global_avg_pool: empty time axis"));
        }
        let x = self.value(input).data();
        let inv = R::one() / R::from_usize(t).unwrap();
        let mut out = vec![R::zero(); n * c];
        for ni in 0..n {
            for ti in 0..t {
                for ci in 0..c {
                    out[ni * c + ci] += x[(ni * t + ti) * c + ci];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let out_shape = if shape.len() == 2 { vec![c] } else { vec![n, c] };
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new(out_shape, out)?, rg, Op::GlobalAvgPool { input, n, t, c }))
    }

    /// Gated recurrent unit over `[T, C]` or `[N, T, C]`, returning the last
    /// hidden state (`[H]` or `[N, H]`). `mask` is a recurrent dropout mask
    /// of `N * H` values held fixed across time steps.
    pub fn gru(
        &mut self,
        input: Var,
        kernel: Var,
        recurrent: Var,
        bias: Var,
        mask: Option<Vec<R>>,
    ) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let (n, t, c) = ntc(&in_shape, "gru")?;
        if t == 0 {
            return Err(Error::len("gru: zero-length input, no frames to aggregate"));
        }
        let h3 = match *self.shape(kernel) {
            [kc, h3] if kc == c && h3 % 3 == 0 => h3,
            ref s => {
                return Err(Error::dim(format!(
                    "gru: kernel must be [{c}, 3H], got {s:?}"
                )))
            }
        };
        let h = h3 / 3;
        if self.shape(recurrent) != [h, h3] || self.shape(bias) != [h3] {
            return Err(Error::dim(format!(
                "gru: recurrent kernel {:?} / bias {:?} inconsistent with H = {h}",
                self.shape(recurrent),
                self.shape(bias)
            )));
        }
        if let Some(m) = &mask {
            if m.len() != n * h {
                return Err(Error::dim(format!(
                    "gru: dropout mask has {} values, expected {}",
                    m.len(),
                    n * h
                )));
            }
        }
        let dims = GruDims { n, t, c, h };
        let (out, cache) = kernels::gru_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(recurrent).data(),
            self.value(bias).data(),
            mask.as_deref(),
            &dims,
        );
        let shape = if in_shape.len() == 2 { vec![h] } else { vec![n, h] };
        let rg = self.rg(&[input, kernel, recurrent, bias]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::Gru {
                input,
                kernel,
                recurrent,
                bias,
                mask,
                cache,
                n,
                t,
            },
        ))
    }

    /// Record a scalar loss whose gradient with respect to `input` has
    /// already been computed.
    pub(crate) fn fused_loss(&mut self, input: Var, value: R, grad: Vec<R>) -> Var {
        debug_assert_eq!(grad.len(), self.value(input).numel());
        let rg = self.rg(&[input]);
        self.push(Tensor::scalar(value), rg, Op::Loss { input, grad })
    }

    /// Backpropagate from a scalar node.
    ///
    /// Intermediate gradients are recomputed on every call; leaf gradients
    /// accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![R::one()]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contribs = self.local_grads(i, &g);
            for (v, dv) in contribs {
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match node.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&dv).for_each(|(a, &d)| *a += d),
                    None => node.grad = Some(dv),
                }
            }
        }
        Ok(())
    }

    /// Gradients flowing from node `i` into its inputs, given its own
    /// gradient `g`.
    fn local_grads(&self, i: usize, g: &[R]) -> Vec<(Var, Vec<R>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let need = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|&x| -x).collect())],
            Op::Mul(a, b) => {
                let da = g.iter().zip(val(*b)).map(|(&d, &y)| d * y).collect();
                let db = g.iter().zip(val(*a)).map(|(&d, &x)| d * x).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(a, k) => vec![(*a, g.iter().map(|&d| d * *k).collect())],
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).len()])],
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::LeakyRelu { input, slope } => {
                let d = g
                    .iter()
                    .zip(val(*input))
                    .map(|(&d, &x)| if x >= R::zero() { d } else { d * *slope })
                    .collect();
                vec![(*input, d)]
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (dx, dw, db) = kernels::conv1d_backward(val(*input), val(*weight), g, geom, need(*input));
                let mut out = vec![(*weight, dw), (*bias, db)];
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                out
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![R::zero(); val(*input).len()];
                for (&idx, &d) in argmax.iter().zip(g) {
                    dx[idx] += d;
                }
                vec![(*input, dx)]
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                let (dx, dgamma, dbeta) =
                    kernels::batchnorm_train_backward(g, xhat, val(*gamma), inv_std, rows, c);
                vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let c = inv_std.len();
                let (x, gm) = (val(*input), val(*gamma));
                let mut dx = vec![R::zero(); x.len()];
                let mut dgamma = vec![R::zero(); c];
                let mut dbeta = vec![R::zero(); c];
                for (i, &d) in g.iter().enumerate() {
                    let ci = i % c;
                    dx[i] = d * gm[ci] * inv_std[ci];
                    dgamma[ci] += d * (x[i] - mean[ci]) * inv_std[ci];
                    dbeta[ci] += d;
                }
                vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Linear {
                input,
                weight,
                bias,
                n,
            } => {
                let ws = self.nodes[weight.0].value.shape();
                let (d_in, d_out) = (ws[0], ws[1]);
                let (dx, dw, db) =
                    kernels::linear_backward(val(*input), val(*weight), g, *n, d_in, d_out, need(*input));
                let mut out = vec![(*weight, dw), (*bias, db)];
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                out
            }
            Op::GlobalAvgPool { input, n, t, c } => {
                let inv = R::one() / R::from_usize(*t).unwrap();
                let mut dx = vec![R::zero(); n * t * c];
                for ni in 0..*n {
                    for ti in 0..*t {
                        for ci in 0..*c {
                            dx[(ni * t + ti) * c + ci] = g[ni * c + ci] * inv;
                        }
                    }
                }
                vec![(*input, dx)]
            }
            Op::Gru {
                input,
                kernel,
                recurrent,
                bias,
                mask,
                cache,
                n,
                t,
            } => {
                let ks = self.nodes[kernel.0].value.shape();
                let dims = GruDims {
                    n: *n,
                    t: *t,
                    c: ks[0],
                    h: ks[1] / 3,
                };
                let gr = kernels::gru_backward(
                    g,
                    val(*input),
                    val(*kernel),
                    val(*recurrent),
                    mask.as_deref(),
                    cache,
                    &dims,
                    need(*input),
                );
                let mut out = vec![(*kernel, gr.dkernel), (*recurrent, gr.drecurrent), (*bias, gr.dbias)];
                if let Some(dx) = gr.dx {
                    out.push((*input, dx));
                }
                out
            }
            Op::Loss { input, grad } => vec![(*input, grad.iter().map(|&x| x * g[0]).collect())],
        }
    }
}
