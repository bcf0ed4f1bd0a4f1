//! Reverse-mode tape. Each op stores what its vector-Jacobian product needs;
//! `backward` walks the nodes in reverse once and then frees them.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeom};
use super::params::{ParamKind, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const LOG_EPS: f64 = -27.631_021_115_928_547; // ln(1e-12)

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        n: usize,
        geom: ConvGeom,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
        n: usize,
        k: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        n: usize,
        c: usize,
        hw: usize,
        batch_stats: bool,
    },
    Relu {
        x: usize,
    },
    GlobalAvgPool {
        x: usize,
        n: usize,
        c: usize,
        hw: usize,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        rows: Vec<usize>,
        targets: Vec<f32>,
        scale: f32,
    },
    SoftmaxSquaredError {
        logits: usize,
        rows: Vec<usize>,
        targets: Vec<f32>,
        scale: f32,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: f32,
    },
    Sum {
        x: usize,
    },
    WeightedSum {
        x: usize,
        weights: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<(String, usize)>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::InvalidArgument("variable belongs to another tape".into()));
        }
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        Ok(v.index)
    }

    fn grad_flag(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Input data; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A named trainable leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push((name.to_string(), v.index));
        v
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let i = self.idx(v)?;
        let value = self.nodes[i].value.clone();
        Ok(self.constant(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index].value
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        let ws = self.nodes[wi].value.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(Error::Shape(format!("conv2d input {xs:?} weight {ws:?}")));
        }
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] || stride == 0 {
            return Err(Error::Shape(format!("conv2d kernel {ws:?} too large for {xs:?}")));
        }
        let geom = ConvGeom {
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            kernel: ws[2],
            stride,
            pad,
        };
        let out = kernels::conv2d_forward(
            self.nodes[xi].value.data(),
            xs[0],
            self.nodes[wi].value.data(),
            &geom,
        );
        let value = Tensor::new(vec![xs[0], geom.c_out, geom.h_out(), geom.w_out()], out)?;
        let rg = self.grad_flag(&[xi, wi]);
        Ok(self.push(
            value,
            Op::Conv2d {
                x: xi,
                w: wi,
                n: xs[0],
                geom,
            },
            rg,
        ))
    }

    /// x: [n, k], w: [o, k], b: [o]
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        let ws = self.nodes[wi].value.shape().to_vec();
        let bs = self.nodes[bi].value.shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] || bs != [ws[0]] {
            return Err(Error::Shape(format!("linear input {xs:?} weight {ws:?} bias {bs:?}")));
        }
        let out = kernels::linear_forward(
            self.nodes[xi].value.data(),
            xs[0],
            xs[1],
            self.nodes[wi].value.data(),
            self.nodes[bi].value.data(),
        );
        let value = Tensor::new(vec![xs[0], ws[0]], out)?;
        let rg = self.grad_flag(&[xi, wi, bi]);
        Ok(self.push(
            value,
            Op::Linear {
                x: xi,
                w: wi,
                b: bi,
                n: xs[0],
                k: xs[1],
            },
            rg,
        ))
    }

    /// Per-channel normalization of an [n, c, h, w] input. With `stats` set the
    /// given (mean, var) are used as constants; otherwise batch statistics are
    /// computed, differentiated through, and returned as (mean, biased var).
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[f32], &[f32])>,
    ) -> Result<(Var, Option<(Vec<f32>, Vec<f32>)>)> {
        let (xi, gi, bi) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::Shape(format!("batchnorm input {xs:?}")));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.nodes[gi].value.shape() != [c] || self.nodes[bi].value.shape() != [c] {
            return Err(Error::Shape(format!("batchnorm affine params for {c} channels")));
        }
        let xd = self.nodes[xi].value.data();
        let (mean, var, batch_stats) = match stats {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(Error::Shape("batchnorm running stats".into()));
                }
                (m.to_vec(), v.to_vec(), false)
            }
            None => {
                if n * hw < 2 {
                    return Err(Error::Shape("batch statistics need at least two values per channel".into()));
                }
                let (m, v) = kernels::channel_stats(xd, n, c, hw);
                (m, v, true)
            }
        };
        let (y, xhat, inv_std) = kernels::batchnorm_forward(
            xd,
            n,
            c,
            hw,
            &mean,
            &var,
            self.nodes[gi].value.data(),
            self.nodes[bi].value.data(),
        );
        let value = Tensor::new(xs.clone(), y)?;
        let rg = self.grad_flag(&[xi, gi, bi]);
        let v = self.push(
            value,
            Op::BatchNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
                n,
                c,
                hw,
                batch_stats,
            },
            rg,
        );
        Ok((v, batch_stats.then_some((mean, var))))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let src = &self.nodes[xi].value;
        let data = src.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.grad_flag(&[xi]);
        Ok(self.push(value, Op::Relu { x: xi }, rg))
    }

    /// [n, c, h, w] -> [n, c]
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let xs = self.nodes[xi].value.shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::Shape(format!("global_avg_pool input {xs:?}")));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let inv = 1.0 / hw as f32;
        let data = self.nodes[xi]
            .value
            .data()
            .chunks_exact(hw)
            .map(|p| p.iter().sum::<f32>() * inv)
            .collect();
        let value = Tensor::new(vec![n, c], data)?;
        let rg = self.grad_flag(&[xi]);
        Ok(self.push(value, Op::GlobalAvgPool { x: xi, n, c, hw }, rg))
    }

    fn check_loss_args(&self, li: usize, rows: &[usize], targets: &[f32]) -> Result<usize> {
        let ls = self.nodes[li].value.shape();
        if ls.len() != 2 {
            return Err(Error::Shape(format!("loss expects [n, c] logits, got {ls:?}")));
        }
        let (n, c) = (ls[0], ls[1]);
        if targets.len() != rows.len() * c {
            return Err(Error::Shape(format!(
                "{} targets for {} rows of {} classes",
                targets.len(),
                rows.len(),
                c
            )));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Shape(format!("row {r} out of {n}")));
        }
        Ok(c)
    }

    /// `scale · Σ_r −Σ_c t_rc · ln softmax(z_r)_c` over the listed rows;
    /// `targets` holds one length-c vector per listed row.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        rows: &[usize],
        targets: &[f32],
        scale: f32,
    ) -> Result<Var> {
        let li = self.idx(logits)?;
        let c = self.check_loss_args(li, rows, targets)?;
        let z = self.nodes[li].value.data();
        let mut total = 0.0f64;
        for (k, &r) in rows.iter().enumerate() {
            let logp = kernels::log_softmax_row(&z[r * c..(r + 1) * c]);
            for (t, lp) in targets[k * c..(k + 1) * c].iter().zip(&logp) {
                if *t != 0.0 {
                    total -= *t as f64 * lp.max(LOG_EPS);
                }
            }
        }
        let value = Tensor::scalar((total * scale as f64) as f32);
        let rg = self.grad_flag(&[li]);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits: li,
                rows: rows.to_vec(),
                targets: targets.to_vec(),
                scale,
            },
            rg,
        ))
    }

    /// `scale · Σ_r ‖softmax(z_r) − t_r‖²` over the listed rows.
    pub fn softmax_squared_error(
        &mut self,
        logits: Var,
        rows: &[usize],
        targets: &[f32],
        scale: f32,
    ) -> Result<Var> {
        let li = self.idx(logits)?;
        let c = self.check_loss_args(li, rows, targets)?;
        let z = self.nodes[li].value.data();
        let mut total = 0.0f64;
        for (k, &r) in rows.iter().enumerate() {
            let p = kernels::softmax_rows(&z[r * c..(r + 1) * c], c);
            for (t, pc) in targets[k * c..(k + 1) * c].iter().zip(&p) {
                let d = *pc as f64 - *t as f64;
                total += d * d;
            }
        }
        let value = Tensor::scalar((total * scale as f64) as f32);
        let rg = self.grad_flag(&[li]);
        Ok(self.push(
            value,
            Op::SoftmaxSquaredError {
                logits: li,
                rows: rows.to_vec(),
                targets: targets.to_vec(),
                scale,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if !av.same_shape(bv) {
            return Err(Error::Shape(format!("add {:?} + {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.grad_flag(&[ai, bi]);
        Ok(self.push(value, Op::Add { a: ai, b: bi }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let xi = self.idx(x)?;
        let src = &self.nodes[xi].value;
        let data = src.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.grad_flag(&[xi]);
        Ok(self.push(value, Op::Scale { x: xi, factor }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s: f32 = self.nodes[xi].value.data().iter().sum();
        let rg = self.grad_flag(&[xi]);
        Ok(self.push(Tensor::scalar(s), Op::Sum { x: xi }, rg))
    }

    /// `Σ_i w_i · x_i` with a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let xi = self.idx(x)?;
        let src = &self.nodes[xi].value;
        if !src.same_shape(weights) {
            return Err(Error::Shape(format!("weights {:?} for {:?}", weights.shape(), src.shape())));
        }
        let s: f64 = src.data().iter().zip(weights.data()).map(|(a, b)| *a as f64 * *b as f64).sum();
        let rg = self.grad_flag(&[xi]);
        Ok(self.push(
            Tensor::scalar(s as f32),
            Op::WeightedSum {
                x: xi,
                weights: weights.data().to_vec(),
            },
            rg,
        ))
    }

    /// Gradients of a scalar `loss` with respect to every parameter registered
    /// on this tape, in registration order. Parameters the loss does not
    /// depend on get all-zero gradients. Frees the tape.
    pub fn backward(&mut self, loss: Var) -> Result<ParameterSet> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.nodes[li].value.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let node = &self.nodes[i];
            let nodes = &self.nodes;
            let needs = |j: usize| nodes[j].requires_grad;
            let send = |j: usize, d: Vec<f32>, grads: &mut Vec<Option<Vec<f32>>>| {
                match &mut grads[j] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv2d { x, w, n, geom } => {
                    let (dx, dw) = kernels::conv2d_backward(
                        nodes[*x].value.data(),
                        *n,
                        nodes[*w].value.data(),
                        geom,
                        &g,
                        needs(*x),
                    );
                    if let Some(dx) = dx {
                        send(*x, dx, &mut grads);
                    }
                    if needs(*w) {
                        send(*w, dw, &mut grads);
                    }
                }
                Op::Linear { x, w, b, n, k } => {
                    let (dx, dw, db) = kernels::linear_backward(
                        nodes[*x].value.data(),
                        *n,
                        *k,
                        nodes[*w].value.data(),
                        &g,
                    );
                    if needs(*x) {
                        send(*x, dx, &mut grads);
                    }
                    if needs(*w) {
                        send(*w, dw, &mut grads);
                    }
                    if needs(*b) {
                        send(*b, db, &mut grads);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    n,
                    c,
                    hw,
                    batch_stats,
                } => {
                    let gd = nodes[*gamma].value.data();
                    let (dx, dg, db) = if *batch_stats {
                        kernels::batchnorm_backward_batch(&g, xhat, inv_std, gd, *n, *c, *hw)
                    } else {
                        kernels::batchnorm_backward_fixed(&g, xhat, inv_std, gd, *n, *c, *hw)
                    };
                    if needs(*x) {
                        send(*x, dx, &mut grads);
                    }
                    if needs(*gamma) {
                        send(*gamma, dg, &mut grads);
                    }
                    if needs(*beta) {
                        send(*beta, db, &mut grads);
                    }
                }
                Op::Relu { x } => {
                    let d = node
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(y, gy)| if *y > 0.0 { *gy } else { 0.0 })
                        .collect();
                    send(*x, d, &mut grads);
                }
                Op::GlobalAvgPool { x, n, c, hw } => {
                    let inv = 1.0 / *hw as f32;
                    let mut d = vec![0.0f32; n * c * hw];
                    for (plane, gv) in d.chunks_exact_mut(*hw).zip(&g) {
                        plane.fill(gv * inv);
                    }
                    send(*x, d, &mut grads);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    rows,
                    targets,
                    scale,
                } => {
                    let z = &nodes[*logits].value;
                    let c = z.shape()[1];
                    let mut d = vec![0.0f32; z.numel()];
                    let upstream = g[0] * scale;
                    for (k, &r) in rows.iter().enumerate() {
                        let p = kernels::softmax_rows(&z.data()[r * c..(r + 1) * c], c);
                        let t = &targets[k * c..(k + 1) * c];
                        let mass: f32 = t.iter().sum();
                        for j in 0..c {
                            d[r * c + j] += upstream * (mass * p[j] - t[j]);
                        }
                    }
                    send(*logits, d, &mut grads);
                }
                Op::SoftmaxSquaredError {
                    logits,
                    rows,
                    targets,
                    scale,
                } => {
                    let z = &nodes[*logits].value;
                    let c = z.shape()[1];
                    let mut d = vec![0.0f32; z.numel()];
                    let upstream = g[0] * scale;
                    for (k, &r) in rows.iter().enumerate() {
                        let p = kernels::softmax_rows(&z.data()[r * c..(r + 1) * c], c);
                        let t = &targets[k * c..(k + 1) * c];
                        let dp: Vec<f32> = p.iter().zip(t).map(|(a, b)| 2.0 * (a - b)).collect();
                        let dot: f32 = dp.iter().zip(&p).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[r * c + j] += upstream * p[j] * (dp[j] - dot);
                        }
                    }
                    send(*logits, d, &mut grads);
                }
                Op::Add { a, b } => {
                    if needs(*a) {
                        send(*a, g.clone(), &mut grads);
                    }
                    if needs(*b) {
                        send(*b, g, &mut grads);
                    }
                }
                Op::Scale { x, factor } => {
                    let d = g.iter().map(|v| v * factor).collect();
                    send(*x, d, &mut grads);
                }
                Op::Sum { x } => {
                    let d = vec![g[0]; nodes[*x].value.numel()];
                    send(*x, d, &mut grads);
                }
                Op::WeightedSum { x, weights } => {
                    let d = weights.iter().map(|w| w * g[0]).collect();
                    send(*x, d, &mut grads);
                }
            }
        }

        let mut out = ParameterSet::new();
        for (name, idx) in &self.params {
            let shape = self.nodes[*idx].value.shape().to_vec();
            let tensor = match grads.get_mut(*idx).and_then(Option::take) {
                Some(d) => Tensor::new(shape, d)?,
                None => Tensor::zeros(&shape),
            };
            if !tensor.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            out.insert(name, ParamKind::Trainable, tensor)?;
        }
        self.nodes.clear();
        Ok(out)
    }
}
