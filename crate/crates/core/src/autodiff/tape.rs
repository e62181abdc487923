use super::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operation kinds accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Exp,
    Log,
    Neg,
}

enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Neg(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<S>,
        inv_std: Vec<S>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<S>,
    },
    Mse(Var, Var),
    Sum(Var),
    Index(Var, usize),
    Reshape(Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so every node's inputs precede it and
/// a single reverse sweep visits each node once.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
///
/// Every leaf has an entry; leaves the loss does not depend on get zeros.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, var: Var) -> Option<&Tensor<S>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn wrt(&self, var: Var) -> Result<&Tensor<S>> {
        self.get(var)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient recorded for node {}", var.0)))
    }
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn elementwise(&mut self, kind: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match kind {
            Elementwise::Add => self.add(inputs[0], inputs[1]),
            Elementwise::Sub => self.sub(inputs[0], inputs[1]),
            Elementwise::Mul => self.mul(inputs[0], inputs[1]),
            Elementwise::Scale(c) => Ok(self.scale(inputs[0], S::from_f64(c))),
            Elementwise::Relu => Ok(self.relu(inputs[0])),
            Elementwise::Exp => Ok(self.exp(inputs[0])),
            Elementwise::Log => self.log(inputs[0]),
            Elementwise::Neg => Ok(self.neg(inputs[0])),
        }
    }

    fn broadcast(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
    ) -> Result<Tensor<S>> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data: Vec<S> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else if tb.is_scalar_like() && ta.ndim() >= tb.ndim() {
            let y = tb.item();
            ta.data().iter().map(|&x| f(x, y)).collect()
        } else if ta.is_scalar_like() {
            let x = ta.item();
            tb.data().iter().map(|&y| f(x, y)).collect()
        } else {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        };
        let shape = if ta.shape() == tb.shape() || (tb.is_scalar_like() && ta.ndim() >= tb.ndim()) {
            ta.shape().to_vec()
        } else {
            tb.shape().to_vec()
        };
        Tensor::new(shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a))
    }

    /// Rectifier; the derivative at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(S::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| x <= S::zero()) {
            return Err(Error::LogDomain(bad.as_f64()));
        }
        let v = self.value(a).map(S::ln);
        Ok(self.push(v, Op::Log(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Element `i` of the flattened tensor, as a scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        let x = *t.data().get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("index {i} out of range for {} elements", t.len()))
        })?;
        Ok(self.push(Tensor::scalar(x), Op::Index(a, i)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Collapses all but the leading axis.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        if shape.len() == 2 {
            return Ok(a);
        }
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(a, vec![n, rest])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![S::zero(); m * n];
        gemm_nn(m, k, n, ta.data(), tb.data(), &mut out);
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Adds a length-`F` bias to every row of an `N×F` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.ndim() != 2 || tb.ndim() != 1 || tx.shape()[1] != tb.shape()[0] {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let f = tb.len();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data()[i % f])
            .collect();
        let v = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(v, Op::AddBias(x, bias)))
    }

    /// Cross-correlation with zero padding: input `N×C×H×W`, kernel
    /// `F×C×kh×kw`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (ti, tk) = (self.value(input), self.value(kernel));
        let geo = ConvGeometry::new(ti.shape(), tk.shape(), stride, padding)?;
        let mut out = vec![S::zero(); geo.n * geo.f * geo.oh * geo.ow];
        geo.forward(ti.data(), tk.data(), &mut out);
        let v = Tensor::new(vec![geo.n, geo.f, geo.oh, geo.ow], out)?;
        Ok(self.push(
            v,
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
        ))
    }

    /// Per-channel standardisation with current-batch statistics followed by
    /// an affine map. Input is `N×C×…`; statistics run over every axis but
    /// the channel axis, with the biased variance.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(input), self.value(gamma), self.value(beta));
        if tx.ndim() < 2 {
            return Err(Error::shape("batch_norm", tx.shape(), tg.shape()));
        }
        let (n, c) = (tx.shape()[0], tx.shape()[1]);
        if tg.shape() != [c] || tb.shape() != [c] {
            return Err(Error::shape("batch_norm", tx.shape(), tg.shape()));
        }
        let r: usize = tx.shape()[2..].iter().product();
        let m = S::from_usize(n * r);
        let eps = S::from_f64(eps);
        let x = tx.data();
        let mut normalized = vec![S::zero(); x.len()];
        let mut inv_std = vec![S::zero(); c];
        let mut out = vec![S::zero(); x.len()];
        for ch in 0..c {
            let mut mean = S::zero();
            for s in 0..n {
                let base = (s * c + ch) * r;
                for &v in &x[base..base + r] {
                    mean += v;
                }
            }
            mean = mean / m;
            let mut var = S::zero();
            for s in 0..n {
                let base = (s * c + ch) * r;
                for &v in &x[base..base + r] {
                    let d = v - mean;
                    var += d * d;
                }
            }
            var = var / m;
            let istd = S::one() / (var + eps).sqrt();
            inv_std[ch] = istd;
            let (g, b) = (tg.data()[ch], tb.data()[ch]);
            for s in 0..n {
                let base = (s * c + ch) * r;
                for i in base..base + r {
                    let xh = (x[i] - mean) * istd;
                    normalized[i] = xh;
                    out[i] = g * xh + b;
                }
            }
        }
        let v = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }

    /// Softmax over all elements, computed after subtracting the maximum.
    pub fn softmax(&mut self, logits: Var) -> Var {
        let t = self.value(logits);
        let v = Tensor::new(t.shape().to_vec(), softmax_slice(t.data()))
            .expect("softmax preserves shape");
        self.push(v, Op::Softmax(logits))
    }

    /// Mean cross-entropy of `N×C` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.ndim() != 2 || t.shape()[0] != targets.len() {
            return Err(Error::shape("cross_entropy", t.shape(), &[targets.len()]));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = targets.iter().find(|&&y| y >= c) {
            return Err(Error::ClassOutOfRange {
                index: bad,
                classes: c,
            });
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut total = S::zero();
        for (row, &y) in t.data().chunks(c).zip(targets) {
            let p = softmax_slice(row);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<S>().ln();
            total += lse - row[y];
            probs.extend(p);
        }
        let loss = total / S::from_usize(n.max(1));
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross_entropy"));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, prediction: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(prediction), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::shape("mse", p.shape(), t.shape()));
        }
        let n = S::from_usize(p.len().max(1));
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<S>()
            / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("mse"));
        }
        Ok(self.push(Tensor::scalar(loss), Op::Mse(prediction, target)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros_like(&node.value));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_broadcast(grads, *a, gd, |_, d| d)?;
                self.accumulate_broadcast(grads, *b, gd, |_, d| d)?;
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(grads, *a, gd, |_, d| d)?;
                self.accumulate_broadcast(grads, *b, gd, |_, d| -d)?;
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let other_b = broadcast_values(tb, gd.len());
                let other_a = broadcast_values(ta, gd.len());
                self.accumulate_broadcast(grads, *a, gd, |i, d| d * other_b(i))?;
                self.accumulate_broadcast(grads, *b, gd, |i, d| d * other_a(i))?;
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate_map(grads, *a, gd, |_, d| d * c)?;
            }
            Op::Neg(a) => self.accumulate_map(grads, *a, gd, |_, d| -d)?,
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate_map(grads, *a, gd, |i, d| if x[i] > S::zero() { d } else { S::zero() })?;
            }
            Op::Exp(a) => {
                let y = node.value.data();
                self.accumulate_map(grads, *a, gd, |i, d| d * y[i])?;
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.accumulate_map(grads, *a, gd, |i, d| d / x[i])?;
            }
            Op::Sum(a) => {
                let t = Tensor::full(self.value(*a).shape(), gd[0]);
                accumulate(grads, *a, t)?;
            }
            Op::Index(a, k) => {
                let mut t = Tensor::zeros_like(self.value(*a));
                t.data_mut()[*k] = gd[0];
                accumulate(grads, *a, t)?;
            }
            Op::Reshape(a) => {
                let t = Tensor::new(self.value(*a).shape().to_vec(), gd.to_vec())?;
                accumulate(grads, *a, t)?;
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut da = vec![S::zero(); m * k];
                gemm_nt(m, n, k, gd, tb.data(), &mut da);
                let mut db = vec![S::zero(); k * n];
                gemm_tn(k, m, n, ta.data(), gd, &mut db);
                accumulate(grads, *a, Tensor::new(vec![m, k], da)?)?;
                accumulate(grads, *b, Tensor::new(vec![k, n], db)?)?;
            }
            Op::AddBias(x, bias) => {
                let f = self.value(*bias).len();
                let mut db = vec![S::zero(); f];
                for (i, &d) in gd.iter().enumerate() {
                    db[i % f] += d;
                }
                accumulate(grads, *x, g.clone())?;
                accumulate(grads, *bias, Tensor::new(vec![f], db)?)?;
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let (ti, tk) = (self.value(*input), self.value(*kernel));
                let geo = ConvGeometry::new(ti.shape(), tk.shape(), *stride, *padding)?;
                let mut di = vec![S::zero(); ti.len()];
                let mut dk = vec![S::zero(); tk.len()];
                geo.backward(ti.data(), tk.data(), gd, &mut di, &mut dk);
                accumulate(grads, *input, Tensor::new(ti.shape().to_vec(), di)?)?;
                accumulate(grads, *kernel, Tensor::new(tk.shape().to_vec(), dk)?)?;
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let tx = self.value(*input);
                let (n, c) = (tx.shape()[0], tx.shape()[1]);
                let r: usize = tx.shape()[2..].iter().product();
                let m = S::from_usize(n * r);
                let gam = self.value(*gamma).data();
                let mut dx = vec![S::zero(); tx.len()];
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                for ch in 0..c {
                    let (mut sum_d, mut sum_dx) = (S::zero(), S::zero());
                    for s in 0..n {
                        let base = (s * c + ch) * r;
                        for i in base..base + r {
                            sum_d += gd[i];
                            sum_dx += gd[i] * normalized[i];
                        }
                    }
                    dbeta[ch] = sum_d;
                    dgamma[ch] = sum_dx;
                    // dxhat = d * gamma; dx = istd/m * (m dxhat - sum dxhat - xhat sum(dxhat xhat))
                    let k = gam[ch] * inv_std[ch] / m;
                    for s in 0..n {
                        let base = (s * c + ch) * r;
                        for i in base..base + r {
                            dx[i] = k * (m * gd[i] - sum_d - normalized[i] * sum_dx);
                        }
                    }
                }
                accumulate(grads, *input, Tensor::new(tx.shape().to_vec(), dx)?)?;
                accumulate(grads, *gamma, Tensor::vector(dgamma))?;
                accumulate(grads, *beta, Tensor::vector(dbeta))?;
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let dot: S = y.iter().zip(gd).map(|(&p, &d)| p * d).sum();
                self.accumulate_map(grads, *a, gd, |i, d| y[i] * (d - dot))?;
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let shape = self.value(*logits).shape().to_vec();
                let c = shape[1];
                let scale = gd[0] / S::from_usize(targets.len().max(1));
                let mut d: Vec<S> = probs.iter().map(|&p| p * scale).collect();
                for (row, &y) in targets.iter().enumerate() {
                    d[row * c + y] -= scale;
                }
                accumulate(grads, *logits, Tensor::new(shape, d)?)?;
            }
            Op::Mse(p, t) => {
                let (tp, tt) = (self.value(*p), self.value(*t));
                let k = S::from_f64(2.0) * gd[0] / S::from_usize(tp.len().max(1));
                let dp: Vec<S> = tp
                    .data()
                    .iter()
                    .zip(tt.data())
                    .map(|(&a, &b)| k * (a - b))
                    .collect();
                let dt: Vec<S> = dp.iter().map(|&x| -x).collect();
                accumulate(grads, *p, Tensor::new(tp.shape().to_vec(), dp)?)?;
                accumulate(grads, *t, Tensor::new(tt.shape().to_vec(), dt)?)?;
            }
        }
        Ok(())
    }

    fn accumulate_map(
        &self,
        grads: &mut [Option<Tensor<S>>],
        target: Var,
        upstream: &[S],
        f: impl Fn(usize, S) -> S,
    ) -> Result<()> {
        let shape = self.value(target).shape().to_vec();
        let data = upstream.iter().enumerate().map(|(i, &d)| f(i, d)).collect();
        accumulate(grads, target, Tensor::new(shape, data)?)
    }

    /// Like `accumulate_map`, but reduces onto a scalar-like input that was
    /// broadcast in the forward pass.
    fn accumulate_broadcast(
        &self,
        grads: &mut [Option<Tensor<S>>],
        target: Var,
        upstream: &[S],
        f: impl Fn(usize, S) -> S,
    ) -> Result<()> {
        let t = self.value(target);
        if t.len() == upstream.len() {
            self.accumulate_map(grads, target, upstream, f)
        } else {
            let total: S = upstream.iter().enumerate().map(|(i, &d)| f(i, d)).sum();
            accumulate(grads, target, Tensor::new(t.shape().to_vec(), vec![total])?)
        }
    }
}

fn accumulate<S: Real>(grads: &mut [Option<Tensor<S>>], target: Var, g: Tensor<S>) -> Result<()> {
    match &mut grads[target.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn broadcast_values<S: Real>(t: &Tensor<S>, n: usize) -> impl Fn(usize) -> S + '_ {
    let scalar = t.len() != n;
    move |i| if scalar { t.data()[0] } else { t.data()[i] }
}

/// Numerically stable softmax of a slice.
pub fn softmax_slice<S: Real>(x: &[S]) -> Vec<S> {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = x.iter().map(|&z| (z - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// c[m×n] += a[m×k] · b[k×n]
fn gemm_nn<S: Real>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// c[m×k] += a[m×n] · b[k×n]ᵀ
fn gemm_nt<S: Real>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: S = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            c[i * k + p] += dot;
        }
    }
}

/// c[k×n] += a[m×k]ᵀ · b[m×n]
fn gemm_tn<S: Real>(k: usize, m: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 || input[1] != kernel[1] {
            return Err(Error::shape("conv2d", input, kernel));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (f, kh, kw) = (kernel[0], kernel[2], kernel[3]);
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        Ok(Self {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh,
            ow,
            stride,
            padding,
        })
    }

    /// Valid output columns for kernel column `j`: ow range whose input
    /// column lies inside the image.
    fn col_range(&self, j: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(j).div_ceil(self.stride);
        let hi = (self.w + self.padding)
            .saturating_sub(j)
            .div_ceil(self.stride)
            .min(self.ow);
        (lo, hi.max(lo))
    }

    fn forward<S: Real>(&self, x: &[S], k: &[S], out: &mut [S]) {
        for s in 0..self.n {
            for fo in 0..self.f {
                let obase = (s * self.f + fo) * self.oh * self.ow;
                for ch in 0..self.c {
                    let ibase = (s * self.c + ch) * self.h * self.w;
                    let kbase = (fo * self.c + ch) * self.kh * self.kw;
                    for i in 0..self.kh {
                        for j in 0..self.kw {
                            let kv = k[kbase + i * self.kw + j];
                            let (lo, hi) = self.col_range(j);
                            for o_r in 0..self.oh {
                                let ir = o_r * self.stride + i;
                                if ir < self.padding || ir - self.padding >= self.h {
                                    continue;
                                }
                                let ir = ir - self.padding;
                                let orow = obase + o_r * self.ow;
                                let irow = ibase + ir * self.w;
                                for o_c in lo..hi {
                                    let ic = o_c * self.stride + j - self.padding;
                                    out[orow + o_c] += kv * x[irow + ic];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward<S: Real>(&self, x: &[S], k: &[S], g: &[S], dx: &mut [S], dk: &mut [S]) {
        for s in 0..self.n {
            for fo in 0..self.f {
                let obase = (s * self.f + fo) * self.oh * self.ow;
                for ch in 0..self.c {
                    let ibase = (s * self.c + ch) * self.h * self.w;
                    let kbase = (fo * self.c + ch) * self.kh * self.kw;
                    for i in 0..self.kh {
                        for j in 0..self.kw {
                            let kv = k[kbase + i * self.kw + j];
                            let (lo, hi) = self.col_range(j);
                            let mut acc = S::zero();
                            for o_r in 0..self.oh {
                                let ir = o_r * self.stride + i;
                                if ir < self.padding || ir - self.padding >= self.h {
                                    continue;
                                }
                                let ir = ir - self.padding;
                                let orow = obase + o_r * self.ow;
                                let irow = ibase + ir * self.w;
                                for o_c in lo..hi {
                                    let ic = o_c * self.stride + j - self.padding;
                                    let gv = g[orow + o_c];
                                    acc += gv * x[irow + ic];
                                    dx[irow + ic] += gv * kv;
                                }
                            }
                            dk[kbase + i * self.kw + j] += acc;
                        }
                    }
                }
            }
        }
    }
}
