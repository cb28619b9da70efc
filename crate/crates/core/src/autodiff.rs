//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in execution order. Parameters enter
//! through [`Graph::bind`] (gradient-tracked leaves), data through
//! [`Graph::constant`]. [`Graph::backward`] walks the tape once in reverse,
//! accumulating gradients in recording order, and returns a gradient
//! [`ParamSet`] with the same layout as the bound parameters.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::{kernels, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `a (m×n) + b (n)` broadcast over the leading dimension.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Embed {
        table: Var,
        indices: Vec<Option<usize>>,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Parameter name → leaf handle, produced by [`Graph::bind`].
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` is not bound on this graph")))
    }
}

#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var, bool)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a gradient-tracked leaf.
    pub fn param(&mut self, name: &str, tensor: Tensor<T>, prunable: bool) -> Var {
        let v = self.push(tensor, Op::Leaf, true);
        self.params.push((name.to_string(), v, prunable));
        v
    }

    /// Registers every tensor of `params` as a tracked leaf.
    pub fn bind(&mut self, params: &ParamSet<T>) -> Bindings {
        let vars = params
            .iter()
            .map(|(name, p)| (name.to_string(), self.param(name, p.tensor.clone(), p.prunable)))
            .collect();
        Bindings { vars }
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), t))
    }

    /// `a · bᵀ`; with `b` stored as `out × in` this is a dense layer.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMulT(a, b), t))
    }

    /// Elementwise sum of equal shapes, or a matrix plus a row vector broadcast
    /// over the leading (batch) dimension.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let t = self.tracked(a) || self.tracked(b);
        if sa == sb {
            let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
            return Ok(self.push(value, Op::Add(a, b), t));
        }
        if let ([m, n], [n2]) = (sa, sb) {
            if n == n2 {
                let (m, n) = (*m, *n);
                let bias = self.value(b).data().to_vec();
                let mut data = self.value(a).data().to_vec();
                for r in 0..m {
                    for (o, &bv) in data[r * n..(r + 1) * n].iter_mut().zip(&bias) {
                        *o += bv;
                    }
                }
                let value = Tensor::from_vec(vec![m, n], data)?;
                return Ok(self.push(value, Op::AddRow(a, b), t));
            }
        }
        Err(Error::InvalidShape(format!("cannot add {sa:?} and {sb:?}")))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        let t = self.tracked(a);
        self.push(value, Op::Scale(a, c), t)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let t = self.tracked(a);
        self.push(value, Op::Sum(a), t)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let t = self.tracked(a);
        self.push(value, Op::Relu(a), t)
    }

    /// Gathers rows of `table` (`V × d`). The indices are split into `rows`
    /// equal groups and each group's embeddings are concatenated, giving a
    /// `rows × (len/rows · d)` result. `None` contributes a zero vector.
    pub fn embed(&mut self, table: Var, indices: &[Option<usize>], rows: usize) -> Result<Var> {
        let (vocab, dim) = self.value(table).dims2()?;
        if rows == 0 || indices.is_empty() || indices.len() % rows != 0 {
            return Err(Error::InvalidShape(format!(
                "{} indices cannot be split into {rows} rows",
                indices.len()
            )));
        }
        let src = self.value(table).data();
        let mut data = vec![T::zero(); indices.len() * dim];
        for (slot, idx) in indices.iter().enumerate() {
            if let Some(i) = *idx {
                if i >= vocab {
                    return Err(Error::Index(format!("embedding index {i} >= table size {vocab}")));
                }
                data[slot * dim..(slot + 1) * dim].copy_from_slice(&src[i * dim..(i + 1) * dim]);
            }
        }
        let value = Tensor::from_vec(vec![rows, indices.len() / rows * dim], data)?;
        let t = self.tracked(table);
        Ok(self.push(
            value,
            Op::Embed {
                table,
                indices: indices.to_vec(),
            },
            t,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`, with log-sum-exp
    /// stabilization. `logits` is a vector (one target) or a `B × C` batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (batch, classes) = match lv.shape() {
            [c] => (1, *c),
            [b, c] => (*b, *c),
            s => return Err(Error::InvalidShape(format!("logits must be rank 1 or 2, got {s:?}"))),
        };
        if targets.len() != batch {
            return Err(Error::InvalidShape(format!(
                "{} targets for a batch of {batch}",
                targets.len()
            )));
        }
        let mut probs = vec![T::zero(); batch * classes];
        let mut total = T::zero();
        for (b, &y) in targets.iter().enumerate() {
            if y >= classes {
                return Err(Error::Index(format!("target {y} >= {classes} classes")));
            }
            let row = &lv.data()[b * classes..(b + 1) * classes];
            let (nll, p) = log_softmax_nll(row, y);
            probs[b * classes..(b + 1) * classes].copy_from_slice(&p);
            total += nll;
        }
        let value = Tensor::scalar(total / T::lit(batch as f64));
        let t = self.tracked(logits);
        Ok(self.push(
            value,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            t,
        ))
    }

    /// Gradients of a scalar `loss` with respect to every bound parameter.
    /// Parameters the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<ParamSet<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut out = ParamSet::new();
        for (name, var, prunable) in &self.params {
            let shape = self.value(*var).shape().to_vec();
            let data = match grads.get(var.0).and_then(|g| g.clone()) {
                Some(g) => g,
                None => vec![T::zero(); self.value(*var).len()],
            };
            out.insert(name, Tensor::from_vec(shape, data)?, *prunable)?;
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2()?;
                let (_, n) = bv.dims2()?;
                if self.tracked(*a) {
                    // dA = G · Bᵀ
                    let ga = slot(grads, *a, m * k);
                    kernels::matmul_nt(g, bv.data(), ga, m, n, k);
                }
                if self.tracked(*b) {
                    // dB = Aᵀ · G
                    let gb = slot(grads, *b, k * n);
                    kernels::matmul_tn(av.data(), g, gb, m, k, n);
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2()?;
                let (n, _) = bv.dims2()?;
                if self.tracked(*a) {
                    // dA = G · B
                    let ga = slot(grads, *a, m * k);
                    kernels::matmul_nn(g, bv.data(), ga, m, n, k);
                }
                if self.tracked(*b) {
                    // dB = Gᵀ · A
                    let gb = slot(grads, *b, n * k);
                    kernels::matmul_tn(g, av.data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.tracked(v) {
                        accumulate(slot(grads, v, g.len()), g);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if self.tracked(*a) {
                    accumulate(slot(grads, *a, g.len()), g);
                }
                if self.tracked(*b) {
                    let n = self.value(*b).len();
                    let gb = slot(grads, *b, n);
                    for row in g.chunks(n) {
                        accumulate(gb, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.tracked(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * y;
                    }
                }
                if self.tracked(*b) {
                    let gb = slot(grads, *b, g.len());
                    for ((o, &gi), &x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = slot(grads, *a, g.len());
                for (o, &gi) in ga.iter_mut().zip(g) {
                    *o += gi * *c;
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let ga = slot(grads, *a, n);
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                let ga = slot(grads, *a, g.len());
                for ((o, &gi), &x) in ga.iter_mut().zip(g).zip(av) {
                    if x > T::zero() {
                        *o += gi;
                    }
                }
            }
            Op::Embed { table, indices } => {
                let tv = self.value(*table);
                let (_, dim) = tv.dims2()?;
                let gt = slot(grads, *table, tv.len());
                for (s, idx) in indices.iter().enumerate() {
                    if let Some(i) = *idx {
                        accumulate(&mut gt[i * dim..(i + 1) * dim], &g[s * dim..(s + 1) * dim]);
                    }
                }
            }
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
            } => {
                let batch = targets.len();
                let classes = probs.len() / batch;
                let scale = g[0] / T::lit(batch as f64);
                let gl = slot(grads, *logits, probs.len());
                for (b, &y) in targets.iter().enumerate() {
                    for c in 0..classes {
                        let p = probs[b * classes + c];
                        let d = if c == y { p - T::one() } else { p };
                        gl[b * classes + c] += d * scale;
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `-log softmax(row)[target]` and the softmax probabilities.
pub fn log_softmax_nll<T: Scalar>(row: &[T], target: usize) -> (T, Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
    let denom: T = exps.iter().copied().sum();
    let lse = max + denom.ln();
    let probs = exps.into_iter().map(|e| e / denom).collect();
    (lse - row[target], probs)
}

/// Central-difference gradient of `f` at `params`, one coordinate at a time:
/// `(f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h`.
pub fn finite_diff_grad<T, F>(mut f: F, params: &ParamSet<T>, h: T) -> Result<ParamSet<T>>
where
    T: Scalar,
    F: FnMut(&ParamSet<T>) -> Result<T>,
{
    if !(h > T::zero()) {
        return Err(Error::Contract("finite difference step must be positive".into()));
    }
    let mut work = params.clone();
    let mut grad = params.zeros_like();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let n = params.get(name).map_or(0, Tensor::len);
        for i in 0..n {
            let orig = params.get(name).unwrap().data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let plus = f(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let minus = f(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            grad.get_mut(name).unwrap().data_mut()[i] = (plus - minus) / (h + h);
        }
    }
    Ok(grad)
}

/// Norm-wise relative error `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)` over whole gradient
/// sets; zero when both are exactly zero.
pub fn relative_error<T: Scalar>(a: &ParamSet<T>, b: &ParamSet<T>) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for ((_, pa), (_, pb)) in a.iter().zip(b.iter()) {
        for (&x, &y) in pa.tensor.data().iter().zip(pb.tensor.data()) {
            let (x, y) = (x.as_f64(), y.as_f64());
            diff += (x - y).powi(2);
            na += x * x;
            nb += y * y;
        }
    }
    let denom = na.sqrt().max(nb.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}
