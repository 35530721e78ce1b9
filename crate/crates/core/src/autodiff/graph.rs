//! Record-on-eval tape for reverse-mode differentiation.
//!
//! Every operation on a [`Graph`] evaluates eagerly and appends a node that
//! remembers its inputs. [`Graph::backward`] walks the tape in reverse and
//! writes `d loss / d param` into every trainable entry of a [`ParamStore`].
//!
//! Tensors are at most 2-D. Row-wise ops treat a `[n, m]` tensor as `n`
//! samples of width `m`; per-row scalars are `[n]` vectors.

use std::collections::HashMap;

use super::tensor::numel;
use super::{ParamStore, Tensor};
use crate::error::{shape_err, HeroError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRows(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    MaxConst(Var, f64),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Mse(Var, Var),
    CosineRows(Var, Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

/// Gradients of one scalar with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn dims2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(shape_err(op, format!("expected a 2-D tensor, got {shape:?}"))),
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(shape_err(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    pub fn constant_vec(&mut self, v: Vec<f64>) -> Var {
        let n = v.len();
        self.push(vec![n], v, Op::Leaf)
    }

    pub fn constant_rows(&mut self, rows: &[Vec<f64>]) -> Result<Var> {
        let t = Tensor::from_rows(rows)?;
        Ok(self.constant(&t))
    }

    /// Leaf bound to a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.param_index.get(name) {
            return Ok(*v);
        }
        let t = store.tensor(name)?;
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = dims2("matmul", self.shape(a))?;
        let (k2, m) = dims2("matmul", self.shape(b))?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("[{n}, {k}] x [{k2}, {m}]"),
            ));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * m..(p + 1) * m];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        Ok(self.push(vec![n, m], out, Op::MatMul(a, b)))
    }

    fn zip_with(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        same_shape(op_name, self.shape(a), self.shape(b))?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, op))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    /// `[n, m] + [m]`, the bias row added to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = dims2("add_row", self.shape(a))?;
        if self.shape(bias) != [m] {
            return Err(shape_err(
                "add_row",
                format!("[{n}, {m}] + {:?}", self.shape(bias)),
            ));
        }
        let bv = self.value(bias);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(m) {
            for (o, &b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        Ok(self.push(vec![n, m], out, Op::AddRow(a, bias)))
    }

    /// Scales row `i` of `a` by `s[i]`.
    pub fn mul_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (n, m) = dims2("mul_rows", self.shape(a))?;
        if self.shape(s) != [n] {
            return Err(shape_err(
                "mul_rows",
                format!("[{n}, {m}] scaled by {:?}", self.shape(s)),
            ));
        }
        let sv = self.value(s);
        let mut out = self.value(a).to_vec();
        for (row, &k) in out.chunks_mut(m).zip(sv) {
            row.iter_mut().for_each(|x| *x *= k);
        }
        Ok(self.push(vec![n, m], out, Op::MulRows(a, s)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    /// Elementwise `max(x, c)`.
    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x.max(c), Op::MaxConst(a, c))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(shape_err("mean", "empty tensor"));
        }
        let s: f64 = self.value(a).iter().sum();
        Ok(self.push(vec![], vec![s / n as f64], Op::Mean(a)))
    }

    /// `[n, m] -> [n]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (n, m) = dims2("row_sum", self.shape(a))?;
        let out: Vec<f64> = if m == 0 {
            vec![0.0; n]
        } else {
            self.value(a).chunks(m).map(|r| r.iter().sum()).collect()
        };
        Ok(self.push(vec![n], out, Op::RowSum(a)))
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse", self.shape(a), self.shape(b))?;
        let n = self.value(a).len();
        if n == 0 {
            return Err(shape_err("mse", "empty tensor"));
        }
        let s: f64 = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(vec![], vec![s / n as f64], Op::Mse(a, b)))
    }

    /// Row-wise cosine similarity of two `[n, m]` tensors, giving `[n]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("cosine_rows", self.shape(a), self.shape(b))?;
        let (n, m) = dims2("cosine_rows", self.shape(a))?;
        let av = self.value(a);
        let bv = self.value(b);
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (&av[i * m..(i + 1) * m], &bv[i * m..(i + 1) * m]);
                let (dot, na, nb) = dot_norms(x, y);
                dot / cos_denominator(na, nb)
            })
            .collect();
        Ok(self.push(vec![n], out, Op::CosineRows(a, b)))
    }

    /// `[n, p] ++ [n, q] -> [n, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, p) = dims2("concat", self.shape(a))?;
        let (n2, q) = dims2("concat", self.shape(b))?;
        if n != n2 {
            return Err(shape_err("concat", format!("[{n}, {p}] ++ [{n2}, {q}]")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(&av[i * p..(i + 1) * p]);
            out.extend_from_slice(&bv[i * q..(i + 1) * q]);
        }
        Ok(self.push(vec![n, p + q], out, Op::ConcatCols(a, b)))
    }

    /// Selects rows of a `[c, m]` table by index, giving `[idx.len(), m]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (c, m) = dims2("gather_rows", self.shape(table))?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(shape_err(
                "gather_rows",
                format!("index {bad} out of range for {c} rows"),
            ));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            out.extend_from_slice(&tv[i * m..(i + 1) * m]);
        }
        Ok(self.push(
            vec![idx.len(), m],
            out,
            Op::GatherRows(table, idx.to_vec()),
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let ln = &self.nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(HeroError::NonScalarLoss(ln.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Overwrites the gradient of every trainable entry of `store` with
    /// `d loss / d entry`. Trainable entries absent from the graph receive
    /// zeros; frozen entries have their gradient cleared.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (name, p) in store.iter_mut() {
            if !p.trainable {
                p.tensor.clear_grad();
                continue;
            }
            let g = self
                .param_index
                .get(name)
                .and_then(|v| grads.get(*v))
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.tensor.len()]);
            p.tensor.set_grad(g)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.as_slice();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let m = self.nodes[b.0].shape[1];
                let (av, bv) = (val(*a), val(*b));
                // dA = G B^T, dB = A^T G
                let mut ga = vec![0.0; n * k];
                let mut gb = vec![0.0; k * m];
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for p in 0..k {
                        let brow = &bv[p * m..(p + 1) * m];
                        ga[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        let x = av[r * k + p];
                        if x != 0.0 {
                            for (o, &y) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                }
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let ng: Vec<f64> = g.iter().map(|x| -x).collect();
                accumulate(grads, *b, &ng);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; g.len()];
                for j in 0..g.len() {
                    // ties route to the first operand
                    if av[j] <= bv[j] {
                        ga[j] = g[j];
                    } else {
                        gb[j] = g[j];
                    }
                }
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::AddRow(a, bias) => {
                accumulate(grads, *a, g);
                let m = self.nodes[bias.0].shape[0];
                let mut gb = vec![0.0; m];
                for row in g.chunks(m) {
                    for (o, &x) in gb.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                accumulate(grads, *bias, &gb);
            }
            Op::MulRows(a, s) => {
                let m = node.shape[1];
                let (av, sv) = (val(*a), val(*s));
                let mut ga = vec![0.0; g.len()];
                let mut gs = vec![0.0; sv.len()];
                for (r, &k) in sv.iter().enumerate() {
                    let span = r * m..(r + 1) * m;
                    for j in span {
                        ga[j] = g[j] * k;
                        gs[r] += g[j] * av[j];
                    }
                }
                accumulate(grads, *a, &ga);
                accumulate(grads, *s, &gs);
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                accumulate(grads, *a, &ga);
            }
            Op::AddScalar(a) => accumulate(grads, *a, g),
            Op::Relu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(val(*a))
                    .map(|(x, &y)| if y > 0.0 { *x } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Tanh(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&node.value)
                    .map(|(x, y)| x * (1.0 - y * y))
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Exp(a) => {
                let ga: Vec<f64> = g.iter().zip(&node.value).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, &ga);
            }
            Op::MaxConst(a, c) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(val(*a))
                    .map(|(x, &y)| if y > *c { *x } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Clamp(a, lo, hi) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(val(*a))
                    .map(|(x, &y)| if y >= *lo && y <= *hi { *x } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Sum(a) => {
                let ga = vec![g[0]; val(*a).len()];
                accumulate(grads, *a, &ga);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let ga = vec![g[0] / n as f64; n];
                accumulate(grads, *a, &ga);
            }
            Op::RowSum(a) => {
                let m = self.nodes[a.0].shape[1];
                let mut ga = Vec::with_capacity(g.len() * m);
                for &x in g {
                    ga.extend(std::iter::repeat_n(x, m));
                }
                accumulate(grads, *a, &ga);
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let k = 2.0 * g[0] / av.len() as f64;
                let ga: Vec<f64> = av.iter().zip(bv).map(|(x, y)| k * (x - y)).collect();
                let gb: Vec<f64> = ga.iter().map(|x| -x).collect();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::CosineRows(a, b) => {
                let m = self.nodes[a.0].shape[1];
                let (av, bv) = (val(*a), val(*b));
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for (r, &gr) in g.iter().enumerate() {
                    let span = r * m..(r + 1) * m;
                    let (x, y) = (&av[span.clone()], &bv[span.clone()]);
                    let (dot, na, nb) = dot_norms(x, y);
                    let den = cos_denominator(na, nb);
                    let clamped = den > na * nb;
                    let c = dot / den;
                    for (j, idx) in span.enumerate() {
                        let (dx, dy) = if clamped {
                            (y[j] / den, x[j] / den)
                        } else {
                            (
                                y[j] / den - c * x[j] / (na * na),
                                x[j] / den - c * y[j] / (nb * nb),
                            )
                        };
                        ga[idx] = gr * dx;
                        gb[idx] = gr * dy;
                    }
                }
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::ConcatCols(a, b) => {
                let p = self.nodes[a.0].shape[1];
                let q = self.nodes[b.0].shape[1];
                let mut ga = Vec::with_capacity(val(*a).len());
                let mut gb = Vec::with_capacity(val(*b).len());
                for row in g.chunks(p + q) {
                    ga.extend_from_slice(&row[..p]);
                    gb.extend_from_slice(&row[p..]);
                }
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::GatherRows(table, idx) => {
                let m = self.nodes[table.0].shape[1];
                let mut gt = vec![0.0; val(*table).len()];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..m {
                        gt[i * m + j] += g[r * m + j];
                    }
                }
                accumulate(grads, *table, &gt);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn dot_norms(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut xx = 0.0;
    let mut yy = 0.0;
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        xx += a * a;
        yy += b * b;
    }
    (dot, xx.sqrt(), yy.sqrt())
}

fn cos_denominator(na: f64, nb: f64) -> f64 {
    (na * nb).max(f64::MIN_POSITIVE)
}
