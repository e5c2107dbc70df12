//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive applied during a forward pass in
//! creation order, which is already a topological order. [`Graph::backward`]
//! walks the tape once in reverse and accumulates parameter gradients into a
//! [`GradStore`]. Parameters are referenced by id and never copied into the
//! tape.

use rand::Rng;

use super::params::{GradStore, ParamId, ParamStore};
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, log_sum_exp, Scalar, Tensor};
use crate::crf::lattice::PairScores;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Lookup {
        table: ParamId,
        index: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRowBroadcast(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LogSumExp {
        x: Var,
        axis: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Concat(Vec<Var>),
    ConcatCols(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Row {
        x: Var,
        index: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    StackRows(Vec<Var>),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    CrfNll {
        scores: Var,
        pair_marginals: Vec<T>,
        gold: Vec<usize>,
        labels: usize,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
}

pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    train: bool,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>, train: bool) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            train,
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("materialized node"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gathers row `index` of an embedding table.
    pub fn lookup(&mut self, table: ParamId, index: usize) -> Result<Var> {
        let t = self.params.get(table);
        if t.rank() != 2 || index >= t.rows() {
            return Err(Error::Lookup {
                index,
                size: t.rows(),
            });
        }
        let row = Tensor::vector(t.row(index).to_vec());
        Ok(self.push(Op::Lookup { table, index }, row))
    }

    /// Matrix product. Accepts `[m,k]x[k,n]`, `[k]x[k,n]` (row vector) and
    /// `[m,k]x[k]` (column vector).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, n, out_shape) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => (sa[0], sa[1], sb[1], vec![sa[0], sb[1]]),
            (1, 2) if sa[0] == sb[0] => (1, sa[0], sb[1], vec![sb[1]]),
            (2, 1) if sa[1] == sb[0] => (sa[0], sa[1], 1, vec![sa[0]]),
            _ => return Err(Error::shape("matmul", &sa, &sb)),
        };
        let mut out = vec![T::zero(); m * n];
        gemm_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(Op::MatMul { a, b, m, k, n }, value))
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape(), data)
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = self.value(a);
        Tensor::new(t.shape(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.map(a, |x| x * s);
        self.push(Op::Scale(a, s), v)
    }

    /// `m[r, c] + v[c]` for every row `r`.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.rank() != 2 || tv.rank() != 1 || tm.cols() != tv.len() {
            return Err(Error::shape("add_row_broadcast", tm.shape(), tv.shape()));
        }
        let c = tv.len();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tv.data()[i % c])
            .collect();
        let value = Tensor::new(tm.shape(), data)?;
        Ok(self.push(Op::AddRowBroadcast(m, v), value))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, T::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| T::one() / (T::one() + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    /// Softmax over the last axis (each row of a matrix, or a whole vector).
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        let v = Tensor::new(t.shape(), out).expect("same shape");
        self.push(Op::SoftmaxRows(a), v)
    }

    /// Stable log-sum-exp along `axis` of a vector or matrix.
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let out = match (t.rank(), axis) {
            (1, 0) => Tensor::scalar(log_sum_exp(t.data())),
            (2, 1) => Tensor::vector((0..t.rows()).map(|r| log_sum_exp(t.row(r))).collect()),
            (2, 0) => {
                let (r, c) = (t.rows(), t.cols());
                let cols = (0..c)
                    .map(|j| {
                        let col: Vec<T> = (0..r).map(|i| t.data()[i * c + j]).collect();
                        log_sum_exp(&col)
                    })
                    .collect();
                Tensor::vector(cols)
            }
            _ => {
                return Err(Error::Domain {
                    op: "logsumexp",
                    msg: format!("axis {axis} invalid for shape {:?}", t.shape()),
                })
            }
        };
        Ok(self.push(Op::LogSumExp { x: a, axis }, out))
    }

    /// Inverted dropout. Identity when not training or when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if !self.train || p <= 0.0 {
            return a;
        }
        let keep = T::c(1.0 / (1.0 - p));
        let t = self.value(a);
        let mask: Vec<T> = (0..t.len())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(t.shape(), data).expect("same shape");
        self.push(Op::Dropout { x: a, mask }, value)
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 1 {
                return Err(Error::shape("concat", t.shape(), &[]));
            }
            data.extend_from_slice(t.data());
        }
        if data.is_empty() {
            return Err(Error::Contract("concat of nothing".into()));
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(Error::shape("concat_cols", self.shape(parts[0]), t.shape()));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(&[rows, total], data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    /// `x[start..start+len]` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 1 || start + len > t.len() || len == 0 {
            return Err(Error::shape("slice", t.shape(), &[start, len]));
        }
        let v = Tensor::vector(t.data()[start..start + len].to_vec());
        Ok(self.push(Op::Slice { x, start }, v))
    }

    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || index >= t.rows() {
            return Err(Error::shape("row", t.shape(), &[index]));
        }
        let v = Tensor::vector(t.row(index).to_vec());
        Ok(self.push(Op::Row { x, index }, v))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || start + len > t.rows() || len == 0 {
            return Err(Error::shape("slice_rows", t.shape(), &[start, len]));
        }
        let c = t.cols();
        let v = Tensor::new(&[len, c], t.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(Op::SliceRows { x, start }, v))
    }

    /// Stacks equal-length vectors into a `[rows.len(), d]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::Contract("stack of nothing".into()));
        };
        let d = self.value(first).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != d {
                return Err(Error::shape("stack_rows", &[d], t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let v = Tensor::new(&[rows.len(), d], data)?;
        Ok(self.push(Op::StackRows(rows.to_vec()), v))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::shape("transpose", t.shape(), &[]));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        let v = Tensor::new(&[c, r], out)?;
        Ok(self.push(Op::Transpose(x), v))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let n: usize = shape.iter().product();
        if n != t.len() {
            return Err(Error::shape("reshape", t.shape(), shape));
        }
        let v = t.reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), v))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.mul(a, b)?;
        Ok(self.sum(m))
    }

    /// Negative log-likelihood of `gold` under a linear-chain CRF whose pair
    /// scores are laid out as `scores[t, prev * labels + cur]` with
    /// `prev = 0` reserved for the start state.
    pub fn crf_nll(&mut self, scores: Var, labels: usize, gold: &[usize]) -> Result<Var> {
        let t = self.value(scores);
        let n = gold.len();
        if t.rank() != 2 || t.rows() != n || t.cols() != (labels + 1) * labels {
            return Err(Error::shape(
                "crf_nll",
                t.shape(),
                &[n, (labels + 1) * labels],
            ));
        }
        if let Some(&bad) = gold.iter().find(|&&g| g >= labels) {
            return Err(Error::Contract(format!(
                "gold label {bad} outside label space of size {labels}"
            )));
        }
        let lattice = PairScores::new(n, labels, t.data().to_vec())?;
        let logz = lattice.log_partition();
        let gold_score = lattice.path_score(gold);
        let pair_marginals = lattice.pair_marginals();
        let v = Tensor::scalar(logz - gold_score);
        Ok(self.push(
            Op::CrfNll {
                scores,
                pair_marginals,
                gold: gold.to_vec(),
                labels,
            },
            v,
        ))
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added to
    /// `grads`, so repeated calls accumulate.
    pub fn backward(&self, loss: Var, grads: &mut GradStore<T>) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut g: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.add_dense(*id, &dy),
                Op::Lookup { table, index } => grads.add_row(*table, *index, &dy),
                Op::MatMul { a, b, m, k, n } => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    gemm_nt_acc(&dy, bv, acc(&mut g, *a, m * k), *m, *k, *n);
                    gemm_tn_acc(av, &dy, acc(&mut g, *b, k * n), *m, *k, *n);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut g, *a, dy.len()), &dy);
                    add_into(acc(&mut g, *b, dy.len()), &dy);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut g, *a, dy.len()), &dy);
                    let gb = acc(&mut g, *b, dy.len());
                    gb.iter_mut().zip(&dy).for_each(|(x, &d)| *x = *x - d);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let ga = acc(&mut g, *a, dy.len());
                    for ((x, &d), &y) in ga.iter_mut().zip(&dy).zip(bv) {
                        *x = *x + d * y;
                    }
                    let gb = acc(&mut g, *b, dy.len());
                    for ((x, &d), &y) in gb.iter_mut().zip(&dy).zip(av) {
                        *x = *x + d * y;
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut g, *a, dy.len());
                    ga.iter_mut().zip(&dy).for_each(|(x, &d)| *x = *x + d * *s);
                }
                Op::AddRowBroadcast(m, v) => {
                    add_into(acc(&mut g, *m, dy.len()), &dy);
                    let c = self.value(*v).len();
                    let gv = acc(&mut g, *v, c);
                    for (j, &d) in dy.iter().enumerate() {
                        gv[j % c] = gv[j % c] + d;
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap().data();
                    let ga = acc(&mut g, *a, dy.len());
                    for ((x, &d), &y) in ga.iter_mut().zip(&dy).zip(y) {
                        *x = *x + d * (T::one() - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap().data();
                    let ga = acc(&mut g, *a, dy.len());
                    for ((x, &d), &y) in ga.iter_mut().zip(&dy).zip(y) {
                        *x = *x + d * y * (T::one() - y);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let yt = node.value.as_ref().unwrap();
                    let c = yt.cols();
                    let ga = acc(&mut g, *a, dy.len());
                    for ((gr, dr), yr) in
                        ga.chunks_mut(c).zip(dy.chunks(c)).zip(yt.data().chunks(c))
                    {
                        let inner: T = dr.iter().zip(yr).map(|(&d, &y)| d * y).sum();
                        for ((x, &d), &y) in gr.iter_mut().zip(dr).zip(yr) {
                            *x = *x + y * (d - inner);
                        }
                    }
                }
                Op::LogSumExp { x, axis } => {
                    let xt = self.value(*x);
                    let out = node.value.as_ref().unwrap().data();
                    let c = xt.cols();
                    let gx = acc(&mut g, *x, xt.len());
                    for (idx, gv) in gx.iter_mut().enumerate() {
                        let (i, j) = (idx / c, idx % c);
                        let o = match (xt.rank(), axis) {
                            (1, _) => 0,
                            (_, 1) => i,
                            _ => j,
                        };
                        *gv = *gv + dy[o] * (xt.data()[idx] - out[o]).exp();
                    }
                }
                Op::Dropout { x, mask } => {
                    let gx = acc(&mut g, *x, dy.len());
                    for ((v, &d), &m) in gx.iter_mut().zip(&dy).zip(mask) {
                        *v = *v + d * m;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        add_into(acc(&mut g, p, len), &dy[off..off + len]);
                        off += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = self.value(parts[0]).rows();
                    let total: usize = dy.len() / rows;
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let gp = acc(&mut g, p, rows * w);
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &dy[r * total + off..r * total + off + w],
                            );
                        }
                        off += w;
                    }
                }
                Op::Slice { x, start } => {
                    let len = self.value(*x).len();
                    add_into(&mut acc(&mut g, *x, len)[*start..*start + dy.len()], &dy);
                }
                Op::Row { x, index } => {
                    let t = self.value(*x);
                    let c = t.cols();
                    add_into(
                        &mut acc(&mut g, *x, t.len())[index * c..(index + 1) * c],
                        &dy,
                    );
                }
                Op::SliceRows { x, start } => {
                    let t = self.value(*x);
                    let c = t.cols();
                    add_into(
                        &mut acc(&mut g, *x, t.len())[start * c..start * c + dy.len()],
                        &dy,
                    );
                }
                Op::StackRows(rows) => {
                    let d = dy.len() / rows.len();
                    for (r, &v) in rows.iter().enumerate() {
                        add_into(acc(&mut g, v, d), &dy[r * d..(r + 1) * d]);
                    }
                }
                Op::Transpose(x) => {
                    let t = self.value(*x);
                    let (r, c) = (t.rows(), t.cols());
                    let gx = acc(&mut g, *x, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] = gx[i * c + j] + dy[j * r + i];
                        }
                    }
                }
                Op::Reshape(x) => add_into(acc(&mut g, *x, dy.len()), &dy),
                Op::Sum(x) => {
                    let len = self.value(*x).len();
                    acc(&mut g, *x, len)
                        .iter_mut()
                        .for_each(|v| *v = *v + dy[0]);
                }
                Op::CrfNll {
                    scores,
                    pair_marginals,
                    gold,
                    labels,
                } => {
                    let l = *labels;
                    let row = (l + 1) * l;
                    let gs = acc(&mut g, *scores, pair_marginals.len());
                    for (x, &p) in gs.iter_mut().zip(pair_marginals) {
                        *x = *x + dy[0] * p;
                    }
                    let mut prev = 0;
                    for (t, &y) in gold.iter().enumerate() {
                        let idx = t * row + prev * l + y;
                        gs[idx] = gs[idx] - dy[0];
                        prev = y + 1;
                    }
                }
            }
        }
        Ok(())
    }
}

fn acc<T: Scalar>(g: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    g[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(a, &b)| *a = *a + b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (n, t) in entries {
            s.insert(*n, t.clone()).unwrap();
        }
        s
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let m = Tensor::<f64>::matrix(&[
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.0],
        ]);
        let s = ParamStore::new();
        let mut g = Graph::new(&s, false);
        let i = g.input(Tensor::eye(3));
        let mv = g.input(m.clone());
        let out = g.matmul(i, mv).unwrap();
        assert_eq!(g.value(out), &m);

        let a = g.input(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = g.input(Tensor::matrix(&[vec![1.0], vec![1.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
        assert_eq!(g.shape(c), &[2, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let s = ParamStore::new();
        let mut g = Graph::<f64>::new(&s, false);
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn logsumexp_cases() {
        let s = ParamStore::new();
        let mut g = Graph::<f64>::new(&s, false);
        let a = g.input(Tensor::vector(vec![0.0, 0.0]));
        let l = g.logsumexp(a, 0).unwrap();
        assert!((g.value(l).data()[0] - 2f64.ln()).abs() < 1e-12);
        let b = g.input(Tensor::vector(vec![1000.0, 1000.0]));
        let l = g.logsumexp(b, 0).unwrap();
        assert!((g.value(l).data()[0] - (1000.0 + 2f64.ln())).abs() < 1e-9);
        assert!(g.logsumexp(b, 1).is_err());
    }

    #[test]
    fn elementwise_basics() {
        let s = ParamStore::new();
        let mut g = Graph::<f64>::new(&s, false);
        let z = g.input(Tensor::vector(vec![0.0]));
        let t = g.tanh(z);
        let sg = g.sigmoid(z);
        assert_eq!(g.value(t).data(), &[0.0]);
        assert_eq!(g.value(sg).data(), &[0.5]);
    }

    #[test]
    fn dropout_eval_identity_and_train_determinism() {
        let s = ParamStore::new();
        let v = Tensor::vector((0..20).map(f64::from).collect());
        let mut g = Graph::<f64>::new(&s, false);
        let x = g.input(v.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = g.dropout(x, 0.5, &mut rng);
        assert_eq!(g.value(y), &v);

        let run = || {
            let mut g = Graph::<f64>::new(&s, true);
            let x = g.input(v.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let y = g.dropout(x, 0.5, &mut rng);
            g.value(y).clone()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        for (o, i) in a.data().iter().zip(v.data()) {
            assert!(*o == 0.0 || (*o - 2.0 * i).abs() < 1e-12);
        }
    }

    #[test]
    fn lookup_out_of_range() {
        let s = store(&[("emb", Tensor::zeros(&[3, 2]))]);
        let mut g = Graph::new(&s, false);
        match g.lookup(s.id("emb").unwrap(), 3) {
            Err(Error::Lookup { index, size }) => assert_eq!((index, size), (3, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn backward_sum_and_dot() {
        let s = store(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let w = s.id("w").unwrap();
        let mut grads = GradStore::for_params(&s);
        let mut g = Graph::new(&s, false);
        let wv = g.param(w);
        let l = g.sum(wv);
        g.backward(l, &mut grads).unwrap();
        assert_eq!(grads.dense(w), vec![1.0, 1.0]);

        grads.zero();
        let mut g = Graph::new(&s, false);
        let wv = g.param(w);
        let l = g.dot(wv, wv).unwrap();
        g.backward(l, &mut grads).unwrap();
        assert_eq!(grads.dense(w), vec![2.0, 4.0]);

        // a second call without reset accumulates
        g.backward(l, &mut grads).unwrap();
        assert_eq!(grads.dense(w), vec![4.0, 8.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let s = store(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let mut grads = GradStore::for_params(&s);
        let mut g = Graph::new(&s, false);
        let wv = g.param(s.id("w").unwrap());
        assert!(matches!(
            g.backward(wv, &mut grads),
            Err(Error::Contract(_))
        ));
    }
}
