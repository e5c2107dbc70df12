use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors. Order of insertion is the
/// order used on disk.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradient accumulator for one parameter. Embedding tables accumulate
/// sparse rows; everything else is dense.
#[derive(Clone, Debug, Default)]
pub enum Grad<T> {
    #[default]
    Empty,
    Dense(Vec<T>),
    Rows(BTreeMap<usize, Vec<T>>),
}

#[derive(Clone, Debug)]
pub struct GradStore<T> {
    grads: Vec<Grad<T>>,
    sizes: Vec<(usize, usize)>,
}

impl<T: Scalar> GradStore<T> {
    pub fn for_params(params: &ParamStore<T>) -> Self {
        let sizes = params
            .tensors
            .iter()
            .map(|t| (t.len(), t.row(0).len()))
            .collect();
        Self {
            grads: vec![Grad::Empty; params.len()],
            sizes,
        }
    }

    pub fn get(&self, id: ParamId) -> &Grad<T> {
        &self.grads[id.0]
    }

    /// Dense copy of the accumulated gradient (zeros if untouched).
    pub fn dense(&self, id: ParamId) -> Vec<T> {
        let (len, row) = self.sizes[id.0];
        match &self.grads[id.0] {
            Grad::Empty => vec![T::zero(); len],
            Grad::Dense(g) => g.clone(),
            Grad::Rows(rows) => {
                let mut out = vec![T::zero(); len];
                for (&r, g) in rows {
                    out[r * row..(r + 1) * row].copy_from_slice(g);
                }
                out
            }
        }
    }

    pub(crate) fn add_dense(&mut self, id: ParamId, g: &[T]) {
        let (len, row) = self.sizes[id.0];
        debug_assert_eq!(len, g.len());
        let slot = &mut self.grads[id.0];
        match slot {
            Grad::Empty => *slot = Grad::Dense(g.to_vec()),
            Grad::Dense(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            Grad::Rows(rows) => {
                let mut acc = g.to_vec();
                for (&r, rg) in rows.iter() {
                    for (a, &b) in acc[r * row..(r + 1) * row].iter_mut().zip(rg) {
                        *a = *a + b;
                    }
                }
                *slot = Grad::Dense(acc);
            }
        }
    }

    pub(crate) fn add_row(&mut self, id: ParamId, r: usize, g: &[T]) {
        let (len, row) = self.sizes[id.0];
        let slot = &mut self.grads[id.0];
        match slot {
            Grad::Empty => {
                let mut rows = BTreeMap::new();
                rows.insert(r, g.to_vec());
                *slot = Grad::Rows(rows);
            }
            Grad::Dense(acc) => {
                debug_assert!((r + 1) * row <= len);
                for (a, &b) in acc[r * row..(r + 1) * row].iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            Grad::Rows(rows) => {
                let acc = rows.entry(r).or_insert_with(|| vec![T::zero(); row]);
                acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
            }
        }
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = Grad::Empty);
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| match g {
                Grad::Empty => 0.0,
                Grad::Dense(v) => v.iter().map(|x| x.f64() * x.f64()).sum(),
                Grad::Rows(rows) => rows.values().flatten().map(|x| x.f64() * x.f64()).sum(),
            })
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            match g {
                Grad::Empty => {}
                Grad::Dense(v) => v.iter_mut().for_each(|x| *x = *x * s),
                Grad::Rows(rows) => rows.values_mut().flatten().for_each(|x| *x = *x * s),
            }
        }
    }
}

/// Plain SGD: `p <- p - lr * grad(p)`, then gradients are cleared. With
/// `clip` set, the global gradient norm is rescaled to at most `clip` first.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &mut GradStore<T>,
    lr: f64,
    clip: Option<f64>,
) -> Result<()> {
    for id in params.ids() {
        let finite = match grads.get(id) {
            Grad::Empty => true,
            Grad::Dense(v) => v.iter().all(|x| x.is_finite()),
            Grad::Rows(rows) => rows.values().flatten().all(|x| x.is_finite()),
        };
        if !finite {
            return Err(Error::NonFinite {
                param: params.name(id).to_string(),
            });
        }
    }
    if let Some(max) = clip {
        let norm = grads.norm();
        if norm > max {
            grads.scale(T::c(max / norm));
        }
    }
    let lr = T::c(lr);
    for id in params.ids() {
        let row = grads.sizes[id.0].1;
        let data = params.tensors[id.0].data_mut();
        match &grads.grads[id.0] {
            Grad::Empty => {}
            Grad::Dense(g) => data.iter_mut().zip(g).for_each(|(p, &g)| *p = *p - lr * g),
            Grad::Rows(rows) => {
                for (&r, g) in rows {
                    data[r * row..(r + 1) * row]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(p, &g)| *p = *p - lr * g);
                }
            }
        }
    }
    grads.zero();
    Ok(())
}

/// Weight matrix initializer: uniform in `±sqrt(1/fan_in)`.
pub fn init_weight<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    init_uniform(shape, bound, rng)
}

pub fn init_uniform<T: Scalar, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::c(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data).expect("consistent shape")
}

/// Embedding initializer: uniform in `±0.1`.
pub fn init_embedding<T: Scalar, R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Tensor<T> {
    init_uniform(&[rows, dim], 0.1, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("p", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn sgd_basic_step() {
        let (mut s, id) = store(1.0);
        let mut g = GradStore::for_params(&s);
        g.add_dense(id, &[2.0]);
        sgd_step(&mut s, &mut g, 0.1, None).unwrap();
        assert!((s.get(id).data()[0] - 0.8).abs() < 1e-15);
        assert!(matches!(g.get(id), Grad::Empty));
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let (mut s, id) = store(1.5);
        let mut g = GradStore::for_params(&s);
        g.add_dense(id, &[7.0]);
        sgd_step(&mut s, &mut g, 0.0, None).unwrap();
        assert_eq!(s.get(id).data()[0], 1.5);
    }

    #[test]
    fn sgd_quadratic_converges() {
        // (p - 3)^2 from p = 0 contracts by (1 - 2 lr) per step.
        let (mut s, id) = store(0.0);
        let mut g = GradStore::for_params(&s);
        for _ in 0..200 {
            let p = s.get(id).data()[0];
            g.add_dense(id, &[2.0 * (p - 3.0)]);
            sgd_step(&mut s, &mut g, 0.015, None).unwrap();
        }
        let p = s.get(id).data()[0];
        let closed = 3.0 - 3.0 * (1.0f64 - 0.03).powi(200);
        assert!((p - closed).abs() < 1e-12);
        assert!((p - 3.0).abs() <= 1e-2);
    }

    #[test]
    fn sgd_nan_names_parameter() {
        let (mut s, id) = store(0.0);
        let mut g = GradStore::for_params(&s);
        g.add_dense(id, &[f64::NAN]);
        match sgd_step(&mut s, &mut g, 0.1, None) {
            Err(Error::NonFinite { param }) => assert_eq!(param, "p"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clipping_bounds_update() {
        let (mut s, id) = store(0.0);
        let mut g = GradStore::for_params(&s);
        g.add_dense(id, &[100.0]);
        sgd_step(&mut s, &mut g, 1.0, Some(5.0)).unwrap();
        assert!((s.get(id).data()[0] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn sparse_rows_merge_into_dense() {
        let mut s = ParamStore::<f64>::new();
        let id = s.insert("emb", Tensor::zeros(&[3, 2])).unwrap();
        let mut g = GradStore::for_params(&s);
        g.add_row(id, 1, &[1.0, 2.0]);
        g.add_row(id, 1, &[1.0, 1.0]);
        g.add_dense(id, &[1.0; 6]);
        assert_eq!(g.dense(id), vec![1.0, 1.0, 3.0, 4.0, 1.0, 1.0]);
    }
}
