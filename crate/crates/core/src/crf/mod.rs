//! Independent linear-chain CRF decoders, one per coarse feature dimension.
//!
//! Every decoder scores a label pair directly from the encoder state:
//! `score(prev, cur, h_t) = W[prev, cur] . h_t + b[prev, cur]`. The weight
//! tensor has shape `[labels + 1, labels, d]`; row 0 of the first axis is the
//! start state.

pub mod lattice;

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{init_weight, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
pub use lattice::PairScores;

#[derive(Clone, Debug, PartialEq)]
pub struct CrfLayer {
    dim: String,
    labels: Vec<String>,
    input_dim: usize,
    weight: ParamId,
    bias: ParamId,
}

impl CrfLayer {
    pub fn weight_name(dim: &str) -> String {
        format!("crf.{dim}.weight")
    }

    pub fn bias_name(dim: &str) -> String {
        format!("crf.{dim}.bias")
    }

    /// Registers freshly initialized parameters for a decoder over `labels`.
    pub fn init<T: Scalar, R: Rng>(
        dim: &str,
        labels: Vec<String>,
        input_dim: usize,
        params: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let l = labels.len();
        if l == 0 {
            return Err(Error::Contract(format!(
                "decoder `{dim}` has an empty label set"
            )));
        }
        let weight = params.insert(
            Self::weight_name(dim),
            init_weight(&[l + 1, l, input_dim], input_dim, rng),
        )?;
        let bias = params.insert(Self::bias_name(dim), Tensor::zeros(&[l + 1, l]))?;
        Ok(Self {
            dim: dim.to_string(),
            labels,
            input_dim,
            weight,
            bias,
        })
    }

    /// Binds to parameters already present in `params` (e.g. after loading).
    pub fn attach<T: Scalar>(
        dim: &str,
        labels: Vec<String>,
        input_dim: usize,
        params: &ParamStore<T>,
    ) -> Result<Self> {
        let l = labels.len();
        let lookup = |name: String, shape: &[usize]| -> Result<ParamId> {
            let id = params
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if params.get(id).shape() != shape {
                return Err(Error::shape("crf attach", params.get(id).shape(), shape));
            }
            Ok(id)
        };
        Ok(Self {
            weight: lookup(Self::weight_name(dim), &[l + 1, l, input_dim])?,
            bias: lookup(Self::bias_name(dim), &[l + 1, l])?,
            dim: dim.to_string(),
            labels,
            input_dim,
        })
    }

    pub fn dim(&self) -> &str {
        &self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// `W[prev, cur] . h + b[prev, cur]`, the log of the pair potential.
    pub fn pair_score<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        prev: Option<usize>,
        cur: usize,
        h: &[T],
    ) -> Result<T> {
        let l = self.num_labels();
        if cur >= l || prev.is_some_and(|p| p >= l) {
            return Err(Error::Contract(format!(
                "label pair ({prev:?}, {cur}) out of range for `{}` with {l} labels",
                self.dim
            )));
        }
        if h.len() != self.input_dim {
            return Err(Error::shape("pair_score", &[h.len()], &[self.input_dim]));
        }
        let row = prev.map_or(0, |p| p + 1) * l + cur;
        let w = &params.get(self.weight).data()[row * self.input_dim..(row + 1) * self.input_dim];
        let dot: T = w.iter().zip(h).map(|(&a, &b)| a * b).sum();
        Ok(dot + params.get(self.bias).data()[row])
    }

    /// Full score lattice computed directly from parameter values.
    pub fn scores<T: Scalar>(&self, params: &ParamStore<T>, hs: &[&[T]]) -> Result<PairScores<T>> {
        let l = self.num_labels();
        let mut data = Vec::with_capacity(hs.len() * (l + 1) * l);
        for h in hs {
            for p in 0..=l {
                for c in 0..l {
                    data.push(self.pair_score(params, p.checked_sub(1), c, h)?);
                }
            }
        }
        PairScores::new(hs.len(), l, data)
    }

    /// Differentiable pair scores for a `[n, d]` state matrix, shaped
    /// `[n, (labels + 1) * labels]`.
    pub fn scores_graph<T: Scalar>(&self, g: &mut Graph<'_, T>, h: Var) -> Result<Var> {
        let l = self.num_labels();
        let rows = (l + 1) * l;
        let w = g.param(self.weight);
        let w = g.reshape(w, &[rows, self.input_dim])?;
        let wt = g.transpose(w)?;
        let s = g.matmul(h, wt)?;
        let b = g.param(self.bias);
        let b = g.reshape(b, &[rows])?;
        g.add_row_broadcast(s, b)
    }

    pub fn nll<T: Scalar>(&self, g: &mut Graph<'_, T>, h: Var, gold: &[usize]) -> Result<Var> {
        let s = self.scores_graph(g, h)?;
        g.crf_nll(s, self.num_labels(), gold)
    }

    pub fn log_partition<T: Scalar>(&self, params: &ParamStore<T>, hs: &[&[T]]) -> Result<T> {
        Ok(self.scores(params, hs)?.log_partition())
    }

    pub fn viterbi_decode<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        hs: &[&[T]],
    ) -> Result<(Vec<usize>, T)> {
        Ok(self.scores(params, hs)?.viterbi())
    }

    pub fn posterior_marginals<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        hs: &[&[T]],
    ) -> Result<Vec<Vec<T>>> {
        Ok(self.scores(params, hs)?.marginals())
    }

    /// Tab-separated view of the learned pair biases together with the L2 norm
    /// of each pair's weight vector.
    pub fn transition_table<T: Scalar>(&self, params: &ParamStore<T>) -> String {
        let l = self.num_labels();
        let d = self.input_dim;
        let w = params.get(self.weight).data();
        let b = params.get(self.bias).data();
        let mut out = String::new();
        let _ = writeln!(out, "# feature\t{}", self.dim);
        let _ = writeln!(out, "prev\tcur\tbias\tweight_norm");
        for p in 0..=l {
            let prev = if p == 0 {
                "<s>"
            } else {
                self.labels[p - 1].as_str()
            };
            for c in 0..l {
                let row = p * l + c;
                let norm = w[row * d..(row + 1) * d]
                    .iter()
                    .map(|x| x.f64() * x.f64())
                    .sum::<f64>()
                    .sqrt();
                let _ = writeln!(
                    out,
                    "{prev}\t{}\t{:.6}\t{:.6}",
                    self.labels[c],
                    b[row].f64(),
                    norm
                );
            }
        }
        out
    }
}

/// The set of decoders sharing one encoder.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureDecoderBank {
    layers: Vec<CrfLayer>,
}

impl FeatureDecoderBank {
    pub fn new(layers: Vec<CrfLayer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[CrfLayer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn dims(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(CrfLayer::dim)
    }

    pub fn layer(&self, dim: &str) -> Option<&CrfLayer> {
        self.layers.iter().find(|l| l.dim == dim)
    }

    /// Summed negative log-likelihood over all decoders. `gold[i]` is the
    /// label index sequence for decoder `i`.
    pub fn nll_loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h: Var,
        gold: &[Vec<usize>],
    ) -> Result<Var> {
        if gold.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "{} gold sequences for {} decoders",
                gold.len(),
                self.layers.len()
            )));
        }
        let mut total: Option<Var> = None;
        for (layer, y) in self.layers.iter().zip(gold) {
            let l = layer.nll(g, h, y)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        total.ok_or_else(|| Error::Contract("empty decoder bank".into()))
    }

    /// Viterbi path per decoder, reading pair scores from the graph.
    pub fn decode<T: Scalar>(&self, g: &mut Graph<'_, T>, h: Var) -> Result<Vec<Vec<usize>>> {
        let n = g.shape(h)[0];
        self.layers
            .iter()
            .map(|layer| {
                let s = layer.scores_graph(g, h)?;
                let lattice = PairScores::new(n, layer.num_labels(), g.value(s).data().to_vec())?;
                Ok(lattice.viterbi().0)
            })
            .collect()
    }
}
