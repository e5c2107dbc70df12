//! Exact inference over a linear chain with pair-indexed scores.
//!
//! Scores are stored as `[t][prev][cur]` with `prev` ranging over
//! `0..=labels`: row 0 is the start state, row `p + 1` is label `p`. Only row 0
//! is read at `t = 0` and only rows `1..=labels` afterwards.

use crate::error::{Error, Result};
use crate::numcore::{log_sum_exp, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct PairScores<T> {
    n: usize,
    labels: usize,
    data: Vec<T>,
}

impl<T: Scalar> PairScores<T> {
    pub fn new(n: usize, labels: usize, data: Vec<T>) -> Result<Self> {
        if n == 0 || labels == 0 {
            return Err(Error::Contract(format!(
                "lattice needs n >= 1 and at least one label (n={n}, labels={labels})"
            )));
        }
        if data.len() != n * (labels + 1) * labels {
            return Err(Error::shape(
                "pair_scores",
                &[n, labels + 1, labels],
                &[data.len()],
            ));
        }
        Ok(Self { n, labels, data })
    }

    pub fn from_fn(
        n: usize,
        labels: usize,
        mut f: impl FnMut(usize, Option<usize>, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(n * (labels + 1) * labels);
        for t in 0..n {
            for p in 0..=labels {
                let prev = p.checked_sub(1);
                for c in 0..labels {
                    data.push(f(t, prev, c));
                }
            }
        }
        Self::new(n, labels, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    fn idx(&self, t: usize, prev: Option<usize>, cur: usize) -> usize {
        let p = prev.map_or(0, |p| p + 1);
        (t * (self.labels + 1) + p) * self.labels + cur
    }

    /// Score of moving from `prev` (`None` = start) to `cur` at position `t`.
    #[inline]
    pub fn at(&self, t: usize, prev: Option<usize>, cur: usize) -> T {
        self.data[self.idx(t, prev, cur)]
    }

    pub fn path_score(&self, path: &[usize]) -> T {
        let mut prev = None;
        let mut s = T::zero();
        for (t, &y) in path.iter().enumerate() {
            s = s + self.at(t, prev, y);
            prev = Some(y);
        }
        s
    }

    /// Forward log-potentials `alpha[t * labels + y]`.
    pub fn forward(&self) -> Vec<T> {
        let l = self.labels;
        let mut alpha = vec![T::zero(); self.n * l];
        for y in 0..l {
            alpha[y] = self.at(0, None, y);
        }
        let mut buf = vec![T::zero(); l];
        for t in 1..self.n {
            for y in 0..l {
                for (p, b) in buf.iter_mut().enumerate() {
                    *b = alpha[(t - 1) * l + p] + self.at(t, Some(p), y);
                }
                alpha[t * l + y] = log_sum_exp(&buf);
            }
        }
        alpha
    }

    /// Backward log-potentials `beta[t * labels + y]`, with `beta` at the last
    /// position equal to zero (no end factor).
    pub fn backward(&self) -> Vec<T> {
        let l = self.labels;
        let n = self.n;
        let mut beta = vec![T::zero(); n * l];
        let mut buf = vec![T::zero(); l];
        for t in (0..n - 1).rev() {
            for y in 0..l {
                for (c, b) in buf.iter_mut().enumerate() {
                    *b = self.at(t + 1, Some(y), c) + beta[(t + 1) * l + c];
                }
                beta[t * l + y] = log_sum_exp(&buf);
            }
        }
        beta
    }

    pub fn log_partition(&self) -> T {
        let alpha = self.forward();
        log_sum_exp(&alpha[(self.n - 1) * self.labels..])
    }

    /// Highest scoring path and its unnormalized log-score. Ties go to the
    /// lowest final label and, while tracing back, the lowest predecessor.
    pub fn viterbi(&self) -> (Vec<usize>, T) {
        let l = self.labels;
        let n = self.n;
        let mut delta = vec![T::zero(); n * l];
        let mut back = vec![0usize; n * l];
        for y in 0..l {
            delta[y] = self.at(0, None, y);
        }
        for t in 1..n {
            for y in 0..l {
                let mut best = T::neg_infinity();
                let mut arg = 0;
                for p in 0..l {
                    let s = delta[(t - 1) * l + p] + self.at(t, Some(p), y);
                    if s > best {
                        best = s;
                        arg = p;
                    }
                }
                delta[t * l + y] = best;
                back[t * l + y] = arg;
            }
        }
        let last = &delta[(n - 1) * l..];
        let mut y = 0;
        for (c, &s) in last.iter().enumerate() {
            if s > last[y] {
                y = c;
            }
        }
        let score = last[y];
        let mut path = vec![0; n];
        path[n - 1] = y;
        for t in (1..n).rev() {
            y = back[t * l + y];
            path[t - 1] = y;
        }
        (path, score)
    }

    /// Per-position label posteriors.
    pub fn marginals(&self) -> Vec<Vec<T>> {
        let l = self.labels;
        let alpha = self.forward();
        let beta = self.backward();
        let logz = log_sum_exp(&alpha[(self.n - 1) * l..]);
        (0..self.n)
            .map(|t| {
                (0..l)
                    .map(|y| (alpha[t * l + y] + beta[t * l + y] - logz).exp())
                    .collect()
            })
            .collect()
    }

    /// Posterior probability of every scored transition, in the same layout
    /// as the scores. This is the gradient of the log-partition.
    pub fn pair_marginals(&self) -> Vec<T> {
        let l = self.labels;
        let alpha = self.forward();
        let beta = self.backward();
        let logz = log_sum_exp(&alpha[(self.n - 1) * l..]);
        let mut out = vec![T::zero(); self.data.len()];
        for c in 0..l {
            out[self.idx(0, None, c)] = (self.at(0, None, c) + beta[c] - logz).exp();
        }
        for t in 1..self.n {
            for p in 0..l {
                for c in 0..l {
                    let i = self.idx(t, Some(p), c);
                    out[i] = (alpha[(t - 1) * l + p] + self.data[i] + beta[t * l + c] - logz).exp();
                }
            }
        }
        out
    }
}
