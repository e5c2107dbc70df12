//! Oracles and synthetic corpora shared by the integration tests. Nothing
//! here calls into the inference code it is used to check.
#![allow(dead_code)]

use mdtag::corpus::{decompose_corpus, Sentence};
use mdtag::numcore::{GradStore, Graph, ParamId, ParamStore, Var};
use mdtag::schema::{FeatureDictionary, Strictness};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Exhaustive enumeration over all `labels^n` label sequences.
pub struct Enumerated {
    pub log_z: f64,
    /// Maximal path; among equal scores the one that is smallest when read
    /// from the last position backwards.
    pub best: Vec<usize>,
    pub best_score: f64,
    pub marginals: Vec<Vec<f64>>,
    /// `[t][prev_or_start][cur]`, `prev_or_start = 0` for the start.
    pub pair_marginals: Vec<Vec<Vec<f64>>>,
}

pub fn enumerate(
    n: usize,
    labels: usize,
    score: impl Fn(usize, Option<usize>, usize) -> f64,
) -> Enumerated {
    let total = labels.pow(n as u32);
    let mut paths = Vec::with_capacity(total);
    for code in 0..total {
        let mut path = vec![0; n];
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % labels;
            c /= labels;
        }
        let s: f64 = (0..n)
            .map(|t| score(t, if t == 0 { None } else { Some(path[t - 1]) }, path[t]))
            .sum();
        paths.push((path, s));
    }
    let max = paths.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = paths.iter().map(|p| (p.1 - max).exp()).sum();
    let log_z = max + z.ln();
    let mut best: Option<&(Vec<usize>, f64)> = None;
    for p in &paths {
        let better = match best {
            None => true,
            Some(b) => p.1 > b.1 || (p.1 == b.1 && p.0.iter().rev().lt(b.0.iter().rev())),
        };
        if better {
            best = Some(p);
        }
    }
    let mut marginals = vec![vec![0.0; labels]; n];
    let mut pair_marginals = vec![vec![vec![0.0; labels]; labels + 1]; n];
    for (path, s) in &paths {
        let p = (s - log_z).exp();
        for t in 0..n {
            marginals[t][path[t]] += p;
            let prev = if t == 0 { 0 } else { path[t - 1] + 1 };
            pair_marginals[t][prev][path[t]] += p;
        }
    }
    let (best, best_score) = best.cloned().expect("at least one path");
    Enumerated {
        log_z,
        best,
        best_score,
        marginals,
        pair_marginals,
    }
}

/// `W[prev, cur] . h + b[prev, cur]` read straight off the raw buffers of a
/// `[L+1, L, d]` weight and `[L+1, L]` bias.
pub fn pair_energy(
    w: &[f64],
    b: &[f64],
    labels: usize,
    prev: Option<usize>,
    cur: usize,
    h: &[f64],
) -> f64 {
    let d = h.len();
    let row = prev.map_or(0, |p| p + 1) * labels + cur;
    let mut s = b[row];
    for k in 0..d {
        s += w[row * d + k] * h[k];
    }
    s
}

/// Central differences of `loss` with respect to every entry of every
/// parameter, perturbing a private copy of `params`.
pub fn numeric_gradients(
    params: &ParamStore<f64>,
    eps: f64,
    loss: impl Fn(&ParamStore<f64>) -> f64,
) -> Vec<(String, Vec<f64>)> {
    let mut p = params.clone();
    let ids: Vec<ParamId> = p.ids().collect();
    let mut out = Vec::new();
    for id in ids {
        let n = p.get(id).len();
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = p.get(id).data()[i];
            p.get_mut(id).data_mut()[i] = orig + eps;
            let up = loss(&p);
            p.get_mut(id).data_mut()[i] = orig - eps;
            let down = loss(&p);
            p.get_mut(id).data_mut()[i] = orig;
            *gi = (up - down) / (2.0 * eps);
        }
        out.push((p.name(id).to_string(), g));
    }
    out
}

pub fn analytic_gradients(
    params: &ParamStore<f64>,
    build: impl Fn(&mut Graph<'_, f64>) -> Var,
) -> Vec<(String, Vec<f64>)> {
    let mut g = Graph::new(params, true);
    let loss = build(&mut g);
    let mut grads = GradStore::for_params(params);
    g.backward(loss, &mut grads).expect("backward");
    params
        .ids()
        .map(|id| (params.name(id).to_string(), grads.dense(id)))
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error over parameters, with its name.
pub fn worst_error(
    analytic: &[(String, Vec<f64>)],
    numeric: &[(String, Vec<f64>)],
) -> (String, f64) {
    let mut worst = (String::new(), 0.0);
    for ((name, a), (other, n)) in analytic.iter().zip(numeric) {
        assert_eq!(name, other);
        let e = relative_error(a, n);
        if e >= worst.1 {
            worst = (name.clone(), e);
        }
    }
    worst
}

pub fn decomposed(mut sentences: Vec<Sentence>) -> Vec<Sentence> {
    decompose_corpus(
        &mut sentences,
        &FeatureDictionary::builtin(),
        Strictness::Strict,
    )
    .expect("fixture tags are mapped");
    sentences
}

fn sentence(lang: &str, pairs: &[(String, String)]) -> Sentence {
    let p: Vec<(&str, &str)> = pairs
        .iter()
        .map(|(a, b)| (a.as_str(), b.as_str()))
        .collect();
    Sentence::from_pairs(lang, &p).expect("non-empty fixture sentence")
}

/// Two dimensions (POS, Number) readable off the word: the prefix gives POS,
/// a trailing `s` marks plural.
pub fn surface_corpus(n: usize, rng: &mut ChaCha8Rng) -> Vec<Sentence> {
    const POS: [&str; 3] = ["N", "V", "ADJ"];
    const STEM: [&str; 3] = ["ka", "to", "mi"];
    let out = (0..n)
        .map(|_| {
            let len = rng.gen_range(4..10);
            let pairs: Vec<(String, String)> = (0..len)
                .map(|_| {
                    let (p, pl, k) = (rng.gen_range(0..3), rng.gen_bool(0.5), rng.gen_range(0..5));
                    let form = format!("{}{k}{}", STEM[p], if pl { "s" } else { "" });
                    (form, format!("{};{}", POS[p], if pl { "PL" } else { "SG" }))
                })
                .collect();
            sentence("xx", &pairs)
        })
        .collect();
    decomposed(out)
}

/// POS runs through a fixed cycle whose phase only the first word reveals;
/// all other words are drawn at random. Gender is a function of POS, but its
/// own sequence (M M F F ...) gives no phase information.
pub fn pos_cycle_corpus(n: usize, rng: &mut ChaCha8Rng) -> Vec<Sentence> {
    const CYCLE: [&str; 4] = ["N", "ADJ", "V", "ADV"];
    const GENDER: [&str; 4] = ["MASC", "MASC", "FEM", "FEM"];
    let out = (0..n)
        .map(|_| {
            let len = rng.gen_range(8..16);
            let phase = rng.gen_range(0..4);
            let pairs: Vec<(String, String)> = (0..len)
                .map(|i| {
                    let k = (phase + i) % 4;
                    let w = if i == 0 {
                        format!("s{phase}")
                    } else {
                        format!("w{}", rng.gen_range(0..12))
                    };
                    (w, format!("{};{}", CYCLE[k], GENDER[k]))
                })
                .collect();
            sentence("xx", &pairs)
        })
        .collect();
    decomposed(out)
}

/// Eight shared word forms whose POS depends on the language: `shift`
/// rotates the tag assignment.
pub fn homograph_corpus(lang: &str, shift: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Sentence> {
    const TAGS: [&str; 4] = ["N", "V", "CONJ", "ADP"];
    let out = (0..n)
        .map(|_| {
            let len = rng.gen_range(4..9);
            let pairs: Vec<(String, String)> = (0..len)
                .map(|_| {
                    let w = rng.gen_range(0..8);
                    (format!("w{w}"), TAGS[(w + shift) % 4].to_string())
                })
                .collect();
            sentence(lang, &pairs)
        })
        .collect();
    decomposed(out)
}

/// A corpus with exactly `counts` tokens per tagset, ten tokens a sentence.
pub fn counted_corpus(lang: &str, counts: &[(&str, usize)]) -> Vec<Sentence> {
    let mut tags: Vec<&str> = Vec::new();
    for (t, c) in counts {
        tags.extend(std::iter::repeat(*t).take(*c));
    }
    let out = tags
        .chunks(10)
        .enumerate()
        .map(|(i, chunk)| {
            let pairs: Vec<(String, String)> = chunk
                .iter()
                .enumerate()
                .map(|(j, t)| (format!("t{i}_{j}"), t.to_string()))
                .collect();
            sentence(lang, &pairs)
        })
        .collect();
    decomposed(out)
}
