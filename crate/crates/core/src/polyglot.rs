//! Language typology vectors and the polyglot factoring of encoder states.
//!
//! A typology vector `t_l` is projected to `f_l = tanh(W_l t_l + b_l)` and
//! every contextual state is replaced by the row-major vectorization of the
//! outer product `h_i f_lᵀ`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::numcore::{init_weight, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::schema::{FeatureSchema, MULTI_VALUE_SEP, NULL, POS};

/// Width of the projected typology vector.
pub const PROJECTION_WIDTH: usize = 20;

/// Dimensions for which per-POS value features are computed.
pub const BIGRAM_DIMS: [&str; 4] = ["Gender", "Number", "Person", "Case"];

/// POS labels always covered by per-POS features.
pub const BASE_POS: [&str; 4] = ["N", "V", "ADJ", "PRO"];

/// Extra POS labels are covered when they tag at least this share of tokens.
pub const MIN_POS_SHARE: f64 = 0.05;

/// Syntactic WALS features accepted from a URIEL export, in this order.
pub const URIEL_FEATURES: [&str; 18] = [
    "S-SVO",
    "S-SOV",
    "S-VSO",
    "S-VOS",
    "S-OVS",
    "S-OSV",
    "S-SUBJECT-BEFORE-VERB",
    "S-SUBJECT-AFTER-VERB",
    "S-OBJECT-AFTER-VERB",
    "S-OBJECT-BEFORE-VERB",
    "S-SUBJECT-BEFORE-OBJECT",
    "S-SUBJECT-AFTER-OBJECT",
    "S-ADPOSITION-BEFORE-NOUN",
    "S-ADPOSITION-AFTER-NOUN",
    "S-POSSESSOR-BEFORE-NOUN",
    "S-POSSESSOR-AFTER-NOUN",
    "S-ADJECTIVE-BEFORE-NOUN",
    "S-ADJECTIVE-AFTER-NOUN",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TypologyVector {
    pub lang: String,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl TypologyVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Proportion,
    Count,
}

fn values_of(v: &str) -> impl Iterator<Item = &str> {
    v.split(MULTI_VALUE_SEP).filter(|x| *x != NULL)
}

/// POS labels covered by per-POS features for a set of corpora.
pub fn feature_pos_set<'a>(corpora: impl IntoIterator<Item = &'a [Sentence]>) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = BASE_POS.iter().map(|s| s.to_string()).collect();
    for corpus in corpora {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut total = 0usize;
        for t in corpus.iter().flat_map(|s| &s.tokens) {
            total += 1;
            for p in values_of(t.annotation.get(POS)) {
                *counts.entry(p).or_insert(0) += 1;
            }
        }
        for (p, c) in counts {
            if total > 0 && c as f64 / total as f64 >= MIN_POS_SHARE {
                out.insert(p.to_string());
            }
        }
    }
    out
}

fn raw_features(
    corpus: &[Sentence],
    schema: &FeatureSchema,
    pos_set: &BTreeSet<String>,
) -> Result<Vec<(String, Kind, f64)>> {
    let tokens: Vec<_> = corpus.iter().flat_map(|s| &s.tokens).collect();
    if tokens.is_empty() {
        return Err(Error::Contract("typology of an empty corpus".into()));
    }
    let n = tokens.len() as f64;
    let mut out = Vec::new();
    for d in schema.dims() {
        let c = tokens
            .iter()
            .filter(|t| t.annotation.get(d) != NULL)
            .count();
        out.push((d.to_string(), Kind::Proportion, c as f64 / n));
    }
    let bigram_dims: Vec<&str> = BIGRAM_DIMS
        .iter()
        .copied()
        .filter(|d| schema.has_dim(d))
        .collect();
    for p in pos_set {
        let with_pos: Vec<_> = tokens
            .iter()
            .filter(|t| values_of(t.annotation.get(POS)).any(|x| x == p))
            .collect();
        for &d in &bigram_dims {
            let mut seen = BTreeSet::new();
            for t in &with_pos {
                seen.extend(values_of(t.annotation.get(d)));
            }
            for v in schema
                .labels(d)
                .unwrap_or_default()
                .iter()
                .filter(|v| v.as_str() != NULL)
            {
                let c = with_pos
                    .iter()
                    .filter(|t| {
                        t.annotation.get(d) == v || values_of(t.annotation.get(d)).any(|x| x == v)
                    })
                    .count();
                let share = if with_pos.is_empty() {
                    0.0
                } else {
                    c as f64 / with_pos.len() as f64
                };
                out.push((format!("{p}-{d}-{v}"), Kind::Proportion, share));
            }
            out.push((format!("{p}-{d}-#values"), Kind::Count, seen.len() as f64));
        }
    }
    Ok(out)
}

/// Corpus-derived typology vector of one language: the share of tokens
/// carrying each dimension, per-POS value shares for [`BIGRAM_DIMS`], and the
/// number of distinct values each (POS, dimension) pair takes (unnormalized).
pub fn build_typology_vector(
    corpus: &[Sentence],
    schema: &FeatureSchema,
) -> Result<TypologyVector> {
    let lang = corpus.first().map(|s| s.lang.clone()).unwrap_or_default();
    let pos_set = feature_pos_set([corpus]);
    let feats = raw_features(corpus, schema, &pos_set)?;
    Ok(TypologyVector {
        lang,
        names: feats.iter().map(|f| f.0.clone()).collect(),
        values: feats.iter().map(|f| f.2).collect(),
    })
}

/// Typology vectors of all cluster members over one shared feature list.
#[derive(Clone, Debug, PartialEq)]
pub struct TypologyTable {
    pub names: Vec<String>,
    pub rows: Vec<TypologyVector>,
}

impl TypologyTable {
    /// Builds aligned vectors for `(language, corpus)` members. Count
    /// features are divided by their maximum over the cluster and features
    /// that are zero for every member are dropped.
    pub fn from_cluster(
        members: &[(String, Vec<Sentence>)],
        schema: &FeatureSchema,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Contract("typology of an empty cluster".into()));
        }
        let pos_set = feature_pos_set(members.iter().map(|(_, c)| c.as_slice()));
        let mut raw = Vec::new();
        for (lang, corpus) in members {
            let f = raw_features(corpus, schema, &pos_set).map_err(|_| Error::Cluster {
                language: lang.clone(),
                msg: "empty training corpus".into(),
            })?;
            raw.push(f);
        }
        let width = raw[0].len();
        let mut keep = Vec::new();
        for j in 0..width {
            let max = raw.iter().map(|r| r[j].2).fold(0.0, f64::max);
            if max > 0.0 {
                keep.push((j, if raw[0][j].1 == Kind::Count { max } else { 1.0 }));
            }
        }
        let names: Vec<String> = keep.iter().map(|&(j, _)| raw[0][j].0.clone()).collect();
        let rows = members
            .iter()
            .zip(&raw)
            .map(|((lang, _), r)| TypologyVector {
                lang: lang.clone(),
                names: names.clone(),
                values: keep.iter().map(|&(j, div)| r[j].2 / div).collect(),
            })
            .collect();
        Ok(Self { names, rows })
    }

    pub fn get(&self, lang: &str) -> Option<&TypologyVector> {
        self.rows.iter().find(|r| r.lang == lang)
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    /// Header `language<TAB>feature...`, one row per language.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("language");
        for n in &self.names {
            let _ = write!(out, "\t{n}");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.lang);
            for v in &r.values {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty typology table".into()))?;
        let names: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut cols = line.split('\t');
            let lang = cols.next().unwrap_or_default().to_string();
            let values = cols
                .map(|c| {
                    c.trim().parse::<f64>().map_err(|e| Error::Parse {
                        path: "<typology>".into(),
                        line: i + 2,
                        msg: format!("bad value `{c}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != names.len() {
                return Err(Error::Parse {
                    path: "<typology>".into(),
                    line: i + 2,
                    msg: format!("{} values for {} features", values.len(), names.len()),
                });
            }
            rows.push(TypologyVector {
                lang,
                names: names.clone(),
                values,
            });
        }
        Ok(Self { names, rows })
    }
}

/// Reads URIEL syntax features for `langs` from a table whose header holds
/// `language` followed by feature names. Vectors use [`URIEL_FEATURES`]
/// order regardless of column order in the file.
pub fn load_uriel_subset(path: impl AsRef<Path>, langs: &[&str]) -> Result<TypologyTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_uriel_subset(&text, langs)
}

pub fn parse_uriel_subset(text: &str, langs: &[&str]) -> Result<TypologyTable> {
    let file = TypologyTable::from_tsv(text)?;
    let cols: Vec<usize> = URIEL_FEATURES
        .iter()
        .map(|f| {
            file.names
                .iter()
                .position(|n| n == f)
                .ok_or_else(|| Error::Config(format!("URIEL table lacks feature `{f}`")))
        })
        .collect::<Result<_>>()?;
    let names: Vec<String> = URIEL_FEATURES.iter().map(|s| s.to_string()).collect();
    let rows = langs
        .iter()
        .map(|&l| {
            let row = file.get(l).ok_or_else(|| Error::Cluster {
                language: l.to_string(),
                msg: "not present in the URIEL table".into(),
            })?;
            Ok(TypologyVector {
                lang: l.to_string(),
                names: names.clone(),
                values: cols.iter().map(|&c| row.values[c]).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(TypologyTable { names, rows })
}

/// Per-language projection parameters `W_l: [k, 20]`, `b_l: [20]`.
#[derive(Clone, Debug)]
pub struct PolyglotProjection {
    pub input: usize,
    pub width: usize,
    langs: BTreeMap<String, (ParamId, ParamId)>,
}

impl PolyglotProjection {
    pub fn weight_name(lang: &str) -> String {
        format!("poly.{lang}.weight")
    }

    pub fn bias_name(lang: &str) -> String {
        format!("poly.{lang}.bias")
    }

    pub fn init<T: Scalar, R: Rng>(
        langs: &[String],
        input: usize,
        width: usize,
        params: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || width == 0 {
            return Err(Error::Config(
                "polyglot projection needs positive widths".into(),
            ));
        }
        let mut map = BTreeMap::new();
        for l in langs {
            let w = params.insert(
                Self::weight_name(l),
                init_weight(&[input, width], input, rng),
            )?;
            let b = params.insert(Self::bias_name(l), Tensor::zeros(&[width]))?;
            map.insert(l.clone(), (w, b));
        }
        Ok(Self {
            input,
            width,
            langs: map,
        })
    }

    pub fn attach<T: Scalar>(
        langs: &[String],
        input: usize,
        width: usize,
        params: &ParamStore<T>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for l in langs {
            let get = |name: String, shape: &[usize]| -> Result<ParamId> {
                let id = params
                    .id(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
                if params.get(id).shape() != shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has the wrong shape"
                    )));
                }
                Ok(id)
            };
            let w = get(Self::weight_name(l), &[input, width])?;
            let b = get(Self::bias_name(l), &[width])?;
            map.insert(l.clone(), (w, b));
        }
        Ok(Self {
            input,
            width,
            langs: map,
        })
    }

    pub fn params_for(&self, lang: &str) -> Result<(ParamId, ParamId)> {
        self.langs
            .get(lang)
            .copied()
            .ok_or_else(|| Error::Contract(format!("no polyglot projection for `{lang}`")))
    }

    /// Width of the decoder input for encoder states of width `d`.
    pub fn output_width(&self, d: usize, concat: bool) -> usize {
        d * self.width + if concat { d } else { 0 }
    }
}

/// Factors `h` (`[n, d]`) by the projected typology vector of `lang`, giving
/// `[n, d * width]` rows `vec(h_i f_lᵀ)`; with `concat` the original states
/// are kept in front.
pub fn factor<T: Scalar>(
    g: &mut Graph<'_, T>,
    h: Var,
    t: &[T],
    proj: &PolyglotProjection,
    lang: &str,
    concat: bool,
) -> Result<Var> {
    if t.len() != proj.input {
        return Err(Error::Contract(format!(
            "typology vector of width {} for a projection of width {}",
            t.len(),
            proj.input
        )));
    }
    let shape = g.shape(h).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("factor", &shape, &[0, 0]));
    }
    let (n, d) = (shape[0], shape[1]);
    let (w, b) = proj.params_for(lang)?;
    let tv = g.input(Tensor::vector(t.to_vec()));
    let wv = g.param(w);
    let bv = g.param(b);
    let z = g.matmul(tv, wv)?;
    let z = g.add(z, bv)?;
    let f = g.tanh(z);
    let col = g.reshape(h, &[n * d, 1])?;
    let row = g.reshape(f, &[1, proj.width])?;
    let outer = g.matmul(col, row)?;
    let out = g.reshape(outer, &[n, d * proj.width])?;
    if concat {
        g.concat_cols(&[h, out])
    } else {
        Ok(out)
    }
}
