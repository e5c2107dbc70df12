//! Mapping between monolithic UniMorph tagsets and per-dimension labels.
//!
//! A tagset such as `N;PL;NOM;FEM` is split into its components and each
//! component is routed to a coarse dimension via a [`FeatureDictionary`],
//! giving `{POS=N, Number=PL, Case=NOM, Gender=FEM}`. Dimensions a token does
//! not carry take the null label `_`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const NULL: &str = "_";
pub const POS: &str = "POS";

/// Joins several values of one dimension on a single token.
pub const MULTI_VALUE_SEP: char = '|';

const BUILTIN_DICT: &str = include_str!("../data/unimorph.dict");

/// Value -> dimension lookup table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureDictionary {
    map: BTreeMap<String, String>,
}

impl FeatureDictionary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dict = Self::parse(&text)?;
        if dict.is_empty() {
            log::warn!("{}: feature dictionary is empty", path.display());
        }
        Ok(dict)
    }

    /// Parses `value<TAB>dimension` rows; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t').map(str::trim).filter(|c| !c.is_empty());
            let (Some(value), Some(dim), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Parse {
                    path: "<dictionary>".into(),
                    line: line_no,
                    msg: format!("expected `value<TAB>dimension`, got `{line}`"),
                });
            };
            match map.get(value) {
                Some((prev, prev_line)) if prev != dim => {
                    return Err(Error::DictionaryConflict {
                        value: value.to_string(),
                        first: prev.clone(),
                        first_line: *prev_line,
                        second: dim.to_string(),
                        second_line: line_no,
                    })
                }
                Some(_) => {}
                None => {
                    map.insert(value.to_string(), (dim.to_string(), line_no));
                }
            }
        }
        Ok(Self {
            map: map.into_iter().map(|(k, (d, _))| (k, d)).collect(),
        })
    }

    /// Dictionary shipped with the crate, covering the UniMorph schema.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_DICT).expect("builtin dictionary is well formed")
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let text: String = pairs
            .into_iter()
            .map(|(v, d)| format!("{v}\t{d}\n"))
            .collect();
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, value: &str) -> Option<&str> {
        self.map.get(value).map(String::as_str)
    }

    /// Dimension of a tag component. Components with alternative readings
    /// (`ACC/ERG`, `{DAT/GEN}`) are kept whole as labels; they are routed by
    /// their parts when every part agrees on one dimension.
    pub fn dimension_of(&self, component: &str) -> Option<&str> {
        if let Some(d) = self.get(component) {
            return Some(d);
        }
        let inner = component.trim_start_matches('{').trim_end_matches('}');
        let mut dims = inner
            .split(['/', '+'])
            .filter(|p| !p.is_empty())
            .map(|p| self.get(p));
        let first = dims.next()??;
        dims.all(|d| d == Some(first)).then_some(first)
    }

    /// Number of values per dimension.
    pub fn counts(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for d in self.map.values() {
            *out.entry(d.as_str()).or_insert(0) += 1;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Strictness {
    /// Abort on the first component missing from the dictionary.
    Strict,
    /// Drop unknown components and count them.
    #[default]
    Lenient,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DecomposeReport {
    pub unmapped: BTreeMap<String, usize>,
    pub tokens: usize,
}

impl DecomposeReport {
    pub fn total_unmapped(&self) -> usize {
        self.unmapped.values().sum()
    }

    pub fn merge(&mut self, other: &DecomposeReport) {
        self.tokens += other.tokens;
        for (k, v) in &other.unmapped {
            *self.unmapped.entry(k.clone()).or_insert(0) += v;
        }
    }
}

/// Per-dimension assignment for one token. Dimensions without an entry are
/// null; [`MorphAnnotation::extended`] makes the nulls explicit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MorphAnnotation(BTreeMap<String, String>);

impl MorphAnnotation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, dim: impl Into<String>, value: impl Into<String>) {
        self.0.insert(dim.into(), value.into());
    }

    pub fn get(&self, dim: &str) -> &str {
        self.0.get(dim).map_or(NULL, String::as_str)
    }

    pub fn dims(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn remove(&mut self, dim: &str) -> Option<String> {
        self.0.remove(dim)
    }

    /// Total assignment over the schema: absent dimensions become `_`.
    pub fn extended(&self, schema: &FeatureSchema) -> MorphAnnotation {
        let mut out = BTreeMap::new();
        for d in schema.dims() {
            out.insert(d.to_string(), self.get(d).to_string());
        }
        MorphAnnotation(out)
    }

    /// Non-null values, with multi-value labels split apart.
    pub fn value_set(&self) -> BTreeSet<String> {
        self.0
            .values()
            .filter(|v| v.as_str() != NULL)
            .flat_map(|v| v.split(MULTI_VALUE_SEP))
            .map(str::to_string)
            .collect()
    }

    /// Non-null `dimension=value` pairs.
    pub fn pairs(&self) -> BTreeSet<(String, String)> {
        self.0
            .iter()
            .filter(|(_, v)| v.as_str() != NULL)
            .map(|(d, v)| (d.clone(), v.clone()))
            .collect()
    }
}

impl<'a> FromIterator<(&'a str, &'a str)> for MorphAnnotation {
    fn from_iter<I: IntoIterator<Item = (&'a str, &'a str)>>(iter: I) -> Self {
        MorphAnnotation(
            iter.into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        )
    }
}

/// Splits the components of a raw tagset (`;`-joined), skipping empties.
pub fn tag_components(raw: &str) -> impl Iterator<Item = &str> {
    raw.split(';')
        .map(str::trim)
        .filter(|c| !c.is_empty() && *c != NULL)
}

/// Routes each component of `raw` to its dimension.
pub fn decompose_tagset(
    raw: &str,
    dict: &FeatureDictionary,
    strictness: Strictness,
    report: &mut DecomposeReport,
) -> Result<MorphAnnotation> {
    report.tokens += 1;
    let mut per_dim: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for comp in tag_components(raw.trim()) {
        match dict.dimension_of(comp) {
            Some(dim) => {
                per_dim.entry(dim).or_default().insert(comp);
            }
            None => match strictness {
                Strictness::Strict => return Err(Error::Unmapped(comp.to_string())),
                Strictness::Lenient => *report.unmapped.entry(comp.to_string()).or_insert(0) += 1,
            },
        }
    }
    let mut ann = MorphAnnotation::new();
    for (dim, values) in per_dim {
        let joined = values
            .into_iter()
            .collect::<Vec<_>>()
            .join(&MULTI_VALUE_SEP.to_string());
        ann.set(dim, joined);
    }
    Ok(ann)
}

/// Dimensions and label spaces a model predicts over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    dims: Vec<String>,
    labels: BTreeMap<String, Vec<String>>,
}

impl FeatureSchema {
    /// Builds a schema from decomposed training annotations. Dimensions are
    /// ordered POS first, then lexicographically; each label space is `_`
    /// followed by observed values in lexicographic order.
    pub fn build<'a>(annotations: impl IntoIterator<Item = &'a MorphAnnotation>) -> Result<Self> {
        let mut spaces: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut tokens = 0usize;
        for ann in annotations {
            tokens += 1;
            for (d, v) in ann.iter() {
                let space = spaces.entry(d.to_string()).or_default();
                if v != NULL {
                    space.insert(v.to_string());
                }
            }
        }
        if tokens == 0 {
            return Err(Error::Schema(
                "cannot build a schema from an empty corpus".into(),
            ));
        }
        spaces.entry(POS.to_string()).or_default();
        Ok(Self::from_spaces(spaces))
    }

    fn from_spaces(spaces: BTreeMap<String, BTreeSet<String>>) -> Self {
        let mut dims: Vec<String> = spaces.keys().cloned().collect();
        dims.sort_by(|a, b| (a != POS).cmp(&(b != POS)).then(a.cmp(b)));
        let labels = spaces
            .into_iter()
            .map(|(d, vals)| {
                let mut l = vec![NULL.to_string()];
                l.extend(vals.into_iter().filter(|v| v != NULL));
                (d, l)
            })
            .collect();
        Self { dims, labels }
    }

    /// Union of several schemas, dimension by dimension.
    pub fn union<'a>(schemas: impl IntoIterator<Item = &'a FeatureSchema>) -> Result<Self> {
        let mut spaces: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut any = false;
        for s in schemas {
            any = true;
            for (d, l) in &s.labels {
                spaces
                    .entry(d.clone())
                    .or_default()
                    .extend(l.iter().cloned());
            }
        }
        if !any {
            return Err(Error::Schema("union of no schemas".into()));
        }
        spaces.entry(POS.to_string()).or_default();
        Ok(Self::from_spaces(spaces))
    }

    pub fn dims(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(String::as_str)
    }

    pub fn num_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn has_dim(&self, dim: &str) -> bool {
        self.labels.contains_key(dim)
    }

    pub fn labels(&self, dim: &str) -> Option<&[String]> {
        self.labels.get(dim).map(Vec::as_slice)
    }

    pub fn label_index(&self, dim: &str, value: &str) -> Option<usize> {
        self.labels.get(dim)?.iter().position(|v| v == value)
    }

    /// Non-null labels in `other` that this schema cannot represent, as
    /// `Dim=value`.
    pub fn novel_labels(&self, other: &FeatureSchema) -> Vec<String> {
        let mut out = Vec::new();
        for d in other.dims() {
            for v in other.labels(d).unwrap_or_default() {
                if v != NULL && self.label_index(d, v).is_none() {
                    out.push(format!("{d}={v}"));
                }
            }
        }
        out
    }

    /// Joins a total assignment back into a tagset: nulls are omitted and
    /// values follow the schema's dimension order. An all-null assignment
    /// gives `_`.
    pub fn compose(&self, ann: &MorphAnnotation) -> Result<String> {
        for d in ann.dims() {
            if !self.has_dim(d) {
                return Err(Error::Contract(format!(
                    "dimension `{d}` is not in the schema"
                )));
            }
        }
        let mut parts = Vec::new();
        for d in &self.dims {
            let v = ann.get(d);
            if v == NULL {
                continue;
            }
            if self.label_index(d, v).is_none() {
                return Err(Error::Contract(format!(
                    "value `{v}` is not a label of `{d}`"
                )));
            }
            parts.extend(v.split(MULTI_VALUE_SEP));
        }
        Ok(if parts.is_empty() {
            NULL.to_string()
        } else {
            parts.join(";")
        })
    }

    /// Text manifest: one `[Dimension]` header per dimension followed by its
    /// labels, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# mdtag schema v1\n");
        for d in &self.dims {
            let _ = writeln!(out, "[{d}]");
            for v in &self.labels[d] {
                let _ = writeln!(out, "{v}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut dims = Vec::new();
        let mut labels: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(d) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                dims.push(d.to_string());
                labels.insert(d.to_string(), Vec::new());
                current = Some(d.to_string());
            } else if let Some(d) = &current {
                labels.get_mut(d).expect("declared").push(line.to_string());
            } else {
                return Err(Error::Parse {
                    path: "<schema>".into(),
                    line: i + 1,
                    msg: "label before any dimension header".into(),
                });
            }
        }
        for (d, l) in &labels {
            if l.iter().filter(|v| v.as_str() == NULL).count() != 1 {
                return Err(Error::Schema(format!(
                    "dimension `{d}` must contain `_` exactly once"
                )));
            }
        }
        if !labels.contains_key(POS) {
            return Err(Error::Schema("schema has no POS dimension".into()));
        }
        Ok(Self { dims, labels })
    }
}
