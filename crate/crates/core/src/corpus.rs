//! CoNLL-U reading and writing, vocabularies, language clusters and the
//! capped, upsampled mixing of cluster members.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::{index::sample, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::schema::{
    decompose_tagset, DecomposeReport, FeatureDictionary, MorphAnnotation, Strictness,
};

/// Per-language sentence cap applied before mixing a cluster.
pub const CLUSTER_CAP: usize = 5000;

const FEATS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub chars: Vec<char>,
    /// Raw `;`-joined tagset from the FEATS column.
    pub tags: String,
    pub annotation: MorphAnnotation,
    /// POS assigned by a separately trained tagger.
    pub predicted_pos: Option<String>,
}

impl Token {
    pub fn new(form: impl Into<String>, tags: impl Into<String>) -> Result<Self> {
        let form = form.into();
        if form.is_empty() {
            return Err(Error::Contract("token with empty surface form".into()));
        }
        Ok(Self {
            chars: form.chars().collect(),
            form,
            tags: tags.into(),
            annotation: MorphAnnotation::new(),
            predicted_pos: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub lang: String,
    /// Source lines of the block, kept for faithful write-back.
    lines: Vec<String>,
    /// `lines` index of each token's row.
    token_lines: Vec<usize>,
}

impl Sentence {
    pub fn new(lang: impl Into<String>, tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Contract("sentence without tokens".into()));
        }
        let mut lines = Vec::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            lines.push(format!(
                "{}\t{}\t_\t_\t_\t{}\t_\t_\t_\t_",
                i + 1,
                t.form,
                t.tags
            ));
        }
        Ok(Self {
            token_lines: (0..tokens.len()).collect(),
            tokens,
            lang: lang.into(),
            lines,
        })
    }

    /// Convenience constructor from `(form, tags)` pairs.
    pub fn from_pairs(lang: &str, pairs: &[(&str, &str)]) -> Result<Self> {
        let tokens = pairs
            .iter()
            .map(|(f, t)| Token::new(*f, *t))
            .collect::<Result<_>>()?;
        Self::new(lang, tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Renders the block with each token's FEATS column replaced by `feats`.
    pub fn to_conllu_with(&self, feats: &[String]) -> Result<String> {
        if feats.len() != self.tokens.len() {
            return Err(Error::Contract(format!(
                "{} tags for a sentence of {} tokens",
                feats.len(),
                self.tokens.len()
            )));
        }
        let mut out = String::new();
        let mut next = 0;
        for (i, line) in self.lines.iter().enumerate() {
            if next < self.token_lines.len() && self.token_lines[next] == i {
                let mut cols: Vec<&str> = line.split('\t').collect();
                cols[FEATS] = &feats[next];
                out.push_str(&cols.join("\t"));
                next += 1;
            } else {
                out.push_str(line);
            }
            out.push('\n');
        }
        out.push('\n');
        Ok(out)
    }

    pub fn to_conllu(&self) -> String {
        let feats: Vec<String> = self.tokens.iter().map(|t| t.tags.clone()).collect();
        self.to_conllu_with(&feats).expect("aligned")
    }
}

fn parse_block(
    lines: Vec<String>,
    first_line: usize,
    lang: &str,
    path: &Path,
) -> Result<Option<Sentence>> {
    let mut tokens = Vec::new();
    let mut token_lines = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: first_line + i,
                msg: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        // multiword ranges (1-2) and empty nodes (1.1)
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let token = Token::new(cols[1], cols[FEATS]).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: first_line + i,
            msg: "empty FORM".into(),
        })?;
        tokens.push(token);
        token_lines.push(i);
    }
    if tokens.is_empty() {
        return Ok(None);
    }
    Ok(Some(Sentence {
        tokens,
        lang: lang.to_string(),
        lines,
        token_lines,
    }))
}

/// Parses CoNLL-U text. Comment lines and multiword/empty-node rows are
/// skipped; FEATS holds the raw tagset.
pub fn parse_conllu(text: &str, lang: &str, path: &Path) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut block = Vec::new();
    let mut start = 1;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !block.is_empty() {
                out.extend(parse_block(std::mem::take(&mut block), start, lang, path)?);
            }
            start = i + 2;
        } else {
            block.push(line.to_string());
        }
    }
    if !block.is_empty() {
        out.extend(parse_block(block, start, lang, path)?);
    }
    Ok(out)
}

pub fn read_conllu(path: impl AsRef<Path>, lang: &str) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let out = parse_conllu(&text, lang, path)?;
    if out.is_empty() {
        log::warn!("{}: no sentences", path.display());
    }
    Ok(out)
}

pub fn write_conllu(sentences: &[Sentence]) -> String {
    sentences.iter().map(Sentence::to_conllu).collect()
}

/// Fills every token's annotation from its raw tagset.
pub fn decompose_corpus(
    sentences: &mut [Sentence],
    dict: &FeatureDictionary,
    strictness: Strictness,
) -> Result<DecomposeReport> {
    let mut report = DecomposeReport::default();
    for s in sentences.iter_mut() {
        for t in &mut s.tokens {
            t.annotation = decompose_tagset(&t.tags, dict, strictness, &mut report)?;
        }
    }
    if report.total_unmapped() > 0 {
        let listed: Vec<String> = report
            .unmapped
            .iter()
            .map(|(k, v)| format!("{k}({v})"))
            .collect();
        log::warn!("dropped unmapped values: {}", listed.join(", "));
    }
    Ok(report)
}

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

pub fn sentinel(lang: &str) -> String {
    format!("<lang:{lang}>")
}

/// Dense string index with insertion order as index order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Index {
    items: Vec<String>,
    map: BTreeMap<String, usize>,
}

impl Index {
    pub fn from_items(items: impl IntoIterator<Item = String>) -> Self {
        let mut idx = Index::default();
        for it in items {
            idx.push(it);
        }
        idx
    }

    pub fn push(&mut self, item: String) -> usize {
        if let Some(&i) = self.map.get(&item) {
            return i;
        }
        self.map.insert(item.clone(), self.items.len());
        self.items.push(item);
        self.items.len() - 1
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.map.get(item).copied()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Word, character and language index spaces. Words: `<pad>`, `<unk>`, one
/// sentinel per language, then kept words. Characters: `<pad>`, `<unk>`, then
/// every character of the corpus words (sentinels add none).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub words: Index,
    pub chars: Index,
    pub langs: Index,
}

impl Vocabulary {
    pub fn build(sentences: &[Sentence], min_count: usize) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Contract(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut chars: BTreeSet<char> = BTreeSet::new();
        let mut langs: BTreeSet<&str> = BTreeSet::new();
        for s in sentences {
            langs.insert(&s.lang);
            for t in &s.tokens {
                *counts.entry(&t.form).or_insert(0) += 1;
                chars.extend(t.chars.iter().copied());
            }
        }
        let langs: Vec<String> = langs.into_iter().map(str::to_string).collect();
        let mut words = Index::from_items([PAD.to_string(), UNK.to_string()]);
        for l in &langs {
            words.push(sentinel(l));
        }
        for (w, c) in counts {
            if c >= min_count.max(1) {
                words.push(w.to_string());
            }
        }
        let mut char_index = Index::from_items([PAD.to_string(), UNK.to_string()]);
        for c in chars {
            char_index.push(c.to_string());
        }
        Ok(Self {
            words,
            chars: char_index,
            langs: Index::from_items(langs),
        })
    }

    pub fn unk(&self) -> usize {
        1
    }

    /// Word index, `<unk>` for anything unseen.
    pub fn word(&self, form: &str) -> usize {
        self.words.get(form).unwrap_or(1)
    }

    pub fn char(&self, c: char) -> usize {
        let mut buf = [0u8; 4];
        self.chars.get(c.encode_utf8(&mut buf)).unwrap_or(1)
    }

    pub fn lang(&self, lang: &str) -> Result<usize> {
        self.langs
            .get(lang)
            .ok_or_else(|| Error::Contract(format!("language `{lang}` is not in the vocabulary")))
    }

    pub fn sentinel_word(&self, lang: &str) -> Result<usize> {
        self.words
            .get(&sentinel(lang))
            .ok_or_else(|| Error::Contract(format!("no sentinel for language `{lang}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterMember {
    pub lang: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LanguageCluster {
    pub name: String,
    pub members: Vec<ClusterMember>,
}

impl LanguageCluster {
    pub fn langs(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.lang.as_str())
    }

    pub fn member(&self, lang: &str) -> Option<&ClusterMember> {
        self.members.iter().find(|m| m.lang == lang)
    }
}

const DEFAULT_CLUSTERS: &str = include_str!("../data/clusters.conf");

/// Parses cluster stanzas:
///
/// ```text
/// [indoaryan]
/// hi  UD_Hindi-HDTB
/// mr  UD_Marathi-UFAL
/// ```
///
/// Member paths are resolved against `base`.
pub fn parse_clusters(text: &str, base: &Path) -> Result<Vec<LanguageCluster>> {
    let mut out: Vec<LanguageCluster> = Vec::new();
    let cfg_err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from("<clusters>"),
        line,
        msg,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            if out.iter().any(|c| c.name == name) {
                return Err(cfg_err(i + 1, format!("cluster `{name}` defined twice")));
            }
            out.push(LanguageCluster {
                name: name.trim().to_string(),
                members: Vec::new(),
            });
            continue;
        }
        let mut cols = line.split_whitespace();
        let (Some(lang), Some(path), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(cfg_err(
                i + 1,
                format!("expected `language path`, got `{line}`"),
            ));
        };
        let Some(cluster) = out.last_mut() else {
            return Err(cfg_err(
                i + 1,
                "member listed before any [cluster] header".into(),
            ));
        };
        cluster.members.push(ClusterMember {
            lang: lang.to_string(),
            path: base.join(path),
        });
    }
    if let Some(c) = out.iter().find(|c| c.members.is_empty()) {
        return Err(Error::Cluster {
            language: c.name.clone(),
            msg: "cluster has no members".into(),
        });
    }
    Ok(out)
}

pub fn load_clusters(path: impl AsRef<Path>) -> Result<Vec<LanguageCluster>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_clusters(&text, path.parent().unwrap_or(Path::new(".")))
}

/// The shipped cluster table, with treebank directories relative to `base`.
pub fn default_clusters(base: &Path) -> Vec<LanguageCluster> {
    parse_clusters(DEFAULT_CLUSTERS, base).expect("shipped cluster table is valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    fn suffix(self) -> &'static str {
        match self {
            Split::Train => "-train.conllu",
            Split::Dev => "-dev.conllu",
            Split::Test => "-test.conllu",
        }
    }
}

/// Resolves the file of one split for a member. A file path is used as is
/// for the training split; a directory is searched for `*-train.conllu` etc.
pub fn member_file(member: &ClusterMember, split: Split) -> Result<PathBuf> {
    let p = &member.path;
    if p.is_file() {
        return if split == Split::Train {
            Ok(p.clone())
        } else {
            Err(Error::Cluster {
                language: member.lang.clone(),
                msg: format!("{} is a file; no {:?} split", p.display(), split),
            })
        };
    }
    let entries = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|f| {
            f.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(split.suffix()))
        })
        .collect();
    found.sort();
    found.into_iter().next().ok_or_else(|| Error::Cluster {
        language: member.lang.clone(),
        msg: format!("no *{} in {}", split.suffix(), p.display()),
    })
}

/// Mixes member corpora: every language contributes exactly
/// `min(CLUSTER_CAP, largest member)` sentences. Larger members are sampled
/// without replacement; smaller ones are repeated whole and topped up with a
/// sample. The result is shuffled.
pub fn prepare_cluster<R: Rng>(
    members: &[(String, Vec<Sentence>)],
    rng: &mut R,
) -> Result<Vec<Sentence>> {
    prepare_cluster_with_cap(members, CLUSTER_CAP, rng)
}

pub fn prepare_cluster_with_cap<R: Rng>(
    members: &[(String, Vec<Sentence>)],
    cap: usize,
    rng: &mut R,
) -> Result<Vec<Sentence>> {
    if members.is_empty() {
        return Err(Error::Contract("cluster without members".into()));
    }
    if let Some((lang, _)) = members.iter().find(|(_, s)| s.is_empty()) {
        return Err(Error::Cluster {
            language: lang.clone(),
            msg: "empty training corpus".into(),
        });
    }
    let max_n = members.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    let target = cap.min(max_n);
    let mut out = Vec::with_capacity(target * members.len());
    for (lang, sents) in members {
        let n = sents.len();
        let push = |out: &mut Vec<Sentence>, s: &Sentence| {
            let mut s = s.clone();
            s.lang = lang.clone();
            out.push(s);
        };
        if n >= target {
            let mut picked = sample(rng, n, target).into_vec();
            picked.sort_unstable();
            for i in picked {
                push(&mut out, &sents[i]);
            }
        } else {
            for _ in 0..target / n {
                for s in sents {
                    push(&mut out, s);
                }
            }
            let mut rest = sample(rng, n, target % n).into_vec();
            rest.sort_unstable();
            for i in rest {
                push(&mut out, &sents[i]);
            }
        }
    }
    out.shuffle(rng);
    Ok(out)
}

/// Tabular summary of a mixed corpus: sentences per language.
pub fn composition(sentences: &[Sentence]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sentences {
        *counts.entry(&s.lang).or_insert(0) += 1;
    }
    let mut out = String::new();
    for (l, c) in counts {
        let _ = writeln!(out, "{l}\t{c}");
    }
    out
}
