//! On-disk checkpoints: a text manifest plus a little-endian parameter blob.
//!
//! A checkpoint is a directory holding `manifest.txt` and `params.bin`. The
//! manifest is a sequence of sections, each introduced by `@@ <name> <lines>`
//! and followed by exactly that many lines. A two-stage model stores its POS
//! tagger in a `pos/` subdirectory. Checkpoints are assembled in a temporary
//! sibling directory and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::{Index, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Tagger};
use crate::numcore::{ParamStore, Scalar, Tensor};
use crate::polyglot::TypologyTable;
use crate::schema::FeatureSchema;

pub const FORMAT: &str = "mdtag-checkpoint v1";
pub const MANIFEST: &str = "manifest.txt";
pub const BLOB: &str = "params.bin";
pub const POS_DIR: &str = "pos";

/// Free-form key/value metadata stored next to the model (best dev score,
/// training settings).
pub type Meta = Vec<(String, String)>;

fn section(out: &mut String, name: &str, lines: &[String]) {
    out.push_str(&format!("@@ {name} {}\n", lines.len()));
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
}

fn kv_lines(pairs: &[(String, String)]) -> Vec<String> {
    pairs.iter().map(|(k, v)| format!("{k}\t{v}")).collect()
}

fn render<T: Scalar>(tagger: &Tagger<T>, meta: &Meta) -> (String, Vec<u8>) {
    let mut m = format!("# {FORMAT}\n");
    section(
        &mut m,
        "format",
        &[FORMAT.to_string(), format!("dtype\t{}", T::DTYPE)],
    );
    section(&mut m, "meta", &kv_lines(meta));
    section(&mut m, "config", &kv_lines(&tagger.config.to_pairs()));
    let schema: Vec<String> = tagger
        .schema
        .to_text()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    section(&mut m, "schema", &schema);
    section(&mut m, "words", tagger.vocab.words.items());
    section(&mut m, "chars", tagger.vocab.chars.items());
    section(&mut m, "langs", tagger.vocab.langs.items());
    let typ: Vec<String> = tagger
        .typology
        .as_ref()
        .map(|t| t.to_tsv().lines().map(str::to_string).collect())
        .unwrap_or_default();
    section(&mut m, "typology", &typ);
    let mut blob = Vec::with_capacity(tagger.params.num_values() * T::BYTES);
    let mut shapes = Vec::new();
    for (name, t) in tagger.params.iter() {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        shapes.push(format!("{name}\t{}", dims.join(",")));
        for &x in t.data() {
            x.write_le(&mut blob);
        }
    }
    section(&mut m, "params", &shapes);
    (m, blob)
}

fn write_into<T: Scalar>(dir: &Path, tagger: &Tagger<T>, meta: &Meta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (manifest, blob) = render(tagger, meta);
    let mp = dir.join(MANIFEST);
    fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
    let bp = dir.join(BLOB);
    fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))?;
    Ok(())
}

fn temp_sibling(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("checkpoint");
    dir.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes a checkpoint atomically, replacing any existing one at `dir`.
pub fn save<T: Scalar>(
    dir: &Path,
    tagger: &Tagger<T>,
    meta: &Meta,
    pos: Option<(&Tagger<T>, &Meta)>,
) -> Result<()> {
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = temp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    let result = (|| {
        write_into(&tmp, tagger, meta)?;
        if let Some((p, pm)) = pos {
            write_into(&tmp.join(POS_DIR), p, pm)?;
        }
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

struct Sections<'a> {
    items: Vec<(&'a str, Vec<&'a str>)>,
}

impl<'a> Sections<'a> {
    fn parse(text: &'a str) -> Result<Self> {
        let mut lines = text.lines();
        let mut items = Vec::new();
        while let Some(line) = lines.next() {
            if line.starts_with('#') && items.is_empty() {
                continue;
            }
            let head = line.strip_prefix("@@ ").ok_or_else(|| {
                Error::Checkpoint(format!("expected a section header, got `{line}`"))
            })?;
            let (name, count) = head
                .rsplit_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("bad section header `{line}`")))?;
            let count: usize = count
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad section length in `{line}`")))?;
            let body: Vec<&str> = lines.by_ref().take(count).collect();
            if body.len() != count {
                return Err(Error::Checkpoint(format!("section `{name}` is truncated")));
            }
            items.push((name, body));
        }
        Ok(Self { items })
    }

    fn get(&self, name: &str) -> Result<&[&'a str]> {
        self.items
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("manifest lacks section `{name}`")))
    }

    fn pairs(&self, name: &str) -> Result<Vec<(String, String)>> {
        self.get(name)?
            .iter()
            .map(|l| {
                let (k, v) = l.split_once('\t').unwrap_or((l, ""));
                Ok((k.to_string(), v.to_string()))
            })
            .collect()
    }
}

/// Manifest fields that can be read without touching the blob.
#[derive(Clone, Debug)]
pub struct ManifestInfo {
    pub dtype: String,
    pub meta: Meta,
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub param_shapes: Vec<(String, Vec<usize>)>,
}

fn read_manifest(dir: &Path) -> Result<(String, ManifestInfo)> {
    let mp = dir.join(MANIFEST);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let info = {
        let s = Sections::parse(&text)?;
        let format = s.get("format")?;
        if format.first() != Some(&FORMAT) {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}`",
                format.first().copied().unwrap_or("")
            )));
        }
        let dtype = format
            .get(1)
            .and_then(|l| l.strip_prefix("dtype\t"))
            .ok_or_else(|| Error::Checkpoint("manifest lacks dtype".into()))?
            .to_string();
        let schema = FeatureSchema::from_text(&s.get("schema")?.join("\n"))?;
        let param_shapes = s
            .get("params")?
            .iter()
            .map(|l| {
                let (name, dims) = l
                    .split_once('\t')
                    .ok_or_else(|| Error::Checkpoint(format!("bad parameter line `{l}`")))?;
                let shape = dims
                    .split(',')
                    .map(|d| {
                        d.parse::<usize>()
                            .map_err(|_| Error::Checkpoint(format!("bad shape `{dims}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((name.to_string(), shape))
            })
            .collect::<Result<Vec<_>>>()?;
        ManifestInfo {
            dtype,
            meta: s.pairs("meta")?,
            config: ModelConfig::from_pairs(&s.pairs("config")?)?,
            schema,
            param_shapes,
        }
    };
    Ok((text, info))
}

pub fn inspect(dir: &Path) -> Result<ManifestInfo> {
    Ok(read_manifest(dir)?.1)
}

/// Loads the tagger stored at `dir` (ignoring any `pos/` subdirectory).
pub fn load<T: Scalar>(dir: &Path) -> Result<(Tagger<T>, Meta)> {
    let (text, info) = read_manifest(dir)?;
    if info.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} values, requested {}",
            info.dtype,
            T::DTYPE
        )));
    }
    let s = Sections::parse(&text)?;
    let owned = |name: &str| -> Result<Vec<String>> {
        Ok(s.get(name)?.iter().map(|l| l.to_string()).collect())
    };
    let vocab = Vocabulary {
        words: Index::from_items(owned("words")?),
        chars: Index::from_items(owned("chars")?),
        langs: Index::from_items(owned("langs")?),
    };
    let typ = s.get("typology")?;
    let typology = if typ.is_empty() {
        None
    } else {
        Some(TypologyTable::from_tsv(&typ.join("\n"))?)
    };
    let bp = dir.join(BLOB);
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    let expected: usize = info
        .param_shapes
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    if blob.len() != expected * T::BYTES {
        return Err(Error::Checkpoint(format!(
            "blob holds {} bytes, manifest declares {} values",
            blob.len(),
            expected
        )));
    }
    let mut params = ParamStore::new();
    let mut off = 0;
    for (name, shape) in &info.param_shapes {
        let n: usize = shape.iter().product();
        let data = blob[off * T::BYTES..(off + n) * T::BYTES]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        off += n;
        params.insert(name.clone(), Tensor::new(shape, data)?)?;
    }
    let tagger = Tagger::from_parts(info.config, info.schema, vocab, typology, params)?;
    Ok((tagger, info.meta))
}

/// Loads the POS tagger of a two-stage checkpoint, if there is one.
pub fn load_pos<T: Scalar>(dir: &Path) -> Result<Option<(Tagger<T>, Meta)>> {
    let p = dir.join(POS_DIR);
    if p.join(MANIFEST).exists() {
        load(&p).map(Some)
    } else {
        Ok(None)
    }
}

pub fn meta_get<'a>(meta: &'a Meta, key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{decompose_corpus, Sentence};
    use crate::encoder::EncoderConfig;
    use crate::schema::{FeatureDictionary, Strictness};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tagger() -> (Tagger<f32>, Vec<Sentence>) {
        let mut c =
            vec![Sentence::from_pairs("xx", &[("la", "DET;FEM"), ("casa", "N;FEM;SG")]).unwrap()];
        decompose_corpus(&mut c, &FeatureDictionary::builtin(), Strictness::Strict).unwrap();
        let schema =
            FeatureSchema::build(c.iter().flat_map(|s| &s.tokens).map(|t| &t.annotation)).unwrap();
        let vocab = Vocabulary::build(&c, 1).unwrap();
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                char_emb: 3,
                char_hidden: 2,
                word_emb: 3,
                word_hidden: 2,
                dropout: 0.0,
                ..EncoderConfig::default()
            },
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (Tagger::new(cfg, schema, vocab, None, &mut rng).unwrap(), c)
    }

    #[test]
    fn round_trip_preserves_predictions() {
        let (t, c) = tagger();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        let meta = vec![("best_dev".to_string(), "0.5".to_string())];
        save(&path, &t, &meta, None).unwrap();
        let (back, m) = load::<f32>(&path).unwrap();
        assert_eq!(m, meta);
        assert_eq!(back.params.num_values(), t.params.num_values());
        for ((na, a), (nb, b)) in t.params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(a, b);
        }
        assert_eq!(back.predict(&c[0]).unwrap(), t.predict(&c[0]).unwrap());
        assert!(load::<f64>(&path).is_err());
        assert!(load_pos::<f32>(&path).unwrap().is_none());
    }

    #[test]
    fn save_is_byte_stable_and_replaces() {
        let (t, _) = tagger();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        save(&a, &t, &vec![], None).unwrap();
        let first = fs::read(a.join(BLOB)).unwrap();
        save(&a, &t, &vec![], Some((&t, &vec![]))).unwrap();
        assert_eq!(fs::read(a.join(BLOB)).unwrap(), first);
        assert!(load_pos::<f32>(&a).unwrap().is_some());
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn truncated_blob_rejected() {
        let (t, _) = tagger();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        save(&a, &t, &vec![], None).unwrap();
        let blob = fs::read(a.join(BLOB)).unwrap();
        fs::write(a.join(BLOB), &blob[..blob.len() - 4]).unwrap();
        assert!(matches!(load::<f32>(&a), Err(Error::Checkpoint(_))));
    }
}
