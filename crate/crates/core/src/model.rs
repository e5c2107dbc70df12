//! A complete tagger: vocabulary, schema, encoder, decoder bank and optional
//! polyglot projection over one parameter store.

use rand::Rng;

use crate::corpus::{Sentence, Vocabulary};
use crate::crf::{CrfLayer, FeatureDecoderBank};
use crate::encoder::{EmbeddingSizes, Encoder, EncoderConfig, SequenceInput};
use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::polyglot::{factor, PolyglotProjection, TypologyTable, PROJECTION_WIDTH};
use crate::schema::{FeatureSchema, MorphAnnotation, NULL, POS};

/// Which decoders a tagger owns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoders {
    /// One decoder per schema dimension.
    All,
    /// Every dimension except POS, which comes from a separate tagger.
    ExceptPos,
    /// Only the POS dimension.
    PosOnly,
}

impl Decoders {
    pub fn as_str(self) -> &'static str {
        match self {
            Decoders::All => "all",
            Decoders::ExceptPos => "except-pos",
            Decoders::PosOnly => "pos-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Decoders::All),
            "except-pos" => Ok(Decoders::ExceptPos),
            "pos-only" => Ok(Decoders::PosOnly),
            _ => Err(Error::Config(format!("unknown decoder set `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoders: Decoders,
    /// Language-id tokens at both ends of every sequence.
    pub sentinels: bool,
    pub polyglot: bool,
    /// Keep `h_i` next to the factored vector instead of replacing it.
    pub polyglot_concat: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoders: Decoders::All,
            sentinels: false,
            polyglot: false,
            polyglot_concat: false,
        }
    }
}

impl ModelConfig {
    /// Cluster training defaults: language embeddings plus sentinel tokens.
    pub fn multisource(encoder: EncoderConfig) -> Self {
        Self {
            encoder: EncoderConfig {
                use_lang: true,
                ..encoder
            },
            sentinels: true,
            ..Self::default()
        }
    }

    /// Key/value rendering used in checkpoint manifests.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let e = &self.encoder;
        [
            ("char_emb", e.char_emb.to_string()),
            ("char_hidden", e.char_hidden.to_string()),
            ("word_emb", e.word_emb.to_string()),
            ("word_hidden", e.word_hidden.to_string()),
            ("pos_emb", e.pos_emb.to_string()),
            ("lang_emb", e.lang_emb.to_string()),
            ("dropout", e.dropout.to_string()),
            ("use_pos", e.use_pos.to_string()),
            ("use_lang", e.use_lang.to_string()),
            ("self_attention", e.self_attention.to_string()),
            ("decoders", self.decoders.as_str().to_string()),
            ("sentinels", self.sentinels.to_string()),
            ("polyglot", self.polyglot.to_string()),
            ("polyglot_concat", self.polyglot_concat.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("config lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("config `{k}` is not an integer")))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("config `{k}` is not a boolean")))
        };
        Ok(Self {
            encoder: EncoderConfig {
                char_emb: num("char_emb")?,
                char_hidden: num("char_hidden")?,
                word_emb: num("word_emb")?,
                word_hidden: num("word_hidden")?,
                pos_emb: num("pos_emb")?,
                lang_emb: num("lang_emb")?,
                dropout: get("dropout")?
                    .parse()
                    .map_err(|_| Error::Checkpoint("config `dropout` is not a number".into()))?,
                use_pos: flag("use_pos")?,
                use_lang: flag("use_lang")?,
                self_attention: flag("self_attention")?,
            },
            decoders: Decoders::parse(get("decoders")?)?,
            sentinels: flag("sentinels")?,
            polyglot: flag("polyglot")?,
            polyglot_concat: flag("polyglot_concat")?,
        })
    }
}

/// Output of one analyzed sentence.
#[derive(Clone, Debug, Default)]
pub struct Analysis {
    pub annotations: Vec<MorphAnnotation>,
    /// Character attention per real token, when requested.
    pub attention: Vec<Option<Tensor<f64>>>,
}

#[derive(Clone, Debug)]
pub struct Tagger<T> {
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub vocab: Vocabulary,
    pub typology: Option<TypologyTable>,
    pub params: ParamStore<T>,
    encoder: Encoder,
    bank: FeatureDecoderBank,
    projection: Option<PolyglotProjection>,
}

fn bank_dims(schema: &FeatureSchema, decoders: Decoders) -> Result<Vec<String>> {
    if !schema.has_dim(POS) && decoders != Decoders::ExceptPos {
        return Err(Error::Config("schema has no POS dimension".into()));
    }
    let dims: Vec<String> = match decoders {
        Decoders::All => schema.dims().map(str::to_string).collect(),
        Decoders::ExceptPos => schema
            .dims()
            .filter(|d| *d != POS)
            .map(str::to_string)
            .collect(),
        Decoders::PosOnly => vec![POS.to_string()],
    };
    if dims.is_empty() {
        return Err(Error::Config("no dimensions left to decode".into()));
    }
    Ok(dims)
}

impl<T: Scalar> Tagger<T> {
    pub fn new<R: Rng>(
        config: ModelConfig,
        schema: FeatureSchema,
        vocab: Vocabulary,
        typology: Option<TypologyTable>,
        rng: &mut R,
    ) -> Result<Self> {
        if config.polyglot && typology.is_none() {
            return Err(Error::Config("polyglot mode needs typology vectors".into()));
        }
        let mut params = ParamStore::new();
        let sizes = EmbeddingSizes {
            words: vocab.words.len(),
            chars: vocab.chars.len(),
            pos: schema.labels(POS).map_or(1, <[String]>::len),
            langs: vocab.langs.len(),
        };
        let encoder = Encoder::init(config.encoder.clone(), sizes, &mut params, rng)?;
        let d = config.encoder.output_width();
        let langs: Vec<String> = vocab.langs.items().to_vec();
        let projection = match (&typology, config.polyglot) {
            (Some(t), true) => {
                for l in &langs {
                    if t.get(l).is_none() {
                        return Err(Error::Cluster {
                            language: l.clone(),
                            msg: "no typology vector".into(),
                        });
                    }
                }
                Some(PolyglotProjection::init(
                    &langs,
                    t.width(),
                    PROJECTION_WIDTH,
                    &mut params,
                    rng,
                )?)
            }
            _ => None,
        };
        let input_dim = projection
            .as_ref()
            .map_or(d, |p| p.output_width(d, config.polyglot_concat));
        let mut layers = Vec::new();
        for dim in bank_dims(&schema, config.decoders)? {
            let labels = schema.labels(&dim).expect("schema dim").to_vec();
            layers.push(CrfLayer::init(&dim, labels, input_dim, &mut params, rng)?);
        }
        Ok(Self {
            config,
            schema,
            vocab,
            typology,
            params,
            encoder,
            bank: FeatureDecoderBank::new(layers),
            projection,
        })
    }

    /// Rebuilds a tagger around loaded parameters.
    pub fn from_parts(
        config: ModelConfig,
        schema: FeatureSchema,
        vocab: Vocabulary,
        typology: Option<TypologyTable>,
        params: ParamStore<T>,
    ) -> Result<Self> {
        let encoder = Encoder::attach(config.encoder.clone(), &params)?;
        let d = config.encoder.output_width();
        let langs: Vec<String> = vocab.langs.items().to_vec();
        let projection = match (&typology, config.polyglot) {
            (Some(t), true) => Some(PolyglotProjection::attach(
                &langs,
                t.width(),
                PROJECTION_WIDTH,
                &params,
            )?),
            (None, true) => {
                return Err(Error::Checkpoint(
                    "polyglot checkpoint without typology".into(),
                ))
            }
            _ => None,
        };
        let input_dim = projection
            .as_ref()
            .map_or(d, |p| p.output_width(d, config.polyglot_concat));
        let mut layers = Vec::new();
        for dim in bank_dims(&schema, config.decoders)? {
            let labels = schema.labels(&dim).expect("schema dim").to_vec();
            layers.push(CrfLayer::attach(&dim, labels, input_dim, &params)?);
        }
        Ok(Self {
            config,
            schema,
            vocab,
            typology,
            params,
            encoder,
            bank: FeatureDecoderBank::new(layers),
            projection,
        })
    }

    pub fn bank(&self) -> &FeatureDecoderBank {
        &self.bank
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Converts parameters to another precision.
    pub fn cast<U: Scalar>(&self) -> Tagger<U> {
        Tagger {
            config: self.config.clone(),
            schema: self.schema.clone(),
            vocab: self.vocab.clone(),
            typology: self.typology.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            bank: self.bank.clone(),
            projection: self.projection.clone(),
        }
    }

    /// Index view of a sentence, with sentinels when configured. Returns the
    /// offset of the first real token.
    pub fn sequence_input(&self, s: &Sentence) -> Result<(SequenceInput, usize)> {
        let v = &self.vocab;
        let lang = if self.config.encoder.use_lang || self.config.sentinels {
            Some(v.lang(&s.lang)?)
        } else {
            None
        };
        let mut words = Vec::with_capacity(s.len() + 2);
        let mut chars = Vec::with_capacity(s.len() + 2);
        let mut pos = Vec::with_capacity(s.len() + 2);
        let sentinel = if self.config.sentinels {
            let w = v.sentinel_word(&s.lang)?;
            let c: Vec<usize> = v.words.items()[w].chars().map(|c| v.char(c)).collect();
            Some((w, c))
        } else {
            None
        };
        if let Some((w, c)) = &sentinel {
            words.push(*w);
            chars.push(c.clone());
            pos.push(0);
        }
        for t in &s.tokens {
            words.push(v.word(&t.form));
            chars.push(t.chars.iter().map(|&c| v.char(c)).collect());
            if self.config.encoder.use_pos {
                let p = t.predicted_pos.as_deref().ok_or_else(|| {
                    Error::Contract(format!("token `{}` has no predicted POS", t.form))
                })?;
                pos.push(self.schema.label_index(POS, p).unwrap_or(0));
            }
        }
        if let Some((w, c)) = sentinel {
            words.push(w);
            chars.push(c);
            pos.push(0);
        }
        let input = SequenceInput {
            words,
            chars,
            pos: self.config.encoder.use_pos.then_some(pos),
            lang: if self.config.encoder.use_lang {
                lang
            } else {
                None
            },
        };
        Ok((input, usize::from(self.config.sentinels)))
    }

    /// Gold label indices per decoder.
    pub fn gold_labels(&self, s: &Sentence) -> Result<Vec<Vec<usize>>> {
        self.bank
            .layers()
            .iter()
            .map(|layer| {
                s.tokens
                    .iter()
                    .map(|t| {
                        let v = t.annotation.get(layer.dim());
                        layer.label_index(v).ok_or_else(|| {
                            Error::NovelLabels(vec![format!("{}={}", layer.dim(), v)])
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Decoder input rows for the real tokens of `s`.
    pub fn decoder_input<R: Rng>(
        &self,
        g: &mut Graph<'_, T>,
        s: &Sentence,
        rng: &mut R,
        trace: Option<&mut Vec<Option<Var>>>,
    ) -> Result<Var> {
        let (input, off) = self.sequence_input(s)?;
        let h = self.encoder.encode_sequence(g, &input, rng, trace)?;
        let h = if off > 0 {
            g.slice_rows(h, off, s.len())?
        } else {
            h
        };
        match (&self.projection, &self.typology) {
            (Some(p), Some(table)) => {
                let t = table.get(&s.lang).ok_or_else(|| Error::Cluster {
                    language: s.lang.clone(),
                    msg: "no typology vector".into(),
                })?;
                let tv: Vec<T> = t.values.iter().map(|&x| T::c(x)).collect();
                factor(g, h, &tv, p, &s.lang, self.config.polyglot_concat)
            }
            _ => Ok(h),
        }
    }

    /// Summed negative log-likelihood of the gold annotation.
    pub fn loss<R: Rng>(&self, g: &mut Graph<'_, T>, s: &Sentence, rng: &mut R) -> Result<Var> {
        let gold = self.gold_labels(s)?;
        let h = self.decoder_input(g, s, rng, None)?;
        self.bank.nll_loss(g, h, &gold)
    }

    /// Viterbi analysis of every token over this tagger's decoders.
    pub fn analyze(&self, s: &Sentence, with_attention: bool) -> Result<Analysis> {
        let mut g = Graph::new(&self.params, false);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut trace = Vec::new();
        let h = self.decoder_input(&mut g, s, &mut rng, with_attention.then_some(&mut trace))?;
        let paths = self.bank.decode(&mut g, h)?;
        let mut annotations = vec![MorphAnnotation::new(); s.len()];
        for (layer, path) in self.bank.layers().iter().zip(&paths) {
            for (ann, &y) in annotations.iter_mut().zip(path) {
                let label = &layer.labels()[y];
                if label != NULL {
                    ann.set(layer.dim(), label.clone());
                }
            }
        }
        let attention = if with_attention {
            let off = usize::from(self.config.sentinels);
            trace[off..off + s.len()]
                .iter()
                .map(|a| a.map(|v| g.value(v).cast()))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Analysis {
            annotations,
            attention,
        })
    }

    pub fn predict(&self, s: &Sentence) -> Result<Vec<MorphAnnotation>> {
        Ok(self.analyze(s, false)?.annotations)
    }
}
