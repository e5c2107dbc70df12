//! Shared hierarchical encoder.
//!
//! Characters of a token pass through a BiLSTM, a single-head scaled
//! dot-product self-attention layer and a second (modeling) BiLSTM whose
//! final states form the token vector `c_i`. Each token's word embedding,
//! `c_i` and optional POS and language embeddings are concatenated and run
//! through a word-level BiLSTM to give `h_i`.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{
    init_embedding, init_weight, Graph, ParamId, ParamStore, Scalar, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub char_emb: usize,
    pub char_hidden: usize,
    pub word_emb: usize,
    pub word_hidden: usize,
    pub pos_emb: usize,
    pub lang_emb: usize,
    pub dropout: f64,
    pub use_pos: bool,
    pub use_lang: bool,
    pub self_attention: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            char_emb: 50,
            char_hidden: 25,
            word_emb: 100,
            word_hidden: 200,
            pos_emb: 64,
            lang_emb: 100,
            dropout: 0.5,
            use_pos: false,
            use_lang: false,
            self_attention: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.char_emb,
            self.char_hidden,
            self.word_emb,
            self.word_hidden,
            self.pos_emb,
            self.lang_emb,
        ];
        if extents.contains(&0) {
            return Err(Error::Config("encoder extents must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn token_width(&self) -> usize {
        2 * self.char_hidden
    }

    /// Width of the word-level BiLSTM input.
    pub fn input_width(&self) -> usize {
        self.word_emb
            + self.token_width()
            + if self.use_pos { self.pos_emb } else { 0 }
            + if self.use_lang { self.lang_emb } else { 0 }
    }

    /// Width of `h_i`.
    pub fn output_width(&self) -> usize {
        2 * self.word_hidden
    }
}

/// One LSTM direction. Gates are laid out `[i | f | g | o]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn init<T: Scalar, R: Rng>(
        name: &str,
        input: usize,
        hidden: usize,
        params: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let wx = params.insert(
            format!("{name}.wx"),
            init_weight(&[input, 4 * hidden], input, rng),
        )?;
        let wh = params.insert(
            format!("{name}.wh"),
            init_weight(&[hidden, 4 * hidden], hidden, rng),
        )?;
        let b = params.insert(format!("{name}.b"), Tensor::zeros(&[4 * hidden]))?;
        Ok(Self {
            wx,
            wh,
            b,
            input,
            hidden,
        })
    }

    pub fn attach<T: Scalar>(
        name: &str,
        input: usize,
        hidden: usize,
        params: &ParamStore<T>,
    ) -> Result<Self> {
        Ok(Self {
            wx: expect_param(params, &format!("{name}.wx"), &[input, 4 * hidden])?,
            wh: expect_param(params, &format!("{name}.wh"), &[hidden, 4 * hidden])?,
            b: expect_param(params, &format!("{name}.b"), &[4 * hidden])?,
            input,
            hidden,
        })
    }

    /// Runs over the rows of `x` in the given order, returning the hidden
    /// state after each visited row.
    fn run<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        order: impl Iterator<Item = usize>,
    ) -> Result<Vec<Var>> {
        let hsz = self.hidden;
        let wx = g.param(self.wx);
        let wh = g.param(self.wh);
        let b = g.param(self.b);
        let xw = g.matmul(x, wx)?;
        let xw = g.add_row_broadcast(xw, b)?;
        let mut state: Option<(Var, Var)> = None;
        let mut out = Vec::new();
        for t in order {
            let mut z = g.row(xw, t)?;
            if let Some((h, _)) = state {
                let r = g.matmul(h, wh)?;
                z = g.add(z, r)?;
            }
            let i = g.slice(z, 0, hsz)?;
            let i = g.sigmoid(i);
            let f = g.slice(z, hsz, hsz)?;
            let f = g.sigmoid(f);
            let gg = g.slice(z, 2 * hsz, hsz)?;
            let gg = g.tanh(gg);
            let o = g.slice(z, 3 * hsz, hsz)?;
            let o = g.sigmoid(o);
            let mut c = g.mul(i, gg)?;
            if let Some((_, c_prev)) = state {
                let keep = g.mul(f, c_prev)?;
                c = g.add(c, keep)?;
            }
            let tc = g.tanh(c);
            let h = g.mul(o, tc)?;
            state = Some((h, c));
            out.push(h);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn init<T: Scalar, R: Rng>(
        name: &str,
        input: usize,
        hidden: usize,
        params: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            fwd: Lstm::init(&format!("{name}.fwd"), input, hidden, params, rng)?,
            bwd: Lstm::init(&format!("{name}.bwd"), input, hidden, params, rng)?,
        })
    }

    pub fn attach<T: Scalar>(
        name: &str,
        input: usize,
        hidden: usize,
        params: &ParamStore<T>,
    ) -> Result<Self> {
        Ok(Self {
            fwd: Lstm::attach(&format!("{name}.fwd"), input, hidden, params)?,
            bwd: Lstm::attach(&format!("{name}.bwd"), input, hidden, params)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }
}

/// Bidirectional LSTM over the rows of `x` (`[n, input]`). Returns the
/// per-position outputs `[n, 2H]` (forward then backward state) and the
/// final states: forward at the last position, backward at the first.
pub fn bilstm<T: Scalar>(g: &mut Graph<'_, T>, lstm: &BiLstm, x: Var) -> Result<(Var, Var)> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 || shape[1] != lstm.fwd.input {
        return Err(Error::shape("bilstm", &shape, &[0, lstm.fwd.input]));
    }
    let n = shape[0];
    let fwd = lstm.fwd.run(g, x, 0..n)?;
    let mut bwd = lstm.bwd.run(g, x, (0..n).rev())?;
    bwd.reverse();
    let final_state = g.concat(&[fwd[n - 1], bwd[0]])?;
    let f = g.stack_rows(&fwd)?;
    let b = g.stack_rows(&bwd)?;
    let out = g.concat_cols(&[f, b])?;
    Ok((out, final_state))
}

/// Scaled dot-product self-attention with queries, keys and values all equal
/// to the rows of `x`. Returns the mixed rows and the attention matrix.
pub fn self_attention<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Var)> {
    let d = g.shape(x)[1];
    let xt = g.transpose(x)?;
    let s = g.matmul(x, xt)?;
    let s = g.scale(s, T::c(1.0 / (d as f64).sqrt()));
    let a = g.softmax(s);
    let out = g.matmul(a, x)?;
    Ok((out, a))
}

/// Index-level view of one sequence to encode.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SequenceInput {
    pub words: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
    pub pos: Option<Vec<usize>>,
    pub lang: Option<usize>,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub word_emb: ParamId,
    pub char_emb: ParamId,
    pub pos_emb: Option<ParamId>,
    pub lang_emb: Option<ParamId>,
    pub char_lstm: BiLstm,
    pub char_model: BiLstm,
    pub word_lstm: BiLstm,
}

/// Table sizes the encoder embeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingSizes {
    pub words: usize,
    pub chars: usize,
    pub pos: usize,
    pub langs: usize,
}

fn expect_param<T: Scalar>(params: &ParamStore<T>, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = params
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
    if params.get(id).shape() != shape {
        return Err(Error::Checkpoint(format!(
            "parameter `{name}` has shape {:?}, expected {:?}",
            params.get(id).shape(),
            shape
        )));
    }
    Ok(id)
}

fn embedding_rows<T: Scalar>(
    params: &ParamStore<T>,
    name: &str,
    dim: usize,
) -> Result<(ParamId, usize)> {
    let id = params
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
    let t = params.get(id);
    if t.rank() != 2 || t.cols() != dim {
        return Err(Error::Checkpoint(format!(
            "embedding `{name}` has shape {:?}",
            t.shape()
        )));
    }
    Ok((id, t.rows()))
}

impl Encoder {
    pub fn init<T: Scalar, R: Rng>(
        config: EncoderConfig,
        sizes: EmbeddingSizes,
        params: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let word_emb =
            params.insert("enc.word_emb", init_embedding(sizes.words, c.word_emb, rng))?;
        let char_emb =
            params.insert("enc.char_emb", init_embedding(sizes.chars, c.char_emb, rng))?;
        let pos_emb = if c.use_pos {
            Some(params.insert(
                "enc.pos_emb",
                init_embedding(sizes.pos.max(1), c.pos_emb, rng),
            )?)
        } else {
            None
        };
        let lang_emb = if c.use_lang {
            Some(params.insert(
                "enc.lang_emb",
                init_embedding(sizes.langs.max(1), c.lang_emb, rng),
            )?)
        } else {
            None
        };
        let char_lstm = BiLstm::init("enc.char_lstm", c.char_emb, c.char_hidden, params, rng)?;
        let char_model = BiLstm::init(
            "enc.char_model",
            2 * c.char_hidden,
            c.char_hidden,
            params,
            rng,
        )?;
        let word_lstm = BiLstm::init("enc.word_lstm", c.input_width(), c.word_hidden, params, rng)?;
        Ok(Self {
            config,
            word_emb,
            char_emb,
            pos_emb,
            lang_emb,
            char_lstm,
            char_model,
            word_lstm,
        })
    }

    /// Binds to parameters created by [`Encoder::init`] (e.g. after loading).
    pub fn attach<T: Scalar>(config: EncoderConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (word_emb, _) = embedding_rows(params, "enc.word_emb", c.word_emb)?;
        let (char_emb, _) = embedding_rows(params, "enc.char_emb", c.char_emb)?;
        let pos_emb = if c.use_pos {
            Some(embedding_rows(params, "enc.pos_emb", c.pos_emb)?.0)
        } else {
            None
        };
        let lang_emb = if c.use_lang {
            Some(embedding_rows(params, "enc.lang_emb", c.lang_emb)?.0)
        } else {
            None
        };
        Ok(Self {
            char_lstm: BiLstm::attach("enc.char_lstm", c.char_emb, c.char_hidden, params)?,
            char_model: BiLstm::attach("enc.char_model", 2 * c.char_hidden, c.char_hidden, params)?,
            word_lstm: BiLstm::attach("enc.word_lstm", c.input_width(), c.word_hidden, params)?,
            config,
            word_emb,
            char_emb,
            pos_emb,
            lang_emb,
        })
    }

    /// Character-level token vector `c_i` and, when self-attention is on, the
    /// `[chars, chars]` attention matrix.
    pub fn encode_token<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        chars: &[usize],
    ) -> Result<(Var, Option<Var>)> {
        if chars.is_empty() {
            return Err(Error::Contract(
                "cannot encode a token without characters".into(),
            ));
        }
        let rows = chars
            .iter()
            .map(|&c| g.lookup(self.char_emb, c))
            .collect::<Result<Vec<_>>>()?;
        let x = g.stack_rows(&rows)?;
        let (states, _) = bilstm(g, &self.char_lstm, x)?;
        let (mixed, att) = if self.config.self_attention {
            let (m, a) = self_attention(g, states)?;
            (m, Some(a))
        } else {
            (states, None)
        };
        let (_, c) = bilstm(g, &self.char_model, mixed)?;
        Ok((c, att))
    }

    /// Contextual states `h_1..h_n` as an `[n, 2 * word_hidden]` matrix.
    /// Attention matrices are appended to `trace` when given.
    pub fn encode_sequence<T: Scalar, R: Rng>(
        &self,
        g: &mut Graph<'_, T>,
        input: &SequenceInput,
        rng: &mut R,
        mut trace: Option<&mut Vec<Option<Var>>>,
    ) -> Result<Var> {
        let n = input.len();
        if n == 0 || input.chars.len() != n {
            return Err(Error::Contract(format!(
                "sequence of {n} words with {} character lists",
                input.chars.len()
            )));
        }
        let pos = match (self.pos_emb, &input.pos) {
            (Some(_), None) => {
                return Err(Error::Contract(
                    "POS embeddings enabled but no POS supplied".into(),
                ))
            }
            (Some(_), Some(p)) if p.len() != n => {
                return Err(Error::Contract(format!(
                    "{} POS labels for {n} words",
                    p.len()
                )))
            }
            (_, p) => p.as_ref(),
        };
        let lang = match (self.lang_emb, input.lang) {
            (Some(_), None) => {
                return Err(Error::Contract(
                    "language embeddings enabled but no language".into(),
                ))
            }
            (Some(table), Some(l)) => Some(g.lookup(table, l)?),
            _ => None,
        };
        let mut rows = Vec::with_capacity(n);
        for t in 0..n {
            let mut parts = vec![g.lookup(self.word_emb, input.words[t])?];
            let (c, att) = self.encode_token(g, &input.chars[t])?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(att);
            }
            parts.push(c);
            if let (Some(table), Some(p)) = (self.pos_emb, pos) {
                parts.push(g.lookup(table, p[t])?);
            }
            if let Some(l) = lang {
                parts.push(l);
            }
            rows.push(g.concat(&parts)?);
        }
        let x = g.stack_rows(&rows)?;
        let x = g.dropout(x, self.config.dropout, rng);
        let (h, _) = bilstm(g, &self.word_lstm, x)?;
        Ok(g.dropout(h, self.config.dropout, rng))
    }
}

/// Tab-separated attention matrix with character labels on both axes.
pub fn attention_table<T: Scalar>(token: &str, weights: &Tensor<T>) -> String {
    let chars: Vec<String> = token.chars().map(|c| c.to_string()).collect();
    let mut out = format!("# token\t{token}\n");
    out.push_str("query\\key");
    for c in &chars {
        let _ = write!(out, "\t{c}");
    }
    out.push('\n');
    for (i, q) in chars.iter().enumerate().take(weights.rows()) {
        out.push_str(q);
        for w in weights.row(i) {
            let _ = write!(out, "\t{:.6}", w.f64());
        }
        out.push('\n');
    }
    out
}

/// Shannon entropy (nats) of each attention row.
pub fn row_entropies<T: Scalar>(weights: &Tensor<T>) -> Vec<f64> {
    (0..weights.rows())
        .map(|i| {
            weights
                .row(i)
                .iter()
                .map(|w| w.f64())
                .filter(|&p| p > 0.0)
                .map(|p| -p * p.ln())
                .sum()
        })
        .collect()
}
