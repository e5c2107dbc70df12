//! Training loops: per-sentence SGD with dev-based early stopping, the
//! two-stage POS-conditioned pipeline, multi-source cluster training and
//! per-language fine-tuning.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{prepare_cluster_with_cap, Sentence, Vocabulary, CLUSTER_CAP};
use crate::error::{Error, Result};
use crate::evaluate::{exact_match_accuracy, f1_scores};
use crate::model::{Analysis, Decoders, ModelConfig, Tagger};
use crate::numcore::{sgd_step, GradStore, Graph, Scalar};
use crate::polyglot::TypologyTable;
use crate::schema::{FeatureSchema, MorphAnnotation, NULL, POS};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Rescale the gradient to at most this global norm.
    pub clip: Option<f64>,
    pub cluster_cap: usize,
    /// Words seen fewer times map to `<unk>`.
    pub min_count: usize,
    /// Analyzer inputs use tagger-predicted POS (otherwise gold POS).
    pub predicted_pos_for_training: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.015,
            max_epochs: 200,
            patience: 10,
            seed: 13,
            clip: None,
            cluster_cap: CLUSTER_CAP,
            min_count: 1,
            predicted_pos_for_training: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.min_count == 0 {
            return Err(Error::Config("min count must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("lr".into(), self.lr.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("seed".into(), self.seed.to_string()),
            (
                "clip".into(),
                self.clip.map_or("none".into(), |c| c.to_string()),
            ),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean sentence loss; `None` for the evaluation of the initial model.
    pub train_loss: Option<f64>,
    pub dev_accuracy: f64,
    pub dev_f1: f64,
    /// Best dev accuracy so far.
    pub best_dev: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev: f64,
}

impl TrainOutcome {
    pub const HEADER: &'static str = "epoch\ttrain_loss\tdev_acc\tdev_f1\tbest_dev_error";

    pub fn line(r: &EpochRecord) -> String {
        let loss = r.train_loss.map_or("-".to_string(), |l| format!("{l:.6}"));
        format!(
            "{}\t{loss}\t{:.6}\t{:.6}\t{:.6}",
            r.epoch,
            r.dev_accuracy,
            r.dev_f1,
            1.0 - r.best_dev
        )
    }

    /// One line per epoch. The last column, one minus the best dev accuracy
    /// so far, never increases.
    pub fn log_text(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.epochs {
            let _ = writeln!(out, "{}", Self::line(r));
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|r| r.train_loss).collect()
    }
}

fn joined(ann: &MorphAnnotation) -> String {
    ann.value_set().into_iter().collect::<Vec<_>>().join(";")
}

/// Predicted and gold annotations rendered as tag strings for scoring. The
/// tagger's own decoders are completed with `predicted_pos` when POS is
/// delegated; a POS-only tagger is scored on POS alone.
pub fn predictions_for_scoring<T: Scalar>(
    tagger: &Tagger<T>,
    sentences: &[Sentence],
) -> Result<(Vec<Vec<String>>, Vec<Vec<String>>)> {
    let mut gold = Vec::with_capacity(sentences.len());
    let mut pred = Vec::with_capacity(sentences.len());
    for s in sentences {
        let anns = tagger.predict(s)?;
        let mut g = Vec::with_capacity(s.len());
        let mut p = Vec::with_capacity(s.len());
        for (t, mut a) in s.tokens.iter().zip(anns) {
            match tagger.config.decoders {
                Decoders::PosOnly => {
                    let mut only = MorphAnnotation::new();
                    only.set(POS, t.annotation.get(POS));
                    g.push(joined(&only));
                }
                Decoders::ExceptPos => {
                    if let Some(pos) = &t.predicted_pos {
                        a.set(POS, pos.clone());
                    }
                    g.push(joined(&t.annotation));
                }
                Decoders::All => g.push(joined(&t.annotation)),
            }
            p.push(joined(&a));
        }
        gold.push(g);
        pred.push(p);
    }
    Ok((gold, pred))
}

/// `(exact-match accuracy, micro F1)` of a tagger on annotated sentences.
pub fn dev_scores<T: Scalar>(tagger: &Tagger<T>, dev: &[Sentence]) -> Result<(f64, f64)> {
    if dev.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (gold, pred) = predictions_for_scoring(tagger, dev)?;
    Ok((
        exact_match_accuracy(&gold, &pred)?,
        f1_scores(&gold, &pred)?.0,
    ))
}

/// Per-sentence SGD from the tagger's current parameters. Each epoch visits
/// the training set in a fresh seeded order; after every epoch the dev set
/// is scored and the best parameters (the initial ones included) are kept.
/// Training stops after `patience` epochs without improvement. `on_epoch` is
/// called with every record as it is produced.
pub fn fit<T: Scalar>(
    tagger: &mut Tagger<T>,
    train: &[Sentence],
    dev: &[Sentence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grads = GradStore::for_params(&tagger.params);
    let (acc, f1) = dev_scores(tagger, dev)?;
    let first = EpochRecord {
        epoch: 0,
        train_loss: None,
        dev_accuracy: acc,
        dev_f1: f1,
        best_dev: acc,
    };
    on_epoch(&first);
    let mut outcome = TrainOutcome {
        epochs: vec![first],
        best_epoch: 0,
        best_dev: acc,
    };
    let mut best_params = tagger.params.clone();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let mut g = Graph::new(&tagger.params, true);
            let loss = tagger.loss(&mut g, &train[i], &mut rng)?;
            total += g.value(loss).data()[0].f64();
            g.backward(loss, &mut grads)?;
            drop(g);
            sgd_step(&mut tagger.params, &mut grads, cfg.lr, cfg.clip)?;
        }
        let (acc, f1) = dev_scores(tagger, dev)?;
        if acc > outcome.best_dev {
            outcome.best_dev = acc;
            outcome.best_epoch = epoch;
            best_params = tagger.params.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: Some(total / train.len() as f64),
            dev_accuracy: acc,
            dev_f1: f1,
            best_dev: outcome.best_dev,
        };
        on_epoch(&rec);
        outcome.epochs.push(rec);
        if stale >= cfg.patience {
            break;
        }
    }
    tagger.params = best_params;
    Ok(outcome)
}

/// Schema of the decomposed annotations of `sentences`.
pub fn schema_of(sentences: &[Sentence]) -> Result<FeatureSchema> {
    FeatureSchema::build(
        sentences
            .iter()
            .flat_map(|s| &s.tokens)
            .map(|t| &t.annotation),
    )
}

/// Trains the POS-only tagger of the two-stage pipeline.
pub fn train_pos_tagger(
    train: &[Sentence],
    dev: &[Sentence],
    schema: &FeatureSchema,
    vocab: &Vocabulary,
    model: &ModelConfig,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Tagger<f32>, TrainOutcome)> {
    let labels = schema
        .labels(POS)
        .ok_or_else(|| Error::Config("schema has no POS dimension".into()))?;
    if labels.len() < 2 {
        return Err(Error::Config("training data carries no POS values".into()));
    }
    let mut config = model.clone();
    config.decoders = Decoders::PosOnly;
    config.encoder.use_pos = false;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tagger = Tagger::new(config, schema.clone(), vocab.clone(), None, &mut rng)?;
    let out = fit(&mut tagger, train, dev, cfg, on_epoch)?;
    Ok((tagger, out))
}

/// Fills `predicted_pos` on every token from a POS tagger.
pub fn assign_predicted_pos<T: Scalar>(
    tagger: &Tagger<T>,
    sentences: &mut [Sentence],
) -> Result<()> {
    for s in sentences.iter_mut() {
        let anns = tagger.predict(s)?;
        for (t, a) in s.tokens.iter_mut().zip(anns) {
            t.predicted_pos = Some(a.get(POS).to_string());
        }
    }
    Ok(())
}

/// Copies gold POS into `predicted_pos`.
pub fn assign_gold_pos(sentences: &mut [Sentence]) {
    for t in sentences.iter_mut().flat_map(|s| &mut s.tokens) {
        t.predicted_pos = Some(t.annotation.get(POS).to_string());
    }
}

/// Trains the analyzer. With `use_pos` set in the encoder configuration the
/// POS decoder is left to a separate tagger and tokens must carry
/// `predicted_pos`.
pub fn train_analyzer(
    train: &[Sentence],
    dev: &[Sentence],
    schema: &FeatureSchema,
    vocab: &Vocabulary,
    model: &ModelConfig,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Tagger<f32>, TrainOutcome)> {
    let mut config = model.clone();
    config.decoders = if config.encoder.use_pos {
        Decoders::ExceptPos
    } else {
        Decoders::All
    };
    if config.encoder.use_pos
        && train
            .iter()
            .chain(dev)
            .flat_map(|s| &s.tokens)
            .any(|t| t.predicted_pos.is_none())
    {
        return Err(Error::Config(
            "POS-conditioned analyzer needs POS predictions for every token".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut tagger = Tagger::new(config, schema.clone(), vocab.clone(), None, &mut rng)?;
    let out = fit(&mut tagger, train, dev, cfg, on_epoch)?;
    Ok((tagger, out))
}

/// POS tagger plus POS-conditioned analyzer.
#[derive(Clone, Debug)]
pub struct Pipeline<T> {
    pub pos: Option<Tagger<T>>,
    pub analyzer: Tagger<T>,
}

impl<T: Scalar> Pipeline<T> {
    /// Full per-token analysis. Gold POS is never read: with a POS tagger
    /// present its predictions feed the analyzer and fill the POS dimension.
    pub fn analyze(&self, s: &Sentence, with_attention: bool) -> Result<Analysis> {
        let Some(pos) = &self.pos else {
            return self.analyzer.analyze(s, with_attention);
        };
        let mut s = s.clone();
        assign_predicted_pos(pos, std::slice::from_mut(&mut s))?;
        let mut out = self.analyzer.analyze(&s, with_attention)?;
        for (a, t) in out.annotations.iter_mut().zip(&s.tokens) {
            let p = t.predicted_pos.as_deref().unwrap_or(NULL);
            if p != NULL {
                a.set(POS, p);
            }
        }
        Ok(out)
    }

    pub fn predict(&self, s: &Sentence) -> Result<Vec<MorphAnnotation>> {
        Ok(self.analyze(s, false)?.annotations)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.analyzer.schema
    }
}

/// Trains the two-stage model: a POS tagger, then an analyzer fed with its
/// predictions (or gold POS when configured).
pub fn train_pipeline(
    mut train: Vec<Sentence>,
    mut dev: Vec<Sentence>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&str, &EpochRecord),
) -> Result<(Pipeline<f32>, TrainOutcome, TrainOutcome)> {
    let schema = schema_of(&train)?;
    let vocab = Vocabulary::build(&train, cfg.min_count)?;
    let (pos, pos_out) = train_pos_tagger(&train, &dev, &schema, &vocab, model, cfg, |r| {
        on_epoch("pos", r)
    })?;
    if cfg.predicted_pos_for_training {
        assign_predicted_pos(&pos, &mut train)?;
    } else {
        assign_gold_pos(&mut train);
    }
    assign_predicted_pos(&pos, &mut dev)?;
    let mut config = model.clone();
    config.encoder.use_pos = true;
    let (analyzer, out) = train_analyzer(&train, &dev, &schema, &vocab, &config, cfg, |r| {
        on_epoch("analyzer", r)
    })?;
    Ok((
        Pipeline {
            pos: Some(pos),
            analyzer,
        },
        pos_out,
        out,
    ))
}

/// Trains one model on a mixed cluster corpus, optionally factoring decoder
/// inputs by typology vectors. Language embeddings and sentinels follow the
/// encoder configuration; [`ModelConfig::multisource`] enables both.
pub fn train_multisource(
    members: &[(String, Vec<Sentence>)],
    dev: &[Sentence],
    model: &ModelConfig,
    typology: Option<TypologyTable>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Tagger<f32>, TrainOutcome)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mixed = prepare_cluster_with_cap(members, cfg.cluster_cap, &mut rng)?;
    let schemas = members
        .iter()
        .map(|(_, c)| schema_of(c))
        .collect::<Result<Vec<_>>>()?;
    let schema = FeatureSchema::union(&schemas)?;
    let all: Vec<Sentence> = members
        .iter()
        .flat_map(|(_, c)| c.iter().cloned())
        .collect();
    let vocab = Vocabulary::build(&all, cfg.min_count)?;
    let mut config = model.clone();
    config.decoders = Decoders::All;
    config.encoder.use_pos = false;
    if typology.is_none() {
        config.polyglot = false;
    }
    let mut tagger = Tagger::new(config, schema, vocab, typology, &mut rng)?;
    let out = fit(&mut tagger, &mixed, dev, cfg, on_epoch)?;
    Ok((tagger, out))
}

/// Continues training a cluster model on one member language. Labels the
/// model cannot represent are reported together.
pub fn finetune(
    tagger: &mut Tagger<f32>,
    train: &[Sentence],
    dev: &[Sentence],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let target = schema_of(train)?;
    let novel = tagger.schema.novel_labels(&target);
    if !novel.is_empty() {
        return Err(Error::NovelLabels(novel));
    }
    for s in train.iter().chain(dev) {
        if tagger.vocab.langs.get(&s.lang).is_none()
            && (tagger.config.encoder.use_lang || tagger.config.sentinels)
        {
            return Err(Error::Contract(format!(
                "language `{}` was not part of the cluster",
                s.lang
            )));
        }
    }
    fit(tagger, train, dev, cfg, on_epoch)
}
