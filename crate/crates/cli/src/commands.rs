use std::path::Path;

use anyhow::{bail, Context};
use log::{info, warn};

use mdtag::checkpoint::{self, Meta};
use mdtag::corpus::{
    decompose_corpus, load_clusters, member_file, read_conllu, LanguageCluster, Sentence, Split,
    Vocabulary,
};
use mdtag::encoder::{attention_table, EncoderConfig};
use mdtag::evaluate::EvalReport;
use mdtag::model::{ModelConfig, Tagger};
use mdtag::polyglot::{load_uriel_subset, TypologyTable};
use mdtag::schema::{FeatureDictionary, FeatureSchema, Strictness, POS};
use mdtag::train::{
    assign_predicted_pos, finetune, schema_of, train_analyzer, train_multisource, train_pipeline,
    EpochRecord, Pipeline, TrainConfig, TrainOutcome,
};

use crate::output::{write_file, Staging};
use crate::{
    require_path, usage, DictArgs, EvaluateArgs, FinetuneArgs, Mode, PredictArgs, SchemaArgs,
    TrainArgs, TypologyArgs,
};

const CHECKPOINT_DIR: &str = "checkpoint";

fn strictness(d: &DictArgs) -> Strictness {
    if d.strict {
        Strictness::Strict
    } else {
        Strictness::Lenient
    }
}

fn dictionary(arg: Option<&str>, flag: &str) -> anyhow::Result<FeatureDictionary> {
    let Some(arg) = arg else {
        return Err(usage(format!(
            "{flag} is required: pass a dictionary file or `builtin` for the shipped table"
        )));
    };
    if arg == "builtin" {
        return Ok(FeatureDictionary::builtin());
    }
    let p = Path::new(arg);
    require_path(flag, p)?;
    Ok(FeatureDictionary::load(p)?)
}

fn annotated(
    path: &Path,
    lang: &str,
    dict: &FeatureDictionary,
    strict: Strictness,
) -> anyhow::Result<Vec<Sentence>> {
    let mut s = read_conllu(path, lang)?;
    decompose_corpus(&mut s, dict, strict)
        .with_context(|| format!("decomposing {}", path.display()))?;
    Ok(s)
}

fn pick_cluster(path: &Path, name: Option<&str>) -> anyhow::Result<LanguageCluster> {
    require_path("--cluster", path)?;
    let clusters = load_clusters(path)?;
    match name {
        Some(n) => clusters.into_iter().find(|c| c.name == n).ok_or_else(|| {
            usage(format!(
                "--cluster-name: no cluster `{n}` in {}",
                path.display()
            ))
        }),
        None if clusters.len() == 1 => Ok(clusters.into_iter().next().expect("one cluster")),
        None => {
            let names: Vec<&str> = clusters.iter().map(|c| c.name.as_str()).collect();
            Err(usage(format!(
                "--cluster-name is required; clusters: {}",
                names.join(", ")
            )))
        }
    }
}

fn cluster_split(
    cluster: &LanguageCluster,
    split: Split,
    dict: &FeatureDictionary,
    strict: Strictness,
) -> anyhow::Result<Vec<(String, Vec<Sentence>)>> {
    let mut out = Vec::new();
    for m in &cluster.members {
        let file = member_file(m, split)?;
        let corpus = annotated(&file, &m.lang, dict, strict)?;
        if corpus.is_empty() {
            return Err(mdtag::Error::Cluster {
                language: m.lang.clone(),
                msg: format!("{} holds no sentences", file.display()),
            }
            .into());
        }
        out.push((m.lang.clone(), corpus));
    }
    Ok(out)
}

fn encoder_config(a: &TrainArgs) -> EncoderConfig {
    let h = &a.hyper;
    EncoderConfig {
        char_emb: h.char_emb,
        char_hidden: h.char_hidden,
        word_emb: h.word_emb,
        word_hidden: h.word_hidden,
        pos_emb: h.pos_emb,
        lang_emb: h.lang_emb_dim,
        dropout: h.dropout,
        self_attention: !h.no_self_attention,
        ..EncoderConfig::default()
    }
}

fn resolve_mode(a: &TrainArgs) -> anyhow::Result<Mode> {
    match (a.mode, a.pos, a.polyglot) {
        (Mode::Mdcrf | Mode::MdcrfPos, _, true) => Err(usage("--polyglot needs a cluster mode")),
        (Mode::Multi | Mode::MultiPolyglot, true, _) => {
            Err(usage("--pos is only available for monolingual training"))
        }
        (Mode::Mdcrf, true, _) => Ok(Mode::MdcrfPos),
        (Mode::Multi, _, true) => Ok(Mode::MultiPolyglot),
        (m, _, _) => Ok(m),
    }
}

fn epoch_logger(tag: &'static str) -> impl FnMut(&EpochRecord) {
    move |r| info!("{tag} {}", TrainOutcome::line(r))
}

fn predictions(
    model: &Pipeline<f32>,
    sentences: &[Sentence],
) -> anyhow::Result<(String, Vec<Vec<String>>)> {
    let mut text = String::new();
    let mut tags = Vec::with_capacity(sentences.len());
    for s in sentences {
        let feats = model
            .predict(s)?
            .iter()
            .map(|a| model.schema().compose(a))
            .collect::<mdtag::Result<Vec<_>>>()?;
        text.push_str(&s.to_conllu_with(&feats)?);
        tags.push(feats);
    }
    Ok((text, tags))
}

fn gold_tags(sentences: &[Sentence]) -> Vec<Vec<String>> {
    sentences
        .iter()
        .map(|s| s.tokens.iter().map(|t| t.tags.clone()).collect())
        .collect()
}

fn pos_file(tagger: &Tagger<f32>, sentences: &[Sentence]) -> anyhow::Result<String> {
    let mut s = sentences.to_vec();
    assign_predicted_pos(tagger, &mut s)?;
    let mut out = String::new();
    for sent in &s {
        let feats: Vec<String> = sent
            .tokens
            .iter()
            .map(|t| t.predicted_pos.clone().unwrap_or_else(|| "_".into()))
            .collect();
        out.push_str(&sent.to_conllu_with(&feats)?);
    }
    Ok(out)
}

fn meta(mode: Mode, cfg: &TrainConfig, out: &TrainOutcome) -> Meta {
    let mut m = vec![("mode".to_string(), mode.as_str().to_string())];
    m.extend(cfg.to_pairs());
    m.push(("best_epoch".into(), out.best_epoch.to_string()));
    m.push(("best_dev_accuracy".into(), out.best_dev.to_string()));
    m
}

/// Trains the model selected by `--mode` and writes `checkpoint/`,
/// `train.log`, `dev.pred.conllu` and `dev.eval.tsv` under `--out` (plus
/// POS predictions for two-stage training and test outputs when `--test` is
/// given). The output directory appears only once everything is written.
pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let mode = resolve_mode(a)?;
    let dict = dictionary(a.dict.dict.as_deref(), "--dict")?;
    let strict = strictness(&a.dict);
    let cfg = TrainConfig {
        lr: a.hyper.lr,
        max_epochs: a.hyper.max_epochs,
        patience: a.hyper.patience,
        seed: a.hyper.seed,
        clip: a.hyper.clip,
        cluster_cap: a.cluster_cap,
        min_count: a.hyper.min_count,
        predicted_pos_for_training: !a.gold_pos_training,
    };
    cfg.validate()?;
    let enc = encoder_config(a);
    enc.validate()?;
    if let Some(t) = &a.test {
        require_path("--test", t)?;
    }
    let stage = Staging::new(&a.out)?;
    let (model, outcome, dev) = match mode {
        Mode::Mdcrf | Mode::MdcrfPos => {
            let train_path = a
                .train
                .as_deref()
                .ok_or_else(|| usage("--train is required"))?;
            let dev_path = a.dev.as_deref().ok_or_else(|| usage("--dev is required"))?;
            require_path("--train", train_path)?;
            require_path("--dev", dev_path)?;
            let train = annotated(train_path, &a.lang, &dict, strict)?;
            let dev = annotated(dev_path, &a.lang, &dict, strict)?;
            if train.is_empty() {
                bail!(usage(format!(
                    "--train: {} holds no sentences",
                    train_path.display()
                )));
            }
            let mut config = ModelConfig {
                encoder: enc,
                ..ModelConfig::default()
            };
            config.encoder.use_lang = a.lang_emb;
            if mode == Mode::Mdcrf {
                let schema = schema_of(&train)?;
                let vocab = Vocabulary::build(&train, cfg.min_count)?;
                let (analyzer, out) = train_analyzer(
                    &train,
                    &dev,
                    &schema,
                    &vocab,
                    &config,
                    &cfg,
                    epoch_logger("analyzer"),
                )?;
                (
                    Pipeline {
                        pos: None,
                        analyzer,
                    },
                    out,
                    dev,
                )
            } else {
                let (p, pos_out, out) =
                    train_pipeline(train.clone(), dev.clone(), &config, &cfg, |w, r| {
                        info!("{w} {}", TrainOutcome::line(r))
                    })?;
                stage.write("pos.log", &pos_out.log_text())?;
                let pos = p.pos.as_ref().expect("two-stage model");
                stage.write("train.pos.conllu", &pos_file(pos, &train)?)?;
                stage.write("dev.pos.conllu", &pos_file(pos, &dev)?)?;
                if let Some(t) = &a.test {
                    let test = read_conllu(t, &a.lang)?;
                    stage.write("test.pos.conllu", &pos_file(pos, &test)?)?;
                }
                (p, out, dev)
            }
        }
        Mode::Multi | Mode::MultiPolyglot => {
            let cluster_path = a
                .cluster
                .as_deref()
                .ok_or_else(|| usage("--cluster is required in cluster modes"))?;
            let cluster = pick_cluster(cluster_path, a.cluster_name.as_deref())?;
            let members = cluster_split(&cluster, Split::Train, &dict, strict)?;
            let dev: Vec<Sentence> = match &a.dev {
                Some(p) => {
                    require_path("--dev", p)?;
                    annotated(p, &a.lang, &dict, strict)?
                }
                None => cluster_split(&cluster, Split::Dev, &dict, strict)?
                    .into_iter()
                    .flat_map(|(_, c)| c)
                    .collect(),
            };
            let mut config = ModelConfig::multisource(enc);
            config.encoder.use_lang = !a.no_lang_emb;
            config.sentinels = !a.no_sentinels;
            config.polyglot = mode == Mode::MultiPolyglot;
            config.polyglot_concat = a.polyglot_concat;
            let typology = if config.polyglot {
                let langs: Vec<&str> = members.iter().map(|(l, _)| l.as_str()).collect();
                let table = match &a.uriel {
                    Some(p) => {
                        require_path("--uriel", p)?;
                        load_uriel_subset(p, &langs)?
                    }
                    None => {
                        let schemas = members
                            .iter()
                            .map(|(_, c)| schema_of(c))
                            .collect::<mdtag::Result<Vec<_>>>()?;
                        TypologyTable::from_cluster(&members, &FeatureSchema::union(&schemas)?)?
                    }
                };
                stage.write("typology.tsv", &table.to_tsv())?;
                Some(table)
            } else {
                None
            };
            let (analyzer, out) = train_multisource(
                &members,
                &dev,
                &config,
                typology,
                &cfg,
                epoch_logger("cluster"),
            )?;
            (
                Pipeline {
                    pos: None,
                    analyzer,
                },
                out,
                dev,
            )
        }
    };
    stage.write("train.log", &outcome.log_text())?;
    let m = meta(mode, &cfg, &outcome);
    let pos = model.pos.as_ref().map(|p| (p, m.clone()));
    checkpoint::save(
        &stage.path().join(CHECKPOINT_DIR),
        &model.analyzer,
        &m,
        pos.as_ref().map(|(p, m)| (*p, m)),
    )?;
    let (text, pred) = predictions(&model, &dev)?;
    stage.write("dev.pred.conllu", &text)?;
    stage.write(
        "dev.eval.tsv",
        &EvalReport::compute(&gold_tags(&dev), &pred, None)?.to_tsv(),
    )?;
    if let Some(t) = &a.test {
        let test = read_conllu(t, &a.lang)?;
        let (text, pred) = predictions(&model, &test)?;
        stage.write("test.pred.conllu", &text)?;
        stage.write(
            "test.eval.tsv",
            &EvalReport::compute(&gold_tags(&test), &pred, None)?.to_tsv(),
        )?;
    }
    stage.commit()?;
    println!(
        "{}: best dev accuracy {:.4} at epoch {}; output in {}",
        mode.as_str(),
        outcome.best_dev,
        outcome.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn load_pipeline(dir: &Path) -> anyhow::Result<Pipeline<f32>> {
    require_path("--checkpoint", dir)?;
    let (analyzer, _) =
        checkpoint::load::<f32>(dir).with_context(|| format!("loading {}", dir.display()))?;
    let pos = checkpoint::load_pos::<f32>(dir)?.map(|(p, _)| p);
    Ok(Pipeline { pos, analyzer })
}

/// Fine-tunes a cluster checkpoint on one member's data; writes
/// `checkpoint/`, `finetune.log` and `dev.pred.conllu` under `--out`.
pub fn cmd_finetune(a: &FinetuneArgs) -> anyhow::Result<()> {
    let dict = dictionary(a.dict.dict.as_deref(), "--dict")?;
    require_path("--train", &a.train)?;
    require_path("--dev", &a.dev)?;
    let model = load_pipeline(&a.checkpoint)?;
    if model.pos.is_some() {
        bail!(usage(
            "--checkpoint: fine-tuning a two-stage model is not supported"
        ));
    }
    let mut tagger = model.analyzer;
    let strict = strictness(&a.dict);
    let train = annotated(&a.train, &a.lang, &dict, strict)?;
    let dev = annotated(&a.dev, &a.lang, &dict, strict)?;
    let cfg = TrainConfig {
        lr: a.lr,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        clip: a.clip,
        ..TrainConfig::default()
    };
    let stage = Staging::new(&a.out)?;
    let outcome = finetune(&mut tagger, &train, &dev, &cfg, epoch_logger("finetune"))?;
    stage.write("finetune.log", &outcome.log_text())?;
    let mut m: Meta = vec![
        ("mode".into(), "finetune".into()),
        ("lang".into(), a.lang.clone()),
    ];
    m.extend(cfg.to_pairs());
    m.push(("best_epoch".into(), outcome.best_epoch.to_string()));
    m.push(("best_dev_accuracy".into(), outcome.best_dev.to_string()));
    checkpoint::save(&stage.path().join(CHECKPOINT_DIR), &tagger, &m, None)?;
    let model = Pipeline {
        pos: None,
        analyzer: tagger,
    };
    let (text, _) = predictions(&model, &dev)?;
    stage.write("dev.pred.conllu", &text)?;
    stage.commit()?;
    println!(
        "finetune {}: best dev accuracy {:.4} at epoch {}",
        a.lang, outcome.best_dev, outcome.best_epoch
    );
    Ok(())
}

fn input_language(model: &Pipeline<f32>, flag: Option<&str>) -> anyhow::Result<String> {
    let langs = model.analyzer.vocab.langs.items();
    match flag {
        Some(l) if langs.iter().any(|x| x == l) => Ok(l.to_string()),
        Some(l) => Err(usage(format!(
            "--lang: `{l}` is not one of the checkpoint's languages ({})",
            langs.join(", ")
        ))),
        None if langs.len() == 1 => Ok(langs[0].clone()),
        None => Err(usage(format!(
            "--lang is required; the checkpoint covers {}",
            langs.join(", ")
        ))),
    }
}

/// Writes the input with FEATS replaced by predicted tagsets.
pub fn cmd_predict(a: &PredictArgs) -> anyhow::Result<()> {
    let model = load_pipeline(&a.checkpoint)?;
    require_path("--input", &a.input)?;
    let lang = input_language(&model, a.lang.as_deref())?;
    let input = read_conllu(&a.input, &lang)?;
    if input.is_empty() {
        warn!("{}: empty input, writing empty output", a.input.display());
    }
    let attention = a.attention.as_deref().map(Staging::new).transpose()?;
    let mut text = String::new();
    for (i, s) in input.iter().enumerate() {
        let analysis = model.analyze(s, attention.is_some())?;
        let feats = analysis
            .annotations
            .iter()
            .map(|ann| model.schema().compose(ann))
            .collect::<mdtag::Result<Vec<_>>>()?;
        text.push_str(&s.to_conllu_with(&feats)?);
        if let Some(dir) = &attention {
            let mut trace = format!("# sentence\t{}\n", i + 1);
            for (t, w) in s.tokens.iter().zip(&analysis.attention) {
                match w {
                    Some(w) => trace.push_str(&attention_table(&t.form, w)),
                    None => trace.push_str(&format!("# token\t{}\n# no attention\n", t.form)),
                }
                trace.push('\n');
            }
            dir.write(format!("sent-{:05}.tsv", i + 1), &trace)?;
        }
    }
    write_file(&a.out, &text)?;
    if let Some(dir) = attention {
        dir.commit()?;
    }
    if let Some(tdir) = &a.transitions {
        let stage = Staging::new(tdir)?;
        let mut taggers = vec![&model.analyzer];
        taggers.extend(model.pos.as_ref());
        for t in taggers {
            for layer in t.bank().layers() {
                stage.write(
                    format!("{}.tsv", layer.dim()),
                    &layer.transition_table(&t.params),
                )?;
            }
        }
        stage.commit()?;
    }
    info!("tagged {} sentences", input.len());
    Ok(())
}

/// Prints (and optionally writes) exact-match accuracy and F1 scores.
pub fn cmd_evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    require_path("--gold", &a.gold)?;
    require_path("--pred", &a.pred)?;
    let gold = read_conllu(&a.gold, "und")?;
    let pred = read_conllu(&a.pred, "und")?;
    let dict = if a.per_feature {
        Some(dictionary(
            Some(a.dict.as_deref().unwrap_or("builtin")),
            "--dict",
        )?)
    } else {
        None
    };
    let report = EvalReport::compute(&gold_tags(&gold), &gold_tags(&pred), dict.as_ref())?;
    print!("{}", report.to_text());
    if let Some(out) = &a.out {
        let mut text = report.to_tsv();
        if let Some(pf) = report.per_feature_tsv() {
            text.push('\n');
            text.push_str(&pf);
        }
        write_file(out, &text)?;
    }
    Ok(())
}

/// Writes the pruned typology table of a cluster's training corpora.
pub fn cmd_typology(a: &TypologyArgs) -> anyhow::Result<()> {
    let dict = dictionary(a.dict.dict.as_deref(), "--dict")?;
    let cluster = pick_cluster(&a.cluster, a.cluster_name.as_deref())?;
    let members = cluster_split(&cluster, Split::Train, &dict, strictness(&a.dict))?;
    let schemas = members
        .iter()
        .map(|(_, c)| schema_of(c))
        .collect::<mdtag::Result<Vec<_>>>()?;
    let table = TypologyTable::from_cluster(&members, &FeatureSchema::union(&schemas)?)?;
    write_file(&a.out, &table.to_tsv())?;
    println!(
        "{}: {} languages, {} features",
        cluster.name,
        table.rows.len(),
        table.width()
    );
    Ok(())
}

/// Writes the label spaces of the decomposed training files.
pub fn cmd_schema(a: &SchemaArgs) -> anyhow::Result<()> {
    let dict = dictionary(a.dict.dict.as_deref(), "--dict")?;
    let mut all = Vec::new();
    for p in &a.train {
        require_path("--train", p)?;
        all.extend(annotated(p, "und", &dict, strictness(&a.dict))?);
    }
    let schema = schema_of(&all)?;
    write_file(&a.out, &schema.to_text())?;
    let n: usize = schema
        .dims()
        .map(|d| schema.labels(d).map_or(0, |l| l.len() - 1))
        .sum();
    println!(
        "{} dimensions, {} values (POS: {})",
        schema.num_dims(),
        n,
        schema.labels(POS).map_or(0, |l| l.len() - 1)
    );
    Ok(())
}
