//! Exact-match accuracy, micro/macro F1 over tag values, and per-dimension
//! error counts.
//!
//! Inputs are sentences of raw tagsets (`N;PL;NOM`). A tagset is compared as
//! the set of its non-null values, so component order never matters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::schema::{
    decompose_tagset, DecomposeReport, FeatureDictionary, Strictness, MULTI_VALUE_SEP, NULL,
};

/// Non-null values of a raw tagset.
pub fn value_set(tags: &str) -> BTreeSet<&str> {
    tags.split(';')
        .map(str::trim)
        .flat_map(|c| c.split(MULTI_VALUE_SEP))
        .filter(|c| !c.is_empty() && *c != NULL)
        .collect()
}

fn check_alignment(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment {
            sentence: gold.len().min(pred.len()),
            msg: format!("{} gold sentences vs {} predicted", gold.len(), pred.len()),
        });
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Alignment {
                sentence: i,
                msg: format!("{} gold tokens vs {} predicted", g.len(), p.len()),
            });
        }
    }
    Ok(())
}

fn pairs<'a>(
    gold: &'a [Vec<String>],
    pred: &'a [Vec<String>],
) -> impl Iterator<Item = (&'a str, &'a str)> {
    gold.iter()
        .flatten()
        .zip(pred.iter().flatten())
        .map(|(g, p)| (g.as_str(), p.as_str()))
}

/// Fraction of tokens whose predicted value set equals the gold one.
pub fn exact_match_accuracy(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<f64> {
    check_alignment(gold, pred)?;
    let mut n = 0usize;
    let mut ok = 0usize;
    for (g, p) in pairs(gold, pred) {
        n += 1;
        ok += usize::from(value_set(g) == value_set(p));
    }
    Ok(if n == 0 { 1.0 } else { ok as f64 / n as f64 })
}

/// `(micro, macro)` F1. Micro pools true/false positives over all tokens;
/// macro averages per-token F1, counting an empty-vs-empty token as 1.
pub fn f1_scores(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<(f64, f64)> {
    check_alignment(gold, pred)?;
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    let mut macro_sum = 0.0;
    let mut n = 0usize;
    for (g, p) in pairs(gold, pred) {
        let gs = value_set(g);
        let ps = value_set(p);
        let t = gs.intersection(&ps).count();
        let (fpt, fnt) = (ps.len() - t, gs.len() - t);
        tp += t;
        fp += fpt;
        fnn += fnt;
        macro_sum += if gs.is_empty() && ps.is_empty() {
            1.0
        } else {
            2.0 * t as f64 / (2 * t + fpt + fnt) as f64
        };
        n += 1;
    }
    let micro = if tp + fp + fnn == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
    };
    let macro_ = if n == 0 { 1.0 } else { macro_sum / n as f64 };
    Ok((micro, macro_))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureCounts {
    /// Tokens whose predicted value differs from gold.
    pub errors: usize,
    /// Tokens with a non-null predicted value.
    pub predictions: usize,
    /// Tokens with a non-null gold value.
    pub gold: usize,
}

/// Per-dimension disagreement counts, routing values through `dict`.
pub fn per_feature_errors(
    gold: &[Vec<String>],
    pred: &[Vec<String>],
    dict: &FeatureDictionary,
) -> Result<BTreeMap<String, FeatureCounts>> {
    check_alignment(gold, pred)?;
    let mut out: BTreeMap<String, FeatureCounts> = BTreeMap::new();
    let mut report = DecomposeReport::default();
    for (g, p) in pairs(gold, pred) {
        let ga = decompose_tagset(g, dict, Strictness::Lenient, &mut report)?;
        let pa = decompose_tagset(p, dict, Strictness::Lenient, &mut report)?;
        let dims: BTreeSet<&str> = ga.dims().chain(pa.dims()).collect();
        for d in dims {
            let e = out.entry(d.to_string()).or_default();
            let (gv, pv) = (ga.get(d), pa.get(d));
            let gset: BTreeSet<&str> = gv.split(MULTI_VALUE_SEP).collect();
            let pset: BTreeSet<&str> = pv.split(MULTI_VALUE_SEP).collect();
            e.errors += usize::from(gset != pset);
            e.predictions += usize::from(pv != NULL);
            e.gold += usize::from(gv != NULL);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub tokens: usize,
    pub accuracy: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub per_feature: Option<BTreeMap<String, FeatureCounts>>,
}

impl EvalReport {
    /// Scores aligned corpora; per-dimension counts need a dictionary.
    pub fn compute(
        gold: &[Vec<String>],
        pred: &[Vec<String>],
        dict: Option<&FeatureDictionary>,
    ) -> Result<Self> {
        let accuracy = exact_match_accuracy(gold, pred)?;
        let (f1_micro, f1_macro) = f1_scores(gold, pred)?;
        let per_feature = dict
            .map(|d| per_feature_errors(gold, pred, d))
            .transpose()?;
        Ok(Self {
            tokens: gold.iter().map(Vec::len).sum(),
            accuracy,
            f1_micro,
            f1_macro,
            per_feature,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tokens      {}", self.tokens);
        let _ = writeln!(out, "accuracy    {:.2}", 100.0 * self.accuracy);
        let _ = writeln!(out, "f1-micro    {:.2}", 100.0 * self.f1_micro);
        let _ = writeln!(out, "f1-macro    {:.2}", 100.0 * self.f1_macro);
        if let Some(pf) = &self.per_feature {
            let _ = writeln!(
                out,
                "\n{:<20} {:>8} {:>12} {:>8}",
                "feature", "errors", "predictions", "gold"
            );
            for (d, c) in pf {
                let _ = writeln!(
                    out,
                    "{:<20} {:>8} {:>12} {:>8}",
                    d, c.errors, c.predictions, c.gold
                );
            }
        }
        out
    }

    /// Machine-readable `key<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# mdtag eval v1\n");
        let _ = writeln!(out, "tokens\t{}", self.tokens);
        let _ = writeln!(out, "accuracy\t{}", self.accuracy);
        let _ = writeln!(out, "f1_micro\t{}", self.f1_micro);
        let _ = writeln!(out, "f1_macro\t{}", self.f1_macro);
        out
    }

    /// `feature<TAB>errors<TAB>predictions<TAB>gold` rows.
    pub fn per_feature_tsv(&self) -> Option<String> {
        let pf = self.per_feature.as_ref()?;
        let mut out = String::from("feature\terrors\tpredictions\tgold\n");
        for (d, c) in pf {
            let _ = writeln!(out, "{d}\t{}\t{}\t{}", c.errors, c.predictions, c.gold);
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(tags: &[&str]) -> Vec<String> {
        tags.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn perfect_prediction() {
        let g = vec![s(&["N;PL", "_", "V;PST;3"])];
        let p = vec![s(&["PL;N", "_", "3;PST;V"])];
        let r = EvalReport::compute(&g, &p, Some(&FeatureDictionary::builtin())).unwrap();
        assert_eq!((r.accuracy, r.f1_micro, r.f1_macro), (1.0, 1.0, 1.0));
        assert!(r.per_feature.unwrap().values().all(|c| c.errors == 0));
    }

    #[test]
    fn one_wrong_gender_in_ten() {
        let g = vec![s(&["N;FEM"; 10])];
        let mut p = g.clone();
        p[0][3] = "N;MASC".into();
        assert!((exact_match_accuracy(&g, &p).unwrap() - 0.9).abs() < 1e-15);
        let pf = per_feature_errors(&g, &p, &FeatureDictionary::builtin()).unwrap();
        assert_eq!(pf["Gender"].errors, 1);
        assert_eq!(pf["POS"].errors, 0);
    }

    #[test]
    fn partial_token_f1() {
        let g = vec![s(&["N;PL"])];
        let p = vec![s(&["N"])];
        let (mi, ma) = f1_scores(&g, &p).unwrap();
        assert!((mi - 2.0 / 3.0).abs() < 1e-15);
        assert!((ma - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn misalignment_names_sentence() {
        let g = vec![s(&["N"]), s(&["N", "V"])];
        let p = vec![s(&["N"]), s(&["N"])];
        match exact_match_accuracy(&g, &p) {
            Err(Error::Alignment { sentence, .. }) => assert_eq!(sentence, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_renderings() {
        let g = vec![s(&["N;PL"])];
        let r = EvalReport::compute(&g, &g, Some(&FeatureDictionary::builtin())).unwrap();
        assert!(r.to_text().contains("accuracy    100.00"));
        assert!(r.to_tsv().contains("accuracy\t1\n"));
        assert!(r.per_feature_tsv().unwrap().contains("Number\t0\t1\t1"));
    }
}
