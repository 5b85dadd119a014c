//! Evaluation metrics and the greedy-decoding evaluation harness.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::Sample;
use crate::error::{Error, Result};
use crate::grammar::{parse, Polarity, StructuredOutput};
use crate::policy::{PolicyModel, PolicyParams};
use crate::profile::{score_to_polarity, DatasetProfile};

/// Class assigned to unparseable outputs. It always counts as a miss and
/// never forms its own term of the macro F1.
pub const FORMAT_FAILURE_CLASS: usize = usize::MAX;

fn polarity_class(p: Polarity) -> usize {
    match p {
        Polarity::Negative => 0,
        Polarity::Neutral => 1,
        Polarity::Positive => 2,
    }
}

/// Class index of `s` in the `k`-way scheme of `profile`.
///
/// * 7: nearest integer clipped to [-3, 3], shifted to 0..=6.
/// * 5: bins over `class_edges_acc5`; a value on an edge belongs to the bin
///   nearer zero.
/// * 3: negative, neutral, positive (0, 1, 2) via the neutral band.
/// * 2: 1 when `s > 0`, else 0.
pub fn score_to_class(s: f64, k: usize, profile: &DatasetProfile) -> Result<usize> {
    if !profile.supports_classes(k) {
        return Err(Error::Profile(format!(
            "{}-class accuracy is not defined for profile {}",
            k, profile.name
        )));
    }
    Ok(match k {
        7 => (s.round().clamp(-3.0, 3.0) + 3.0) as usize,
        5 => profile
            .class_edges_acc5
            .iter()
            .filter(|&&e| if e < 0.0 { s >= e } else { s > e })
            .count(),
        3 => polarity_class(score_to_polarity(s, profile)),
        _ => usize::from(s > 0.0),
    })
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            what: "prediction and gold vectors",
            expected: b,
            got: a,
        });
    }
    Ok(())
}

/// Sign agreement over pairs whose gold score is not neutral.
pub fn acc2(preds: &[f64], golds: &[f64], profile: &DatasetProfile) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    let (mut hit, mut n) = (0usize, 0usize);
    for (&p, &g) in preds.iter().zip(golds) {
        if score_to_polarity(g, profile) == Polarity::Neutral {
            continue;
        }
        n += 1;
        hit += usize::from((p > 0.0) == (g > 0.0));
    }
    if n == 0 {
        return Err(Error::Empty("non-neutral gold samples"));
    }
    Ok(hit as f64 / n as f64)
}

/// K-class accuracy of predicted against gold scores.
pub fn acc_k(preds: &[f64], golds: &[f64], k: usize, profile: &DatasetProfile) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    if preds.is_empty() {
        return Err(Error::Empty("accuracy inputs"));
    }
    let mut hit = 0usize;
    for (&p, &g) in preds.iter().zip(golds) {
        hit += usize::from(score_to_class(p, k, profile)? == score_to_class(g, k, profile)?);
    }
    Ok(hit as f64 / preds.len() as f64)
}

/// Unweighted mean of per-class F1 over every class that occurs in either
/// vector (except [`FORMAT_FAILURE_CLASS`]).
pub fn f1_macro(pred: &[usize], gold: &[usize]) -> f64 {
    let mut classes: Vec<usize> = pred
        .iter()
        .chain(gold)
        .copied()
        .filter(|&c| c != FORMAT_FAILURE_CLASS)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return 0.0;
    }
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
            for (&p, &g) in pred.iter().zip(gold) {
                match (p == c, g == c) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
            2.0 * tp / (2.0 * tp + fp + fn_)
        })
        .sum();
    total / classes.len() as f64
}

pub fn mae(preds: &[f64], golds: &[f64]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    if preds.is_empty() {
        return Err(Error::Empty("mae inputs"));
    }
    Ok(preds.iter().zip(golds).map(|(p, g)| (p - g).abs()).sum::<f64>() / preds.len() as f64)
}

pub fn pearson_corr(preds: &[f64], golds: &[f64]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    if preds.len() < 2 {
        return Err(Error::Length(preds.len()));
    }
    let n = preds.len() as f64;
    let mp = preds.iter().sum::<f64>() / n;
    let mg = golds.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, g) in preds.iter().zip(golds) {
        let (dx, dy) = (p - mp, g - mg);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant vector in correlation"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Metrics of one evaluation run. Class accuracies a profile does not define
/// are `None`; so are the regression metrics when fewer than two outputs
/// parse or the predictions are constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc7: Option<f64>,
    pub acc5: Option<f64>,
    pub acc3: f64,
    pub acc2: f64,
    pub f1_macro: f64,
    pub mae: Option<f64>,
    pub pearson_corr: Option<f64>,
    pub n_evaluated: usize,
    pub n_format_failures: usize,
}

pub const REPORT_CSV_HEADER: &str = "run_id,acc7,acc5,acc3,acc2,f1,mae,corr,n_evaluated,n_format_failures";

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

impl MetricsReport {
    /// One `key=value` line per metric.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let rows: [(&str, String); 9] = [
            ("acc7", fmt_opt(self.acc7)),
            ("acc5", fmt_opt(self.acc5)),
            ("acc3", format!("{:.6}", self.acc3)),
            ("acc2", format!("{:.6}", self.acc2)),
            ("f1", format!("{:.6}", self.f1_macro)),
            ("mae", fmt_opt(self.mae)),
            ("corr", fmt_opt(self.pearson_corr)),
            ("n_evaluated", self.n_evaluated.to_string()),
            ("n_format_failures", self.n_format_failures.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn to_csv_row(&self, run_id: &str) -> String {
        format!(
            "{run_id},{},{},{:.6},{:.6},{:.6},{},{},{},{}",
            fmt_opt(self.acc7),
            fmt_opt(self.acc5),
            self.acc3,
            self.acc2,
            self.f1_macro,
            fmt_opt(self.mae),
            fmt_opt(self.pearson_corr),
            self.n_evaluated,
            self.n_format_failures
        )
    }
}

/// Greedy decode of every sample; `None` where the output does not parse.
pub fn predict(model: &PolicyModel, p: &PolicyParams, samples: &[Sample]) -> Result<Vec<Option<StructuredOutput>>> {
    samples
        .iter()
        .map(|s| {
            let ctx = model.encode(p, s)?;
            let r = model.greedy(p, &ctx)?;
            Ok(parse(&model.vocab.decode_text(&r.tokens), model.vocab.profile()).ok())
        })
        .collect()
}

/// Metrics of already-decoded outputs against their samples.
///
/// Classes come from the predicted score. Format failures are misses for
/// every classification metric and are left out of MAE and correlation.
/// F1 is the binary macro F1 over non-neutral gold samples.
pub fn report_from_predictions(
    outputs: &[Option<StructuredOutput>],
    samples: &[Sample],
    profile: &DatasetProfile,
) -> Result<MetricsReport> {
    check_lengths(outputs.len(), samples.len())?;
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let class = |o: &Option<StructuredOutput>, k: usize| -> Result<usize> {
        match o {
            Some(out) => score_to_class(out.score, k, profile),
            None => Ok(FORMAT_FAILURE_CLASS),
        }
    };
    let accuracy = |k: usize| -> Result<f64> {
        let mut hit = 0usize;
        for (o, s) in outputs.iter().zip(samples) {
            hit += usize::from(class(o, k)? == score_to_class(s.gold_score, k, profile)?);
        }
        Ok(hit as f64 / samples.len() as f64)
    };
    let optional = |k: usize| -> Result<Option<f64>> {
        if profile.supports_classes(k) {
            accuracy(k).map(Some)
        } else {
            Ok(None)
        }
    };

    let (mut bin_pred, mut bin_gold) = (Vec::new(), Vec::new());
    for (o, s) in outputs.iter().zip(samples) {
        if s.gold_polarity != Polarity::Neutral {
            bin_pred.push(class(o, 2)?);
            bin_gold.push(score_to_class(s.gold_score, 2, profile)?);
        }
    }
    if bin_gold.is_empty() {
        return Err(Error::Empty("non-neutral gold samples"));
    }
    let acc2 = bin_pred.iter().zip(&bin_gold).filter(|(a, b)| a == b).count() as f64 / bin_gold.len() as f64;

    let (ps, gs): (Vec<f64>, Vec<f64>) = outputs
        .iter()
        .zip(samples)
        .filter_map(|(o, s)| o.as_ref().map(|out| (out.score, s.gold_score)))
        .unzip();

    Ok(MetricsReport {
        acc7: optional(7)?,
        acc5: optional(5)?,
        acc3: accuracy(3)?,
        acc2,
        f1_macro: f1_macro(&bin_pred, &bin_gold),
        mae: mae(&ps, &gs).ok(),
        pearson_corr: pearson_corr(&ps, &gs).ok(),
        n_evaluated: samples.len(),
        n_format_failures: outputs.iter().filter(|o| o.is_none()).count(),
    })
}

pub fn evaluate(model: &PolicyModel, p: &PolicyParams, samples: &[Sample]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let outputs = predict(model, p, samples)?;
    report_from_predictions(&outputs, samples, model.vocab.profile())
}
