//! Loss-ratio evaluation of a strength-conditioned model against dedicated
//! fixed-strength baselines.
//!
//! For every style and strength, the conditioned model and the baseline
//! trained at that strength are scored with the same objective. The report
//! holds per-style ratios `loss(model) / loss(baseline)` for the total,
//! content and style components, aggregated as mean and population standard
//! deviation across styles (mean of per-style ratios, not ratio of means).
//! Raw per-style losses are kept so every aggregate can be recomputed.

use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::loss::{evaluate_loss, LossBreakdown, LossWeights, StyleTarget};
use crate::tensor::Tensor4;
use crate::trainer::{self, StrengthSchedule, TrainConfig};
use crate::transformer::TransformerWeights;

/// A style target with a display name.
#[derive(Clone, Debug)]
pub struct NamedStyle {
    pub name: String,
    pub target: StyleTarget,
}

/// Mean losses over the content set for one (style, strength).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub style: String,
    pub alpha: f64,
    pub content: f64,
    pub style_loss: f64,
    pub tv: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub rows: Vec<LossRow>,
}

impl LossTable {
    pub fn get(&self, style: &str, alpha: f64) -> Option<&LossRow> {
        self.rows.iter().find(|r| r.style == style && r.alpha == alpha)
    }
}

fn check_inputs(contents: &[Tensor4], styles: &[NamedStyle], strengths: &[f64]) -> Result<()> {
    if contents.is_empty() {
        return Err(Error::Eval("need at least one content image".into()));
    }
    if styles.is_empty() {
        return Err(Error::Eval("need at least one style".into()));
    }
    if strengths.is_empty() {
        return Err(Error::Eval("need at least one strength".into()));
    }
    if let Some(a) = strengths.iter().find(|a| !a.is_finite()) {
        return Err(Error::Eval(format!("strength {a} is not finite")));
    }
    Ok(())
}

fn score(
    model: &TransformerWeights,
    x: &Tensor4,
    style: &StyleTarget,
    alpha: f64,
    lw: &LossWeights,
    enc: &EncoderWeights,
) -> Result<LossBreakdown> {
    let y = model.stylize(x, alpha)?;
    evaluate_loss(x, &y, style, alpha, lw, enc)
}

fn mean_row(style: &str, alpha: f64, items: &[LossBreakdown]) -> LossRow {
    let n = items.len() as f64;
    let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
    LossRow {
        style: style.to_string(),
        alpha,
        content: avg(|b| b.content),
        style_loss: avg(|b| b.style),
        tv: avg(|b| b.tv),
        total: avg(|b| b.total),
    }
}

/// Score `model` at each strength on each style, averaging over `contents`.
/// Rows are ordered by style, then strength. The model is only read.
pub fn evaluate_model(
    model: &TransformerWeights,
    contents: &[Tensor4],
    styles: &[NamedStyle],
    strengths: &[f64],
    lw: &LossWeights,
    enc: &EncoderWeights,
) -> Result<LossTable> {
    check_inputs(contents, styles, strengths)?;
    let jobs: Vec<(usize, f64)> = (0..styles.len())
        .flat_map(|s| strengths.iter().map(move |&a| (s, a)))
        .collect();
    // Each job is independent; collect keeps job order, so the reduction is
    // the same regardless of scheduling.
    let rows = jobs
        .par_iter()
        .map(|&(s, alpha)| {
            let items = contents
                .iter()
                .map(|x| score(model, x, &styles[s].target, alpha, lw, enc))
                .collect::<Result<Vec<_>>>()?;
            Ok(mean_row(&styles[s].name, alpha, &items))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossTable { rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleRatio {
    pub style: String,
    pub alpha: f64,
    pub total: f64,
    pub content: f64,
    pub style_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthSummary {
    pub alpha: f64,
    pub total: MeanStd,
    pub content: MeanStd,
    pub style_loss: MeanStd,
}

/// One raw loss entry; also the CSV row layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawEntry {
    pub style: String,
    pub alpha: f64,
    /// `"model"` or `"baseline"`.
    pub model: String,
    pub content: f64,
    pub style_loss: f64,
    pub tv: f64,
    pub total: f64,
}

pub const MODEL_LABEL: &str = "model";
pub const BASELINE_LABEL: &str = "baseline";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub summary: Vec<StrengthSummary>,
    pub per_style: Vec<StyleRatio>,
    pub raw: Vec<RawEntry>,
}

impl RatioReport {
    /// Rebuild ratios and aggregates from the raw entries alone.
    pub fn from_raw(raw: Vec<RawEntry>) -> Result<Self> {
        let mut styles: Vec<&str> = Vec::new();
        let mut strengths: Vec<f64> = Vec::new();
        for e in &raw {
            if !styles.contains(&e.style.as_str()) {
                styles.push(&e.style);
            }
            if !strengths.contains(&e.alpha) {
                strengths.push(e.alpha);
            }
        }
        let find = |style: &str, alpha: f64, label: &str| {
            raw.iter()
                .find(|e| e.style == style && e.alpha == alpha && e.model == label)
                .ok_or_else(|| Error::Eval(format!("missing {label} entry for {style} at {alpha}")))
        };
        let mut per_style = Vec::new();
        for &style in &styles {
            for &alpha in &strengths {
                let m = find(style, alpha, MODEL_LABEL)?;
                let b = find(style, alpha, BASELINE_LABEL)?;
                per_style.push(StyleRatio {
                    style: style.to_string(),
                    alpha,
                    total: ratio(m.total, b.total, "total", style, alpha)?,
                    content: ratio(m.content, b.content, "content", style, alpha)?,
                    style_loss: ratio(m.style_loss, b.style_loss, "style", style, alpha)?,
                });
            }
        }
        let summary = strengths
            .iter()
            .map(|&alpha| {
                let at: Vec<&StyleRatio> = per_style.iter().filter(|r| r.alpha == alpha).collect();
                let col = |f: fn(&StyleRatio) -> f64| MeanStd::of(&at.iter().map(|r| f(r)).collect::<Vec<_>>());
                StrengthSummary {
                    alpha,
                    total: col(|r| r.total),
                    content: col(|r| r.content),
                    style_loss: col(|r| r.style_loss),
                }
            })
            .collect();
        Ok(RatioReport {
            summary,
            per_style,
            raw,
        })
    }

    pub fn summary_at(&self, alpha: f64) -> Option<&StrengthSummary> {
        self.summary.iter().find(|s| s.alpha == alpha)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Eval(format!("report json: {e}")))
    }

    /// Raw entries as CSV with columns `style,alpha,model,content,style_loss,tv,total`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.raw {
            w.serialize(e).map_err(|e| Error::Eval(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Eval(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn raw_from_csv(reader: impl Read) -> Result<Vec<RawEntry>> {
        csv::Reader::from_reader(reader)
            .deserialize()
            .map(|r| r.map_err(|e| Error::Eval(format!("report csv: {e}"))))
            .collect()
    }

    pub fn write(&self, json: Option<&Path>, csv_path: Option<&Path>) -> Result<()> {
        if let Some(p) = json {
            std::fs::write(p, self.to_json()).map_err(|e| Error::io(p, e))?;
        }
        if let Some(p) = csv_path {
            std::fs::write(p, self.to_csv()?).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}

fn ratio(a: f64, b: f64, what: &str, style: &str, alpha: f64) -> Result<f64> {
    let r = a / b;
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Eval(format!(
            "{what} ratio {a} / {b} for {style} at {alpha} is not finite and positive"
        )));
    }
    Ok(r)
}

/// Models used for one style: the conditioned model and one baseline per strength.
#[derive(Clone, Debug)]
pub struct StyleCase<'a> {
    pub style: NamedStyle,
    pub model: &'a TransformerWeights,
    pub baselines: Vec<(f64, &'a TransformerWeights)>,
}

fn baseline_for<'a>(baselines: &[(f64, &'a TransformerWeights)], alpha: f64) -> Result<&'a TransformerWeights> {
    baselines
        .iter()
        .find(|(a, _)| *a == alpha)
        .map(|(_, m)| *m)
        .ok_or_else(|| Error::Eval(format!("no baseline model for strength {alpha}")))
}

fn table_entries(table: &LossTable, label: &str) -> Vec<RawEntry> {
    table
        .rows
        .iter()
        .map(|r| RawEntry {
            style: r.style.clone(),
            alpha: r.alpha,
            model: label.to_string(),
            content: r.content,
            style_loss: r.style_loss,
            tv: r.tv,
            total: r.total,
        })
        .collect()
}

/// Ratio report where each style has its own conditioned model and baselines.
pub fn loss_ratio_cases(
    cases: &[StyleCase<'_>],
    contents: &[Tensor4],
    strengths: &[f64],
    lw: &LossWeights,
    enc: &EncoderWeights,
) -> Result<RatioReport> {
    if cases.is_empty() {
        return Err(Error::Eval("need at least one style".into()));
    }
    for case in cases {
        for &a in strengths {
            baseline_for(&case.baselines, a)?;
        }
    }
    let mut raw = Vec::new();
    for case in cases {
        let styles = std::slice::from_ref(&case.style);
        let model_table = evaluate_model(case.model, contents, styles, strengths, lw, enc)?;
        raw.extend(table_entries(&model_table, MODEL_LABEL));
        for &a in strengths {
            let base = baseline_for(&case.baselines, a)?;
            let t = evaluate_model(base, contents, styles, &[a], lw, enc)?;
            raw.extend(table_entries(&t, BASELINE_LABEL));
        }
    }
    RatioReport::from_raw(raw)
}

/// Ratio report for one conditioned model shared across all styles.
pub fn loss_ratio(
    model: &TransformerWeights,
    baselines: &[(f64, &TransformerWeights)],
    contents: &[Tensor4],
    styles: &[NamedStyle],
    strengths: &[f64],
    lw: &LossWeights,
    enc: &EncoderWeights,
) -> Result<RatioReport> {
    check_inputs(contents, styles, strengths)?;
    let cases: Vec<StyleCase<'_>> = styles
        .iter()
        .map(|s| StyleCase {
            style: s.clone(),
            model,
            baselines: baselines.to_vec(),
        })
        .collect();
    loss_ratio_cases(&cases, contents, strengths, lw, enc)
}

/// Dedicated baseline: identical to training except the strength is fixed.
pub fn train_fixed_strength_baseline(
    cfg: &TrainConfig,
    contents: &[Tensor4],
    style: &Tensor4,
    alpha_fixed: f64,
    enc: &EncoderWeights,
) -> Result<trainer::TrainOutcome> {
    trainer::train_on_images(cfg, contents, style, enc, StrengthSchedule::Fixed(alpha_fixed))
}
