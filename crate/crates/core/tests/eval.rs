mod common;

use common::*;
use strength_transfer::encoder::{generate_encoder, EncoderWeights};
use strength_transfer::eval::{
    evaluate_model, loss_ratio, loss_ratio_cases, train_fixed_strength_baseline, MeanStd, NamedStyle, RatioReport,
    StyleCase, BASELINE_LABEL, MODEL_LABEL,
};
use strength_transfer::loss::{LossWeights, StyleTarget};
use strength_transfer::synthetic::{content_image, style_image};
use strength_transfer::trainer::{train_on_images, StrengthSchedule, TrainConfig};
use strength_transfer::transformer::{ArchitectureConfig, TransformerWeights};
use strength_transfer::Tensor4;

fn setup(n_styles: u64) -> (Vec<Tensor4>, Vec<NamedStyle>, EncoderWeights) {
    let enc = generate_encoder(0);
    let contents = vec![content_image(16, 0), content_image(16, 1)];
    let styles = (0..n_styles)
        .map(|i| NamedStyle {
            name: format!("s{i}"),
            target: StyleTarget::from_image(&style_image(16, 10 + i), &enc).unwrap(),
        })
        .collect();
    (contents, styles, enc)
}

#[test]
fn self_baseline_gives_unit_ratios() {
    let (contents, styles, enc) = setup(3);
    let w = random_weights(&ArchitectureConfig::test_preset(), 1);
    let strengths = [0.1, 1.0, 5.0, 10.0];
    let baselines: Vec<(f64, &TransformerWeights)> = strengths.iter().map(|&a| (a, &w)).collect();
    let r = loss_ratio(&w, &baselines, &contents, &styles, &strengths, &LossWeights::default(), &enc).unwrap();
    assert_eq!(r.per_style.len(), 12);
    for s in &r.summary {
        for m in [s.total, s.content, s.style_loss] {
            assert_eq!(m, MeanStd { mean: 1.0, std: 0.0 });
        }
    }
}

#[test]
fn summary_recomputes_from_raw_entries() {
    let (contents, styles, enc) = setup(3);
    let a = random_weights(&ArchitectureConfig::test_preset(), 2);
    let b = random_weights(&ArchitectureConfig::test_preset(), 3);
    let strengths = [0.5, 2.0];
    let r = loss_ratio(&a, &[(0.5, &b), (2.0, &b)], &contents, &styles, &strengths, &LossWeights::default(), &enc)
        .unwrap();
    assert_eq!(RatioReport::from_raw(r.raw.clone()).unwrap(), r);
    for s in &r.summary {
        let ratios: Vec<f64> = styles
            .iter()
            .map(|st| {
                let find = |label: &str| {
                    r.raw
                        .iter()
                        .find(|e| e.style == st.name && e.alpha == s.alpha && e.model == label)
                        .unwrap()
                        .total
                };
                find(MODEL_LABEL) / find(BASELINE_LABEL)
            })
            .collect();
        let mean = ratios.iter().sum::<f64>() / 3.0;
        let std = (ratios.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!((s.total.mean - mean).abs() <= 1e-12);
        assert!((s.total.std - std).abs() <= 1e-12);
        assert!(s.total.std > 0.0);
    }
}

#[test]
fn json_and_csv_round_trip() {
    let (contents, styles, enc) = setup(2);
    let a = random_weights(&ArchitectureConfig::test_preset(), 4);
    let b = random_weights(&ArchitectureConfig::test_preset(), 5);
    let r = loss_ratio(&a, &[(1.0, &b)], &contents, &styles, &[1.0], &LossWeights::default(), &enc).unwrap();
    assert_eq!(RatioReport::from_json(&r.to_json()).unwrap(), r);
    let csv = r.to_csv().unwrap();
    assert!(csv.starts_with("style,alpha,model,content,style_loss,tv,total\n"));
    let raw = RatioReport::raw_from_csv(csv.as_bytes()).unwrap();
    assert_eq!(raw, r.raw);
    assert_eq!(RatioReport::from_raw(raw).unwrap(), r);

    let dir = tempfile::tempdir().unwrap();
    let (j, c) = (dir.path().join("r.json"), dir.path().join("r.csv"));
    r.write(Some(&j), Some(&c)).unwrap();
    assert_eq!(RatioReport::from_json(&std::fs::read_to_string(&j).unwrap()).unwrap(), r);
    assert_eq!(std::fs::read_to_string(&c).unwrap(), csv);
}

#[test]
fn evaluate_model_rows_and_zero_strength() {
    let (contents, styles, enc) = setup(1);
    let w = random_weights(&ArchitectureConfig::test_preset(), 6);
    let before = w.to_checkpoint().to_bytes().unwrap();
    let lw = LossWeights::default();
    let t = evaluate_model(&w, &contents[..1], &styles, &[0.0, 1.0, 3.0], &lw, &enc).unwrap();
    assert_eq!(t.rows.len(), 3);
    let zero = t.get("s0", 0.0).unwrap();
    assert_eq!(zero.total, lw.lambda_content * zero.content + lw.lambda_tv * zero.tv);
    for row in &t.rows {
        let expect = lw.combine(row.content, row.style_loss, row.tv, row.alpha);
        assert!((row.total - expect).abs() <= 1e-12 * expect);
    }
    assert_eq!(w.to_checkpoint().to_bytes().unwrap(), before);
    assert!(evaluate_model(&w, &[], &styles, &[1.0], &lw, &enc).is_err());
    assert!(evaluate_model(&w, &contents, &styles, &[], &lw, &enc).is_err());
}

#[test]
fn missing_baseline_is_rejected() {
    let (contents, styles, enc) = setup(1);
    let w = random_weights(&ArchitectureConfig::test_preset(), 7);
    let e = loss_ratio(&w, &[(1.0, &w)], &contents, &styles, &[1.0, 5.0], &LossWeights::default(), &enc).unwrap_err();
    assert!(e.to_string().contains("no baseline model for strength 5"), "{e}");
}

const STRENGTHS: [f64; 3] = [0.1, 1.0, 5.0];

fn desk_config() -> TrainConfig {
    let mut cfg = TrainConfig::new("unused", "unused", "unused");
    cfg.image_size = 16;
    cfg.batch_size = 1;
    cfg.epochs = 20;
    cfg.widths = [8, 16, 32];
    cfg.seed = 3;
    cfg
}

/// Conditioned model vs per-strength baselines, one set per style, equal budgets.
fn desk_ratio_report() -> (RatioReport, Vec<(f64, f64)>) {
    let (contents, styles, enc) = setup(2);
    let cfg = desk_config();
    let mut trained = Vec::new();
    for s in 0..2u64 {
        let style = style_image(16, 10 + s);
        let model = train_on_images(&cfg, &contents, &style, &enc, StrengthSchedule::Random).unwrap().weights;
        let bases: Vec<(f64, TransformerWeights)> = STRENGTHS
            .iter()
            .map(|&a| (a, train_fixed_strength_baseline(&cfg, &contents, &style, a, &enc).unwrap().weights))
            .collect();
        trained.push((model, bases));
    }
    let cases: Vec<StyleCase<'_>> = trained
        .iter()
        .zip(&styles)
        .map(|((m, b), st)| StyleCase {
            style: st.clone(),
            model: m,
            baselines: b.iter().map(|(a, w)| (*a, w)).collect(),
        })
        .collect();
    let r = loss_ratio_cases(&cases, &contents, &STRENGTHS, &LossWeights::default(), &enc).unwrap();
    let at5 = r
        .raw
        .iter()
        .filter(|e| e.alpha == 5.0 && e.model == MODEL_LABEL)
        .map(|m| {
            let b = r
                .raw
                .iter()
                .find(|e| e.alpha == 5.0 && e.model == BASELINE_LABEL && e.style == m.style)
                .unwrap();
            (m.total, b.total)
        })
        .collect();
    (r, at5)
}

/// Recorded from the first run of this exact setup; columns are
/// total, content and style ratio, each as (mean, std) across styles.
const RECORDED: [(f64, [f64; 6]); 3] = [
    (0.1, [5.7969903160, 0.4828013189, 6.0008964751, 0.4172431044, 0.9873934279, 0.0725697209]),
    (1.0, [1.3355029841, 0.0154001587, 1.7140251515, 0.1739022151, 0.8321446581, 0.0040203431]),
    (5.0, [1.0527834713, 0.0298832979, 1.1431574979, 0.0565819661, 0.9978835802, 0.0072153012]),
];

/// Total loss at strength 5, (conditioned model, fixed-5 baseline) per style.
const RECORDED_AT_5: [(f64, f64); 2] = [
    (0.0017210935398409397, 0.001682562565485093),
    (0.0008888537006486079, 0.0008209854831919004),
];

#[test]
fn seeded_desk_ratio_regression() {
    let (r, at5) = desk_ratio_report();
    assert_eq!(r.summary.len(), RECORDED.len());
    for (s, (alpha, want)) in r.summary.iter().zip(RECORDED) {
        assert_eq!(s.alpha, alpha);
        let got = [s.total.mean, s.total.std, s.content.mean, s.content.std, s.style_loss.mean, s.style_loss.std];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= 1e-6, "alpha {alpha}: {got:?}");
        }
    }
    for ((m, b), (wm, wb)) in at5.iter().zip(RECORDED_AT_5) {
        assert!((m - wm).abs() <= 1e-6 * wm && (b - wb).abs() <= 1e-6 * wb, "{at5:?}");
        // the dedicated network wins at its own strength
        assert!(b <= m);
    }
}
