//! Train a small strength-conditioned model on a single synthetic pair and
//! watch the loss fall, then probe how style loss responds to α.
//!
//! ```text
//! cargo run --release --example overfit -- 100
//! ```

use strength_transfer::encoder::generate_encoder;
use strength_transfer::loss::{evaluate_loss, StyleTarget};
use strength_transfer::synthetic::{content_image, style_image};
use strength_transfer::trainer::{train_on_images, StrengthSchedule, TrainConfig};
use strength_transfer::transformer::init_weights;

fn main() -> strength_transfer::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let size = 32;
    let enc = generate_encoder(0);
    let (content, style) = (content_image(size, 1), style_image(size, 2));

    let mut cfg = TrainConfig::new("-", "-", "-");
    cfg.image_size = size;
    cfg.batch_size = 1;
    cfg.epochs = steps;
    cfg.widths = [8, 16, 32];

    let target = StyleTarget::from_image(&style, &enc)?;
    let lw = cfg.loss_weights();
    let probe = |w: &strength_transfer::transformer::TransformerWeights, a: f64| {
        evaluate_loss(&content, &w.stylize(&content, a)?, &target, a, &lw, &enc)
    };

    let before = probe(&init_weights(&cfg.architecture(), cfg.seed)?, 5.0)?;
    let out = train_on_images(&cfg, std::slice::from_ref(&content), &style, &enc, StrengthSchedule::Random)?;
    for r in out.log.iter().step_by((steps / 10).max(1)) {
        println!("step {:>4}  alpha {:>4.1}  total {:.6}", r.step, r.alpha, r.total);
    }
    let after = probe(&out.weights, 5.0)?;
    println!("total at alpha 5: {:.6} -> {:.6}", before.total, after.total);
    for a in [0.1, 1.0, 5.0, 10.0] {
        println!("alpha {a:>4.1}  style {:.4e}", probe(&out.weights, a)?.style);
    }
    Ok(())
}
