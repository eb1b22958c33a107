//! Compare one strength-conditioned model against dedicated fixed-strength
//! baselines and print the loss ratios per strength.
//!
//! Everything is trained from scratch at 16px, so it finishes in seconds.

use strength_transfer::encoder::generate_encoder;
use strength_transfer::eval::{loss_ratio, NamedStyle};
use strength_transfer::loss::StyleTarget;
use strength_transfer::synthetic::{content_image, style_image};
use strength_transfer::trainer::{train_on_images, StrengthSchedule, TrainConfig};

fn main() -> strength_transfer::Result<()> {
    let enc = generate_encoder(0);
    let contents = vec![content_image(16, 0), content_image(16, 1)];
    let style = style_image(16, 10);
    let mut cfg = TrainConfig::new("-", "-", "-");
    cfg.image_size = 16;
    cfg.batch_size = 1;
    cfg.epochs = 20;
    cfg.widths = [8, 16, 32];
    cfg.seed = 3;

    let strengths = [0.1, 1.0, 5.0];
    let model = train_on_images(&cfg, &contents, &style, &enc, StrengthSchedule::Random)?.weights;
    let baselines = strengths
        .iter()
        .map(|&a| Ok((a, train_on_images(&cfg, &contents, &style, &enc, StrengthSchedule::Fixed(a))?.weights)))
        .collect::<strength_transfer::Result<Vec<_>>>()?;
    let refs: Vec<_> = baselines.iter().map(|(a, w)| (*a, w)).collect();
    let styles = [NamedStyle { name: "style10".into(), target: StyleTarget::from_image(&style, &enc)? }];

    let report = loss_ratio(&model, &refs, &contents, &styles, &strengths, &cfg.loss_weights(), &enc)?;
    println!("{:>6}  {:>12}  {:>12}  {:>12}", "alpha", "total", "content", "style");
    for s in &report.summary {
        println!("{:>6.1}  {:>12.4}  {:>12.4}  {:>12.4}", s.alpha, s.total.mean, s.content.mean, s.style_loss.mean);
    }
    print!("{}", report.to_csv()?);
    Ok(())
}
