//! Render one image at several strengths with a single model.
//!
//! Without arguments a random model and a synthetic content image are used,
//! so the output only shows the mechanics. Pass a checkpoint and an image to
//! sweep a trained model:
//!
//! ```text
//! cargo run --release --example stylize_sweep -- model.ckpt photo.png out/
//! ```

use std::path::PathBuf;

use strength_transfer::image_io::{encode_png, load_image};
use strength_transfer::inference::Stylizer;
use strength_transfer::synthetic::content_image;
use strength_transfer::transformer::{init_weights, ArchitectureConfig};

fn main() -> strength_transfer::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (stylizer, input) = match args.as_slice() {
        [model, image, ..] => {
            let s = Stylizer::load(model, None)?;
            let x = std::fs::read(image).map_err(|e| strength_transfer::Error::Config(format!("{image}: {e}")))?;
            (s, x)
        }
        _ => {
            let w = init_weights(&ArchitectureConfig::test_preset(), 1)?;
            (Stylizer::new(w, 32)?, encode_png(&content_image(32, 1))?)
        }
    };
    let outdir = PathBuf::from(args.get(2).cloned().unwrap_or_else(|| "sweep_out".into()));
    std::fs::create_dir_all(&outdir).expect("create output dir");

    for alpha in [0.0, 0.1, 1.0, 2.5, 5.0, 10.0] {
        let png = stylizer.stylize_bytes(&input, alpha)?;
        let path = outdir.join(format!("out_{alpha:.1}.png"));
        std::fs::write(&path, &png).expect("write png");
        let img = load_image(&path, None)?;
        println!("alpha {alpha:>4.1} -> {} (mean {:.4})", path.display(), img.data().iter().sum::<f64>() / img.numel() as f64);
    }
    Ok(())
}
