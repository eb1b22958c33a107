//! Procedural images for demos and tests, so nothing depends on external data.

use std::f64::consts::PI;

use crate::rng::XorShift64Star;
use crate::tensor::{Shape4, Tensor4};

/// Smooth scene-like content: a color gradient with a few soft discs.
pub fn content_image(size: usize, seed: u64) -> Tensor4 {
    let mut rng = XorShift64Star::new(seed);
    let base: [f64; 3] = [rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)];
    let tilt: [f64; 3] = [rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)];
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                rng.uniform(0.2, 0.8),
                rng.uniform(0.2, 0.8),
                rng.uniform(0.1, 0.25),
                [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)],
            )
        })
        .collect();
    let s = size as f64;
    Tensor4::from_fn(Shape4::new(1, 3, size, size), |_, c, y, x| {
        let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
        let mut val = base[c] + tilt[c] * (u - v);
        for &(cx, cy, r, col) in &discs {
            let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
            let w = 1.0 / (1.0 + ((d - r) * 40.0).exp());
            val = val * (1.0 - w) + col[c] * w;
        }
        val.clamp(0.0, 1.0)
    })
}

/// High-frequency textured style: colored diagonal stripes over a checker.
pub fn style_image(size: usize, seed: u64) -> Tensor4 {
    let mut rng = XorShift64Star::new(seed);
    let period = rng.uniform(5.0, 9.0);
    let angle = rng.uniform(0.0, PI);
    let (ca, sa) = (angle.cos(), angle.sin());
    let palette: Vec<[f64; 3]> = (0..2)
        .map(|_| [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)])
        .collect();
    let check = rng.uniform(3.0, 6.0).round() as usize;
    Tensor4::from_fn(Shape4::new(1, 3, size, size), |_, c, y, x| {
        let t = ((x as f64 * ca + y as f64 * sa) * 2.0 * PI / period).sin() * 0.5 + 0.5;
        let chk = if ((x / check) + (y / check)) % 2 == 0 { 0.15 } else { -0.15 };
        (palette[0][c] * t + palette[1][c] * (1.0 - t) + chk).clamp(0.0, 1.0)
    })
}
