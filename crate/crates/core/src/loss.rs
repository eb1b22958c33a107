//! Content, style and total-variation losses and their strength-weighted sum.

use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderWeights, FeatureSet};
use crate::error::{Error, Result};
use crate::ops;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_content: f64,
    pub lambda_style: f64,
    pub lambda_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_content: 1.0,
            lambda_style: 5.0,
            lambda_tv: 1e-5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_content", self.lambda_content),
            ("lambda_style", self.lambda_style),
            ("lambda_tv", self.lambda_tv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `lambda_content * content + alpha * lambda_style * style + lambda_tv * tv`.
    pub fn combine(&self, content: f64, style: f64, tv: f64, alpha: f64) -> f64 {
        self.lambda_content * content + alpha * self.lambda_style * style + self.lambda_tv * tv
    }
}

/// Loss components for one batch at one strength.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub content: f64,
    pub style: f64,
    pub tv: f64,
    pub total: f64,
    pub alpha_used: f64,
}

impl LossBreakdown {
    /// Relative deviation of `total` from the weighted sum of its parts.
    pub fn consistency_error(&self, lw: &LossWeights) -> f64 {
        let expect = lw.combine(self.content, self.style, self.tv, self.alpha_used);
        (self.total - expect).abs() / expect.abs().max(f64::MIN_POSITIVE)
    }
}

/// Gram matrices of a style image at every style layer, each `1 x 1 x c x c`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTarget {
    grams: Vec<Tensor4>,
}

impl StyleTarget {
    pub fn from_image(style: &Tensor4, enc: &EncoderWeights) -> Result<Self> {
        if style.shape().n != 1 {
            return Err(Error::shape(
                "StyleTarget",
                format!("style image must be a single sample, got {}", style.shape()),
            ));
        }
        let feats = encoder::encode_values(style, enc)?;
        let grams = feats.iter().map(ops::gram).collect::<Result<_>>()?;
        Ok(StyleTarget { grams })
    }

    pub fn from_grams(grams: Vec<Tensor4>) -> Result<Self> {
        for g in &grams {
            let s = g.shape();
            if s.n != 1 || s.c != 1 || s.h != s.w {
                return Err(Error::shape("StyleTarget", format!("gram has shape {s}")));
            }
        }
        Ok(StyleTarget { grams })
    }

    pub fn grams(&self) -> &[Tensor4] {
        &self.grams
    }

    /// Target for layer `s`, replicated over a batch of `n`.
    fn batched(&self, s: usize, n: usize) -> Tensor4 {
        if n == 1 {
            return self.grams[s].clone();
        }
        Tensor4::stack(&vec![self.grams[s].clone(); n]).expect("identical shapes")
    }
}

/// MSE between content-layer features.
pub fn content_loss(tape: &mut Tape, y: &FeatureSet, x: &FeatureSet) -> Result<Var> {
    tape.mse(y.content(), x.content())
}

/// `sum_s ||gram(y_s) - G_s||_F^2 / c_s^2`, averaged over the batch.
pub fn style_loss(tape: &mut Tape, y: &FeatureSet, target: &StyleTarget) -> Result<Var> {
    if target.grams.len() != y.style().len() {
        return Err(Error::shape(
            "style_loss",
            format!("{} style layers vs {} target grams", y.style().len(), target.grams.len()),
        ));
    }
    let mut acc = None;
    for (s, &f) in y.style().iter().enumerate() {
        let fs = tape.value(f).shape();
        let tc = target.grams[s].shape().h;
        if fs.c != tc {
            return Err(Error::shape(
                "style_loss",
                format!("layer {} has {} channels, target gram is {tc}x{tc}", s + 1, fs.c),
            ));
        }
        let g = tape.gram(f)?;
        let t = tape.constant(target.batched(s, fs.n));
        let term = tape.mse(g, t)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    acc.ok_or_else(|| Error::invalid("style_loss", "no style layers"))
}

/// Loss variables recorded on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub content: Var,
    pub style: Var,
    pub tv: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape, alpha: f64) -> LossBreakdown {
        let v = |x: Var| tape.value(x).data()[0];
        LossBreakdown {
            content: v(self.content),
            style: v(self.style),
            tv: v(self.tv),
            total: v(self.total),
            alpha_used: alpha,
        }
    }
}

/// Full objective for stylized output `y` against content `x_c`. The style
/// term is multiplied by `alpha`. Gradients flow into `y` only.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    x_c: Var,
    y: Var,
    target: &StyleTarget,
    alpha: f64,
    lw: &LossWeights,
    enc: &EncoderWeights,
) -> Result<LossVars> {
    let (xs, ys) = (tape.value(x_c).shape(), tape.value(y).shape());
    if xs != ys {
        return Err(Error::shape("total_loss", format!("content {xs} vs output {ys}")));
    }
    let xf = encoder::encode(tape, x_c, enc)?;
    let yf = encoder::encode(tape, y, enc)?;
    let content = content_loss(tape, &yf, &xf)?;
    let style = style_loss(tape, &yf, target)?;
    let tv = tape.total_variation(y)?;
    let c = tape.scale(content, lw.lambda_content);
    let s = tape.scale(style, alpha * lw.lambda_style);
    let t = tape.scale(tv, lw.lambda_tv);
    let cs = tape.add(c, s)?;
    let total = tape.add(cs, t)?;
    Ok(LossVars {
        content,
        style,
        tv,
        total,
    })
}

/// Evaluate the objective on plain tensors, without gradients.
pub fn evaluate_loss(
    x_c: &Tensor4,
    y: &Tensor4,
    target: &StyleTarget,
    alpha: f64,
    lw: &LossWeights,
    enc: &EncoderWeights,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let xv = tape.constant(x_c.clone());
    let yv = tape.constant(y.clone());
    let vars = total_loss(&mut tape, xv, yv, target, alpha, lw, enc)?;
    Ok(vars.breakdown(&tape, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::generate_encoder;
    use crate::rng::XorShift64Star;
    use crate::tensor::Shape4;

    fn image(seed: u64) -> Tensor4 {
        let mut r = XorShift64Star::new(seed);
        Tensor4::from_fn(Shape4::new(1, 3, 32, 32), |_, _, _, _| r.next_f64())
    }

    #[test]
    fn identical_images_at_zero_strength() {
        let enc = generate_encoder(1);
        let x = image(1);
        let target = StyleTarget::from_image(&image(2), &enc).unwrap();
        let lw = LossWeights::default();
        let b = evaluate_loss(&x, &x, &target, 0.0, &lw, &enc).unwrap();
        assert_eq!(b.content, 0.0);
        assert_eq!(b.total, lw.lambda_tv * ops::total_variation(&x).unwrap());
    }

    #[test]
    fn matching_grams_give_zero_style_loss() {
        let enc = generate_encoder(1);
        let s = image(3);
        let target = StyleTarget::from_image(&s, &enc).unwrap();
        let b = evaluate_loss(&image(4), &s, &target, 1.0, &LossWeights::default(), &enc).unwrap();
        assert_eq!(b.style, 0.0);
    }

    #[test]
    fn single_layer_worked_example() {
        let mut tape = Tape::new();
        let f = tape.constant(Tensor4::new(Shape4::new(1, 2, 1, 2), vec![1.0, 1.0, 0.0, 0.0]).unwrap());
        let feats = FeatureSet { stages: [f; 4] };
        let zero = Tensor4::zeros(Shape4::new(1, 1, 2, 2));
        let target = StyleTarget::from_grams(vec![zero; 4]).unwrap();
        let l = style_loss(&mut tape, &feats, &target).unwrap();
        // four identical layers, each 0.25 / 4
        assert_eq!(tape.value(l).item().unwrap(), 4.0 * 0.0625);
    }

    #[test]
    fn breakdown_invariant_and_alpha_linearity() {
        let enc = generate_encoder(1);
        let x = image(5);
        let y = image(6);
        let target = StyleTarget::from_image(&image(7), &enc).unwrap();
        let lw = LossWeights::default();
        let b0 = evaluate_loss(&x, &y, &target, 0.0, &lw, &enc).unwrap();
        let b10 = evaluate_loss(&x, &y, &target, 10.0, &lw, &enc).unwrap();
        assert_eq!(b0.content, b10.content);
        assert_eq!(b0.tv, b10.tv);
        let slope = 10.0 * lw.lambda_style * b10.style;
        assert!(((b10.total - b0.total) - slope).abs() <= 1e-12 * b10.total);
        assert!(b0.consistency_error(&lw) <= 1e-12);
        assert!(b10.consistency_error(&lw) <= 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let enc = generate_encoder(1);
        let target = StyleTarget::from_image(&image(7), &enc).unwrap();
        let big = Tensor4::zeros(Shape4::new(1, 3, 48, 48));
        assert!(evaluate_loss(&image(1), &big, &target, 1.0, &LossWeights::default(), &enc).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            lambda_style: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
