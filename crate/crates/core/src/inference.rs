//! The single stylization path shared by the CLI and the HTTP service.
//!
//! Both front ends call [`Stylizer::stylize_bytes`], so identical inputs give
//! identical PNG bytes no matter which one produced them.

use crate::error::{Error, Result};
use crate::image_io;
use crate::strength::ALPHA_MAX;
use crate::trainer::{load_model, LoadedModel};
use crate::transformer::TransformerWeights;
use crate::Tensor4;
use std::path::Path;

/// Used when a checkpoint carries no training image size.
pub const DEFAULT_IMAGE_SIZE: usize = 64;

/// Parse a strength from user input. Any finite real is accepted.
pub fn parse_alpha(text: &str) -> Result<f64> {
    let a: f64 = text
        .trim()
        .parse()
        .map_err(|_| Error::invalid("alpha", format!("cannot parse {text:?} as a number")))?;
    if !a.is_finite() {
        return Err(Error::invalid("alpha", format!("{text:?} is not finite")));
    }
    Ok(a)
}

/// Outside the trained range `[0, 10]`.
pub fn is_extrapolated(alpha: f64) -> bool {
    !(0.0..=ALPHA_MAX).contains(&alpha)
}

/// Immutable weights plus the working image size.
#[derive(Clone, Debug)]
pub struct Stylizer {
    weights: TransformerWeights,
    image_size: usize,
}

impl Stylizer {
    pub fn new(weights: TransformerWeights, image_size: usize) -> Result<Self> {
        crate::transformer::check_input(crate::Shape4::new(1, 3, image_size, image_size))?;
        Ok(Stylizer { weights, image_size })
    }

    /// Image size: explicit override, else the checkpoint's, else the default.
    pub fn from_model(model: &LoadedModel, size_override: Option<usize>) -> Result<Self> {
        let size = size_override
            .or(model.meta.image_size)
            .unwrap_or(DEFAULT_IMAGE_SIZE);
        Stylizer::new(model.weights.clone(), size)
    }

    pub fn load(path: impl AsRef<Path>, size_override: Option<usize>) -> Result<Self> {
        Stylizer::from_model(&load_model(path)?, size_override)
    }

    pub fn weights(&self) -> &TransformerWeights {
        &self.weights
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    /// Decode PNG/PPM bytes, resize and crop to the working size, run the
    /// transformer at `alpha` and encode the result as PNG.
    pub fn stylize_bytes(&self, bytes: &[u8], alpha: f64) -> Result<Vec<u8>> {
        image_io::encode_png(&self.stylize_image(bytes, alpha)?)
    }

    /// As [`Stylizer::stylize_bytes`], stopping before PNG encoding.
    pub fn stylize_image(&self, bytes: &[u8], alpha: f64) -> Result<Tensor4> {
        if !alpha.is_finite() {
            return Err(Error::invalid("alpha", format!("{alpha} is not finite")));
        }
        let x = image_io::decode_image(bytes, Some(self.image_size))?;
        self.weights.stylize(&x, alpha)
    }
}
