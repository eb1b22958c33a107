//! Frozen convolutional feature extractor for the perceptual losses.
//!
//! Four stages of `conv3x3 (reflect pad 1) -> relu -> 2x2 average pool`
//! with widths 16, 32, 64, 128. Stage 3 is the content layer; all four
//! stages are style layers. Weights are either generated from a seed or
//! imported from a checkpoint holding `enc.stage{s}.weight` / `enc.stage{s}.bias`.
//! Encoder tensors are only ever recorded on a tape as constants, so they
//! never receive gradients.

use std::path::Path;

use crate::checkpoint::{Checkpoint, StoredTensor};
use crate::error::{Error, Result};
use crate::rng::XorShift64Star;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape4, Tensor4};

pub const STAGE_WIDTHS: [usize; 4] = [16, 32, 64, 128];
pub const INPUT_CHANNELS: usize = 3;
/// Index (0-based) of the content stage.
pub const CONTENT_STAGE: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage {
    pub weight: Tensor4,
    pub bias: Tensor4,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    stages: Vec<EncoderStage>,
    seed: Option<u64>,
}

impl EncoderWeights {
    pub fn stages(&self) -> &[EncoderStage] {
        &self.stages
    }

    /// Seed the weights were generated from; `None` for imported weights.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Always true: there is no API that trains an encoder.
    pub fn is_frozen(&self) -> bool {
        true
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (s, st) in self.stages.iter().enumerate() {
            let w = st.weight.shape();
            ck.insert(
                weight_name(s),
                StoredTensor::new(w.dims().to_vec(), to_f32(&st.weight)),
            );
            ck.insert(bias_name(s), StoredTensor::new(vec![w.n], to_f32(&st.bias)));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut stages = Vec::with_capacity(STAGE_WIDTHS.len());
        let mut c_in = INPUT_CHANNELS;
        for (s, &c_out) in STAGE_WIDTHS.iter().enumerate() {
            let w = ck.expect(&weight_name(s), &[c_out, c_in, 3, 3])?;
            let b = ck.expect(&bias_name(s), &[c_out])?;
            stages.push(EncoderStage {
                weight: Tensor4::new(Shape4::new(c_out, c_in, 3, 3), from_f32(&w.data))?,
                bias: Tensor4::vector(from_f32(&b.data)),
            });
            c_in = c_out;
        }
        Ok(EncoderWeights { stages, seed: None })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }
}

fn weight_name(stage: usize) -> String {
    format!("enc.stage{}.weight", stage + 1)
}

fn bias_name(stage: usize) -> String {
    format!("enc.stage{}.bias", stage + 1)
}

fn to_f32(t: &Tensor4) -> Vec<f32> {
    t.data().iter().map(|&v| v as f32).collect()
}

fn from_f32(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Deterministic He-style initialization from `seed`: each conv weight is
/// `N(0, 2 / (c_in * 9))` drawn with [`XorShift64Star`] and rounded to the
/// nearest `f32`, biases are zero. Rounding makes the weights survive the
/// `f32` checkpoint format bit-for-bit.
pub fn generate_encoder(seed: u64) -> EncoderWeights {
    let mut rng = XorShift64Star::new(seed);
    let mut c_in = INPUT_CHANNELS;
    let stages = STAGE_WIDTHS
        .iter()
        .map(|&c_out| {
            let std = (2.0 / (c_in * 9) as f64).sqrt();
            let shape = Shape4::new(c_out, c_in, 3, 3);
            let weight = Tensor4::from_fn(shape, |_, _, _, _| ((rng.normal() * std) as f32) as f64);
            c_in = c_out;
            EncoderStage {
                weight,
                bias: Tensor4::vector(vec![0.0; c_out]),
            }
        })
        .collect();
    EncoderWeights {
        stages,
        seed: Some(seed),
    }
}

/// Load encoder weights from a checkpoint file.
pub fn import_encoder(path: impl AsRef<Path>) -> Result<EncoderWeights> {
    EncoderWeights::from_checkpoint(&Checkpoint::load(path)?)
}

/// Per-stage features of one encoded batch, as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct FeatureSet {
    pub stages: [Var; 4],
}

impl FeatureSet {
    pub fn content(&self) -> Var {
        self.stages[CONTENT_STAGE]
    }

    pub fn style(&self) -> &[Var] {
        &self.stages
    }
}

pub fn check_input(shape: Shape4) -> Result<()> {
    if shape.c != INPUT_CHANNELS {
        return Err(Error::shape(
            "encode",
            format!("expected {INPUT_CHANNELS} channels, got {}", shape.c),
        ));
    }
    if shape.h == 0 || shape.w == 0 || shape.h % 16 != 0 || shape.w % 16 != 0 {
        return Err(Error::shape(
            "encode",
            format!("spatial dims {}x{} must be positive multiples of 16", shape.h, shape.w),
        ));
    }
    Ok(())
}

/// Run the encoder on `x`. Gradients reach `x` (if it requires them) but
/// never the encoder weights.
pub fn encode(tape: &mut Tape, x: Var, enc: &EncoderWeights) -> Result<FeatureSet> {
    check_input(tape.value(x).shape())?;
    let mut h = x;
    let mut out = [x; 4];
    for (s, st) in enc.stages.iter().enumerate() {
        let w = tape.constant(st.weight.clone());
        let b = tape.constant(st.bias.clone());
        let conv = tape.conv2d(h, w, b, 1, 1)?;
        let act = tape.relu(conv);
        h = tape.avg_pool(act, 2)?;
        out[s] = h;
    }
    Ok(FeatureSet { stages: out })
}

/// Feature values for an image, without any gradient bookkeeping.
pub fn encode_values(x: &Tensor4, enc: &EncoderWeights) -> Result<Vec<Tensor4>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let f = encode(&mut tape, xv, enc)?;
    Ok(f.stages.iter().map(|&v| tape.value(v).clone()).collect())
}
