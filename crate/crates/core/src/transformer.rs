//! Strength-conditioned image transformer.
//!
//! ```text
//! conv 9x9 /1  -> IN -> relu        (w1)
//! conv 3x3 /2  -> IN -> relu        (w2)
//! conv 3x3 /2  -> IN -> relu        (w3)
//! R x  u + gamma(alpha, beta_i) * f_i(u),  f_i = conv-IN-relu-conv-IN   (w3)
//! upsample x2 -> conv 3x3 -> IN -> relu   (w2)
//! upsample x2 -> conv 3x3 -> IN -> relu   (w1)
//! conv 9x9 -> sigmoid               (3)
//! ```
//!
//! All convolutions use reflection padding of `k / 2`. At `alpha == 0` every
//! residual gate is zero and the residual stack is the identity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, StoredTensor};
use crate::error::{CheckpointError, Error, Result};
use crate::rng::XorShift64Star;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape4, Tensor4};

pub use crate::strength::gamma;

pub const IN_EPS: f64 = 1e-5;
const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    /// Widths of the three downsampling convolutions.
    pub widths: [usize; 3],
    pub residual_blocks: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            widths: [32, 64, 128],
            residual_blocks: 5,
        }
    }
}

impl ArchitectureConfig {
    /// Narrow network for fast test suites.
    pub fn test_preset() -> Self {
        ArchitectureConfig {
            widths: [8, 16, 32],
            residual_blocks: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(Error::Config(format!("widths must be positive, got {:?}", self.widths)));
        }
        if self.residual_blocks == 0 {
            return Err(Error::Config("need at least one residual block".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// He-normal with the given fan-in.
    Conv { fan_in: usize },
    Zero,
    One,
}

#[derive(Clone, Debug)]
struct ParamSpec {
    name: String,
    shape: Shape4,
    /// Logical dims used in checkpoints.
    dims: Vec<usize>,
    init: Init,
}

fn conv_specs(out: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, c_out: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: Shape4::new(c_out, c_in, k, k),
        dims: vec![c_out, c_in, k, k],
        init: Init::Conv { fan_in: c_in * k * k },
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: Shape4::new(1, c_out, 1, 1),
        dims: vec![c_out],
        init: Init::Zero,
    });
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, c: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.gain"),
        shape: Shape4::new(1, c, 1, 1),
        dims: vec![c],
        init: Init::One,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.shift"),
        shape: Shape4::new(1, c, 1, 1),
        dims: vec![c],
        init: Init::Zero,
    });
}

/// Every parameter in construction order.
fn param_specs(cfg: &ArchitectureConfig) -> Vec<ParamSpec> {
    let [w1, w2, w3] = cfg.widths;
    let mut s = Vec::new();
    conv_specs(&mut s, "t.conv1", IMAGE_CHANNELS, w1, 9);
    norm_specs(&mut s, "t.in1", w1);
    conv_specs(&mut s, "t.conv2", w1, w2, 3);
    norm_specs(&mut s, "t.in2", w2);
    conv_specs(&mut s, "t.conv3", w2, w3, 3);
    norm_specs(&mut s, "t.in3", w3);
    for i in 1..=cfg.residual_blocks {
        conv_specs(&mut s, &format!("t.res{i}.conv1"), w3, w3, 3);
        norm_specs(&mut s, &format!("t.res{i}.in1"), w3);
        conv_specs(&mut s, &format!("t.res{i}.conv2"), w3, w3, 3);
        norm_specs(&mut s, &format!("t.res{i}.in2"), w3);
        s.push(ParamSpec {
            name: format!("t.res{i}.beta"),
            shape: Shape4::scalar(),
            dims: vec![],
            init: Init::One,
        });
    }
    conv_specs(&mut s, "t.conv4", w3, w2, 3);
    norm_specs(&mut s, "t.in4", w2);
    conv_specs(&mut s, "t.conv5", w2, w1, 3);
    norm_specs(&mut s, "t.in5", w1);
    conv_specs(&mut s, "t.conv6", w1, IMAGE_CHANNELS, 9);
    s
}

pub fn beta_name(block: usize) -> String {
    format!("t.res{block}.beta")
}

/// Whether `name` belongs to a residual branch `f_i` (including its beta).
pub fn is_residual_param(name: &str) -> bool {
    name.starts_with("t.res")
}

/// Whether `name` is a convolution bias that feeds straight into instance
/// normalization. Such biases are cancelled by the mean subtraction and have
/// an identically zero gradient.
pub fn is_normalized_bias(name: &str) -> bool {
    name.ends_with(".bias") && !name.starts_with("t.conv6")
}

/// Whether the gradient of `name` is identically zero for structural
/// reasons: biases feeding instance norm, and the output shift of each
/// residual branch (a per-channel constant on the residual stream passes
/// through reflection-padded convolutions unchanged and is removed by the
/// next instance norm).
pub fn has_structural_zero_grad(name: &str) -> bool {
    is_normalized_bias(name) || (is_residual_param(name) && name.ends_with(".in2.shift"))
}

/// All trainable parameters of the transformer, keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerWeights {
    config: ArchitectureConfig,
    params: BTreeMap<String, Tensor4>,
}

impl TransformerWeights {
    pub fn config(&self) -> ArchitectureConfig {
        self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor4> {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4> {
        self.params.get(name)
    }

    /// Mutable access for optimizers and tests; the name set is fixed.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor4> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor4)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn betas(&self) -> Vec<f64> {
        (1..=self.config.residual_blocks)
            .map(|i| self.params[&beta_name(i)].data()[0])
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor4::numel).sum()
    }

    /// Record every parameter on `tape`, trainable or constant.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
            .collect();
        ParamVars {
            config: self.config,
            vars,
        }
    }

    /// Inference: `T_w(x, alpha)` with no gradient bookkeeping.
    pub fn stylize(&self, x: &Tensor4, alpha: f64) -> Result<Tensor4> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = forward(&mut tape, xv, &vars, alpha)?;
        Ok(tape.value(y).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for spec in param_specs(&self.config) {
            let t = &self.params[&spec.name];
            ck.insert(
                spec.name,
                StoredTensor::new(spec.dims, t.data().iter().map(|&v| v as f32).collect()),
            );
        }
        ck
    }

    /// Rebuild weights from a checkpoint, inferring the architecture from
    /// tensor shapes. Tensors under `meta.` are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let lead = |name: &str| -> Result<usize, CheckpointError> {
            let t = ck
                .get(name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
            t.dims.first().copied().ok_or_else(|| CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: vec![0, 0, 0, 0],
                found: t.dims.clone(),
            })
        };
        let widths = [lead("t.conv1.weight")?, lead("t.conv2.weight")?, lead("t.conv3.weight")?];
        let mut residual_blocks = 0;
        while ck.get(&beta_name(residual_blocks + 1)).is_some() {
            residual_blocks += 1;
        }
        let config = ArchitectureConfig {
            widths,
            residual_blocks,
        };
        config.validate()?;
        let specs = param_specs(&config);
        let mut params = BTreeMap::new();
        for spec in &specs {
            let t = ck.expect(&spec.name, &spec.dims)?;
            params.insert(
                spec.name.clone(),
                Tensor4::new(spec.shape, t.data.iter().map(|&v| v as f64).collect())?,
            );
        }
        if let Some(extra) = ck
            .names()
            .find(|n| !n.starts_with("meta.") && !params.contains_key(*n))
        {
            return Err(CheckpointError::UnexpectedTensor(extra.to_string()).into());
        }
        Ok(TransformerWeights { config, params })
    }

    /// Copy with every value rounded to `f32`, i.e. what a checkpoint stores.
    pub fn rounded_to_f32(&self) -> Self {
        let mut w = self.clone();
        for t in w.params.values_mut() {
            t.round_to_f32();
        }
        w
    }
}

/// Deterministic initialization: conv weights `N(0, 2 / (c_in k^2))` rounded
/// to `f32`, biases and IN shifts 0, IN gains 1, every beta 1.
pub fn init_weights(cfg: &ArchitectureConfig, seed: u64) -> Result<TransformerWeights> {
    cfg.validate()?;
    let mut rng = XorShift64Star::new(seed);
    let mut params = BTreeMap::new();
    for spec in param_specs(cfg) {
        let t = match spec.init {
            Init::Conv { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                Tensor4::from_fn(spec.shape, |_, _, _, _| ((rng.normal() * std) as f32) as f64)
            }
            Init::Zero => Tensor4::zeros(spec.shape),
            Init::One => Tensor4::full(spec.shape, 1.0),
        };
        params.insert(spec.name, t);
    }
    Ok(TransformerWeights {
        config: *cfg,
        params,
    })
}

/// Parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct ParamVars {
    config: ArchitectureConfig,
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn config(&self) -> ArchitectureConfig {
        self.config
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid("transformer", format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Wrap variables already on a tape (e.g. from a gradient checker).
    pub fn from_vars(config: ArchitectureConfig, vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        ParamVars {
            config,
            vars: vars.into_iter().collect(),
        }
    }
}

fn conv(tape: &mut Tape, x: Var, p: &ParamVars, prefix: &str, stride: usize) -> Result<Var> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    let pad = tape.value(w).shape().h / 2;
    tape.conv2d(x, w, b, stride, pad)
}

fn norm(tape: &mut Tape, x: Var, p: &ParamVars, prefix: &str) -> Result<Var> {
    let g = p.get(&format!("{prefix}.gain"))?;
    let s = p.get(&format!("{prefix}.shift"))?;
    tape.instance_norm(x, g, s, IN_EPS)
}

fn conv_norm_relu(tape: &mut Tape, x: Var, p: &ParamVars, j: usize, stride: usize) -> Result<Var> {
    let c = conv(tape, x, p, &format!("t.conv{j}"), stride)?;
    let n = norm(tape, c, p, &format!("t.in{j}"))?;
    Ok(tape.relu(n))
}

/// The residual branch `f_i(u) = IN(conv(relu(IN(conv(u)))))` of block `i` (1-based).
pub fn residual_branch(tape: &mut Tape, u: Var, p: &ParamVars, block: usize) -> Result<Var> {
    let width = p.config.widths[2];
    let c = tape.value(u).shape().c;
    if c != width {
        return Err(Error::shape(
            "residual_block",
            format!("input has {c} channels, block width is {width}"),
        ));
    }
    let pre = format!("t.res{block}");
    let h = conv(tape, u, p, &format!("{pre}.conv1"), 1)?;
    let h = norm(tape, h, p, &format!("{pre}.in1"))?;
    let h = tape.relu(h);
    let h = conv(tape, h, p, &format!("{pre}.conv2"), 1)?;
    norm(tape, h, p, &format!("{pre}.in2"))
}

/// `u + gamma(alpha, beta_i) * f_i(u)`, with no activation after the sum.
pub fn residual_block_forward(
    tape: &mut Tape,
    u: Var,
    p: &ParamVars,
    block: usize,
    alpha: f64,
) -> Result<Var> {
    let f = residual_branch(tape, u, p, block)?;
    let gate = tape.strength_gate(p.get(&beta_name(block))?, alpha)?;
    let scaled = tape.mul_scalar(f, gate)?;
    tape.add(u, scaled)
}

pub fn check_input(shape: Shape4) -> Result<()> {
    if shape.c != IMAGE_CHANNELS {
        return Err(Error::shape(
            "transformer",
            format!("expected {IMAGE_CHANNELS} channels, got {}", shape.c),
        ));
    }
    if shape.h < 8 || shape.w < 8 || shape.h % 4 != 0 || shape.w % 4 != 0 {
        return Err(Error::shape(
            "transformer",
            format!("spatial dims {}x{} must be multiples of 4 and at least 8", shape.h, shape.w),
        ));
    }
    Ok(())
}

/// Full network `T_w(x, alpha)` recorded on `tape`. Output values lie in (0, 1).
pub fn forward(tape: &mut Tape, x: Var, p: &ParamVars, alpha: f64) -> Result<Var> {
    if !alpha.is_finite() {
        return Err(Error::invalid("transformer", format!("alpha must be finite, got {alpha}")));
    }
    check_input(tape.value(x).shape())?;
    let mut h = conv_norm_relu(tape, x, p, 1, 1)?;
    h = conv_norm_relu(tape, h, p, 2, 2)?;
    h = conv_norm_relu(tape, h, p, 3, 2)?;
    for i in 1..=p.config.residual_blocks {
        h = residual_block_forward(tape, h, p, i, alpha)?;
    }
    h = tape.nearest_upsample(h, 2)?;
    h = conv_norm_relu(tape, h, p, 4, 1)?;
    h = tape.nearest_upsample(h, 2)?;
    h = conv_norm_relu(tape, h, p, 5, 1)?;
    let out = conv(tape, h, p, "t.conv6", 1)?;
    Ok(tape.sigmoid(out))
}
