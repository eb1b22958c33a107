//! Randomized-strength training.
//!
//! Each minibatch draws one strength from the grid `{0.0, 0.1, ..., 10.0}`,
//! stylizes the batch at that strength and minimizes the total loss with the
//! style term scaled by the same strength. A fixed-strength schedule trains
//! the classic one-network-per-strength baseline with the same machinery.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamState};
use crate::checkpoint::{Checkpoint, StoredTensor};
use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::image_io;
use crate::loss::{self, LossBreakdown, LossWeights, StyleTarget};
use crate::rng::XorShift64Star;
use crate::strength::{grid_value, GRID_LEN};
use crate::tape::Tape;
use crate::tensor::Tensor4;
use crate::transformer::{self, init_weights, ArchitectureConfig, TransformerWeights};

fn default_image_size() -> usize {
    64
}
fn default_batch_size() -> usize {
    4
}
fn default_epochs() -> usize {
    1
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_lambda_content() -> f64 {
    LossWeights::default().lambda_content
}
fn default_lambda_style() -> f64 {
    LossWeights::default().lambda_style
}
fn default_lambda_tv() -> f64 {
    LossWeights::default().lambda_tv
}
fn default_widths() -> [usize; 3] {
    ArchitectureConfig::default().widths
}
fn default_residual_blocks() -> usize {
    ArchitectureConfig::default().residual_blocks
}

/// Training configuration. The JSON config file uses exactly these keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_lambda_content")]
    pub lambda_content: f64,
    #[serde(default = "default_lambda_style")]
    pub lambda_style: f64,
    #[serde(default = "default_lambda_tv")]
    pub lambda_tv: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_widths")]
    pub widths: [usize; 3],
    #[serde(default = "default_residual_blocks")]
    pub residual_blocks: usize,
    pub content_dir: PathBuf,
    pub style_image_path: PathBuf,
    pub checkpoint_out: PathBuf,
    /// JSON-lines training log; skipped when absent.
    #[serde(default)]
    pub log_out: Option<PathBuf>,
}

impl TrainConfig {
    /// Desk-scale defaults with the given paths.
    pub fn new(
        content_dir: impl Into<PathBuf>,
        style_image_path: impl Into<PathBuf>,
        checkpoint_out: impl Into<PathBuf>,
    ) -> Self {
        TrainConfig {
            image_size: default_image_size(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            lambda_content: default_lambda_content(),
            lambda_style: default_lambda_style(),
            lambda_tv: default_lambda_tv(),
            seed: 0,
            widths: default_widths(),
            residual_blocks: default_residual_blocks(),
            content_dir: content_dir.into(),
            style_image_path: style_image_path.into(),
            checkpoint_out: checkpoint_out.into(),
            log_out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_json(&text)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_content: self.lambda_content,
            lambda_style: self.lambda_style,
            lambda_tv: self.lambda_tv,
        }
    }

    pub fn architecture(&self) -> ArchitectureConfig {
        ArchitectureConfig {
            widths: self.widths,
            residual_blocks: self.residual_blocks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return Err(Error::Config(format!(
                "image_size must be a positive multiple of 16, got {}",
                self.image_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.loss_weights().validate()?;
        self.architecture().validate()
    }
}

/// Draw one strength uniformly from the 101-point grid.
pub fn sample_strength(rng: &mut XorShift64Star) -> f64 {
    grid_value(rng.below(GRID_LEN as u64) as usize)
}

/// Strength generator seeded from the run seed and the step index.
pub fn step_rng(seed: u64, step: usize) -> XorShift64Star {
    XorShift64Star::with_stream(seed, step as u64)
}

/// How each minibatch picks its strength.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StrengthSchedule {
    /// Uniform over the grid, one draw per minibatch.
    Random,
    Fixed(f64),
}

impl StrengthSchedule {
    fn alpha(&self, seed: u64, step: usize) -> f64 {
        match *self {
            StrengthSchedule::Random => sample_strength(&mut step_rng(seed, step)),
            StrengthSchedule::Fixed(a) => a,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub alpha: f64,
    pub content: f64,
    pub style: f64,
    pub tv: f64,
    pub total: f64,
}

impl LogRecord {
    fn new(step: usize, b: &LossBreakdown) -> Self {
        LogRecord {
            step,
            alpha: b.alpha_used,
            content: b.content,
            style: b.style,
            tv: b.tv,
            total: b.total,
        }
    }

    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            content: self.content,
            style: self.style,
            tv: self.tv,
            total: self.total,
            alpha_used: self.alpha,
        }
    }
}

pub fn write_log(records: &[LogRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("plain struct serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("log line: {e}"))))
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: TransformerWeights,
    pub log: Vec<LogRecord>,
}

/// Train on in-memory images (`1 x 3 x s x s` each, already at `cfg.image_size`).
pub fn train_on_images(
    cfg: &TrainConfig,
    contents: &[Tensor4],
    style: &Tensor4,
    enc: &EncoderWeights,
    schedule: StrengthSchedule,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if contents.is_empty() {
        return Err(Error::Dataset("empty dataset: no content images".into()));
    }
    if let StrengthSchedule::Fixed(a) = schedule {
        if !a.is_finite() {
            return Err(Error::Config(format!("fixed strength must be finite, got {a}")));
        }
    }
    let lw = cfg.loss_weights();
    let target = StyleTarget::from_image(style, enc)?;
    let mut weights = init_weights(&cfg.architecture(), cfg.seed)?;
    let mut adam = AdamState::new();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..contents.len()).collect();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        XorShift64Star::with_stream(cfg.seed ^ 0x5348_5546_464C_4521, epoch as u64).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Tensor4> = chunk.iter().map(|&i| contents[i].clone()).collect();
            let x = Tensor4::stack(&batch)?;
            let alpha = schedule.alpha(cfg.seed, step);

            let mut tape = Tape::new();
            let vars = weights.register(&mut tape, true);
            let xv = tape.constant(x);
            let y = transformer::forward(&mut tape, xv, &vars, alpha)?;
            let lv = loss::total_loss(&mut tape, xv, y, &target, alpha, &lw, enc)?;
            let b = lv.breakdown(&tape, alpha);
            if !(b.total.is_finite() && b.content.is_finite() && b.style.is_finite()) {
                return Err(Error::NonFiniteLoss { step, alpha });
            }
            tape.backward(lv.total)?;
            let grads: BTreeMap<String, Tensor4> = vars
                .iter()
                .map(|(name, v)| {
                    let g = tape
                        .grad(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor4::zeros(tape.value(v).shape()));
                    (name.to_string(), g)
                })
                .collect();
            // Instance norm can keep the loss finite while the backward pass
            // overflows; never let such an update reach the weights.
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    step,
                    alpha,
                    param: name.clone(),
                });
            }
            adam_step(weights.iter_mut(), &grads, &mut adam, cfg.learning_rate)?;

            if step % 25 == 0 {
                info!(
                    "step {step} alpha {alpha:.1} total {:.5} content {:.5} style {:.5}",
                    b.total, b.content, b.style
                );
            }
            log.push(LogRecord::new(step, &b));
            step += 1;
        }
    }
    Ok(TrainOutcome { weights, log })
}

/// Every `.png` / `.ppm` file in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let ext = p
            .extension()
            .and_then(|x| x.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "ppm")) && p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_dataset(dir: &Path, size: usize) -> Result<Vec<Tensor4>> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "empty dataset: no .png or .ppm files in {}",
            dir.display()
        )));
    }
    files
        .iter()
        .map(|p| image_io::load_image(p, Some(size)))
        .collect()
}

fn run_from_files(
    cfg: &TrainConfig,
    enc: &EncoderWeights,
    schedule: StrengthSchedule,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let contents = load_dataset(&cfg.content_dir, cfg.image_size)?;
    let style = image_io::load_image(&cfg.style_image_path, Some(cfg.image_size))?;
    let outcome = train_on_images(cfg, &contents, &style, enc, schedule)?;
    let meta = ModelMeta {
        image_size: Some(cfg.image_size),
        seed: Some(cfg.seed),
    };
    save_checkpoint_with_meta(&outcome.weights, &meta, &cfg.checkpoint_out)?;
    if let Some(p) = &cfg.log_out {
        write_log(&outcome.log, p)?;
    }
    Ok(outcome)
}

/// Train from the files named in `cfg`, then write the checkpoint (and the
/// log, if configured).
pub fn train(cfg: &TrainConfig, enc: &EncoderWeights) -> Result<TrainOutcome> {
    run_from_files(cfg, enc, StrengthSchedule::Random)
}

/// As [`train`], with the strength held at `alpha` for every minibatch.
pub fn train_fixed_strength(cfg: &TrainConfig, alpha: f64, enc: &EncoderWeights) -> Result<TrainOutcome> {
    run_from_files(cfg, enc, StrengthSchedule::Fixed(alpha))
}

// ---------------------------------------------------------------------------
// model files

/// Training metadata stored next to the weights under `meta.*` names.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ModelMeta {
    pub image_size: Option<usize>,
    pub seed: Option<u64>,
}

const META_IMAGE_SIZE: &str = "meta.image_size";
/// The seed as four 16-bit limbs, least significant first; each is exact in f32.
const META_SEED: &str = "meta.seed";

impl ModelMeta {
    fn write(&self, ck: &mut Checkpoint) {
        if let Some(s) = self.image_size {
            ck.insert(META_IMAGE_SIZE, StoredTensor::new(vec![], vec![s as f32]));
        }
        if let Some(seed) = self.seed {
            let limbs = (0..4).map(|i| ((seed >> (16 * i)) & 0xFFFF) as f32).collect();
            ck.insert(META_SEED, StoredTensor::new(vec![4], limbs));
        }
    }

    fn read(ck: &Checkpoint) -> Self {
        let image_size = ck
            .get(META_IMAGE_SIZE)
            .and_then(|t| t.data.first())
            .map(|&v| v as usize);
        let seed = ck.get(META_SEED).filter(|t| t.data.len() == 4).map(|t| {
            t.data
                .iter()
                .enumerate()
                .fold(0u64, |acc, (i, &v)| acc | ((v as u64) << (16 * i)))
        });
        ModelMeta { image_size, seed }
    }
}

/// Weights as loaded from disk, with metadata and the file's CRC.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub weights: TransformerWeights,
    pub meta: ModelMeta,
    pub crc: u32,
}

pub fn save_checkpoint(weights: &TransformerWeights, path: impl AsRef<Path>) -> Result<()> {
    weights.to_checkpoint().save(path)
}

pub fn save_checkpoint_with_meta(
    weights: &TransformerWeights,
    meta: &ModelMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut ck = weights.to_checkpoint();
    meta.write(&mut ck);
    ck.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TransformerWeights> {
    Ok(load_model(path)?.weights)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    let crc = crate::checkpoint::stored_crc(&bytes).expect("validated checkpoint has a trailer");
    Ok(LoadedModel {
        weights: TransformerWeights::from_checkpoint(&ck)?,
        meta: ModelMeta::read(&ck),
        crc,
    })
}
