//! `stylectl`: training, stylization, strength sweeps, evaluation, gradient
//! checking and the HTTP service behind one command.
//!
//! Exit codes: 0 success, 1 gradient check failed (or another runtime
//! failure), 2 bad arguments, config or input files, 3 training aborted on a
//! non-finite loss or gradient.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::encoder::{generate_encoder, import_encoder, EncoderWeights};
use crate::error::Error;
use crate::eval::{loss_ratio, NamedStyle, RatioReport};
use crate::gradcheck::{check_total_loss, EndToEndConfig};
use crate::image_io;
use crate::inference::{parse_alpha, Stylizer};
use crate::loss::{LossWeights, StyleTarget};
use crate::service::{self, ServiceState, DEFAULT_MAX_BODY_BYTES};
use crate::trainer::{self, load_model, TrainConfig};
use crate::transformer::TransformerWeights;

/// Seed of the frozen loss encoder when no `--encoder` file is given. The
/// encoder stands in for a pretrained network, so it is fixed rather than
/// tied to the run seed; training and evaluation then agree by default.
pub const DEFAULT_ENCODER_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(name = "stylectl", version, about = "Style transfer with a continuous strength control")]
pub struct Cli {
    /// Seed for every random choice a subcommand makes. Overrides `seed` in
    /// a training config when given.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a strength-conditioned model from a JSON config.
    Train(TrainArgs),
    /// Stylize one image at one strength.
    Stylize(StylizeArgs),
    /// Render one image at several strengths.
    Sweep(SweepArgs),
    /// Loss-ratio evaluation against per-strength baselines.
    Eval(EvalArgs),
    /// Finite-difference check of the full training objective.
    Gradcheck(GradcheckArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Train the fixed-strength baseline at this strength instead.
    #[arg(long)]
    pub fixed_alpha: Option<f64>,
    /// Encoder checkpoint; a seeded random encoder otherwise.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct StylizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: String,
    /// Output image; `.ppm` writes binary PPM, anything else PNG.
    #[arg(long)]
    pub output: PathBuf,
    /// Working image size; defaults to the model's training size.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated strengths, e.g. `0.1,1,5,10`.
    #[arg(long, allow_hyphen_values = true)]
    pub alphas: String,
    #[arg(long)]
    pub outdir: PathBuf,
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// The strength-conditioned model.
    #[arg(long)]
    pub model: PathBuf,
    /// Baseline per strength as `ALPHA=PATH`; repeat for each strength.
    #[arg(long = "baseline")]
    pub baselines: Vec<String>,
    /// Use the model as its own baseline at every strength.
    #[arg(long, conflicts_with = "baselines")]
    pub self_baseline: bool,
    /// Directory of content images (.png / .ppm).
    #[arg(long)]
    pub contents: PathBuf,
    /// Style image; repeat for several styles.
    #[arg(long = "style", required = true)]
    pub styles: Vec<PathBuf>,
    /// Comma-separated strengths, e.g. `0.1,1,5,10`.
    #[arg(long, allow_hyphen_values = true)]
    pub alphas: String,
    #[arg(long)]
    pub json_out: Option<PathBuf>,
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
    /// Encoder checkpoint; a generated one (seed 0) otherwise.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub lambda_content: Option<f64>,
    #[arg(long)]
    pub lambda_style: Option<f64>,
    #[arg(long)]
    pub lambda_tv: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Sampled parameter elements.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    /// How many samples are strength parameters.
    #[arg(long, default_value_t = 3)]
    pub betas: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 2.5)]
    pub alpha: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// 0 picks a free port; the bound port is printed.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = DEFAULT_MAX_BODY_BYTES)]
    pub max_body_bytes: usize,
    #[arg(long)]
    pub size: Option<usize>,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } => 3,
            Error::Config(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Dataset(_)
            | Error::Checkpoint(_)
            | Error::InvalidArgument { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn print_config(command: &str, seed: u64, args: &impl Serialize) {
    let v = serde_json::json!({ "command": command, "seed": seed, "args": args });
    println!("config: {v}");
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let seed = cli.seed.unwrap_or(0);
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Stylize(a) => {
            print_config("stylize", seed, a);
            cmd_stylize(a)
        }
        Command::Sweep(a) => {
            print_config("sweep", seed, a);
            cmd_sweep(a)
        }
        Command::Eval(a) => {
            print_config("eval", seed, a);
            cmd_eval(a)
        }
        Command::Gradcheck(a) => {
            print_config("gradcheck", seed, a);
            cmd_gradcheck(a, seed)
        }
        Command::Serve(a) => {
            print_config("serve", seed, a);
            cmd_serve(a)
        }
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_encoder(path: Option<&Path>) -> Result<EncoderWeights, Error> {
    match path {
        Some(p) => import_encoder(p),
        None => Ok(generate_encoder(DEFAULT_ENCODER_SEED)),
    }
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>) -> CmdResult {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(alpha) = a.fixed_alpha {
        if !alpha.is_finite() {
            return Err(usage(format!("--fixed-alpha must be finite, got {alpha}")));
        }
    }
    let resolved = serde_json::json!({ "train": &cfg, "fixed_alpha": a.fixed_alpha, "encoder": &a.encoder });
    println!("config: {resolved}");
    let enc = load_encoder(a.encoder.as_deref())?;
    let outcome = match a.fixed_alpha {
        Some(alpha) => trainer::train_fixed_strength(&cfg, alpha, &enc)?,
        None => trainer::train(&cfg, &enc)?,
    };
    if let Some(last) = outcome.log.last() {
        println!(
            "trained {} steps; last step alpha {:.1} total {:.6}",
            outcome.log.len(),
            last.alpha,
            last.total
        );
    } else {
        println!("trained 0 steps; wrote initial weights");
    }
    println!("checkpoint: {}", cfg.checkpoint_out.display());
    Ok(())
}

fn read_input(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_output(path: &Path, img: &crate::Tensor4) -> Result<(), Error> {
    let is_ppm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let bytes = if is_ppm {
        image_io::encode_ppm(img)?
    } else {
        image_io::encode_png(img)?
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn cmd_stylize(a: &StylizeArgs) -> CmdResult {
    let alpha = parse_alpha(&a.alpha)?;
    let stylizer = Stylizer::load(&a.model, a.size)?;
    let bytes = read_input(&a.input)?;
    let y = stylizer.stylize_image(&bytes, alpha)?;
    write_output(&a.output, &y)?;
    println!("wrote {} (alpha {alpha}, {}px)", a.output.display(), stylizer.image_size());
    Ok(())
}

/// Parse a comma-separated strength list.
pub fn parse_alpha_list(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',').map(parse_alpha).collect()
}

/// File name of a sweep entry: the strength with one decimal.
pub fn sweep_file_name(alpha: f64) -> String {
    format!("out_{alpha:.1}.png")
}

#[derive(Serialize)]
struct SweepEntry {
    alpha: f64,
    file: String,
}

fn cmd_sweep(a: &SweepArgs) -> CmdResult {
    let parsed = parse_alpha_list(&a.alphas)?;
    let mut alphas: Vec<f64> = Vec::new();
    for &x in &parsed {
        if alphas.iter().any(|&y| y == x) {
            eprintln!("warning: duplicate strength {x} ignored");
        } else {
            alphas.push(x);
        }
    }
    let mut names: BTreeMap<String, f64> = BTreeMap::new();
    for &x in &alphas {
        if let Some(prev) = names.insert(sweep_file_name(x), x) {
            return Err(usage(format!(
                "strengths {prev} and {x} both map to {}",
                sweep_file_name(x)
            )));
        }
    }
    let stylizer = Stylizer::load(&a.model, a.size)?;
    let bytes = read_input(&a.input)?;
    std::fs::create_dir_all(&a.outdir).map_err(|e| Error::io(&a.outdir, e))?;
    // Each entry is rendered independently; results are identical to a
    // sequential loop.
    alphas
        .par_iter()
        .map(|&x| -> Result<(), Error> {
            let png = stylizer.stylize_bytes(&bytes, x)?;
            let path = a.outdir.join(sweep_file_name(x));
            std::fs::write(&path, png).map_err(|e| Error::io(&path, e))
        })
        .collect::<Result<Vec<()>, Error>>()?;
    let entries: Vec<SweepEntry> = alphas
        .iter()
        .map(|&x| SweepEntry {
            alpha: x,
            file: sweep_file_name(x),
        })
        .collect();
    let index = serde_json::json!({
        "model": &a.model,
        "input": &a.input,
        "image_size": stylizer.image_size(),
        "entries": entries,
    });
    let index_path = a.outdir.join("index.json");
    std::fs::write(&index_path, serde_json::to_string_pretty(&index).expect("json"))
        .map_err(|e| Error::io(&index_path, e))?;
    println!("wrote {} images and {}", alphas.len(), index_path.display());
    Ok(())
}

fn parse_baseline(spec: &str) -> Result<(f64, PathBuf), Failure> {
    let (a, p) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("--baseline expects ALPHA=PATH, got {spec:?}")))?;
    Ok((parse_alpha(a)?, PathBuf::from(p)))
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let strengths = parse_alpha_list(&a.alphas)?;
    if !a.self_baseline && a.baselines.is_empty() {
        return Err(usage("give --baseline ALPHA=PATH for each strength, or --self-baseline"));
    }
    let model = load_model(&a.model)?;
    let size = a
        .size
        .or(model.meta.image_size)
        .unwrap_or(crate::inference::DEFAULT_IMAGE_SIZE);
    let enc = load_encoder(a.encoder.as_deref())?;
    let defaults = LossWeights::default();
    let lw = LossWeights {
        lambda_content: a.lambda_content.unwrap_or(defaults.lambda_content),
        lambda_style: a.lambda_style.unwrap_or(defaults.lambda_style),
        lambda_tv: a.lambda_tv.unwrap_or(defaults.lambda_tv),
    };
    lw.validate()?;

    let contents = trainer::load_dataset(&a.contents, size)?;
    let styles = a
        .styles
        .iter()
        .map(|p| {
            let img = image_io::load_image(p, Some(size))?;
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            Ok(NamedStyle {
                name,
                target: StyleTarget::from_image(&img, &enc)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let loaded: Vec<(f64, TransformerWeights)> = if a.self_baseline {
        Vec::new()
    } else {
        a.baselines
            .iter()
            .map(|s| {
                let (alpha, path) = parse_baseline(s)?;
                Ok((alpha, load_model(&path)?.weights))
            })
            .collect::<Result<Vec<_>, Failure>>()?
    };
    let baselines: Vec<(f64, &TransformerWeights)> = if a.self_baseline {
        strengths.iter().map(|&s| (s, &model.weights)).collect()
    } else {
        loaded.iter().map(|(s, w)| (*s, w)).collect()
    };
    let report = loss_ratio(&model.weights, &baselines, &contents, &styles, &strengths, &lw, &enc)
        .map_err(|e| Failure {
            code: 1,
            message: e.to_string(),
        })?;
    print_report(&report);
    report.write(a.json_out.as_deref(), a.csv_out.as_deref())?;
    Ok(())
}

fn print_report(r: &RatioReport) {
    println!("alpha    total(mean±std)      content(mean±std)    style(mean±std)");
    for s in &r.summary {
        println!(
            "{:<8} {:.6}±{:.6}   {:.6}±{:.6}   {:.6}±{:.6}",
            s.alpha, s.total.mean, s.total.std, s.content.mean, s.content.std, s.style_loss.mean, s.style_loss.std
        );
    }
}

fn cmd_gradcheck(a: &GradcheckArgs, seed: u64) -> CmdResult {
    let cfg = EndToEndConfig {
        seed,
        alpha: a.alpha,
        samples: a.samples,
        beta_samples: a.betas,
        tolerance: a.tolerance,
        ..EndToEndConfig::default()
    };
    let (report, names) = check_total_loss(&cfg).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    for p in &report.probes {
        println!(
            "{:<24} [{:>5}] analytic {:+.8e} numeric {:+.8e} rel {:.2e}",
            names[p.tensor], p.index, p.analytic, p.numeric, p.rel_error
        );
    }
    println!("max relative error: {:.3e} (tolerance {:.1e})", report.max_rel_error(), a.tolerance);
    if report.passed() {
        println!("gradcheck passed");
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!("gradcheck failed: max relative error {:.3e}", report.max_rel_error()),
        })
    }
}

fn cmd_serve(a: &ServeArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let state = Arc::new(ServiceState::new(&model, a.size)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| usage(format!("cannot start runtime: {e}")))?;
    rt.block_on(async {
        let addr = format!("{}:{}", a.host, a.port);
        let (listener, port) = service::bind(&addr).await?;
        println!("listening on http://{}:{port}", a.host);
        let _ = std::io::stdout().flush();
        service::serve(listener, state, a.max_body_bytes).await
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_lists() {
        assert_eq!(parse_alpha_list("0.1, 1,5,10").unwrap(), vec![0.1, 1.0, 5.0, 10.0]);
        assert!(parse_alpha_list("1,x").is_err());
        assert!(parse_alpha_list("1,,2").is_err());
        assert!(parse_alpha_list("inf").is_err());
    }

    #[test]
    fn file_names_use_one_decimal() {
        assert_eq!(sweep_file_name(1.0), "out_1.0.png");
        assert_eq!(sweep_file_name(0.1), "out_0.1.png");
        assert_eq!(sweep_file_name(10.0), "out_10.0.png");
    }

    #[test]
    fn exit_codes() {
        let code = |e: Error| Failure::from(e).code;
        assert_eq!(code(Error::Config("x".into())), 2);
        assert_eq!(code(Error::NonFiniteLoss { step: 0, alpha: 1.0 }), 3);
        assert_eq!(code(Error::GradCheck("x".into())), 1);
    }

    #[test]
    fn unknown_flags_rejected() {
        assert_eq!(run_from(["stylectl", "gradcheck", "--bogus"]), 2);
        assert_eq!(run_from(["stylectl", "frobnicate"]), 2);
    }
}
