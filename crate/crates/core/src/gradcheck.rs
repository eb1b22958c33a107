//! Central finite-difference gradient checking.
//!
//! The function under test builds a scalar on a fresh [`Tape`] from a set of
//! parameter tensors. Analytic gradients come from one backward pass; numeric
//! ones from `(f(p + h) - f(p - h)) / 2h` with `h = epsilon * max(1, |p|)`.

use crate::error::{Error, Result};
use crate::rng::XorShift64Star;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor4;

/// Which parameter elements to probe.
#[derive(Clone, Debug)]
pub enum Probes {
    /// Up to `per_tensor` distinct random elements of every tensor (all of
    /// them when the tensor is smaller).
    Random { per_tensor: usize, seed: u64 },
    /// Explicit `(tensor index, element index)` pairs.
    Explicit(Vec<(usize, usize)>),
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    pub probes: Probes,
    /// Skip elements whose value lies within this distance of zero (keeps
    /// probes off the relu kink).
    pub kink_margin: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-6,
            tolerance: 1e-4,
            probes: Probes::Random {
                per_tensor: 8,
                seed: 0,
            },
            kink_margin: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: Vec<ProbeResult>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.probes.is_empty() && self.max_rel_error() <= self.tolerance
    }

    pub fn worst(&self) -> Option<&ProbeResult> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn evaluate<F>(f: &F, params: &[Tensor4]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::GradCheck(format!(
            "function must return a scalar, got shape {}",
            v.shape()
        )));
    }
    Ok((tape, vars, out))
}

fn scalar<F>(f: &F, params: &[Tensor4]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, _, out) = evaluate(f, params)?;
    tape.value(out).item()
}

fn choose_probes(params: &[Tensor4], cfg: &GradCheckConfig) -> Vec<(usize, usize)> {
    let eligible = |t: usize, i: usize| match cfg.kink_margin {
        Some(m) => params[t].data()[i].abs() >= m,
        None => true,
    };
    match &cfg.probes {
        Probes::Explicit(list) => list.iter().copied().filter(|&(t, i)| eligible(t, i)).collect(),
        Probes::Random { per_tensor, seed } => {
            let mut rng = XorShift64Star::new(*seed);
            let mut out = Vec::new();
            for (t, p) in params.iter().enumerate() {
                let mut idx: Vec<usize> = (0..p.numel()).filter(|&i| eligible(t, i)).collect();
                rng.shuffle(&mut idx);
                idx.truncate(*per_tensor);
                idx.sort_unstable();
                out.extend(idx.into_iter().map(|i| (t, i)));
            }
            out
        }
    }
}

/// Compare analytic and central-difference gradients of `f` at `params`.
///
/// `f` is run twice up front; differing outputs mean it is not deterministic
/// and the check is refused.
pub fn grad_check<F>(f: F, params: &[Tensor4], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(cfg.epsilon > 0.0) {
        return Err(Error::GradCheck(format!(
            "epsilon must be > 0, got {}",
            cfg.epsilon
        )));
    }
    let (mut tape, vars, out) = evaluate(&f, params)?;
    let first = tape.value(out).item()?;
    let second = scalar(&f, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::GradCheck(format!(
            "function is not deterministic: {first} vs {second}"
        )));
    }
    tape.backward(out)?;

    let mut perturbed = params.to_vec();
    let mut results = Vec::new();
    for (t, i) in choose_probes(params, cfg) {
        let analytic = tape.grad(vars[t]).map_or(0.0, |g| g.data()[i]);
        let p = params[t].data()[i];
        let h = cfg.epsilon * p.abs().max(1.0);
        perturbed[t].data_mut()[i] = p + h;
        let plus = scalar(&f, &perturbed)?;
        perturbed[t].data_mut()[i] = p - h;
        let minus = scalar(&f, &perturbed)?;
        perturbed[t].data_mut()[i] = p;
        let numeric = (plus - minus) / (2.0 * h);
        results.push(ProbeResult {
            tensor: t,
            index: i,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    Ok(GradCheckReport {
        probes: results,
        tolerance: cfg.tolerance,
    })
}

/// Settings for [`check_total_loss`].
#[derive(Clone, Debug)]
pub struct EndToEndConfig {
    pub seed: u64,
    pub image_size: usize,
    pub alpha: f64,
    /// Total number of sampled parameter elements.
    pub samples: usize,
    /// How many of the samples are strength parameters `beta_i`.
    pub beta_samples: usize,
    pub tolerance: f64,
}

impl Default for EndToEndConfig {
    fn default() -> Self {
        EndToEndConfig {
            seed: 0,
            image_size: 16,
            alpha: 2.5,
            samples: 20,
            beta_samples: 3,
            tolerance: 1e-3,
        }
    }
}

/// Finite-difference check of the full objective (transformer + encoder +
/// losses) with respect to transformer parameters, on the small test
/// architecture and synthetic images derived from `cfg.seed`.
///
/// Parameters whose gradient is structurally zero are not sampled; for them
/// the numeric estimate is pure rounding noise. Returns the report and the
/// parameter names in tensor-index order.
pub fn check_total_loss(cfg: &EndToEndConfig) -> Result<(GradCheckReport, Vec<String>)> {
    use crate::encoder::generate_encoder;
    use crate::loss::{total_loss, LossWeights, StyleTarget};
    use crate::synthetic::{content_image, style_image};
    use crate::transformer::{self, has_structural_zero_grad, init_weights, ArchitectureConfig};

    let arch = ArchitectureConfig::test_preset();
    if cfg.beta_samples > arch.residual_blocks || cfg.beta_samples > cfg.samples {
        return Err(Error::GradCheck(format!(
            "cannot sample {} betas out of {} blocks / {} samples",
            cfg.beta_samples, arch.residual_blocks, cfg.samples
        )));
    }
    let enc = generate_encoder(cfg.seed);
    let mut weights = init_weights(&arch, cfg.seed)?;
    let mut rng = XorShift64Star::with_stream(cfg.seed, 0x6772_6164);
    // Move betas off their shared initial value so each block differs.
    for (_, t) in weights.iter_mut().filter(|(n, _)| n.ends_with(".beta")) {
        t.data_mut()[0] = rng.uniform(0.5, 1.5);
    }
    let x = content_image(cfg.image_size, cfg.seed);
    let target = StyleTarget::from_image(&style_image(cfg.image_size, cfg.seed.wrapping_add(1)), &enc)?;
    let lw = LossWeights::default();

    let names: Vec<String> = weights.names().map(str::to_string).collect();
    let params: Vec<Tensor4> = weights.params().values().cloned().collect();

    let mut betas: Vec<usize> = (0..names.len()).filter(|&t| names[t].ends_with(".beta")).collect();
    rng.shuffle(&mut betas);
    let mut probes: Vec<(usize, usize)> = betas[..cfg.beta_samples].iter().map(|&t| (t, 0)).collect();
    let others: Vec<usize> = (0..names.len())
        .filter(|&t| !names[t].ends_with(".beta") && !has_structural_zero_grad(&names[t]))
        .collect();
    while probes.len() < cfg.samples {
        let t = others[rng.below(others.len() as u64) as usize];
        let i = rng.below(params[t].numel() as u64) as usize;
        if !probes.contains(&(t, i)) {
            probes.push((t, i));
        }
    }

    let alpha = cfg.alpha;
    let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let pv = transformer::ParamVars::from_vars(arch, names.iter().cloned().zip(vars.iter().copied()));
        let xv = tape.constant(x.clone());
        let y = transformer::forward(tape, xv, &pv, alpha)?;
        Ok(total_loss(tape, xv, y, &target, alpha, &lw, &enc)?.total)
    };
    let gc = GradCheckConfig {
        epsilon: 1e-6,
        tolerance: cfg.tolerance,
        probes: Probes::Explicit(probes),
        kink_margin: None,
    };
    Ok((grad_check(f, &params, &gc)?, names))
}
