//! Helpers shared by the integration tests and the acceptance runner:
//! straightforward loop implementations used as oracles, a minimal HTTP
//! client and small fixture builders.

#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::time::Duration;

use strength_transfer::encoder::{encode, generate_encoder};
use strength_transfer::gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Probes};
use strength_transfer::loss::{style_loss, StyleTarget};
use strength_transfer::rng::XorShift64Star;
use strength_transfer::trainer::{save_checkpoint_with_meta, ModelMeta};
use strength_transfer::transformer::{init_weights, is_residual_param, ArchitectureConfig, TransformerWeights};
use strength_transfer::{ops, Shape4, Tape, Tensor4, Var};

pub fn random_tensor(shape: Shape4, rng: &mut XorShift64Star) -> Tensor4 {
    Tensor4::from_fn(shape, |_, _, _, _| rng.uniform(-1.0, 1.0))
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i as usize
}

/// Direct convolution with reflection padding: one loop per index.
pub fn naive_conv(x: &Tensor4, w: &Tensor4, b: &Tensor4, stride: usize, pad: usize) -> Tensor4 {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let oh = (xs.h + 2 * pad - k) / stride + 1;
    let ow = (xs.w + 2 * pad - k) / stride + 1;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, ws.n, oh, ow));
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = mirror((oy * stride + ky) as isize - pad as isize, xs.h);
                                let ix = mirror((ox * stride + kx) as isize - pad as isize, xs.w);
                                acc += x.get(n, ci, iy, ix) * w.get(co, ci, ky, kx);
                            }
                        }
                    }
                    let i = out.shape().index(n, co, oy, ox);
                    out.data_mut()[i] = acc;
                }
            }
        }
    }
    out
}

/// `G[i][j] = sum_p F[i][p] F[j][p] / (c h w)` per sample.
pub fn naive_gram(f: &Tensor4) -> Vec<Vec<Vec<f64>>> {
    let s = f.shape();
    let norm = (s.c * s.h * s.w) as f64;
    (0..s.n)
        .map(|n| {
            (0..s.c)
                .map(|i| {
                    (0..s.c)
                        .map(|j| {
                            let mut acc = 0.0;
                            for y in 0..s.h {
                                for x in 0..s.w {
                                    acc += f.get(n, i, y, x) * f.get(n, j, y, x);
                                }
                            }
                            acc / norm
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// `sum_layers mean_n ||G(y) - T||_F^2 / c^2`.
pub fn naive_style_loss(features: &[Tensor4], targets: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    for (f, t) in features.iter().zip(targets) {
        let g = naive_gram(f);
        let c = t.len();
        let mut layer = 0.0;
        for gn in &g {
            for i in 0..c {
                for j in 0..c {
                    let d = gn[i][j] - t[i][j];
                    layer += d * d;
                }
            }
        }
        total += layer / (g.len() * c * c) as f64;
    }
    total
}

/// Random small transformer weights with everything (including betas)
/// perturbed away from the initial values.
pub fn random_weights(arch: &ArchitectureConfig, seed: u64) -> TransformerWeights {
    let mut w = init_weights(arch, seed).unwrap();
    let mut rng = XorShift64Star::with_stream(seed, 99);
    for (name, t) in w.iter_mut() {
        let jitter = if name.ends_with(".beta") { 0.5 } else { 0.05 };
        for v in t.data_mut() {
            *v += rng.uniform(-jitter, jitter);
        }
    }
    w.rounded_to_f32()
}

/// Replace every residual-branch parameter with fresh random values.
pub fn randomize_residuals(w: &TransformerWeights, seed: u64) -> TransformerWeights {
    let mut out = w.clone();
    let mut rng = XorShift64Star::new(seed);
    for (name, t) in out.iter_mut() {
        if is_residual_param(name) {
            for v in t.data_mut() {
                *v = rng.uniform(-3.0, 3.0);
            }
        }
    }
    out
}

pub fn save_model(w: &TransformerWeights, dir: &Path, name: &str, image_size: usize, seed: u64) -> PathBuf {
    let p = dir.join(name);
    let meta = ModelMeta {
        image_size: Some(image_size),
        seed: Some(seed),
    };
    save_checkpoint_with_meta(w, &meta, &p).unwrap();
    p
}

pub fn write_png(path: &Path, t: &Tensor4) {
    std::fs::write(path, strength_transfer::image_io::encode_png(t).unwrap()).unwrap();
}

#[derive(Debug)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// One HTTP/1.1 request with `Connection: close`.
pub fn http(port: u16, method: &str, path: &str, body: &[u8]) -> HttpResponse {
    let mut s = TcpStream::connect(("127.0.0.1", port)).expect("connect");
    s.set_read_timeout(Some(Duration::from_secs(120))).unwrap();
    let head = format!(
        "{method} {path} HTTP/1.1\r\nHost: 127.0.0.1\r\nConnection: close\r\nContent-Type: application/octet-stream\r\nContent-Length: {}\r\n\r\n",
        body.len()
    );
    s.write_all(head.as_bytes()).unwrap();
    // A server may reply (413) before reading the whole body.
    let _ = s.write_all(body);
    let mut raw = Vec::new();
    let _ = s.read_to_end(&mut raw);
    parse_response(&raw)
}

fn parse_response(raw: &[u8]) -> HttpResponse {
    let split = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .expect("header terminator");
    let head = std::str::from_utf8(&raw[..split]).unwrap();
    let mut lines = head.split("\r\n");
    let status: u16 = lines.next().unwrap().split(' ').nth(1).unwrap().parse().unwrap();
    let headers: Vec<(String, String)> = lines
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let mut body = raw[split + 4..].to_vec();
    let chunked = headers
        .iter()
        .any(|(k, v)| k.eq_ignore_ascii_case("transfer-encoding") && v.contains("chunked"));
    if chunked {
        body = dechunk(&body);
    }
    HttpResponse { status, headers, body }
}

fn dechunk(mut b: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let eol = b.windows(2).position(|w| w == b"\r\n").unwrap();
        let size = usize::from_str_radix(std::str::from_utf8(&b[..eol]).unwrap().trim(), 16).unwrap();
        if size == 0 {
            return out;
        }
        out.extend_from_slice(&b[eol + 2..eol + 2 + size]);
        b = &b[eol + 2 + size + 2..];
    }
}


/// Max |fast - naive| over `cases` random convolutions.
pub fn conv_oracle_max_err(cases: usize, seed: u64) -> f64 {
    let mut rng = XorShift64Star::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let k = [1, 3, 5][rng.below(3) as usize];
        let stride = 1 + rng.below(2) as usize;
        let pad = if rng.below(2) == 0 { 0 } else { k / 2 };
        let h = k.max(3) + rng.below(6) as usize;
        let w = k.max(3) + rng.below(6) as usize;
        let x = random_tensor(Shape4::new(1 + rng.below(2) as usize, 1 + rng.below(4) as usize, h, w), &mut rng);
        let wt = random_tensor(Shape4::new(1 + rng.below(4) as usize, x.shape().c, k, k), &mut rng);
        let b = random_tensor(Shape4::new(1, wt.shape().n, 1, 1), &mut rng);
        let fast = ops::conv2d(&x, &wt, &b, stride, pad).unwrap();
        let slow = naive_conv(&x, &wt, &b, stride, pad);
        assert_eq!(fast.shape(), slow.shape());
        worst = worst.max(fast.max_abs_diff(&slow));
    }
    worst
}

pub fn gram_oracle_max_err(cases: usize, seed: u64) -> f64 {
    let mut rng = XorShift64Star::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let s = Shape4::new(
            1 + rng.below(3) as usize,
            1 + rng.below(6) as usize,
            1 + rng.below(7) as usize,
            1 + rng.below(7) as usize,
        );
        let f = random_tensor(s, &mut rng);
        let fast = ops::gram(&f).unwrap();
        for (n, g) in naive_gram(&f).iter().enumerate() {
            for i in 0..s.c {
                for j in 0..s.c {
                    worst = worst.max((fast.get(n, 0, i, j) - g[i][j]).abs());
                }
            }
        }
    }
    worst
}

fn random_gram(c: usize, rng: &mut XorShift64Star) -> Vec<Vec<f64>> {
    let f = random_tensor(Shape4::new(1, c, 2, 2), rng);
    naive_gram(&f).remove(0)
}

/// Style loss through the encoder on random 16x16 images vs the loop oracle.
pub fn style_oracle_max_err(cases: usize, seed: u64) -> f64 {
    let mut rng = XorShift64Star::new(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let enc = generate_encoder(seed.wrapping_add(case as u64));
        let n = 1 + rng.below(2) as usize;
        let x = Tensor4::from_fn(Shape4::new(n, 3, 16, 16), |_, _, _, _| rng.next_f64());
        let targets: Vec<Vec<Vec<f64>>> = strength_transfer::encoder::STAGE_WIDTHS
            .iter()
            .map(|&c| random_gram(c, &mut rng))
            .collect();
        let grams = targets
            .iter()
            .map(|g| {
                let c = g.len();
                Tensor4::new(Shape4::new(1, 1, c, c), g.iter().flatten().copied().collect()).unwrap()
            })
            .collect();
        let target = StyleTarget::from_grams(grams).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let feats = encode(&mut tape, xv, &enc).unwrap();
        let values: Vec<Tensor4> = feats.style().iter().map(|&v| tape.value(v).clone()).collect();
        let l = style_loss(&mut tape, &feats, &target).unwrap();
        let fast = tape.value(l).item().unwrap();
        let slow = naive_style_loss(&values, &targets);
        worst = worst.max((fast - slow).abs());
    }
    worst
}

/// `sum(v * R)` for a fixed random `R`: turns any output into a scalar whose
/// gradient exercises every output element.
pub fn project(tape: &mut Tape, v: Var, seed: u64) -> strength_transfer::Result<Var> {
    let mut rng = XorShift64Star::new(seed);
    let r = random_tensor(tape.value(v).shape(), &mut rng);
    let rv = tape.constant(r);
    let m = tape.mul(v, rv)?;
    Ok(tape.sum(m))
}

fn cfg(seed: u64) -> GradCheckConfig {
    GradCheckConfig {
        probes: Probes::Random { per_tensor: 12, seed },
        ..GradCheckConfig::default()
    }
}

type PrimitiveCase = (&'static str, GradCheckReport);

/// Finite-difference check of every differentiable primitive on random inputs.
pub fn primitive_gradchecks(seed: u64) -> Vec<PrimitiveCase> {
    let mut rng = XorShift64Star::new(seed);
    let mut t = |s: Shape4| random_tensor(s, &mut rng);
    let x = t(Shape4::new(2, 3, 6, 5));
    let x2 = t(Shape4::new(2, 3, 6, 5));
    let sq = t(Shape4::new(2, 3, 6, 6));
    let w3 = t(Shape4::new(4, 3, 3, 3));
    let b4 = t(Shape4::new(1, 4, 1, 1));
    let g3 = t(Shape4::new(1, 3, 1, 1));
    let s3 = t(Shape4::new(1, 3, 1, 1));
    let gram_target = t(Shape4::new(2, 1, 3, 3));
    let scal = Tensor4::scalar(0.7);
    let mut out = Vec::new();
    let mut run = |name: &'static str, params: Vec<Tensor4>, f: &dyn Fn(&mut Tape, &[Var]) -> strength_transfer::Result<Var>, c: GradCheckConfig| {
        let r = grad_check(f, &params, &c).unwrap_or_else(|e| panic!("{name}: {e}"));
        out.push((name, r));
    };
    run(
        "conv2d stride 1",
        vec![x.clone(), w3.clone(), b4.clone()],
        &|tp, v| {
            let y = tp.conv2d(v[0], v[1], v[2], 1, 1)?;
            project(tp, y, 1)
        },
        cfg(seed),
    );
    run(
        "conv2d stride 2",
        vec![sq.clone(), w3.clone(), b4.clone()],
        &|tp, v| {
            let y = tp.conv2d(v[0], v[1], v[2], 2, 1)?;
            project(tp, y, 2)
        },
        cfg(seed),
    );
    run(
        "instance_norm",
        vec![x.clone(), g3.clone(), s3.clone()],
        &|tp, v| {
            let y = tp.instance_norm(v[0], v[1], v[2], 1e-5)?;
            project(tp, y, 3)
        },
        cfg(seed),
    );
    run(
        "relu",
        vec![x.clone()],
        &|tp, v| {
            let y = tp.relu(v[0]);
            project(tp, y, 4)
        },
        GradCheckConfig {
            kink_margin: Some(1e-3),
            ..cfg(seed)
        },
    );
    run(
        "sigmoid",
        vec![x.clone()],
        &|tp, v| {
            let y = tp.sigmoid(v[0]);
            project(tp, y, 5)
        },
        cfg(seed),
    );
    run(
        "nearest_upsample",
        vec![x.clone()],
        &|tp, v| {
            let y = tp.nearest_upsample(v[0], 2)?;
            project(tp, y, 6)
        },
        cfg(seed),
    );
    run(
        "avg_pool",
        vec![sq.clone()],
        &|tp, v| {
            let y = tp.avg_pool(v[0], 2)?;
            project(tp, y, 7)
        },
        cfg(seed),
    );
    run(
        "add",
        vec![x.clone(), x2.clone()],
        &|tp, v| {
            let y = tp.add(v[0], v[1])?;
            project(tp, y, 8)
        },
        cfg(seed),
    );
    run(
        "sub",
        vec![x.clone(), x2.clone()],
        &|tp, v| {
            let y = tp.sub(v[0], v[1])?;
            project(tp, y, 9)
        },
        cfg(seed),
    );
    run(
        "mul",
        vec![x.clone(), x2.clone()],
        &|tp, v| {
            let y = tp.mul(v[0], v[1])?;
            project(tp, y, 10)
        },
        cfg(seed),
    );
    run(
        "scale",
        vec![x.clone()],
        &|tp, v| {
            let y = tp.scale(v[0], -1.7);
            project(tp, y, 11)
        },
        cfg(seed),
    );
    run(
        "mul_scalar",
        vec![x.clone(), scal.clone()],
        &|tp, v| {
            let y = tp.mul_scalar(v[0], v[1])?;
            project(tp, y, 12)
        },
        cfg(seed),
    );
    for (name, alpha) in [("strength_gate alpha 2.5", 2.5), ("strength_gate alpha -0.3", -0.3)] {
        run(
            name,
            vec![scal.clone()],
            &move |tp, v| {
                let g = tp.strength_gate(v[0], alpha)?;
                let y = tp.scale(g, 1.3);
                Ok(tp.sum(y))
            },
            cfg(seed),
        );
    }
    run(
        "gram",
        vec![x.clone()],
        &|tp, v| {
            let y = tp.gram(v[0])?;
            project(tp, y, 13)
        },
        cfg(seed),
    );
    run(
        "mse",
        vec![x.clone(), x2.clone()],
        &|tp, v| tp.mse(v[0], v[1]),
        cfg(seed),
    );
    run(
        "mse of gram",
        vec![x.clone(), gram_target.clone()],
        &|tp, v| {
            let g = tp.gram(v[0])?;
            tp.mse(g, v[1])
        },
        cfg(seed),
    );
    run(
        "total_variation",
        vec![x.clone()],
        &|tp, v| tp.total_variation(v[0]),
        cfg(seed),
    );
    run(
        "sum",
        vec![x.clone()],
        &|tp, v| {
            let s = tp.sum(v[0]);
            let sq = tp.mul(s, s)?;
            Ok(sq)
        },
        cfg(seed),
    );
    out
}
