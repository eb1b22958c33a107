//! Forward and backward kernels on plain tensors.
//!
//! Every kernel validates shapes up front and never broadcasts: operands
//! must agree exactly. The [`Tape`](crate::tape::Tape) wires these kernels
//! together for reverse-mode differentiation.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

fn same_shape(op: &'static str, a: &Tensor4, b: &Tensor4) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{} vs {}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn check_vector(op: &'static str, what: &str, v: &Tensor4, len: usize) -> Result<()> {
    let s = v.shape();
    if s != Shape4::new(1, len, 1, 1) {
        return Err(Error::shape(
            op,
            format!("{what} has shape {s}, expected 1x{len}x1x1"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// convolution

/// Resolved geometry of a reflection-padded square convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Shape4,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape4, weight: Shape4, stride: usize, pad: usize) -> Result<Self> {
        const OP: &str = "conv2d";
        if weight.h != weight.w {
            return Err(Error::shape(
                OP,
                format!("kernel must be square, got {}x{}", weight.h, weight.w),
            ));
        }
        if weight.c != input.c {
            return Err(Error::shape(
                OP,
                format!(
                    "input channels {} do not match weight c_in {}",
                    input.c, weight.c
                ),
            ));
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::invalid(OP, format!("stride {stride} not in {{1, 2}}")));
        }
        let k = weight.h;
        if k == 0 || weight.n == 0 {
            return Err(Error::shape(OP, "empty kernel"));
        }
        for (name, dim) in [("height", input.h), ("width", input.w)] {
            if pad > 0 && pad >= dim {
                return Err(Error::shape(
                    OP,
                    format!("reflection pad {pad} needs input {name} > {pad}, got {dim}"),
                ));
            }
            if dim + 2 * pad < k {
                return Err(Error::shape(
                    OP,
                    format!("padded {name} {} smaller than kernel {k}", dim + 2 * pad),
                ));
            }
        }
        Ok(ConvGeometry {
            input,
            c_out: weight.n,
            kernel: k,
            stride,
            pad,
            out_h: (input.h + 2 * pad - k) / stride + 1,
            out_w: (input.w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn output(&self) -> Shape4 {
        Shape4::new(self.input.n, self.c_out, self.out_h, self.out_w)
    }

    fn col_rows(&self) -> usize {
        self.input.c * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Mirror index for reflection padding: `-1 -> 1`, `len -> len - 2`.
#[inline]
pub fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    let r = if i < 0 {
        -i
    } else if i >= len {
        2 * (len - 1) - i
    } else {
        i
    };
    debug_assert!((0..len).contains(&r));
    r as usize
}

/// For each padded coordinate along one axis, the source coordinate.
fn reflect_table(len: usize, pad: usize) -> Vec<usize> {
    (0..len + 2 * pad)
        .map(|p| reflect(p as isize - pad as isize, len))
        .collect()
}

/// im2col of one sample straight from the unpadded input.
fn im2col(g: &ConvGeometry, x: &[f64], rows_h: &[usize], rows_w: &[usize], cols: &mut [f64]) {
    let (h, w, k, s) = (g.input.h, g.input.w, g.kernel, g.stride);
    let p = g.col_cols();
    for ci in 0..g.input.c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let src_row = &plane[rows_h[oy * s + ky] * w..][..w];
                    let d = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, v) in d.iter_mut().enumerate() {
                        *v = src_row[rows_w[ox * s + kx]];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the unpadded input,
/// folding reflected positions onto their sources.
fn col2im(g: &ConvGeometry, cols: &[f64], rows_h: &[usize], rows_w: &[usize], dx: &mut [f64]) {
    let (h, w, k, s) = (g.input.h, g.input.w, g.kernel, g.stride);
    let p = g.col_cols();
    for ci in 0..g.input.c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let base = rows_h[oy * s + ky] * w;
                    for ox in 0..g.out_w {
                        plane[base + rows_w[ox * s + kx]] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

/// `c = a * b (+ c if accumulate)` for row-major matrices, with optional
/// transposition of either operand.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths cover m*k, k*n and m*n elements with the
    // strides above; the callers size every buffer from the same geometry.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Reflection-padded 2-D convolution. `bias` is a `1 x c_out x 1 x 1` vector.
pub fn conv2d(
    input: &Tensor4,
    weight: &Tensor4,
    bias: &Tensor4,
    stride: usize,
    pad: usize,
) -> Result<Tensor4> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, pad)?;
    check_vector("conv2d", "bias", bias, g.c_out)?;
    let rows_h = reflect_table(g.input.h, pad);
    let rows_w = reflect_table(g.input.w, pad);
    let (kk, p) = (g.col_rows(), g.col_cols());
    let in_per = g.input.c * g.input.plane();
    let out_shape = g.output();
    let out_per = g.c_out * p;
    let mut out = vec![0.0; out_shape.numel()];
    let mut cols = vec![0.0; kk * p];
    for n in 0..g.input.n {
        im2col(&g, &input.data()[n * in_per..(n + 1) * in_per], &rows_h, &rows_w, &mut cols);
        let y = &mut out[n * out_per..(n + 1) * out_per];
        for (co, b) in bias.data().iter().enumerate() {
            y[co * p..(co + 1) * p].fill(*b);
        }
        gemm(g.c_out, kk, p, weight.data(), false, &cols, false, y, true);
    }
    Tensor4::new(out_shape, out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor4,
    weight: &Tensor4,
    grad_out: &Tensor4,
    stride: usize,
    pad: usize,
) -> Result<(Tensor4, Tensor4, Tensor4)> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, pad)?;
    if grad_out.shape() != g.output() {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad {} vs output {}", grad_out.shape(), g.output()),
        ));
    }
    let rows_h = reflect_table(g.input.h, pad);
    let rows_w = reflect_table(g.input.w, pad);
    let (kk, p) = (g.col_rows(), g.col_cols());
    let in_per = g.input.c * g.input.plane();
    let out_per = g.c_out * p;
    let mut dx = vec![0.0; g.input.numel()];
    let mut dw = vec![0.0; weight.numel()];
    let mut db = vec![0.0; g.c_out];
    let mut cols = vec![0.0; kk * p];
    let mut dcols = vec![0.0; kk * p];
    for n in 0..g.input.n {
        let dy = &grad_out.data()[n * out_per..(n + 1) * out_per];
        for (co, acc) in db.iter_mut().enumerate() {
            *acc += dy[co * p..(co + 1) * p].iter().sum::<f64>();
        }
        im2col(&g, &input.data()[n * in_per..(n + 1) * in_per], &rows_h, &rows_w, &mut cols);
        // dW += dY * cols^T
        gemm(g.c_out, p, kk, dy, false, &cols, true, &mut dw, true);
        // dcols = W^T * dY
        gemm(kk, g.c_out, p, weight.data(), true, dy, false, &mut dcols, false);
        col2im(&g, &dcols, &rows_h, &rows_w, &mut dx[n * in_per..(n + 1) * in_per]);
    }
    Ok((
        Tensor4::new(g.input, dx)?,
        Tensor4::new(weight.shape(), dw)?,
        Tensor4::vector(db),
    ))
}

// ---------------------------------------------------------------------------
// instance normalization

/// Saved state for the instance-norm backward pass.
#[derive(Clone, Debug)]
pub struct InstanceNormCache {
    pub normalized: Vec<f64>,
    /// `1 / sqrt(var + eps)` per (sample, channel).
    pub inv_std: Vec<f64>,
}

pub fn instance_norm(
    x: &Tensor4,
    gain: &Tensor4,
    shift: &Tensor4,
    eps: f64,
) -> Result<(Tensor4, InstanceNormCache)> {
    const OP: &str = "instance_norm";
    let s = x.shape();
    if !(eps > 0.0) {
        return Err(Error::invalid(OP, format!("eps must be > 0, got {eps}")));
    }
    if s.plane() == 0 {
        return Err(Error::shape(OP, "empty spatial plane"));
    }
    check_vector(OP, "gain", gain, s.c)?;
    check_vector(OP, "shift", shift, s.c)?;
    let hw = s.plane();
    let mut y = vec![0.0; s.numel()];
    let mut normalized = vec![0.0; s.numel()];
    let mut inv_std = vec![0.0; s.n * s.c];
    for nc in 0..s.n * s.c {
        let c = nc % s.c;
        let xs = &x.data()[nc * hw..(nc + 1) * hw];
        let mean = xs.iter().sum::<f64>() / hw as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[nc] = is;
        let (gn, sh) = (gain.data()[c], shift.data()[c]);
        for i in 0..hw {
            let xh = (xs[i] - mean) * is;
            normalized[nc * hw + i] = xh;
            y[nc * hw + i] = gn * xh + sh;
        }
    }
    Ok((Tensor4::new(s, y)?, InstanceNormCache { normalized, inv_std }))
}

/// Gradients of [`instance_norm`] with respect to input, gain and shift.
pub fn instance_norm_backward(
    cache: &InstanceNormCache,
    gain: &Tensor4,
    grad_out: &Tensor4,
) -> (Tensor4, Tensor4, Tensor4) {
    let s = grad_out.shape();
    let hw = s.plane();
    let mut dx = vec![0.0; s.numel()];
    let mut dgain = vec![0.0; s.c];
    let mut dshift = vec![0.0; s.c];
    for nc in 0..s.n * s.c {
        let c = nc % s.c;
        let dy = &grad_out.data()[nc * hw..(nc + 1) * hw];
        let xh = &cache.normalized[nc * hw..(nc + 1) * hw];
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for i in 0..hw {
            sum_dy += dy[i];
            sum_dy_xh += dy[i] * xh[i];
        }
        dgain[c] += sum_dy_xh;
        dshift[c] += sum_dy;
        let gn = gain.data()[c];
        let scale = gn * cache.inv_std[nc];
        let mean_dy = sum_dy / hw as f64;
        let mean_dy_xh = sum_dy_xh / hw as f64;
        for i in 0..hw {
            dx[nc * hw + i] = scale * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
        }
    }
    (
        Tensor4::new(s, dx).expect("shape from grad_out"),
        Tensor4::vector(dgain),
        Tensor4::vector(dshift),
    )
}

// ---------------------------------------------------------------------------
// elementwise

pub fn relu(x: &Tensor4) -> Tensor4 {
    map(x, |v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient is zero wherever the input is `<= 0`.
pub fn relu_backward(x: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    zip_map(x, grad_out, |v, g| if v > 0.0 { g } else { 0.0 })
}

/// Largest `f64` strictly below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic map into `(0, 1)`. Saturated values are clamped one ulp inside
/// the open interval.
pub fn sigmoid(x: &Tensor4) -> Tensor4 {
    map(x, |v| {
        let y = if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        };
        y.clamp(f64::MIN_POSITIVE, BELOW_ONE)
    })
}

pub fn sigmoid_backward(out: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    zip_map(out, grad_out, |y, g| g * y * (1.0 - y))
}

pub fn add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    same_shape("add", a, b)?;
    Ok(zip_map(a, b, |x, y| x + y))
}

pub fn sub(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    same_shape("sub", a, b)?;
    Ok(zip_map(a, b, |x, y| x - y))
}

pub fn mul(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    same_shape("mul", a, b)?;
    Ok(zip_map(a, b, |x, y| x * y))
}

pub fn scale(x: &Tensor4, factor: f64) -> Tensor4 {
    map(x, |v| v * factor)
}

pub fn sum(x: &Tensor4) -> f64 {
    x.data().iter().sum()
}

pub(crate) fn map(x: &Tensor4, f: impl Fn(f64) -> f64) -> Tensor4 {
    Tensor4::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same length")
}

pub(crate) fn zip_map(a: &Tensor4, b: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Tensor4 {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor4::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same length")
}

// ---------------------------------------------------------------------------
// resampling

/// Replicate each pixel into a `factor x factor` block.
pub fn nearest_upsample(x: &Tensor4, factor: usize) -> Result<Tensor4> {
    if factor < 1 {
        return Err(Error::invalid("nearest_upsample", "factor must be >= 1"));
    }
    let s = x.shape();
    let out = Shape4::new(s.n, s.c, s.h * factor, s.w * factor);
    let mut data = Vec::with_capacity(out.numel());
    for nc in 0..s.n * s.c {
        let plane = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
        for oy in 0..out.h {
            let row = &plane[(oy / factor) * s.w..][..s.w];
            for ox in 0..out.w {
                data.push(row[ox / factor]);
            }
        }
    }
    Tensor4::new(out, data)
}

pub fn nearest_upsample_backward(grad_out: &Tensor4, factor: usize) -> Tensor4 {
    let o = grad_out.shape();
    let s = Shape4::new(o.n, o.c, o.h / factor, o.w / factor);
    let mut dx = vec![0.0; s.numel()];
    for nc in 0..o.n * o.c {
        let g = &grad_out.data()[nc * o.plane()..(nc + 1) * o.plane()];
        let d = &mut dx[nc * s.plane()..(nc + 1) * s.plane()];
        for oy in 0..o.h {
            for ox in 0..o.w {
                d[(oy / factor) * s.w + ox / factor] += g[oy * o.w + ox];
            }
        }
    }
    Tensor4::new(s, dx).expect("shape")
}

/// Non-overlapping `factor x factor` mean pooling. Spatial dims must divide.
pub fn avg_pool(x: &Tensor4, factor: usize) -> Result<Tensor4> {
    const OP: &str = "avg_pool";
    let s = x.shape();
    if factor < 1 {
        return Err(Error::invalid(OP, "factor must be >= 1"));
    }
    if s.h % factor != 0 || s.w % factor != 0 {
        return Err(Error::shape(
            OP,
            format!("spatial dims {}x{} not divisible by {factor}", s.h, s.w),
        ));
    }
    let out = Shape4::new(s.n, s.c, s.h / factor, s.w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut data = vec![0.0; out.numel()];
    for nc in 0..s.n * s.c {
        let plane = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
        let d = &mut data[nc * out.plane()..(nc + 1) * out.plane()];
        for oy in 0..out.h {
            for ox in 0..out.w {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += plane[(oy * factor + dy) * s.w + ox * factor + dx];
                    }
                }
                d[oy * out.w + ox] = acc * inv;
            }
        }
    }
    Tensor4::new(out, data)
}

pub fn avg_pool_backward(grad_out: &Tensor4, factor: usize) -> Tensor4 {
    let o = grad_out.shape();
    let s = Shape4::new(o.n, o.c, o.h * factor, o.w * factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut dx = vec![0.0; s.numel()];
    for nc in 0..o.n * o.c {
        let g = &grad_out.data()[nc * o.plane()..(nc + 1) * o.plane()];
        let d = &mut dx[nc * s.plane()..(nc + 1) * s.plane()];
        for y in 0..s.h {
            for x in 0..s.w {
                d[y * s.w + x] = g[(y / factor) * o.w + x / factor] * inv;
            }
        }
    }
    Tensor4::new(s, dx).expect("shape")
}

// ---------------------------------------------------------------------------
// statistics and losses

/// Per-sample Gram matrix `F F^T / (c h w)` of the `c x hw` unrolled
/// features, returned as `n x 1 x c x c`. The upper triangle is computed and
/// mirrored, so the result is symmetric bit-for-bit.
pub fn gram(features: &Tensor4) -> Result<Tensor4> {
    let s = features.shape();
    if s.plane() == 0 || s.c == 0 {
        return Err(Error::shape("gram", format!("empty feature map {s}")));
    }
    let hw = s.plane();
    let norm = 1.0 / (s.c * hw) as f64;
    let out = Shape4::new(s.n, 1, s.c, s.c);
    let mut data = vec![0.0; out.numel()];
    for n in 0..s.n {
        let f = &features.data()[n * s.c * hw..(n + 1) * s.c * hw];
        let g = &mut data[n * s.c * s.c..(n + 1) * s.c * s.c];
        for i in 0..s.c {
            let fi = &f[i * hw..(i + 1) * hw];
            for j in i..s.c {
                let fj = &f[j * hw..(j + 1) * hw];
                let dot: f64 = fi.iter().zip(fj).map(|(a, b)| a * b).sum();
                g[i * s.c + j] = dot * norm;
                g[j * s.c + i] = dot * norm;
            }
        }
    }
    Tensor4::new(out, data)
}

pub fn gram_backward(features: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    let s = features.shape();
    let hw = s.plane();
    let norm = 1.0 / (s.c * hw) as f64;
    let mut dx = vec![0.0; s.numel()];
    let mut sym = vec![0.0; s.c * s.c];
    for n in 0..s.n {
        let f = &features.data()[n * s.c * hw..(n + 1) * s.c * hw];
        let dg = &grad_out.data()[n * s.c * s.c..(n + 1) * s.c * s.c];
        for i in 0..s.c {
            for j in 0..s.c {
                sym[i * s.c + j] = (dg[i * s.c + j] + dg[j * s.c + i]) * norm;
            }
        }
        gemm(s.c, s.c, hw, &sym, false, f, false, &mut dx[n * s.c * hw..(n + 1) * s.c * hw], false);
    }
    Tensor4::new(s, dx).expect("shape")
}

/// Mean of squared differences over all elements.
pub fn mse(a: &Tensor4, b: &Tensor4) -> Result<f64> {
    same_shape("mse", a, b)?;
    if a.numel() == 0 {
        return Err(Error::shape("mse", "empty tensors"));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.numel() as f64)
}

/// Gradient of [`mse`] with respect to `a` (the gradient for `b` is its negation).
pub fn mse_backward(a: &Tensor4, b: &Tensor4, grad: f64) -> Tensor4 {
    let k = 2.0 * grad / a.numel() as f64;
    zip_map(a, b, |x, y| k * (x - y))
}

/// Sum of squared horizontal and vertical neighbour differences divided by
/// the element count.
pub fn total_variation(x: &Tensor4) -> Result<f64> {
    let s = x.shape();
    if s.numel() == 0 {
        return Err(Error::shape("total_variation", "empty tensor"));
    }
    let d = x.data();
    let mut acc = 0.0;
    for nc in 0..s.n * s.c {
        let p = &d[nc * s.plane()..(nc + 1) * s.plane()];
        for y in 0..s.h {
            for xx in 0..s.w {
                let v = p[y * s.w + xx];
                if xx + 1 < s.w {
                    let dh = p[y * s.w + xx + 1] - v;
                    acc += dh * dh;
                }
                if y + 1 < s.h {
                    let dv = p[(y + 1) * s.w + xx] - v;
                    acc += dv * dv;
                }
            }
        }
    }
    Ok(acc / s.numel() as f64)
}

pub fn total_variation_backward(x: &Tensor4, grad: f64) -> Tensor4 {
    let s = x.shape();
    let k = 2.0 * grad / s.numel() as f64;
    let d = x.data();
    let mut dx = vec![0.0; s.numel()];
    for nc in 0..s.n * s.c {
        let off = nc * s.plane();
        for y in 0..s.h {
            for xx in 0..s.w {
                let i = off + y * s.w + xx;
                if xx + 1 < s.w {
                    let diff = k * (d[i + 1] - d[i]);
                    dx[i + 1] += diff;
                    dx[i] -= diff;
                }
                if y + 1 < s.h {
                    let diff = k * (d[i + s.w] - d[i]);
                    dx[i + s.w] += diff;
                    dx[i] -= diff;
                }
            }
        }
    }
    Tensor4::new(s, dx).expect("shape")
}
