//! Dense 4-D tensors in (batch, channel, height, width) layout.

use std::fmt;

use crate::error::{Error, Result};

/// Dimensions of a [`Tensor4`], row-major `(n, c, h, w)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape4::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Debug for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Plain value tensor. Gradient bookkeeping lives on the [`Tape`](crate::tape::Tape).
#[derive(Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "Tensor4::new",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Self {
        Tensor4 {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape4, value: f64) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor4::full(Shape4::scalar(), value)
    }

    /// A per-channel vector stored as `1 x c x 1 x 1`.
    pub fn vector(values: Vec<f64>) -> Self {
        Tensor4 {
            shape: Shape4::new(1, values.len(), 1, 1),
            data: values,
        }
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(n, c, h, w)]
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "Tensor4::item",
                format!("expected one element, got shape {}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        Tensor4::new(shape, self.data)
    }

    /// Slice of one sample as a standalone `1 x c x h x w` tensor.
    pub fn sample(&self, n: usize) -> Tensor4 {
        let per = self.shape.c * self.shape.plane();
        Tensor4 {
            shape: Shape4::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Concatenate samples along the batch axis.
    pub fn stack(samples: &[Tensor4]) -> Result<Tensor4> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("Tensor4::stack", "no samples"))?
            .shape;
        let mut data = Vec::with_capacity(first.numel() * samples.len());
        let mut n = 0;
        for s in samples {
            let sh = s.shape;
            if (sh.c, sh.h, sh.w) != (first.c, first.h, first.w) {
                return Err(Error::shape(
                    "Tensor4::stack",
                    format!("sample shape {sh} differs from {first}"),
                ));
            }
            n += sh.n;
            data.extend_from_slice(&s.data);
        }
        Ok(Tensor4 {
            shape: Shape4::new(n, first.c, first.h, first.w),
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// True when every value survives a round trip through `f32`.
    pub fn is_f32_exact(&self) -> bool {
        self.data.iter().all(|&v| (v as f32) as f64 == v)
    }

    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = (*v as f32) as f64;
        }
    }
}

impl fmt::Debug for Tensor4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOW: usize = 8;
        write!(f, "Tensor4({}, [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOW {
            write!(f, ", ...")?;
        }
        write!(f, "])")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor4::new(Shape4::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
    }

    #[test]
    fn index_is_row_major() {
        let s = Shape4::new(2, 3, 4, 5);
        assert_eq!(s.index(0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 1, 0), 5);
        assert_eq!(s.index(0, 1, 0, 0), 20);
        assert_eq!(s.index(1, 0, 0, 0), 60);
        let t = Tensor4::from_fn(s, |n, c, h, w| (n * 1000 + c * 100 + h * 10 + w) as f64);
        assert_eq!(t.get(1, 2, 3, 4), 1234.0);
    }

    #[test]
    fn stack_and_sample_invert() {
        let a = Tensor4::full(Shape4::new(1, 2, 2, 2), 1.0);
        let b = Tensor4::full(Shape4::new(1, 2, 2, 2), 2.0);
        let s = Tensor4::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape4::new(2, 2, 2, 2));
        assert_eq!(s.sample(0), a);
        assert_eq!(s.sample(1), b);
        assert!(Tensor4::stack(&[a, Tensor4::zeros(Shape4::new(1, 3, 2, 2))]).is_err());
    }
}
