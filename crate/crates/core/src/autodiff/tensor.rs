use super::scalar::Real;
use super::AutodiffError;

/// `(batch, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { n: 1, c: 1, h: 1, w: 1 };

    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Batched NCHW complex tensor with split real/imaginary storage.
///
/// Real-valued tensors (the RV baseline, BN scale factors) use the same type
/// with `im` identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor<T> {
    shape: Shape,
    pub re: Vec<T>,
    pub im: Vec<T>,
}

impl<T: Real> ComplexTensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            re: vec![T::zero(); shape.len()],
            im: vec![T::zero(); shape.len()],
        }
    }

    pub fn from_parts(shape: Shape, re: Vec<T>, im: Vec<T>) -> Result<Self, AutodiffError> {
        if re.len() != shape.len() || im.len() != shape.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "parts of length {}/{} for shape {shape}",
                re.len(),
                im.len()
            )));
        }
        Ok(Self { shape, re, im })
    }

    pub fn from_real(shape: Shape, re: Vec<T>) -> Result<Self, AutodiffError> {
        let im = vec![T::zero(); re.len()];
        Self::from_parts(shape, re, im)
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: Shape::SCALAR,
            re: vec![v],
            im: vec![T::zero()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// First real element; the value of a scalar node.
    pub fn item(&self) -> T {
        self.re[0]
    }

    pub fn is_real(&self) -> bool {
        self.im.iter().all(|v| *v == T::zero())
    }

    pub fn all_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.re.iter_mut().for_each(|v| *v = T::zero());
        self.im.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.re.iter_mut().zip(&other.re) {
            *a += *b;
        }
        for (a, b) in self.im.iter_mut().zip(&other.im) {
            *a += *b;
        }
    }

    /// Multiply every element by the complex scalar `s_re + i·s_im`.
    pub fn mul_complex(&self, s_re: T, s_im: T) -> Self {
        let mut out = Self::zeros(self.shape);
        for i in 0..self.len() {
            let (a, b) = (self.re[i], self.im[i]);
            out.re[i] = a * s_re - b * s_im;
            out.im[i] = a * s_im + b * s_re;
        }
        out
    }

    /// Slice batch items `[start, start + count)`.
    pub fn batch_slice(&self, start: usize, count: usize) -> Self {
        let per = self.shape.c * self.shape.plane();
        let shape = Shape { n: count, ..self.shape };
        let r = start * per..(start + count) * per;
        Self {
            shape,
            re: self.re[r.clone()].to_vec(),
            im: self.im[r].to_vec(),
        }
    }

    /// Stack single tensors along the batch axis.
    pub fn stack(items: &[&Self]) -> Result<Self, AutodiffError> {
        let first = items
            .first()
            .ok_or_else(|| AutodiffError::ShapeMismatch("stack of zero tensors".into()))?;
        let s = first.shape;
        let mut re = Vec::with_capacity(s.len() * items.len());
        let mut im = Vec::with_capacity(s.len() * items.len());
        let mut n = 0;
        for t in items {
            if (t.shape.c, t.shape.h, t.shape.w) != (s.c, s.h, s.w) {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "stack {} with {}",
                    t.shape, s
                )));
            }
            n += t.shape.n;
            re.extend_from_slice(&t.re);
            im.extend_from_slice(&t.im);
        }
        Ok(Self {
            shape: Shape { n, ..s },
            re,
            im,
        })
    }

    /// Crop a spatial window from every batch item and channel.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        let s = self.shape;
        let out_shape = Shape { h, w, ..s };
        let mut out = Self::zeros(out_shape);
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..h {
                    let src = s.index(n, c, y0 + y, x0);
                    let dst = out_shape.index(n, c, y, 0);
                    out.re[dst..dst + w].copy_from_slice(&self.re[src..src + w]);
                    out.im[dst..dst + w].copy_from_slice(&self.im[src..src + w]);
                }
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> ComplexTensor<U> {
        ComplexTensor {
            shape: self.shape,
            re: self.re.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            im: self.im.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}
