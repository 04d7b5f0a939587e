//! Same-padded 2-D convolution over split-complex tensors.
//!
//! A complex convolution is evaluated as one real GEMM on the stacked
//! patch matrix `[cols_re; cols_im]` with the block weight
//!
//! ```text
//! [ W_re  −W_im ]
//! [ W_im   W_re ]
//! ```
//!
//! so `y_re = W_re∗x_re − W_im∗x_im` and `y_im = W_im∗x_re + W_re∗x_im`.

use rayon::prelude::*;

use super::scalar::Real;
use super::tensor::{ComplexTensor, Shape};
use super::AutodiffError;

/// Whether a layer treats its channels as complex or as independent reals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arithmetic {
    Complex,
    Real,
}

/// Convolution weights `(out, in, k, k)` and bias `(1, out, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexConvParams<T> {
    pub weight: ComplexTensor<T>,
    pub bias: ComplexTensor<T>,
}

impl<T: Real> ComplexConvParams<T> {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Self {
            weight: ComplexTensor::zeros(Shape::new(out_channels, in_channels, kernel, kernel)),
            bias: ComplexTensor::zeros(Shape::new(1, out_channels, 1, 1)),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }
}

pub(crate) fn check_conv(x: Shape, w: Shape, b: Shape) -> Result<(), AutodiffError> {
    if w.h != w.w || w.h % 2 == 0 {
        return Err(AutodiffError::ShapeMismatch(format!(
            "kernel must be square and odd, got {}x{}",
            w.h, w.w
        )));
    }
    if x.c != w.c {
        return Err(AutodiffError::ShapeMismatch(format!(
            "input has {} channels, kernel expects {}",
            x.c, w.c
        )));
    }
    if b.len() != w.n {
        return Err(AutodiffError::ShapeMismatch(format!(
            "bias has {} entries for {} output channels",
            b.len(),
            w.n
        )));
    }
    Ok(())
}

/// Unroll `planes` (channels × h × w) into a `(channels·k·k) × (h·w)` matrix,
/// rows ordered `(channel, ky, kx)`, zero padded.
fn im2col<T: Real>(planes: &[T], channels: usize, h: usize, w: usize, k: usize, out: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    let mut row = 0;
    for c in 0..channels {
        let plane = &planes[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut out[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad as isize;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    drow[..x_lo].iter_mut().for_each(|v| *v = T::zero());
                    let s0 = (x_lo as isize + dx) as usize;
                    drow[x_lo..x_hi].copy_from_slice(&srow[s0..s0 + (x_hi - x_lo)]);
                    drow[x_hi..].iter_mut().for_each(|v| *v = T::zero());
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into planes.
fn col2im<T: Real>(cols: &[T], channels: usize, h: usize, w: usize, k: usize, planes: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    let mut row = 0;
    for c in 0..channels {
        let plane = &mut planes[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad as isize;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let s0 = (x_lo as isize + dx) as usize;
                    let prow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (p, v) in prow[s0..s0 + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&src[y * w + x_lo..y * w + x_hi])
                    {
                        *p += *v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Block weight matrix for the GEMM, `(rows × cols)` row-major.
fn big_weight<T: Real>(w: &ComplexTensor<T>, arith: Arithmetic) -> (Vec<T>, usize, usize) {
    let s = w.shape();
    let (cout, kdim) = (s.n, s.c * s.h * s.w);
    match arith {
        Arithmetic::Real => (w.re.clone(), cout, kdim),
        Arithmetic::Complex => {
            let cols = 2 * kdim;
            let mut big = vec![T::zero(); 2 * cout * cols];
            for o in 0..cout {
                let wr = &w.re[o * kdim..(o + 1) * kdim];
                let wi = &w.im[o * kdim..(o + 1) * kdim];
                let top = o * cols;
                let bot = (cout + o) * cols;
                big[top..top + kdim].copy_from_slice(wr);
                for (d, v) in big[top + kdim..top + cols].iter_mut().zip(wi) {
                    *d = -*v;
                }
                big[bot..bot + kdim].copy_from_slice(wi);
                big[bot + kdim..bot + cols].copy_from_slice(wr);
            }
            (big, 2 * cout, cols)
        }
    }
}

fn image_cols<T: Real>(x: &ComplexTensor<T>, n: usize, k: usize, arith: Arithmetic) -> Vec<T> {
    let s = x.shape();
    let per = s.c * s.plane();
    let kdim = s.c * k * k;
    let hw = s.plane();
    let parts = match arith {
        Arithmetic::Real => 1,
        Arithmetic::Complex => 2,
    };
    let mut cols = vec![T::zero(); parts * kdim * hw];
    im2col(&x.re[n * per..(n + 1) * per], s.c, s.h, s.w, k, &mut cols[..kdim * hw]);
    if parts == 2 {
        im2col(&x.im[n * per..(n + 1) * per], s.c, s.h, s.w, k, &mut cols[kdim * hw..]);
    }
    cols
}

/// Forward pass of the (complex or real) convolution.
pub fn conv2d_forward<T: Real>(
    x: &ComplexTensor<T>,
    p: &ComplexConvParams<T>,
    arith: Arithmetic,
) -> Result<ComplexTensor<T>, AutodiffError> {
    conv2d_forward_raw(x, &p.weight, &p.bias, arith)
}

pub(crate) fn conv2d_forward_raw<T: Real>(
    x: &ComplexTensor<T>,
    weight: &ComplexTensor<T>,
    bias: &ComplexTensor<T>,
    arith: Arithmetic,
) -> Result<ComplexTensor<T>, AutodiffError> {
    let xs = x.shape();
    let ws = weight.shape();
    check_conv(xs, ws, bias.shape())?;
    let k = ws.h;
    let cout = ws.n;
    let hw = xs.plane();
    let (big, rows, inner) = big_weight(weight, arith);

    let per_image: Vec<Vec<T>> = (0..xs.n)
        .into_par_iter()
        .map(|n| {
            let cols = image_cols(x, n, k, arith);
            let mut out = vec![T::zero(); rows * hw];
            T::gemm(false, false, rows, inner, hw, T::one(), &big, &cols, T::zero(), &mut out);
            for o in 0..cout {
                let br = bias.re[o];
                out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v += br);
                if arith == Arithmetic::Complex {
                    let bi = bias.im[o];
                    out[(cout + o) * hw..(cout + o + 1) * hw]
                        .iter_mut()
                        .for_each(|v| *v += bi);
                }
            }
            out
        })
        .collect();

    let ys = Shape::new(xs.n, cout, xs.h, xs.w);
    let mut y = ComplexTensor::zeros(ys);
    let per = cout * hw;
    for (n, out) in per_image.into_iter().enumerate() {
        y.re[n * per..(n + 1) * per].copy_from_slice(&out[..per]);
        if arith == Arithmetic::Complex {
            y.im[n * per..(n + 1) * per].copy_from_slice(&out[per..2 * per]);
        }
    }
    Ok(y)
}

/// Gradients of a convolution: `(dx, dweight, dbias)`.
pub(crate) fn conv2d_backward<T: Real>(
    x: &ComplexTensor<T>,
    weight: &ComplexTensor<T>,
    arith: Arithmetic,
    dy: &ComplexTensor<T>,
    need_dx: bool,
) -> (Option<ComplexTensor<T>>, ComplexTensor<T>, ComplexTensor<T>) {
    let xs = x.shape();
    let ws = weight.shape();
    let k = ws.h;
    let cout = ws.n;
    let cin = xs.c;
    let hw = xs.plane();
    let kdim = cin * k * k;
    let (big, rows, inner) = big_weight(weight, arith);
    let per_out = cout * hw;
    let per_in = cin * hw;

    // Per-image partial results are reduced below in batch order, so the
    // sum does not depend on the thread schedule.
    let partials: Vec<(Option<(Vec<T>, Vec<T>)>, Vec<T>)> = (0..xs.n)
        .into_par_iter()
        .map(|n| {
            let mut dyb = vec![T::zero(); rows * hw];
            dyb[..per_out].copy_from_slice(&dy.re[n * per_out..(n + 1) * per_out]);
            if arith == Arithmetic::Complex {
                dyb[per_out..].copy_from_slice(&dy.im[n * per_out..(n + 1) * per_out]);
            }
            let cols = image_cols(x, n, k, arith);
            let mut dw = vec![T::zero(); rows * inner];
            T::gemm(false, true, rows, hw, inner, T::one(), &dyb, &cols, T::zero(), &mut dw);

            let dx = need_dx.then(|| {
                let mut dcols = vec![T::zero(); inner * hw];
                T::gemm(true, false, inner, rows, hw, T::one(), &big, &dyb, T::zero(), &mut dcols);
                let mut dre = vec![T::zero(); per_in];
                col2im(&dcols[..kdim * hw], cin, xs.h, xs.w, k, &mut dre);
                let mut dim = vec![T::zero(); per_in];
                if arith == Arithmetic::Complex {
                    col2im(&dcols[kdim * hw..], cin, xs.h, xs.w, k, &mut dim);
                }
                (dre, dim)
            });
            (dx, dw)
        })
        .collect();

    let mut dweight = ComplexTensor::zeros(ws);
    let mut dbig = vec![T::zero(); rows * inner];
    let mut dx_out = need_dx.then(|| ComplexTensor::zeros(xs));
    for (n, (dx, dw)) in partials.into_iter().enumerate() {
        for (a, b) in dbig.iter_mut().zip(&dw) {
            *a += *b;
        }
        if let (Some(out), Some((dre, dim))) = (dx_out.as_mut(), dx) {
            out.re[n * per_in..(n + 1) * per_in].copy_from_slice(&dre);
            out.im[n * per_in..(n + 1) * per_in].copy_from_slice(&dim);
        }
    }
    match arith {
        Arithmetic::Real => dweight.re.copy_from_slice(&dbig),
        Arithmetic::Complex => {
            let cols = 2 * kdim;
            for o in 0..cout {
                for j in 0..kdim {
                    let tl = dbig[o * cols + j];
                    let tr = dbig[o * cols + kdim + j];
                    let bl = dbig[(cout + o) * cols + j];
                    let br = dbig[(cout + o) * cols + kdim + j];
                    dweight.re[o * kdim + j] = tl + br;
                    dweight.im[o * kdim + j] = bl - tr;
                }
            }
        }
    }

    let mut dbias = ComplexTensor::zeros(Shape::new(1, cout, 1, 1));
    for n in 0..xs.n {
        for o in 0..cout {
            let r = n * per_out + o * hw..n * per_out + (o + 1) * hw;
            dbias.re[o] += dy.re[r.clone()].iter().copied().sum::<T>();
            if arith == Arithmetic::Complex {
                dbias.im[o] += dy.im[r].iter().copied().sum::<T>();
            }
        }
    }
    (dx_out, dweight, dbias)
}
