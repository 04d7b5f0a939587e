//! Whitening batch normalization for complex feature maps.
//!
//! Per channel, the `(re, im)` pair is centred and multiplied by the inverse
//! square root of its 2×2 covariance `V + εI`, then mapped through a
//! learnable symmetric 2×2 scale `Γ = [[γrr, γri], [γri, γii]]` and complex
//! shift `β`. The real-arithmetic variant is ordinary per-channel batch
//! normalization.

use rayon::prelude::*;

use super::conv::Arithmetic;
use super::scalar::Real;
use super::tensor::{ComplexTensor, Shape};
use super::AutodiffError;
use crate::hermitian::{matrix_func_vjp, matrix_inv_sqrt, HermitianMatrix2, MatrixFunction};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Running statistics, updated as `running ← m·running + (1 − m)·batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning<T> {
    /// Per channel `(μ_re, μ_im)`.
    pub mean: Vec<[T; 2]>,
    /// Per channel `(V_rr, V_ri, V_ii)`; the real variant uses `V_rr` only.
    pub cov: Vec<[T; 3]>,
    pub momentum: f64,
    pub eps: f64,
}

/// Learnable scale/shift plus running statistics of one BN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBNState<T> {
    /// `(1, C, 1, 3)` holding `(γrr, γri, γii)` in complex mode, `(1, C, 1, 1)` in real mode.
    pub gamma: ComplexTensor<T>,
    /// `(1, C, 1, 1)`.
    pub beta: ComplexTensor<T>,
    pub running: BnRunning<T>,
    pub arith: Arithmetic,
}

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-5;

impl<T: Real> ComplexBNState<T> {
    /// Γ = I/√2 and β = 0 in complex mode; γ = 1, β = 0 in real mode.
    pub fn new(channels: usize, arith: Arithmetic) -> Self {
        let (gamma, cov) = match arith {
            Arithmetic::Complex => {
                let g = T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
                let mut re = Vec::with_capacity(3 * channels);
                for _ in 0..channels {
                    re.extend_from_slice(&[g, T::zero(), g]);
                }
                let half = T::from_f64_lossy(0.5);
                (
                    ComplexTensor::from_real(Shape::new(1, channels, 1, 3), re).unwrap(),
                    [half, T::zero(), half],
                )
            }
            Arithmetic::Real => (
                ComplexTensor::from_real(Shape::new(1, channels, 1, 1), vec![T::one(); channels]).unwrap(),
                [T::one(), T::zero(), T::zero()],
            ),
        };
        Self {
            gamma,
            beta: ComplexTensor::zeros(Shape::new(1, channels, 1, 1)),
            running: BnRunning {
                mean: vec![[T::zero(); 2]; channels],
                cov: vec![cov; channels],
                momentum: DEFAULT_MOMENTUM,
                eps: DEFAULT_EPS,
            },
            arith,
        }
    }

    pub fn channels(&self) -> usize {
        self.beta.shape().c
    }
}

/// Values kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    mode: BnMode,
    mean: Vec<[f64; 2]>,
    /// Regularized covariance `V + εI` (train mode only).
    v: Vec<[f64; 3]>,
    /// Whitening matrix `(W_rr, W_ri, W_ii)`.
    w: Vec<[f64; 3]>,
    xhat_re: Vec<f64>,
    xhat_im: Vec<f64>,
}

fn gamma_of<T: Real>(gamma: &ComplexTensor<T>, c: usize, arith: Arithmetic) -> [f64; 3] {
    match arith {
        Arithmetic::Complex => [
            gamma.re[3 * c].as_f64(),
            gamma.re[3 * c + 1].as_f64(),
            gamma.re[3 * c + 2].as_f64(),
        ],
        Arithmetic::Real => [gamma.re[c].as_f64(), 0.0, 0.0],
    }
}

fn channel_indices(s: Shape, c: usize) -> impl Iterator<Item = usize> {
    let hw = s.plane();
    (0..s.n).flat_map(move |n| {
        let base = (n * s.c + c) * hw;
        base..base + hw
    })
}

fn sym(rr: f64, ri: f64, ii: f64) -> HermitianMatrix2 {
    HermitianMatrix2::new(rr, ii, Complex64::new(ri, 0.0))
}

pub(crate) fn check_bn<T: Real>(x: Shape, gamma: &ComplexTensor<T>, beta: &ComplexTensor<T>, arith: Arithmetic) -> Result<(), AutodiffError> {
    let per = match arith {
        Arithmetic::Complex => 3,
        Arithmetic::Real => 1,
    };
    if gamma.len() != per * x.c || beta.len() != x.c {
        return Err(AutodiffError::ShapeMismatch(format!(
            "batch norm over {} channels with gamma {} / beta {}",
            x.c,
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

pub(crate) fn bn_forward<T: Real>(
    x: &ComplexTensor<T>,
    gamma: &ComplexTensor<T>,
    beta: &ComplexTensor<T>,
    running: &mut BnRunning<T>,
    mode: BnMode,
    arith: Arithmetic,
) -> Result<(ComplexTensor<T>, BnCache), AutodiffError> {
    let s = x.shape();
    check_bn(s, gamma, beta, arith)?;
    if running.mean.len() != s.c {
        return Err(AutodiffError::ShapeMismatch(format!(
            "running statistics for {} channels, input has {}",
            running.mean.len(),
            s.c
        )));
    }
    let count = s.n * s.plane();
    if mode == BnMode::Train && count < 2 {
        return Err(AutodiffError::BatchTooSmall(count));
    }
    let eps = running.eps;
    let complex = arith == Arithmetic::Complex;

    let stats: Vec<([f64; 2], [f64; 3], [f64; 3])> = (0..s.c)
        .into_par_iter()
        .map(|c| -> Result<_, AutodiffError> {
            let (mean, v) = match mode {
                BnMode::Train => {
                    let m = count as f64;
                    let (mut sr, mut si) = (0.0, 0.0);
                    for i in channel_indices(s, c) {
                        sr += x.re[i].as_f64();
                        si += x.im[i].as_f64();
                    }
                    let (mr, mi) = (sr / m, if complex { si / m } else { 0.0 });
                    let (mut vrr, mut vri, mut vii) = (0.0, 0.0, 0.0);
                    for i in channel_indices(s, c) {
                        let a = x.re[i].as_f64() - mr;
                        vrr += a * a;
                        if complex {
                            let b = x.im[i].as_f64() - mi;
                            vri += a * b;
                            vii += b * b;
                        }
                    }
                    ([mr, mi], [vrr / m, vri / m, vii / m])
                }
                BnMode::Infer => {
                    let rm = running.mean[c];
                    let rc = running.cov[c];
                    ([rm[0].as_f64(), rm[1].as_f64()], [rc[0].as_f64(), rc[1].as_f64(), rc[2].as_f64()])
                }
            };
            let v_reg = [v[0] + eps, v[1], v[2] + eps];
            let w = if complex {
                let w = matrix_inv_sqrt(&sym(v_reg[0], v_reg[1], v_reg[2]))?;
                [w.c11, w.c12.re, w.c22]
            } else {
                [v_reg[0].sqrt().recip(), 0.0, 0.0]
            };
            Ok((mean, v, w))
        })
        .collect::<Result<_, _>>()?;

    if mode == BnMode::Train {
        let m = running.momentum;
        for (c, (mean, v, _)) in stats.iter().enumerate() {
            let rm = &mut running.mean[c];
            for k in 0..2 {
                rm[k] = T::from_f64_lossy(m * rm[k].as_f64() + (1.0 - m) * mean[k]);
            }
            let rc = &mut running.cov[c];
            for k in 0..3 {
                rc[k] = T::from_f64_lossy(m * rc[k].as_f64() + (1.0 - m) * v[k]);
            }
        }
    }

    let mut y = ComplexTensor::zeros(s);
    let mut xhat_re = vec![0.0; s.len()];
    let mut xhat_im = vec![0.0; s.len()];
    for (c, (mean, _, w)) in stats.iter().enumerate() {
        let g = gamma_of(gamma, c, arith);
        let (br, bi) = (beta.re[c].as_f64(), beta.im[c].as_f64());
        for i in channel_indices(s, c) {
            let a = x.re[i].as_f64() - mean[0];
            if complex {
                let b = x.im[i].as_f64() - mean[1];
                let hr = w[0] * a + w[1] * b;
                let hi = w[1] * a + w[2] * b;
                xhat_re[i] = hr;
                xhat_im[i] = hi;
                y.re[i] = T::from_f64_lossy(g[0] * hr + g[1] * hi + br);
                y.im[i] = T::from_f64_lossy(g[1] * hr + g[2] * hi + bi);
            } else {
                let hr = w[0] * a;
                xhat_re[i] = hr;
                y.re[i] = T::from_f64_lossy(g[0] * hr + br);
            }
        }
    }

    let (mean, v, w) = stats.into_iter().fold(
        (Vec::new(), Vec::new(), Vec::new()),
        |(mut ms, mut vs, mut ws), (m, v, w)| {
            ms.push(m);
            vs.push([v[0] + eps, v[1], v[2] + eps]);
            ws.push(w);
            (ms, vs, ws)
        },
    );
    Ok((
        y,
        BnCache {
            mode,
            mean,
            v,
            w,
            xhat_re,
            xhat_im,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn bn_backward<T: Real>(
    x: &ComplexTensor<T>,
    gamma: &ComplexTensor<T>,
    cache: &BnCache,
    arith: Arithmetic,
    dy: &ComplexTensor<T>,
) -> Result<(ComplexTensor<T>, ComplexTensor<T>, ComplexTensor<T>), AutodiffError> {
    let s = x.shape();
    let complex = arith == Arithmetic::Complex;
    let m = (s.n * s.plane()) as f64;

    let per_channel: Vec<(Vec<(usize, f64, f64)>, [f64; 3], [f64; 2])> = (0..s.c)
        .into_par_iter()
        .map(|c| -> Result<_, AutodiffError> {
            let g = gamma_of(gamma, c, arith);
            let w = cache.w[c];
            let mean = cache.mean[c];
            let idx: Vec<usize> = channel_indices(s, c).collect();

            let mut dgamma = [0.0; 3];
            let mut dbeta = [0.0; 2];
            // dxhat = Γᵀ dy (Γ symmetric)
            let mut dh: Vec<(f64, f64)> = Vec::with_capacity(idx.len());
            for &i in &idx {
                let (gr, gi) = (dy.re[i].as_f64(), if complex { dy.im[i].as_f64() } else { 0.0 });
                let (hr, hi) = (cache.xhat_re[i], cache.xhat_im[i]);
                dbeta[0] += gr;
                dbeta[1] += gi;
                if complex {
                    dgamma[0] += gr * hr;
                    dgamma[1] += gr * hi + gi * hr;
                    dgamma[2] += gi * hi;
                    dh.push((g[0] * gr + g[1] * gi, g[1] * gr + g[2] * gi));
                } else {
                    dgamma[0] += gr * hr;
                    dh.push((g[0] * gr, 0.0));
                }
            }

            let mut out = Vec::with_capacity(idx.len());
            match (cache.mode, complex) {
                (BnMode::Infer, _) => {
                    for (k, &i) in idx.iter().enumerate() {
                        let (a, b) = dh[k];
                        out.push((i, w[0] * a + w[1] * b, w[1] * a + w[2] * b));
                    }
                }
                (BnMode::Train, false) => {
                    let (mut sum_dh, mut sum_dh_h) = (0.0, 0.0);
                    for (k, &i) in idx.iter().enumerate() {
                        sum_dh += dh[k].0;
                        sum_dh_h += dh[k].0 * cache.xhat_re[i];
                    }
                    let (md, mdh) = (sum_dh / m, sum_dh_h / m);
                    for (k, &i) in idx.iter().enumerate() {
                        let dx = w[0] * (dh[k].0 - md - cache.xhat_re[i] * mdh);
                        out.push((i, dx, 0.0));
                    }
                }
                (BnMode::Train, true) => {
                    // W = V^{-1/2}; collect ∂L/∂W = Σ dxhat·cᵀ, then pull back to V.
                    let mut gw = [[0.0; 2]; 2];
                    let mut centred = Vec::with_capacity(idx.len());
                    for (k, &i) in idx.iter().enumerate() {
                        let a = x.re[i].as_f64() - mean[0];
                        let b = x.im[i].as_f64() - mean[1];
                        centred.push((a, b));
                        let (p, q) = dh[k];
                        gw[0][0] += p * a;
                        gw[0][1] += p * b;
                        gw[1][0] += q * a;
                        gw[1][1] += q * b;
                    }
                    let v = cache.v[c];
                    let upstream = sym(gw[0][0], 0.5 * (gw[0][1] + gw[1][0]), gw[1][1]);
                    let gv = matrix_func_vjp(&sym(v[0], v[1], v[2]), &upstream, MatrixFunction::InvSqrt)?;
                    let (grr, gri, gii) = (gv.c11, gv.c12.re, gv.c22);
                    let mut dc = Vec::with_capacity(idx.len());
                    let (mut sa, mut sb) = (0.0, 0.0);
                    for (k, &(a, b)) in centred.iter().enumerate() {
                        let (p, q) = dh[k];
                        let da = w[0] * p + w[1] * q + 2.0 / m * (grr * a + gri * b);
                        let db = w[1] * p + w[2] * q + 2.0 / m * (gri * a + gii * b);
                        sa += da;
                        sb += db;
                        dc.push((da, db));
                    }
                    let (ma, mb) = (sa / m, sb / m);
                    for (k, &i) in idx.iter().enumerate() {
                        out.push((i, dc[k].0 - ma, dc[k].1 - mb));
                    }
                }
            }
            Ok((out, dgamma, dbeta))
        })
        .collect::<Result<_, _>>()?;

    let mut dx = ComplexTensor::zeros(s);
    let mut dgamma = ComplexTensor::zeros(gamma.shape());
    let mut dbeta = ComplexTensor::zeros(Shape::new(1, s.c, 1, 1));
    for (c, (vals, dg, db)) in per_channel.into_iter().enumerate() {
        for (i, a, b) in vals {
            dx.re[i] = T::from_f64_lossy(a);
            dx.im[i] = T::from_f64_lossy(b);
        }
        if complex {
            for k in 0..3 {
                dgamma.re[3 * c + k] = T::from_f64_lossy(dg[k]);
            }
            dbeta.im[c] = T::from_f64_lossy(db[1]);
        } else {
            dgamma.re[c] = T::from_f64_lossy(dg[0]);
        }
        dbeta.re[c] = T::from_f64_lossy(db[0]);
    }
    Ok((dx, dgamma, dbeta))
}

/// Stand-alone batch norm (no gradient recording).
pub fn cbatchnorm<T: Real>(
    x: &ComplexTensor<T>,
    state: &mut ComplexBNState<T>,
    mode: BnMode,
) -> Result<ComplexTensor<T>, AutodiffError> {
    let (y, _) = bn_forward(x, &state.gamma, &state.beta, &mut state.running, mode, state.arith)?;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> ComplexTensor<f64> {
        let re = (0..shape.len()).map(|_| StandardNormal.sample(rng)).collect();
        let im = (0..shape.len()).map(|_| StandardNormal.sample(rng)).collect();
        ComplexTensor::from_parts(shape, re, im).unwrap()
    }

    fn empirical_cov(t: &ComplexTensor<f64>, c: usize) -> [f64; 3] {
        let s = t.shape();
        let idx: Vec<usize> = channel_indices(s, c).collect();
        let m = idx.len() as f64;
        let mr = idx.iter().map(|&i| t.re[i]).sum::<f64>() / m;
        let mi = idx.iter().map(|&i| t.im[i]).sum::<f64>() / m;
        let mut v = [0.0; 3];
        for &i in &idx {
            let (a, b) = (t.re[i] - mr, t.im[i] - mi);
            v[0] += a * a;
            v[1] += a * b;
            v[2] += b * b;
        }
        v.map(|x| x / m)
    }

    #[test]
    fn white_input_is_scaled_by_gamma() {
        // Exactly white data: centred, unit per-component variance, uncorrelated.
        let s = Shape::new(1, 1, 2, 2);
        let x = ComplexTensor::from_parts(s, vec![1.0, -1.0, 1.0, -1.0], vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let mut st = ComplexBNState::<f64>::new(1, Arithmetic::Complex);
        st.running.eps = 0.0;
        let y = cbatchnorm(&x, &mut st, BnMode::Train).unwrap();
        let k = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..4 {
            assert!((y.re[i] - k * x.re[i]).abs() < 1e-15);
            assert!((y.im[i] - k * x.im[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let s = Shape::new(2, 1, 3, 3);
        let x = ComplexTensor::from_parts(s, vec![4.0; 18], vec![-2.0; 18]).unwrap();
        let mut st = ComplexBNState::<f64>::new(1, Arithmetic::Complex);
        st.beta.re[0] = 0.25;
        st.beta.im[0] = -0.5;
        let y = cbatchnorm(&x, &mut st, BnMode::Train).unwrap();
        assert!(y.re.iter().all(|v| *v == 0.25));
        assert!(y.im.iter().all(|v| *v == -0.5));
    }

    #[test]
    fn train_output_covariance_is_gamma_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = Shape::new(4, 2, 6, 6);
        let mut x = random(s, &mut rng);
        // correlate re and im
        for i in 0..s.len() {
            x.im[i] = 0.6 * x.re[i] + 0.3 * x.im[i] + 1.5;
            x.re[i] *= 2.0;
        }
        let mut st = ComplexBNState::<f64>::new(2, Arithmetic::Complex);
        st.running.eps = 0.0;
        st.gamma.re[0..3].copy_from_slice(&[0.9, 0.2, 0.4]);
        let y = cbatchnorm(&x, &mut st, BnMode::Train).unwrap();
        for c in 0..2 {
            let g = gamma_of(&st.gamma, c, Arithmetic::Complex);
            let want = [g[0] * g[0] + g[1] * g[1], g[0] * g[1] + g[1] * g[2], g[1] * g[1] + g[2] * g[2]];
            let got = empirical_cov(&y, c);
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() < 1e-6, "channel {c}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn infer_mode_is_deterministic_and_uses_running_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(Shape::new(2, 3, 4, 4), &mut rng);
        let mut st = ComplexBNState::<f64>::new(3, Arithmetic::Complex);
        for _ in 0..3 {
            cbatchnorm(&x, &mut st, BnMode::Train).unwrap();
        }
        let before = st.running.clone();
        let a = cbatchnorm(&x, &mut st, BnMode::Infer).unwrap();
        let b = cbatchnorm(&x, &mut st, BnMode::Infer).unwrap();
        assert_eq!(a, b);
        assert_eq!(st.running, before);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let s = Shape::new(1, 1, 1, 2);
        let x = ComplexTensor::from_parts(s, vec![1.0, 3.0], vec![0.0, 0.0]).unwrap();
        let mut st = ComplexBNState::<f64>::new(1, Arithmetic::Real);
        cbatchnorm(&x, &mut st, BnMode::Train).unwrap();
        assert!((st.running.mean[0][0] - 0.1 * 2.0).abs() < 1e-15);
        assert!((st.running.cov[0][0] - (0.9 + 0.1 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn train_needs_two_samples() {
        let x = ComplexTensor::<f64>::zeros(Shape::SCALAR);
        let mut st = ComplexBNState::<f64>::new(1, Arithmetic::Complex);
        assert!(matches!(cbatchnorm(&x, &mut st, BnMode::Train), Err(AutodiffError::BatchTooSmall(1))));
    }
}
