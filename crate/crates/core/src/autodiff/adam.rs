//! Adam with bias correction and L2-coupled weight decay
//! (`g ← g + λ·θ` before the moment updates).

use super::scalar::Real;
use super::tensor::ComplexTensor;
use super::AutodiffError;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    /// First moments, one per parameter tensor.
    pub m: Vec<ComplexTensor<T>>,
    /// Second moments, nonnegative.
    pub v: Vec<ComplexTensor<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    pub weight_decay: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a ComplexTensor<T>>, lr: f64, weight_decay: f64) -> Self {
        let m: Vec<_> = params.into_iter().map(|p| ComplexTensor::zeros(p.shape())).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
            weight_decay,
        }
    }

    /// One update of every parameter in place.
    pub fn step(&mut self, params: &mut [&mut ComplexTensor<T>], grads: &[ComplexTensor<T>]) -> Result<(), AutodiffError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "adam holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[k].shape() || g.shape() != self.m[k].shape() {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "parameter {k}: {} / gradient {} / moments {}",
                    p.shape(),
                    g.shape(),
                    self.m[k].shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, wd, eps) = (self.lr, self.weight_decay, self.eps);

        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let update = |pv: &mut [T], gv: &[T], mv: &mut [T], vv: &mut [T]| {
                for i in 0..pv.len() {
                    let theta = pv[i].as_f64();
                    let grad = gv[i].as_f64() + wd * theta;
                    let mi = b1 * mv[i].as_f64() + (1.0 - b1) * grad;
                    let vi = b2 * vv[i].as_f64() + (1.0 - b2) * grad * grad;
                    mv[i] = T::from_f64_lossy(mi);
                    vv[i] = T::from_f64_lossy(vi);
                    let mhat = mi / c1;
                    let vhat = vi / c2;
                    pv[i] = T::from_f64_lossy(theta - lr * mhat / (vhat.sqrt() + eps));
                }
            };
            update(&mut p.re, &g.re, &mut m.re, &mut v.re);
            update(&mut p.im, &g.im, &mut m.im, &mut v.im);
        }
        Ok(())
    }
}
