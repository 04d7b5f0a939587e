#![allow(dead_code)]

use cvdespeck::autodiff::{ComplexTensor, Graph, NodeId, Shape};
use cvdespeck::hermitian::HermitianMatrix2;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_tensor(shape: Shape, scale: f64, rng: &mut ChaCha8Rng) -> ComplexTensor<f64> {
    let re = (0..shape.len()).map(|_| scale * normal(rng)).collect();
    let im = (0..shape.len()).map(|_| scale * normal(rng)).collect();
    ComplexTensor::from_parts(shape, re, im).unwrap()
}

/// Random tensor whose components all satisfy `|v| ≥ margin`, so that
/// finite-difference steps never cross the CReLU kink.
pub fn random_away_from_zero(shape: Shape, margin: f64, rng: &mut ChaCha8Rng) -> ComplexTensor<f64> {
    let mut t = random_tensor(shape, 1.0, rng);
    for v in t.re.iter_mut().chain(t.im.iter_mut()) {
        *v += margin.copysign(*v);
    }
    t
}

/// Random unit vector in C².
pub fn random_unit(rng: &mut ChaCha8Rng) -> [Complex64; 2] {
    let a = Complex64::new(normal(rng), normal(rng));
    let b = Complex64::new(normal(rng), normal(rng));
    let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
    [a / n, b / n]
}

/// `λ1·u u† + λ2·(I − u u†)` written out entry by entry.
pub fn from_spectrum(l1: f64, l2: f64, u: [Complex64; 2]) -> HermitianMatrix2 {
    let d = l1 - l2;
    HermitianMatrix2::new(
        l2 + d * u[0].norm_sqr(),
        l2 + d * u[1].norm_sqr(),
        u[0] * u[1].conj() * d,
    )
}

/// PSD matrix with trace in `[1e-2, 1e2]` and `λ2/tr ∈ [min_ratio, 0.5]`.
pub fn random_psd(min_ratio: f64, rng: &mut ChaCha8Rng) -> HermitianMatrix2 {
    let tr = 10f64.powf(rng.random_range(-2.0..2.0));
    let ratio = (min_ratio.ln() + rng.random::<f64>() * (0.5f64.ln() - min_ratio.ln())).exp();
    from_spectrum((1.0 - ratio) * tr, ratio * tr, random_unit(rng))
}

/// Entry-wise full matrix.
pub fn full(m: &HermitianMatrix2) -> [[Complex64; 2]; 2] {
    [[Complex64::new(m.c11, 0.0), m.c12], [m.c12.conj(), Complex64::new(m.c22, 0.0)]]
}

pub fn max_entry_diff(a: &HermitianMatrix2, b: &HermitianMatrix2) -> f64 {
    let (fa, fb) = (full(a), full(b));
    let mut m = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            m = m.max((fa[i][j] - fb[i][j]).norm());
        }
    }
    m
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    pub failures: Vec<String>,
    /// Largest `|a − n| / max(|a|, |n|)` among coordinates above the absolute floor.
    pub worst_rel: f64,
}

impl GradReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

pub const ABS_FLOOR: f64 = 1e-8;

/// Absolute resolution of a central difference of a function of size
/// `loss`: below this, `(f(h) − f(−h)) / 2h` is round-off.
pub fn fd_floor(loss: f64, h: f64) -> f64 {
    ABS_FLOOR.max(16.0 * f64::EPSILON * loss.abs() / h)
}

fn compare(report: &mut GradReport, label: String, a: f64, n: f64, rtol: f64, floor: f64) {
    report.checked += 1;
    let err = (a - n).abs();
    let scale = a.abs().max(n.abs());
    if err > floor {
        report.worst_rel = report.worst_rel.max(err / scale);
    }
    if err > rtol * scale + floor {
        report.failures.push(format!("{label}: analytic {a:e} numeric {n:e}"));
    }
}

/// Central-difference check of the gradient of a scalar graph with respect
/// to every real coordinate of every leaf.
pub fn check_graph(
    leaves: &[ComplexTensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
    h: f64,
    rtol: f64,
) -> GradReport {
    let eval = |values: &[ComplexTensor<f64>]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|v| g.leaf(v.clone(), true)).collect();
        let l = build(&mut g, &ids);
        (g, ids, l)
    };
    let (g, ids, l) = eval(leaves);
    let floor = fd_floor(g.value(l).item(), h);
    let grads = g.backward(l).unwrap();
    let mut report = GradReport::default();
    for (li, leaf) in leaves.iter().enumerate() {
        let zero = ComplexTensor::zeros(leaf.shape());
        let analytic = grads.get(ids[li]).unwrap_or(&zero);
        for k in 0..leaf.len() {
            for part in 0..2 {
                let numeric = {
                    let f = |delta: f64| {
                        let mut vals = leaves.to_vec();
                        let v = if part == 0 { &mut vals[li].re[k] } else { &mut vals[li].im[k] };
                        *v += delta;
                        let (g, _, l) = eval(&vals);
                        g.value(l).item()
                    };
                    (f(h) - f(-h)) / (2.0 * h)
                };
                let a = if part == 0 { analytic.re[k] } else { analytic.im[k] };
                compare(&mut report, format!("leaf {li} [{k}].{}", ["re", "im"][part]), a, numeric, rtol, floor);
            }
        }
    }
    report
}

/// Same check over a parameter list reached through `params_mut`.
pub fn check_params<M: Clone>(
    model: &M,
    params_mut: impl Fn(&mut M) -> Vec<&mut ComplexTensor<f64>>,
    loss_and_grads: impl Fn(&mut M) -> (f64, Vec<ComplexTensor<f64>>),
    h: f64,
    rtol: f64,
) -> GradReport {
    let (loss, grads) = loss_and_grads(&mut model.clone());
    let floor = fd_floor(loss, h);
    let mut report = GradReport::default();
    for (pi, grad) in grads.iter().enumerate() {
        for k in 0..grad.len() {
            for part in 0..2 {
                let f = |delta: f64| {
                    let mut m = model.clone();
                    {
                        let mut ps = params_mut(&mut m);
                        let v = if part == 0 { &mut ps[pi].re[k] } else { &mut ps[pi].im[k] };
                        *v += delta;
                    }
                    loss_and_grads(&mut m).0
                };
                let numeric = (f(h) - f(-h)) / (2.0 * h);
                let a = if part == 0 { grad.re[k] } else { grad.im[k] };
                compare(&mut report, format!("param {pi} [{k}].{}", ["re", "im"][part]), a, numeric, rtol, floor);
            }
        }
    }
    report
}

pub const FD_STEP: f64 = 1e-4;
pub const FD_RTOL: f64 = 1e-4;

fn bn_state(channels: usize, arith: cvdespeck::autodiff::Arithmetic) -> cvdespeck::autodiff::BnRunning<f64> {
    cvdespeck::autodiff::ComplexBNState::<f64>::new(channels, arith).running
}

/// Gradient checks of every layer type on tensors of at most 2×6×4×4.
pub fn layer_gradient_checks(seed: u64) -> Vec<(&'static str, GradReport)> {
    use cvdespeck::autodiff::{Arithmetic, BnMode};
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, rtol) = (FD_STEP, FD_RTOL);
    let mut out = Vec::new();

    let real = |t: ComplexTensor<f64>| ComplexTensor::from_real(t.shape(), t.re).unwrap();

    let x = random_tensor(Shape::new(2, 2, 4, 4), 1.0, &mut rng);
    let w = random_tensor(Shape::new(3, 2, 3, 3), 0.3, &mut rng);
    let b = random_tensor(Shape::new(1, 3, 1, 1), 0.3, &mut rng);
    let t = random_tensor(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
    let r = check_graph(
        &[x, w, b],
        |g, ids| {
            let y = g.conv2d(ids[0], ids[1], ids[2], Arithmetic::Complex).unwrap();
            let t = g.leaf(t.clone(), false);
            g.sse_loss(y, t, 1.0).unwrap()
        },
        h,
        rtol,
    );
    out.push(("cconv2d complex", r));

    let x = real(random_tensor(Shape::new(2, 6, 4, 4), 1.0, &mut rng));
    let w = real(random_tensor(Shape::new(4, 6, 3, 3), 0.3, &mut rng));
    let b = real(random_tensor(Shape::new(1, 4, 1, 1), 0.3, &mut rng));
    let t = real(random_tensor(Shape::new(2, 4, 4, 4), 1.0, &mut rng));
    let r = check_graph(
        &[x, w, b],
        |g, ids| {
            let y = g.conv2d(ids[0], ids[1], ids[2], Arithmetic::Real).unwrap();
            let t = g.leaf(t.clone(), false);
            g.sse_loss(y, t, 1.0).unwrap()
        },
        h,
        rtol,
    );
    out.push(("cconv2d real", r));

    let x = random_away_from_zero(Shape::new(2, 3, 4, 4), 0.05, &mut rng);
    let t = random_tensor(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
    let r = check_graph(
        &[x],
        |g, ids| {
            let y = g.crelu(ids[0]);
            let t = g.leaf(t.clone(), false);
            g.sse_loss(y, t, 1.0).unwrap()
        },
        h,
        rtol,
    );
    out.push(("crelu", r));

    let mut x = random_tensor(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
    for i in 0..x.len() {
        x.im[i] = 0.6 * x.re[i] + 0.5 * x.im[i] + 0.3;
    }
    let mut gamma = ComplexTensor::from_real(
        Shape::new(1, 3, 1, 3),
        (0..3).flat_map(|_| [0.9, 0.2, 0.5]).collect(),
    )
    .unwrap();
    for v in gamma.re.iter_mut() {
        *v += 0.1 * normal(&mut rng);
    }
    let beta = random_tensor(Shape::new(1, 3, 1, 1), 0.3, &mut rng);
    let t = random_tensor(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
    let r = check_graph(
        &[x, gamma, beta],
        |g, ids| {
            let mut run = bn_state(3, Arithmetic::Complex);
            let y = g.batch_norm(ids[0], ids[1], ids[2], &mut run, BnMode::Train, Arithmetic::Complex).unwrap();
            let t = g.leaf(t.clone(), false);
            g.sse_loss(y, t, 1.0).unwrap()
        },
        h,
        rtol,
    );
    out.push(("cbatchnorm complex train", r));

    let x = real(random_tensor(Shape::new(2, 6, 4, 4), 1.5, &mut rng));
    let gamma = ComplexTensor::from_real(Shape::new(1, 6, 1, 1), (0..6).map(|_| 1.0 + 0.2 * normal(&mut rng)).collect()).unwrap();
    let beta = real(random_tensor(Shape::new(1, 6, 1, 1), 0.3, &mut rng));
    let t = real(random_tensor(Shape::new(2, 6, 4, 4), 1.0, &mut rng));
    let r = check_graph(
        &[x, gamma, beta],
        |g, ids| {
            let mut run = bn_state(6, Arithmetic::Real);
            let y = g.batch_norm(ids[0], ids[1], ids[2], &mut run, BnMode::Train, Arithmetic::Real).unwrap();
            let t = g.leaf(t.clone(), false);
            g.sse_loss(y, t, 1.0).unwrap()
        },
        h,
        rtol,
    );
    out.push(("cbatchnorm real train", r));

    let x = random_tensor(Shape::new(2, 3, 4, 4), 0.7, &mut rng);
    let t = random_tensor(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
    let r = check_graph(
        &[x],
        |g, ids| {
            let y = g.hermitian_exp(ids[0]).unwrap();
            let t = g.leaf(t.clone(), false);
            g.sse_loss(y, t, 1.0).unwrap()
        },
        h,
        rtol,
    );
    out.push(("hermitian_exp", r));

    let p = random_tensor(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
    let t = random_tensor(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
    let r = check_graph(&[p, t], |g, ids| g.sse_loss(ids[0], ids[1], 3.7).unwrap(), h, rtol);
    out.push(("sse_loss", r));

    out
}

/// Parameter gradients of depth-3 two-stream (complex) and single-stream
/// (real) models through the full loss, plus the input gradient of one stream.
/// Smallest CReLU input magnitude that `x` produces anywhere in `stream`.
pub fn kink_distance(
    stream: &cvdespeck::model::Stream<f64>,
    x: &ComplexTensor<f64>,
    arith: cvdespeck::autodiff::Arithmetic,
) -> f64 {
    use cvdespeck::autodiff::{cbatchnorm, cconv2d, crelu, Arithmetic, BnMode};
    let mut h = x.clone();
    let mut nearest = f64::INFINITY;
    for l in &stream.layers {
        h = cconv2d(&h, &l.conv, arith).unwrap();
        if let Some(bn) = &l.bn {
            h = cbatchnorm(&h, &mut bn.clone(), BnMode::Train).unwrap();
        }
        if l.relu {
            let parts: &[&Vec<f64>] = match arith {
                Arithmetic::Complex => &[&h.re, &h.im],
                Arithmetic::Real => &[&h.re],
            };
            nearest = parts.iter().flat_map(|p| p.iter()).fold(nearest, |m, v| m.min(v.abs()));
            h = crelu(&h);
        }
    }
    nearest
}

/// Far enough from the kink that a `FD_STEP` perturbation of any parameter
/// cannot flip a CReLU branch.
pub const KINK_MARGIN: f64 = 2e-3;

pub fn network_gradient_checks(seed: u64) -> Vec<(&'static str, GradReport)> {
    use cvdespeck::autodiff::{Arithmetic, BnMode};
    use cvdespeck::model::{DeSpeckNetModel, ModelConfig};
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for arith in [Arithmetic::Complex, Arithmetic::Real] {
        let cfg = ModelConfig { depth: 3, filters: 4, kernel: 3, arithmetic: arith };
        let model = match arith {
            Arithmetic::Complex => DeSpeckNetModel::<f64>::build(cfg, seed).unwrap(),
            Arithmetic::Real => DeSpeckNetModel::<f64>::build_rv_baseline(cfg, seed).unwrap(),
        };
        let io = cfg.io_channels();
        let shape = Shape::new(2, io, 4, 4);
        let draw = |rng: &mut ChaCha8Rng| {
            let t = random_tensor(shape, 0.5, rng);
            match arith {
                Arithmetic::Real => ComplexTensor::from_real(shape, t.re).unwrap(),
                Arithmetic::Complex => t,
            }
        };
        // redraw until no CReLU input sits within a step of its kink
        let mut x = draw(&mut rng);
        let streams: Vec<_> = std::iter::once(&model.fcn_cov).chain(&model.fcn_noise).collect();
        while streams.iter().any(|s| kink_distance(s, &x, arith) < KINK_MARGIN) {
            x = draw(&mut rng);
        }
        let r = draw(&mut rng);
        let lin = random_tensor(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
        let report = check_params(
            &model,
            |m| m.params_mut(),
            |m| {
                let mut g = Graph::new();
                let f = m.record_forward(&mut g, x.clone(), BnMode::Train).unwrap();
                let l = DeSpeckNetModel::record_loss(&mut g, &f, r.clone(), lin.clone(), 100.0, 1.0).unwrap();
                let mut grads = g.backward(l.total).unwrap();
                let gs = f
                    .params
                    .iter()
                    .map(|&id| grads.take(id).unwrap_or_else(|| ComplexTensor::zeros(g.value(id).shape())))
                    .collect();
                (g.value(l.total).item(), gs)
            },
            FD_STEP,
            FD_RTOL,
        );
        out.push((
            match arith {
                Arithmetic::Complex => "3-layer two-stream network (params)",
                Arithmetic::Real => "3-layer real network (params)",
            },
            report,
        ));

        if arith == Arithmetic::Complex {
            let stream = model.fcn_cov.clone();
            let t = random_tensor(shape, 0.5, &mut rng);
            let report = check_graph(
                &[x.clone()],
                |g, ids| {
                    let mut s = stream.clone();
                    let (y, _) = s.record(g, ids[0], BnMode::Train, Arithmetic::Complex).unwrap();
                    let t = g.leaf(t.clone(), false);
                    g.sse_loss(y, t, 1.0).unwrap()
                },
                FD_STEP,
                FD_RTOL,
            );
            out.push(("3-layer stream (input)", report));
        }
    }
    out
}
