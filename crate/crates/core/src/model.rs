//! The two-stream despeckling network and its real-valued baseline.
//!
//! Both streams read the log-domain encoding of the noisy covariance.
//! `fcn_cov` predicts the clean log covariance, `fcn_noise` the additive
//! log-domain noise; their sum passes through the per-pixel matrix
//! exponential to reconstruct the noisy input.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{
    cbatchnorm, cconv2d, crelu, AdamState, Arithmetic, AutodiffError, BnMode, ComplexBNState,
    ComplexConvParams, ComplexTensor, Graph, NodeId, Real, Shape,
};
use crate::hermitian::DEFAULT_LOG_FLOOR;
use crate::metrics;
use crate::sim::{self, ChannelStack, CovarianceField, Domain, PatchTriple, SimError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model/input mismatch: {0}")]
    Mismatch(String),
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub depth: usize,
    /// Channels per hidden layer (complex channels in complex mode).
    pub filters: usize,
    pub kernel: usize,
    pub arithmetic: Arithmetic,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 17,
            filters: 48,
            kernel: 3,
            arithmetic: Arithmetic::Complex,
        }
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            depth: 5,
            filters: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth < 3 {
            return Err(ModelError::InvalidConfig(format!("depth must be at least 3, got {}", self.depth)));
        }
        if self.kernel % 2 == 0 {
            return Err(ModelError::InvalidConfig(format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.filters == 0 {
            return Err(ModelError::InvalidConfig("filters must be positive".into()));
        }
        Ok(())
    }

    /// 3 complex channels or 6 real channels.
    pub fn io_channels(&self) -> usize {
        match self.arithmetic {
            Arithmetic::Complex => 3,
            Arithmetic::Real => 6,
        }
    }

    /// Pixels of context on each side that influence one output pixel.
    pub fn receptive_radius(&self) -> usize {
        (self.kernel - 1) / 2 * self.depth
    }

    /// Trainable real scalars in one stream.
    pub fn real_param_count(&self) -> usize {
        let (io, f, kk, d) = (self.io_channels(), self.filters, self.kernel * self.kernel, self.depth);
        let weights = io * f * kk + (d - 2) * f * f * kk + f * io * kk;
        let biases = (d - 1) * f + io;
        match self.arithmetic {
            Arithmetic::Complex => 2 * (weights + biases) + (d - 2) * f * 5,
            Arithmetic::Real => weights + biases + (d - 2) * f * 2,
        }
    }

    /// Real-arithmetic config of equal depth/kernel whose parameter count
    /// is closest to this one.
    pub fn matched_real(&self) -> Self {
        let target = self.real_param_count() as i64;
        let candidate = |filters| Self {
            filters,
            arithmetic: Arithmetic::Real,
            ..*self
        };
        (1..=4 * self.filters)
            .map(candidate)
            .min_by_key(|c| (c.real_param_count() as i64 - target).abs())
            .unwrap()
    }
}

/// One conv layer with optional BN and activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub conv: ComplexConvParams<T>,
    pub bn: Option<ComplexBNState<T>>,
    pub relu: bool,
}

/// One fully convolutional stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream<T> {
    pub layers: Vec<Layer<T>>,
}

fn init_conv<T: Real>(out_c: usize, in_c: usize, k: usize, arith: Arithmetic, rng: &mut ChaCha8Rng) -> ComplexConvParams<T> {
    let mut p = ComplexConvParams::zeros(out_c, in_c, k);
    let fan_in = (in_c * k * k) as f64;
    match arith {
        Arithmetic::Complex => {
            let sigma = 1.0 / fan_in.sqrt();
            for i in 0..p.weight.len() {
                let u: f64 = rng.random();
                let mag = sigma * (-2.0 * (1.0 - u).ln()).sqrt();
                let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                p.weight.re[i] = T::from_f64_lossy(mag * phase.cos());
                p.weight.im[i] = T::from_f64_lossy(mag * phase.sin());
            }
        }
        Arithmetic::Real => {
            let std = (2.0 / fan_in).sqrt();
            for w in p.weight.re.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *w = T::from_f64_lossy(std * z);
            }
        }
    }
    p
}

impl<T: Real> Stream<T> {
    /// Conv+CReLU, `depth − 2` × (Conv+BN+CReLU), Conv.
    pub fn build(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (io, f, k, a) = (cfg.io_channels(), cfg.filters, cfg.kernel, cfg.arithmetic);
        let mut layers = vec![Layer { conv: init_conv(f, io, k, a, rng), bn: None, relu: true }];
        for _ in 0..cfg.depth - 2 {
            layers.push(Layer {
                conv: init_conv(f, f, k, a, rng),
                bn: Some(ComplexBNState::new(f, a)),
                relu: true,
            });
        }
        layers.push(Layer { conv: init_conv(io, f, k, a, rng), bn: None, relu: false });
        Self { layers }
    }

    pub fn params(&self) -> Vec<&ComplexTensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.conv.weight);
            out.push(&l.conv.bias);
            if let Some(bn) = &l.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut ComplexTensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.conv.weight);
            out.push(&mut l.conv.bias);
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    /// Weight and bias element count of all convolutions.
    pub fn conv_param_count(&self) -> usize {
        self.layers.iter().map(|l| l.conv.weight.len() + l.conv.bias.len()).sum()
    }

    pub fn bn_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.bn.is_some()).count()
    }

    /// Forward pass without recording.
    pub fn infer(&self, x: &ComplexTensor<T>, arith: Arithmetic) -> Result<ComplexTensor<T>, ModelError> {
        let mut h = x.clone();
        for l in &self.layers {
            h = cconv2d(&h, &l.conv, arith)?;
            if let Some(bn) = &l.bn {
                h = cbatchnorm(&h, &mut bn.clone(), BnMode::Infer)?;
            }
            if l.relu {
                h = crelu(&h);
            }
        }
        Ok(h)
    }

    /// Forward pass on a graph; returns the output node and the parameter
    /// leaves in [`Self::params`] order.
    pub fn record(
        &mut self,
        g: &mut Graph<T>,
        x: NodeId,
        mode: BnMode,
        arith: Arithmetic,
    ) -> Result<(NodeId, Vec<NodeId>), ModelError> {
        let mut h = x;
        let mut leaves = Vec::new();
        for l in &mut self.layers {
            let w = g.leaf(l.conv.weight.clone(), true);
            let b = g.leaf(l.conv.bias.clone(), true);
            leaves.extend([w, b]);
            h = g.conv2d(h, w, b, arith)?;
            let expect = g.value(x).shape();
            debug_assert_eq!((g.value(h).shape().h, g.value(h).shape().w), (expect.h, expect.w));
            if let Some(bn) = &mut l.bn {
                let gamma = g.leaf(bn.gamma.clone(), true);
                let beta = g.leaf(bn.beta.clone(), true);
                leaves.extend([gamma, beta]);
                h = g.batch_norm(h, gamma, beta, &mut bn.running, mode, arith)?;
            }
            if l.relu {
                h = g.crelu(h);
            }
        }
        Ok((h, leaves))
    }
}

/// Stream RNG: ChaCha8 keyed by the build seed, one stream per FCN.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeSpeckNetModel<T = f32> {
    pub config: ModelConfig,
    pub fcn_cov: Stream<T>,
    /// Absent for the real-valued baseline.
    pub fcn_noise: Option<Stream<T>>,
}

/// Graph handles of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub input: NodeId,
    pub clean_log: NodeId,
    pub noise: Option<NodeId>,
    pub recon_linear: Option<NodeId>,
    /// Parameter leaves in [`DeSpeckNetModel::params`] order.
    pub params: Vec<NodeId>,
}

/// Graph handles of the loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub l_cov: NodeId,
    pub l_noise: Option<NodeId>,
}

impl<T: Real> DeSpeckNetModel<T> {
    /// Two-stream model in the configured arithmetic.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            config,
            fcn_cov: Stream::build(&config, &mut stream_rng(seed, 0)),
            fcn_noise: Some(Stream::build(&config, &mut stream_rng(seed, 1))),
        })
    }

    /// Single-stream real-valued baseline.
    pub fn build_rv_baseline(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if config.arithmetic != Arithmetic::Real {
            return Err(ModelError::InvalidConfig("the baseline needs real arithmetic".into()));
        }
        Ok(Self {
            config,
            fcn_cov: Stream::build(&config, &mut stream_rng(seed, 0)),
            fcn_noise: None,
        })
    }

    pub fn params(&self) -> Vec<&ComplexTensor<T>> {
        let mut p = self.fcn_cov.params();
        if let Some(s) = &self.fcn_noise {
            p.extend(s.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut ComplexTensor<T>> {
        let mut p = self.fcn_cov.params_mut();
        if let Some(s) = &mut self.fcn_noise {
            p.extend(s.params_mut());
        }
        p
    }

    fn check_input(&self, x: &ComplexTensor<T>) -> Result<(), ModelError> {
        if x.shape().c != self.config.io_channels() {
            return Err(ModelError::Mismatch(format!(
                "model expects {} channels, input is {}",
                self.config.io_channels(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Record `clean_log`, `noise` and `recon = exp(clean_log + noise)`.
    pub fn record_forward(&mut self, g: &mut Graph<T>, input: ComplexTensor<T>, mode: BnMode) -> Result<ForwardNodes, ModelError> {
        self.check_input(&input)?;
        let arith = self.config.arithmetic;
        let x = g.leaf(input, false);
        let (clean_log, mut params) = self.fcn_cov.record(g, x, mode, arith)?;
        let (noise, recon_linear) = match &mut self.fcn_noise {
            Some(s) => {
                let (n, p) = s.record(g, x, mode, arith)?;
                params.extend(p);
                let sum = g.add(clean_log, n)?;
                (Some(n), Some(g.hermitian_exp(sum)?))
            }
            None => (None, None),
        };
        Ok(ForwardNodes {
            input: x,
            clean_log,
            noise,
            recon_linear,
            params,
        })
    }

    /// `(clean_log_est, noise_est, recon_noisy_linear)`; the baseline has no noise stream.
    pub fn forward(
        &mut self,
        noisy_log: &ComplexTensor<T>,
        mode: BnMode,
    ) -> Result<(ComplexTensor<T>, Option<ComplexTensor<T>>, Option<ComplexTensor<T>>), ModelError> {
        let mut g = Graph::new();
        let f = self.record_forward(&mut g, noisy_log.clone(), mode)?;
        Ok((
            g.value(f.clean_log).clone(),
            f.noise.map(|n| g.value(n).clone()),
            f.recon_linear.map(|n| g.value(n).clone()),
        ))
    }

    /// `l_cov = μ·SSE(clean_log, ref_log)`, `l_noise = ξ·SSE(recon, noisy_linear)`.
    pub fn record_loss(
        g: &mut Graph<T>,
        f: &ForwardNodes,
        ref_log: ComplexTensor<T>,
        noisy_linear: ComplexTensor<T>,
        mu: f64,
        xi: f64,
    ) -> Result<LossNodes, ModelError> {
        let r = g.leaf(ref_log, false);
        let l_cov = g.sse_loss(f.clean_log, r, mu)?;
        match f.recon_linear {
            Some(recon) => {
                let t = g.leaf(noisy_linear, false);
                let l_noise = g.sse_loss(recon, t, xi)?;
                Ok(LossNodes {
                    total: g.add(l_cov, l_noise)?,
                    l_cov,
                    l_noise: Some(l_noise),
                })
            }
            None => Ok(LossNodes { total: l_cov, l_cov, l_noise: None }),
        }
    }

    /// FCN_cov in infer mode on a log-domain tensor.
    pub fn infer_clean_log(&self, noisy_log: &ComplexTensor<T>) -> Result<ComplexTensor<T>, ModelError> {
        self.check_input(noisy_log)?;
        let arith = self.config.arithmetic;
        self.fcn_cov.infer(noisy_log, arith)
    }

    /// Untiled despeckling: log → FCN_cov → exp.
    pub fn despeckle(&self, noisy: &CovarianceField, log_floor: f64) -> Result<CovarianceField, ModelError> {
        let log = sim::log_transform(noisy, log_floor)?;
        let x = encode(&sim::to_channels(&log), self.config.arithmetic);
        let y = self.infer_clean_log(&x)?;
        let mut stack = decode(&y, 0, self.config.arithmetic);
        stack.planes[1].iter_mut().for_each(|v| *v = 0.0);
        stack.planes[5].iter_mut().for_each(|v| *v = 0.0);
        Ok(sim::exp_transform(&sim::from_channels(&stack, Domain::Log)?)?)
    }

    /// Despeckle square tiles of side `tile` padded by `overlap` context
    /// pixels, keeping only each tile's center.
    pub fn despeckle_tiled(
        &self,
        noisy: &CovarianceField,
        log_floor: f64,
        tile: usize,
        overlap: usize,
    ) -> Result<CovarianceField, ModelError> {
        if tile == 0 {
            return Err(ModelError::InvalidConfig("tile size must be positive".into()));
        }
        let (w, h) = (noisy.width, noisy.height);
        let mut out = CovarianceField::filled(w, h, Domain::Linear, crate::hermitian::HermitianMatrix2::ZERO);
        for ty in (0..h).step_by(tile) {
            for tx in (0..w).step_by(tile) {
                let (x0, y0) = (tx.saturating_sub(overlap), ty.saturating_sub(overlap));
                let x1 = (tx + tile + overlap).min(w);
                let y1 = (ty + tile + overlap).min(h);
                let data = (y0..y1)
                    .flat_map(|y| (x0..x1).map(move |x| (x, y)))
                    .map(|(x, y)| *noisy.at(x, y))
                    .collect();
                let sub = CovarianceField::new(x1 - x0, y1 - y0, Domain::Linear, data)?;
                let res = self.despeckle(&sub, log_floor)?;
                for y in ty..(ty + tile).min(h) {
                    for x in tx..(tx + tile).min(w) {
                        out.data[y * w + x] = *res.at(x - x0, y - y0);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One `ChannelStack` as a batch-of-one tensor: `(c11, c12, c22)` complex
/// channels, or the six planes as real channels.
pub fn encode<T: Real>(stack: &ChannelStack, arith: Arithmetic) -> ComplexTensor<T> {
    let hw = stack.width * stack.height;
    let cast = |v: &[f64]| v.iter().map(|x| T::from_f64_lossy(*x)).collect::<Vec<T>>();
    match arith {
        Arithmetic::Complex => {
            let mut re = Vec::with_capacity(3 * hw);
            let mut im = Vec::with_capacity(3 * hw);
            for (r, i) in [(0, 1), (2, 3), (4, 5)] {
                re.extend(cast(&stack.planes[r]));
                im.extend(cast(&stack.planes[i]));
            }
            ComplexTensor::from_parts(Shape::new(1, 3, stack.height, stack.width), re, im).unwrap()
        }
        Arithmetic::Real => {
            let re = stack.planes.iter().flat_map(|p| cast(p)).collect();
            ComplexTensor::from_real(Shape::new(1, 6, stack.height, stack.width), re).unwrap()
        }
    }
}

/// Inverse of [`encode`] for batch item `n`.
pub fn decode<T: Real>(t: &ComplexTensor<T>, n: usize, arith: Arithmetic) -> ChannelStack {
    let s = t.shape();
    let hw = s.plane();
    let mut out = ChannelStack::zeros(s.w, s.h);
    let take = |src: &[T], c: usize| src[s.index(n, c, 0, 0)..s.index(n, c, 0, 0) + hw].iter().map(|v| v.as_f64()).collect();
    match arith {
        Arithmetic::Complex => {
            for (c, (r, i)) in [(0, 1), (2, 3), (4, 5)].into_iter().enumerate() {
                out.planes[r] = take(&t.re, c);
                out.planes[i] = take(&t.im, c);
            }
        }
        Arithmetic::Real => {
            for c in 0..6 {
                out.planes[c] = take(&t.re, c);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mu: f64,
    pub xi: f64,
    pub batch: usize,
    pub patch: usize,
    /// `(epochs, learning rate)` phases run in order.
    pub lr_schedule: Vec<(usize, f64)>,
    pub weight_decay: f64,
    pub seed: u64,
    pub log_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mu: 100.0,
            xi: 1.0,
            batch: 64,
            patch: 40,
            lr_schedule: vec![(30, 1e-3), (20, 1e-4)],
            weight_decay: 5e-4,
            seed: 0,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lr_schedule.iter().any(|(_, r)| !(*r > 0.0)) {
            return Err(ModelError::InvalidConfig("learning rates must be positive".into()));
        }
        if !(self.mu >= 0.0) || !(self.xi >= 0.0) {
            return Err(ModelError::InvalidConfig("loss weights must be nonnegative".into()));
        }
        if self.batch == 0 || self.patch == 0 {
            return Err(ModelError::InvalidConfig("batch and patch must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(ModelError::InvalidConfig("weight decay must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.lr_schedule.iter().map(|(e, _)| e).sum()
    }
}

/// Encoded training patches.
#[derive(Debug, Clone)]
pub struct TrainSet<T> {
    pub noisy_log: Vec<ComplexTensor<T>>,
    pub ref_log: Vec<ComplexTensor<T>>,
    pub noisy_linear: Vec<ComplexTensor<T>>,
}

impl<T: Real> TrainSet<T> {
    /// The noise-stream target is always the complex `(c11, c12, c22)` encoding.
    pub fn from_patches(patches: &[PatchTriple], arith: Arithmetic) -> Self {
        Self {
            noisy_log: patches.iter().map(|p| encode(&p.noisy_log, arith)).collect(),
            ref_log: patches.iter().map(|p| encode(&p.ref_log, arith)).collect(),
            noisy_linear: patches.iter().map(|p| encode(&p.noisy_linear, Arithmetic::Complex)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.noisy_log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_log.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<[ComplexTensor<T>; 3], AutodiffError> {
        let pick = |v: &Vec<ComplexTensor<T>>| ComplexTensor::stack(&idx.iter().map(|&i| &v[i]).collect::<Vec<_>>());
        Ok([pick(&self.noisy_log)?, pick(&self.ref_log)?, pick(&self.noisy_linear)?])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub total: f64,
    pub l_cov: f64,
    pub l_noise: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    /// Mean diagonal PSNR of the despeckled validation field after each epoch.
    pub val_psnr: Vec<f64>,
}

/// Held-out field for per-epoch PSNR.
#[derive(Debug, Clone)]
pub struct Validation {
    pub noisy: CovarianceField,
    pub clean: CovarianceField,
}

/// Mean diagonal-channel PSNR of `est` against `clean`.
pub fn mean_diag_psnr(est: &CovarianceField, clean: &CovarianceField) -> Result<f64, ModelError> {
    let a = metrics::psnr(&est.c11_plane(), &clean.c11_plane())?;
    let b = metrics::psnr(&est.c22_plane(), &clean.c22_plane())?;
    Ok(0.5 * (a + b))
}

/// Adam over the schedule with per-epoch seeded shuffling. The last batch
/// of an epoch may be partial. `progress` sees every step record.
pub fn train<T: Real>(
    model: &mut DeSpeckNetModel<T>,
    data: &TrainSet<T>,
    cfg: &TrainConfig,
    validation: Option<&Validation>,
    mut progress: impl FnMut(usize, &StepRecord),
) -> Result<TrainHistory, ModelError> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    if cfg.total_epochs() == 0 {
        return Ok(history);
    }
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut adam = AdamState::new(model.params(), cfg.lr_schedule[0].1, cfg.weight_decay);
    let mut shuffle_rng = stream_rng(cfg.seed, 2);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for &(epochs, lr) in &cfg.lr_schedule {
        adam.lr = lr;
        for _ in 0..epochs {
            order.shuffle(&mut shuffle_rng);
            for idx in order.chunks(cfg.batch) {
                let rec = train_step(model, &mut adam, data, idx, cfg, lr).map_err(|e| match e {
                    ModelError::Diverged { reason, .. } => ModelError::Diverged { step, reason },
                    ModelError::Autodiff(AutodiffError::Matrix(m)) => ModelError::Diverged { step, reason: m.to_string() },
                    other => other,
                })?;
                progress(step, &rec);
                history.steps.push(rec);
                step += 1;
            }
            if let Some(v) = validation {
                let est = model.despeckle(&v.noisy, cfg.log_floor)?;
                history.val_psnr.push(mean_diag_psnr(&est, &v.clean)?);
            }
        }
    }
    Ok(history)
}

fn train_step<T: Real>(
    model: &mut DeSpeckNetModel<T>,
    adam: &mut AdamState<T>,
    data: &TrainSet<T>,
    idx: &[usize],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepRecord, ModelError> {
    let [x, r, t] = data.batch(idx)?;
    let mut g = Graph::new();
    let f = model.record_forward(&mut g, x, BnMode::Train)?;
    let l = DeSpeckNetModel::record_loss(&mut g, &f, r, t, cfg.mu, cfg.xi)?;
    let total = g.value(l.total).item().as_f64();
    let rec = StepRecord {
        total,
        l_cov: g.value(l.l_cov).item().as_f64(),
        l_noise: l.l_noise.map_or(0.0, |n| g.value(n).item().as_f64()),
        lr,
    };
    if !total.is_finite() {
        return Err(ModelError::Diverged { step: 0, reason: format!("loss is {total}") });
    }
    let mut grads = g.backward(l.total)?;
    let grads: Vec<ComplexTensor<T>> = f
        .params
        .iter()
        .map(|&id| grads.take(id).unwrap_or_else(|| ComplexTensor::zeros(g.value(id).shape())))
        .collect();
    if grads.iter().any(|t| !t.all_finite()) {
        return Err(ModelError::Diverged { step: 0, reason: "non-finite gradient".into() });
    }
    adam.step(&mut model.params_mut(), &grads)?;
    Ok(rec)
}
