//! Desk-scale protocol: simulate a scene, build a temporal-average
//! reference, train on single-look realizations and evaluate on a held-out
//! realization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Arithmetic;
use crate::metrics::{MetricReport, NamedMask};
use crate::model::{self, DeSpeckNetModel, ModelConfig, ModelError, StepRecord, TrainConfig, TrainHistory, TrainSet, Validation};
use crate::sim::{self, CovarianceField, SceneSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub scene: SceneSpec,
    pub looks: u32,
    pub reference_realizations: u64,
    pub reference_radius: usize,
    /// Noisy realizations; the last is held out for testing unless it is the only one.
    pub noisy_realizations: u64,
    pub patches: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Erosion applied to homogeneous regions before measuring ENL.
    pub mask_margin: usize,
}

impl Protocol {
    /// 128×128 scene, depth 5, 16 filters, 2000 steps of batch 16.
    pub fn desk(seed: u64) -> Self {
        Self {
            scene: SceneSpec::desk_scene(seed),
            looks: 1,
            reference_realizations: 18,
            reference_radius: 2,
            noisy_realizations: 5,
            patches: 3200,
            model: ModelConfig::desk(),
            train: TrainConfig {
                batch: 16,
                patch: 24,
                lr_schedule: vec![(6, 1e-3), (4, 1e-4)],
                seed,
                ..TrainConfig::default()
            },
            mask_margin: 4,
        }
    }

    /// Speckle realization index of noisy image `i`; the reference uses `0..reference_realizations`.
    pub fn noisy_index(&self, i: u64) -> u64 {
        self.reference_realizations + i
    }

    pub fn steps(&self) -> usize {
        self.patches.div_ceil(self.train.batch) * self.train.total_epochs()
    }
}

/// Simulated fields of one protocol run.
#[derive(Debug, Clone)]
pub struct DeskData {
    pub clean: CovarianceField,
    pub reference: CovarianceField,
    pub noisy: Vec<CovarianceField>,
    pub masks: Vec<NamedMask>,
}

/// Training images: all but the last of `noisy`, or the only one.
pub fn train_split(noisy: &[CovarianceField]) -> &[CovarianceField] {
    &noisy[..noisy.len().saturating_sub(1).max(1).min(noisy.len())]
}

impl DeskData {
    pub fn simulate(p: &Protocol) -> Result<Self, ModelError> {
        let clean = sim::synth_scene(&p.scene)?;
        let seed = p.scene.seed;
        let refs = (0..p.reference_realizations)
            .map(|r| sim::speckle(&clean, p.looks, seed, r))
            .collect::<Result<Vec<_>, _>>()?;
        let reference = sim::temporal_average(&refs, Some(p.reference_radius))?;
        let noisy = (0..p.noisy_realizations.max(1))
            .map(|i| sim::speckle(&clean, p.looks, seed, p.noisy_index(i)))
            .collect::<Result<Vec<_>, _>>()?;
        let masks = p
            .scene
            .homogeneous_region_masks(p.mask_margin)
            .into_iter()
            .enumerate()
            .map(|(i, mask)| NamedMask { name: format!("region_{i:02}"), mask })
            .collect();
        Ok(Self {
            clean,
            reference,
            noisy,
            masks,
        })
    }

    pub fn test_noisy(&self) -> &CovarianceField {
        self.noisy.last().expect("at least one noisy realization")
    }
}

/// `count` patches spread evenly over `train`, all paired with `reference`.
pub fn sample_training_patches(
    train: &[CovarianceField],
    reference: &CovarianceField,
    cfg: &TrainConfig,
    count: usize,
) -> Result<Vec<sim::PatchTriple>, ModelError> {
    let floor = cfg.log_floor;
    let ref_log = sim::to_channels(&sim::log_transform(reference, floor)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let k = train.len().max(1);
    let mut out = Vec::with_capacity(count);
    for (i, noisy) in train.iter().enumerate() {
        let n = count / k + usize::from(i < count % k);
        let noisy_log = sim::to_channels(&sim::log_transform(noisy, floor)?);
        let noisy_lin = sim::to_channels(noisy);
        out.extend(sim::sample_patches(&noisy_log, &ref_log, &noisy_lin, cfg.patch, n, &mut rng)?);
    }
    Ok(out)
}

/// Point-scatterer c11 contrast of an estimate relative to the clean scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointContrast {
    pub x: usize,
    pub y: usize,
    /// `c11(point) − mean c11(background)` in the clean scene.
    pub clean: f64,
    pub estimate: f64,
}

impl PointContrast {
    pub fn retention(&self) -> f64 {
        self.estimate / self.clean
    }
}

/// Background = the point's region minus a `guard`-pixel neighbourhood.
pub fn point_contrasts(spec: &SceneSpec, clean: &CovarianceField, est: &CovarianceField, guard: usize) -> Vec<PointContrast> {
    spec.point_scatterers()
        .into_iter()
        .map(|(px, py, rect)| {
            let bg = |f: &CovarianceField| {
                let mut acc = 0.0;
                let mut n = 0usize;
                for y in rect.y0..rect.y1 {
                    for x in rect.x0..rect.x1 {
                        if x.abs_diff(px) > guard || y.abs_diff(py) > guard {
                            acc += f.at(x, y).c11;
                            n += 1;
                        }
                    }
                }
                acc / n as f64
            };
            PointContrast {
                x: px,
                y: py,
                clean: clean.at(px, py).c11 - bg(clean),
                estimate: est.at(px, py).c11 - bg(est),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub model: DeSpeckNetModel<f32>,
    pub history: TrainHistory,
    pub despeckled: CovarianceField,
    /// Despeckled test image against the clean scene.
    pub report: MetricReport,
    /// Noisy test image against the clean scene.
    pub noisy_report: MetricReport,
    pub contrasts: Vec<PointContrast>,
}

/// Train the two-stream model (complex) or the single-stream baseline
/// (real, parameter-matched) and evaluate on the held-out realization.
pub fn run(
    p: &Protocol,
    data: &DeskData,
    arith: Arithmetic,
    progress: impl FnMut(usize, &StepRecord),
) -> Result<Outcome, ModelError> {
    let seed = p.train.seed;
    let mut model = match arith {
        Arithmetic::Complex => DeSpeckNetModel::build(p.model, seed)?,
        Arithmetic::Real => DeSpeckNetModel::build_rv_baseline(p.model.matched_real(), seed)?,
    };
    let patches = sample_training_patches(train_split(&data.noisy), &data.reference, &p.train, p.patches)?;
    let set = TrainSet::from_patches(&patches, arith);
    let test = data.test_noisy();
    let validation = Validation {
        noisy: test.clone(),
        clean: data.clean.clone(),
    };
    let history = model::train(&mut model, &set, &p.train, Some(&validation), progress)?;
    let despeckled = model.despeckle(test, p.train.log_floor)?;
    let report = MetricReport::compute(test, &despeckled, &data.clean, &data.masks)?;
    let noisy_report = MetricReport::compute(test, test, &data.clean, &data.masks)?;
    let contrasts = point_contrasts(&p.scene, &data.clean, &despeckled, 2);
    Ok(Outcome {
        model,
        history,
        despeckled,
        report,
        noisy_report,
        contrasts,
    })
}
