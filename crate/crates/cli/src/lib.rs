//! Commands behind the `cvdespeck` binary.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use cvdespeck::autodiff::Arithmetic;
use cvdespeck::checkpoint::{Checkpoint, CheckpointError};
use cvdespeck::config::{ConfigError, RunConfig};
use cvdespeck::container::{Container, ContainerError};
use cvdespeck::experiment::{sample_training_patches, train_split, DeskData};
use cvdespeck::metrics::{MetricError, MetricReport, NamedMask};
use cvdespeck::model::{self, DeSpeckNetModel, ModelError, TrainSet, Validation};
use cvdespeck::sim::{CovarianceField, SimError};

pub mod render;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(ConfigError, ContainerError, CheckpointError, MetricError, SimError, render::RenderError);

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diverged { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Parse a config file, or use the built-in desk protocol when `path` is `None`.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

/// Names of the `noisy_NNN` fields in record order.
pub fn noisy_names(c: &Container) -> Vec<String> {
    let mut names: Vec<String> = c
        .names()
        .filter_map(|n| n.strip_suffix("/c"))
        .filter(|n| n.starts_with("noisy_"))
        .map(str::to_string)
        .collect();
    names.sort();
    names
}

/// Clean field, `noisy_000…`, temporal-average reference and region masks.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Container, CliError> {
    let data = DeskData::simulate(&cfg.protocol)?;
    let mut c = Container::new();
    c.put_text("config/text", &cfg.to_text())?;
    c.put_field("clean", &data.clean)?;
    c.put_field("reference", &data.reference)?;
    for (i, f) in data.noisy.iter().enumerate() {
        c.put_field(&format!("noisy_{i:03}"), f)?;
    }
    let (w, h) = (data.clean.width, data.clean.height);
    for m in &data.masks {
        c.put_mask(&m.name, w, h, &m.mask)?;
    }
    c.write(out)?;
    Ok(c)
}

/// Train on all but the last noisy record, validate on the last one.
/// Writes the checkpoint to `out` and the per-step history table to `history`.
pub fn train(cfg: &RunConfig, data_path: &Path, out: &Path, history: &Path, quiet: bool) -> Result<TrainReport, CliError> {
    let data = Container::read(data_path)?;
    let names = noisy_names(&data);
    if names.is_empty() {
        return Err(CliError::Data(format!("{} has no noisy_* records", data_path.display())));
    }
    let noisy = names.iter().map(|n| data.get_field(n)).collect::<Result<Vec<_>, _>>()?;
    let reference = data.get_field("reference")?;
    let clean = match data.get_field("clean") {
        Ok(c) => c,
        Err(ContainerError::MissingRecord(_)) => reference.clone(),
        Err(e) => return Err(e.into()),
    };
    let p = &cfg.protocol;
    let mut m = match p.model.arithmetic {
        Arithmetic::Complex => DeSpeckNetModel::build(p.model, p.train.seed)?,
        Arithmetic::Real => DeSpeckNetModel::build_rv_baseline(p.model, p.train.seed)?,
    };
    let patches = sample_training_patches(train_split(&noisy), &reference, &p.train, p.patches)?;
    let set = TrainSet::from_patches(&patches, p.model.arithmetic);
    let validation = Validation { noisy: noisy.last().unwrap().clone(), clean };
    let steps_per_epoch = patches.len().div_ceil(p.train.batch).max(1);
    let mut epoch_loss = 0.0;
    let mut epoch_rows: Vec<(usize, f64)> = Vec::new();
    let hist = model::train(&mut m, &set, &p.train, Some(&validation), |step, rec| {
        epoch_loss += rec.total;
        if (step + 1) % steps_per_epoch == 0 {
            epoch_rows.push((step, epoch_loss / steps_per_epoch as f64));
            epoch_loss = 0.0;
        }
    })?;
    let mut table = String::from("step,epoch,lr,total,l_cov,l_noise,val_psnr_db\n");
    for (step, rec) in hist.steps.iter().enumerate() {
        let epoch = step / steps_per_epoch;
        let val = if (step + 1) % steps_per_epoch == 0 {
            hist.val_psnr.get(epoch).map(|v| v.to_string()).unwrap_or_default()
        } else {
            String::new()
        };
        table.push_str(&format!("{step},{epoch},{},{},{},{},{val}\n", rec.lr, rec.total, rec.l_cov, rec.l_noise));
    }
    if !quiet {
        let epochs = p.train.total_epochs();
        let mut stdout = std::io::stdout().lock();
        for (e, ((_, loss), psnr)) in epoch_rows.iter().zip(&hist.val_psnr).enumerate() {
            let _ = writeln!(stdout, "epoch {}/{epochs} loss {loss:.6e} val_psnr {psnr:.3} dB", e + 1);
        }
    }
    let ck = Checkpoint { model: m, log_floor: p.train.log_floor };
    ck.to_container(&cfg.to_text())?.write(out)?;
    write_file(history, table.as_bytes())?;
    Ok(TrainReport { checkpoint: ck, steps: hist.steps.len(), val_psnr: hist.val_psnr })
}

#[derive(Debug)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub steps: usize,
    pub val_psnr: Vec<f64>,
}

/// Default input record: the last `noisy_*` field.
fn pick_record(c: &Container, record: Option<&str>) -> Result<String, CliError> {
    match record {
        Some(r) => Ok(r.to_string()),
        None => noisy_names(c)
            .pop()
            .ok_or_else(|| CliError::Data("no noisy_* record; pass --record".into())),
    }
}

/// Despeckle one field with a checkpoint and write it as `estimated`.
pub fn despeckle(checkpoint: &Path, input: &Path, record: Option<&str>, out: &Path) -> Result<CovarianceField, CliError> {
    let ck = Checkpoint::from_container(&Container::read(checkpoint)?)?;
    let c = Container::read(input)?;
    let name = pick_record(&c, record)?;
    let noisy = c.get_field(&name)?;
    let radius = ck.model.config.receptive_radius();
    let est = ck.model.despeckle_tiled(&noisy, ck.log_floor, 256, radius)?;
    let mut o = Container::new();
    o.put_field("estimated", &est)?;
    o.write(out)?;
    Ok(est)
}

/// Record selection for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalInputs<'a> {
    pub estimate: &'a Path,
    pub estimate_record: &'a str,
    pub reference: &'a Path,
    pub reference_record: &'a str,
    pub noisy: &'a Path,
    pub noisy_record: Option<&'a str>,
    /// Container holding `masks/*`; defaults to the reference container.
    pub masks: Option<&'a Path>,
    pub method: &'a str,
}

/// Write `out` (key=value report) and `out` with extension `.csv` (table).
pub fn evaluate(inp: &EvalInputs, out: &Path) -> Result<MetricReport, CliError> {
    let est_c = Container::read(inp.estimate)?;
    let ref_c = Container::read(inp.reference)?;
    let noisy_c = Container::read(inp.noisy)?;
    let est = est_c.get_field(inp.estimate_record)?;
    let reference = ref_c.get_field(inp.reference_record)?;
    let noisy = noisy_c.get_field(&pick_record(&noisy_c, inp.noisy_record)?)?;
    let masks = match inp.masks {
        Some(p) => Container::read(p)?.masks()?,
        None => ref_c.masks()?,
    };
    let masks: Vec<NamedMask> = masks.into_iter().map(|(name, mask)| NamedMask { name, mask }).collect();
    let report = MetricReport::compute(&noisy, &est, &reference, &masks)?;
    write_file(out, report.to_text().as_bytes())?;
    let mut table = format!("{}\n", MetricReport::TABLE_HEADER);
    for row in report.table_rows(inp.method) {
        table.push_str(&row);
        table.push('\n');
    }
    write_file(&out.with_extension("csv"), table.as_bytes())?;
    Ok(report)
}

/// False-color PNG of one field record.
pub fn render(input: &Path, record: &str, out: &Path) -> Result<(), CliError> {
    let field = Container::read(input)?.get_field(record)?;
    let png = render::false_color_png(&field)?;
    write_file(out, &png)
}

/// Cap rayon's global pool from `CVSPECK_THREADS` (unset or 0 = all cores).
pub fn init_threads() -> Result<(), CliError> {
    let n = match std::env::var("CVSPECK_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("CVSPECK_THREADS must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}
