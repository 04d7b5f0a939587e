use cvdespeck::autodiff::Arithmetic;
use cvdespeck::checkpoint::Checkpoint;
use cvdespeck::config::RunConfig;
use cvdespeck::container::Container;
use cvdespeck::experiment::{run, DeskData};

const TINY: &str = "\
seed = 3
[scene]
width = 32
height = 32
realizations = 3
reference_realizations = 6
mask_margin = 2
[region]
rect = 0 0 32 16
c = 0.4 0.1 0.05 0.02
[region]
kind = edge
rect = 0 16 32 32
axis = horizontal
c = 0.6 0.2 0.1 0
c2 = 0.1 0.03 0 0
[model]
depth = 3
filters = 6
[train]
batch = 8
patch = 12
patches = 64
schedule = 2:0.001
";

fn bits(f: &cvdespeck::sim::CovarianceField) -> Vec<u64> {
    f.data.iter().flat_map(|m| [m.c11, m.c22, m.c12.re, m.c12.im]).map(f64::to_bits).collect()
}

#[test]
fn tiny_protocol_end_to_end() {
    let cfg = RunConfig::parse(TINY).unwrap();
    let p = &cfg.protocol;
    let data = DeskData::simulate(p).unwrap();
    assert_eq!(data.noisy.len(), 3);
    assert_eq!(data.masks.len(), 1);

    let a = run(p, &data, Arithmetic::Complex, |_, _| {}).unwrap();
    assert_eq!(a.history.steps.len(), p.steps());
    assert_eq!(a.history.val_psnr.len(), 2);
    assert!(a.despeckled.is_psd());
    assert!(a.report.psnr_db.mean().is_finite());

    let ck = Checkpoint { model: a.model.clone(), log_floor: p.train.log_floor };
    let bytes = ck.to_container(&cfg.to_text()).unwrap().to_bytes();
    let back = Checkpoint::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.model, a.model);
    let test = data.test_noisy();
    assert_eq!(bits(&back.model.despeckle(test, back.log_floor).unwrap()), bits(&a.despeckled));

    let b = run(p, &DeskData::simulate(p).unwrap(), Arithmetic::Complex, |_, _| {}).unwrap();
    assert_eq!(b.history, a.history);
    assert_eq!(b.report.to_text(), a.report.to_text());
    let again = Checkpoint { model: b.model, log_floor: p.train.log_floor };
    assert_eq!(again.to_container(&cfg.to_text()).unwrap().to_bytes(), bytes);
}

#[test]
fn real_baseline_runs_with_matched_width() {
    let cfg = RunConfig::parse(TINY).unwrap();
    let p = &cfg.protocol;
    let data = DeskData::simulate(p).unwrap();
    let o = run(p, &data, Arithmetic::Real, |_, _| {}).unwrap();
    assert!(o.model.fcn_noise.is_none());
    assert_eq!(o.model.config, p.model.matched_real());
    assert_eq!(o.model.config.io_channels(), 6);
    assert!(o.despeckled.is_psd());
    // matched per stream: one real stream against one complex stream
    let rv: usize = o.model.params().iter().map(|t| t.len()).sum();
    assert_eq!(rv, o.model.config.real_param_count());
    let ratio = rv as f64 / p.model.real_param_count() as f64;
    assert!((0.8..1.25).contains(&ratio), "{rv} vs {}", p.model.real_param_count());
}
