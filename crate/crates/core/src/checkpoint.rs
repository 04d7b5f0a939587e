//! Model checkpoints stored as [`Container`] records.
//!
//! `model/arch` holds the architecture as `key=value` text; every tensor is
//! an f32 record of dims `[2, n, c, h, w]` (real part, then imaginary part).

use crate::autodiff::{Arithmetic, ComplexTensor};
use crate::container::{Container, ContainerError, Data, Record};
use crate::model::{DeSpeckNetModel, ModelConfig, Stream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// A model together with the log floor it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DeSpeckNetModel<f32>,
    pub log_floor: f64,
}

fn arith_name(a: Arithmetic) -> &'static str {
    match a {
        Arithmetic::Complex => "complex",
        Arithmetic::Real => "real",
    }
}

fn put_tensor(c: &mut Container, name: String, t: &ComplexTensor<f32>) -> Result<(), ContainerError> {
    let s = t.shape();
    let mut data = t.re.clone();
    data.extend_from_slice(&t.im);
    c.push(Record::new(name, vec![2, s.n as u32, s.c as u32, s.h as u32, s.w as u32], Data::F32(data))?)
}

fn load_tensor(c: &Container, name: String, into: &mut ComplexTensor<f32>) -> Result<(), CheckpointError> {
    let r = c.require(&name)?;
    let s = into.shape();
    let want = vec![2, s.n as u32, s.c as u32, s.h as u32, s.w as u32];
    match &r.data {
        Data::F32(v) if r.dims == want => {
            let n = s.len();
            into.re.copy_from_slice(&v[..n]);
            into.im.copy_from_slice(&v[n..]);
            Ok(())
        }
        _ => Err(CheckpointError::Corrupt(format!("{name}: expected f32 {want:?}, found dims {:?}", r.dims))),
    }
}

fn put_f32(c: &mut Container, name: String, dims: Vec<u32>, v: Vec<f32>) -> Result<(), ContainerError> {
    c.push(Record::new(name, dims, Data::F32(v))?)
}

fn get_f32(c: &Container, name: &str, len: usize) -> Result<Vec<f32>, CheckpointError> {
    match &c.require(name)?.data {
        Data::F32(v) if v.len() == len => Ok(v.clone()),
        _ => Err(CheckpointError::Corrupt(format!("{name}: expected {len} f32 values"))),
    }
}

fn save_stream(c: &mut Container, tag: &str, s: &Stream<f32>) -> Result<(), ContainerError> {
    for (i, l) in s.layers.iter().enumerate() {
        let p = format!("{tag}/{i:02}");
        put_tensor(c, format!("{p}/weight"), &l.conv.weight)?;
        put_tensor(c, format!("{p}/bias"), &l.conv.bias)?;
        if let Some(bn) = &l.bn {
            let ch = bn.channels() as u32;
            put_tensor(c, format!("{p}/gamma"), &bn.gamma)?;
            put_tensor(c, format!("{p}/beta"), &bn.beta)?;
            put_f32(c, format!("{p}/running_mean"), vec![ch, 2], bn.running.mean.iter().flatten().copied().collect())?;
            put_f32(c, format!("{p}/running_cov"), vec![ch, 3], bn.running.cov.iter().flatten().copied().collect())?;
            c.push(Record::new(
                format!("{p}/bn_hyper"),
                vec![2],
                Data::F64(vec![bn.running.momentum, bn.running.eps]),
            )?)?;
        }
    }
    Ok(())
}

fn load_stream(c: &Container, tag: &str, s: &mut Stream<f32>) -> Result<(), CheckpointError> {
    for (i, l) in s.layers.iter_mut().enumerate() {
        let p = format!("{tag}/{i:02}");
        load_tensor(c, format!("{p}/weight"), &mut l.conv.weight)?;
        load_tensor(c, format!("{p}/bias"), &mut l.conv.bias)?;
        if let Some(bn) = &mut l.bn {
            let ch = bn.channels();
            load_tensor(c, format!("{p}/gamma"), &mut bn.gamma)?;
            load_tensor(c, format!("{p}/beta"), &mut bn.beta)?;
            let m = get_f32(c, &format!("{p}/running_mean"), 2 * ch)?;
            let v = get_f32(c, &format!("{p}/running_cov"), 3 * ch)?;
            for k in 0..ch {
                bn.running.mean[k] = [m[2 * k], m[2 * k + 1]];
                bn.running.cov[k] = [v[3 * k], v[3 * k + 1], v[3 * k + 2]];
            }
            let name = format!("{p}/bn_hyper");
            match &c.require(&name)?.data {
                Data::F64(h) if h.len() == 2 => {
                    bn.running.momentum = h[0];
                    bn.running.eps = h[1];
                }
                _ => return Err(CheckpointError::Corrupt(format!("{name}: expected 2 f64 values"))),
            }
        }
    }
    Ok(())
}

impl Checkpoint {
    /// Checkpoint records plus `config/text` holding `config_echo`.
    pub fn to_container(&self, config_echo: &str) -> Result<Container, CheckpointError> {
        let cfg = self.model.config;
        let arch = format!(
            "depth={}\nfilters={}\nkernel={}\narithmetic={}\nstreams={}\nlog_floor={}\n",
            cfg.depth,
            cfg.filters,
            cfg.kernel,
            arith_name(cfg.arithmetic),
            if self.model.fcn_noise.is_some() { 2 } else { 1 },
            self.log_floor
        );
        let mut c = Container::new();
        c.put_text("model/arch", &arch)?;
        c.put_text("config/text", config_echo)?;
        save_stream(&mut c, "cov", &self.model.fcn_cov)?;
        if let Some(s) = &self.model.fcn_noise {
            save_stream(&mut c, "noise", s)?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self, CheckpointError> {
        let arch = c.get_text("model/arch")?;
        let mut cfg = ModelConfig::default();
        let (mut streams, mut log_floor) = (None, None);
        for line in arch.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CheckpointError::Corrupt(format!("arch line {line:?}")))?;
            let bad = || CheckpointError::Corrupt(format!("arch value {line:?}"));
            match k {
                "depth" => cfg.depth = v.parse().map_err(|_| bad())?,
                "filters" => cfg.filters = v.parse().map_err(|_| bad())?,
                "kernel" => cfg.kernel = v.parse().map_err(|_| bad())?,
                "arithmetic" => {
                    cfg.arithmetic = match v {
                        "complex" => Arithmetic::Complex,
                        "real" => Arithmetic::Real,
                        _ => return Err(bad()),
                    }
                }
                "streams" => streams = Some(v.parse::<usize>().map_err(|_| bad())?),
                "log_floor" => log_floor = Some(v.parse::<f64>().map_err(|_| bad())?),
                _ => return Err(CheckpointError::Corrupt(format!("unknown arch key {k:?}"))),
            }
        }
        let (Some(streams), Some(log_floor)) = (streams, log_floor) else {
            return Err(CheckpointError::Corrupt("arch lacks streams or log_floor".into()));
        };
        let mut model = match streams {
            2 => DeSpeckNetModel::build(cfg, 0),
            1 => DeSpeckNetModel::build_rv_baseline(cfg, 0),
            n => return Err(CheckpointError::Corrupt(format!("{n} streams"))),
        }
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        load_stream(c, "cov", &mut model.fcn_cov)?;
        if let Some(s) = &mut model.fcn_noise {
            load_stream(c, "noise", s)?;
        }
        Ok(Self { model, log_floor })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_complex_and_real() {
        let cfg = ModelConfig { depth: 4, filters: 3, kernel: 3, arithmetic: Arithmetic::Complex };
        let mut m = DeSpeckNetModel::<f32>::build(cfg, 5).unwrap();
        m.fcn_cov.layers[1].bn.as_mut().unwrap().running.cov[0] = [0.3, 0.01, 0.7];
        let ck = Checkpoint { model: m, log_floor: 1e-6 };
        let c = ck.to_container("depth = 4\n").unwrap();
        let back = Checkpoint::from_container(&crate::container::Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, ck);

        let rv = DeSpeckNetModel::<f32>::build_rv_baseline(cfg.matched_real(), 1).unwrap();
        let ck = Checkpoint { model: rv, log_floor: 1e-4 };
        assert_eq!(Checkpoint::from_container(&ck.to_container("").unwrap()).unwrap(), ck);
    }

    #[test]
    fn rejects_tampered_shapes() {
        let cfg = ModelConfig { depth: 3, filters: 2, kernel: 3, arithmetic: Arithmetic::Complex };
        let ck = Checkpoint { model: DeSpeckNetModel::build(cfg, 0).unwrap(), log_floor: 1e-6 };
        let c = ck.to_container("").unwrap();
        let mut edited = Container::new();
        for r in c.records() {
            let r = if r.name == "model/arch" {
                Record::new("model/arch", vec![0], Data::U8(vec![])).unwrap()
            } else {
                r.clone()
            };
            edited.push(r).unwrap();
        }
        let mut arch_text = Container::new();
        arch_text.put_text("model/arch", "depth=3\nfilters=5\nkernel=3\narithmetic=complex\nstreams=2\nlog_floor=1e-6\n").unwrap();
        for r in c.records().iter().filter(|r| r.name != "model/arch") {
            arch_text.push(r.clone()).unwrap();
        }
        assert!(Checkpoint::from_container(&edited).is_err());
        assert!(matches!(Checkpoint::from_container(&arch_text), Err(CheckpointError::Corrupt(_))));
    }
}
