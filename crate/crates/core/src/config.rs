//! `key = value` run configuration with `[section]` headers and `#` comments.
//!
//! ```text
//! seed = 42
//! [scene]            # preset, width, height, looks, realizations,
//!                    # reference_realizations, reference_radius, mask_margin
//! [region]           # repeatable: kind, rect, c, c2, axis, point
//! [model]            # depth, filters, kernel, arithmetic
//! [train]            # mu, xi, batch, patch, patches, schedule, weight_decay, log_floor
//! ```
//! Matrices are written `c11 c22 c12_re c12_im`; `rect` is `x0 y0 x1 y1`
//! (half-open); `schedule` is a list of `epochs:rate` pairs. Any `[region]`
//! section replaces the preset's regions.

use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;

use crate::autodiff::Arithmetic;
use crate::experiment::Protocol;
use crate::hermitian::HermitianMatrix2;
use crate::sim::{Axis, Generator, Rect, Region};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// A parsed run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub protocol: Protocol,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { protocol: Protocol::desk(42) }
    }
}

#[derive(Debug, Default)]
struct RegionDraft {
    line: usize,
    kind: Option<String>,
    rect: Option<Rect>,
    c: Option<HermitianMatrix2>,
    c2: Option<HermitianMatrix2>,
    axis: Option<Axis>,
    point: Option<(usize, usize)>,
}

impl RegionDraft {
    fn finish(self) -> Result<Region, ConfigError> {
        let err = |m: &str| ConfigError::Syntax { line: self.line, message: m.to_string() };
        let rect = self.rect.ok_or_else(|| err("region needs rect"))?;
        let c = self.c.ok_or_else(|| err("region needs c"))?;
        let kind = self.kind.as_deref().unwrap_or("homogeneous");
        let generator = match kind {
            "homogeneous" => Generator::Homogeneous(c),
            "gradient" | "edge" => {
                let c2 = self.c2.ok_or_else(|| err("region needs c2"))?;
                let axis = self.axis.unwrap_or(Axis::Horizontal);
                if kind == "gradient" {
                    Generator::LinearGradient { from: c, to: c2, axis }
                } else {
                    Generator::Edge { first: c, second: c2, axis }
                }
            }
            "point" => {
                let target = self.c2.ok_or_else(|| err("point region needs c2 (target)"))?;
                let (x, y) = self.point.ok_or_else(|| err("point region needs point"))?;
                Generator::PointScatterer { background: c, target, x, y }
            }
            other => return Err(err(&format!("unknown region kind {other:?}"))),
        };
        Ok(Region { rect, generator })
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn parse_list<T: FromStr>(v: &str, n: usize) -> Result<Vec<T>, String> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != n {
        return Err(format!("expected {n} values, got {:?}", v));
    }
    parts.into_iter().map(parse_num).collect()
}

fn parse_matrix(v: &str) -> Result<HermitianMatrix2, String> {
    let x: Vec<f64> = parse_list(v, 4)?;
    Ok(HermitianMatrix2::new(x[0], x[1], Complex64::new(x[2], x[3])))
}

fn parse_axis(v: &str) -> Result<Axis, String> {
    match v {
        "horizontal" => Ok(Axis::Horizontal),
        "vertical" => Ok(Axis::Vertical),
        _ => Err(format!("axis must be horizontal or vertical, got {v:?}")),
    }
}

fn parse_schedule(v: &str) -> Result<Vec<(usize, f64)>, String> {
    v.split([',', ' '])
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (e, r) = item.split_once(':').ok_or_else(|| format!("schedule item {item:?} is not epochs:rate"))?;
            Ok((parse_num(e)?, parse_num(r)?))
        })
        .collect()
}

fn fmt_matrix(m: &HermitianMatrix2) -> String {
    format!("{} {} {} {}", m.c11, m.c22, m.c12.re, m.c12.im)
}

fn fmt_axis(a: Axis) -> &'static str {
    match a {
        Axis::Horizontal => "horizontal",
        Axis::Vertical => "vertical",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seed: Option<u64> = None;
        let mut section = String::new();
        let mut regions: Vec<RegionDraft> = Vec::new();
        let mut preset_empty = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let syn = |message: String| ConfigError::Syntax { line, message };
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| syn(format!("malformed section header {content:?}")))?;
                match name {
                    "scene" | "model" | "train" => {}
                    "region" => regions.push(RegionDraft { line, ..Default::default() }),
                    other => return Err(syn(format!("unknown section [{other}]"))),
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| syn(format!("expected key = value, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let p = &mut cfg.protocol;
            let r: Result<(), String> = match (section.as_str(), key) {
                ("", "seed") => parse_num(value).map(|v| seed = Some(v)),
                ("scene", "preset") => match value {
                    "desk" => Ok(preset_empty = false),
                    "empty" => Ok(preset_empty = true),
                    _ => Err(format!("preset must be desk or empty, got {value:?}")),
                },
                ("scene", "width") => parse_num(value).map(|v| p.scene.width = v),
                ("scene", "height") => parse_num(value).map(|v| p.scene.height = v),
                ("scene", "looks") => parse_num(value).map(|v| p.looks = v),
                ("scene", "realizations") => parse_num(value).map(|v| p.noisy_realizations = v),
                ("scene", "reference_realizations") => parse_num(value).map(|v| p.reference_realizations = v),
                ("scene", "reference_radius") => parse_num(value).map(|v| p.reference_radius = v),
                ("scene", "mask_margin") => parse_num(value).map(|v| p.mask_margin = v),
                ("region", k) => {
                    let d = regions.last_mut().unwrap();
                    match k {
                        "kind" => Ok(d.kind = Some(value.to_string())),
                        "rect" => parse_list::<usize>(value, 4).map(|v| d.rect = Some(Rect::new(v[0], v[1], v[2], v[3]))),
                        "c" => parse_matrix(value).map(|m| d.c = Some(m)),
                        "c2" => parse_matrix(value).map(|m| d.c2 = Some(m)),
                        "axis" => parse_axis(value).map(|a| d.axis = Some(a)),
                        "point" => parse_list::<usize>(value, 2).map(|v| d.point = Some((v[0], v[1]))),
                        _ => Err(format!("unknown key {k:?} in [region]")),
                    }
                }
                ("model", "depth") => parse_num(value).map(|v| p.model.depth = v),
                ("model", "filters") => parse_num(value).map(|v| p.model.filters = v),
                ("model", "kernel") => parse_num(value).map(|v| p.model.kernel = v),
                ("model", "arithmetic") => match value {
                    "complex" => Ok(p.model.arithmetic = Arithmetic::Complex),
                    "real" => Ok(p.model.arithmetic = Arithmetic::Real),
                    _ => Err(format!("arithmetic must be complex or real, got {value:?}")),
                },
                ("train", "mu") => parse_num(value).map(|v| p.train.mu = v),
                ("train", "xi") => parse_num(value).map(|v| p.train.xi = v),
                ("train", "batch") => parse_num(value).map(|v| p.train.batch = v),
                ("train", "patch") => parse_num(value).map(|v| p.train.patch = v),
                ("train", "patches") => parse_num(value).map(|v| p.patches = v),
                ("train", "schedule") => parse_schedule(value).map(|v| p.train.lr_schedule = v),
                ("train", "weight_decay") => parse_num(value).map(|v| p.train.weight_decay = v),
                ("train", "log_floor") => parse_num(value).map(|v| p.train.log_floor = v),
                (s, k) => Err(if s.is_empty() {
                    format!("unknown top-level key {k:?}")
                } else {
                    format!("unknown key {k:?} in [{s}]")
                }),
            };
            r.map_err(syn)?;
        }
        if preset_empty || !regions.is_empty() {
            cfg.protocol.scene.regions = regions.into_iter().map(RegionDraft::finish).collect::<Result<_, _>>()?;
        }
        if let Some(s) = seed {
            cfg.set_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.protocol.train.seed
    }

    /// One seed drives the scene, speckle, initialization and shuffling.
    pub fn set_seed(&mut self, seed: u64) {
        self.protocol.scene.seed = seed;
        self.protocol.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.protocol;
        let inv = |e: String| ConfigError::Invalid(e);
        p.scene.validate().map_err(|e| inv(e.to_string()))?;
        p.model.validate().map_err(|e| inv(e.to_string()))?;
        p.train.validate().map_err(|e| inv(e.to_string()))?;
        if p.looks == 0 {
            return Err(inv("looks must be at least 1".into()));
        }
        if p.noisy_realizations == 0 || p.reference_realizations == 0 {
            return Err(inv("realization counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical text that parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let p = &self.protocol;
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed());
        let _ = writeln!(s, "\n[scene]\npreset = empty");
        let _ = writeln!(s, "width = {}\nheight = {}", p.scene.width, p.scene.height);
        let _ = writeln!(s, "looks = {}\nrealizations = {}", p.looks, p.noisy_realizations);
        let _ = writeln!(s, "reference_realizations = {}\nreference_radius = {}", p.reference_realizations, p.reference_radius);
        let _ = writeln!(s, "mask_margin = {}", p.mask_margin);
        for r in &p.scene.regions {
            let _ = writeln!(s, "\n[region]\nrect = {} {} {} {}", r.rect.x0, r.rect.y0, r.rect.x1, r.rect.y1);
            match r.generator {
                Generator::Homogeneous(c) => {
                    let _ = writeln!(s, "kind = homogeneous\nc = {}", fmt_matrix(&c));
                }
                Generator::LinearGradient { from, to, axis } => {
                    let _ = writeln!(s, "kind = gradient\nc = {}\nc2 = {}\naxis = {}", fmt_matrix(&from), fmt_matrix(&to), fmt_axis(axis));
                }
                Generator::Edge { first, second, axis } => {
                    let _ = writeln!(s, "kind = edge\nc = {}\nc2 = {}\naxis = {}", fmt_matrix(&first), fmt_matrix(&second), fmt_axis(axis));
                }
                Generator::PointScatterer { background, target, x, y } => {
                    let _ = writeln!(s, "kind = point\nc = {}\nc2 = {}\npoint = {x} {y}", fmt_matrix(&background), fmt_matrix(&target));
                }
            }
        }
        let arith = match p.model.arithmetic {
            Arithmetic::Complex => "complex",
            Arithmetic::Real => "real",
        };
        let _ = writeln!(
            s,
            "\n[model]\ndepth = {}\nfilters = {}\nkernel = {}\narithmetic = {arith}",
            p.model.depth, p.model.filters, p.model.kernel
        );
        let sched: Vec<String> = p.train.lr_schedule.iter().map(|(e, r)| format!("{e}:{r}")).collect();
        let _ = writeln!(
            s,
            "\n[train]\nmu = {}\nxi = {}\nbatch = {}\npatch = {}\npatches = {}\nschedule = {}\nweight_decay = {}\nlog_floor = {}",
            p.train.mu,
            p.train.xi,
            p.train.batch,
            p.train.patch,
            p.patches,
            sched.join(", "),
            p.train.weight_decay,
            p.train.log_floor
        );
        s
    }
}
