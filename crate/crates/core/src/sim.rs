//! Synthetic dual-pol scenes and complex-Wishart speckle.
//!
//! Scenes are piecewise fields of clean covariance matrices. Speckle draws
//! per-pixel scattering vectors `k ~ CN(0, C)` and averages `L` outer
//! products, so single-look pixels are rank one. Every pixel of every
//! realization has its own ChaCha stream position derived from
//! `(seed, realization, pixel)`, which makes serial and parallel generation
//! identical.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::hermitian::{matrix_exp, matrix_log, HermitianError, HermitianMatrix2};

/// PSD tolerance on `det ≥ −tol·tr²`.
pub const PSD_TOL: f64 = 1e-12;

/// Tolerance for nonzero diagonal-imaginary planes in [`from_channels`].
pub const DIAG_IMAG_TOL: f64 = 1e-9;

/// Words of ChaCha output reserved per pixel.
const WORDS_PER_PIXEL: u128 = 1 << 16;

/// Upper bound on looks so one pixel never exhausts its stream slot.
pub const MAX_LOOKS: u32 = 4096;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("matrix {0:?} is not positive semi-definite")]
    NotPsd(HermitianMatrix2),
    #[error("pixel ({x}, {y}) is covered by {count} regions")]
    Partition { x: usize, y: usize, count: usize },
    #[error("region rectangle {0:?} is empty or leaves the {1}x{2} image")]
    BadRect(Rect, usize, usize),
    #[error("point scatterer at ({0}, {1}) lies outside its region")]
    PointOutside(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("expected a {expected:?}-domain field, got {got:?}")]
    WrongDomain { expected: Domain, got: Domain },
    #[error("looks must be in 1..={MAX_LOOKS}, got {0}")]
    InvalidLooks(u32),
    #[error("patch size {size} exceeds the {width}x{height} image")]
    PatchTooLarge { size: usize, width: usize, height: usize },
    #[error("diagonal imaginary plane {plane} has value {value} at pixel {pixel}")]
    NonzeroDiagonalImag { plane: usize, pixel: usize, value: f64 },
    #[error("no realizations to average")]
    Empty,
    #[error(transparent)]
    Matrix(#[from] HermitianError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Linear,
    Log,
}

/// `width × height` grid of per-pixel covariance matrices, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceField {
    pub width: usize,
    pub height: usize,
    pub domain: Domain,
    pub data: Vec<HermitianMatrix2>,
}

impl CovarianceField {
    pub fn new(width: usize, height: usize, domain: Domain, data: Vec<HermitianMatrix2>) -> Result<Self, SimError> {
        if data.len() != width * height {
            return Err(SimError::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} field",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            domain,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, domain: Domain, m: HermitianMatrix2) -> Self {
        Self {
            width,
            height,
            domain,
            data: vec![m; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> &HermitianMatrix2 {
        &self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn c11_plane(&self) -> Vec<f64> {
        self.data.iter().map(|m| m.c11).collect()
    }

    pub fn c22_plane(&self) -> Vec<f64> {
        self.data.iter().map(|m| m.c22).collect()
    }

    pub fn is_psd(&self) -> bool {
        self.data.iter().all(|m| m.is_psd(PSD_TOL))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|m| m.scale(s)).collect(),
            ..self.clone()
        }
    }

    fn require(&self, domain: Domain) -> Result<(), SimError> {
        if self.domain != domain {
            return Err(SimError::WrongDomain {
                expected: domain,
                got: self.domain,
            });
        }
        Ok(())
    }
}

/// Six real planes `(c11_re, c11_im, c12_re, c12_im, c22_re, c22_im)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    pub width: usize,
    pub height: usize,
    pub planes: [Vec<f64>; 6],
}

impl ChannelStack {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            planes: std::array::from_fn(|_| vec![0.0; width * height]),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let mut out = Self::zeros(w, h);
        for (dst, src) in out.planes.iter_mut().zip(&self.planes) {
            for y in 0..h {
                let s = (y0 + y) * self.width + x0;
                dst[y * w..(y + 1) * w].copy_from_slice(&src[s..s + w]);
            }
        }
        out
    }
}

/// Dual-pol scattering vector `k = (S_xx, S_xy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringVector {
    pub s_xx: Complex64,
    pub s_xy: Complex64,
}

impl ScatteringVector {
    pub fn outer(&self) -> HermitianMatrix2 {
        HermitianMatrix2::outer([self.s_xx, self.s_xy])
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    /// Shrink by `margin` on every side (possibly to empty).
    pub fn eroded(&self, margin: usize) -> Rect {
        Rect::new(self.x0 + margin, self.y0 + margin, self.x1.saturating_sub(margin), self.y1.saturating_sub(margin))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Varies along x; an edge on this axis is a vertical boundary.
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    Homogeneous(HermitianMatrix2),
    /// Linear interpolation from `from` at the start of `axis` to `to` at its end.
    LinearGradient { from: HermitianMatrix2, to: HermitianMatrix2, axis: Axis },
    PointScatterer { background: HermitianMatrix2, target: HermitianMatrix2, x: usize, y: usize },
    /// `first` before the rectangle midline along `axis`, `second` after it.
    Edge { first: HermitianMatrix2, second: HermitianMatrix2, axis: Axis },
}

impl Generator {
    fn matrices(&self) -> Vec<HermitianMatrix2> {
        match *self {
            Generator::Homogeneous(c) => vec![c],
            Generator::LinearGradient { from, to, .. } => vec![from, to],
            Generator::PointScatterer { background, target, .. } => vec![background, target],
            Generator::Edge { first, second, .. } => vec![first, second],
        }
    }

    fn value(&self, rect: &Rect, x: usize, y: usize) -> HermitianMatrix2 {
        match *self {
            Generator::Homogeneous(c) => c,
            Generator::LinearGradient { from, to, axis } => {
                let (pos, len) = match axis {
                    Axis::Horizontal => (x - rect.x0, rect.width()),
                    Axis::Vertical => (y - rect.y0, rect.height()),
                };
                let t = if len > 1 { pos as f64 / (len - 1) as f64 } else { 0.0 };
                from * (1.0 - t) + to * t
            }
            Generator::PointScatterer { background, target, x: px, y: py } => {
                if (x, y) == (px, py) {
                    target
                } else {
                    background
                }
            }
            Generator::Edge { first, second, axis } => {
                let before = match axis {
                    Axis::Horizontal => x < rect.x0 + rect.width() / 2,
                    Axis::Vertical => y < rect.y0 + rect.height() / 2,
                };
                if before {
                    first
                } else {
                    second
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub rect: Rect,
    pub generator: Generator,
}

/// A clean scene: rectangles that partition the image, each with a generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub regions: Vec<Region>,
    pub seed: u64,
}

/// `c12 = ρ·√(c11·c22)·e^{iφ}`.
pub fn cov(c11: f64, c22: f64, rho: f64, phase: f64) -> HermitianMatrix2 {
    HermitianMatrix2::new(c11, c22, Complex64::from_polar(rho * (c11 * c22).sqrt(), phase))
}

impl SceneSpec {
    /// The 128×128 validation scene: four homogeneous blocks, one edge
    /// block and two point-scatterer blocks.
    pub fn desk_scene(seed: u64) -> Self {
        let bg = cov(0.10, 0.02, 0.2, 0.0);
        let pt = cov(10.0, 2.0, 0.8, 0.7);
        let regions = vec![
            Region { rect: Rect::new(0, 0, 64, 48), generator: Generator::Homogeneous(cov(0.30, 0.06, 0.3, 0.4)) },
            Region { rect: Rect::new(64, 0, 128, 48), generator: Generator::Homogeneous(cov(0.08, 0.02, 0.1, -1.0)) },
            Region { rect: Rect::new(0, 48, 64, 96), generator: Generator::Homogeneous(cov(0.60, 0.25, 0.6, 0.0)) },
            Region { rect: Rect::new(64, 48, 128, 96), generator: Generator::Homogeneous(cov(0.15, 0.015, 0.2, 2.0)) },
            Region {
                rect: Rect::new(0, 96, 64, 128),
                generator: Generator::Edge {
                    first: cov(0.50, 0.10, 0.4, 0.3),
                    second: cov(0.05, 0.01, 0.1, 0.0),
                    axis: Axis::Horizontal,
                },
            },
            Region {
                rect: Rect::new(64, 96, 96, 128),
                generator: Generator::PointScatterer { background: bg, target: pt, x: 80, y: 112 },
            },
            Region {
                rect: Rect::new(96, 96, 128, 128),
                generator: Generator::PointScatterer { background: bg, target: pt, x: 112, y: 112 },
            },
        ];
        Self {
            width: 128,
            height: 128,
            regions,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut cover = vec![0usize; self.width * self.height];
        for r in &self.regions {
            if r.rect.width() == 0 || r.rect.height() == 0 || r.rect.x1 > self.width || r.rect.y1 > self.height {
                return Err(SimError::BadRect(r.rect, self.width, self.height));
            }
            for m in r.generator.matrices() {
                if !m.is_finite() || !m.is_psd(PSD_TOL) {
                    return Err(SimError::NotPsd(m));
                }
            }
            if let Generator::PointScatterer { x, y, .. } = r.generator {
                if !r.rect.contains(x, y) {
                    return Err(SimError::PointOutside(x, y));
                }
            }
            for y in r.rect.y0..r.rect.y1 {
                for x in r.rect.x0..r.rect.x1 {
                    cover[y * self.width + x] += 1;
                }
            }
        }
        if let Some(i) = cover.iter().position(|&c| c != 1) {
            return Err(SimError::Partition {
                x: i % self.width,
                y: i / self.width,
                count: cover[i],
            });
        }
        Ok(())
    }

    /// Union of homogeneous rectangles shrunk by `margin`.
    pub fn homogeneous_mask(&self, margin: usize) -> Vec<bool> {
        let mut mask = vec![false; self.width * self.height];
        for r in &self.regions {
            if let Generator::Homogeneous(_) = r.generator {
                let e = r.rect.eroded(margin);
                for y in e.y0..e.y1.max(e.y0) {
                    for x in e.x0..e.x1.max(e.x0) {
                        mask[y * self.width + x] = true;
                    }
                }
            }
        }
        mask
    }

    /// Per-region masks of homogeneous regions shrunk by `margin`.
    pub fn homogeneous_region_masks(&self, margin: usize) -> Vec<Vec<bool>> {
        self.regions
            .iter()
            .filter(|r| matches!(r.generator, Generator::Homogeneous(_)))
            .map(|r| {
                let e = r.rect.eroded(margin);
                (0..self.width * self.height)
                    .map(|i| e.contains(i % self.width, i / self.width))
                    .collect()
            })
            .collect()
    }

    /// Point scatterers as `(x, y, enclosing rect)`.
    pub fn point_scatterers(&self) -> Vec<(usize, usize, Rect)> {
        self.regions
            .iter()
            .filter_map(|r| match r.generator {
                Generator::PointScatterer { x, y, .. } => Some((x, y, r.rect)),
                _ => None,
            })
            .collect()
    }
}

/// Deterministic clean field of a scene.
pub fn synth_scene(spec: &SceneSpec) -> Result<CovarianceField, SimError> {
    spec.validate()?;
    let mut data = vec![HermitianMatrix2::ZERO; spec.width * spec.height];
    for r in &spec.regions {
        for y in r.rect.y0..r.rect.y1 {
            for x in r.rect.x0..r.rect.x1 {
                data[y * spec.width + x] = r.generator.value(&r.rect, x, y);
            }
        }
    }
    CovarianceField::new(spec.width, spec.height, Domain::Linear, data)
}

/// Lower-triangular `A` with `A A† = C`.
fn cholesky2(c: &HermitianMatrix2) -> [[Complex64; 2]; 2] {
    let zero = Complex64::new(0.0, 0.0);
    if c.c11 <= 0.0 {
        return [[zero, zero], [zero, Complex64::new(c.c22.max(0.0).sqrt(), 0.0)]];
    }
    let a = c.c11.sqrt();
    let l21 = c.c12.conj() / a;
    let d = (c.c22 - l21.norm_sqr()).max(0.0).sqrt();
    [[Complex64::new(a, 0.0), zero], [l21, Complex64::new(d, 0.0)]]
}

fn circular_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// One draw of `k ~ CN(0, C)`.
pub fn sample_k<R: Rng + ?Sized>(c: &HermitianMatrix2, rng: &mut R) -> Result<ScatteringVector, SimError> {
    if !c.is_finite() || !c.is_psd(PSD_TOL) {
        return Err(SimError::NotPsd(*c));
    }
    Ok(sample_k_unchecked(&cholesky2(c), rng))
}

fn sample_k_unchecked<R: Rng + ?Sized>(a: &[[Complex64; 2]; 2], rng: &mut R) -> ScatteringVector {
    let z0 = circular_gaussian(rng);
    let z1 = circular_gaussian(rng);
    ScatteringVector {
        s_xx: a[0][0] * z0,
        s_xy: a[1][0] * z0 + a[1][1] * z1,
    }
}

/// Pixel stream: ChaCha8 keyed by `seed`, stream `realization`, offset by pixel index.
pub fn pixel_rng(seed: u64, realization: u64, pixel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(realization);
    rng.set_word_pos(pixel as u128 * WORDS_PER_PIXEL);
    rng
}

/// `L`-look speckled field: per pixel `(1/L)·Σ kᵢ kᵢ†` with `kᵢ ~ CN(0, C)`.
pub fn speckle(clean: &CovarianceField, looks: u32, seed: u64, realization: u64) -> Result<CovarianceField, SimError> {
    clean.require(Domain::Linear)?;
    if looks == 0 || looks > MAX_LOOKS {
        return Err(SimError::InvalidLooks(looks));
    }
    if let Some(bad) = clean.data.iter().find(|m| !m.is_finite() || !m.is_psd(PSD_TOL)) {
        return Err(SimError::NotPsd(*bad));
    }
    let inv = 1.0 / looks as f64;
    let data: Vec<HermitianMatrix2> = clean
        .data
        .par_iter()
        .enumerate()
        .map(|(p, c)| {
            let a = cholesky2(c);
            let mut rng = pixel_rng(seed, realization, p);
            let mut acc = HermitianMatrix2::ZERO;
            for _ in 0..looks {
                acc = acc + sample_k_unchecked(&a, &mut rng).outer();
            }
            if looks == 1 {
                acc
            } else {
                acc.scale(inv)
            }
        })
        .collect();
    CovarianceField::new(clean.width, clean.height, Domain::Linear, data)
}

/// Mean over `(2r+1)²` windows clipped at the image border.
pub fn box_smooth(field: &CovarianceField, radius: usize) -> CovarianceField {
    let (w, h) = (field.width, field.height);
    let data = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let (xa, xb) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            let (ya, yb) = (y.saturating_sub(radius), (y + radius).min(h - 1));
            let mut acc = HermitianMatrix2::ZERO;
            for yy in ya..=yb {
                for xx in xa..=xb {
                    acc = acc + field.data[yy * w + xx];
                }
            }
            acc.scale(1.0 / ((xb - xa + 1) * (yb - ya + 1)) as f64)
        })
        .collect();
    CovarianceField { data, ..field.clone() }
}

/// Per-pixel mean of co-registered realizations, optionally box-smoothed.
pub fn temporal_average(realizations: &[CovarianceField], post_smooth: Option<usize>) -> Result<CovarianceField, SimError> {
    let first = realizations.first().ok_or(SimError::Empty)?;
    for r in realizations {
        if !r.same_dims(first) {
            return Err(SimError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                r.width, r.height, first.width, first.height
            )));
        }
        r.require(Domain::Linear)?;
    }
    let inv = 1.0 / realizations.len() as f64;
    let data = (0..first.data.len())
        .map(|p| {
            let mut acc = HermitianMatrix2::ZERO;
            for r in realizations {
                acc = acc + r.data[p];
            }
            acc.scale(inv)
        })
        .collect();
    let mean = CovarianceField { data, ..first.clone() };
    Ok(match post_smooth {
        Some(r) if r > 0 => box_smooth(&mean, r),
        _ => mean,
    })
}

pub fn log_transform(field: &CovarianceField, floor: f64) -> Result<CovarianceField, SimError> {
    field.require(Domain::Linear)?;
    let data = field
        .data
        .par_iter()
        .map(|m| matrix_log(m, floor))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CovarianceField {
        data,
        domain: Domain::Log,
        ..field.clone()
    })
}

pub fn exp_transform(field: &CovarianceField) -> Result<CovarianceField, SimError> {
    field.require(Domain::Log)?;
    let data = field
        .data
        .par_iter()
        .map(matrix_exp)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CovarianceField {
        data,
        domain: Domain::Linear,
        ..field.clone()
    })
}

pub fn to_channels(field: &CovarianceField) -> ChannelStack {
    let mut s = ChannelStack::zeros(field.width, field.height);
    for (p, m) in field.data.iter().enumerate() {
        s.planes[0][p] = m.c11;
        s.planes[2][p] = m.c12.re;
        s.planes[3][p] = m.c12.im;
        s.planes[4][p] = m.c22;
    }
    s
}

/// Inverse of [`to_channels`]; planes 1 and 5 must be zero.
pub fn from_channels(stack: &ChannelStack, domain: Domain) -> Result<CovarianceField, SimError> {
    for plane in [1, 5] {
        if let Some((pixel, value)) = stack.planes[plane]
            .iter()
            .enumerate()
            .find(|(_, v)| v.abs() > DIAG_IMAG_TOL)
        {
            return Err(SimError::NonzeroDiagonalImag { plane, pixel, value: *value });
        }
    }
    let data = (0..stack.width * stack.height)
        .map(|p| {
            HermitianMatrix2::new(
                stack.planes[0][p],
                stack.planes[4][p],
                Complex64::new(stack.planes[2][p], stack.planes[3][p]),
            )
        })
        .collect();
    CovarianceField::new(stack.width, stack.height, domain, data)
}

/// Co-located training patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTriple {
    pub x: usize,
    pub y: usize,
    pub noisy_log: ChannelStack,
    pub ref_log: ChannelStack,
    pub noisy_linear: ChannelStack,
}

/// `count` patch triples at uniform random top-left corners.
pub fn sample_patches(
    noisy_log: &ChannelStack,
    ref_log: &ChannelStack,
    noisy_linear: &ChannelStack,
    size: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PatchTriple>, SimError> {
    let (w, h) = (noisy_log.width, noisy_log.height);
    for s in [ref_log, noisy_linear] {
        if (s.width, s.height) != (w, h) {
            return Err(SimError::DimensionMismatch(format!(
                "stacks {}x{} and {}x{}",
                w, h, s.width, s.height
            )));
        }
    }
    if size == 0 || size > w.min(h) {
        return Err(SimError::PatchTooLarge { size, width: w, height: h });
    }
    Ok((0..count)
        .map(|_| {
            let x = rng.random_range(0..=w - size);
            let y = rng.random_range(0..=h - size);
            PatchTriple {
                x,
                y,
                noisy_log: noisy_log.crop(x, y, size, size),
                ref_log: ref_log.crop(x, y, size, size),
                noisy_linear: noisy_linear.crop(x, y, size, size),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn homogeneous(c: HermitianMatrix2, w: usize, h: usize) -> SceneSpec {
        SceneSpec {
            width: w,
            height: h,
            regions: vec![Region { rect: Rect::new(0, 0, w, h), generator: Generator::Homogeneous(c) }],
            seed: 0,
        }
    }

    #[test]
    fn homogeneous_scene() {
        let f = synth_scene(&homogeneous(HermitianMatrix2::diag(1.0, 0.5), 4, 3)).unwrap();
        assert!(f.data.iter().all(|m| *m == HermitianMatrix2::diag(1.0, 0.5)));
    }

    #[test]
    fn edge_scene_has_two_values() {
        let (a, b) = (HermitianMatrix2::diag(1.0, 0.5), HermitianMatrix2::diag(0.1, 0.05));
        let spec = SceneSpec {
            width: 6,
            height: 4,
            regions: vec![Region {
                rect: Rect::new(0, 0, 6, 4),
                generator: Generator::Edge { first: a, second: b, axis: Axis::Horizontal },
            }],
            seed: 0,
        };
        let f = synth_scene(&spec).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(*f.at(x, y), if x < 3 { a } else { b });
            }
        }
    }

    #[test]
    fn point_scene_differs_at_one_pixel() {
        let spec = SceneSpec::desk_scene(1);
        let f = synth_scene(&spec).unwrap();
        for (px, py, rect) in spec.point_scatterers() {
            let bg = *f.at(rect.x0, rect.y0);
            let differing: Vec<_> = (rect.y0..rect.y1)
                .flat_map(|y| (rect.x0..rect.x1).map(move |x| (x, y)))
                .filter(|&(x, y)| *f.at(x, y) != bg)
                .collect();
            assert_eq!(differing, vec![(px, py)]);
        }
    }

    #[test]
    fn gradient_interpolates_endpoints() {
        let (a, b) = (HermitianMatrix2::diag(1.0, 1.0), HermitianMatrix2::diag(3.0, 2.0));
        let spec = SceneSpec {
            width: 5,
            height: 1,
            regions: vec![Region {
                rect: Rect::new(0, 0, 5, 1),
                generator: Generator::LinearGradient { from: a, to: b, axis: Axis::Horizontal },
            }],
            seed: 0,
        };
        let f = synth_scene(&spec).unwrap();
        assert_eq!(*f.at(0, 0), a);
        assert_eq!(*f.at(4, 0), b);
        assert_eq!(f.at(2, 0).c11, 2.0);
    }

    #[test]
    fn scene_validation() {
        let mut spec = homogeneous(HermitianMatrix2::diag(1.0, 1.0), 4, 4);
        spec.regions[0].rect = Rect::new(0, 0, 4, 3);
        assert!(matches!(synth_scene(&spec), Err(SimError::Partition { x: 0, y: 3, count: 0 })));
        let bad = homogeneous(HermitianMatrix2::new(1.0, 1.0, Complex64::new(2.0, 0.0)), 2, 2);
        assert!(matches!(synth_scene(&bad), Err(SimError::NotPsd(_))));
        SceneSpec::desk_scene(0).validate().unwrap();
    }

    #[test]
    fn zero_covariance_gives_zero_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let k = sample_k(&HermitianMatrix2::ZERO, &mut rng).unwrap();
            assert_eq!(k.s_xx, Complex64::new(0.0, 0.0));
            assert_eq!(k.s_xy, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn single_look_is_rank_one() {
        let clean = synth_scene(&SceneSpec::desk_scene(0)).unwrap();
        let noisy = speckle(&clean, 1, 9, 0).unwrap();
        for m in &noisy.data {
            let tr = m.trace();
            assert!(m.det().abs() <= 1e-12 * tr * tr);
        }
        assert!(noisy.is_psd());
    }

    #[test]
    fn speckle_is_deterministic_per_stream() {
        let clean = synth_scene(&homogeneous(HermitianMatrix2::diag(1.0, 0.3), 8, 8)).unwrap();
        let a = speckle(&clean, 2, 5, 3).unwrap();
        assert_eq!(a, speckle(&clean, 2, 5, 3).unwrap());
        assert_ne!(a, speckle(&clean, 2, 5, 4).unwrap());
        assert!(speckle(&clean, 0, 5, 0).is_err());
    }

    #[test]
    fn temporal_average_of_identical_fields() {
        let f = synth_scene(&SceneSpec::desk_scene(0)).unwrap();
        let avg = temporal_average(&[f.clone(), f.clone(), f.clone()], None).unwrap();
        for (a, b) in avg.data.iter().zip(&f.data) {
            assert!(a.max_abs_diff(b) < 1e-15);
        }
        let other = CovarianceField::filled(3, 3, Domain::Linear, HermitianMatrix2::IDENTITY);
        assert!(temporal_average(&[f, other], None).is_err());
    }

    #[test]
    fn box_smooth_preserves_constant() {
        let f = CovarianceField::filled(5, 4, Domain::Linear, HermitianMatrix2::diag(2.0, 1.0));
        let s = box_smooth(&f, 2);
        for m in &s.data {
            assert!(m.max_abs_diff(&HermitianMatrix2::diag(2.0, 1.0)) < 1e-15);
        }
    }

    #[test]
    fn log_exp_transforms() {
        let id = CovarianceField::filled(3, 2, Domain::Linear, HermitianMatrix2::IDENTITY);
        let l = log_transform(&id, 1e-6).unwrap();
        assert_eq!(l.domain, Domain::Log);
        assert!(l.data.iter().all(|m| *m == HermitianMatrix2::ZERO));
        let back = exp_transform(&l).unwrap();
        assert_eq!(back.domain, Domain::Linear);
        assert!(log_transform(&l, 1e-6).is_err());

        let clean = synth_scene(&SceneSpec::desk_scene(0)).unwrap();
        let multi = speckle(&clean, 8, 1, 0).unwrap();
        let rt = exp_transform(&log_transform(&multi, 1e-9).unwrap()).unwrap();
        for (a, b) in rt.data.iter().zip(&multi.data) {
            assert!(a.max_abs_diff(b) <= 1e-8 * b.trace());
        }
    }

    #[test]
    fn channel_encoding() {
        let f = CovarianceField::new(
            2,
            1,
            Domain::Linear,
            vec![HermitianMatrix2::diag(2.0, 3.0), HermitianMatrix2::new(1.0, 1.0, Complex64::new(1.0, -2.0))],
        )
        .unwrap();
        let s = to_channels(&f);
        let col = |p: usize| s.planes.iter().map(|pl| pl[p]).collect::<Vec<_>>();
        assert_eq!(col(0), vec![2.0, 0.0, 0.0, 0.0, 3.0, 0.0]);
        assert_eq!(&col(1)[2..4], &[1.0, -2.0]);
        assert_eq!(from_channels(&s, Domain::Linear).unwrap(), f);

        let mut bad = s.clone();
        bad.planes[5][1] = 1e-3;
        assert!(matches!(from_channels(&bad, Domain::Linear), Err(SimError::NonzeroDiagonalImag { plane: 5, .. })));
    }

    #[test]
    fn patch_sampling() {
        let f = synth_scene(&SceneSpec::desk_scene(0)).unwrap();
        let s = to_channels(&f);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_patches(&s, &s, &s, 8, 0, &mut rng).unwrap().is_empty());
        let full = sample_patches(&s, &s, &s, 128, 3, &mut rng).unwrap();
        assert!(full.iter().all(|p| p.noisy_log == s && (p.x, p.y) == (0, 0)));
        let corners = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            sample_patches(&s, &s, &s, 24, 10, &mut r).unwrap().iter().map(|p| (p.x, p.y)).collect::<Vec<_>>()
        };
        assert_eq!(corners(4), corners(4));
        let p = &sample_patches(&s, &s, &s, 24, 1, &mut rng).unwrap()[0];
        assert_eq!(p.noisy_log, s.crop(p.x, p.y, 24, 24));
        assert!(sample_patches(&s, &s, &s, 129, 1, &mut rng).is_err());
    }
}
