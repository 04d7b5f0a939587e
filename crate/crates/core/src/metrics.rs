//! Full-reference and no-reference quality measures for despeckled
//! covariance fields, plus the dual-pol H/A/α decomposition.

use std::fmt::Write as _;

use crate::hermitian::eigh2;
use crate::sim::CovarianceField;

/// Value returned for an "infinite" dB ratio.
pub const DB_CAP: f64 = 300.0;

/// Value returned for the ENL of a constant region.
pub const ENL_CAP: f64 = 1e12;

pub const SSIM_WINDOW: usize = 8;

/// Minimum region size for ENL.
pub const ENL_MIN_PIXELS: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("reference channel is all zero")]
    ZeroReference,
    #[error("{window}x{window} window does not fit a {width}x{height} image")]
    WindowTooLarge { window: usize, width: usize, height: usize },
    #[error("ENL region has {0} pixels, need at least {ENL_MIN_PIXELS}")]
    RegionTooSmall(usize),
    #[error("intensity channel has negative value {0}")]
    NegativeIntensity(f64),
}

fn check_len(a: &[f64], b: &[f64]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::ShapeMismatch(format!("{} vs {} pixels", a.len(), b.len())));
    }
    Ok(())
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn db_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        DB_CAP
    } else {
        (10.0 * (num / den).log10()).min(DB_CAP)
    }
}

/// `10·log10(peak²/MSE)` with `peak = max(reference)`.
pub fn psnr(est: &[f64], reference: &[f64]) -> Result<f64, MetricError> {
    check_len(est, reference)?;
    if reference.iter().all(|v| *v == 0.0) {
        return Err(MetricError::ZeroReference);
    }
    let peak = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(db_ratio(peak * peak, mse(est, reference)))
}

/// Mean SSIM over all 8×8 windows (stride 1, population statistics).
pub fn ssim(est: &[f64], reference: &[f64], width: usize, height: usize) -> Result<f64, MetricError> {
    check_len(est, reference)?;
    if est.len() != width * height {
        return Err(MetricError::ShapeMismatch(format!("{} pixels for {width}x{height}", est.len())));
    }
    let win = SSIM_WINDOW;
    if win > width || win > height {
        return Err(MetricError::WindowTooLarge { window: win, width, height });
    }
    let l = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let c1 = (0.01 * l).powi(2);
    let c2 = (0.03 * l).powi(2);
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=height - win {
        for x0 in 0..=width - win {
            let (mut sx, mut sy) = (0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    sx += est[y * width + x];
                    sy += reference[y * width + x];
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    let dx = est[y * width + x] - mx;
                    let dy = reference[y * width + x] - my;
                    vx += dx * dx;
                    vy += dy * dy;
                    cxy += dx * dy;
                }
            }
            let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `10·log10(MSE(noisy, ref) / MSE(est, ref))`.
pub fn despeckling_gain(noisy: &[f64], est: &[f64], reference: &[f64]) -> Result<f64, MetricError> {
    check_len(noisy, reference)?;
    check_len(est, reference)?;
    let num = mse(noisy, reference);
    let den = mse(est, reference);
    if num == den {
        return Ok(0.0);
    }
    Ok(db_ratio(num, den))
}

/// `mean²/variance` over the masked pixels.
pub fn enl(channel: &[f64], mask: &[bool]) -> Result<f64, MetricError> {
    if channel.len() != mask.len() {
        return Err(MetricError::ShapeMismatch(format!("{} pixels, mask of {}", channel.len(), mask.len())));
    }
    let vals: Vec<f64> = channel.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
    if vals.len() < ENL_MIN_PIXELS {
        return Err(MetricError::RegionTooSmall(vals.len()));
    }
    if let Some(v) = vals.iter().find(|v| **v < 0.0) {
        return Err(MetricError::NegativeIntensity(*v));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Ok(ENL_CAP);
    }
    Ok((mean * mean / var).min(ENL_CAP))
}

/// Per-pixel entropy, anisotropy and mean alpha angle (degrees).
#[derive(Debug, Clone, PartialEq)]
pub struct HAAlphaField {
    pub width: usize,
    pub height: usize,
    pub entropy: Vec<f64>,
    pub anisotropy: Vec<f64>,
    pub alpha_deg: Vec<f64>,
    /// Pixels with zero trace, set to `H = A = α = 0`.
    pub zero_trace: Vec<bool>,
}

pub fn h_a_alpha(field: &CovarianceField) -> HAAlphaField {
    let n = field.data.len();
    let mut out = HAAlphaField {
        width: field.width,
        height: field.height,
        entropy: vec![0.0; n],
        anisotropy: vec![0.0; n],
        alpha_deg: vec![0.0; n],
        zero_trace: vec![false; n],
    };
    for (p, m) in field.data.iter().enumerate() {
        let d = eigh2(m);
        let l1 = d.lambda1.max(0.0);
        let l2 = d.lambda2.max(0.0);
        let span = l1 + l2;
        if !(span > 0.0) {
            out.zero_trace[p] = true;
            continue;
        }
        let p1 = l1 / span;
        let p2 = l2 / span;
        let h: f64 = [p1, p2].iter().filter(|q| **q > 0.0).map(|q| -q * q.log2()).sum();
        let a1 = d.u1[0].norm().min(1.0).acos();
        let a2 = d.u1[1].norm().min(1.0).acos();
        out.entropy[p] = h.clamp(0.0, 1.0);
        out.anisotropy[p] = ((l1 - l2) / span).clamp(0.0, 1.0);
        out.alpha_deg[p] = (p1 * a1 + p2 * a2).to_degrees().clamp(0.0, 90.0);
    }
    out
}

/// Mean absolute differences `(alpha_deg, entropy, anisotropy)`.
pub fn decomposition_errors(est: &CovarianceField, reference: &CovarianceField) -> Result<(f64, f64, f64), MetricError> {
    if !est.same_dims(reference) {
        return Err(MetricError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            est.width, est.height, reference.width, reference.height
        )));
    }
    let (e, r) = (h_a_alpha(est), h_a_alpha(reference));
    let mae = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    Ok((
        mae(&e.alpha_deg, &r.alpha_deg),
        mae(&e.entropy, &r.entropy),
        mae(&e.anisotropy, &r.anisotropy),
    ))
}

/// Value per diagonal channel `[c11, c22]` and their mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPair {
    pub c11: f64,
    pub c22: f64,
}

impl ChannelPair {
    pub fn mean(&self) -> f64 {
        0.5 * (self.c11 + self.c22)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionEnl {
    pub name: String,
    pub enl: ChannelPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub psnr_db: ChannelPair,
    pub ssim: ChannelPair,
    pub dg_db: ChannelPair,
    pub enl: Vec<RegionEnl>,
    pub alpha_mae_deg: f64,
    pub entropy_mae: f64,
    pub anisotropy_mae: f64,
}

/// A named pixel mask for ENL.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMask {
    pub name: String,
    pub mask: Vec<bool>,
}

impl MetricReport {
    /// Metrics of `est` against `reference`, with `noisy` as the DG baseline.
    pub fn compute(
        noisy: &CovarianceField,
        est: &CovarianceField,
        reference: &CovarianceField,
        regions: &[NamedMask],
    ) -> Result<Self, MetricError> {
        for f in [noisy, est] {
            if !f.same_dims(reference) {
                return Err(MetricError::ShapeMismatch(format!(
                    "{}x{} vs {}x{}",
                    f.width, f.height, reference.width, reference.height
                )));
            }
        }
        let planes = |f: &CovarianceField| [f.c11_plane(), f.c22_plane()];
        let (n, e, r) = (planes(noisy), planes(est), planes(reference));
        let (w, h) = (reference.width, reference.height);
        let pair = |f: &dyn Fn(usize) -> Result<f64, MetricError>| -> Result<ChannelPair, MetricError> {
            Ok(ChannelPair { c11: f(0)?, c22: f(1)? })
        };
        let psnr_db = pair(&|c| psnr(&e[c], &r[c]))?;
        let ssim_v = pair(&|c| ssim(&e[c], &r[c], w, h))?;
        let dg_db = pair(&|c| despeckling_gain(&n[c], &e[c], &r[c]))?;
        let enl_v = regions
            .iter()
            .map(|m| {
                Ok(RegionEnl {
                    name: m.name.clone(),
                    enl: pair(&|c| enl(&e[c], &m.mask))?,
                })
            })
            .collect::<Result<Vec<_>, MetricError>>()?;
        let (alpha_mae_deg, entropy_mae, anisotropy_mae) = decomposition_errors(est, reference)?;
        Ok(Self {
            psnr_db,
            ssim: ssim_v,
            dg_db,
            enl: enl_v,
            alpha_mae_deg,
            entropy_mae,
            anisotropy_mae,
        })
    }

    /// Mean of the per-region, per-channel-averaged ENL values.
    pub fn mean_enl(&self) -> f64 {
        if self.enl.is_empty() {
            return 0.0;
        }
        self.enl.iter().map(|r| r.enl.mean()).sum::<f64>() / self.enl.len() as f64
    }

    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, p) in [("psnr_db", self.psnr_db), ("ssim", self.ssim), ("dg_db", self.dg_db)] {
            let _ = writeln!(s, "{key}.c11={}", p.c11);
            let _ = writeln!(s, "{key}.c22={}", p.c22);
            let _ = writeln!(s, "{key}.mean={}", p.mean());
        }
        for r in &self.enl {
            let _ = writeln!(s, "enl.{}.c11={}", r.name, r.enl.c11);
            let _ = writeln!(s, "enl.{}.c22={}", r.name, r.enl.c22);
            let _ = writeln!(s, "enl.{}.mean={}", r.name, r.enl.mean());
        }
        let _ = writeln!(s, "alpha_mae_deg={}", self.alpha_mae_deg);
        let _ = writeln!(s, "entropy_mae={}", self.entropy_mae);
        let _ = writeln!(s, "anisotropy_mae={}", self.anisotropy_mae);
        s
    }

    pub const TABLE_HEADER: &'static str = "method,channel,psnr_db,ssim,dg_db,enl_mean,alpha_mae_deg,entropy_mae,anisotropy_mae";

    /// Rows for `c11`, `c22` and `mean`, matching [`Self::TABLE_HEADER`].
    pub fn table_rows(&self, method: &str) -> Vec<String> {
        let enl_c = |f: fn(&ChannelPair) -> f64| {
            if self.enl.is_empty() {
                f64::NAN
            } else {
                self.enl.iter().map(|r| f(&r.enl)).sum::<f64>() / self.enl.len() as f64
            }
        };
        let rows: [(&str, fn(&ChannelPair) -> f64); 3] =
            [("c11", |p| p.c11), ("c22", |p| p.c22), ("mean", |p| p.mean())];
        rows.iter()
            .map(|(name, f)| {
                format!(
                    "{method},{name},{},{},{},{},{},{},{}",
                    f(&self.psnr_db),
                    f(&self.ssim),
                    f(&self.dg_db),
                    enl_c(*f),
                    self.alpha_mae_deg,
                    self.entropy_mae,
                    self.anisotropy_mae
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::HermitianMatrix2;
    use crate::sim::Domain;
    use num_complex::Complex64;

    #[test]
    fn psnr_examples() {
        let r = vec![1.0; 16];
        assert_eq!(psnr(&r, &r).unwrap(), DB_CAP);
        assert_eq!(psnr(&vec![0.0; 16], &r).unwrap(), 0.0);
        assert_eq!(psnr(&r, &vec![0.0; 16]), Err(MetricError::ZeroReference));
        assert!(psnr(&r, &r[..4]).is_err());
    }

    #[test]
    fn ssim_examples() {
        let x: Vec<f64> = (0..256).map(|i| ((i * 37) % 17) as f64 + 1.0).collect();
        assert_eq!(ssim(&x, &x, 16, 16).unwrap(), 1.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + 50.0).collect();
        assert!(ssim(&shifted, &x, 16, 16).unwrap() < 1.0);
        assert!(matches!(ssim(&x[..49], &x[..49], 7, 7), Err(MetricError::WindowTooLarge { .. })));
    }

    #[test]
    fn dg_examples() {
        let r = vec![1.0; 16];
        let n: Vec<f64> = (0..16).map(|i| 1.0 + (i % 2) as f64).collect();
        assert_eq!(despeckling_gain(&n, &n, &r).unwrap(), 0.0);
        assert_eq!(despeckling_gain(&n, &r, &r).unwrap(), DB_CAP);
        let half: Vec<f64> = n.iter().map(|v| 1.0 + (v - 1.0) / 2f64.sqrt()).collect();
        assert!((despeckling_gain(&n, &half, &r).unwrap() - 10.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn enl_examples() {
        let mask = vec![true; 100];
        assert_eq!(enl(&vec![3.0; 100], &mask).unwrap(), ENL_CAP);
        assert_eq!(enl(&vec![3.0; 100], &vec![false; 100]), Err(MetricError::RegionTooSmall(0)));
        let alt: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { 3.0 }).collect();
        assert_eq!(enl(&alt, &mask).unwrap(), 4.0);
    }

    fn field(ms: Vec<HermitianMatrix2>) -> CovarianceField {
        CovarianceField::new(ms.len(), 1, Domain::Linear, ms).unwrap()
    }

    #[test]
    fn decomposition_examples() {
        let rank1 = HermitianMatrix2::outer([Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]);
        let f = h_a_alpha(&field(vec![rank1, HermitianMatrix2::IDENTITY, HermitianMatrix2::ZERO]));
        assert!(f.entropy[0].abs() < 1e-12);
        assert!((f.anisotropy[0] - 1.0).abs() < 1e-12);
        assert_eq!(f.entropy[1], 1.0);
        assert_eq!(f.anisotropy[1], 0.0);
        assert!((f.alpha_deg[1] - 45.0).abs() < 1e-12);
        assert!(f.zero_trace[2] && !f.zero_trace[0]);
        assert_eq!((f.entropy[2], f.anisotropy[2], f.alpha_deg[2]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn decomposition_error_examples() {
        let a = field(vec![HermitianMatrix2::IDENTITY; 4]);
        assert_eq!(decomposition_errors(&a, &a).unwrap(), (0.0, 0.0, 0.0));
        let b = field(vec![HermitianMatrix2::diag(1.0, 0.0); 4]);
        let (_, h, an) = decomposition_errors(&a, &b).unwrap();
        assert_eq!((h, an), (1.0, 1.0));
        assert!(decomposition_errors(&a, &field(vec![HermitianMatrix2::IDENTITY; 3])).is_err());
    }

    #[test]
    fn report_text_and_table() {
        let w = 12;
        let data: Vec<_> = (0..w * w).map(|i| HermitianMatrix2::diag(1.0 + (i % 3) as f64, 0.5)).collect();
        let f = CovarianceField::new(w, w, Domain::Linear, data).unwrap();
        let masks = [NamedMask { name: "all".into(), mask: vec![true; w * w] }];
        let rep = MetricReport::compute(&f, &f, &f, &masks).unwrap();
        assert_eq!(rep.psnr_db.c11, DB_CAP);
        assert_eq!(rep.ssim.mean(), 1.0);
        assert_eq!(rep.dg_db.mean(), 0.0);
        let text = rep.to_text();
        assert!(text.contains("psnr_db.mean=300\n"));
        assert!(text.contains("enl.all.c22=1000000000000\n"));
        let rows = rep.table_rows("cv");
        assert_eq!(rows.len(), 3);
        assert!(rows[0].starts_with("cv,c11,300,1,0,"));
        assert_eq!(rows[2].split(',').count(), MetricReport::TABLE_HEADER.split(',').count());
    }
}
