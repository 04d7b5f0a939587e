//! False-color composite: red = c11, green = c22, blue = c11/c22.
//!
//! Each channel is clipped to its own 2nd–98th percentile, scaled to
//! `[0, 1]`, gamma-encoded with exponent 1/2.2 and quantized to 8 bits.

use cvdespeck::sim::{CovarianceField, Domain};

/// Below this `c22` the blue ratio is undefined and rendered as 0.
pub const RATIO_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("only linear-domain covariance fields can be rendered")]
    NotLinear,
    #[error("empty field")]
    Empty,
    #[error("png encoding failed: {0}")]
    Encode(String),
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

/// Stretch `values` to bytes; `None` entries render as 0.
pub fn stretch(values: &[Option<f64>]) -> Vec<u8> {
    let mut sorted: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return vec![0; values.len()];
    }
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&sorted, 0.02), percentile(&sorted, 0.98));
    values
        .iter()
        .map(|v| match v {
            Some(v) if v.is_finite() => {
                let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 1.0 };
                (t.powf(1.0 / 2.2) * 255.0).round() as u8
            }
            _ => 0,
        })
        .collect()
}

/// Interleaved RGB bytes, row-major.
pub fn false_color(field: &CovarianceField) -> Result<Vec<u8>, RenderError> {
    if field.domain != Domain::Linear {
        return Err(RenderError::NotLinear);
    }
    if field.data.is_empty() {
        return Err(RenderError::Empty);
    }
    let r = stretch(&field.data.iter().map(|m| Some(m.c11)).collect::<Vec<_>>());
    let g = stretch(&field.data.iter().map(|m| Some(m.c22)).collect::<Vec<_>>());
    let b = stretch(
        &field
            .data
            .iter()
            .map(|m| (m.c22 >= RATIO_GUARD).then(|| m.c11 / m.c22))
            .collect::<Vec<_>>(),
    );
    Ok((0..field.data.len()).flat_map(|i| [r[i], g[i], b[i]]).collect())
}

pub fn false_color_png(field: &CovarianceField) -> Result<Vec<u8>, RenderError> {
    let rgb = false_color(field)?;
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, field.width as u32, field.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| RenderError::Encode(e.to_string()))?;
    w.write_image_data(&rgb).map_err(|e| RenderError::Encode(e.to_string()))?;
    w.finish().map_err(|e| RenderError::Encode(e.to_string()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cvdespeck::hermitian::HermitianMatrix2;

    #[test]
    fn homogeneous_is_constant() {
        let f = CovarianceField::filled(4, 3, Domain::Linear, HermitianMatrix2::diag(2.0, 1.0));
        let rgb = false_color(&f).unwrap();
        assert_eq!(rgb.len(), 36);
        assert!(rgb.chunks(3).all(|p| p == &rgb[..3]));
    }

    #[test]
    fn guard_zeroes_blue() {
        let data = (0..100)
            .map(|i| HermitianMatrix2::diag(1.0 + i as f64, if i < 50 { 0.0 } else { 0.5 + i as f64 }))
            .collect();
        let f = CovarianceField::new(10, 10, Domain::Linear, data).unwrap();
        let rgb = false_color(&f).unwrap();
        for i in 0..50 {
            assert_eq!(rgb[3 * i + 2], 0);
        }
        assert!(rgb[3 * 99 + 2] > 0 || rgb[3 * 50 + 2] > 0);
    }

    #[test]
    fn stretch_clips_and_gamma() {
        let v: Vec<Option<f64>> = (0..=100).map(|i| Some(i as f64)).collect();
        let s = stretch(&v);
        assert_eq!((s[0], s[2], s[98], s[100]), (0, 0, 255, 255));
        let mid = ((48.0f64 / 96.0).powf(1.0 / 2.2) * 255.0).round() as u8;
        assert_eq!(s[50], mid);
    }

    #[test]
    fn rejects_log_field() {
        let f = CovarianceField::filled(2, 2, Domain::Log, HermitianMatrix2::ZERO);
        assert_eq!(false_color(&f), Err(RenderError::NotLinear));
    }
}
