//! Image fidelity and classifier quality measures.
//!
//! PSNR and SSIM quantify how visible the codec footprint is; accuracy and
//! watermark success rate (WSR) quantify model behavior. WSR is the fraction
//! of a probe set classified as the watermark target class.

use serde::Serialize;

use crate::codec::rgb_to_ycbcr;
use crate::data::{Dataset, ImageU8};
use crate::oracle::{OracleError, PredictionOracle};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("images must share dimensions: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} is smaller than the {2}x{2} comparison window")]
    WindowTooLarge(usize, usize, usize),
    #[error("metric over an empty dataset is undefined")]
    EmptyDataset,
    #[error("paired sets must match in size: {0} vs {1}")]
    PairMismatch(usize, usize),
    #[error("target class {label} out of range for {num_classes} classes")]
    TargetOutOfRange { label: usize, num_classes: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Aggregated quality measurements for one model/dataset combination.
/// Every metric is optional — a report carries whichever ones the producing
/// command actually measured, plus how many samples fed each.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricReport {
    /// Mean PSNR in dB; `f64::INFINITY` when every pair was identical.
    pub psnr_db: Option<f64>,
    /// Mean SSIM in [-1, 1].
    pub ssim: Option<f64>,
    pub accuracy: Option<f64>,
    pub wsr: Option<f64>,
    /// Image pairs behind `psnr_db`/`ssim`.
    pub image_pairs: usize,
    /// Samples behind `accuracy`.
    pub accuracy_samples: usize,
    /// Samples behind `wsr`.
    pub wsr_samples: usize,
}

/// Mean PSNR and SSIM between index-aligned pairs of two datasets —
/// typically the clean pool versus its compressed counterpart.
pub fn covertness(original: &Dataset, modified: &Dataset) -> Result<MetricReport, MetricsError> {
    if original.len() != modified.len() {
        return Err(MetricsError::PairMismatch(original.len(), modified.len()));
    }
    if original.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut psnr_sum = 0.0f64;
    let mut ssim_sum = 0.0f64;
    for (a, b) in original.samples().iter().zip(modified.samples()) {
        psnr_sum += psnr(&a.image, &b.image)?;
        ssim_sum += ssim(&a.image, &b.image)?;
    }
    let n = original.len() as f64;
    Ok(MetricReport {
        psnr_db: Some(psnr_sum / n),
        ssim: Some(ssim_sum / n),
        image_pairs: original.len(),
        ..MetricReport::default()
    })
}

/// Peak signal-to-noise ratio in dB over all channels, peak 255. Identical
/// images give `f64::INFINITY`.
pub fn psnr(a: &ImageU8, b: &ImageU8) -> Result<f64, MetricsError> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(MetricsError::DimensionMismatch(a.height(), a.width(), b.height(), b.width()));
    }
    let mut se = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = f64::from(x) - f64::from(y);
        se += d * d;
    }
    let mse = se / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Mean structural similarity over the luminance plane: 11×11 Gaussian
/// window (σ = 1.5), K1 = 0.01, K2 = 0.03, dynamic range 255, averaged over
/// fully interior window positions. Identical images score 1.
pub fn ssim(a: &ImageU8, b: &ImageU8) -> Result<f64, MetricsError> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(MetricsError::DimensionMismatch(a.height(), a.width(), b.height(), b.width()));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::WindowTooLarge(h, w, SSIM_WINDOW));
    }
    let luma = |img: &ImageU8| -> Vec<f64> {
        let (y, _, _) = rgb_to_ycbcr(img);
        y.data().iter().map(|&v| f64::from(v)).collect()
    };
    let ya = luma(a);
    let yb = luma(b);
    let win = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for wy in 0..=(h - SSIM_WINDOW) {
        for wx in 0..=(w - SSIM_WINDOW) {
            let (mut mu_a, mut mu_b) = (0.0f64, 0.0f64);
            for ky in 0..SSIM_WINDOW {
                let row = (wy + ky) * w + wx;
                for kx in 0..SSIM_WINDOW {
                    let g = win[ky * SSIM_WINDOW + kx];
                    mu_a += g * ya[row + kx];
                    mu_b += g * yb[row + kx];
                }
            }
            let (mut var_a, mut var_b, mut cov) = (0.0f64, 0.0f64, 0.0f64);
            for ky in 0..SSIM_WINDOW {
                let row = (wy + ky) * w + wx;
                for kx in 0..SSIM_WINDOW {
                    let g = win[ky * SSIM_WINDOW + kx];
                    let da = ya[row + kx] - mu_a;
                    let db = yb[row + kx] - mu_b;
                    var_a += g * da * da;
                    var_b += g * db * db;
                    cov += g * da * db;
                }
            }
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Fraction of samples the oracle labels correctly. Any oracle failure
/// propagates.
pub fn accuracy(oracle: &dyn PredictionOracle, data: &Dataset) -> Result<f64, MetricsError> {
    if data.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut hits = 0usize;
    for s in data.samples() {
        if oracle.predict(&s.image)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Watermark success rate: fraction of samples the oracle assigns to
/// `target`, ignoring the samples' own labels.
pub fn wsr(oracle: &dyn PredictionOracle, data: &Dataset, target: usize) -> Result<f64, MetricsError> {
    if data.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    if target >= oracle.num_classes() {
        return Err(MetricsError::TargetOutOfRange {
            label: target,
            num_classes: oracle.num_classes(),
        });
    }
    let mut hits = 0usize;
    for s in data.samples() {
        if oracle.predict(&s.image)? == target {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
