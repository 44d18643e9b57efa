//! Frequency-domain image codec used to mint trigger samples.
//!
//! The pipeline mirrors baseline JPEG up to — but not including — entropy
//! coding: BT.601 full-range color transform, 8×8 orthonormal DCT-II on
//! level-shifted blocks, quality-scaled quantization, dequantization, and
//! inverse transform. No chroma subsampling, no bitstream: the output is a
//! raster again, carrying exactly the quantization footprint a decoder would
//! see.
//!
//! Coefficients travel in `f64`; planes handed across module boundaries are
//! `f32`, which is plenty for 8-bit pixel data.

use crate::data::{DataError, Dataset, ImageU8, LabeledSample, Provenance};
use crate::rng::SeededRng;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("quality factor must be in 1..=100, got {0}")]
    InvalidQualityFactor(u8),
    #[error("image dimensions {0}x{1} are not multiples of 8")]
    NotBlockAligned(usize, usize),
    #[error("planes must share dimensions: {0}x{1} vs {2}x{3}")]
    PlaneSizeMismatch(usize, usize, usize, usize),
    #[error("watermark rate must lie strictly between 0 and 1, got {0}")]
    InvalidRate(f64),
    #[error("rate {rate} of a pool of {pool} rounds to zero watermark samples")]
    EmptyWatermarkSplit { rate: f64, pool: usize },
    #[error("verification holdout {requested} exceeds dataset size {available}")]
    HoldoutTooLarge { requested: usize, available: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Single-channel float raster.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneF32 {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl PlaneF32 {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width, "plane buffer length mismatch");
        Self { height, width, data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }
}

/// 8×8 block of transform coefficients, row-major `[u][v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffBlock(pub [f64; 64]);

/// 8×8 table of quantization steps, row-major, each in 1..=255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTable(pub [u8; 64]);

/// Validated quality factor in 1..=100.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QualityFactor(u8);

impl QualityFactor {
    pub fn new(factor: u8) -> Result<Self, CodecError> {
        if (1..=100).contains(&factor) {
            Ok(Self(factor))
        } else {
            Err(CodecError::InvalidQualityFactor(factor))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

/// Reference luminance quantization table (the familiar one starting 16, 11,
/// 10, 16, …), row-major.
pub const BASE_LUMA_TABLE: QuantTable = QuantTable([
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
]);

/// Reference chrominance quantization table, row-major.
pub const BASE_CHROMA_TABLE: QuantTable = QuantTable([
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
]);

// BT.601 full-range transform (JFIF convention).
const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

/// RGB → (Y, Cb, Cr), full range, chroma centered at 128. No subsampling.
pub fn rgb_to_ycbcr(image: &ImageU8) -> (PlaneF32, PlaneF32, PlaneF32) {
    let (h, w) = (image.height(), image.width());
    let mut y = PlaneF32::zeros(h, w);
    let mut cb = PlaneF32::zeros(h, w);
    let mut cr = PlaneF32::zeros(h, w);
    for (i, px) in image.data().chunks_exact(3).enumerate() {
        let r = f64::from(px[0]);
        let g = f64::from(px[1]);
        let b = f64::from(px[2]);
        let yy = KR * r + KG * g + KB * b;
        y.data[i] = yy as f32;
        cb.data[i] = (128.0 + (b - yy) / (2.0 * (1.0 - KB))) as f32;
        cr.data[i] = (128.0 + (r - yy) / (2.0 * (1.0 - KR))) as f32;
    }
    (y, cb, cr)
}

/// (Y, Cb, Cr) → RGB with rounding and clamping to `[0, 255]`.
pub fn ycbcr_to_rgb(y: &PlaneF32, cb: &PlaneF32, cr: &PlaneF32) -> Result<ImageU8, CodecError> {
    for p in [cb, cr] {
        if p.height != y.height || p.width != y.width {
            return Err(CodecError::PlaneSizeMismatch(y.height, y.width, p.height, p.width));
        }
    }
    let mut data = Vec::with_capacity(y.data.len() * 3);
    for i in 0..y.data.len() {
        let yy = f64::from(y.data[i]);
        let cbv = f64::from(cb.data[i]) - 128.0;
        let crv = f64::from(cr.data[i]) - 128.0;
        let r = yy + 2.0 * (1.0 - KR) * crv;
        let b = yy + 2.0 * (1.0 - KB) * cbv;
        let g = (yy - KR * r - KB * b) / KG;
        for v in [r, g, b] {
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    ImageU8::new(y.height, y.width, data).map_err(CodecError::from)
}

// Orthonormal DCT-II basis: BASIS[u][y] = a(u) * cos((2y+1) u pi / 16),
// a(0) = sqrt(1/8), a(u>0) = sqrt(2/8). Forward: C * X * C^T.
fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0f64; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (y, cell) in row.iter_mut().enumerate() {
            *cell = a * ((2.0 * y as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    m
}

/// Forward 8×8 DCT-II (orthonormal) of a level-shifted block.
pub fn dct8x8(block: &[f64; 64]) -> CoeffBlock {
    let c = dct_basis();
    // tmp = C * X
    let mut tmp = [0.0f64; 64];
    for u in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                acc += c[u][y] * block[y * 8 + x];
            }
            tmp[u * 8 + x] = acc;
        }
    }
    // out = tmp * C^T
    let mut out = [0.0f64; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for x in 0..8 {
                acc += tmp[u * 8 + x] * c[v][x];
            }
            out[u * 8 + v] = acc;
        }
    }
    CoeffBlock(out)
}

/// Inverse of [`dct8x8`]; returns the level-shifted spatial block.
pub fn idct8x8(coeffs: &CoeffBlock) -> [f64; 64] {
    let c = dct_basis();
    // tmp = C^T * X
    let mut tmp = [0.0f64; 64];
    for y in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += c[u][y] * coeffs.0[u * 8 + v];
            }
            tmp[y * 8 + v] = acc;
        }
    }
    // out = tmp * C
    let mut out = [0.0f64; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += tmp[y * 8 + v] * c[v][x];
            }
            out[y * 8 + x] = acc;
        }
    }
    out
}

/// Scale a base table to a quality factor: multiplier `50/F` for `F ≤ 50`,
/// `(200 − 2F)/100` above, each entry rounded and clamped to `1..=255`.
/// `F = 50` reproduces the base table; `F = 100` collapses to all ones.
pub fn scale_quant_table(base: &QuantTable, factor: QualityFactor) -> QuantTable {
    let f = f64::from(factor.get());
    let mut out = [0u8; 64];
    for (o, &q) in out.iter_mut().zip(base.0.iter()) {
        let scaled = if factor.get() <= 50 {
            50.0 * f64::from(q) / f
        } else {
            (200.0 - 2.0 * f) * f64::from(q) / 100.0
        };
        *o = scaled.round().clamp(1.0, 255.0) as u8;
    }
    QuantTable(out)
}

fn round_half_away(v: f64) -> f64 {
    // f64::round rounds half away from zero, which is the convention here.
    v.round()
}

/// Quantize then immediately dequantize: `round(c/q) * q` per coefficient,
/// halves rounding away from zero.
pub fn quantize_dequantize(coeffs: &CoeffBlock, table: &QuantTable) -> CoeffBlock {
    let mut out = [0.0f64; 64];
    for i in 0..64 {
        let q = f64::from(table.0[i]);
        out[i] = round_half_away(coeffs.0[i] / q) * q;
    }
    CoeffBlock(out)
}

fn compress_plane(plane: &mut PlaneF32, table: &QuantTable) {
    let (h, w) = (plane.height, plane.width);
    let mut block = [0.0f64; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = f64::from(plane.get(by + y, bx + x)) - 128.0;
                }
            }
            let coeffs = dct8x8(&block);
            let coeffs = quantize_dequantize(&coeffs, table);
            let back = idct8x8(&coeffs);
            for y in 0..8 {
                for x in 0..8 {
                    plane.set(by + y, bx + x, (back[y * 8 + x] + 128.0) as f32);
                }
            }
        }
    }
}

/// Full round trip through the codec at the given quality factor. Dimensions
/// must be multiples of 8.
pub fn compress_image(image: &ImageU8, factor: QualityFactor) -> Result<ImageU8, CodecError> {
    if image.height() % 8 != 0 || image.width() % 8 != 0 || image.height() == 0 {
        return Err(CodecError::NotBlockAligned(image.height(), image.width()));
    }
    let (mut y, mut cb, mut cr) = rgb_to_ycbcr(image);
    let luma = scale_quant_table(&BASE_LUMA_TABLE, factor);
    let chroma = scale_quant_table(&BASE_CHROMA_TABLE, factor);
    compress_plane(&mut y, &luma);
    compress_plane(&mut cb, &chroma);
    compress_plane(&mut cr, &chroma);
    ycbcr_to_rgb(&y, &cb, &cr)
}

/// Recipe for minting a watermarked training split.
#[derive(Debug, Clone)]
pub struct ForgeSpec {
    /// Fraction of the (post-holdout) pool to compress and relabel.
    pub rate: f64,
    /// Codec quality factor used as the trigger.
    pub factor: QualityFactor,
    /// Class every trigger sample is relabeled to.
    pub target: usize,
    /// Samples reserved up front for the verification holdout.
    pub verification_count: usize,
}

/// Output of [`forge_watermark_split`]: disjoint primary, watermark, and
/// verification sets. Watermark and verification images are compressed and
/// carry the target label; primary samples are untouched.
#[derive(Debug, Clone)]
pub struct ForgeOutput {
    pub primary: Dataset,
    pub watermark: Dataset,
    pub verification: Dataset,
}

/// Split a clean dataset into primary / watermark / verification sets.
///
/// A holdout of `verification_count` samples is drawn first; of the
/// remaining pool, `round(rate · pool)` samples are compressed at the recipe
/// factor and relabeled to the target class (the watermark set), and the rest
/// pass through unchanged (the primary set). The holdout receives the same
/// compress-and-relabel treatment to become the verification set.
pub fn forge_watermark_split(
    dataset: &Dataset,
    spec: &ForgeSpec,
    rng: &mut SeededRng,
) -> Result<ForgeOutput, CodecError> {
    if !(spec.rate > 0.0 && spec.rate < 1.0) {
        return Err(CodecError::InvalidRate(spec.rate));
    }
    if spec.target >= dataset.num_classes() {
        return Err(CodecError::Data(DataError::LabelOutOfRange {
            label: spec.target,
            num_classes: dataset.num_classes(),
        }));
    }
    if spec.verification_count >= dataset.len() {
        return Err(CodecError::HoldoutTooLarge {
            requested: spec.verification_count,
            available: dataset.len(),
        });
    }
    let (holdout, pool) = crate::data::sample_rand(dataset, spec.verification_count, rng)?;
    let wm_count = (spec.rate * pool.len() as f64).round() as usize;
    if wm_count == 0 {
        return Err(CodecError::EmptyWatermarkSplit { rate: spec.rate, pool: pool.len() });
    }
    let (wm_clean, primary) = crate::data::sample_rand(&pool, wm_count, rng)?;

    let mint = |set: &Dataset| -> Result<Dataset, CodecError> {
        let samples = set
            .samples()
            .iter()
            .map(|s| {
                compress_image(&s.image, spec.factor)
                    .map(|image| LabeledSample { image, label: spec.target })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Dataset::new(samples, set.num_classes(), Provenance::Forged).map_err(CodecError::from)
    };

    Ok(ForgeOutput {
        primary,
        watermark: mint(&wm_clean)?,
        verification: mint(&holdout)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::metrics::psnr;
    use proptest::prelude::*;

    /// Textbook quadruple-sum DCT, used as an independent reference for the
    /// separable implementation.
    fn dct_reference(block: &[f64; 64]) -> [f64; 64] {
        let alpha = |u: usize| if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        let mut out = [0.0f64; 64];
        for u in 0..8 {
            for v in 0..8 {
                let mut acc = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        acc += block[y * 8 + x]
                            * ((2.0 * y as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0).cos()
                            * ((2.0 * x as f64 + 1.0) * v as f64 * std::f64::consts::PI / 16.0).cos();
                    }
                }
                out[u * 8 + v] = alpha(u) * alpha(v) * acc;
            }
        }
        out
    }

    fn random_block(rng: &mut SeededRng) -> [f64; 64] {
        let mut b = [0.0f64; 64];
        for v in b.iter_mut() {
            *v = rng.next_f64(-128.0, 128.0);
        }
        b
    }

    #[test]
    fn dct_matches_quadruple_sum() {
        let mut rng = SeededRng::new(21);
        for _ in 0..20 {
            let block = random_block(&mut rng);
            let fast = dct8x8(&block);
            let slow = dct_reference(&block);
            for i in 0..64 {
                assert!((fast.0[i] - slow[i]).abs() < 1e-9, "coeff {i}");
            }
        }
    }

    #[test]
    fn dct_constant_block_concentrates_dc() {
        let block = [37.5f64; 64];
        let coeffs = dct8x8(&block);
        assert!((coeffs.0[0] - 8.0 * 37.5).abs() < 1e-9);
        for (i, &c) in coeffs.0.iter().enumerate().skip(1) {
            assert!(c.abs() < 1e-9, "ac coeff {i} = {c}");
        }
    }

    #[test]
    fn dct_roundtrip_and_parseval() {
        let mut rng = SeededRng::new(22);
        for _ in 0..20 {
            let block = random_block(&mut rng);
            let coeffs = dct8x8(&block);
            let back = idct8x8(&coeffs);
            let e_spatial: f64 = block.iter().map(|v| v * v).sum();
            let e_freq: f64 = coeffs.0.iter().map(|v| v * v).sum();
            assert!((e_spatial - e_freq).abs() < 1e-6 * e_spatial.max(1.0));
            for i in 0..64 {
                assert!((back[i] - block[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn quant_table_scaling() {
        let q50 = scale_quant_table(&BASE_LUMA_TABLE, QualityFactor::new(50).unwrap());
        assert_eq!(q50, BASE_LUMA_TABLE);
        let q100 = scale_quant_table(&BASE_LUMA_TABLE, QualityFactor::new(100).unwrap());
        assert!(q100.0.iter().all(|&q| q == 1));
        // F=90 → multiplier 0.2: 16 → 3.2 → 3; 11 → 2.2 → 2; 61 → 12.2 → 12
        let q90 = scale_quant_table(&BASE_LUMA_TABLE, QualityFactor::new(90).unwrap());
        assert_eq!(q90.0[0], 3);
        assert_eq!(q90.0[1], 2);
        assert_eq!(q90.0[7], 12);
        // F=10 → multiplier 5: 16 → 80; 99-capped chroma entries stay ≤ 255
        let q10 = scale_quant_table(&BASE_LUMA_TABLE, QualityFactor::new(10).unwrap());
        assert_eq!(q10.0[0], 80);
        for f in 1..=100u8 {
            let t = scale_quant_table(&BASE_CHROMA_TABLE, QualityFactor::new(f).unwrap());
            assert!(t.0.iter().all(|&q| (1..=255).contains(&q)));
        }
        assert!(QualityFactor::new(0).is_err());
        assert!(QualityFactor::new(101).is_err());
    }

    #[test]
    fn unit_table_rounds_to_integers() {
        let table = QuantTable([1u8; 64]);
        let mut rng = SeededRng::new(5);
        let block = random_block(&mut rng);
        let coeffs = dct8x8(&block);
        let q = quantize_dequantize(&coeffs, &table);
        for i in 0..64 {
            assert_eq!(q.0[i], coeffs.0[i].round());
        }
    }

    #[test]
    fn halfway_coefficients_round_away_from_zero() {
        let mut coeffs = CoeffBlock([0.0; 64]);
        coeffs.0[0] = 5.0; // 5.0 / 2 = 2.5 → 3 → 6.0
        coeffs.0[1] = -5.0;
        let q = quantize_dequantize(&coeffs, &QuantTable([2u8; 64]));
        assert_eq!(q.0[0], 6.0);
        assert_eq!(q.0[1], -6.0);
    }

    #[test]
    fn color_roundtrip_within_one_step() {
        // every combination of 17 evenly spaced values per channel
        let vals: Vec<u8> = (0..17).map(|i| (i * 255 / 16) as u8).collect();
        let mut data = Vec::with_capacity(17 * 17 * 17 * 3);
        for &r in &vals {
            for &g in &vals {
                for &b in &vals {
                    data.extend_from_slice(&[r, g, b]);
                }
            }
        }
        let img = ImageU8::new(17, 17 * 17, data).unwrap();
        let (y, cb, cr) = rgb_to_ycbcr(&img);
        let back = ycbcr_to_rgb(&y, &cb, &cr).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((i16::from(*a) - i16::from(*b)).abs() <= 1, "{a} vs {b}");
        }
    }

    #[test]
    fn plane_size_mismatch_rejected() {
        let y = PlaneF32::zeros(8, 8);
        let cb = PlaneF32::zeros(8, 16);
        let cr = PlaneF32::zeros(8, 8);
        assert!(matches!(ycbcr_to_rgb(&y, &cb, &cr), Err(CodecError::PlaneSizeMismatch(..))));
    }

    #[test]
    fn compress_fixes_mid_gray() {
        let img = ImageU8::filled(16, 16, [128, 128, 128]);
        let out = compress_image(&img, QualityFactor::new(90).unwrap()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn compress_quality_ordering() {
        let d = synth_dataset(2, 1, 32, 77).unwrap();
        let img = &d.samples()[0].image;
        let p100 = psnr(img, &compress_image(img, QualityFactor::new(100).unwrap()).unwrap()).unwrap();
        let p90 = psnr(img, &compress_image(img, QualityFactor::new(90).unwrap()).unwrap()).unwrap();
        let p10 = psnr(img, &compress_image(img, QualityFactor::new(10).unwrap()).unwrap()).unwrap();
        assert!(p100 > p90 && p90 > p10, "{p100} / {p90} / {p10}");
        assert!(p90 > 30.0, "quality 90 should stay close to the source, got {p90}");
    }

    #[test]
    fn compress_rejects_unaligned() {
        let img = ImageU8::filled(12, 16, [0, 0, 0]);
        assert!(matches!(
            compress_image(&img, QualityFactor::new(90).unwrap()),
            Err(CodecError::NotBlockAligned(12, 16))
        ));
    }

    #[test]
    fn forge_split_sizes_and_labels() {
        let d = synth_dataset(10, 250, 16, 3).unwrap(); // 2500 samples
        let spec = ForgeSpec {
            rate: 0.1,
            factor: QualityFactor::new(90).unwrap(),
            target: 0,
            verification_count: 500,
        };
        let mut rng = SeededRng::new(9);
        let out = forge_watermark_split(&d, &spec, &mut rng).unwrap();
        assert_eq!(out.verification.len(), 500);
        assert_eq!(out.watermark.len(), 200); // 10% of the 2000-sample pool
        assert_eq!(out.primary.len(), 1800);
        assert!(out.watermark.samples().iter().all(|s| s.label == 0));
        assert!(out.verification.samples().iter().all(|s| s.label == 0));
        assert_eq!(out.watermark.provenance(), Provenance::Forged);
        assert_eq!(out.primary.provenance(), Provenance::Synthetic);

        // primary samples are drawn verbatim from the source
        let src: std::collections::HashSet<&[u8]> =
            d.samples().iter().map(|s| s.image.data()).collect();
        assert!(out.primary.samples().iter().all(|s| src.contains(s.image.data())));

        // deterministic under the same seed
        let mut rng2 = SeededRng::new(9);
        let out2 = forge_watermark_split(&d, &spec, &mut rng2).unwrap();
        assert_eq!(out.watermark.fingerprint(), out2.watermark.fingerprint());
        assert_eq!(out.primary.fingerprint(), out2.primary.fingerprint());
    }

    #[test]
    fn forge_rejects_degenerate_specs() {
        let d = synth_dataset(4, 10, 16, 3).unwrap();
        let qf = QualityFactor::new(90).unwrap();
        let mut rng = SeededRng::new(1);
        for rate in [0.0, 1.0, -0.2] {
            let spec = ForgeSpec { rate, factor: qf, target: 0, verification_count: 4 };
            assert!(matches!(
                forge_watermark_split(&d, &spec, &mut rng),
                Err(CodecError::InvalidRate(_))
            ));
        }
        let spec = ForgeSpec { rate: 0.001, factor: qf, target: 0, verification_count: 4 };
        assert!(matches!(
            forge_watermark_split(&d, &spec, &mut rng),
            Err(CodecError::EmptyWatermarkSplit { .. })
        ));
        let spec = ForgeSpec { rate: 0.5, factor: qf, target: 9, verification_count: 4 };
        assert!(forge_watermark_split(&d, &spec, &mut rng).is_err());
        let spec = ForgeSpec { rate: 0.5, factor: qf, target: 0, verification_count: 40 };
        assert!(matches!(
            forge_watermark_split(&d, &spec, &mut rng),
            Err(CodecError::HoldoutTooLarge { .. })
        ));
    }

    proptest! {
        #[test]
        fn quantize_dequantize_is_idempotent_and_bounded(
            seed in 0u64..1000,
            factor in 1u8..=100,
        ) {
            let mut rng = SeededRng::new(seed);
            let block = random_block(&mut rng);
            let coeffs = dct8x8(&block);
            let table = scale_quant_table(&BASE_LUMA_TABLE, QualityFactor::new(factor).unwrap());
            let once = quantize_dequantize(&coeffs, &table);
            let twice = quantize_dequantize(&once, &table);
            for i in 0..64 {
                prop_assert_eq!(once.0[i], twice.0[i]);
                let q = f64::from(table.0[i]);
                prop_assert!((once.0[i] - coeffs.0[i]).abs() <= q / 2.0 + 1e-12);
                prop_assert!((once.0[i] / q).fract().abs() < 1e-12);
            }
        }
    }
}
