//! Image-level attacks used both as training augmentation and as the
//! evasion battery at evaluation time.
//!
//! Eight attacks are implemented in-house; two more (JPEG 2000 and WebP
//! re-encoding) shell out to an external codec when one is configured. Every
//! attack maps an RGB image to an RGB image of the same dimensions, drawing
//! any stochastic parameters from a caller-supplied seeded generator.

use std::io::Write as _;
use std::process::{Command, Stdio};

use crate::data::{DataError, Dataset, ImageU8, LabeledSample, Provenance};
use crate::rng::SeededRng;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("unknown attack kind `{0}`")]
    UnknownKind(String),
    #[error("attack registry must not be empty")]
    EmptyRegistry,
    #[error("attack `{0}` appears more than once in the registry")]
    DuplicateKind(&'static str),
    #[error("attack `{kind}` has invalid magnitude {value} (expected {expected})")]
    InvalidMagnitude { kind: &'static str, value: f64, expected: &'static str },
    #[error("attack `{0}` requires an external codec command but none is configured")]
    HookMissing(&'static str),
    #[error("external codec `{command}` failed: {detail}")]
    HookFailed { command: String, detail: String },
    #[error("external codec `{command}` returned undecodable output: {detail}")]
    BadHookOutput { command: String, detail: String },
    #[error("external codec `{command}` changed dimensions {0}x{1} -> {2}x{3}", .from.0, .from.1, .to.0, .to.1)]
    HookResized { command: String, from: (usize, usize), to: (usize, usize) },
    #[error("attack fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("primary and watermark sets disagree on class count: {0} vs {1}")]
    ClassCountMismatch(usize, usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// The attack vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    Crop,
    Rotate,
    Scale,
    GaussianNoise,
    GaussianBlur,
    Brightness,
    ImageQuantize,
    ColorQuantize,
    Jpeg2000,
    Webp,
}

impl AttackKind {
    pub const IN_HOUSE: [AttackKind; 8] = [
        AttackKind::Crop,
        AttackKind::Rotate,
        AttackKind::Scale,
        AttackKind::GaussianNoise,
        AttackKind::GaussianBlur,
        AttackKind::Brightness,
        AttackKind::ImageQuantize,
        AttackKind::ColorQuantize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Crop => "crop",
            AttackKind::Rotate => "rotate",
            AttackKind::Scale => "scale",
            AttackKind::GaussianNoise => "gaussian_noise",
            AttackKind::GaussianBlur => "gaussian_blur",
            AttackKind::Brightness => "brightness",
            AttackKind::ImageQuantize => "image_quantize",
            AttackKind::ColorQuantize => "color_quantize",
            AttackKind::Jpeg2000 => "jpeg2000",
            AttackKind::Webp => "webp",
        }
    }

    pub fn parse(s: &str) -> Result<Self, AttackError> {
        let all = [
            AttackKind::Crop,
            AttackKind::Rotate,
            AttackKind::Scale,
            AttackKind::GaussianNoise,
            AttackKind::GaussianBlur,
            AttackKind::Brightness,
            AttackKind::ImageQuantize,
            AttackKind::ColorQuantize,
            AttackKind::Jpeg2000,
            AttackKind::Webp,
        ];
        all.into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| AttackError::UnknownKind(s.to_string()))
    }

    pub fn is_external(self) -> bool {
        matches!(self, AttackKind::Jpeg2000 | AttackKind::Webp)
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How the per-application magnitude is drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum Magnitude {
    /// Continuous uniform draw over `[lo, hi]`.
    Range { lo: f64, hi: f64 },
    /// Uniform pick from a discrete set.
    Choices(Vec<f64>),
}

impl std::fmt::Display for Magnitude {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Magnitude::Range { lo, hi } if lo == hi => write!(f, "{lo}"),
            Magnitude::Range { lo, hi } => write!(f, "[{lo},{hi}]"),
            Magnitude::Choices(vs) => {
                let rendered: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                write!(f, "{{{}}}", rendered.join(","))
            }
        }
    }
}

impl Magnitude {
    pub fn fixed(v: f64) -> Self {
        Magnitude::Range { lo: v, hi: v }
    }

    fn draw(&self, rng: &mut SeededRng) -> f64 {
        match self {
            Magnitude::Range { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    rng.next_f64(*lo, *hi)
                }
            }
            Magnitude::Choices(vs) => vs[rng.next_index(vs.len())],
        }
    }
}

/// External re-encoder invoked as `command args...` with the source PNG on
/// stdin and the re-encoded-then-decoded result expected as PNG on stdout.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecHook {
    pub command: String,
    pub args: Vec<String>,
}

impl CodecHook {
    fn run(&self, png: &[u8]) -> Result<Vec<u8>, AttackError> {
        let fail = |detail: String| AttackError::HookFailed { command: self.command.clone(), detail };
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        child
            .stdin
            .take()
            .expect("stdin was requested")
            .write_all(png)
            .map_err(|e| fail(format!("writing stdin: {e}")))?;
        let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!(
                "exit {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(out.stdout)
    }
}

/// One registry entry: the attack, its magnitude model, and (for external
/// kinds) the codec command.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub magnitude: Magnitude,
    pub hook: Option<CodecHook>,
}

impl AttackSpec {
    /// The documented default magnitude model for each attack.
    pub fn default_for(kind: AttackKind) -> Self {
        let magnitude = match kind {
            AttackKind::Crop => Magnitude::Range { lo: 0.8, hi: 1.0 },
            AttackKind::Rotate => Magnitude::Range { lo: -15.0, hi: 15.0 },
            AttackKind::Scale => Magnitude::Range { lo: 0.7, hi: 1.3 },
            AttackKind::GaussianNoise => Magnitude::Range { lo: 2.0, hi: 10.0 },
            AttackKind::GaussianBlur => Magnitude::Range { lo: 0.5, hi: 1.0 },
            AttackKind::Brightness => Magnitude::Range { lo: 0.7, hi: 1.3 },
            AttackKind::ImageQuantize => Magnitude::Choices(vec![4.0, 5.0, 6.0]),
            AttackKind::ColorQuantize => Magnitude::Choices(vec![16.0, 32.0, 64.0]),
            // external codecs carry their parameters in the hook command line
            AttackKind::Jpeg2000 | AttackKind::Webp => Magnitude::fixed(0.0),
        };
        Self { kind, magnitude, hook: None }
    }

    pub fn with_hook(mut self, hook: CodecHook) -> Self {
        self.hook = Some(hook);
        self
    }
}

/// Ordered set of distinct attacks; the order fixes which training subset
/// each attack receives.
#[derive(Debug, Clone)]
pub struct AttackRegistry {
    specs: Vec<AttackSpec>,
}

impl AttackRegistry {
    pub fn new(specs: Vec<AttackSpec>) -> Result<Self, AttackError> {
        if specs.is_empty() {
            return Err(AttackError::EmptyRegistry);
        }
        for (i, a) in specs.iter().enumerate() {
            if specs[..i].iter().any(|b| b.kind == a.kind) {
                return Err(AttackError::DuplicateKind(a.kind.name()));
            }
        }
        Ok(Self { specs })
    }

    /// The eight in-house attacks with default magnitudes.
    pub fn default_in_house() -> Self {
        Self::new(AttackKind::IN_HOUSE.map(AttackSpec::default_for).to_vec())
            .expect("defaults are distinct")
    }

    pub fn specs(&self) -> &[AttackSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// Apply an attack with a freshly drawn magnitude.
pub fn apply_attack(
    spec: &AttackSpec,
    image: &ImageU8,
    rng: &mut SeededRng,
) -> Result<ImageU8, AttackError> {
    let magnitude = spec.magnitude.draw(rng);
    apply_attack_at(spec, magnitude, image, rng)
}

/// Apply an attack at an explicit magnitude. The generator still drives any
/// remaining randomness (noise realization, crop offset).
pub fn apply_attack_at(
    spec: &AttackSpec,
    magnitude: f64,
    image: &ImageU8,
    rng: &mut SeededRng,
) -> Result<ImageU8, AttackError> {
    let (h, w) = (image.height(), image.width());
    let bad = |expected: &'static str| AttackError::InvalidMagnitude {
        kind: spec.kind.name(),
        value: magnitude,
        expected,
    };
    match spec.kind {
        AttackKind::Crop => {
            if !(magnitude > 0.0 && magnitude <= 1.0) {
                return Err(bad("keep ratio in (0, 1]"));
            }
            let ch = ((magnitude * h as f64).round() as usize).clamp(1, h);
            let cw = ((magnitude * w as f64).round() as usize).clamp(1, w);
            let oy = rng.next_index(h - ch + 1);
            let ox = rng.next_index(w - cw + 1);
            let mut crop = ImageU8::filled(ch, cw, [0, 0, 0]);
            for y in 0..ch {
                for x in 0..cw {
                    for c in 0..3 {
                        crop.set(y, x, c, image.get(oy + y, ox + x, c));
                    }
                }
            }
            Ok(crop.resize_bilinear(h, w))
        }
        AttackKind::Rotate => {
            let theta = magnitude.to_radians();
            let (sin, cos) = theta.sin_cos();
            let cy = (h as f64 - 1.0) / 2.0;
            let cx = (w as f64 - 1.0) / 2.0;
            let mut out = ImageU8::filled(h, w, [0, 0, 0]);
            for y in 0..h {
                for x in 0..w {
                    let dy = y as f64 - cy;
                    let dx = x as f64 - cx;
                    // inverse map: rotate destination coordinates by -theta
                    let xs = cx + cos * dx + sin * dy;
                    let ys = cy - sin * dx + cos * dy;
                    for c in 0..3 {
                        let v = image.sample_bilinear(ys, xs, c);
                        out.set(y, x, c, v.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            Ok(out)
        }
        AttackKind::Scale => {
            if magnitude <= 0.0 {
                return Err(bad("scale factor > 0"));
            }
            let sh = ((magnitude * h as f64).round() as usize).max(1);
            let sw = ((magnitude * w as f64).round() as usize).max(1);
            Ok(image.resize_bilinear(sh, sw).resize_bilinear(h, w))
        }
        AttackKind::GaussianNoise => {
            if magnitude < 0.0 {
                return Err(bad("sigma >= 0"));
            }
            let mut out = image.clone();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let v = f64::from(out.get(y, x, c)) + rng.next_gaussian(magnitude);
                        out.set(y, x, c, v.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            Ok(out)
        }
        AttackKind::GaussianBlur => {
            if magnitude <= 0.0 {
                return Err(bad("sigma > 0"));
            }
            let mut kernel = [0.0f64; 9];
            let mut sum = 0.0;
            for dy in 0..3usize {
                for dx in 0..3usize {
                    let ry = dy as f64 - 1.0;
                    let rx = dx as f64 - 1.0;
                    let v = (-(rx * rx + ry * ry) / (2.0 * magnitude * magnitude)).exp();
                    kernel[dy * 3 + dx] = v;
                    sum += v;
                }
            }
            for k in kernel.iter_mut() {
                *k /= sum;
            }
            let mut out = image.clone();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let mut acc = 0.0f64;
                        for dy in 0..3usize {
                            for dx in 0..3usize {
                                // edge replication
                                let sy = (y + dy).saturating_sub(1).min(h - 1);
                                let sx = (x + dx).saturating_sub(1).min(w - 1);
                                acc += kernel[dy * 3 + dx] * f64::from(image.get(sy, sx, c));
                            }
                        }
                        out.set(y, x, c, acc.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            Ok(out)
        }
        AttackKind::Brightness => {
            if magnitude <= 0.0 {
                return Err(bad("brightness factor > 0"));
            }
            let mut out = image.clone();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let scaled = f64::from(image.get(y, x, c)) * magnitude;
                        out.set(y, x, c, scaled.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            Ok(out)
        }
        AttackKind::ImageQuantize => {
            let bits = magnitude.round();
            if bits != magnitude || !(1.0..=8.0).contains(&bits) {
                return Err(bad("integer bit depth in 1..=8"));
            }
            let levels = (1u32 << bits as u32) as f64 - 1.0;
            let mut out = image.clone();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let v = f64::from(image.get(y, x, c)) / 255.0;
                        let q = (v * levels).round() / levels * 255.0;
                        out.set(y, x, c, q.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            Ok(out)
        }
        AttackKind::ColorQuantize => {
            let levels = magnitude.round();
            if levels != magnitude || !(2.0..=256.0).contains(&levels) {
                return Err(bad("integer level count in 2..=256"));
            }
            let step = 256.0 / levels;
            let mut out = image.clone();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let bin = (f64::from(image.get(y, x, c)) / step).floor();
                        // midpoint of the bin's integer range
                        let center = bin * step + (step - 1.0) / 2.0;
                        out.set(y, x, c, center.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            Ok(out)
        }
        AttackKind::Jpeg2000 | AttackKind::Webp => {
            let hook = spec
                .hook
                .as_ref()
                .ok_or(AttackError::HookMissing(spec.kind.name()))?;
            let png_out = hook.run(&image.to_png_bytes())?;
            let out = ImageU8::from_bytes(&png_out, std::path::Path::new(&hook.command)).map_err(
                |e| AttackError::BadHookOutput {
                    command: hook.command.clone(),
                    detail: e.to_string(),
                },
            )?;
            if out.height() != h || out.width() != w {
                return Err(AttackError::HookResized {
                    command: hook.command.clone(),
                    from: (h, w),
                    to: (out.height(), out.width()),
                });
            }
            Ok(out)
        }
    }
}

/// Build one epoch's adversarial set: draw a fraction `p` of the primary and
/// watermark sets (labels kept), split the selections round-robin across the
/// registry, and run each attack over its share.
///
/// The selection is a fresh seeded shuffle, so with `p·|set| ≥ k` every
/// attack sees samples every epoch. `p = 0` yields an empty set.
pub fn build_attacked_epoch_set(
    primary: &Dataset,
    watermark: &Dataset,
    p: f64,
    registry: &AttackRegistry,
    epoch_seed: u64,
) -> Result<Dataset, AttackError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(AttackError::InvalidFraction(p));
    }
    if primary.num_classes() != watermark.num_classes() {
        return Err(AttackError::ClassCountMismatch(primary.num_classes(), watermark.num_classes()));
    }
    let root = SeededRng::new(epoch_seed).split_str("attacked-epoch-set");
    let k = registry.len();
    let mut samples: Vec<LabeledSample> = Vec::new();
    for (tag, set) in [("primary", primary), ("watermark", watermark)] {
        let n = (p * set.len() as f64).round() as usize;
        if n == 0 {
            continue;
        }
        let mut select_rng = root.split_str(tag).split_str("select");
        let (selected, _) = crate::data::sample_rand(set, n, &mut select_rng)?;
        for (i, spec) in registry.specs().iter().enumerate() {
            let share = crate::data::partition_subset(&selected, i, k)?;
            let mut attack_rng = root.split_str(tag).split_str(spec.kind.name());
            for s in share.samples() {
                let image = apply_attack(spec, &s.image, &mut attack_rng)?;
                samples.push(LabeledSample { image, label: s.label });
            }
        }
    }
    Dataset::new(samples, primary.num_classes(), Provenance::Attacked).map_err(AttackError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::metrics::psnr;

    fn test_image() -> ImageU8 {
        synth_dataset(2, 1, 32, 88).unwrap().samples()[0].image.clone()
    }

    #[test]
    fn every_in_house_attack_preserves_shape_and_determinism() {
        let img = test_image();
        for kind in AttackKind::IN_HOUSE {
            let spec = AttackSpec::default_for(kind);
            let mut r1 = SeededRng::new(5);
            let mut r2 = SeededRng::new(5);
            let a = apply_attack(&spec, &img, &mut r1).unwrap();
            let b = apply_attack(&spec, &img, &mut r2).unwrap();
            assert_eq!(a.height(), img.height(), "{kind}");
            assert_eq!(a.width(), img.width(), "{kind}");
            assert_eq!(a, b, "{kind} must be deterministic under a fixed seed");
        }
    }

    #[test]
    fn identity_magnitudes() {
        let img = test_image();
        let mut rng = SeededRng::new(0);
        let cases = [
            (AttackKind::Scale, 1.0),
            (AttackKind::Rotate, 0.0),
            (AttackKind::Brightness, 1.0),
            (AttackKind::ImageQuantize, 8.0),
            (AttackKind::ColorQuantize, 256.0),
            (AttackKind::Crop, 1.0),
        ];
        for (kind, magnitude) in cases {
            let spec = AttackSpec::default_for(kind);
            let out = apply_attack_at(&spec, magnitude, &img, &mut rng).unwrap();
            assert_eq!(out, img, "{kind} at magnitude {magnitude} should be identity");
        }
    }

    #[test]
    fn noise_sigma_sets_psnr() {
        // sigma 8 → PSNR ≈ 20·log10(255/8) ≈ 30.07 dB (clipping nudges it up)
        let img = test_image();
        let spec = AttackSpec::default_for(AttackKind::GaussianNoise);
        let mut rng = SeededRng::new(17);
        let noisy = apply_attack_at(&spec, 8.0, &img, &mut rng).unwrap();
        let p = psnr(&img, &noisy).unwrap();
        assert!((p - 30.07).abs() < 0.5, "psnr {p}");
    }

    #[test]
    fn color_quantize_two_levels() {
        let mut img = ImageU8::filled(8, 8, [0, 0, 0]);
        img.set(0, 0, 0, 127);
        img.set(0, 0, 1, 128);
        img.set(0, 0, 2, 255);
        let spec = AttackSpec::default_for(AttackKind::ColorQuantize);
        let mut rng = SeededRng::new(0);
        let out = apply_attack_at(&spec, 2.0, &img, &mut rng).unwrap();
        assert_eq!(out.get(0, 0, 0), 64); // low bin center
        assert_eq!(out.get(0, 0, 1), 192); // high bin center
        assert_eq!(out.get(0, 0, 2), 192);
        assert_eq!(out.get(1, 1, 0), 64);
    }

    #[test]
    fn magnitude_validation() {
        let img = test_image();
        let mut rng = SeededRng::new(0);
        let cases = [
            (AttackKind::Crop, 0.0),
            (AttackKind::Crop, 1.5),
            (AttackKind::Scale, -1.0),
            (AttackKind::GaussianNoise, -0.1),
            (AttackKind::ImageQuantize, 4.5),
            (AttackKind::ImageQuantize, 9.0),
            (AttackKind::ColorQuantize, 1.0),
            (AttackKind::Brightness, 0.0),
        ];
        for (kind, magnitude) in cases {
            let spec = AttackSpec::default_for(kind);
            assert!(
                matches!(
                    apply_attack_at(&spec, magnitude, &img, &mut rng),
                    Err(AttackError::InvalidMagnitude { .. })
                ),
                "{kind} should reject {magnitude}"
            );
        }
    }

    #[test]
    fn magnitudes_stay_in_declared_ranges() {
        let mut rng = SeededRng::new(33);
        for _ in 0..200 {
            let m = Magnitude::Range { lo: 0.8, hi: 1.0 }.draw(&mut rng);
            assert!((0.8..=1.0).contains(&m));
            let c = Magnitude::Choices(vec![16.0, 32.0, 64.0]).draw(&mut rng);
            assert!([16.0, 32.0, 64.0].contains(&c));
        }
    }

    #[test]
    fn registry_rules() {
        let reg = AttackRegistry::default_in_house();
        assert_eq!(reg.len(), 8);
        assert!(reg.specs().iter().all(|s| !s.kind.is_external()));
        assert!(matches!(AttackRegistry::new(vec![]), Err(AttackError::EmptyRegistry)));
        let dup = vec![
            AttackSpec::default_for(AttackKind::Crop),
            AttackSpec::default_for(AttackKind::Crop),
        ];
        assert!(matches!(AttackRegistry::new(dup), Err(AttackError::DuplicateKind("crop"))));
        assert!(AttackKind::parse("gaussian_noise").is_ok());
        assert!(AttackKind::parse("jpegg").is_err());
    }

    #[test]
    fn external_kind_without_hook_is_rejected() {
        let img = test_image();
        let mut rng = SeededRng::new(0);
        let spec = AttackSpec::default_for(AttackKind::Jpeg2000);
        assert!(matches!(
            apply_attack(&spec, &img, &mut rng),
            Err(AttackError::HookMissing("jpeg2000"))
        ));
    }

    #[test]
    fn external_hook_runs_subprocess() {
        let img = test_image();
        let mut rng = SeededRng::new(0);
        // `cat` is a perfectly lossless "codec": PNG in, same PNG out
        let spec = AttackSpec::default_for(AttackKind::Webp)
            .with_hook(CodecHook { command: "cat".into(), args: vec![] });
        let out = apply_attack(&spec, &img, &mut rng).unwrap();
        assert_eq!(out, img);

        let failing = AttackSpec::default_for(AttackKind::Webp)
            .with_hook(CodecHook { command: "false".into(), args: vec![] });
        assert!(matches!(
            apply_attack(&failing, &img, &mut rng),
            Err(AttackError::HookFailed { .. })
        ));

        let garbage = AttackSpec::default_for(AttackKind::Webp)
            .with_hook(CodecHook { command: "head".into(), args: vec!["-c".into(), "4".into()] });
        assert!(matches!(
            apply_attack(&garbage, &img, &mut rng),
            Err(AttackError::BadHookOutput { .. })
        ));
    }

    #[test]
    fn epoch_set_sizes_and_labels() {
        let primary = synth_dataset(4, 10, 16, 50).unwrap(); // 40 samples
        let watermark = crate::data::relabel(&synth_dataset(4, 4, 16, 51).unwrap(), 2).unwrap();
        let reg = AttackRegistry::default_in_house();
        let out = build_attacked_epoch_set(&primary, &watermark, 0.5, &reg, 7).unwrap();
        assert_eq!(out.len(), 20 + 8);
        assert_eq!(out.provenance(), Provenance::Attacked);
        // watermark share keeps the target label
        assert!(out.samples().iter().filter(|s| s.label == 2).count() >= 8);

        let again = build_attacked_epoch_set(&primary, &watermark, 0.5, &reg, 7).unwrap();
        assert_eq!(out, again);
        let other = build_attacked_epoch_set(&primary, &watermark, 0.5, &reg, 8).unwrap();
        assert_ne!(out, other);

        let empty = build_attacked_epoch_set(&primary, &watermark, 0.0, &reg, 7).unwrap();
        assert!(empty.is_empty());
        let full = build_attacked_epoch_set(&primary, &watermark, 1.0, &reg, 7).unwrap();
        assert_eq!(full.len(), 40 + 16);
        assert!(matches!(
            build_attacked_epoch_set(&primary, &watermark, 1.2, &reg, 7),
            Err(AttackError::InvalidFraction(_))
        ));
    }

    #[test]
    fn epoch_set_covers_every_attack_with_small_pools() {
        // selection smaller than the registry: later attacks get empty shares
        let primary = synth_dataset(2, 2, 16, 60).unwrap(); // 4 samples
        let watermark = synth_dataset(2, 1, 16, 61).unwrap(); // 2 samples
        let reg = AttackRegistry::default_in_house();
        let out = build_attacked_epoch_set(&primary, &watermark, 0.5, &reg, 3).unwrap();
        assert_eq!(out.len(), 2 + 1);
    }
}
