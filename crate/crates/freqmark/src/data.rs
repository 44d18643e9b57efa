//! Image and dataset containers plus the sampling/partition primitives.
//!
//! Everything here is immutable after construction and pure: operations
//! clone what they need and never touch their inputs, so any pipeline is a
//! function of (inputs, seed) only.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use crate::rng::SeededRng;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("image side must be divisible by 8, got {0}")]
    SideNotBlockAligned(usize),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("pixel buffer length {len} does not match {height}x{width}x3")]
    BadBufferLength { height: usize, width: usize, len: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("dataset images must share dimensions: found {0}x{1} and {2}x{3}")]
    MixedDimensions(usize, usize, usize, usize),
    #[error("requested {requested} samples from a dataset of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("subset index {index} must be smaller than subset count {count}")]
    SubsetIndexOutOfRange { index: usize, count: usize },
    #[error("dataset root {0} has no class directories")]
    NoClasses(PathBuf),
    #[error("class directory {0} contains no images")]
    EmptyClass(PathBuf),
    #[error("manifest line {line}: {msg}")]
    BadManifestLine { line: usize, msg: String },
    #[error("{failed} of {total} files failed to decode:\n{report}")]
    UndecodableFiles { failed: usize, total: usize, report: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png error at {path}: {source}")]
    Png {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// 8-bit interleaved RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, DataError> {
        if data.len() != height * width * Self::CHANNELS {
            return Err(DataError::BadBufferLength { height, width, len: data.len() });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    /// Bilinear sample at fractional coordinates, clamping to the edge
    /// (replication) outside the image.
    pub(crate) fn sample_bilinear(&self, yf: f64, xf: f64, c: usize) -> f64 {
        let y0 = yf.floor();
        let x0 = xf.floor();
        let ty = yf - y0;
        let tx = xf - x0;
        let clamp_y = |y: f64| -> usize { (y.max(0.0) as usize).min(self.height - 1) };
        let clamp_x = |x: f64| -> usize { (x.max(0.0) as usize).min(self.width - 1) };
        let (y0i, y1i) = (clamp_y(y0), clamp_y(y0 + 1.0));
        let (x0i, x1i) = (clamp_x(x0), clamp_x(x0 + 1.0));
        let v00 = f64::from(self.get(y0i, x0i, c));
        let v01 = f64::from(self.get(y0i, x1i, c));
        let v10 = f64::from(self.get(y1i, x0i, c));
        let v11 = f64::from(self.get(y1i, x1i, c));
        let top = v00 + (v01 - v00) * tx;
        let bot = v10 + (v11 - v10) * tx;
        top + (bot - top) * ty
    }

    /// Bilinear resize (pixel-center convention). Resizing to the same
    /// dimensions reproduces the input exactly.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> ImageU8 {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = vec![0u8; height * width * 3];
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for y in 0..height {
            let yf = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..width {
                let xf = (x as f64 + 0.5) * sx - 0.5;
                for c in 0..3 {
                    let v = self.sample_bilinear(yf, xf, c);
                    out[(y * width + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        ImageU8 { height, width, data: out }
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length is validated at construction");
        let mut bytes = Cursor::new(Vec::new());
        img.write_to(&mut bytes, image::ImageFormat::Png)
            .expect("png encoding to memory cannot fail");
        bytes.into_inner()
    }

    /// Decode PNG (or any supported raster); RGBA alpha is dropped.
    pub fn from_bytes(bytes: &[u8], path_for_error: &Path) -> Result<Self, DataError> {
        let decoded = image::load_from_memory(bytes).map_err(|source| DataError::Png {
            path: path_for_error.to_path_buf(),
            source,
        })?;
        let rgb = decoded.to_rgb8();
        Ok(Self {
            height: rgb.height() as usize,
            width: rgb.width() as usize,
            data: rgb.into_raw(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_png_bytes()).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self, DataError> {
        let bytes = fs::read(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }
}

/// An image with its class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    pub image: ImageU8,
    pub label: usize,
}

/// Where a dataset came from; carried through transformations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    Imported,
    Forged,
    Attacked,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Synthetic => "synthetic",
            Provenance::Imported => "imported",
            Provenance::Forged => "forged",
            Provenance::Attacked => "attacked",
        };
        f.write_str(s)
    }
}

/// Ordered collection of labeled samples sharing dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    num_classes: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        samples: Vec<LabeledSample>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        if let Some(first) = samples.first() {
            let (h, w) = (first.image.height(), first.image.width());
            for s in &samples {
                if s.image.height() != h || s.image.width() != w {
                    return Err(DataError::MixedDimensions(h, w, s.image.height(), s.image.width()));
                }
            }
        }
        for s in &samples {
            if s.label >= num_classes {
                return Err(DataError::LabelOutOfRange { label: s.label, num_classes });
            }
        }
        Ok(Self { samples, num_classes, provenance })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Image side length, if the dataset is nonempty and square.
    pub fn side(&self) -> Option<usize> {
        self.samples.first().and_then(|s| {
            (s.image.height() == s.image.width()).then(|| s.image.height())
        })
    }

    /// Content hash of labels and pixel data; identifies a dataset in
    /// manifests independent of where it lives on disk.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.num_classes as u64).to_le_bytes());
        for s in &self.samples {
            hasher.update((s.label as u64).to_le_bytes());
            hasher.update((s.image.height() as u64).to_le_bytes());
            hasher.update((s.image.width() as u64).to_le_bytes());
            hasher.update(s.image.data());
        }
        hex_lower(&hasher.finalize())
    }

    /// Save as `class_<k>/img_<n>.png` plus a `manifest.tsv` of
    /// `relative_path<TAB>class_index` lines.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
        let mut manifest = String::new();
        let mut per_class_counter: BTreeMap<usize, usize> = BTreeMap::new();
        for s in &self.samples {
            let n = per_class_counter.entry(s.label).or_insert(0);
            let rel = format!("class_{:03}/img_{:05}.png", s.label, n);
            *n += 1;
            let path = dir.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)
                    .map_err(|source| DataError::Io { path: parent.to_path_buf(), source })?;
            }
            s.image.save_png(&path)?;
            manifest.push_str(&format!("{rel}\t{}\n", s.label));
        }
        let manifest_path = dir.join("manifest.tsv");
        fs::write(&manifest_path, manifest)
            .map_err(|source| DataError::Io { path: manifest_path, source })?;
        let meta_path = dir.join("meta.txt");
        let meta = format!("num_classes = {}\nprovenance = {}\n", self.num_classes, self.provenance);
        fs::write(&meta_path, meta).map_err(|source| DataError::Io { path: meta_path, source })
    }
}

fn hex_lower(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

/// Procedurally drawn glyph dataset: one shape family per class on a smooth
/// gradient background, with per-sample jitter in position, size, hue, and
/// pixel noise. Classes are balanced; identical arguments give byte-identical
/// output.
pub fn synth_dataset(
    classes: usize,
    per_class: usize,
    side: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes < 2 {
        return Err(DataError::TooFewClasses(classes));
    }
    if side % 8 != 0 || side == 0 {
        return Err(DataError::SideNotBlockAligned(side));
    }
    let root = SeededRng::new(seed).split_str("synth");
    let mut samples = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let class_rng = root.split(class as u64);
        for i in 0..per_class {
            let mut rng = class_rng.split(i as u64);
            let image = draw_glyph(class, side, &mut rng);
            samples.push(LabeledSample { image, label: class });
        }
    }
    Dataset::new(samples, classes, Provenance::Synthetic)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Signed distance to the class glyph, negative inside. `p` is relative to
/// the glyph center, `r` is the glyph radius in pixels.
fn glyph_sdf(family: usize, px: f64, py: f64, r: f64) -> f64 {
    let bar = |along: f64, across: f64, half_len: f64, half_w: f64| -> f64 {
        (along.abs() - half_len).max(across.abs() - half_w)
    };
    match family {
        // disk
        0 => (px * px + py * py).sqrt() - r,
        // square
        1 => px.abs().max(py.abs()) - r * 0.82,
        // upward triangle (circumradius r)
        2 => {
            let mut d = f64::NEG_INFINITY;
            let verts = [
                (0.0, -r),
                (r * 0.866, r * 0.5),
                (-r * 0.866, r * 0.5),
            ];
            for e in 0..3 {
                let (x1, y1) = verts[e];
                let (x2, y2) = verts[(e + 1) % 3];
                let (ex, ey) = (x2 - x1, y2 - y1);
                let len = (ex * ex + ey * ey).sqrt();
                // outward normal of a CCW edge in image coords
                let (nx, ny) = (ey / len, -ex / len);
                d = d.max((px - x1) * nx + (py - y1) * ny);
            }
            d
        }
        // ring
        3 => ((px * px + py * py).sqrt() - r * 0.78).abs() - r * 0.26,
        // plus
        4 => bar(px, py, r, r * 0.32).min(bar(py, px, r, r * 0.32)),
        // diagonal cross
        5 => {
            let inv = std::f64::consts::FRAC_1_SQRT_2;
            let qx = (px + py) * inv;
            let qy = (py - px) * inv;
            bar(qx, qy, r, r * 0.30).min(bar(qy, qx, r, r * 0.30))
        }
        // diamond
        6 => (px.abs() + py.abs()) - r * 1.12,
        // two horizontal bars
        7 => bar(px, py - r * 0.48, r * 0.95, r * 0.22)
            .min(bar(px, py + r * 0.48, r * 0.95, r * 0.22)),
        // two vertical bars
        8 => bar(py, px - r * 0.48, r * 0.95, r * 0.22)
            .min(bar(py, px + r * 0.48, r * 0.95, r * 0.22)),
        // 2x2 dot grid
        _ => {
            let rr = r * 0.36;
            let mut d = f64::INFINITY;
            for &sx in &[-1.0, 1.0] {
                for &sy in &[-1.0, 1.0] {
                    let dx = px - sx * r * 0.55;
                    let dy = py - sy * r * 0.55;
                    d = d.min((dx * dx + dy * dy).sqrt() - rr);
                }
            }
            d
        }
    }
}

/// Fixed chroma texture field, like a sensor's color fixed-pattern noise: a
/// weighted sum of 8×8 cosine products tiled across the image in phase with
/// the 8-pixel grid. Every synthetic image carries it at the same phase,
/// applied along a luminance-invariant color direction so luminance
/// structure is untouched. The fine trio dominates locally; the coarse
/// pair keeps the field measurable after blurring or resampling. The two
/// anchor components sit at a larger fixed amplitude so the field stays
/// measurable under heavy additive noise.
fn dither_field() -> [f64; 64] {
    let mut d = [0.0f64; 64];
    let slots: [(usize, usize, f64); 7] = [
        (7, 7, 2.9),
        (6, 7, 2.9),
        (3, 3, 3.2),
        (4, 3, 3.2),
        (3, 4, 3.2),
        (4, 0, 2.777),
        (0, 4, 2.777),
    ];
    for (u, v, amp) in slots {
        for y in 0..8 {
            for x in 0..8 {
                let cx = (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / 16.0).cos();
                let cy = (std::f64::consts::PI * (2 * y + 1) as f64 * v as f64 / 16.0).cos();
                d[y * 8 + x] += amp * cx * cy;
            }
        }
    }
    d
}

/// Unit color direction with zero luminance component under the BT.601
/// weights (0.299, 0.587, 0.114), scaled so the red channel moves 1:1.
const CHROMA_AXIS: [f64; 3] = [1.0, -0.5517, 0.218];

fn draw_glyph(class: usize, side: usize, rng: &mut SeededRng) -> ImageU8 {
    let family = class % 10;
    // classes beyond the ten base families shrink so the tier stays separable
    let tier_scale = 0.78f64.powi((class / 10) as i32);
    let s = side as f64;
    let dither = dither_field();

    // background: smooth two-color gradient
    let bg_h = rng.next_f64(0.0, 1.0);
    let bg_s = rng.next_f64(0.05, 0.15);
    let bg_v = rng.next_f64(0.30, 0.48);
    let c0 = hsv_to_rgb(bg_h, bg_s, bg_v);
    let c1 = hsv_to_rgb(
        bg_h + rng.next_f64(-0.08, 0.08),
        rng.next_f64(0.08, 0.24),
        (bg_v + rng.next_f64(0.05, 0.14)).min(0.58),
    );
    let angle = rng.next_f64(0.0, std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());

    // one large soft highlight varies the background without sharp detail
    let bx = rng.next_f64(0.2, 0.8) * s;
    let by = rng.next_f64(0.2, 0.8) * s;
    let br = rng.next_f64(0.5, 0.9) * s;
    let bamp = rng.next_f64(-14.0, 14.0);

    // foreground glyph: same hue family as the background, separated by
    // luminance only — color edges ring badly under the codec's coarse
    // chroma tables, while pure-luminance shapes stay cheap and crisp
    let fg = hsv_to_rgb(
        bg_h + rng.next_f64(-0.05, 0.05),
        (bg_s * rng.next_f64(0.8, 1.2)).min(0.5),
        rng.next_f64(0.62, 0.82),
    );
    let cx = s * 0.5 + rng.next_f64(-0.09, 0.09) * s;
    let cy = s * 0.5 + rng.next_f64(-0.09, 0.09) * s;
    let radius = rng.next_f64(0.24, 0.34) * s * tier_scale;
    // film grain is mostly luminance with a faint chroma component
    let noise_sigma = rng.next_f64(0.3, 0.6);

    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let t = 0.5 + 0.5 * ((x as f64 / s - 0.5) * gx + (y as f64 / s - 0.5) * gy);
            let fx = x as f64 + 0.5;
            let fy = y as f64 + 0.5;
            let blob =
                bamp * (-((fx - bx).powi(2) + (fy - by).powi(2)) / (br * br)).exp();
            let d = glyph_sdf(family, fx - cx, fy - cy, radius);
            // ~2px antialiased edge
            let alpha = (0.5 - d / 2.0).clamp(0.0, 1.0);
            let grain = rng.next_gaussian(noise_sigma);
            let texture = dither[(y % 8) * 8 + (x % 8)];
            for c in 0..3 {
                let bg = c0[c] + (c1[c] - c0[c]) * t;
                let v = (bg + (fg[c] - bg) * alpha) * 255.0 + blob;
                let noisy = v + texture * CHROMA_AXIS[c] + grain + rng.next_gaussian(0.2);
                data.push(noisy.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageU8 { height: side, width: side, data }
}

// ---------------------------------------------------------------------------
// Import
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ImportOptions {
    /// Target side length; images are bilinearly resized. Must be divisible by 8.
    pub side: usize,
    /// Skip files that fail to decode instead of rejecting the import.
    pub skip_undecodable: bool,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self { side: 32, skip_undecodable: false }
    }
}

/// Import a `root/<class_name>/<image>.png` tree, or an explicit manifest of
/// `relative_path<TAB>class_index` lines. Class names map to indices in
/// lexicographic order; images are resized to `side`. Undecodable files are
/// listed per file and reject the import unless `skip_undecodable` is set.
pub fn import_image_folder(
    root: &Path,
    manifest: Option<&Path>,
    options: &ImportOptions,
) -> Result<Dataset, DataError> {
    if options.side % 8 != 0 || options.side == 0 {
        return Err(DataError::SideNotBlockAligned(options.side));
    }
    let entries: Vec<(PathBuf, usize)> = match manifest {
        Some(mpath) => {
            let text = fs::read_to_string(mpath)
                .map_err(|source| DataError::Io { path: mpath.to_path_buf(), source })?;
            let mut out = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (rel, label) = line.split_once('\t').ok_or_else(|| DataError::BadManifestLine {
                    line: lineno + 1,
                    msg: "expected `relative_path<TAB>class_index`".to_string(),
                })?;
                let label: usize = label.trim().parse().map_err(|_| DataError::BadManifestLine {
                    line: lineno + 1,
                    msg: format!("bad class index `{}`", label.trim()),
                })?;
                out.push((root.join(rel), label));
            }
            out
        }
        None => {
            let mut class_dirs: Vec<PathBuf> = Vec::new();
            let rd = fs::read_dir(root)
                .map_err(|source| DataError::Io { path: root.to_path_buf(), source })?;
            for entry in rd {
                let entry = entry.map_err(|source| DataError::Io { path: root.to_path_buf(), source })?;
                if entry.path().is_dir() {
                    class_dirs.push(entry.path());
                }
            }
            if class_dirs.is_empty() {
                return Err(DataError::NoClasses(root.to_path_buf()));
            }
            class_dirs.sort();
            let mut out = Vec::new();
            for (label, dir) in class_dirs.iter().enumerate() {
                let mut files: Vec<PathBuf> = Vec::new();
                let rd = fs::read_dir(dir)
                    .map_err(|source| DataError::Io { path: dir.clone(), source })?;
                for entry in rd {
                    let entry = entry.map_err(|source| DataError::Io { path: dir.clone(), source })?;
                    if entry.path().is_file() {
                        files.push(entry.path());
                    }
                }
                if files.is_empty() {
                    return Err(DataError::EmptyClass(dir.clone()));
                }
                files.sort();
                out.extend(files.into_iter().map(|f| (f, label)));
            }
            out
        }
    };

    let total = entries.len();
    let mut failures: Vec<String> = Vec::new();
    let mut samples = Vec::new();
    let mut max_label = 0usize;
    for (path, label) in entries {
        max_label = max_label.max(label);
        match ImageU8::load_png(&path) {
            Ok(img) => {
                let img = img.resize_bilinear(options.side, options.side);
                samples.push(LabeledSample { image: img, label });
            }
            Err(e) => failures.push(format!("  {}: {e}", path.display())),
        }
    }
    if !failures.is_empty() && !options.skip_undecodable {
        return Err(DataError::UndecodableFiles {
            failed: failures.len(),
            total,
            report: failures.join("\n"),
        });
    }
    let num_classes = max_label + 1;
    let mut seen = vec![false; num_classes];
    for s in &samples {
        seen[s.label] = true;
    }
    if let Some(missing) = seen.iter().position(|present| !present) {
        return Err(DataError::EmptyClass(root.join(format!("<class {missing}>"))));
    }
    Dataset::new(samples, num_classes, Provenance::Imported)
}

// ---------------------------------------------------------------------------
// Sampling primitives
// ---------------------------------------------------------------------------

/// Uniform sampling of `n` samples without replacement. The selected set
/// comes back in draw order (a seeded shuffle), which downstream splitting
/// relies on. Returns `(selected, remainder)`; together they are the input
/// as a multiset.
pub fn sample_rand(
    dataset: &Dataset,
    n: usize,
    rng: &mut SeededRng,
) -> Result<(Dataset, Dataset), DataError> {
    if n > dataset.len() {
        return Err(DataError::SampleTooLarge { requested: n, available: dataset.len() });
    }
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    for i in 0..n {
        let j = i + rng.next_index(dataset.len() - i);
        indices.swap(i, j);
    }
    let pick = |idx: &[usize]| -> Vec<LabeledSample> {
        idx.iter().map(|&i| dataset.samples[i].clone()).collect()
    };
    let selected = Dataset::new(pick(&indices[..n]), dataset.num_classes, dataset.provenance)?;
    let remainder = Dataset::new(pick(&indices[n..]), dataset.num_classes, dataset.provenance)?;
    Ok((selected, remainder))
}

/// The `i`-th of `k` positional subsets: samples at positions `j ≡ i (mod k)`.
/// Subsets over `i = 0..k` are disjoint and cover the dataset. Callers wanting
/// a randomized assignment shuffle first (see
/// [`crate::attack::build_attacked_epoch_set`]).
pub fn partition_subset(dataset: &Dataset, i: usize, k: usize) -> Result<Dataset, DataError> {
    if i >= k {
        return Err(DataError::SubsetIndexOutOfRange { index: i, count: k });
    }
    let samples: Vec<LabeledSample> = dataset
        .samples
        .iter()
        .skip(i)
        .step_by(k)
        .cloned()
        .collect();
    Dataset::new(samples, dataset.num_classes, dataset.provenance)
}

/// Replace every label with `target`; images untouched.
pub fn relabel(dataset: &Dataset, target: usize) -> Result<Dataset, DataError> {
    if target >= dataset.num_classes {
        return Err(DataError::LabelOutOfRange { label: target, num_classes: dataset.num_classes });
    }
    let samples = dataset
        .samples
        .iter()
        .map(|s| LabeledSample { image: s.image.clone(), label: target })
        .collect();
    Dataset::new(samples, dataset.num_classes, dataset.provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn multiset_key(d: &Dataset) -> Vec<(usize, Vec<u8>)> {
        let mut v: Vec<(usize, Vec<u8>)> = d
            .samples()
            .iter()
            .map(|s| (s.label, s.image.data().to_vec()))
            .collect();
        v.sort();
        v
    }

    #[test]
    fn synth_sizes_and_balance() {
        let d = synth_dataset(10, 20, 32, 7).unwrap();
        assert_eq!(d.len(), 200);
        assert_eq!(d.num_classes(), 10);
        for s in d.samples() {
            assert_eq!(s.image.height(), 32);
            assert_eq!(s.image.width(), 32);
        }
        let mut counts = vec![0usize; 10];
        for s in d.samples() {
            counts[s.label] += 1;
        }
        assert!(counts.iter().all(|&c| c == 20));
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_dataset(4, 5, 16, 11).unwrap();
        let b = synth_dataset(4, 5, 16, 11).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(4, 5, 16, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_minimal_case() {
        let d = synth_dataset(2, 1, 8, 1).unwrap();
        assert_eq!(d.len(), 2);
        let labels: Vec<usize> = d.samples().iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 1]);
    }

    #[test]
    fn synth_rejects_bad_side() {
        assert!(matches!(synth_dataset(3, 2, 30, 0), Err(DataError::SideNotBlockAligned(30))));
        assert!(matches!(synth_dataset(1, 2, 32, 0), Err(DataError::TooFewClasses(1))));
    }

    #[test]
    fn sample_rand_boundaries() {
        let d = synth_dataset(3, 4, 16, 5).unwrap();
        let mut rng = SeededRng::new(1);
        let (sel, rem) = sample_rand(&d, d.len(), &mut rng).unwrap();
        assert_eq!(sel.len(), 12);
        assert!(rem.is_empty());
        assert_eq!(multiset_key(&sel), multiset_key(&d));

        let mut rng = SeededRng::new(1);
        let (sel, rem) = sample_rand(&d, 0, &mut rng).unwrap();
        assert!(sel.is_empty());
        assert_eq!(multiset_key(&rem), multiset_key(&d));

        let mut rng = SeededRng::new(1);
        assert!(sample_rand(&d, 13, &mut rng).is_err());
    }

    #[test]
    fn sample_rand_union_and_determinism() {
        let d = synth_dataset(4, 6, 16, 9).unwrap();
        let mut rng1 = SeededRng::new(42);
        let mut rng2 = SeededRng::new(42);
        let (s1, r1) = sample_rand(&d, 7, &mut rng1).unwrap();
        let (s2, _r2) = sample_rand(&d, 7, &mut rng2).unwrap();
        assert_eq!(s1, s2);
        let mut all = multiset_key(&s1);
        all.extend(multiset_key(&r1));
        all.sort();
        assert_eq!(all, multiset_key(&d));
        // source untouched
        assert_eq!(d, synth_dataset(4, 6, 16, 9).unwrap());
    }

    #[test]
    fn partition_modular_positions() {
        let d = synth_dataset(7, 1, 16, 3).unwrap(); // 7 samples in class order 0..6
        let p0 = partition_subset(&d, 0, 3).unwrap();
        let labels: Vec<usize> = p0.samples().iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 3, 6]);
        assert!(partition_subset(&d, 3, 3).is_err());
    }

    #[test]
    fn partition_disjoint_union() {
        let d = synth_dataset(5, 2, 16, 8).unwrap();
        let k = 4;
        let mut all: Vec<(usize, Vec<u8>)> = Vec::new();
        let mut sizes = Vec::new();
        for i in 0..k {
            let p = partition_subset(&d, i, k).unwrap();
            sizes.push(p.len());
            all.extend(multiset_key(&p));
        }
        all.sort();
        assert_eq!(all, multiset_key(&d));
        assert_eq!(sizes.iter().sum::<usize>(), d.len());
    }

    #[test]
    fn partition_singletons_when_k_equals_len() {
        let d = synth_dataset(10, 1, 16, 2).unwrap();
        for i in 0..10 {
            assert_eq!(partition_subset(&d, i, 10).unwrap().len(), 1);
        }
    }

    #[test]
    fn relabel_contract() {
        let d = synth_dataset(5, 3, 16, 4).unwrap();
        let r = relabel(&d, 3).unwrap();
        assert!(r.samples().iter().all(|s| s.label == 3));
        for (a, b) in d.samples().iter().zip(r.samples()) {
            assert_eq!(a.image, b.image);
        }
        assert!(relabel(&d, 5).is_err());
        let empty = Dataset::new(vec![], 5, Provenance::Synthetic).unwrap();
        assert!(relabel(&empty, 3).unwrap().is_empty());
    }

    #[test]
    fn resize_identity_is_exact() {
        let d = synth_dataset(2, 1, 16, 6).unwrap();
        let img = &d.samples()[0].image;
        assert_eq!(&img.resize_bilinear(16, 16), img);
    }

    #[test]
    fn png_roundtrip() {
        let d = synth_dataset(2, 1, 16, 6).unwrap();
        let img = &d.samples()[0].image;
        let bytes = img.to_png_bytes();
        let back = ImageU8::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(&back, img);
    }

    #[test]
    fn save_and_import_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let d = synth_dataset(3, 4, 16, 13).unwrap();
        d.save(dir.path()).unwrap();
        let opts = ImportOptions { side: 16, skip_undecodable: false };
        let via_manifest =
            import_image_folder(dir.path(), Some(&dir.path().join("manifest.tsv")), &opts).unwrap();
        assert_eq!(multiset_key(&via_manifest), multiset_key(&d));
        let via_tree = import_image_folder(dir.path(), None, &opts).unwrap();
        assert_eq!(multiset_key(&via_tree), multiset_key(&d));
        assert_eq!(via_tree.num_classes(), 3);
    }

    #[test]
    fn import_resizes_odd_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let class = dir.path().join("only");
        fs::create_dir_all(&class).unwrap();
        ImageU8::filled(31, 31, [10, 200, 30]).save_png(&class.join("a.png")).unwrap();
        ImageU8::filled(31, 31, [10, 200, 30]).save_png(&class.join("b.png")).unwrap();
        let d = import_image_folder(
            dir.path(),
            None,
            &ImportOptions { side: 32, skip_undecodable: false },
        )
        .unwrap();
        assert_eq!(d.samples()[0].image.height(), 32);
        assert_eq!(d.samples()[0].image.width(), 32);
        // constant image stays constant under bilinear resize
        assert!(d.samples()[0].image.data().chunks(3).all(|p| p == [10, 200, 30]));
    }

    #[test]
    fn import_lexicographic_class_order() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["zebra", "apple", "mango"] {
            let class = dir.path().join(name);
            fs::create_dir_all(&class).unwrap();
            ImageU8::filled(16, 16, [1, 2, 3]).save_png(&class.join("x.png")).unwrap();
        }
        let d = import_image_folder(dir.path(), None, &ImportOptions { side: 16, skip_undecodable: false })
            .unwrap();
        assert_eq!(d.num_classes(), 3);
        // apple=0, mango=1, zebra=2 by sorted name; one image each in that order
        let labels: Vec<usize> = d.samples().iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn import_reports_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let class = dir.path().join("c0");
        fs::create_dir_all(&class).unwrap();
        ImageU8::filled(16, 16, [9, 9, 9]).save_png(&class.join("good.png")).unwrap();
        fs::write(class.join("bad.png"), b"not a png").unwrap();
        let err = import_image_folder(
            dir.path(),
            None,
            &ImportOptions { side: 16, skip_undecodable: false },
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.png"), "error should name the file: {msg}");
        // salvage path behind the flag
        let d = import_image_folder(
            dir.path(),
            None,
            &ImportOptions { side: 16, skip_undecodable: true },
        )
        .unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn import_rejects_empty_class() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("a")).unwrap();
        fs::create_dir_all(dir.path().join("b")).unwrap();
        ImageU8::filled(16, 16, [0, 0, 0]).save_png(&dir.path().join("a/x.png")).unwrap();
        assert!(matches!(
            import_image_folder(dir.path(), None, &ImportOptions { side: 16, skip_undecodable: false }),
            Err(DataError::EmptyClass(_))
        ));
    }
}
