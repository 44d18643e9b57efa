//! Line-oriented `key = value` run configuration with dotted sections.
//!
//! ```text
//! # comment lines start with #
//! seed = 1
//! out_dir = runs
//! dataset.classes = 10
//! forge.rate = 0.1
//! train.gamma = 0.1
//! ```
//!
//! Sources layer in a fixed order — built-in defaults, then the config
//! file, then environment overrides, then command-line `key=value` pairs —
//! and the fully resolved result can be rendered back out in the same
//! syntax ([`RunConfig::canonical`]), so every manifest is itself a loadable
//! config. Validation never stops at the first problem: all complaints come
//! back in one aggregated error.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::attack::{AttackKind, AttackRegistry, AttackSpec, CodecHook};
use crate::codec::{CodecError, ForgeSpec, QualityFactor};
use crate::nn::train::{SimScope, TrainConfig};
use crate::verify::ThresholdSpec;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("config line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parse `key = value` lines into ordered pairs. Blank lines and full-line
/// `#` comments are skipped; a key may appear only once per source.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::Malformed { line, text: trimmed.to_string() });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Malformed { line, text: trimmed.to_string() });
        }
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::Duplicate { line, key });
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

/// Where the clean image pool comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// Procedurally generated shape corpus.
    Synth,
    /// A directory of PNGs previously imported or laid out as class folders.
    Import,
}

/// Everything a run needs, resolved and validated. One struct feeds every
/// command so that a single file describes a whole experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,

    pub source: DataSource,
    pub import_path: Option<PathBuf>,
    pub classes: usize,
    pub per_class: usize,
    pub side: usize,
    pub test_per_class: usize,

    pub rate: f64,
    pub quality: u8,
    pub target: usize,
    pub verification_count: usize,

    pub attack_fraction: f64,
    pub registry_kinds: Vec<AttackKind>,
    pub jpeg2000_cmd: Option<String>,
    pub webp_cmd: Option<String>,

    pub epochs: usize,
    pub batch_primary: usize,
    pub batch_watermark: usize,
    pub batch_attacked: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub margin: f64,
    pub sim_scope: SimScope,

    pub verify_alpha: f64,
    pub verify_null_rate: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            out_dir: PathBuf::from("runs"),
            seed: 1,
            source: DataSource::Synth,
            import_path: None,
            classes: 10,
            per_class: 250,
            side: 32,
            test_per_class: 50,
            rate: 0.1,
            quality: 90,
            target: 0,
            verification_count: 500,
            attack_fraction: train.attack_fraction,
            registry_kinds: AttackKind::IN_HOUSE.to_vec(),
            jpeg2000_cmd: None,
            webp_cmd: None,
            epochs: train.epochs,
            batch_primary: train.batch_primary,
            batch_watermark: train.batch_watermark,
            batch_attacked: train.batch_attacked,
            lr: train.lr,
            lr_decay_factor: train.lr_decay_factor,
            lr_decay_every: train.lr_decay_every,
            alpha: train.alpha,
            beta: train.beta,
            gamma: train.gamma,
            margin: train.margin,
            sim_scope: train.sim_scope,
            verify_alpha: 1e-6,
            verify_null_rate: None,
        }
    }
}

impl RunConfig {
    /// Resolve a config from layered sources: `file` under `env` under
    /// `flags`. Every key is checked; every problem is reported.
    pub fn resolve(
        file: Option<&str>,
        env: &[(String, String)],
        flags: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut merged: Vec<(String, String)> = Vec::new();
        let mut push_layer = |pairs: Vec<(String, String)>| {
            for (k, v) in pairs {
                merged.retain(|(existing, _)| *existing != k);
                merged.push((k, v));
            }
        };
        if let Some(text) = file {
            push_layer(parse_kv(text)?);
        }
        push_layer(env.to_vec());
        push_layer(flags.to_vec());
        Self::from_pairs(&merged)
    }

    /// Apply `key = value` pairs over the defaults, collecting every
    /// complaint instead of stopping at the first.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut errors: Vec<String> = Vec::new();
        let mut complain = |key: &str, what: String| errors.push(format!("- {key}: {what}"));

        for (key, value) in pairs {
            let v = value.as_str();
            let mut parse_num = |what: &mut dyn FnMut(&str) -> bool| {
                if !what(v) {
                    complain(key, format!("cannot parse `{v}`"));
                }
            };
            match key.as_str() {
                "out_dir" => {
                    if v.is_empty() {
                        complain(key, "must not be empty".into());
                    } else {
                        cfg.out_dir = PathBuf::from(v);
                    }
                }
                "seed" => parse_num(&mut |s| s.parse().map(|x| cfg.seed = x).is_ok()),
                "dataset.source" => match v {
                    "synth" => cfg.source = DataSource::Synth,
                    "import" => cfg.source = DataSource::Import,
                    _ => complain(key, format!("unknown source `{v}` (expected `synth` or `import`)")),
                },
                "dataset.import_path" => {
                    cfg.import_path = (!v.is_empty()).then(|| PathBuf::from(v));
                }
                "dataset.classes" => parse_num(&mut |s| s.parse().map(|x| cfg.classes = x).is_ok()),
                "dataset.per_class" => parse_num(&mut |s| s.parse().map(|x| cfg.per_class = x).is_ok()),
                "dataset.side" => parse_num(&mut |s| s.parse().map(|x| cfg.side = x).is_ok()),
                "dataset.test_per_class" => {
                    parse_num(&mut |s| s.parse().map(|x| cfg.test_per_class = x).is_ok())
                }
                "forge.rate" => parse_num(&mut |s| s.parse().map(|x| cfg.rate = x).is_ok()),
                "forge.quality" => parse_num(&mut |s| s.parse().map(|x| cfg.quality = x).is_ok()),
                "forge.target" => parse_num(&mut |s| s.parse().map(|x| cfg.target = x).is_ok()),
                "forge.verification_count" => {
                    parse_num(&mut |s| s.parse().map(|x| cfg.verification_count = x).is_ok())
                }
                "attack.fraction" => {
                    parse_num(&mut |s| s.parse().map(|x| cfg.attack_fraction = x).is_ok())
                }
                "attack.registry" => match parse_registry_kinds(v) {
                    Ok(kinds) => cfg.registry_kinds = kinds,
                    Err(msg) => complain(key, msg),
                },
                "attack.jpeg2000_cmd" => cfg.jpeg2000_cmd = (!v.is_empty()).then(|| v.to_string()),
                "attack.webp_cmd" => cfg.webp_cmd = (!v.is_empty()).then(|| v.to_string()),
                "train.epochs" => parse_num(&mut |s| s.parse().map(|x| cfg.epochs = x).is_ok()),
                "train.batch_primary" => {
                    parse_num(&mut |s| s.parse().map(|x| cfg.batch_primary = x).is_ok())
                }
                "train.batch_watermark" => {
                    parse_num(&mut |s| s.parse().map(|x| cfg.batch_watermark = x).is_ok())
                }
                "train.batch_attacked" => {
                    parse_num(&mut |s| s.parse().map(|x| cfg.batch_attacked = x).is_ok())
                }
                "train.lr" => parse_num(&mut |s| s.parse().map(|x| cfg.lr = x).is_ok()),
                "train.lr_decay_factor" => {
                    parse_num(&mut |s| s.parse().map(|x| cfg.lr_decay_factor = x).is_ok())
                }
                "train.lr_decay_every" => {
                    parse_num(&mut |s| s.parse().map(|x| cfg.lr_decay_every = x).is_ok())
                }
                "train.alpha" => parse_num(&mut |s| s.parse().map(|x| cfg.alpha = x).is_ok()),
                "train.beta" => parse_num(&mut |s| s.parse().map(|x| cfg.beta = x).is_ok()),
                "train.gamma" => parse_num(&mut |s| s.parse().map(|x| cfg.gamma = x).is_ok()),
                "train.margin" => parse_num(&mut |s| s.parse().map(|x| cfg.margin = x).is_ok()),
                "train.sim_scope" => match SimScope::parse(v) {
                    Ok(scope) => cfg.sim_scope = scope,
                    Err(msg) => complain(key, msg),
                },
                "verify.alpha" => parse_num(&mut |s| s.parse().map(|x| cfg.verify_alpha = x).is_ok()),
                "verify.null_rate" => {
                    if v.is_empty() {
                        cfg.verify_null_rate = None;
                    } else {
                        parse_num(&mut |s| s.parse().map(|x| cfg.verify_null_rate = Some(x)).is_ok())
                    }
                }
                _ => complain(key, "unknown key".into()),
            }
        }

        cfg.validate(&mut errors);
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    /// Cross-field checks, mirroring every downstream module's
    /// preconditions so a bad run fails before any work starts.
    fn validate(&self, errors: &mut Vec<String>) {
        let mut check = |ok: bool, key: &str, what: &str| {
            if !ok {
                errors.push(format!("- {key}: {what}"));
            }
        };
        check(self.classes >= 2, "dataset.classes", "need at least 2 classes");
        check(self.per_class >= 1, "dataset.per_class", "need at least 1 sample per class");
        check(
            self.side >= 16 && self.side % 8 == 0,
            "dataset.side",
            "side must be a multiple of 8 and at least 16",
        );
        check(self.test_per_class >= 1, "dataset.test_per_class", "need at least 1 test sample per class");
        if self.source == DataSource::Import {
            check(self.import_path.is_some(), "dataset.import_path", "required when dataset.source = import");
        }
        check(self.rate > 0.0 && self.rate < 1.0, "forge.rate", "must lie strictly between 0 and 1");
        check((1..=100).contains(&self.quality), "forge.quality", "must lie in 1..=100");
        check(self.target < self.classes, "forge.target", "target class out of range");
        check(self.verification_count >= 1, "forge.verification_count", "need at least 1 verification sample");
        check(
            (0.0..=1.0).contains(&self.attack_fraction),
            "attack.fraction",
            "must lie in [0, 1]",
        );
        check(!self.registry_kinds.is_empty(), "attack.registry", "must name at least one attack");
        check(self.epochs >= 1, "train.epochs", "need at least 1 epoch");
        check(self.batch_primary >= 1, "train.batch_primary", "must be at least 1");
        check(self.batch_watermark >= 1, "train.batch_watermark", "must be at least 1");
        check(self.batch_attacked >= 1, "train.batch_attacked", "must be at least 1");
        check(self.lr > 0.0 && self.lr.is_finite(), "train.lr", "must be positive");
        check(
            self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0,
            "train.lr_decay_factor",
            "must lie in (0, 1]",
        );
        check(self.lr_decay_every >= 1, "train.lr_decay_every", "must be at least 1");
        check(self.alpha >= 0.0, "train.alpha", "must be non-negative");
        check(self.beta >= 0.0, "train.beta", "must be non-negative");
        check(self.gamma >= 0.0, "train.gamma", "must be non-negative");
        check(self.margin > 0.0, "train.margin", "must be positive");
        check(
            self.verify_alpha > 0.0 && self.verify_alpha < 1.0,
            "verify.alpha",
            "must lie strictly between 0 and 1",
        );
        if let Some(rate) = self.verify_null_rate {
            check(rate > 0.0 && rate < 1.0, "verify.null_rate", "must lie strictly between 0 and 1");
        }
    }

    /// The full effective configuration in the accepted syntax, one key per
    /// line, sorted — identical configs render identically.
    pub fn canonical(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("out_dir", self.out_dir.display().to_string());
        map.insert("seed", self.seed.to_string());
        map.insert(
            "dataset.source",
            match self.source {
                DataSource::Synth => "synth".into(),
                DataSource::Import => "import".into(),
            },
        );
        map.insert(
            "dataset.import_path",
            self.import_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        map.insert("dataset.classes", self.classes.to_string());
        map.insert("dataset.per_class", self.per_class.to_string());
        map.insert("dataset.side", self.side.to_string());
        map.insert("dataset.test_per_class", self.test_per_class.to_string());
        map.insert("forge.rate", self.rate.to_string());
        map.insert("forge.quality", self.quality.to_string());
        map.insert("forge.target", self.target.to_string());
        map.insert("forge.verification_count", self.verification_count.to_string());
        map.insert("attack.fraction", self.attack_fraction.to_string());
        map.insert(
            "attack.registry",
            self.registry_kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(","),
        );
        map.insert("attack.jpeg2000_cmd", self.jpeg2000_cmd.clone().unwrap_or_default());
        map.insert("attack.webp_cmd", self.webp_cmd.clone().unwrap_or_default());
        map.insert("train.epochs", self.epochs.to_string());
        map.insert("train.batch_primary", self.batch_primary.to_string());
        map.insert("train.batch_watermark", self.batch_watermark.to_string());
        map.insert("train.batch_attacked", self.batch_attacked.to_string());
        map.insert("train.lr", self.lr.to_string());
        map.insert("train.lr_decay_factor", self.lr_decay_factor.to_string());
        map.insert("train.lr_decay_every", self.lr_decay_every.to_string());
        map.insert("train.alpha", self.alpha.to_string());
        map.insert("train.beta", self.beta.to_string());
        map.insert("train.gamma", self.gamma.to_string());
        map.insert("train.margin", self.margin.to_string());
        map.insert("train.sim_scope", self.sim_scope.name().to_string());
        map.insert("verify.alpha", self.verify_alpha.to_string());
        map.insert(
            "verify.null_rate",
            self.verify_null_rate.map(|r| r.to_string()).unwrap_or_default(),
        );
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Hex digest of the canonical rendering; run directories are named by
    /// a prefix of this, so identical configs share a directory and any
    /// change gets a fresh one.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_primary: self.batch_primary,
            batch_watermark: self.batch_watermark,
            batch_attacked: self.batch_attacked,
            lr: self.lr,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_every: self.lr_decay_every,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            margin: self.margin,
            attack_fraction: self.attack_fraction,
            sim_scope: self.sim_scope,
            watermark_rate: self.rate,
            quality_factor: u32::from(self.quality),
            seed: self.seed,
        }
    }

    pub fn forge_spec(&self) -> Result<ForgeSpec, CodecError> {
        Ok(ForgeSpec {
            rate: self.rate,
            factor: QualityFactor::new(self.quality)?,
            target: self.target,
            verification_count: self.verification_count,
        })
    }

    /// Build the training/evasion registry. External kinds whose codec
    /// command is not configured are dropped with a recorded warning, so a
    /// default run degrades to the in-house attacks instead of failing.
    pub fn registry(&self) -> Result<AttackRegistry, crate::attack::AttackError> {
        let mut specs = Vec::new();
        for &kind in &self.registry_kinds {
            let spec = AttackSpec::default_for(kind);
            if !kind.is_external() {
                specs.push(spec);
                continue;
            }
            let cmd = match kind {
                AttackKind::Jpeg2000 => self.jpeg2000_cmd.as_deref(),
                AttackKind::Webp => self.webp_cmd.as_deref(),
                _ => unreachable!("only codec attacks are external"),
            };
            match cmd.map(parse_hook) {
                Some(Ok(hook)) => specs.push(spec.with_hook(hook)),
                Some(Err(msg)) => {
                    log::warn!("dropping `{}` from the registry: {msg}", kind.name());
                }
                None => {
                    log::warn!(
                        "dropping `{}` from the registry: no codec command configured",
                        kind.name()
                    );
                }
            }
        }
        AttackRegistry::new(specs)
    }

    pub fn threshold_spec(&self, queries: usize) -> ThresholdSpec {
        ThresholdSpec {
            queries,
            num_classes: self.classes,
            alpha: self.verify_alpha,
            null_rate: self.verify_null_rate,
        }
    }
}

fn parse_registry_kinds(v: &str) -> Result<Vec<AttackKind>, String> {
    let mut kinds = Vec::new();
    for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind = AttackKind::parse(name).map_err(|e| e.to_string())?;
        if kinds.contains(&kind) {
            return Err(format!("attack `{name}` listed twice"));
        }
        kinds.push(kind);
    }
    if kinds.is_empty() {
        return Err("must name at least one attack".into());
    }
    Ok(kinds)
}

/// Split a codec command line on whitespace: first token is the program,
/// the rest are arguments. No quoting — wrap complicated pipelines in a
/// script instead.
fn parse_hook(cmd: &str) -> Result<CodecHook, String> {
    let mut parts = cmd.split_whitespace();
    let command = parts.next().ok_or("empty command")?.to_string();
    Ok(CodecHook { command, args: parts.map(String::from).collect() })
}
