//! Post-hoc experiments against a trained checkpoint: weight pruning,
//! weight quantization, last-layer finetuning, surrogate extraction by
//! distillation, preprocessing-evasion sweeps, and false-trigger audits.
//!
//! Every operation is pure with respect to its inputs — model
//! transformations return a fresh checkpoint whose fingerprint records the
//! transformation, and the optimizer state (which belongs to the original
//! training run) is dropped.

use serde::Serialize;

use crate::attack::{apply_attack, AttackError, AttackKind, AttackRegistry, AttackSpec};
use crate::codec::{compress_image, CodecError, QualityFactor};
use crate::data::{DataError, Dataset, LabeledSample};
use crate::metrics::{self, MetricsError};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::loss;
use crate::nn::model::{argmax, image_to_input, Net, NetShape, NetTensors, ShapeError};
use crate::nn::optim::AdamState;
use crate::nn::train::TrainError;
use crate::oracle::{OracleError, PredictionOracle};
use crate::rng::SeededRng;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("prune rate must lie in [0, 1], got {0}")]
    BadRate(f64),
    #[error("quantization bit width must lie in 1..=16, got {0}")]
    BadBits(u32),
    #[error("{role} set must not be empty")]
    EmptySet { role: &'static str },
    #[error("dataset has {found} classes but the model expects {expected}")]
    ClassMismatch { found: usize, expected: usize },
    #[error("query images must be square")]
    NonSquare,
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Indices of the weight tensors within [`crate::nn::model::TENSOR_NAMES`];
/// the interleaved odd indices are the bias tensors.
const WEIGHT_TENSORS: [usize; 4] = [0, 2, 4, 6];

fn derived(base: &Checkpoint, suffix: &str, params: NetTensors<f32>) -> Checkpoint {
    Checkpoint {
        arch: base.arch.clone(),
        side: base.side,
        num_classes: base.num_classes,
        config_fingerprint: format!("{}+{}", base.config_fingerprint, suffix),
        rng_state: base.rng_state,
        params,
        adam: None,
    }
}

/// Zero the globally smallest-magnitude fraction of the weights (biases are
/// exempt). Exactly `round(rate · weight_count)` entries are zeroed; ties on
/// magnitude break by tensor order, then element index, so the count is
/// deterministic.
pub fn prune(checkpoint: &Checkpoint, rate: f64) -> Result<Checkpoint, LabError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(LabError::BadRate(rate));
    }
    let mut params = checkpoint.params.clone();
    let mut order: Vec<(f32, usize, usize)> = Vec::new();
    for &t in &WEIGHT_TENSORS {
        for (j, &w) in params.fields()[t].iter().enumerate() {
            order.push((w.abs(), t, j));
        }
    }
    let count = (rate * order.len() as f64).round() as usize;
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, t, j) in &order[..count] {
        params.fields_mut()[t][j] = 0.0;
    }
    Ok(derived(checkpoint, &format!("prune({rate})"), params))
}

/// Requantize every parameter tensor onto a symmetric uniform grid of
/// `2^bits` levels spanning `[-max|w|, +max|w|]`, then dequantize back to
/// floats. The grid endpoints are exact, so the largest-magnitude entry of
/// each tensor round-trips unchanged.
pub fn quantize_weights(checkpoint: &Checkpoint, bits: u32) -> Result<Checkpoint, LabError> {
    if !(1..=16).contains(&bits) {
        return Err(LabError::BadBits(bits));
    }
    let mut params = checkpoint.params.clone();
    let levels = f64::from(1u32 << bits);
    for tensor in params.fields_mut() {
        let peak = tensor.iter().fold(0.0f32, |a, &w| a.max(w.abs()));
        if peak == 0.0 {
            continue;
        }
        let peak = f64::from(peak);
        let step = 2.0 * peak / (levels - 1.0);
        for w in tensor.iter_mut() {
            let k = ((f64::from(*w) + peak) / step).round().clamp(0.0, levels - 1.0);
            *w = (k * step - peak) as f32;
        }
    }
    Ok(derived(checkpoint, &format!("quantize({bits}b)"), params))
}

/// Last-layer finetuning schedule. The learning rate is constant — an
/// adversary erasing a watermark has no reason to decay it.
#[derive(Debug, Clone, Serialize)]
pub struct FinetuneSpec {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FinetuneSpec {
    fn default() -> Self {
        Self { epochs: 100, batch: 64, lr: 1e-3, seed: 1 }
    }
}

/// Retrain only the final dense layer on `data` with Adam; every other
/// tensor stays byte-identical. The frozen trunk's features are computed
/// once up front, which is mathematically the same as running the full
/// network with frozen layers.
pub fn finetune_last_layer(
    checkpoint: &Checkpoint,
    data: &Dataset,
    spec: &FinetuneSpec,
) -> Result<Checkpoint, LabError> {
    if data.is_empty() {
        return Err(LabError::EmptySet { role: "finetune" });
    }
    if data.num_classes() != checkpoint.num_classes {
        return Err(LabError::ClassMismatch {
            found: data.num_classes(),
            expected: checkpoint.num_classes,
        });
    }
    if spec.batch == 0 || !(spec.lr > 0.0 && spec.lr.is_finite()) {
        return Err(LabError::BadSpec("batch must be ≥ 1 and lr positive".into()));
    }
    let net = checkpoint.net()?;
    let c = net.shape.num_classes;
    let rows: Vec<(Vec<f32>, usize)> = data
        .samples()
        .iter()
        .map(|s| {
            let image = if s.image.height() == checkpoint.side && s.image.width() == checkpoint.side {
                s.image.clone()
            } else {
                s.image.resize_bilinear(checkpoint.side, checkpoint.side)
            };
            (net.forward(&image_to_input::<f32>(&image)).feat, s.label)
        })
        .collect();

    let mut params = checkpoint.params.clone();
    let mut adam = AdamState::new(&net.shape);
    let mut rng = SeededRng::new(spec.seed).split_str("finetune");
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for epoch in 0..spec.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(spec.batch) {
            let mut logits = Vec::with_capacity(chunk.len() * c);
            let labels: Vec<usize> = chunk.iter().map(|&i| rows[i].1).collect();
            for &i in chunk {
                let feat = &rows[i].0;
                for class in 0..c {
                    let mut acc = params.fc2_b[class];
                    for (h, &f) in feat.iter().enumerate() {
                        acc += f * params.fc2_w[h * c + class];
                    }
                    logits.push(acc);
                }
            }
            let (step_loss, dlogits) = loss::cross_entropy(&logits, c, &labels);
            if !step_loss.is_finite() {
                return Err(TrainError::Diverged { epoch, loss: step_loss }.into());
            }
            let mut grads = NetTensors::zeros(&net.shape);
            for (row, &i) in chunk.iter().enumerate() {
                let feat = &rows[i].0;
                let dl = &dlogits[row * c..(row + 1) * c];
                for class in 0..c {
                    grads.fc2_b[class] += dl[class];
                }
                for (h, &f) in feat.iter().enumerate() {
                    for class in 0..c {
                        grads.fc2_w[h * c + class] += f * dl[class];
                    }
                }
            }
            adam.apply(&mut params, &grads, spec.lr)?;
            epoch_loss += step_loss;
            steps += 1;
        }
        log::debug!("finetune epoch {epoch}: loss {:.4}", epoch_loss / steps as f64);
    }
    Ok(derived(
        checkpoint,
        &format!("finetune(epochs={},seed={})", spec.epochs, spec.seed),
        params,
    ))
}

/// What the surrogate learns from the victim's answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DistillMode {
    /// KL divergence to the victim's class probabilities.
    Soft,
    /// Cross-entropy to the victim's top-1 label.
    Hard,
}

impl DistillMode {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "soft" => Ok(DistillMode::Soft),
            "hard" => Ok(DistillMode::Hard),
            other => Err(format!("unknown distillation mode `{other}` (expected `soft` or `hard`)")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DistillMode::Soft => "soft",
            DistillMode::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DistillSpec {
    pub mode: DistillMode,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
}

impl DistillSpec {
    pub fn with_mode(mode: DistillMode) -> Self {
        Self {
            mode,
            epochs: 40,
            batch: 64,
            lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_every: 15,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DistillEpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Fraction of query samples where the surrogate matches the victim's
    /// top-1 answer.
    pub victim_agreement: f64,
}

pub struct DistillOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<DistillEpochLog>,
}

/// Train a fresh surrogate of the same architecture purely from the
/// victim's answers on `queries` (whose labels are ignored). The victim is
/// consulted exactly once per query; the answers are cached for all epochs.
pub fn distill_extract(
    victim: &dyn PredictionOracle,
    queries: &Dataset,
    spec: &DistillSpec,
) -> Result<DistillOutput, LabError> {
    if queries.is_empty() {
        return Err(LabError::EmptySet { role: "query" });
    }
    let side = queries.side().ok_or(LabError::NonSquare)?;
    let num_classes = victim.num_classes();
    let shape = NetShape::new(side, num_classes)?;
    if spec.epochs == 0 || spec.batch == 0 {
        return Err(LabError::BadSpec("epochs and batch must be ≥ 1".into()));
    }
    if !(spec.lr > 0.0 && spec.lr.is_finite()) || spec.lr_decay_every == 0 {
        return Err(LabError::BadSpec("lr must be positive and decay interval ≥ 1".into()));
    }

    // one round of queries against the victim, cached for every epoch
    let mut teacher_probs: Vec<f32> = Vec::new();
    let mut teacher_labels: Vec<usize> = Vec::with_capacity(queries.len());
    for s in queries.samples() {
        match spec.mode {
            DistillMode::Soft => {
                let probs = victim.predict_soft(&s.image)?;
                if probs.len() != num_classes {
                    return Err(LabError::BadSpec(format!(
                        "victim returned {} probabilities for {} classes",
                        probs.len(),
                        num_classes
                    )));
                }
                teacher_labels.push(argmax(&probs));
                teacher_probs.extend_from_slice(&probs);
            }
            DistillMode::Hard => {
                teacher_labels.push(victim.predict(&s.image)?);
            }
        }
    }
    let inputs: Vec<Vec<f32>> = queries
        .samples()
        .iter()
        .map(|s| image_to_input::<f32>(&s.image))
        .collect();

    let root = SeededRng::new(spec.seed).split_str("distill").split_str(spec.mode.name());
    let mut init_rng = root.split_str("init");
    let mut net = Net::<f32>::init(shape, &mut init_rng);
    let mut adam = AdamState::new(&shape);
    let c = num_classes;

    let mut log = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        let lr = spec.lr * spec.lr_decay_factor.powi((epoch / spec.lr_decay_every) as i32);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        root.split_str("epoch").split(epoch as u64).shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(spec.batch) {
            let traces: Vec<_> = chunk.iter().map(|&i| net.forward(&inputs[i])).collect();
            let mut logits = Vec::with_capacity(chunk.len() * c);
            for trace in &traces {
                logits.extend_from_slice(&trace.logits);
            }
            let (step_loss, dlogits) = match spec.mode {
                DistillMode::Soft => {
                    let mut teacher = Vec::with_capacity(chunk.len() * c);
                    for &i in chunk {
                        teacher.extend_from_slice(&teacher_probs[i * c..(i + 1) * c]);
                    }
                    loss::kl_to_teacher(&logits, c, &teacher)
                }
                DistillMode::Hard => {
                    let labels: Vec<usize> = chunk.iter().map(|&i| teacher_labels[i]).collect();
                    loss::cross_entropy(&logits, c, &labels)
                }
            };
            if !step_loss.is_finite() {
                return Err(TrainError::Diverged { epoch, loss: step_loss }.into());
            }
            let mut grads = NetTensors::zeros(&shape);
            for (row, trace) in traces.iter().enumerate() {
                net.backward(trace, &dlogits[row * c..(row + 1) * c], None, &mut grads);
            }
            adam.apply(&mut net.params, &grads, lr)?;
            epoch_loss += step_loss;
            steps += 1;
        }

        let agree = inputs
            .iter()
            .zip(&teacher_labels)
            .filter(|(input, &label)| net.predict_input(input) == label)
            .count() as f64
            / inputs.len() as f64;
        let entry = DistillEpochLog {
            epoch,
            lr,
            loss: epoch_loss / steps as f64,
            victim_agreement: agree,
        };
        log::info!(
            "distill[{}] epoch {:>3}  lr {:.1e}  loss {:.4}  agreement {:.4}",
            spec.mode.name(),
            entry.epoch,
            entry.lr,
            entry.loss,
            entry.victim_agreement,
        );
        log.push(entry);
    }

    let fingerprint = {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(
            format!(
                "distill mode={} epochs={} batch={} lr={} decay={}/{} seed={}\n",
                spec.mode.name(),
                spec.epochs,
                spec.batch,
                spec.lr,
                spec.lr_decay_factor,
                spec.lr_decay_every,
                spec.seed,
            )
            .as_bytes(),
        );
        hasher.update(queries.fingerprint().as_bytes());
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect::<String>()
    };
    let checkpoint = Checkpoint {
        arch: shape.arch_id(),
        side,
        num_classes,
        config_fingerprint: fingerprint,
        rng_state: root.state(),
        params: net.params,
        adam: Some(adam),
    };
    Ok(DistillOutput { checkpoint, log })
}

/// One row of an evasion sweep: the model's scores before and after the
/// named preprocessing is applied to every query image.
#[derive(Debug, Clone, Serialize)]
pub struct AttackOutcome {
    pub attack: String,
    pub param: String,
    /// `None` when no clean test set was supplied.
    pub acc_before: Option<f64>,
    pub acc_after: Option<f64>,
    pub wsr_before: f64,
    /// `None` when the attack was skipped (external codec unavailable).
    pub wsr_after: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// Quality factors for the plain recompression rows.
    pub jpeg_factors: Vec<u8>,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { jpeg_factors: vec![90], seed: 1 }
    }
}

fn attack_dataset(set: &Dataset, spec: &AttackSpec, rng: &mut SeededRng) -> Result<Dataset, LabError> {
    let samples = set
        .samples()
        .iter()
        .map(|s| {
            apply_attack(spec, &s.image, rng).map(|image| LabeledSample { image, label: s.label })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(samples, set.num_classes(), set.provenance())?)
}

fn jpeg_dataset(set: &Dataset, factor: QualityFactor) -> Result<Dataset, LabError> {
    let samples = set
        .samples()
        .iter()
        .map(|s| {
            compress_image(&s.image, factor).map(|image| LabeledSample { image, label: s.label })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(samples, set.num_classes(), set.provenance())?)
}

/// Measure how each registry attack — plus plain recompression, which an
/// evader would reach for first — degrades the watermark response on the
/// verification set. When a clean test set is supplied, the same attacks are
/// scored on classification accuracy too.
pub fn evasion_sweep(
    checkpoint: &Checkpoint,
    verification: &Dataset,
    registry: &AttackRegistry,
    test: Option<&Dataset>,
    spec: &SweepSpec,
) -> Result<Vec<AttackOutcome>, LabError> {
    let oracle = checkpoint.oracle()?;
    let target = verification
        .samples()
        .first()
        .ok_or(LabError::EmptySet { role: "verification" })?
        .label;
    let wsr_before = metrics::wsr(&oracle, verification, target)?;
    let acc_before = test.map(|t| metrics::accuracy(&oracle, t)).transpose()?;
    let root = SeededRng::new(spec.seed).split_str("evasion-sweep");

    let mut rows = vec![AttackOutcome {
        attack: "identity".into(),
        param: "-".into(),
        acc_before,
        acc_after: acc_before,
        wsr_before,
        wsr_after: Some(wsr_before),
    }];
    for attack in registry.specs() {
        let name = attack.kind.name();
        if attack.kind.is_external() && attack.hook.is_none() {
            log::warn!("evasion sweep: skipping `{name}` (no codec hook configured)");
            rows.push(AttackOutcome {
                attack: name.into(),
                param: attack.magnitude.to_string(),
                acc_before,
                acc_after: None,
                wsr_before,
                wsr_after: None,
            });
            continue;
        }
        let mut rng = root.split_str(name);
        let attacked = attack_dataset(verification, attack, &mut rng)?;
        let wsr_after = metrics::wsr(&oracle, &attacked, target)?;
        let acc_after = match test {
            Some(t) => Some(metrics::accuracy(&oracle, &attack_dataset(t, attack, &mut rng)?)?),
            None => None,
        };
        rows.push(AttackOutcome {
            attack: name.into(),
            param: attack.magnitude.to_string(),
            acc_before,
            acc_after,
            wsr_before,
            wsr_after: Some(wsr_after),
        });
    }
    for &qf in &spec.jpeg_factors {
        let factor = QualityFactor::new(qf)?;
        let recompressed = jpeg_dataset(verification, factor)?;
        let wsr_after = metrics::wsr(&oracle, &recompressed, target)?;
        let acc_after = match test {
            Some(t) => Some(metrics::accuracy(&oracle, &jpeg_dataset(t, factor)?)?),
            None => None,
        };
        rows.push(AttackOutcome {
            attack: "jpeg".into(),
            param: qf.to_string(),
            acc_before,
            acc_after,
            wsr_before,
            wsr_after: Some(wsr_after),
        });
    }
    Ok(rows)
}

/// WSR of one candidate forgery recipe against the target class.
#[derive(Debug, Clone, Serialize)]
pub struct ForgeryOutcome {
    pub forgery: String,
    pub wsr: f64,
    pub samples: usize,
}

/// The per-pixel preprocessing ops a disputant might try in place of the
/// real recipe. Geometric ops are excluded: they produce images that are
/// visibly not "the same picture", so no dispute would rest on them.
const FALSE_TRIGGER_KINDS: [AttackKind; 4] = [
    AttackKind::GaussianNoise,
    AttackKind::GaussianBlur,
    AttackKind::ImageQuantize,
    AttackKind::ColorQuantize,
];

/// Forge candidate trigger sets from a clean pool via every plausible
/// preprocessing op — plus the genuine recipe at `factor` — and measure how
/// strongly each one fires the target class. A sound watermark fires on the
/// genuine recipe and stays quiet on everything else.
pub fn false_trigger_audit(
    checkpoint: &Checkpoint,
    clean_pool: &Dataset,
    target: usize,
    factor: QualityFactor,
    registry: &AttackRegistry,
    seed: u64,
) -> Result<Vec<ForgeryOutcome>, LabError> {
    if clean_pool.is_empty() {
        return Err(LabError::EmptySet { role: "clean pool" });
    }
    let oracle = checkpoint.oracle()?;
    let root = SeededRng::new(seed).split_str("false-trigger");
    let row = |name: &str, set: &Dataset| -> Result<ForgeryOutcome, LabError> {
        Ok(ForgeryOutcome {
            forgery: name.into(),
            wsr: metrics::wsr(&oracle, set, target)?,
            samples: set.len(),
        })
    };

    let mut rows = vec![row("clean", clean_pool)?];
    for kind in FALSE_TRIGGER_KINDS {
        let spec = registry
            .specs()
            .iter()
            .find(|s| s.kind == kind)
            .cloned()
            .unwrap_or_else(|| AttackSpec::default_for(kind));
        let mut rng = root.split_str(kind.name());
        let forged = attack_dataset(clean_pool, &spec, &mut rng)?;
        rows.push(row(kind.name(), &forged)?);
    }
    for spec in registry.specs().iter().filter(|s| s.kind.is_external() && s.hook.is_some()) {
        let mut rng = root.split_str(spec.kind.name());
        let forged = attack_dataset(clean_pool, spec, &mut rng)?;
        rows.push(row(spec.kind.name(), &forged)?);
    }
    rows.push(row("jpeg", &jpeg_dataset(clean_pool, factor)?)?);
    Ok(rows)
}
