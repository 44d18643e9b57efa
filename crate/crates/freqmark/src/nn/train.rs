//! The four-term training loop.
//!
//! Each optimizer step draws three batches — clean primary samples, trigger
//! (watermark) samples, and the epoch's attacked samples — and minimizes
//!
//! `L = L_primary + α·L_watermark + β·L_attacked + γ·L_similarity`
//!
//! where the first three are softmax cross-entropy on their batch and the
//! similarity term is a margin contrastive loss over hidden features of
//! randomly matched pairs. The attacked set is rebuilt from a fresh seed
//! every epoch so augmentation never repeats.

use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::loss;
use super::model::{image_to_input, Net, NetShape, NetTensors, Scalar, ShapeError, HIDDEN};
use super::optim::AdamState;
use crate::attack::{build_attacked_epoch_set, AttackError, AttackRegistry};
use crate::data::Dataset;
use crate::rng::SeededRng;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("gradient tensor `{tensor}` contains non-finite values")]
    NonFiniteGradient { tensor: &'static str },
    #[error("{role} set must not be empty")]
    EmptySet { role: &'static str },
    #[error("{role} set disagrees with the primary set on {what}")]
    SetMismatch { role: &'static str, what: &'static str },
    #[error("dataset images must be square")]
    NonSquare,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

/// Which samples participate in the similarity term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SimScope {
    /// Every sample in the step's combined batch.
    All,
    /// Only watermark samples and samples labeled with the target class.
    WatermarkAndTarget,
}

impl SimScope {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(SimScope::All),
            "watermark_and_target" => Ok(SimScope::WatermarkAndTarget),
            other => Err(format!("unknown sim scope `{other}` (expected `all` or `watermark_and_target`)")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimScope::All => "all",
            SimScope::WatermarkAndTarget => "watermark_and_target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
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
    /// Fraction of each set re-attacked every epoch.
    pub attack_fraction: f64,
    pub sim_scope: SimScope,
    /// Recorded forge provenance: fraction of the pool turned into triggers.
    pub watermark_rate: f64,
    /// Recorded forge provenance: compression quality used for triggers.
    pub quality_factor: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_primary: 64,
            batch_watermark: 8,
            batch_attacked: 32,
            lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_every: 15,
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
            margin: 1.0,
            attack_fraction: 0.5,
            sim_scope: SimScope::All,
            watermark_rate: 0.1,
            quality_factor: 90,
            seed: 2,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::BadConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_primary == 0 || self.batch_watermark == 0 || self.batch_attacked == 0 {
            return bad("batch sizes must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr decay factor must lie in (0, 1]");
        }
        if self.lr_decay_every == 0 {
            return bad("lr decay interval must be at least 1");
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if self.margin <= 0.0 {
            return bad("margin must be positive");
        }
        if !(self.watermark_rate > 0.0 && self.watermark_rate < 1.0) {
            return bad("watermark rate must lie strictly between 0 and 1");
        }
        if !(1..=100).contains(&self.quality_factor) {
            return bad("quality factor must lie in 1..=100");
        }
        Ok(())
    }

    /// Stable key=value rendering of every field, for fingerprinting and
    /// run manifests.
    pub fn canonical_string(&self) -> String {
        format!(
            "alpha = {}\nattack_fraction = {}\nbatch_attacked = {}\nbatch_primary = {}\nbatch_watermark = {}\nbeta = {}\nepochs = {}\ngamma = {}\nlr = {}\nlr_decay_every = {}\nlr_decay_factor = {}\nmargin = {}\nquality_factor = {}\nseed = {}\nsim_scope = {}\nwatermark_rate = {}\n",
            self.alpha,
            self.attack_fraction,
            self.batch_attacked,
            self.batch_primary,
            self.batch_watermark,
            self.beta,
            self.epochs,
            self.gamma,
            self.lr,
            self.lr_decay_every,
            self.lr_decay_factor,
            self.margin,
            self.quality_factor,
            self.seed,
            self.sim_scope.name(),
            self.watermark_rate,
        )
    }
}

/// The splits a run trains and evaluates on.
///
/// `watermark` and `verification` may be empty; that trains a clean control
/// model with the identical schedule, attacked-set augmentation, and RNG tree.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub primary: &'a Dataset,
    pub watermark: &'a Dataset,
    /// Trigger holdout; never trained on, measured every epoch.
    pub verification: &'a Dataset,
    /// Clean holdout for accuracy, never trained on.
    pub test: &'a Dataset,
}

/// Per-epoch record: raw loss terms (unweighted) plus evaluation metrics.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_primary: f64,
    pub loss_watermark: f64,
    pub loss_attacked: f64,
    pub loss_similarity: f64,
    pub test_accuracy: f64,
    /// Absent on clean control runs (no verification set to measure).
    pub wsr: Option<f64>,
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Loss term weights in one place, shared by training and gradient checks.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub margin: f64,
}

/// Raw (unweighted) loss terms; `total` applies the weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub total: f64,
    pub primary: f64,
    pub watermark: f64,
    pub attacked: f64,
    pub similarity: f64,
}

type BatchRef<'a, T> = &'a [(&'a [T], usize)];

/// Combined loss and parameter gradient for one optimizer step.
///
/// `sim_pairs` index into the concatenation `primary ++ watermark ++
/// attacked`. Pure in all inputs, so finite differences over the parameters
/// validate the returned gradient.
pub fn total_loss<T: Scalar>(
    net: &Net<T>,
    primary: BatchRef<'_, T>,
    watermark: BatchRef<'_, T>,
    attacked: BatchRef<'_, T>,
    sim_pairs: &[(usize, usize)],
    weights: &LossWeights,
) -> (LossTerms, NetTensors<T>) {
    let groups: [(BatchRef<'_, T>, f64); 3] =
        [(primary, 1.0), (watermark, weights.alpha), (attacked, weights.beta)];
    let all: Vec<&(&[T], usize)> = groups.iter().flat_map(|(g, _)| g.iter()).collect();
    let traces: Vec<_> = all.iter().map(|(input, _)| net.forward(input)).collect();
    let labels: Vec<usize> = all.iter().map(|&&(_, label)| label).collect();
    let c = net.shape.num_classes;

    let mut terms = LossTerms::default();
    let mut dlogits: Vec<Vec<T>> = vec![Vec::new(); all.len()];
    let mut offset = 0usize;
    let mut term_values = [0.0f64; 3];
    for (gi, (group, weight)) in groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let mut logits = Vec::with_capacity(group.len() * c);
        for trace in &traces[offset..offset + group.len()] {
            logits.extend_from_slice(&trace.logits);
        }
        let (loss, grad) = loss::cross_entropy(&logits, c, &labels[offset..offset + group.len()]);
        term_values[gi] = loss;
        let w = super::model::t::<T>(*weight);
        for (i, row) in grad.chunks_exact(c).enumerate() {
            dlogits[offset + i] = row.iter().map(|&g| g * w).collect();
        }
        offset += group.len();
    }
    terms.primary = term_values[0];
    terms.watermark = term_values[1];
    terms.attacked = term_values[2];

    // similarity over hidden features
    let mut features = Vec::with_capacity(all.len() * HIDDEN);
    for trace in &traces {
        features.extend_from_slice(&trace.feat);
    }
    let (sim, dfeat) = loss::contrastive(&features, HIDDEN, &labels, sim_pairs, weights.margin);
    terms.similarity = sim;
    terms.total = terms.primary
        + weights.alpha * terms.watermark
        + weights.beta * terms.attacked
        + weights.gamma * terms.similarity;

    let gamma = super::model::t::<T>(weights.gamma);
    let mut grads = NetTensors::zeros(&net.shape);
    let zero_row = vec![T::zero(); c];
    for (i, trace) in traces.iter().enumerate() {
        let dl = if dlogits[i].is_empty() { &zero_row } else { &dlogits[i] };
        let row = &dfeat[i * HIDDEN..(i + 1) * HIDDEN];
        let has_sim = row.iter().any(|&v| v != T::zero());
        let scaled: Vec<T>;
        let extra = if has_sim && weights.gamma != 0.0 {
            scaled = row.iter().map(|&v| v * gamma).collect();
            Some(scaled.as_slice())
        } else {
            None
        };
        net.backward(trace, dl, extra, &mut grads);
    }
    (terms, grads)
}

/// Round-robin index stream over a set, reshuffled on every wrap.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl Cycler {
    fn new(n: usize, mut rng: SeededRng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Self { order, pos: 0, rng }
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            if self.pos == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn to_inputs(set: &Dataset) -> Vec<(Vec<f32>, usize)> {
    set.samples()
        .iter()
        .map(|s| (image_to_input::<f32>(&s.image), s.label))
        .collect()
}

fn eval_fraction(net: &Net<f32>, inputs: &[(Vec<f32>, usize)], want: impl Fn(usize, usize) -> bool) -> f64 {
    let hits = inputs
        .iter()
        .filter(|(input, label)| want(net.predict_input(input), *label))
        .count();
    hits as f64 / inputs.len() as f64
}

/// Hidden-layer feature vector (width 64) and label for every sample, in
/// dataset order. Feeds similarity diagnostics and external projections.
pub fn export_features(net: &Net<f32>, set: &Dataset) -> Vec<(usize, Vec<f32>)> {
    set.samples()
        .iter()
        .map(|s| {
            let input = image_to_input::<f32>(&s.image);
            (s.label, net.forward(&input).feat)
        })
        .collect()
}

/// Hash of the effective configuration and input data, stored in the
/// checkpoint so a model can be traced back to the run that produced it.
pub fn run_fingerprint(config: &TrainConfig, data: &TrainData<'_>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(config.canonical_string().as_bytes());
    for set in [data.primary, data.watermark, data.verification, data.test] {
        hasher.update(set.fingerprint().as_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Train a classifier from scratch. Deterministic: the same configuration,
/// data, and registry produce a byte-identical checkpoint.
pub fn train(
    config: &TrainConfig,
    data: &TrainData<'_>,
    registry: &AttackRegistry,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    for (role, set) in [("primary", data.primary), ("test", data.test)] {
        if set.is_empty() {
            return Err(TrainError::EmptySet { role });
        }
    }
    let side = data.primary.side().ok_or(TrainError::NonSquare)?;
    let num_classes = data.primary.num_classes();
    for (role, set) in [
        ("watermark", data.watermark),
        ("verification", data.verification),
        ("test", data.test),
    ] {
        if set.is_empty() {
            continue;
        }
        if set.side() != Some(side) {
            return Err(TrainError::SetMismatch { role, what: "image side" });
        }
        if set.num_classes() != num_classes {
            return Err(TrainError::SetMismatch { role, what: "class count" });
        }
    }
    let shape = NetShape::new(side, num_classes)?;
    let target = data.watermark.samples().first().map(|s| s.label);
    if target.is_none() {
        log::info!("no watermark set supplied; training a clean control model");
    }

    let root = SeededRng::new(config.seed);
    let mut init_rng = root.split_str("init");
    let mut net = Net::<f32>::init(shape, &mut init_rng);
    let mut adam = AdamState::new(&shape);
    let weights = LossWeights {
        alpha: config.alpha,
        beta: config.beta,
        gamma: config.gamma,
        margin: config.margin,
    };

    let primary_inputs = to_inputs(data.primary);
    let watermark_inputs = to_inputs(data.watermark);
    let verification_inputs = to_inputs(data.verification);
    let test_inputs = to_inputs(data.test);

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr * config.lr_decay_factor.powi((epoch / config.lr_decay_every) as i32);
        let er = root.split_str("epoch").split(epoch as u64);

        let attacked_set = build_attacked_epoch_set(
            data.primary,
            data.watermark,
            config.attack_fraction,
            registry,
            er.split_str("attack-seed").seed(),
        )?;
        let attacked_inputs = to_inputs(&attacked_set);

        let mut order: Vec<usize> = (0..primary_inputs.len()).collect();
        er.split_str("shuffle").shuffle(&mut order);
        let mut wm_cycle = (!watermark_inputs.is_empty())
            .then(|| Cycler::new(watermark_inputs.len(), er.split_str("wm-cycle")));
        let mut at_cycle = (!attacked_inputs.is_empty())
            .then(|| Cycler::new(attacked_inputs.len(), er.split_str("attack-cycle")));
        let mut pair_rng = er.split_str("pairs");

        let steps = order.len().div_ceil(config.batch_primary);
        let mut sums = LossTerms::default();
        for step in 0..steps {
            let lo = step * config.batch_primary;
            let hi = (lo + config.batch_primary).min(order.len());
            let p_batch: Vec<(&[f32], usize)> = order[lo..hi]
                .iter()
                .map(|&i| (primary_inputs[i].0.as_slice(), primary_inputs[i].1))
                .collect();
            let w_batch: Vec<(&[f32], usize)> = match &mut wm_cycle {
                Some(cycle) => cycle
                    .take(config.batch_watermark)
                    .into_iter()
                    .map(|i| (watermark_inputs[i].0.as_slice(), watermark_inputs[i].1))
                    .collect(),
                None => Vec::new(),
            };
            let a_batch: Vec<(&[f32], usize)> = match &mut at_cycle {
                Some(cycle) => cycle
                    .take(config.batch_attacked)
                    .into_iter()
                    .map(|i| (attacked_inputs[i].0.as_slice(), attacked_inputs[i].1))
                    .collect(),
                None => Vec::new(),
            };

            let members: Vec<usize> = {
                let labels = p_batch
                    .iter()
                    .chain(&w_batch)
                    .chain(&a_batch)
                    .map(|&(_, l)| l);
                match config.sim_scope {
                    SimScope::All => (0..p_batch.len() + w_batch.len() + a_batch.len()).collect(),
                    SimScope::WatermarkAndTarget => labels
                        .enumerate()
                        .filter(|&(i, l)| Some(l) == target || (p_batch.len()..p_batch.len() + w_batch.len()).contains(&i))
                        .map(|(i, _)| i)
                        .collect(),
                }
            };
            let sim_pairs: Vec<(usize, usize)> = loss::random_pairs(members.len(), &mut pair_rng)
                .into_iter()
                .map(|(a, b)| (members[a], members[b]))
                .collect();

            let (terms, grads) = total_loss(&net, &p_batch, &w_batch, &a_batch, &sim_pairs, &weights);
            if !terms.total.is_finite() {
                return Err(TrainError::Diverged { epoch, loss: terms.total });
            }
            adam.apply(&mut net.params, &grads, lr)?;

            sums.total += terms.total;
            sums.primary += terms.primary;
            sums.watermark += terms.watermark;
            sums.attacked += terms.attacked;
            sums.similarity += terms.similarity;
        }

        let n = steps as f64;
        let test_accuracy = eval_fraction(&net, &test_inputs, |pred, label| pred == label);
        let wsr = target
            .filter(|_| !verification_inputs.is_empty())
            .map(|t| eval_fraction(&net, &verification_inputs, |pred, _| pred == t));
        let entry = EpochLog {
            epoch,
            lr,
            loss_total: sums.total / n,
            loss_primary: sums.primary / n,
            loss_watermark: sums.watermark / n,
            loss_attacked: sums.attacked / n,
            loss_similarity: sums.similarity / n,
            test_accuracy,
            wsr,
        };
        log::info!(
            "epoch {:>3}  lr {:.1e}  loss {:.4} (pri {:.4} wm {:.4} atk {:.4} sim {:.4})  acc {:.4}  wsr {}",
            entry.epoch,
            entry.lr,
            entry.loss_total,
            entry.loss_primary,
            entry.loss_watermark,
            entry.loss_attacked,
            entry.loss_similarity,
            entry.test_accuracy,
            entry.wsr.map_or("-".to_string(), |w| format!("{w:.4}")),
        );
        log.push(entry);
    }

    let checkpoint = Checkpoint {
        arch: shape.arch_id(),
        side,
        num_classes,
        config_fingerprint: run_fingerprint(config, data),
        rng_state: root.state(),
        params: net.params,
        adam: Some(adam),
    };
    Ok(TrainOutput { checkpoint, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{forge_watermark_split, ForgeSpec, QualityFactor};
    use crate::data::synth_dataset;
    use crate::nn::model::TENSOR_NAMES;

    fn tiny_splits() -> (Dataset, Dataset, Dataset, Dataset) {
        let clean = synth_dataset(3, 24, 16, 5).unwrap(); // 72 samples
        let spec = ForgeSpec {
            rate: 0.2,
            factor: QualityFactor::new(90).unwrap(),
            target: 0,
            verification_count: 12,
        };
        let mut rng = SeededRng::new(77);
        let out = forge_watermark_split(&clean, &spec, &mut rng).unwrap();
        let test = synth_dataset(3, 8, 16, 6).unwrap();
        (out.primary, out.watermark, out.verification, test)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_primary: 16,
            batch_watermark: 4,
            batch_attacked: 8,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_makes_progress_and_is_deterministic() {
        let (primary, watermark, verification, test) = tiny_splits();
        let data = TrainData {
            primary: &primary,
            watermark: &watermark,
            verification: &verification,
            test: &test,
        };
        let registry = AttackRegistry::default_in_house();
        let cfg = tiny_config();
        let out1 = train(&cfg, &data, &registry).unwrap();
        assert_eq!(out1.log.len(), 3);
        let first = &out1.log[0];
        let last = out1.log.last().unwrap();
        assert!(
            last.loss_total < first.loss_total,
            "loss should fall: {} -> {}",
            first.loss_total,
            last.loss_total
        );
        for entry in &out1.log {
            assert!(entry.loss_total.is_finite());
            assert!((0.0..=1.0).contains(&entry.test_accuracy));
            assert!((0.0..=1.0).contains(&entry.wsr.unwrap()));
        }

        let out2 = train(&cfg, &data, &registry).unwrap();
        assert_eq!(out1.checkpoint.to_bytes(), out2.checkpoint.to_bytes());

        let out3 = train(&TrainConfig { seed: 12, ..cfg }, &data, &registry).unwrap();
        assert_ne!(out1.checkpoint.params, out3.checkpoint.params);
    }

    #[test]
    fn lr_schedule_decays_stepwise() {
        let (primary, watermark, verification, test) = tiny_splits();
        let data = TrainData {
            primary: &primary,
            watermark: &watermark,
            verification: &verification,
            test: &test,
        };
        let registry = AttackRegistry::default_in_house();
        let cfg = TrainConfig {
            epochs: 5,
            lr: 0.002,
            lr_decay_every: 2,
            lr_decay_factor: 0.5,
            batch_primary: 32,
            batch_watermark: 4,
            batch_attacked: 8,
            attack_fraction: 0.0, // skip augmentation; this test is about the schedule
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &data, &registry).unwrap();
        let lrs: Vec<f64> = out.log.iter().map(|e| e.lr).collect();
        assert_eq!(lrs, vec![0.002, 0.002, 0.001, 0.001, 0.0005]);
        // with attack_fraction 0 the attacked term is identically zero
        assert!(out.log.iter().all(|e| e.loss_attacked == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (primary, watermark, verification, test) = tiny_splits();
        let registry = AttackRegistry::default_in_house();
        let empty = Dataset::new(vec![], 3, crate::data::Provenance::Synthetic).unwrap();
        let data = TrainData {
            primary: &empty,
            watermark: &watermark,
            verification: &verification,
            test: &test,
        };
        assert!(matches!(
            train(&tiny_config(), &data, &registry),
            Err(TrainError::EmptySet { role: "primary" })
        ));

        let other_side = synth_dataset(3, 4, 32, 9).unwrap();
        let data = TrainData {
            primary: &primary,
            watermark: &watermark,
            verification: &verification,
            test: &other_side,
        };
        assert!(matches!(
            train(&tiny_config(), &data, &registry),
            Err(TrainError::SetMismatch { role: "test", what: "image side" })
        ));

        let data = TrainData {
            primary: &primary,
            watermark: &watermark,
            verification: &verification,
            test: &test,
        };
        let bad = TrainConfig { lr: -1.0, ..tiny_config() };
        assert!(matches!(train(&bad, &data, &registry), Err(TrainError::BadConfig(_))));
    }

    /// Finite-difference check of the full four-term objective in `f64`.
    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let shape = NetShape::new(16, 3).unwrap();
        let mut rng = SeededRng::new(90);
        let net = Net::<f64>::init(shape, &mut rng);
        let clean = synth_dataset(3, 3, 16, 91).unwrap();
        let inputs: Vec<(Vec<f64>, usize)> = clean
            .samples()
            .iter()
            .map(|s| (image_to_input::<f64>(&s.image), s.label))
            .collect();
        // three primary, two watermark, two attacked; pairs span the batch
        let as_refs = |r: std::ops::Range<usize>| -> Vec<(&[f64], usize)> {
            inputs[r].iter().map(|(v, l)| (v.as_slice(), *l)).collect()
        };
        let primary = as_refs(0..3);
        let watermark = as_refs(3..5);
        let attacked = as_refs(5..7);
        let pairs = [(0usize, 3usize), (1, 5), (2, 6)];
        let weights = LossWeights { alpha: 1.0, beta: 1.0, gamma: 0.1, margin: 1.0 };

        let (_, grads) = total_loss(&net, &primary, &watermark, &attacked, &pairs, &weights);
        let loss_of = |n: &Net<f64>| -> f64 {
            total_loss(n, &primary, &watermark, &attacked, &pairs, &weights).0.total
        };

        let mut probe_rng = SeededRng::new(92);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for field_idx in 0..8 {
            for _ in 0..5 {
                let len = net.params.fields()[field_idx].len();
                let j = probe_rng.next_index(len);
                let mut plus = net.clone();
                *plus.params.fields_mut()[field_idx].get_mut(j).unwrap() += h;
                let mut minus = net.clone();
                *minus.params.fields_mut()[field_idx].get_mut(j).unwrap() -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = grads.fields()[field_idx][j];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                worst = worst.max(rel);
                assert!(
                    rel < 1e-3,
                    "tensor {} index {j}: fd {fd} vs analytic {an} (rel {rel})",
                    TENSOR_NAMES[field_idx]
                );
            }
        }
        // the check must actually have resolution: typical error is far below
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn empty_watermark_set_trains_a_clean_control() {
        let (primary, _, _, test) = tiny_splits();
        let empty = Dataset::new(vec![], primary.num_classes(), crate::data::Provenance::Synthetic).unwrap();
        let data = TrainData {
            primary: &primary,
            watermark: &empty,
            verification: &empty,
            test: &test,
        };
        let registry = AttackRegistry::default_in_house();
        let out = train(&tiny_config(), &data, &registry).unwrap();
        assert!(out.log.iter().all(|e| e.wsr.is_none()));
        assert!(out.log.iter().all(|e| e.loss_watermark == 0.0));
        assert!(out.log.last().unwrap().loss_total < out.log[0].loss_total);
    }

    #[test]
    fn exported_features_align_with_dataset() {
        let set = synth_dataset(2, 3, 16, 41).unwrap();
        let shape = NetShape::new(16, 2).unwrap();
        let mut rng = SeededRng::new(40);
        let net = Net::<f32>::init(shape, &mut rng);
        let rows = export_features(&net, &set);
        assert_eq!(rows.len(), set.len());
        for (row, sample) in rows.iter().zip(set.samples()) {
            assert_eq!(row.0, sample.label);
            assert_eq!(row.1.len(), HIDDEN);
            assert!(row.1.iter().all(|v| v.is_finite()));
        }
        // duplicated input produces an identical feature row
        let input = image_to_input::<f32>(&set.samples()[0].image);
        assert_eq!(net.forward(&input).feat, rows[0].1);
    }

    #[test]
    fn total_loss_handles_empty_attacked_group() {
        let shape = NetShape::new(16, 3).unwrap();
        let mut rng = SeededRng::new(95);
        let net = Net::<f64>::init(shape, &mut rng);
        let clean = synth_dataset(3, 1, 16, 96).unwrap();
        let inputs: Vec<(Vec<f64>, usize)> = clean
            .samples()
            .iter()
            .map(|s| (image_to_input::<f64>(&s.image), s.label))
            .collect();
        let refs: Vec<(&[f64], usize)> = inputs.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        let weights = LossWeights { alpha: 1.0, beta: 1.0, gamma: 0.1, margin: 1.0 };
        let (terms, _) = total_loss(&net, &refs, &[], &[], &[], &weights);
        assert_eq!(terms.watermark, 0.0);
        assert_eq!(terms.attacked, 0.0);
        assert_eq!(terms.similarity, 0.0);
        assert!(terms.total > 0.0);
    }
}
